#pragma once

#include <cstddef>
#include <utility>

namespace blindcal {

/// Pairwise (tree) reduction of leaf(i) over i in [first, last), last > first.
/// The merge order is fixed: left half before right half, indices ascending,
/// so the result is bit-reproducible for a given range.
template <typename Leaf>
auto tree_reduce(std::ptrdiff_t first, std::ptrdiff_t last, Leaf&& leaf) -> decltype(leaf(first)) {
  using T = decltype(leaf(first));
  if (last - first == 1) return leaf(first);
  const std::ptrdiff_t mid = first + (last - first) / 2;
  T left = tree_reduce(first, mid, leaf);
  T right = tree_reduce(mid, last, leaf);
  left += right;
  return left;
}

}  // namespace blindcal
