#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "blindcal/errors.hpp"
#include "blindcal/experiments.hpp"
#include "blindcal/model.hpp"
#include "blindcal/solver.hpp"

namespace blindcal::io {

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw FormatError(context + ": trailing characters in '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw FormatError(context + ": not a number: '" + s + "'");
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CSV matrices: "# blindcal matrix <rows> <cols>" then one row per line.

inline std::string format_matrix_csv(const Matrix& a) {
  std::string out = "# blindcal matrix " + std::to_string(a.rows()) + " " + std::to_string(a.cols()) + "\n";
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      if (j) out.push_back(',');
      out += format_double(a(i, j));
    }
    out.push_back('\n');
  }
  return out;
}

inline Matrix parse_matrix_csv(const std::string& text) {
  const auto ls = detail::lines(text);
  if (ls.empty()) throw FormatError("matrix csv: empty input");
  std::istringstream header(ls.front());
  std::string hash, tag, kind;
  long rows = -1, cols = -1;
  header >> hash >> tag >> kind >> rows >> cols;
  if (hash != "#" || tag != "blindcal" || kind != "matrix" || rows < 0 || cols < 0)
    throw FormatError("matrix csv: bad header '" + ls.front() + "'");
  Matrix a(rows, cols);
  Index i = 0;
  for (std::size_t k = 1; k < ls.size(); ++k) {
    if (ls[k].empty()) continue;
    if (i >= rows) throw FormatError("matrix csv: more rows than declared");
    const auto fields = detail::split(ls[k], ',');
    if (static_cast<long>(fields.size()) != cols)
      throw FormatError("matrix csv: row " + std::to_string(i) + " has " + std::to_string(fields.size()) +
                        " fields, expected " + std::to_string(cols));
    for (Index j = 0; j < cols; ++j) a(i, j) = parse_double(fields[static_cast<std::size_t>(j)], "matrix csv");
    ++i;
  }
  if (i != rows) throw FormatError("matrix csv: fewer rows than declared");
  return a;
}

inline void write_matrix_csv(const std::string& path, const Matrix& a) { write_file(path, format_matrix_csv(a)); }
inline Matrix read_matrix_csv(const std::string& path) { return parse_matrix_csv(read_file(path)); }

// ---------------------------------------------------------------------------
// Binary arrays: "BCAL", u32 version = 1, u32 ndims, u32 reserved = 0,
// ndims x u64 dims, then row-major little-endian float64 data.

inline constexpr std::uint32_t kBinaryVersion = 1;

struct Array {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (in.size() - pos < sizeof(T)) throw FormatError("binary array truncated");
  T v = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<T>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string encode_binary(const Array& a) {
  std::uint64_t count = 1;
  for (auto d : a.dims) count *= d;
  if (count != a.data.size()) throw DimensionError("binary array: dims do not match data size");
  std::string out = "BCAL";
  detail::put_le<std::uint32_t>(out, kBinaryVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.dims.size()));
  detail::put_le<std::uint32_t>(out, 0);
  for (auto d : a.dims) detail::put_le<std::uint64_t>(out, d);
  for (double v : a.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    detail::put_le<std::uint64_t>(out, bits);
  }
  return out;
}

inline Array decode_binary(const std::string& in) {
  if (in.size() < 16 || in.compare(0, 4, "BCAL") != 0) throw FormatError("binary array: bad magic");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(in, pos);
  if (version != kBinaryVersion) throw FormatError("binary array: unsupported version " + std::to_string(version));
  const auto ndims = detail::get_le<std::uint32_t>(in, pos);
  (void)detail::get_le<std::uint32_t>(in, pos);
  if (ndims > 8) throw FormatError("binary array: too many dimensions");
  Array a;
  std::uint64_t count = 1;
  for (std::uint32_t k = 0; k < ndims; ++k) {
    a.dims.push_back(detail::get_le<std::uint64_t>(in, pos));
    count *= a.dims.back();
  }
  if ((in.size() - pos) / 8 != count || (in.size() - pos) % 8 != 0)
    throw FormatError("binary array: payload size does not match dims");
  a.data.resize(count);
  for (auto& v : a.data) {
    const auto bits = detail::get_le<std::uint64_t>(in, pos);
    std::memcpy(&v, &bits, sizeof v);
  }
  return a;
}

inline Array to_array(const Matrix& a) {
  Array out;
  out.dims = {static_cast<std::uint64_t>(a.rows()), static_cast<std::uint64_t>(a.cols())};
  out.data.reserve(static_cast<std::size_t>(a.size()));
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) out.data.push_back(a(i, j));
  return out;
}

inline Array to_array(const Vector& v) {
  return {{static_cast<std::uint64_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size())};
}

/// Vectors decode as n x 1, matrices as rows x cols.
inline Matrix to_matrix(const Array& a) {
  if (a.dims.size() == 1) return Eigen::Map<const Vector>(a.data.data(), static_cast<Index>(a.dims[0]));
  if (a.dims.size() != 2) throw FormatError("expected a 1-d or 2-d array");
  Matrix m(static_cast<Index>(a.dims[0]), static_cast<Index>(a.dims[1]));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = a.data[static_cast<std::size_t>(i * m.cols() + j)];
  return m;
}

/// Ensemble as a p x m x n array.
inline Array ensemble_to_array(const SensingEnsemble& e) {
  Array out;
  out.dims = {static_cast<std::uint64_t>(e.p()), static_cast<std::uint64_t>(e.m()), static_cast<std::uint64_t>(e.n())};
  out.data.reserve(static_cast<std::size_t>(e.p() * e.m() * e.n()));
  for (Index l = 0; l < e.p(); ++l)
    e.with_snapshot(l, [&](const Matrix& a) {
      for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j) out.data.push_back(a(i, j));
    });
  return out;
}

inline SensingEnsemble ensemble_from_array(const Array& a) {
  if (a.dims.size() != 3) throw FormatError("ensemble array must be 3-d (p x m x n)");
  const auto p = static_cast<Index>(a.dims[0]);
  const auto m = static_cast<Index>(a.dims[1]);
  const auto n = static_cast<Index>(a.dims[2]);
  std::vector<Matrix> mats;
  mats.reserve(static_cast<std::size_t>(p));
  std::size_t k = 0;
  for (Index l = 0; l < p; ++l) {
    Matrix x(m, n);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < n; ++j) x(i, j) = a.data[k++];
    mats.push_back(std::move(x));
  }
  return SensingEnsemble::from_matrices(std::move(mats));
}

inline void write_binary(const std::string& path, const Array& a) { write_file(path, encode_binary(a)); }
inline Array read_binary(const std::string& path) { return decode_binary(read_file(path)); }

/// Reads a matrix from CSV or binary, chosen by content (binary starts with "BCAL").
inline Matrix read_matrix(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.compare(0, 4, "BCAL") == 0) return to_matrix(decode_binary(bytes));
  return parse_matrix_csv(bytes);
}

// ---------------------------------------------------------------------------
// Solver traces

inline constexpr const char* kTraceHeader = "iteration,f,mu_xi,mu_gamma,delta,delta_F,elapsed_seconds";

inline std::string format_trace_csv(const SolverTrace& trace, bool include_time = true) {
  std::string out = kTraceHeader;
  out.push_back('\n');
  for (const auto& r : trace.records) {
    out += std::to_string(r.iteration) + "," + format_double(r.objective) + "," + format_double(r.mu_xi) + "," +
           format_double(r.mu_gamma) + "," + (r.delta ? format_double(*r.delta) : "") + "," +
           (r.delta_F ? format_double(*r.delta_F) : "") + "," + (include_time ? format_double(r.elapsed_seconds) : "");
    out.push_back('\n');
  }
  return out;
}

inline SolverTrace parse_trace_csv(const std::string& text) {
  const auto ls = detail::lines(text);
  if (ls.empty() || ls.front() != kTraceHeader) throw FormatError("trace csv: bad header");
  SolverTrace t;
  for (std::size_t k = 1; k < ls.size(); ++k) {
    if (ls[k].empty()) continue;
    const auto f = detail::split(ls[k], ',');
    if (f.size() != 7) throw FormatError("trace csv: expected 7 fields on line " + std::to_string(k + 1));
    TraceRecord r;
    r.iteration = std::stol(f[0]);
    r.objective = parse_double(f[1], "trace f");
    r.mu_xi = parse_double(f[2], "trace mu_xi");
    r.mu_gamma = parse_double(f[3], "trace mu_gamma");
    if (!f[4].empty()) r.delta = parse_double(f[4], "trace delta");
    if (!f[5].empty()) r.delta_F = parse_double(f[5], "trace delta_F");
    r.elapsed_seconds = f[6].empty() ? 0.0 : parse_double(f[6], "trace elapsed_seconds");
    t.records.push_back(r);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Phase grid table

struct GridRow {
  Index p = 0;
  double rho = 0.0;
  int trials = 0;
  int successes = 0;
  double probability = 0.0;
};

inline std::string format_grid_csv(const PhaseGridResult& r) {
  std::string out = "p,rho,trials,successes,probability\n";
  for (std::size_t i = 0; i < r.p_values.size(); ++i)
    for (std::size_t j = 0; j < r.rho_values.size(); ++j) {
      const auto ii = static_cast<Index>(i);
      const auto jj = static_cast<Index>(j);
      out += std::to_string(r.p_values[i]) + "," + format_double(r.rho_values[j]) + "," +
             std::to_string(r.trials_per_cell) + "," + std::to_string(r.successes(ii, jj)) + "," +
             format_double(r.success_probability(ii, jj)) + "\n";
    }
  return out;
}

inline std::vector<GridRow> parse_grid_csv(const std::string& text) {
  const auto ls = detail::lines(text);
  if (ls.empty() || ls.front() != "p,rho,trials,successes,probability") throw FormatError("grid csv: bad header");
  std::vector<GridRow> rows;
  for (std::size_t k = 1; k < ls.size(); ++k) {
    if (ls[k].empty()) continue;
    const auto f = detail::split(ls[k], ',');
    if (f.size() != 5) throw FormatError("grid csv: expected 5 fields on line " + std::to_string(k + 1));
    rows.push_back({static_cast<Index>(std::stol(f[0])), parse_double(f[1], "grid rho"), std::stoi(f[2]),
                    std::stoi(f[3]), parse_double(f[4], "grid probability")});
  }
  return rows;
}

/// Per-trial records of a grid run.
inline std::string format_trials_csv(const PhaseGridResult& r) {
  std::string out = "p,rho,trial,success,error_db,iterations,outcome\n";
  for (const auto& t : r.records)
    out += std::to_string(t.p) + "," + format_double(t.rho) + "," + std::to_string(t.trial) + "," +
           (t.success ? "1" : "0") + "," + format_double(t.error_db) + "," + std::to_string(t.iterations) + "," +
           t.outcome + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Demo report

inline nlohmann::ordered_json demo_report_json(const DemoReport& r) {
  nlohmann::ordered_json j;
  j["error_db"] = r.error_db;
  j["ls_error_db"] = r.ls_error_db;
  j["iterations"] = r.iterations;
  j["stop_reason"] = std::string(to_string(r.stop_reason));
  j["gain_map_error_db"] = r.gain_map_error_db;
  j["n"] = r.n;
  j["m"] = r.m;
  j["p"] = r.p;
  j["rho"] = r.rho;
  auto channels = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < r.channels.size(); ++c) {
    const auto& ch = r.channels[c];
    nlohmann::ordered_json cj;
    cj["channel"] = c;
    cj["error_db"] = ch.error_db;
    cj["signal_error_db"] = ch.signal_error_db;
    cj["gain_error_db"] = ch.gain_error_db;
    cj["ls_error_db"] = ch.ls_error_db;
    cj["iterations"] = ch.iterations;
    cj["stop_reason"] = std::string(to_string(ch.stop_reason));
    cj["objective"] = ch.objective;
    channels.push_back(std::move(cj));
  }
  j["channels"] = std::move(channels);
  return j;
}

}  // namespace blindcal::io
