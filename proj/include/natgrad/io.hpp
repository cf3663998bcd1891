// Raw field dumps (little-endian float64 + text sidecar) and CSV traces.

#ifndef NATGRAD_IO_HPP
#define NATGRAD_IO_HPP

#include "natgrad/ngd.hpp"
#include "natgrad/numkit.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace natgrad {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FieldHeader {
  std::vector<Index> dims;
  std::vector<double> spacing;
  std::string layout = "row-major, last index fastest";
};

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xFFU) << (8 * (7 - i));
  return out;
}

/// Writes <path>.bin and <path>.hdr.
inline void write_field(const std::filesystem::path& path, const Vector& v, const FieldHeader& header) {
  Index count = 1;
  for (Index d : header.dims) count *= d;
  if (count != v.size()) throw DimensionError("write_field: dims do not match the vector length");
  std::filesystem::path bin = path;
  bin += ".bin";
  std::filesystem::path hdr = path;
  hdr += ".hdr";
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw IoError("cannot open " + bin.string());
  for (Index i = 0; i < v.size(); ++i) {
    std::uint64_t raw = 0;
    const double x = v[i];
    std::memcpy(&raw, &x, sizeof raw);
    raw = to_little_endian(raw);
    out.write(reinterpret_cast<const char*>(&raw), sizeof raw);
  }
  if (!out) throw IoError("write failed: " + bin.string());

  std::ofstream h(hdr);
  if (!h) throw IoError("cannot open " + hdr.string());
  h << "format float64-le\n";
  h << "dims";
  for (Index d : header.dims) h << ' ' << d;
  h << "\nspacing";
  for (double s : header.spacing) h << ' ' << s;
  h << "\nlayout " << header.layout << "\n";
}

/// Reads a raw float64-le file; `expected` < 0 skips the length check.
inline Vector read_raw_field(const std::filesystem::path& bin, Index expected = -1) {
  std::ifstream in(bin, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + bin.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % 8 != 0) throw IoError(bin.string() + ": size is not a multiple of 8 bytes");
  const auto n = static_cast<Index>(bytes / 8);
  if (expected >= 0 && n != expected) {
    throw IoError(bin.string() + ": expected " + std::to_string(expected) + " values, found " + std::to_string(n));
  }
  in.seekg(0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) {
    std::uint64_t raw = 0;
    in.read(reinterpret_cast<char*>(&raw), sizeof raw);
    raw = to_little_endian(raw);
    std::memcpy(&v[i], &raw, sizeof raw);
  }
  if (!in) throw IoError("read failed: " + bin.string());
  return v;
}

inline std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline const char* kTraceHeader = "iter,propagations,loss,grad_norm,step,direction_norm";

inline std::string trace_csv(const std::vector<IterationRecord>& records) {
  std::ostringstream os;
  os << kTraceHeader << "\n";
  for (const auto& r : records) {
    os << r.iter << ',' << r.propagations << ',' << format_real(r.loss) << ',' << format_real(r.grad_norm) << ','
       << format_real(r.step) << ',' << format_real(r.direction_norm) << "\n";
  }
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

struct TraceRow {
  Index iter = 0;
  std::int64_t propagations = 0;
  double loss = 0.0, grad_norm = 0.0, step = 0.0, direction_norm = 0.0;
};

inline std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kTraceHeader) throw IoError(path.string() + ": unexpected header");
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    TraceRow r;
    char c = 0;
    ls >> r.iter >> c >> r.propagations >> c >> r.loss >> c >> r.grad_norm >> c >> r.step >> c >> r.direction_norm;
    if (!ls) throw IoError(path.string() + ": malformed row: " + line);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace natgrad

#endif  // NATGRAD_IO_HPP
