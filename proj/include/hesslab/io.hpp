#ifndef HESSLAB_IO_HPP
#define HESSLAB_IO_HPP

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hesslab/errors.hpp"
#include "hesslab/hessian.hpp"
#include "hesslab/spectral.hpp"

// CSV / JSON artifact writers. Every CSV starts with a "# hesslab <version>"
// metadata line followed by a header row; numbers use shortest round-trip
// formatting so identical runs produce byte-identical files.

namespace hesslab {

inline std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw numeric_error("format_double failed");
  return std::string(buf, p);
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw usage_error("cannot open for writing: " + path.string());
  out << "# hesslab " << version << "\n";
  return out;
}

}  // namespace detail

inline void write_spectrum_csv(const std::filesystem::path& path,
                               const std::vector<double>& eigenvalues) {
  auto out = detail::open_out(path);
  out << "lambda\n";
  for (double v : eigenvalues) out << format_double(v) << "\n";
}

inline void write_density_csv(const std::filesystem::path& path,
                              const SpectralDensity& d) {
  auto out = detail::open_out(path);
  out << "bin_left,bin_right,count,density\n";
  const auto dens = d.densities();
  for (std::size_t i = 0; i < d.counts.size(); ++i)
    out << format_double(d.bin_edges[i]) << "," << format_double(d.bin_edges[i + 1])
        << "," << d.counts[i] << "," << format_double(dens[i]) << "\n";
}

inline void write_xy_csv(const std::filesystem::path& path, const std::string& xname,
                         const std::string& yname, const std::vector<double>& xs,
                         const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw usage_error("write_xy_csv: length mismatch");
  auto out = detail::open_out(path);
  out << xname << "," << yname << "\n";
  for (std::size_t i = 0; i < xs.size(); ++i)
    out << format_double(xs[i]) << "," << format_double(ys[i]) << "\n";
}

/// Upper triangle (i <= j) as "i,j,value" rows.
inline void write_hessian_csv(const std::filesystem::path& path, const HessianMatrix& H) {
  auto out = detail::open_out(path);
  out << "i,j,value\n";
  for (int i = 0; i < H.dim(); ++i)
    for (int j = i; j < H.dim(); ++j)
      out << i << "," << j << "," << format_double(H.matrix()(i, j)) << "\n";
}

inline nlohmann::json hessian_to_json(const HessianMatrix& H) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < H.dim(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < H.dim(); ++j) row.push_back(H.matrix()(i, j));
    rows.push_back(std::move(row));
  }
  return nlohmann::json{
      {"dim", H.dim()}, {"layout", "w1-rowmajor-then-w2"}, {"entries", std::move(rows)}};
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw usage_error("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace hesslab

#endif
