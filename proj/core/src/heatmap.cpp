#include "capg/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "capg/error.hpp"
#include "capg/formats.hpp"

namespace capg {

unsigned char quantize(double v, double lo, double hi) noexcept {
  if (!(hi > lo)) return 0;
  const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(255.0 * t));
}

void export_heatmap(const Grid2D& heat, const std::filesystem::path& path) {
  if (heat.empty()) throw InvalidArgument(path.string() + ": empty heat map");
  const double lo = heat.min();
  const double hi = heat.max();
  std::string bytes = "P5\n" + std::to_string(heat.cols()) + " " + std::to_string(heat.rows()) +
                      "\n255\n";
  bytes.reserve(bytes.size() + heat.size());
  for (double v : heat.data()) bytes.push_back(static_cast<char>(quantize(v, lo, hi)));
  write_text(path, bytes);
  write_json(std::filesystem::path(path.string() + ".json"),
             {{"min", lo}, {"max", hi}, {"rows", heat.rows()}, {"cols", heat.cols()}});
}

Grid2D read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::string magic;
  std::size_t cols = 0, rows = 0, maxval = 0;
  in >> magic >> cols >> rows >> maxval;
  if (!in || magic != "P5" || maxval == 0 || maxval > 255) {
    throw FormatError(path.string() + ": not an 8-bit binary PGM");
  }
  in.get();  // single whitespace after the header
  std::vector<double> data(rows * cols);
  for (double& v : data) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw FormatError(path.string() + ": truncated PGM");
    v = static_cast<double>(static_cast<unsigned char>(c));
  }
  return Grid2D(rows, cols, std::move(data));
}

}  // namespace capg
