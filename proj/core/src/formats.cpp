#include "capg/formats.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "capg/error.hpp"

namespace capg {

namespace {

std::string context(const fs::path& path) { return path.string() + ": "; }

std::ofstream open_out(const fs::path& path, bool binary) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw IoError(context(path) + "cannot open for writing");
  return out;
}

std::ifstream open_in(const fs::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError(context(path) + "cannot open for reading");
  return in;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError(context(path) + "write failed");
}

// Little-endian byte writer/reader independent of host order.
class ByteWriter {
 public:
  void magic(const char (&tag)[5]) { bytes_.insert(bytes_.end(), tag, tag + 4); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void save(const fs::path& path) const {
    auto out = open_out(path, true);
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    finish(out, path);
  }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const fs::path& path) : path_(path) {
    auto in = open_in(path, true);
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  void expect_magic(const char (&tag)[5]) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, tag, 4) != 0) {
      throw FormatError(context(path_) + "expected magic " + tag);
    }
    pos_ += 4;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }
  void expect_version() {
    const std::uint32_t v = u32();
    if (v != kFormatVersion) {
      throw FormatError(context(path_) + "unsupported version " + std::to_string(v));
    }
  }
  void need_exact(std::size_t remaining) const {
    if (bytes_.size() - pos_ != remaining) {
      throw FormatError(context(path_) + "payload is " + std::to_string(bytes_.size() - pos_) +
                        " bytes, header implies " + std::to_string(remaining));
    }
  }
  const fs::path& path() const { return path_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(context(path_) + "truncated file");
  }
  fs::path path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

double finite_or_throw(double v, const fs::path& path) {
  if (!std::isfinite(v)) throw FormatError(context(path) + "non-finite value");
  return v;
}

std::uint32_t as_u32(std::size_t v, const char* what) {
  if (v > UINT32_MAX) throw FormatError(std::string(what) + " exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

nlohmann::json parse_json_line(const std::string& line, const fs::path& path, std::size_t number) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(context(path) + "line " + std::to_string(number) + ": " + e.what());
  }
}

template <typename Fn>
void for_each_json_line(const fs::path& path, Fn&& fn) {
  auto in = open_in(path, false);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = parse_json_line(line, path, number);
    try {
      fn(j);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(context(path) + "line " + std::to_string(number) + ": " + e.what());
    }
  }
}

void write_json_lines(const fs::path& path, const std::vector<nlohmann::json>& rows) {
  auto out = open_out(path, false);
  for (const auto& row : rows) out << row.dump() << '\n';
  finish(out, path);
}

}  // namespace

void write_fmap(const fs::path& path, const Grid3D& fmap) {
  ByteWriter w;
  w.magic("FMAP");
  w.u32(kFormatVersion);
  w.u32(as_u32(fmap.rows(), "rows"));
  w.u32(as_u32(fmap.cols(), "cols"));
  w.u32(as_u32(fmap.channels(), "channels"));
  for (double v : fmap.data()) w.f32(v);
  w.save(path);
}

Grid3D read_fmap(const fs::path& path) {
  ByteReader r(path);
  r.expect_magic("FMAP");
  r.expect_version();
  const std::size_t rows = r.u32();
  const std::size_t cols = r.u32();
  const std::size_t channels = r.u32();
  const std::size_t count = rows * cols * channels;
  r.need_exact(count * 4);
  std::vector<double> data(count);
  for (double& v : data) v = finite_or_throw(r.f32(), path);
  return Grid3D(rows, cols, channels, std::move(data));
}

void write_gpar(const fs::path& path, const GroundingParams& params) {
  params.validate();
  ByteWriter w;
  w.magic("GPAR");
  w.u32(kFormatVersion);
  w.u32(as_u32(params.dims.vocab_size, "vocab size"));
  w.u32(as_u32(params.dims.feature_dim, "feature dim"));
  w.u32(as_u32(params.dims.embed_dim, "embed dim"));
  for (const auto& tensor : params.tensors()) {
    for (double v : tensor) w.f64(v);
  }
  w.save(path);
}

GroundingParams read_gpar(const fs::path& path) {
  ByteReader r(path);
  r.expect_magic("GPAR");
  r.expect_version();
  ModelDims dims;
  dims.vocab_size = r.u32();
  dims.feature_dim = r.u32();
  dims.embed_dim = r.u32();
  GroundingParams p;
  try {
    p = GroundingParams::zeros(dims);
  } catch (const ShapeError& e) {
    throw FormatError(context(path) + e.what());
  }
  r.need_exact(p.parameter_count() * 8);
  for (auto tensor : p.tensors()) {
    for (double& v : tensor) v = finite_or_throw(r.f64(), path);
  }
  return p;
}

void write_mpar(const fs::path& path, const MilParams& params) {
  params.validate();
  ByteWriter w;
  w.magic("MPAR");
  w.u32(kFormatVersion);
  w.u32(as_u32(params.classes, "classes"));
  w.u32(as_u32(params.feature_dim, "feature dim"));
  for (double v : params.weights) w.f64(v);
  for (double v : params.bias) w.f64(v);
  w.save(path);
}

MilParams read_mpar(const fs::path& path) {
  ByteReader r(path);
  r.expect_magic("MPAR");
  r.expect_version();
  const std::size_t classes = r.u32();
  const std::size_t dim = r.u32();
  MilParams p;
  try {
    p = MilParams::zeros(classes, dim);
  } catch (const ShapeError& e) {
    throw FormatError(context(path) + e.what());
  }
  r.need_exact((p.weights.size() + p.bias.size()) * 8);
  for (double& v : p.weights) v = finite_or_throw(r.f64(), path);
  for (double& v : p.bias) v = finite_or_throw(r.f64(), path);
  return p;
}

void write_vocab(const fs::path& path, const Vocabulary& vocab) {
  auto out = open_out(path, false);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    out << vocab.word(i) << '\t' << vocab.frequency(i) << '\n';
  }
  finish(out, path);
}

Vocabulary read_vocab(const fs::path& path) {
  auto in = open_in(path, false);
  Vocabulary vocab;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    std::size_t freq = 0;
    if (tab == std::string::npos) {
      throw FormatError(context(path) + "line " + std::to_string(number) + ": missing tab");
    }
    const char* first = line.data() + tab + 1;
    const char* last = line.data() + line.size();
    const auto [ptr, ec] = std::from_chars(first, last, freq);
    if (ec != std::errc() || ptr != last) {
      throw FormatError(context(path) + "line " + std::to_string(number) + ": bad frequency");
    }
    try {
      vocab.add(line.substr(0, tab), freq);
    } catch (const Error& e) {
      throw FormatError(context(path) + "line " + std::to_string(number) + ": " + e.what());
    }
  }
  return vocab;
}

std::size_t import_embeddings(const fs::path& path, const Vocabulary& vocab,
                              GroundingParams& params) {
  if (vocab.size() != params.dims.vocab_size) throw ShapeError("vocabulary size does not match model");
  auto in = open_in(path, false);
  std::string line;
  std::size_t number = 0;
  std::size_t imported = 0;
  while (std::getline(in, line)) {
    ++number;
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    std::vector<double> values;
    for (double v; fields >> v;) values.push_back(v);
    if (!fields.eof()) {
      throw FormatError(context(path) + "line " + std::to_string(number) + ": bad number");
    }
    if (values.size() != params.dims.embed_dim) {
      throw FormatError(context(path) + "line " + std::to_string(number) + ": " +
                        std::to_string(values.size()) + " values, model expects " +
                        std::to_string(params.dims.embed_dim));
    }
    if (const auto index = vocab.find(word)) {
      auto row = params.embedding(*index);
      std::copy(values.begin(), values.end(), row.begin());
      ++imported;
    }
  }
  return imported;
}

void write_captions(const fs::path& path, const std::vector<CaptionRecord>& records) {
  std::vector<nlohmann::json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) {
    rows.push_back({{"image_id", r.image_id}, {"split", r.split}, {"caption", r.text}});
  }
  write_json_lines(path, rows);
}

std::vector<CaptionRecord> read_captions(const fs::path& path) {
  std::vector<CaptionRecord> out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    out.push_back({j.at("image_id").get<std::string>(), j.value("split", std::string{}),
                   j.at("caption").get<std::string>()});
  });
  return out;
}

void write_boxes(const fs::path& path, const std::vector<BoxRecord>& records,
                 const std::vector<std::string>& class_names) {
  std::vector<nlohmann::json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) {
    nlohmann::json j;
    j["image_id"] = r.image_id;
    if (!r.split.empty()) j["split"] = r.split;
    auto coords = nlohmann::json::array();
    auto scores = nlohmann::json::array();
    auto classes = nlohmann::json::array();
    bool all_classed = true;
    for (const Box& b : r.boxes) {
      coords.push_back({b.xmin, b.ymin, b.xmax, b.ymax});
      scores.push_back(b.score);
      if (b.class_id && *b.class_id >= 0 &&
          static_cast<std::size_t>(*b.class_id) < class_names.size()) {
        classes.push_back(class_names[static_cast<std::size_t>(*b.class_id)]);
      } else {
        all_classed = false;
      }
    }
    j["boxes"] = std::move(coords);
    j["scores"] = std::move(scores);
    if (all_classed) j["classes"] = std::move(classes);
    rows.push_back(std::move(j));
  }
  write_json_lines(path, rows);
}

std::vector<BoxRecord> read_boxes(const fs::path& path, std::vector<std::string>& class_names) {
  std::vector<BoxRecord> out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    BoxRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.split = j.value("split", std::string{});
    const auto& coords = j.at("boxes");
    const bool has_scores = j.contains("scores");
    const bool has_classes = j.contains("classes");
    if ((has_scores && j["scores"].size() != coords.size()) ||
        (has_classes && j["classes"].size() != coords.size())) {
      throw FormatError(context(path) + "image '" + r.image_id + "': list lengths differ");
    }
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const auto c = coords[i].get<std::vector<double>>();
      if (c.size() != 4) {
        throw FormatError(context(path) + "image '" + r.image_id + "': box needs 4 coordinates");
      }
      Box b;
      try {
        b = make_box(c[0], c[1], c[2], c[3]);
      } catch (const InvalidRect& e) {
        throw FormatError(context(path) + "image '" + r.image_id + "': " + e.what());
      }
      if (has_scores) b.score = j["scores"][i].get<double>();
      if (has_classes) {
        const auto name = j["classes"][i].get<std::string>();
        const auto it = std::find(class_names.begin(), class_names.end(), name);
        b.class_id = static_cast<int>(it - class_names.begin());
        if (it == class_names.end()) class_names.push_back(name);
      }
      r.boxes.push_back(b);
    }
    out.push_back(std::move(r));
  });
  return out;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  auto out = open_out(path, false);
  for (const auto& l : lines) out << l << '\n';
  finish(out, path);
}

std::vector<std::string> read_lines(const fs::path& path) {
  auto in = open_in(path, false);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path, false);
  out << text;
  finish(out, path);
}

std::string read_text(const fs::path& path) {
  auto in = open_in(path, false);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_json(const fs::path& path, const nlohmann::json& value) {
  write_text(path, value.dump(2) + "\n");
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(context(path) + e.what());
  }
}

std::string format_double(double value) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc()) throw FormatError("cannot format number");
  return {buf.data(), ptr};
}

void write_loss_csv(const fs::path& path, const std::vector<TraceRow>& trace) {
  auto out = open_out(path, false);
  out << "step,loss,retrieval_top1\n";
  for (const auto& row : trace) {
    out << row.step << ',' << format_double(row.loss) << ',' << format_double(row.retrieval_top1)
        << '\n';
  }
  finish(out, path);
}

}  // namespace capg
