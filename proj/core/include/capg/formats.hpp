#pragma once

// On-disk formats.
//
// Binary files start with a 4-byte magic and little-endian u32 header fields.
//   FMAP  version rows cols channels, then f32 values (row-major, channel-fastest)
//   GPAR  version vocab_size feature_dim embed_dim, then every GroundingParams
//         tensor as f64 in declaration order
//   MPAR  version classes feature_dim, then weights and bias as f64
// Structured data is JSON Lines. Every reader reports the offending path.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capg/box.hpp"
#include "capg/grounding.hpp"
#include "capg/milhead.hpp"
#include "capg/training.hpp"
#include "capg/vocabulary.hpp"

namespace capg {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kFormatVersion = 1;

void write_fmap(const fs::path& path, const Grid3D& fmap);
/// Throws FormatError on a bad magic, version, short payload or non-finite value.
Grid3D read_fmap(const fs::path& path);

void write_gpar(const fs::path& path, const GroundingParams& params);
GroundingParams read_gpar(const fs::path& path);

void write_mpar(const fs::path& path, const MilParams& params);
MilParams read_mpar(const fs::path& path);

/// One "word<TAB>frequency" line per entry, in index order.
void write_vocab(const fs::path& path, const Vocabulary& vocab);
Vocabulary read_vocab(const fs::path& path);

/// Copies rows of a whitespace-separated "word v1 ... ve" embedding file into
/// the matching vocabulary rows. Returns the number of words imported; words
/// not in the vocabulary are ignored. Throws FormatError on a dimension mismatch.
std::size_t import_embeddings(const fs::path& path, const Vocabulary& vocab,
                              GroundingParams& params);

struct CaptionRecord {
  std::string image_id;
  std::string split;
  std::string text;
  bool operator==(const CaptionRecord&) const = default;
};

void write_captions(const fs::path& path, const std::vector<CaptionRecord>& records);
std::vector<CaptionRecord> read_captions(const fs::path& path);

/// One line per image: {"image_id", "boxes": [[xmin,ymin,xmax,ymax],...],
/// "scores": [...], "classes": [name,...]} plus an optional "split".
struct BoxRecord {
  std::string image_id;
  std::string split;
  std::vector<Box> boxes;
  bool operator==(const BoxRecord&) const = default;
};

/// class_id values index class_names. "classes" is written only when every
/// box carries a class.
void write_boxes(const fs::path& path, const std::vector<BoxRecord>& records,
                 const std::vector<std::string>& class_names);
/// Class names not yet in class_names are appended. Missing scores read as 0.
std::vector<BoxRecord> read_boxes(const fs::path& path, std::vector<std::string>& class_names);

/// One entry per line, blank lines skipped.
void write_lines(const fs::path& path, const std::vector<std::string>& lines);
std::vector<std::string> read_lines(const fs::path& path);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Pretty-printed JSON with a trailing newline.
void write_json(const fs::path& path, const nlohmann::json& value);
nlohmann::json read_json(const fs::path& path);

/// "step,loss,retrieval_top1" with shortest round-trip decimal formatting.
void write_loss_csv(const fs::path& path, const std::vector<TraceRow>& trace);

/// Shortest decimal string that parses back to the same double.
std::string format_double(double value);

}  // namespace capg
