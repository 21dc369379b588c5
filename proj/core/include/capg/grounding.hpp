#pragma once

// Region-word grounding model.
//
// An image is an n x n grid of d-dimensional region features f_i; a caption is
// a sequence of word indices t_j. Regions are projected into the word
// embedding space by one affine map and compared with word embeddings by
// cosine similarity. Per-region and per-word importance scores (softmax of a
// linear score) weight the region-word similarities into one image-caption
// similarity. The same pieces produce per-word class activation maps.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "capg/activation_map.hpp"
#include "capg/numerics.hpp"
#include "capg/vocabulary.hpp"

namespace capg {

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t feature_dim = 0;
  std::size_t embed_dim = 50;

  bool operator==(const ModelDims&) const = default;
};

/// All learnable parameters of the grounding model.
struct GroundingParams {
  ModelDims dims;
  std::vector<double> word_embeddings;   // vocab_size x embed_dim
  std::vector<double> img_projection;    // feature_dim x embed_dim
  std::vector<double> img_bias;          // embed_dim
  std::vector<double> img_score_weight;  // feature_dim
  double img_score_bias = 0.0;
  std::vector<double> txt_score_weight;  // embed_dim
  double txt_score_bias = 0.0;

  static constexpr std::size_t kTensorCount = 7;
  static constexpr std::array<std::string_view, kTensorCount> kTensorNames = {
      "word_embeddings", "img_projection",   "img_bias",      "img_score_weight",
      "img_score_bias",  "txt_score_weight", "txt_score_bias"};

  static GroundingParams zeros(const ModelDims& dims);
  /// Every weight drawn from uniform(-range, range); the two score biases start at 0.
  static GroundingParams random_uniform(const ModelDims& dims, std::uint64_t seed,
                                        double range = 0.08);

  std::span<const double> embedding(std::size_t word) const {
    return {word_embeddings.data() + word * dims.embed_dim, dims.embed_dim};
  }
  std::span<double> embedding(std::size_t word) {
    return {word_embeddings.data() + word * dims.embed_dim, dims.embed_dim};
  }

  /// Views of every tensor in declaration order (the checkpoint order).
  std::array<std::span<double>, kTensorCount> tensors();
  std::array<std::span<const double>, kTensorCount> tensors() const;
  std::size_t parameter_count() const;

  /// Throws ShapeError on inconsistent sizes and NumericalError on non-finite values.
  void validate() const;

  bool operator==(const GroundingParams&) const = default;
};

/// Gradients mirror the parameter layout.
using GradientSet = GroundingParams;

/// Affine projection of every region into the embedding space:
/// out_i = img_projection^T f_i + img_bias. Returns rows x cols x embed_dim.
Grid3D region_projection(const Grid3D& fmap, const GroundingParams& params);

/// Cosine similarity of every (region, caption word) pair: rows x cols x l.
/// Norms carry the 1e-12 guard, so zero vectors yield 0 instead of throwing.
Grid3D sim_individual(const Grid3D& fmap, const Caption& caption, const GroundingParams& params);

/// Unnormalized region scores w_img . f_i + b_img, row-major.
std::vector<double> region_logits(const Grid3D& fmap, const GroundingParams& params);

/// Softmax of region_logits over all n x n regions.
Grid2D region_importance(const Grid3D& fmap, const GroundingParams& params);

/// Softmax of w_txt . e(t_j) + b_txt over the caption's words.
std::vector<double> word_importance(const Caption& caption, const GroundingParams& params);

/// Importance-weighted sum of all region-word similarities. Lies in (-1, 1).
double sim_aggregate(const Grid3D& fmap, const Caption& caption, const GroundingParams& params);

/// Distinctiveness score of one word: w_txt . e(word) + b_txt.
double word_score(const GroundingParams& params, std::size_t word);

enum class CamGate {
  Logit,    // raw region score w_img . f + b_img
  Softmax,  // normalized region importance
};

struct CamOptions {
  std::size_t raster_rows = 448;
  std::size_t raster_cols = 448;
  std::size_t kernel_size = 32;
  CamGate gate = CamGate::Logit;
};

/// n x n map of cosine(region, class word) times the region gate, before resizing.
Grid2D cam_cells(const Grid3D& fmap, std::size_t class_word, const GroundingParams& params,
                 CamGate gate = CamGate::Logit);

/// cam_cells resized to the raster (bilinear) and Gaussian-smoothed.
ActivationMap class_activation_map(const Grid3D& fmap, std::size_t class_word,
                                   const GroundingParams& params, const CamOptions& options = {});

std::vector<ActivationMap> class_activation_maps(const Grid3D& fmap,
                                                 std::span<const std::size_t> class_words,
                                                 const GroundingParams& params,
                                                 const CamOptions& options = {});

struct VocabularyExclusion {
  std::vector<std::size_t> seed_words;
  double cosine_threshold = 0.6;
};

/// The k_cls most distinctive words by word_score, after dropping words seen
/// fewer than min_frequency times and words whose embedding cosine to any
/// seed word exceeds the threshold. Ties break by ascending index.
std::vector<std::size_t> mine_vocabulary(const Vocabulary& vocab, const GroundingParams& params,
                                         std::size_t k_cls, std::size_t min_frequency,
                                         const VocabularyExclusion& exclusion = {});

}  // namespace capg
