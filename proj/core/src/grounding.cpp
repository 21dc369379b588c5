#include "capg/grounding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "capg/error.hpp"
#include "capg/rng.hpp"

namespace capg {

GroundingParams GroundingParams::zeros(const ModelDims& dims) {
  if (dims.vocab_size == 0 || dims.feature_dim == 0 || dims.embed_dim == 0) {
    throw ShapeError("GroundingParams: all dimensions must be positive");
  }
  GroundingParams p;
  p.dims = dims;
  p.word_embeddings.assign(dims.vocab_size * dims.embed_dim, 0.0);
  p.img_projection.assign(dims.feature_dim * dims.embed_dim, 0.0);
  p.img_bias.assign(dims.embed_dim, 0.0);
  p.img_score_weight.assign(dims.feature_dim, 0.0);
  p.txt_score_weight.assign(dims.embed_dim, 0.0);
  return p;
}

GroundingParams GroundingParams::random_uniform(const ModelDims& dims, std::uint64_t seed,
                                                double range) {
  GroundingParams p = zeros(dims);
  Rng rng(seed);
  for (auto* tensor : {&p.word_embeddings, &p.img_projection, &p.img_bias, &p.img_score_weight,
                       &p.txt_score_weight}) {
    for (double& v : *tensor) v = rng.uniform(-range, range);
  }
  return p;
}

std::array<std::span<double>, GroundingParams::kTensorCount> GroundingParams::tensors() {
  return {std::span<double>(word_embeddings), std::span<double>(img_projection),
          std::span<double>(img_bias),        std::span<double>(img_score_weight),
          std::span<double>(&img_score_bias, 1), std::span<double>(txt_score_weight),
          std::span<double>(&txt_score_bias, 1)};
}

std::array<std::span<const double>, GroundingParams::kTensorCount> GroundingParams::tensors()
    const {
  return {std::span<const double>(word_embeddings), std::span<const double>(img_projection),
          std::span<const double>(img_bias),        std::span<const double>(img_score_weight),
          std::span<const double>(&img_score_bias, 1), std::span<const double>(txt_score_weight),
          std::span<const double>(&txt_score_bias, 1)};
}

std::size_t GroundingParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& t : tensors()) total += t.size();
  return total;
}

void GroundingParams::validate() const {
  const auto& d = dims;
  if (word_embeddings.size() != d.vocab_size * d.embed_dim ||
      img_projection.size() != d.feature_dim * d.embed_dim || img_bias.size() != d.embed_dim ||
      img_score_weight.size() != d.feature_dim || txt_score_weight.size() != d.embed_dim) {
    throw ShapeError("GroundingParams: tensor sizes do not match dims");
  }
  const auto views = tensors();
  for (std::size_t t = 0; t < views.size(); ++t) {
    for (double v : views[t]) {
      if (!std::isfinite(v)) {
        throw NumericalError("GroundingParams: non-finite value in " +
                             std::string(kTensorNames[t]));
      }
    }
  }
}

namespace {

void check_fmap(const Grid3D& fmap, const GroundingParams& params) {
  if (fmap.channels() != params.dims.feature_dim) {
    throw ShapeError("feature map has " + std::to_string(fmap.channels()) +
                     " channels, model expects " + std::to_string(params.dims.feature_dim));
  }
  if (fmap.cell_count() == 0) throw ShapeError("empty feature map");
}

void check_caption(const Caption& caption, const GroundingParams& params) {
  if (caption.tokens.empty()) throw ShapeError("caption '" + caption.image_id + "' is empty");
  for (int t : caption.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= params.dims.vocab_size) {
      throw ShapeError("caption token " + std::to_string(t) + " outside vocabulary");
    }
  }
}

void check_word(std::size_t word, const GroundingParams& params) {
  if (word >= params.dims.vocab_size) {
    throw UnknownWord("word index " + std::to_string(word) + " outside vocabulary of " +
                      std::to_string(params.dims.vocab_size));
  }
}

}  // namespace

Grid3D region_projection(const Grid3D& fmap, const GroundingParams& params) {
  check_fmap(fmap, params);
  const std::size_t d = params.dims.feature_dim;
  const std::size_t e = params.dims.embed_dim;
  Grid3D out(fmap.rows(), fmap.cols(), e);
  for (std::size_t i = 0; i < fmap.cell_count(); ++i) {
    const auto f = fmap.cell(i);
    auto u = out.cell(i);
    std::copy(params.img_bias.begin(), params.img_bias.end(), u.begin());
    for (std::size_t k = 0; k < d; ++k) {
      const double fk = f[k];
      if (fk == 0.0) continue;
      const double* row = params.img_projection.data() + k * e;
      for (std::size_t m = 0; m < e; ++m) u[m] += fk * row[m];
    }
  }
  return out;
}

Grid3D sim_individual(const Grid3D& fmap, const Caption& caption, const GroundingParams& params) {
  check_caption(caption, params);
  const Grid3D projected = region_projection(fmap, params);
  const std::size_t l = caption.tokens.size();
  Grid3D out(fmap.rows(), fmap.cols(), l);
  for (std::size_t i = 0; i < projected.cell_count(); ++i) {
    for (std::size_t j = 0; j < l; ++j) {
      out.cell(i)[j] = guarded_cosine(projected.cell(i),
                                      params.embedding(static_cast<std::size_t>(caption.tokens[j])));
    }
  }
  return out;
}

std::vector<double> region_logits(const Grid3D& fmap, const GroundingParams& params) {
  check_fmap(fmap, params);
  std::vector<double> logits(fmap.cell_count());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    logits[i] = dot(params.img_score_weight, fmap.cell(i)) + params.img_score_bias;
  }
  return logits;
}

Grid2D region_importance(const Grid3D& fmap, const GroundingParams& params) {
  return Grid2D(fmap.rows(), fmap.cols(), softmax(region_logits(fmap, params)));
}

double word_score(const GroundingParams& params, std::size_t word) {
  check_word(word, params);
  return dot(params.txt_score_weight, params.embedding(word)) + params.txt_score_bias;
}

std::vector<double> word_importance(const Caption& caption, const GroundingParams& params) {
  check_caption(caption, params);
  std::vector<double> logits(caption.tokens.size());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    logits[j] = word_score(params, static_cast<std::size_t>(caption.tokens[j]));
  }
  return softmax(logits);
}

double sim_aggregate(const Grid3D& fmap, const Caption& caption, const GroundingParams& params) {
  const Grid3D sims = sim_individual(fmap, caption, params);
  const Grid2D region_weights = region_importance(fmap, params);
  const std::vector<double> word_weights = word_importance(caption, params);
  double total = 0.0;
  for (std::size_t i = 0; i < sims.cell_count(); ++i) {
    const auto row = sims.cell(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < word_weights.size(); ++j) acc += word_weights[j] * row[j];
    total += region_weights.data()[i] * acc;
  }
  return total;
}

Grid2D cam_cells(const Grid3D& fmap, std::size_t class_word, const GroundingParams& params,
                 CamGate gate) {
  check_word(class_word, params);
  const Grid3D projected = region_projection(fmap, params);
  const auto embedding = params.embedding(class_word);
  std::vector<double> gate_values = region_logits(fmap, params);
  if (gate == CamGate::Softmax) gate_values = softmax(gate_values);
  Grid2D cells(fmap.rows(), fmap.cols());
  for (std::size_t i = 0; i < projected.cell_count(); ++i) {
    cells.data()[i] = guarded_cosine(projected.cell(i), embedding) * gate_values[i];
  }
  return cells;
}

ActivationMap class_activation_map(const Grid3D& fmap, std::size_t class_word,
                                   const GroundingParams& params, const CamOptions& options) {
  const Grid2D cells = cam_cells(fmap, class_word, params, options.gate);
  Grid2D heat = gaussian_smooth(resize_bilinear(cells, options.raster_rows, options.raster_cols),
                                options.kernel_size);
  return ActivationMap(static_cast<int>(class_word), std::move(heat));
}

std::vector<ActivationMap> class_activation_maps(const Grid3D& fmap,
                                                 std::span<const std::size_t> class_words,
                                                 const GroundingParams& params,
                                                 const CamOptions& options) {
  check_fmap(fmap, params);
  // Projection and gate are shared across classes.
  const Grid3D projected = region_projection(fmap, params);
  std::vector<double> gate_values = region_logits(fmap, params);
  if (options.gate == CamGate::Softmax) gate_values = softmax(gate_values);
  std::vector<double> projected_norms(projected.cell_count());
  for (std::size_t i = 0; i < projected.cell_count(); ++i) {
    projected_norms[i] = l2_norm(projected.cell(i)) + kNormEpsilon;
  }

  std::vector<ActivationMap> maps;
  maps.reserve(class_words.size());
  for (std::size_t word : class_words) {
    check_word(word, params);
    const auto embedding = params.embedding(word);
    const double word_norm = l2_norm(embedding) + kNormEpsilon;
    Grid2D cells(fmap.rows(), fmap.cols());
    for (std::size_t i = 0; i < projected.cell_count(); ++i) {
      cells.data()[i] =
          dot(projected.cell(i), embedding) / (projected_norms[i] * word_norm) * gate_values[i];
    }
    Grid2D heat = gaussian_smooth(
        resize_bilinear(cells, options.raster_rows, options.raster_cols), options.kernel_size);
    maps.emplace_back(static_cast<int>(word), std::move(heat));
  }
  return maps;
}

std::vector<std::size_t> mine_vocabulary(const Vocabulary& vocab, const GroundingParams& params,
                                         std::size_t k_cls, std::size_t min_frequency,
                                         const VocabularyExclusion& exclusion) {
  if (vocab.size() != params.dims.vocab_size) {
    throw ShapeError("vocabulary size does not match model");
  }
  if (k_cls > vocab.size()) throw InvalidArgument("k_cls exceeds vocabulary size");
  for (std::size_t seed : exclusion.seed_words) check_word(seed, params);

  std::vector<std::size_t> candidates;
  for (std::size_t w = 0; w < vocab.size(); ++w) {
    if (vocab.frequency(w) < min_frequency) continue;
    const bool too_similar =
        std::any_of(exclusion.seed_words.begin(), exclusion.seed_words.end(), [&](std::size_t s) {
          return guarded_cosine(params.embedding(w), params.embedding(s)) >
                 exclusion.cosine_threshold;
        });
    if (!too_similar) candidates.push_back(w);
  }
  std::vector<double> scores(vocab.size());
  for (std::size_t w : candidates) scores[w] = word_score(params, w);
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  if (candidates.size() > k_cls) candidates.resize(k_cls);
  return candidates;
}

}  // namespace capg
