#include "capg/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "capg/error.hpp"
#include "capg/parallel.hpp"
#include "capg/rng.hpp"

namespace capg {

TripletBatch::TripletBatch(std::vector<const TrainingSample*> samples)
    : samples_(std::move(samples)) {
  if (samples_.size() < 2) throw InvalidBatch("triplet batch needs at least two samples");
  for (const auto* s : samples_) {
    if (s == nullptr) throw InvalidBatch("null sample in batch");
  }
  const auto& first = samples_.front()->fmap;
  for (const auto* s : samples_) {
    if (s->fmap.rows() != first.rows() || s->fmap.cols() != first.cols() ||
        s->fmap.channels() != first.channels()) {
      throw ShapeError("triplet batch mixes feature-map shapes");
    }
  }
}

void TrainConfig::validate() const {
  if (!(margin > 0.0)) throw InvalidArgument("margin must be positive");
  if (!(learning_rate >= 0.0)) throw InvalidArgument("learning rate must be non-negative");
  if (batch_size < 2) throw InvalidArgument("batch size must be at least 2");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("Adam decay rates must lie in [0, 1)");
  }
}

double triplet_loss(double sim_pos, double sim_neg, double margin) {
  return std::max(0.0, sim_neg - sim_pos + margin);
}

std::size_t mine_semi_hard(std::size_t anchor, std::span<const double> sims) {
  if (sims.size() < 2) throw InvalidBatch("semi-hard mining needs at least two captions");
  if (anchor >= sims.size()) throw InvalidArgument("anchor index outside batch");
  const double positive = sims[anchor];
  std::size_t best_below = sims.size();
  std::size_t hardest = sims.size();
  for (std::size_t j = 0; j < sims.size(); ++j) {
    if (j == anchor) continue;
    if (hardest == sims.size() || sims[j] > sims[hardest]) hardest = j;
    if (sims[j] < positive && (best_below == sims.size() || sims[j] > sims[best_below])) {
      best_below = j;
    }
  }
  return best_below != sims.size() ? best_below : hardest;
}

double retrieval_top1(std::span<const double> sims, std::size_t batch_size) {
  if (batch_size == 0 || sims.size() != batch_size * batch_size) {
    throw ShapeError("retrieval_top1: similarity matrix is not B x B");
  }
  std::size_t hits = 0;
  for (std::size_t a = 0; a < batch_size; ++a) {
    const auto row = sims.subspan(a * batch_size, batch_size);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) -
                                               row.begin());
    if (best == a) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(batch_size);
}

namespace {

// Per-image forward state shared by every caption the image is paired with.
struct ImageState {
  const Grid3D* fmap = nullptr;
  std::vector<double> projected;   // N x e
  std::vector<double> norms;       // N, unguarded
  std::vector<double> importance;  // N
};

struct CaptionState {
  std::vector<std::size_t> words;
  std::vector<double> norms;       // l, unguarded
  std::vector<double> importance;  // l
};

ImageState image_state(const Grid3D& fmap, const GroundingParams& params) {
  ImageState s;
  s.fmap = &fmap;
  const Grid3D projected = region_projection(fmap, params);
  s.projected.assign(projected.data().begin(), projected.data().end());
  const std::size_t e = params.dims.embed_dim;
  s.norms.resize(fmap.cell_count());
  for (std::size_t i = 0; i < s.norms.size(); ++i) {
    s.norms[i] = l2_norm(std::span<const double>(s.projected.data() + i * e, e));
  }
  const std::vector<double> logits = region_logits(fmap, params);
  // Non-finite input features surface here first; report them as a numerical failure.
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericalError("non-finite region logit");
  }
  s.importance = softmax(logits);
  return s;
}

CaptionState caption_state(const Caption& caption, const GroundingParams& params) {
  CaptionState s;
  s.importance = word_importance(caption, params);
  s.words.reserve(caption.tokens.size());
  for (int t : caption.tokens) {
    const auto w = static_cast<std::size_t>(t);
    s.words.push_back(w);
    s.norms.push_back(l2_norm(params.embedding(w)));
  }
  return s;
}

// Aggregate similarity of one (image, caption) pair; optionally returns the
// N x l cosine matrix.
double pair_similarity(const ImageState& img, const CaptionState& cap,
                       const GroundingParams& params, std::vector<double>* cosines = nullptr) {
  const std::size_t e = params.dims.embed_dim;
  const std::size_t n = img.importance.size();
  const std::size_t l = cap.words.size();
  if (cosines) cosines->assign(n * l, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> u(img.projected.data() + i * e, e);
    const double nu = img.norms[i] + kNormEpsilon;
    double acc = 0.0;
    for (std::size_t k = 0; k < l; ++k) {
      const double c = dot(u, params.embedding(cap.words[k])) / (nu * (cap.norms[k] + kNormEpsilon));
      if (cosines) (*cosines)[i * l + k] = c;
      acc += cap.importance[k] * c;
    }
    total += img.importance[i] * acc;
  }
  return total;
}

// Backpropagates upstream * d(sim)/d(theta) for one pair. Image-side terms
// land in d_projected (N x e) and d_logits (N); caption-side terms go
// straight into grads.
void pair_backward(const ImageState& img, const CaptionState& cap, const GroundingParams& params,
                   double upstream, std::vector<double>& d_projected,
                   std::vector<double>& d_logits, GradientSet& grads) {
  const std::size_t e = params.dims.embed_dim;
  const std::size_t n = img.importance.size();
  const std::size_t l = cap.words.size();
  std::vector<double> cosines;
  const double sim = pair_similarity(img, cap, params, &cosines);

  // Softmax layers: d sim / d logit = weight * (marginal - sim).
  std::vector<double> word_marginal(l, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double region_marginal = 0.0;
    for (std::size_t k = 0; k < l; ++k) {
      const double c = cosines[i * l + k];
      region_marginal += cap.importance[k] * c;
      word_marginal[k] += img.importance[i] * c;
    }
    d_logits[i] += upstream * img.importance[i] * (region_marginal - sim);
  }

  std::vector<double> d_words(l * e, 0.0);
  for (std::size_t k = 0; k < l; ++k) {
    const double dz = upstream * cap.importance[k] * (word_marginal[k] - sim);
    const auto v = params.embedding(cap.words[k]);
    for (std::size_t m = 0; m < e; ++m) {
      grads.txt_score_weight[m] += dz * v[m];
      d_words[k * e + m] += dz * params.txt_score_weight[m];
    }
    grads.txt_score_bias += dz;
  }

  // Cosine layer. With D = (|u|+eps)(|v|+eps) and c = <u,v>/D:
  //   dc/du = v/D - c u / (|u| (|u|+eps)),  dc/dv = u/D - c v / (|v| (|v|+eps)).
  std::vector<double> word_self(l, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* u = img.projected.data() + i * e;
    double* du = d_projected.data() + i * e;
    const double nu = img.norms[i];
    const double nu_g = nu + kNormEpsilon;
    double region_self = 0.0;
    for (std::size_t k = 0; k < l; ++k) {
      const double g = upstream * img.importance[i] * cap.importance[k];
      if (g == 0.0) continue;
      const double c = cosines[i * l + k];
      const double inv_d = 1.0 / (nu_g * (cap.norms[k] + kNormEpsilon));
      const double alpha = g * inv_d;
      const auto v = params.embedding(cap.words[k]);
      double* dv = d_words.data() + k * e;
      for (std::size_t m = 0; m < e; ++m) {
        du[m] += alpha * v[m];
        dv[m] += alpha * u[m];
      }
      region_self += g * c;
      word_self[k] += g * c;
    }
    if (nu > 0.0) {
      const double scale = region_self / (nu * nu_g);
      for (std::size_t m = 0; m < e; ++m) du[m] -= scale * u[m];
    }
  }
  for (std::size_t k = 0; k < l; ++k) {
    const double nv = cap.norms[k];
    auto dst = grads.embedding(cap.words[k]);
    const auto v = params.embedding(cap.words[k]);
    const double scale = nv > 0.0 ? word_self[k] / (nv * (nv + kNormEpsilon)) : 0.0;
    for (std::size_t m = 0; m < e; ++m) dst[m] += d_words[k * e + m] - scale * v[m];
  }
}

// Folds image-side upstream gradients into the parameter gradients.
void image_backward(const ImageState& img, const GroundingParams& params,
                    const std::vector<double>& d_projected, const std::vector<double>& d_logits,
                    GradientSet& grads) {
  const std::size_t e = params.dims.embed_dim;
  const std::size_t d = params.dims.feature_dim;
  for (std::size_t i = 0; i < d_logits.size(); ++i) {
    const auto f = img.fmap->cell(i);
    const double* du = d_projected.data() + i * e;
    for (std::size_t m = 0; m < e; ++m) grads.img_bias[m] += du[m];
    for (std::size_t k = 0; k < d; ++k) {
      const double fk = f[k];
      if (fk == 0.0) continue;
      double* row = grads.img_projection.data() + k * e;
      for (std::size_t m = 0; m < e; ++m) row[m] += fk * du[m];
      grads.img_score_weight[k] += d_logits[i] * fk;
    }
    grads.img_score_bias += d_logits[i];
  }
}

void add_into(GradientSet& dst, const GradientSet& src) {
  auto out = dst.tensors();
  const auto in = src.tensors();
  for (std::size_t t = 0; t < out.size(); ++t) {
    for (std::size_t i = 0; i < out[t].size(); ++i) out[t][i] += in[t][i];
  }
}

struct BatchStates {
  std::vector<ImageState> images;
  std::vector<CaptionState> captions;
};

BatchStates batch_states(const TripletBatch& batch, const GroundingParams& params) {
  BatchStates s;
  s.images.resize(batch.size());
  s.captions.resize(batch.size());
  parallel_for(batch.size(), [&](std::size_t a) {
    s.images[a] = image_state(batch[a].fmap, params);
    s.captions[a] = caption_state(batch[a].caption, params);
  });
  return s;
}

std::vector<double> similarity_matrix(const BatchStates& states, const GroundingParams& params) {
  const std::size_t b = states.images.size();
  std::vector<double> sims(b * b);
  parallel_for(b, [&](std::size_t a) {
    for (std::size_t j = 0; j < b; ++j) {
      sims[a * b + j] = pair_similarity(states.images[a], states.captions[j], params);
    }
  });
  return sims;
}

BatchGradients gradients_with_negatives(const BatchStates& states, const GroundingParams& params,
                                        std::vector<double> sims,
                                        std::span<const std::size_t> negatives, double margin) {
  const std::size_t b = states.images.size();
  if (negatives.size() != b) throw InvalidBatch("one negative per anchor required");
  for (std::size_t a = 0; a < b; ++a) {
    if (negatives[a] >= b || negatives[a] == a) throw InvalidBatch("invalid negative index");
  }

  std::vector<double> hinge(b);
  double loss = 0.0;
  for (std::size_t a = 0; a < b; ++a) {
    hinge[a] = triplet_loss(sims[a * b + a], sims[a * b + negatives[a]], margin);
    loss += hinge[a];
  }
  if (!std::isfinite(loss)) throw NumericalError("triplet loss is not finite");

  std::vector<GradientSet> partial(b);
  parallel_for(b, [&](std::size_t a) {
    partial[a] = GradientSet::zeros(params.dims);
    if (hinge[a] <= 0.0) return;
    const ImageState& img = states.images[a];
    std::vector<double> d_projected(img.projected.size(), 0.0);
    std::vector<double> d_logits(img.importance.size(), 0.0);
    pair_backward(img, states.captions[a], params, -1.0, d_projected, d_logits, partial[a]);
    pair_backward(img, states.captions[negatives[a]], params, 1.0, d_projected, d_logits,
                  partial[a]);
    image_backward(img, params, d_projected, d_logits, partial[a]);
  });

  BatchGradients out;
  out.loss = loss;
  out.grads = GradientSet::zeros(params.dims);
  for (const auto& p : partial) add_into(out.grads, p);
  out.negatives.assign(negatives.begin(), negatives.end());
  out.retrieval_top1 = retrieval_top1(sims, b);
  out.sims = std::move(sims);
  return out;
}

}  // namespace

std::vector<double> similarity_matrix(const TripletBatch& batch, const GroundingParams& params) {
  return similarity_matrix(batch_states(batch, params), params);
}

BatchGradients batch_gradients(const TripletBatch& batch, const GroundingParams& params,
                               const TrainConfig& config) {
  const BatchStates states = batch_states(batch, params);
  std::vector<double> sims = similarity_matrix(states, params);
  const std::size_t b = batch.size();
  std::vector<std::size_t> negatives(b);
  for (std::size_t a = 0; a < b; ++a) {
    negatives[a] = mine_semi_hard(a, std::span<const double>(sims).subspan(a * b, b));
  }
  return gradients_with_negatives(states, params, std::move(sims), negatives, config.margin);
}

BatchGradients batch_gradients(const TripletBatch& batch, const GroundingParams& params,
                               std::span<const std::size_t> negatives, double margin) {
  const BatchStates states = batch_states(batch, params);
  std::vector<double> sims = similarity_matrix(states, params);
  return gradients_with_negatives(states, params, std::move(sims), negatives, margin);
}

double gradient_norm(const GradientSet& grads) {
  double total = 0.0;
  for (const auto& t : grads.tensors()) {
    for (double g : t) total += g * g;
  }
  return std::sqrt(total);
}

double clip_gradients(GradientSet& grads, double max_norm) {
  const double norm = gradient_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto t : grads.tensors()) {
      for (double& g : t) g *= scale;
    }
  }
  return norm;
}

AdamOptimizer::AdamOptimizer(const GroundingParams& like, double learning_rate, double beta1,
                             double beta2, double epsilon)
    : learning_rate_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon),
      first_moment_(GradientSet::zeros(like.dims)),
      second_moment_(GradientSet::zeros(like.dims)) {}

void AdamOptimizer::step(GroundingParams& params, const GradientSet& grads) {
  ++t_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = first_moment_.tensors();
  auto v = second_moment_.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < p[t].size(); ++i) {
      m[t][i] = beta1_ * m[t][i] + (1.0 - beta1_) * g[t][i];
      v[t][i] = beta2_ * v[t][i] + (1.0 - beta2_) * g[t][i] * g[t][i];
      const double m_hat = m[t][i] / correction1;
      const double v_hat = v[t][i] / correction2;
      p[t][i] -= learning_rate_ * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
  }
}

namespace {

void sgd_step(GroundingParams& params, const GradientSet& grads, double learning_rate) {
  auto p = params.tensors();
  const auto g = grads.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < p[t].size(); ++i) p[t][i] -= learning_rate * g[t][i];
  }
}

// Epoch-wise shuffled stream of sample indices.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
      : order_(dataset_size), batch_(std::min(batch_size, dataset_size)), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_.begin(), order_.end());
  }

  std::vector<std::size_t> next() {
    if (cursor_ + batch_ > order_.size()) {
      rng_.shuffle(order_.begin(), order_.end());
      cursor_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<long>(cursor_),
                                 order_.begin() + static_cast<long>(cursor_ + batch_));
    cursor_ += batch_;
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

}  // namespace

TrainResult train(std::span<const TrainingSample> dataset, GroundingParams initial,
                  const TrainConfig& config, const CheckpointCallback& on_checkpoint) {
  config.validate();
  initial.validate();
  if (dataset.size() < 2) throw InvalidArgument("training needs at least two samples");

  TrainResult result{std::move(initial), {}};
  GroundingParams& params = result.params;
  AdamOptimizer adam(params, config.learning_rate, config.beta1, config.beta2,
                     config.adam_epsilon);
  BatchSampler sampler(dataset.size(), config.batch_size, config.seed);
  result.trace.reserve(config.steps);

  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::vector<const TrainingSample*> members;
    for (std::size_t i : sampler.next()) members.push_back(&dataset[i]);
    const TripletBatch batch(std::move(members));

    BatchGradients bg;
    try {
      bg = batch_gradients(batch, params, config);
    } catch (const NumericalError&) {
      if (on_checkpoint) on_checkpoint(step - 1, params);
      throw;
    }
    const double norm = clip_gradients(bg.grads, config.clip_norm);
    if (!std::isfinite(norm)) {
      if (on_checkpoint) on_checkpoint(step - 1, params);
      throw NumericalError("non-finite gradient at step " + std::to_string(step));
    }
    if (config.optimizer == OptimizerKind::Adam) {
      adam.step(params, bg.grads);
    } else {
      sgd_step(params, bg.grads, config.learning_rate);
    }
    result.trace.push_back(
        {step, bg.loss / static_cast<double>(batch.size()), bg.retrieval_top1});
    if (on_checkpoint && config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0 &&
        step != config.steps) {
      on_checkpoint(step, params);
    }
  }
  if (on_checkpoint) on_checkpoint(config.steps, params);
  return result;
}

double evaluate_retrieval(std::span<const TrainingSample> dataset, const GroundingParams& params,
                          std::size_t batch_size, std::uint64_t seed) {
  if (batch_size < 2) throw InvalidArgument("retrieval batch size must be at least 2");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  std::size_t hits = 0;
  std::size_t total = 0;
  for (std::size_t start = 0; start + 2 <= order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::vector<const TrainingSample*> members;
    for (std::size_t i = start; i < end; ++i) members.push_back(&dataset[order[i]]);
    const TripletBatch batch(std::move(members));
    const auto sims = similarity_matrix(batch, params);
    hits += static_cast<std::size_t>(
        std::lround(retrieval_top1(sims, batch.size()) * static_cast<double>(batch.size())));
    total += batch.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace capg
