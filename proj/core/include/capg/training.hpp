#pragma once

// Triplet training of the grounding model with in-batch semi-hard negatives.
//
// For every anchor image a in a batch, the negative caption is the most
// similar other caption that is still less similar than a's own caption
// (falling back to the most similar one overall). The batch loss is the sum
// of hinges [sim(a, neg) - sim(a, pos) + margin]_+, differentiated by hand
// through the cosine, projection and both softmax importance layers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "capg/grounding.hpp"

namespace capg {

struct TrainingSample {
  Grid3D fmap;
  Caption caption;
};

/// Non-owning view of B >= 2 samples.
class TripletBatch {
 public:
  explicit TripletBatch(std::vector<const TrainingSample*> samples);

  std::size_t size() const noexcept { return samples_.size(); }
  const TrainingSample& operator[](std::size_t i) const { return *samples_[i]; }

 private:
  std::vector<const TrainingSample*> samples_;
};

enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
  double margin = 0.1;
  double learning_rate = 0.003;
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::size_t checkpoint_interval = 0;  // 0 = only the final checkpoint

  /// Throws InvalidArgument on margin <= 0, negative learning rate, or batch < 2.
  void validate() const;
};

double triplet_loss(double sim_pos, double sim_neg, double margin);

/// sims[j] = similarity of the anchor image to caption j; sims[anchor] is the
/// positive. Returns the largest negative strictly below the positive, or the
/// largest negative overall when none is below. Lowest index wins ties.
/// Throws InvalidBatch when sims has fewer than two entries.
std::size_t mine_semi_hard(std::size_t anchor, std::span<const double> sims);

/// B x B row-major matrix, entry (a, j) = sim_aggregate(image a, caption j).
std::vector<double> similarity_matrix(const TripletBatch& batch, const GroundingParams& params);

/// Fraction of rows whose argmax (lowest index on ties) is the diagonal.
double retrieval_top1(std::span<const double> sims, std::size_t batch_size);

struct BatchGradients {
  double loss = 0.0;  // summed hinge over anchors
  GradientSet grads;
  std::vector<std::size_t> negatives;
  std::vector<double> sims;  // B x B
  double retrieval_top1 = 0.0;
};

/// Mines one negative per anchor and returns the summed loss and its gradient.
/// Throws NumericalError if the loss is not finite.
BatchGradients batch_gradients(const TripletBatch& batch, const GroundingParams& params,
                               const TrainConfig& config);

/// Same, with the negative for each anchor given instead of mined.
BatchGradients batch_gradients(const TripletBatch& batch, const GroundingParams& params,
                               std::span<const std::size_t> negatives, double margin);

/// Global L2 norm over every tensor.
double gradient_norm(const GradientSet& grads);

/// Rescales grads to max_norm when their norm exceeds it; returns the norm
/// before clipping.
double clip_gradients(GradientSet& grads, double max_norm);

class AdamOptimizer {
 public:
  AdamOptimizer(const GroundingParams& like, double learning_rate, double beta1, double beta2,
                double epsilon);
  void step(GroundingParams& params, const GradientSet& grads);

 private:
  double learning_rate_, beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
  GradientSet first_moment_;
  GradientSet second_moment_;
};

struct TraceRow {
  std::size_t step = 0;
  double loss = 0.0;  // batch loss divided by batch size
  double retrieval_top1 = 0.0;
};

struct TrainResult {
  GroundingParams params;
  std::vector<TraceRow> trace;
};

/// Called every checkpoint_interval steps and once at the end with the
/// current parameters. On a numerical failure it is called with the last
/// good parameters before the NumericalError propagates.
using CheckpointCallback = std::function<void(std::size_t step, const GroundingParams&)>;

/// Deterministic in (dataset, initial params, config): batches come from a
/// seeded per-epoch shuffle and gradients are reduced in anchor order.
TrainResult train(std::span<const TrainingSample> dataset, GroundingParams initial,
                  const TrainConfig& config, const CheckpointCallback& on_checkpoint = {});

/// In-batch retrieval accuracy over the dataset split into consecutive
/// batches of batch_size after a seeded shuffle (trailing partial batch kept
/// when it has at least two samples).
double evaluate_retrieval(std::span<const TrainingSample> dataset, const GroundingParams& params,
                          std::size_t batch_size, std::uint64_t seed);

}  // namespace capg
