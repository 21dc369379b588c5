#pragma once

// Corpus loading and the stages shared by the command-line tool:
// grounding training, CAM export, vocabulary mining, box ranking and
// pseudo ground-truth selection, MIL training, detection and evaluation.
//
// Class ids in every box set produced here are positions in the class-name
// list passed to the stage.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "capg/evalkit.hpp"
#include "capg/formats.hpp"
#include "capg/grounding.hpp"
#include "capg/milhead.hpp"
#include "capg/objectness.hpp"
#include "capg/synth.hpp"
#include "capg/training.hpp"

namespace capg {

/// A dataset directory as written by write_dataset: vocab.tsv, captions.jsonl,
/// fmaps/, and optionally gt.jsonl and classes.txt.
struct Corpus {
  std::filesystem::path dir;
  Vocabulary vocab;
  std::vector<std::string> class_names;  // classes.txt, then any extra names in gt.jsonl
  std::vector<CaptionRecord> captions;
  BoxSet ground_truth;
  std::map<std::string, std::string> split_of;

  /// Image ids in caption-file order; an empty split selects every image.
  std::vector<std::string> images(std::string_view split = {}) const;
  Grid3D fmap(const std::string& image_id) const;
  /// The caption of an image encoded against vocab (unknown words skipped).
  Caption caption(const std::string& image_id) const;
};

Corpus load_corpus(const std::filesystem::path& dir);

/// Word index of every class name. Throws UnknownWord.
std::vector<std::size_t> resolve_classes(const Vocabulary& vocab,
                                         std::span<const std::string> class_names);

enum class ProposalKind { Lattice, Grid };

struct ProposalOptions {
  ProposalKind kind = ProposalKind::Lattice;
  std::size_t min_cells = 2;  // lattice
  std::size_t max_cells = 8;
  std::size_t grid_steps = 10;  // sliding grid
  std::vector<double> scales{0.2, 0.3, 0.4};
  std::vector<double> aspects{1.0};
};

std::vector<Box> make_proposals(const ProposalOptions& options, std::size_t feature_grid);

struct TrainSimOptions {
  TrainConfig train;
  std::size_t embed_dim = 50;
  double init_range = 0.08;
  std::string split = "train";
  std::optional<std::filesystem::path> embeddings;  // word-vector text file
};

struct TrainSimOutput {
  GroundingParams params;
  std::vector<TraceRow> trace;
  std::size_t samples = 0;
};

std::vector<TrainingSample> load_samples(const Corpus& corpus, std::string_view split);

TrainSimOutput train_grounding(const Corpus& corpus, const TrainSimOptions& options,
                               const CheckpointCallback& on_checkpoint = {});

struct RankOptions {
  ScoringConfig scoring;
  CamOptions cam;
  ProposalOptions proposals;
  bool apply_nms = true;
};

/// Per image: CAMs for every class, proposals scored by options.scoring,
/// optional NMS, top scoring.top_k kept.
std::vector<BoxRecord> rank_boxes(const Corpus& corpus, const GroundingParams& params,
                                  std::span<const std::string> class_names,
                                  std::span<const std::string> image_ids,
                                  const RankOptions& options);

struct MilTrainOptions {
  MilConfig mil;
  ProposalOptions proposals;
  double match_iou = 0.5;
};

struct MilTrainOutput {
  MilParams params;
  std::size_t bags = 0;
  double accuracy = 0.0;
};

/// One bag per pseudo-labelled image whose caption names a class and whose
/// proposals overlap its pseudo ground truth.
std::vector<InstanceBag> build_bags(const Corpus& corpus, const BoxSet& pseudo_gt,
                                    std::span<const std::string> class_names,
                                    const MilTrainOptions& options);

MilTrainOutput train_mil_head(const Corpus& corpus, const BoxSet& pseudo_gt,
                              std::span<const std::string> class_names,
                              const MilTrainOptions& options);

std::vector<BoxRecord> run_detection(const Corpus& corpus, const GroundingParams& grounding,
                                     const MilParams* mil,
                                     std::span<const std::string> class_names,
                                     std::span<const std::string> image_ids,
                                     const DetectConfig& config, const ProposalOptions& proposals);

BoxSet to_box_set(const std::vector<BoxRecord>& records);

/// Ground truth restricted to the images present in the predictions.
MetricsReport evaluate_records(const std::vector<BoxRecord>& predictions, const BoxSet& ground_truth,
                               std::span<const std::string> class_names,
                               const EvalOptions& options = {});

/// Everything one end-to-end run needs.
struct PipelineOptions {
  SyntheticSceneSpec synth;
  TrainSimOptions train;
  RankOptions select;
  MilTrainOptions mil;
  DetectConfig detect;
  EvalOptions eval;
};

struct PipelineResult {
  TrainSimOutput grounding;
  double heldout_retrieval = 0.0;
  double train_retrieval = 0.0;
  double pseudo_gt_recall = 0.0;  // planted boxes recovered by pseudo GT, train split
  MilTrainOutput mil;
  MetricsReport metrics;        // class-aware, heldout split
};

/// synth -> train-sim -> select-pgt -> train-mil -> detect -> evaluate, with
/// every artifact written under out_dir (data/, grounding.gpar, pgt.jsonl,
/// mil.mpar, detections.jsonl, metrics.json).
PipelineResult run_pipeline(const PipelineOptions& options, const std::filesystem::path& out_dir);

}  // namespace capg
