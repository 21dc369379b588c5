// capg: command-line front end for the caption-grounded detection pipeline.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "capg/error.hpp"
#include "capg/evalkit.hpp"
#include "capg/formats.hpp"
#include "capg/heatmap.hpp"
#include "capg/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::uint64_t seed = 0;
  bool json = false;
  std::string log_level = "info";
};

// Collects what a run read and wrote, for the manifest.
struct Run {
  std::string command;
  std::vector<std::string> argv;
  const CLI::App* app = nullptr;
  Common* common = nullptr;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, double> timings;
  json summary = json::object();

  template <typename Fn>
  auto timed(const std::string& stage, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      timings[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } else {
      auto result = fn();
      timings[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return result;
    }
  }

  void write_manifest(const fs::path& path) const {
    json m;
    m["command"] = command;
    m["argv"] = argv;
    m["config"] = app->config_to_str(true, false);
    m["seed"] = common->seed;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["timings_s"] = timings;
    m["version"] = "0.1.0";
    capg::write_json(path, m);
  }
};

void add_common(CLI::App* sub, Common& c, std::uint64_t default_seed) {
  c.seed = default_seed;
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  sub->add_flag("--json", c.json, "Print a machine-readable JSON summary to stdout");
  sub->add_option("--log-level", c.log_level, "trace|debug|info|warn|error|critical|off")
      ->capture_default_str()
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));
}

void add_cam(CLI::App* sub, capg::CamOptions& cam, std::string& gate) {
  sub->add_option("--raster", cam.raster_rows, "CAM raster side in pixels")->capture_default_str();
  sub->add_option("--kernel", cam.kernel_size, "Gaussian smoothing kernel size")
      ->capture_default_str();
  sub->add_option("--cam-gate", gate, "Region gate: logit|softmax")
      ->capture_default_str()
      ->check(CLI::IsMember({"logit", "softmax"}));
}

void finish_cam(capg::CamOptions& cam, const std::string& gate) {
  cam.raster_cols = cam.raster_rows;
  cam.gate = gate == "softmax" ? capg::CamGate::Softmax : capg::CamGate::Logit;
}

void add_scoring(CLI::App* sub, capg::ScoringConfig& s, std::string& criterion, bool with_top_k) {
  sub->add_option("--criterion", criterion,
                  "min-edge-gradient|average-activation|inside-outside-contrast")
      ->capture_default_str()
      ->check(CLI::IsMember({"min-edge-gradient", "average-activation", "inside-outside-contrast"}));
  sub->add_option("--beta", s.beta, "Weight of the mean inside activation")->capture_default_str();
  sub->add_option("--margin-fraction", s.margin_fraction, "Edge strip thickness / box side")
      ->capture_default_str();
  sub->add_option("--border-fraction", s.border_fraction, "Inside-outside ring width / box side")
      ->capture_default_str();
  sub->add_option("--nms-iou", s.nms_iou, "NMS IoU threshold")->capture_default_str();
  if (with_top_k) sub->add_option("--top-k", s.top_k, "Boxes kept per image")->capture_default_str();
}

void add_proposals(CLI::App* sub, capg::ProposalOptions& p, std::string& kind) {
  sub->add_option("--proposals", kind, "lattice|grid")
      ->capture_default_str()
      ->check(CLI::IsMember({"lattice", "grid"}));
  sub->add_option("--min-cells", p.min_cells, "Lattice proposals: smallest side in cells")
      ->capture_default_str();
  sub->add_option("--max-cells", p.max_cells, "Lattice proposals: largest side in cells")
      ->capture_default_str();
  sub->add_option("--grid-steps", p.grid_steps, "Grid proposals: centres per axis")
      ->capture_default_str();
  sub->add_option("--scales", p.scales, "Grid proposals: box sides")->capture_default_str();
  sub->add_option("--aspects", p.aspects, "Grid proposals: width/height ratios")
      ->capture_default_str();
}

void finish_proposals(capg::ProposalOptions& p, const std::string& kind) {
  p.kind = kind == "grid" ? capg::ProposalKind::Grid : capg::ProposalKind::Lattice;
}

std::vector<std::string> class_list(const capg::Corpus& corpus, const std::string& file) {
  auto names = file.empty() ? corpus.class_names : capg::read_lines(file);
  if (names.empty()) throw capg::InvalidArgument("no class list: pass --class-list or add classes.txt");
  return names;
}

capg::GroundingParams load_model(const capg::Corpus& corpus, const fs::path& path, Run& run) {
  auto params = capg::read_gpar(path);
  if (params.dims.vocab_size != corpus.vocab.size()) {
    throw capg::ShapeError(path.string() + ": model vocabulary does not match the corpus");
  }
  run.inputs.push_back(path.string());
  return params;
}

std::vector<std::string> select_images(const capg::Corpus& corpus, const std::string& split,
                                       const std::vector<std::string>& ids) {
  if (!ids.empty()) return ids;
  return corpus.images(split);
}

void print_summary(const Run& run) {
  if (run.common->json) {
    std::cout << run.summary.dump() << '\n';
    return;
  }
  for (const auto& [key, value] : run.summary.items()) {
    std::cout << key << ": " << (value.is_string() ? value.get<std::string>() : value.dump())
              << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Caption-grounded weakly supervised detection toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "0.1.0");

  Common common;
  Run run;
  run.common = &common;
  run.argv.assign(argv, argv + argc);
  std::function<void()> action;

  // synth
  capg::SyntheticSceneSpec synth;
  std::string synth_out;
  auto* s_synth = app.add_subcommand("synth", "Generate a synthetic image-caption corpus");
  s_synth->add_option("--classes", synth.classes, "Number of object classes")->capture_default_str();
  s_synth->add_option("--scenes", synth.scenes, "Number of scenes")->capture_default_str();
  s_synth->add_option("--grid", synth.grid, "Feature grid side")->capture_default_str();
  s_synth->add_option("--feature-dim", synth.feature_dim, "Feature channels")->capture_default_str();
  s_synth->add_option("--min-objects", synth.min_objects, "Fewest objects per scene")
      ->capture_default_str();
  s_synth->add_option("--max-objects", synth.max_objects, "Most objects per scene")
      ->capture_default_str();
  s_synth->add_option("--min-box-cells", synth.min_box_cells, "Smallest object side in cells")
      ->capture_default_str();
  s_synth->add_option("--max-box-cells", synth.max_box_cells, "Largest object side in cells")
      ->capture_default_str();
  s_synth->add_option("--noise", synth.noise, "Feature noise sigma")->capture_default_str();
  s_synth->add_option("--distractors", synth.distractors, "Size of the non-visual word pool")
      ->capture_default_str();
  s_synth->add_option("--heldout", synth.heldout, "Scenes in the heldout split")
      ->capture_default_str();
  s_synth->add_option("--out", synth_out, "Output directory")->required();
  add_common(s_synth, common, 7);
  s_synth->callback([&] {
    action = [&] {
      synth.seed = common.seed;
      const auto ds = run.timed("generate", [&] { return capg::synth_generate(synth); });
      run.timed("write", [&] { capg::write_dataset(ds, synth_out); });
      run.outputs.push_back(synth_out);
      run.summary = {{"out", synth_out},
                     {"scenes", ds.scenes.size()},
                     {"classes", ds.class_words}};
      run.write_manifest(fs::path(synth_out) / "manifest.json");
    };
  });

  // train-sim
  capg::TrainSimOptions train;
  std::string train_data, train_out, optimizer = "adam", embeddings;
  auto* s_train = app.add_subcommand("train-sim", "Train the region-word grounding model");
  s_train->add_option("--data", train_data, "Corpus directory")->required();
  s_train->add_option("--out", train_out, "Output directory")->required();
  s_train->add_option("--steps", train.train.steps, "Optimizer steps")->capture_default_str();
  s_train->add_option("--batch-size", train.train.batch_size, "Triplet batch size")
      ->capture_default_str();
  s_train->add_option("--margin", train.train.margin, "Triplet margin")->capture_default_str();
  s_train->add_option("--lr", train.train.learning_rate, "Learning rate")->capture_default_str();
  s_train->add_option("--beta1", train.train.beta1, "Adam first-moment decay")->capture_default_str();
  s_train->add_option("--beta2", train.train.beta2, "Adam second-moment decay")
      ->capture_default_str();
  s_train->add_option("--adam-eps", train.train.adam_epsilon, "Adam epsilon")->capture_default_str();
  s_train->add_option("--clip-norm", train.train.clip_norm, "Gradient-norm clip (<= 0 disables)")
      ->capture_default_str();
  s_train->add_option("--optimizer", optimizer, "adam|sgd")
      ->capture_default_str()
      ->check(CLI::IsMember({"adam", "sgd"}));
  s_train->add_option("--checkpoint-interval", train.train.checkpoint_interval,
                      "Write a checkpoint every N steps (0: final only)")
      ->capture_default_str();
  s_train->add_option("--embed-dim", train.embed_dim, "Word embedding size")->capture_default_str();
  s_train->add_option("--init-range", train.init_range, "Uniform init half-width")
      ->capture_default_str();
  s_train->add_option("--split", train.split, "Corpus split to train on (empty: all)")
      ->capture_default_str();
  s_train->add_option("--embeddings", embeddings, "Word-vector text file to initialize from");
  add_common(s_train, common, 0);
  s_train->callback([&] {
    action = [&] {
      train.train.seed = common.seed;
      train.train.optimizer =
          optimizer == "sgd" ? capg::OptimizerKind::Sgd : capg::OptimizerKind::Adam;
      if (!embeddings.empty()) train.embeddings = embeddings;
      const auto corpus = run.timed("load", [&] { return capg::load_corpus(train_data); });
      run.inputs.push_back(train_data);
      const fs::path out(train_out);
      auto on_checkpoint = [&](std::size_t step, const capg::GroundingParams& p) {
        if (step == train.train.steps) return;
        char name[48];
        std::snprintf(name, sizeof name, "step_%07zu.gpar", step);
        capg::write_gpar(out / "checkpoints" / name, p);
        run.outputs.push_back((out / "checkpoints" / name).string());
      };
      const auto result =
          run.timed("train", [&] { return capg::train_grounding(corpus, train, on_checkpoint); });
      capg::write_gpar(out / "grounding.gpar", result.params);
      capg::write_loss_csv(out / "loss.csv", result.trace);
      run.outputs.push_back((out / "grounding.gpar").string());
      run.outputs.push_back((out / "loss.csv").string());
      const auto& last = result.trace.empty() ? capg::TraceRow{} : result.trace.back();
      run.summary = {{"model", (out / "grounding.gpar").string()},
                     {"samples", result.samples},
                     {"steps", result.trace.size()},
                     {"final_loss", last.loss},
                     {"final_retrieval_top1", last.retrieval_top1}};
      run.write_manifest(out / "manifest.json");
    };
  });

  // gen-cam
  std::string cam_data, cam_model, cam_out, cam_classes, cam_split = "heldout", cam_gate = "logit";
  std::vector<std::string> cam_images;
  capg::CamOptions cam;
  auto* s_cam = app.add_subcommand("gen-cam", "Export class activation maps as PGM heat maps");
  s_cam->add_option("--data", cam_data, "Corpus directory")->required();
  s_cam->add_option("--model", cam_model, "Grounding checkpoint (GPAR)")->required();
  s_cam->add_option("--out", cam_out, "Output directory")->required();
  s_cam->add_option("--class-list", cam_classes, "Class words file (default: corpus classes.txt)");
  s_cam->add_option("--split", cam_split, "Split to export when --images is absent")
      ->capture_default_str();
  s_cam->add_option("--images", cam_images, "Image ids to export");
  add_cam(s_cam, cam, cam_gate);
  add_common(s_cam, common, 0);
  s_cam->callback([&] {
    action = [&] {
      finish_cam(cam, cam_gate);
      const auto corpus = capg::load_corpus(cam_data);
      run.inputs.push_back(cam_data);
      const auto params = load_model(corpus, cam_model, run);
      const auto names = class_list(corpus, cam_classes);
      const auto words = capg::resolve_classes(corpus.vocab, names);
      std::size_t written = 0;
      run.timed("export", [&] {
        for (const auto& id : select_images(corpus, cam_split, cam_images)) {
          const auto maps = capg::class_activation_maps(corpus.fmap(id), words, params, cam);
          for (std::size_t c = 0; c < maps.size(); ++c) {
            const fs::path path = fs::path(cam_out) / (id + "_" + names[c] + ".pgm");
            capg::export_heatmap(maps[c].heat(), path);
            ++written;
          }
        }
      });
      run.outputs.push_back(cam_out);
      run.summary = {{"out", cam_out}, {"maps", written}};
      run.write_manifest(fs::path(cam_out) / "manifest.json");
    };
  });

  // mine-vocab
  std::string mine_data, mine_model, mine_out, mine_targets;
  std::size_t mine_k = 8, mine_min_freq = 5;
  double mine_threshold = 0.6;
  std::vector<std::string> mine_exclude{"a", "the"};
  auto* s_mine = app.add_subcommand("mine-vocab", "Rank caption words by learned distinctiveness");
  s_mine->add_option("--data", mine_data, "Corpus directory")->required();
  s_mine->add_option("--model", mine_model, "Grounding checkpoint (GPAR)")->required();
  s_mine->add_option("--k", mine_k, "Words to keep")->capture_default_str();
  s_mine->add_option("--min-freq", mine_min_freq, "Drop words seen fewer times")
      ->capture_default_str();
  s_mine->add_option("--exclude", mine_exclude, "Seed words for similarity exclusion")
      ->capture_default_str();
  s_mine->add_option("--exclude-threshold", mine_threshold, "Embedding cosine exclusion threshold")
      ->capture_default_str();
  s_mine->add_option("--targets", mine_targets,
                     "Words to measure recall against (default: corpus classes.txt)");
  s_mine->add_option("--out", mine_out, "Write the mined list (one word per line)");
  add_common(s_mine, common, 0);
  s_mine->callback([&] {
    action = [&] {
      const auto corpus = capg::load_corpus(mine_data);
      run.inputs.push_back(mine_data);
      const auto params = load_model(corpus, mine_model, run);
      capg::VocabularyExclusion exclusion;
      exclusion.cosine_threshold = mine_threshold;
      for (const auto& w : mine_exclude) {
        if (const auto idx = corpus.vocab.find(w)) {
          exclusion.seed_words.push_back(*idx);
        } else {
          spdlog::warn("exclusion seed '{}' is not in the vocabulary; skipped", w);
        }
      }
      const auto mined = capg::mine_vocabulary(corpus.vocab, params, mine_k, mine_min_freq, exclusion);
      std::vector<std::string> words;
      for (std::size_t w : mined) words.push_back(corpus.vocab.word(w));
      run.summary = {{"mined", words}};
      const auto targets = mine_targets.empty() ? corpus.class_names : capg::read_lines(mine_targets);
      if (!targets.empty()) run.summary["recall"] = capg::vocabulary_recall(words, targets);
      if (!mine_out.empty()) {
        capg::write_lines(mine_out, words);
        run.outputs.push_back(mine_out);
        run.write_manifest(mine_out + ".manifest.json");
      }
    };
  });

  // score-boxes and select-pgt share their options.
  struct RankCli {
    std::string data, model, out, classes, split, criterion = "min-edge-gradient", gate = "logit",
                proposals = "lattice";
    std::vector<std::string> images;
    bool no_nms = false;
    capg::RankOptions options;
  };
  RankCli score_cli, pgt_cli;
  score_cli.split = "heldout";
  score_cli.options.scoring.top_k = 100;
  pgt_cli.split = "train";
  const auto add_rank = [&](CLI::App* sub, RankCli& r) {
    sub->add_option("--data", r.data, "Corpus directory")->required();
    sub->add_option("--model", r.model, "Grounding checkpoint (GPAR)")->required();
    sub->add_option("--out", r.out, "Output boxes file (JSON Lines)")->required();
    sub->add_option("--class-list", r.classes, "Class words file (default: corpus classes.txt)");
    sub->add_option("--split", r.split, "Split to process when --images is absent")
        ->capture_default_str();
    sub->add_option("--images", r.images, "Image ids to process");
    sub->add_flag("--no-nms", r.no_nms, "Skip non-maximum suppression");
    add_scoring(sub, r.options.scoring, r.criterion, true);
    add_cam(sub, r.options.cam, r.gate);
    add_proposals(sub, r.options.proposals, r.proposals);
    add_common(sub, common, 0);
  };
  const auto rank_action = [&](RankCli& r) {
    return [&] {
      r.options.scoring.criterion = capg::parse_criterion(r.criterion);
      r.options.apply_nms = !r.no_nms;
      finish_cam(r.options.cam, r.gate);
      finish_proposals(r.options.proposals, r.proposals);
      const auto corpus = capg::load_corpus(r.data);
      run.inputs.push_back(r.data);
      const auto params = load_model(corpus, r.model, run);
      const auto names = class_list(corpus, r.classes);
      const auto ids = select_images(corpus, r.split, r.images);
      const auto records =
          run.timed("rank", [&] { return capg::rank_boxes(corpus, params, names, ids, r.options); });
      capg::write_boxes(r.out, records, names);
      run.outputs.push_back(r.out);
      run.summary = {{"out", r.out}, {"images", records.size()}, {"criterion", r.criterion}};
      if (!corpus.ground_truth.empty()) {
        capg::BoxSet gt;
        for (const auto& id : ids) {
          if (corpus.ground_truth.contains(id)) gt[id] = corpus.ground_truth.at(id);
        }
        const auto pr = capg::precision_recall_at_k(capg::to_box_set(records), gt,
                                                    r.options.scoring.top_k, 0.5, false);
        run.summary["precision"] = pr.precision;
        run.summary["recall"] = pr.recall;
      }
      run.write_manifest(r.out + ".manifest.json");
    };
  };
  auto* s_score = app.add_subcommand("score-boxes", "Rank proposals against class activation maps");
  add_rank(s_score, score_cli);
  s_score->callback([&] { action = rank_action(score_cli); });
  auto* s_pgt = app.add_subcommand("select-pgt", "Select pseudo ground-truth boxes");
  add_rank(s_pgt, pgt_cli);
  s_pgt->callback([&] { action = rank_action(pgt_cli); });

  // train-mil
  std::string mil_data, mil_pgt, mil_out, mil_classes, mil_proposals = "lattice";
  capg::MilTrainOptions mil;
  auto* s_mil = app.add_subcommand("train-mil", "Train the multiple-instance class head");
  s_mil->add_option("--data", mil_data, "Corpus directory")->required();
  s_mil->add_option("--pgt", mil_pgt, "Pseudo ground-truth boxes (JSON Lines)")->required();
  s_mil->add_option("--out", mil_out, "Output checkpoint (MPAR)")->required();
  s_mil->add_option("--class-list", mil_classes, "Class words file (default: corpus classes.txt)");
  s_mil->add_option("--lr", mil.mil.learning_rate, "Learning rate")->capture_default_str();
  s_mil->add_option("--steps", mil.mil.steps, "Gradient steps")->capture_default_str();
  s_mil->add_option("--match-iou", mil.match_iou, "Proposal to pseudo-GT IoU threshold")
      ->capture_default_str();
  add_proposals(s_mil, mil.proposals, mil_proposals);
  add_common(s_mil, common, 0);
  s_mil->callback([&] {
    action = [&] {
      mil.mil.seed = common.seed;
      finish_proposals(mil.proposals, mil_proposals);
      const auto corpus = capg::load_corpus(mil_data);
      const auto names = class_list(corpus, mil_classes);
      std::vector<std::string> pgt_names = names;
      const auto pgt = capg::to_box_set(capg::read_boxes(mil_pgt, pgt_names));
      run.inputs = {mil_data, mil_pgt};
      const auto result =
          run.timed("train", [&] { return capg::train_mil_head(corpus, pgt, names, mil); });
      capg::write_mpar(mil_out, result.params);
      run.outputs.push_back(mil_out);
      run.summary = {{"out", mil_out}, {"bags", result.bags}, {"train_accuracy", result.accuracy}};
      run.write_manifest(mil_out + ".manifest.json");
    };
  });

  // detect
  std::string det_data, det_model, det_mil, det_out, det_classes, det_split = "heldout",
                                                                  det_gate = "logit",
                                                                  det_proposals = "lattice",
                                                                  det_criterion = "min-edge-gradient";
  std::vector<std::string> det_images;
  capg::DetectConfig det;
  capg::ProposalOptions det_prop;
  auto* s_det = app.add_subcommand("detect", "Detect objects with objectness and the MIL head");
  s_det->add_option("--data", det_data, "Corpus directory")->required();
  s_det->add_option("--model", det_model, "Grounding checkpoint (GPAR)")->required();
  s_det->add_option("--mil", det_mil, "MIL checkpoint (MPAR); omit for uniform class scores");
  s_det->add_option("--out", det_out, "Output detections (JSON Lines)")->required();
  s_det->add_option("--class-list", det_classes, "Class words file (default: corpus classes.txt)");
  s_det->add_option("--split", det_split, "Split to process when --images is absent")
      ->capture_default_str();
  s_det->add_option("--images", det_images, "Image ids to process");
  s_det->add_option("--detections", det.top_k, "Detections kept per image")->capture_default_str();
  add_scoring(s_det, det.scoring, det_criterion, false);  // --detections sets the count
  add_cam(s_det, det.cam, det_gate);
  add_proposals(s_det, det_prop, det_proposals);
  add_common(s_det, common, 0);
  s_det->callback([&] {
    action = [&] {
      finish_cam(det.cam, det_gate);
      finish_proposals(det_prop, det_proposals);
      const auto corpus = capg::load_corpus(det_data);
      run.inputs.push_back(det_data);
      const auto params = load_model(corpus, det_model, run);
      std::optional<capg::MilParams> head;
      if (!det_mil.empty()) {
        head = capg::read_mpar(det_mil);
        run.inputs.push_back(det_mil);
      }
      const auto names = class_list(corpus, det_classes);
      const auto ids = select_images(corpus, det_split, det_images);
      const auto records = run.timed("detect", [&] {
        return capg::run_detection(corpus, params, head ? &*head : nullptr, names, ids, det, det_prop);
      });
      capg::write_boxes(det_out, records, names);
      run.outputs.push_back(det_out);
      run.summary = {{"out", det_out}, {"images", records.size()}};
      run.write_manifest(det_out + ".manifest.json");
    };
  });

  // evaluate
  std::string ev_pred, ev_gt, ev_classes, ev_out, ev_csv;
  bool ev_eleven = false, ev_agnostic = false;
  capg::EvalOptions ev;
  auto* s_ev = app.add_subcommand("evaluate", "Score detections against ground truth");
  s_ev->add_option("--pred", ev_pred, "Detections (JSON Lines)")->required();
  s_ev->add_option("--gt", ev_gt, "Ground truth (JSON Lines)")->required();
  s_ev->add_option("--class-list", ev_classes, "Class names file fixing the class order");
  s_ev->add_option("--iou", ev.iou_threshold, "Match IoU threshold")->capture_default_str();
  s_ev->add_flag("--eleven-point", ev_eleven, "Use 11-point interpolated AP");
  s_ev->add_flag("--class-agnostic", ev_agnostic, "Ignore classes when matching");
  s_ev->add_option("--precision-k", ev.precision_ks, "k values for P@k and R@k")
      ->capture_default_str();
  s_ev->add_option("--recall-k", ev.recall_ks, "k values for AR@k")->capture_default_str();
  s_ev->add_option("--out", ev_out, "Write the metrics JSON here");
  s_ev->add_option("--pr-csv", ev_csv, "Write per-class PR curves as CSV");
  add_common(s_ev, common, 0);
  s_ev->callback([&] {
    action = [&] {
      ev.integration = ev_eleven ? capg::ApIntegration::ElevenPoint : capg::ApIntegration::AllPoint;
      ev.class_aware = !ev_agnostic;
      std::vector<std::string> names;
      if (!ev_classes.empty()) names = capg::read_lines(ev_classes);
      const auto gt = capg::to_box_set(capg::read_boxes(ev_gt, names));
      const auto pred = capg::read_boxes(ev_pred, names);
      run.inputs = {ev_pred, ev_gt};
      const auto report = capg::evaluate_records(pred, gt, names, ev);
      run.summary = report.to_json();
      if (!ev_out.empty()) {
        capg::write_json(ev_out, run.summary);
        run.outputs.push_back(ev_out);
        run.write_manifest(ev_out + ".manifest.json");
      }
      if (!ev_csv.empty()) {
        capg::BoxSet restricted;
        const auto pset = capg::to_box_set(pred);
        for (const auto& [id, _] : pset) {
          restricted[id] = gt.contains(id) ? gt.at(id) : std::vector<capg::Box>{};
        }
        capg::write_text(ev_csv, capg::pr_curves_csv(pset, restricted, names, ev));
        run.outputs.push_back(ev_csv);
      }
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  auto logger = spdlog::stderr_color_mt("capg");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(common.log_level));

  for (const auto* sub : app.get_subcommands()) {
    run.command = sub->get_name();
    run.app = sub;
  }
  try {
    action();
    print_summary(run);
  } catch (const capg::Error& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return kExitRuntime;
  }
  return 0;
}
