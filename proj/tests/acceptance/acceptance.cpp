// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "capg/evalkit.hpp"
#include "capg/formats.hpp"
#include "capg/objectness.hpp"
#include "capg/pipeline.hpp"
#include "capg/synth.hpp"
#include "oracles/oracles.hpp"
#include "oracles/toy_metrics.hpp"

namespace fs = std::filesystem;
using namespace capg;

namespace {

// Tolerances and budgets.
constexpr double kGradRelTol = 1e-3;
constexpr double kGradAbsTol = 1e-6;
constexpr double kGradStep = 1e-4;
constexpr std::size_t kGradInstances = 100;     // grounding instances
constexpr std::size_t kMilGradInstances = 50;   // MIL-head instances
constexpr double kGradBudget = 30.0;

constexpr std::size_t kRectPairs = 10000;
constexpr double kRectRelTol = 1e-6;
constexpr double kRectBudget = 5.0;

constexpr double kStepBudget = 1.0;

constexpr std::size_t kLeakScenes = 500;
constexpr double kLeakMinLead = 0.10;
constexpr double kLeakBudget = 120.0;

constexpr double kRetrievalMin = 0.9;   // strictly greater
constexpr double kPgtRecallMin = 0.8;
constexpr double kMapMin = 0.5;
constexpr double kPipelineBudget = 300.0;

constexpr std::size_t kMinedRecallHits = 7;  // of 8
constexpr double kMiningBudget = 10.0;

constexpr double kToyTol = 1e-12;
constexpr std::size_t kNmsSets = 1000;
constexpr double kMetricBudget = 10.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Shared by criteria 5, 6 and 8.
PipelineOptions acceptance_pipeline() {
  PipelineOptions o;
  o.synth.classes = 8;
  o.synth.distractors = 40;
  o.synth.min_objects = 3;
  o.synth.max_objects = 3;
  o.train.train.steps = 2000;
  o.train.train.batch_size = 8;
  o.train.train.margin = 0.1;
  o.train.train.learning_rate = 0.003;
  o.select.cam = {112, 112, 8, CamGate::Logit};
  o.select.scoring.top_k = 5;
  o.detect.cam = o.select.cam;
  return o;
}

Outcome gradient_fidelity() {
  Rng rng(20240501);
  oracle::GradCheck total;
  std::size_t instances = 0;
  for (std::size_t t = 0; t < kGradInstances; ++t) {
    const std::size_t b = 2 + rng.index(3), n = 1 + rng.index(3), d = 2 + rng.index(3);
    const std::size_t e = 2 + rng.index(3), vocab = 3 + rng.index(5), len = 1 + rng.index(4);
    std::vector<TrainingSample> samples;
    for (std::size_t i = 0; i < b; ++i) {
      samples.push_back({oracle::random_fmap(rng, n, d), oracle::random_caption(rng, vocab, len)});
    }
    auto params = GroundingParams::random_uniform({vocab, d, e}, rng.next(), 0.6);
    params.img_score_bias = rng.uniform(-0.5, 0.5);
    params.txt_score_bias = rng.uniform(-0.5, 0.5);
    std::vector<std::size_t> neg(b);
    for (std::size_t a = 0; a < b; ++a) neg[a] = (a + 1 + rng.index(b - 1)) % b;
    // A margin above the similarity range keeps every hinge away from its kink.
    const double margin = 2.5;
    std::vector<const TrainingSample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    const auto bg = batch_gradients(TripletBatch(ptrs), params, neg, margin);
    const auto f = [&] { return oracle::triplet_loss(samples, neg, params, margin); };
    const auto grads = bg.grads.tensors();
    auto tensors = params.tensors();
    for (std::size_t k = 0; k < GroundingParams::kTensorCount; ++k) {
      total += oracle::check_gradient(tensors[k], grads[k], f, kGradStep, kGradRelTol, kGradAbsTol);
    }
    ++instances;
  }
  for (std::size_t t = 0; t < kMilGradInstances; ++t) {
    const std::size_t classes = 2 + rng.index(5), dim = 1 + rng.index(5), boxes = 1 + rng.index(6);
    InstanceBag bag;
    bag.feature_dim = dim;
    bag.boxes.assign(boxes, make_box(0, 0, 1, 1));
    for (std::size_t i = 0; i < boxes * dim; ++i) bag.features.push_back(rng.normal());
    bag.labels.assign(classes, 0.0);
    bag.labels[rng.index(classes)] += 0.5;
    bag.labels[rng.index(classes)] += 0.5;
    MilParams head = MilParams::zeros(classes, dim);
    for (double& w : head.weights) w = rng.normal();
    for (double& c : head.bias) c = 0.3 * rng.normal();
    const auto g = mil_gradients(bag, head);
    const auto f = [&] { return oracle::mil_loss(bag.features, boxes, dim, bag.labels, head); };
    total += oracle::check_gradient(head.weights, g.grads.weights, f, kGradStep, kGradRelTol, kGradAbsTol);
    total += oracle::check_gradient(head.bias, g.grads.bias, f, kGradStep, kGradRelTol, kGradAbsTol);
    ++instances;
  }
  return {total.failed == 0 && instances >= 100,
          fmt("%zu instances, %zu coordinates, %zu outside tolerance, worst |diff| %.2e", instances,
              total.checked, total.failed, total.worst_abs)};
}

Outcome integral_oracle() {
  Rng rng(77);
  std::size_t bad = 0;
  double worst = 0.0;
  for (std::size_t t = 0; t < kRectPairs; ++t) {
    const std::size_t rows = 1 + rng.index(64), cols = 1 + rng.index(64);
    const Grid2D g = oracle::random_grid(rng, rows, cols);
    const PixelRect r = oracle::random_rect(rng, rows, cols);
    const double got = IntegralImage(g).rect_mean(r);
    const double want = oracle::rect_mean(g, r);
    const double rel = std::abs(got - want) / std::max(std::abs(want), 1e-300);
    worst = std::max(worst, rel);
    if (rel > kRectRelTol) ++bad;
  }
  return {bad == 0, fmt("%zu pairs, %zu outside tolerance, worst relative error %.2e", kRectPairs,
                        bad, worst)};
}

Outcome step_edge() {
  constexpr int side = 200;
  const PixelRect truth{50, 40, 150, 120};
  Grid2D g(side, side, 0.0);
  for (int r = truth.row0; r < truth.row1; ++r) {
    for (int c = truth.col0; c < truth.col1; ++c) g(r, c) = 1.0;
  }
  const std::vector<ActivationMap> maps{ActivationMap(0, g)};
  const ScoringConfig cfg;
  const auto box_at = [&](int r0, int c0, int r1, int c1) {
    return make_box(static_cast<double>(c0) / side, static_cast<double>(r0) / side,
                    static_cast<double>(c1) / side, static_cast<double>(r1) / side);
  };
  const double best = box_objectness(maps, box_at(truth.row0, truth.col0, truth.row1, truth.col1), cfg).score;
  const bool exact = best == cfg.beta + 1.0;

  const int tw = std::max(1, static_cast<int>(std::lround(cfg.margin_fraction * truth.width())));
  const int th = std::max(1, static_cast<int>(std::lround(cfg.margin_fraction * truth.height())));
  std::size_t checked = 0, rivals = 0;
  double runner_up = -INFINITY;
  auto consider = [&](int r0, int c0, int r1, int c1) {
    if (r0 < 0 || c0 < 0 || r1 > side || c1 > side || r1 <= r0 || c1 <= c0) return;
    const bool displaced = std::abs(r0 - truth.row0) >= th || std::abs(r1 - truth.row1) >= th ||
                           std::abs(c0 - truth.col0) >= tw || std::abs(c1 - truth.col1) >= tw;
    if (!displaced) return;
    const double s = box_objectness(maps, box_at(r0, c0, r1, c1), cfg).score;
    ++checked;
    runner_up = std::max(runner_up, s);
    if (s >= best) ++rivals;
  };
  // Every box within 12 px of the true edges, then a coarse sweep of the whole raster.
  for (int d0 = -12; d0 <= 12; ++d0) {
    for (int d1 = -12; d1 <= 12; ++d1) {
      for (int d2 = -12; d2 <= 12; ++d2) {
        for (int d3 = -12; d3 <= 12; ++d3) {
          consider(truth.row0 + d0, truth.col0 + d1, truth.row1 + d2, truth.col1 + d3);
        }
      }
    }
  }
  for (int r0 = 0; r0 < side; r0 += 10) {
    for (int r1 = r0 + 10; r1 <= side; r1 += 10) {
      for (int c0 = 0; c0 < side; c0 += 10) {
        for (int c1 = c0 + 10; c1 <= side; c1 += 10) consider(r0, c0, r1, c1);
      }
    }
  }
  return {exact && rivals == 0,
          fmt("true box %.17g (beta + 1 = %.17g, %s); %zu displaced boxes, best %.6f, %zu ties or "
              "better",
              best, cfg.beta + 1.0, exact ? "exact" : "MISMATCH", checked, runner_up, rivals)};
}

Outcome criterion_ordering() {
  const std::vector<double> scales{0.2, 0.3, 0.4}, aspects{1.0};
  const auto proposals = grid_proposals(10, scales, aspects);
  const LeakSceneSpec spec;
  Rng rng(4242);
  const std::array<Criterion, 3> criteria{Criterion::MinEdgeGradient, Criterion::AverageActivation,
                                          Criterion::InsideOutside};
  std::array<BoxSet, 3> tops;
  BoxSet truth;
  for (std::size_t s = 0; s < kLeakScenes; ++s) {
    const LeakScene scene = make_leak_scene(spec, proposals, rng);
    const std::vector<ActivationMap> maps{ActivationMap(0, scene.cam)};
    const std::string id = std::to_string(s);
    truth[id] = {scene.object};
    for (std::size_t c = 0; c < criteria.size(); ++c) {
      ScoringConfig cfg;
      cfg.criterion = criteria[c];
      cfg.border_fraction = 0.2;
      tops[c][id] = top_k(score_proposals(maps, proposals, cfg), 1);
    }
  }
  std::array<double, 3> p1{};
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    p1[c] = precision_recall_at_k(tops[c], truth, 1, 0.5, false).precision;
  }
  const double lead = p1[0] - std::max(p1[1], p1[2]);
  return {lead >= kLeakMinLead,
          fmt("%zu scenes x %zu proposals; P@1 min-edge-gradient %.3f, average-activation %.3f, "
              "inside-outside %.3f; lead %.3f",
              kLeakScenes, proposals.size(), p1[0], p1[1], p1[2], lead)};
}

struct PipelineRun {
  PipelineResult result;
  double seconds = 0.0;
  double train_retrieval = 0.0;
};

Outcome end_to_end(const PipelineRun& run) {
  const auto& r = run.result;
  const bool ok = r.train_retrieval > kRetrievalMin && r.pseudo_gt_recall >= kPgtRecallMin &&
                  r.metrics.map >= kMapMin;
  double tail = 0.0;
  const auto& trace = r.grounding.trace;
  const std::size_t window = std::min<std::size_t>(100, trace.size());
  for (std::size_t i = trace.size() - window; i < trace.size(); ++i) tail += trace[i].loss;
  tail /= static_cast<double>(std::max<std::size_t>(window, 1));
  return {ok, fmt("retrieval top-1 %.4f train / %.4f heldout; pseudo-GT recall@5 %.4f; mAP@0.5 "
                  "%.4f; mean loss over last %zu steps %.4f",
                  r.train_retrieval, r.heldout_retrieval, r.pseudo_gt_recall, r.metrics.map, window,
                  tail)};
}

Outcome vocabulary_mining(const fs::path& run_dir, double* mining_seconds) {
  const Corpus corpus = load_corpus(run_dir / "data");
  const GroundingParams params = read_gpar(run_dir / "grounding.gpar");
  const auto t0 = std::chrono::steady_clock::now();
  VocabularyExclusion ex;
  ex.cosine_threshold = 0.6;
  for (const char* w : {"a", "the"}) {
    if (const auto idx = corpus.vocab.find(w)) ex.seed_words.push_back(*idx);
  }
  const auto mined = mine_vocabulary(corpus.vocab, params, corpus.class_names.size(), 5, ex);
  *mining_seconds = seconds_since(t0);
  std::vector<std::string> words;
  for (std::size_t w : mined) words.push_back(corpus.vocab.word(w));
  const double recall = vocabulary_recall(words, corpus.class_names);
  const auto hits = static_cast<std::size_t>(std::lround(recall * corpus.class_names.size()));
  std::string list;
  for (const auto& w : words) list += (list.empty() ? "" : " ") + w;
  return {hits >= kMinedRecallHits,
          fmt("top-%zu of %zu words: [%s]; %zu/%zu planted classes", words.size(),
              corpus.vocab.size(), list.c_str(), hits, corpus.class_names.size())};
}

Outcome metric_oracle() {
  const auto cases = oracle::toy_cases();
  std::size_t wrong = 0;
  std::string first_wrong;
  for (const auto& c : cases) {
    if (std::abs(oracle::evaluate_toy(c) - c.expected) > kToyTol) {
      if (wrong++ == 0) first_wrong = c.name;
    }
  }
  Rng rng(1000);
  std::size_t nms_wrong = 0;
  for (std::size_t t = 0; t < kNmsSets; ++t) {
    std::vector<Box> boxes;
    const std::size_t n = 1 + rng.index(60);
    for (std::size_t i = 0; i < n; ++i) {
      Box b = oracle::random_box(rng);
      b.score = static_cast<double>(rng.index(20)) / 20.0;
      boxes.push_back(b);
    }
    const double thr = rng.uniform(0.05, 0.95);
    if (nms(boxes, thr) != oracle::nms(boxes, thr)) ++nms_wrong;
  }
  return {cases.size() >= 20 && wrong == 0 && nms_wrong == 0,
          fmt("%zu toy cases, %zu mismatched%s%s; %zu NMS sets, %zu mismatched", cases.size(), wrong,
              wrong ? ", first: " : "", first_wrong.c_str(), kNmsSets, nms_wrong)};
}

Outcome determinism(const fs::path& a, const fs::path& b) {
  std::vector<std::string> differing;
  const std::vector<std::string> files{"grounding.gpar", "mil.mpar", "metrics.json", "loss.csv",
                                       "pgt.jsonl", "detections.jsonl"};
  for (const auto& f : files) {
    if (read_text(a / f) != read_text(b / f)) differing.push_back(f);
  }
  std::string list;
  for (const auto& f : differing) list += " " + f;
  return {differing.empty(), differing.empty()
                                 ? fmt("%zu artifacts byte-identical across two runs", files.size())
                                 : "differing:" + list};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capg acceptance suite"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work, "Scratch directory for pipeline runs")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria (1-8)");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  const std::set<int> selected(only.begin(), only.end());
  const auto wanted = [&](int id) { return selected.empty() || selected.contains(id); };
  int failures = 0, ran = 0;
  const auto report = [&](int id, const char* name, const Outcome& o, double seconds, double budget) {
    const bool pass = o.pass && seconds < budget;
    ++ran;
    failures += pass ? 0 : 1;
    std::printf("%s [%d] %s: %s (%.2f s, budget %.0f s)\n", pass ? "PASS" : "FAIL", id, name,
                o.detail.c_str(), seconds, budget);
    std::fflush(stdout);
  };
  const auto timed = [&](int id, const char* name, double budget, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    report(id, name, o, seconds_since(t0), budget);
  };

  timed(1, "gradient fidelity", kGradBudget, gradient_fidelity);
  timed(2, "integral-image oracle", kRectBudget, integral_oracle);
  timed(3, "step-edge exactness", kStepBudget, step_edge);
  timed(4, "criterion ordering", kLeakBudget, criterion_ordering);

  const fs::path root(work);
  const fs::path run_a = root / "run_a", run_b = root / "run_b";
  std::optional<PipelineRun> first;
  if (wanted(5) || wanted(6) || wanted(8)) {
    fs::remove_all(run_a);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      first = PipelineRun{run_pipeline(acceptance_pipeline(), run_a), 0.0, 0.0};
      first->seconds = seconds_since(t0);
    } catch (const std::exception& e) {
      std::printf("pipeline run failed: %s\n", e.what());
    }
  }
  if (wanted(5)) {
    if (first) {
      report(5, "end-to-end learning", end_to_end(*first), first->seconds, kPipelineBudget);
    } else {
      report(5, "end-to-end learning", {false, "pipeline did not complete"}, 0.0, kPipelineBudget);
    }
  }
  if (wanted(6)) {
    double mining = 0.0;
    Outcome o{false, "pipeline did not complete"};
    if (first) {
      try {
        o = vocabulary_mining(run_a, &mining);
      } catch (const std::exception& e) {
        o = {false, std::string("error: ") + e.what()};
      }
    }
    report(6, "vocabulary mining", o, mining, kMiningBudget);
  }
  timed(7, "metric-kit oracle", kMetricBudget, metric_oracle);
  if (wanted(8)) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o{false, "pipeline did not complete"};
    if (first) {
      try {
        fs::remove_all(run_b);
        run_pipeline(acceptance_pipeline(), run_b);
        o = determinism(run_a, run_b);
      } catch (const std::exception& e) {
        o = {false, std::string("error: ") + e.what()};
      }
    }
    report(8, "determinism", o, seconds_since(t0), kPipelineBudget);
  }
  std::printf("%d/%d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
