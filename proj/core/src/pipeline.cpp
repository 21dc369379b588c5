#include "capg/pipeline.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "capg/error.hpp"
#include "capg/parallel.hpp"

namespace capg {

namespace fs = std::filesystem;

std::vector<std::string> Corpus::images(std::string_view split) const {
  std::vector<std::string> ids;
  for (const auto& c : captions) {
    if (split.empty() || c.split == split) ids.push_back(c.image_id);
  }
  return ids;
}

Grid3D Corpus::fmap(const std::string& image_id) const {
  return read_fmap(dir / "fmaps" / (image_id + ".fmap"));
}

Caption Corpus::caption(const std::string& image_id) const {
  const auto it = std::find_if(captions.begin(), captions.end(),
                               [&](const CaptionRecord& c) { return c.image_id == image_id; });
  if (it == captions.end()) throw InvalidArgument("no caption for image '" + image_id + "'");
  return make_caption(it->image_id, it->text, vocab);
}

Corpus load_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  Corpus corpus;
  corpus.dir = dir;
  corpus.vocab = read_vocab(dir / "vocab.tsv");
  corpus.captions = read_captions(dir / "captions.jsonl");
  for (const auto& c : corpus.captions) {
    if (!corpus.split_of.emplace(c.image_id, c.split).second) {
      throw FormatError((dir / "captions.jsonl").string() + ": duplicate image '" + c.image_id +
                        "'");
    }
  }
  if (fs::exists(dir / "classes.txt")) corpus.class_names = read_lines(dir / "classes.txt");
  if (fs::exists(dir / "gt.jsonl")) {
    corpus.ground_truth = to_box_set(read_boxes(dir / "gt.jsonl", corpus.class_names));
  }
  return corpus;
}

std::vector<std::size_t> resolve_classes(const Vocabulary& vocab,
                                         std::span<const std::string> class_names) {
  if (class_names.empty()) throw InvalidArgument("empty class list");
  std::vector<std::size_t> words;
  for (const auto& name : class_names) words.push_back(vocab.index_of(name));
  return words;
}

std::vector<Box> make_proposals(const ProposalOptions& options, std::size_t feature_grid) {
  if (options.kind == ProposalKind::Lattice) {
    return lattice_proposals(feature_grid, options.min_cells, options.max_cells);
  }
  return grid_proposals(options.grid_steps, options.scales, options.aspects);
}

std::vector<TrainingSample> load_samples(const Corpus& corpus, std::string_view split) {
  const auto ids = corpus.images(split);
  std::vector<TrainingSample> samples;
  samples.reserve(ids.size());
  for (const auto& id : ids) {
    Caption caption;
    try {
      caption = corpus.caption(id);
    } catch (const InvalidArgument& e) {
      spdlog::warn("skipping {}: {}", id, e.what());
      continue;
    }
    samples.push_back({corpus.fmap(id), std::move(caption)});
  }
  return samples;
}

TrainSimOutput train_grounding(const Corpus& corpus, const TrainSimOptions& options,
                               const CheckpointCallback& on_checkpoint) {
  auto samples = load_samples(corpus, options.split);
  if (samples.size() < 2) throw InvalidArgument("train-sim needs at least two captioned images");
  const ModelDims dims{corpus.vocab.size(), samples.front().fmap.channels(), options.embed_dim};
  // Initialization and batch sampling draw from separate streams.
  GroundingParams init =
      GroundingParams::random_uniform(dims, options.train.seed ^ 0x9e3779b97f4a7c15ULL,
                                      options.init_range);
  if (options.embeddings) {
    const std::size_t n = import_embeddings(*options.embeddings, corpus.vocab, init);
    spdlog::info("imported {} word vectors from {}", n, options.embeddings->string());
  }
  TrainResult result = train(samples, std::move(init), options.train, on_checkpoint);
  return {std::move(result.params), std::move(result.trace), samples.size()};
}

namespace {

std::vector<ActivationMap> maps_for(const Grid3D& fmap, const GroundingParams& params,
                                    std::span<const std::size_t> words, const CamOptions& cam) {
  return class_activation_maps(fmap, words, params, cam);
}

// Rewrites class ids from word indices to positions in `words`.
void words_to_positions(std::vector<Box>& boxes, std::span<const std::size_t> words) {
  for (Box& b : boxes) {
    if (!b.class_id) continue;
    const auto it = std::find(words.begin(), words.end(), static_cast<std::size_t>(*b.class_id));
    b.class_id = static_cast<int>(it - words.begin());
  }
}

}  // namespace

std::vector<BoxRecord> rank_boxes(const Corpus& corpus, const GroundingParams& params,
                                  std::span<const std::string> class_names,
                                  std::span<const std::string> image_ids,
                                  const RankOptions& options) {
  options.scoring.validate();
  const auto words = resolve_classes(corpus.vocab, class_names);
  std::vector<BoxRecord> out(image_ids.size());
  std::vector<Box> proposals;
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    const Grid3D fmap = corpus.fmap(image_ids[i]);
    if (proposals.empty()) proposals = make_proposals(options.proposals, fmap.rows());
    const auto maps = maps_for(fmap, params, words, options.cam);
    std::vector<Box> boxes = score_proposals(maps, proposals, options.scoring);
    boxes = options.apply_nms ? nms(boxes, options.scoring.nms_iou) : top_k(boxes, boxes.size());
    if (boxes.size() > options.scoring.top_k) boxes.resize(options.scoring.top_k);
    words_to_positions(boxes, words);
    const auto split = corpus.split_of.find(image_ids[i]);
    out[i] = {image_ids[i], split == corpus.split_of.end() ? "" : split->second, std::move(boxes)};
  }
  return out;
}

std::vector<InstanceBag> build_bags(const Corpus& corpus, const BoxSet& pseudo_gt,
                                    std::span<const std::string> class_names,
                                    const MilTrainOptions& options) {
  const auto words = resolve_classes(corpus.vocab, class_names);
  std::vector<InstanceBag> bags;
  std::vector<Box> proposals;
  for (const auto& [id, pgt] : pseudo_gt) {
    if (!corpus.split_of.contains(id)) continue;
    auto labels = extract_labels(corpus.caption(id), words);
    if (!labels_usable(labels)) continue;
    const Grid3D fmap = corpus.fmap(id);
    if (proposals.empty()) proposals = make_proposals(options.proposals, fmap.rows());
    auto matched = match_boxes(proposals, pgt, options.match_iou);
    if (matched.empty()) continue;
    bags.push_back(make_bag(id, fmap, std::move(matched), std::move(labels)));
  }
  return bags;
}

MilTrainOutput train_mil_head(const Corpus& corpus, const BoxSet& pseudo_gt,
                              std::span<const std::string> class_names,
                              const MilTrainOptions& options) {
  const auto bags = build_bags(corpus, pseudo_gt, class_names, options);
  if (bags.empty()) throw InvalidArgument("train-mil: no usable bags");
  MilParams init =
      MilParams::random_uniform(class_names.size(), bags.front().feature_dim, options.mil.seed);
  MilTrainOutput out;
  out.params = train_mil(bags, std::move(init), options.mil);
  out.bags = bags.size();
  out.accuracy = mil_accuracy(bags, out.params);
  return out;
}

std::vector<BoxRecord> run_detection(const Corpus& corpus, const GroundingParams& grounding,
                                     const MilParams* mil,
                                     std::span<const std::string> class_names,
                                     std::span<const std::string> image_ids,
                                     const DetectConfig& config, const ProposalOptions& proposals) {
  const auto words = resolve_classes(corpus.vocab, class_names);
  std::vector<BoxRecord> out;
  std::vector<Box> boxes;
  for (const auto& id : image_ids) {
    const Grid3D fmap = corpus.fmap(id);
    if (boxes.empty()) boxes = make_proposals(proposals, fmap.rows());
    const auto split = corpus.split_of.find(id);
    out.push_back({id, split == corpus.split_of.end() ? "" : split->second,
                   detect(fmap, boxes, grounding, mil, words, config)});
  }
  return out;
}

BoxSet to_box_set(const std::vector<BoxRecord>& records) {
  BoxSet set;
  for (const auto& r : records) {
    auto& dst = set[r.image_id];
    dst.insert(dst.end(), r.boxes.begin(), r.boxes.end());
  }
  return set;
}

MetricsReport evaluate_records(const std::vector<BoxRecord>& predictions, const BoxSet& ground_truth,
                               std::span<const std::string> class_names,
                               const EvalOptions& options) {
  const BoxSet pred = to_box_set(predictions);
  BoxSet gt;
  for (const auto& [id, _] : pred) {
    const auto it = ground_truth.find(id);
    gt[id] = it == ground_truth.end() ? std::vector<Box>{} : it->second;
  }
  return evaluate_detections(pred, gt, class_names, options);
}

PipelineResult run_pipeline(const PipelineOptions& options, const fs::path& out_dir) {
  PipelineResult result;
  const fs::path data = out_dir / "data";
  write_dataset(synth_generate(options.synth), data);
  const Corpus corpus = load_corpus(data);

  result.grounding = train_grounding(corpus, options.train);
  write_gpar(out_dir / "grounding.gpar", result.grounding.params);
  write_loss_csv(out_dir / "loss.csv", result.grounding.trace);
  const std::uint64_t eval_seed = options.train.train.seed + 1;
  result.train_retrieval = evaluate_retrieval(load_samples(corpus, "train"), result.grounding.params,
                                              options.train.train.batch_size, eval_seed);
  const auto heldout_samples = load_samples(corpus, "heldout");
  if (heldout_samples.size() >= 2) {
    result.heldout_retrieval = evaluate_retrieval(heldout_samples, result.grounding.params,
                                                  options.train.train.batch_size, eval_seed);
  }

  const auto train_ids = corpus.images("train");
  const auto pgt = rank_boxes(corpus, result.grounding.params, corpus.class_names, train_ids,
                              options.select);
  write_boxes(out_dir / "pgt.jsonl", pgt, corpus.class_names);
  {
    BoxSet planted;
    for (const auto& id : train_ids) planted[id] = corpus.ground_truth.at(id);
    result.pseudo_gt_recall =
        precision_recall_at_k(to_box_set(pgt), planted, options.select.scoring.top_k,
                              options.eval.iou_threshold, false)
            .recall;
  }

  result.mil = train_mil_head(corpus, to_box_set(pgt), corpus.class_names, options.mil);
  write_mpar(out_dir / "mil.mpar", result.mil.params);

  const auto dets = run_detection(corpus, result.grounding.params, &result.mil.params,
                                  corpus.class_names, corpus.images("heldout"), options.detect,
                                  options.select.proposals);
  write_boxes(out_dir / "detections.jsonl", dets, corpus.class_names);
  result.metrics = evaluate_records(dets, corpus.ground_truth, corpus.class_names, options.eval);
  write_json(out_dir / "metrics.json", result.metrics.to_json());
  return result;
}

}  // namespace capg
