#include <gtest/gtest.h>

#include <filesystem>

#include <unistd.h>

#include "capg/error.hpp"
#include "capg/pipeline.hpp"

using namespace capg;
namespace fs = std::filesystem;

namespace {

PipelineOptions tiny_options() {
  PipelineOptions o;
  o.synth.scenes = 60;
  o.synth.heldout = 20;
  o.train.train.steps = 60;
  o.select.cam = {56, 56, 4, CamGate::Logit};
  o.detect.cam = o.select.cam;
  o.mil.mil.steps = 50;
  return o;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("capg_pipe_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Pipeline, WritesEveryArtifactAndIsRepeatable) {
  const fs::path a = scratch("a"), b = scratch("b");
  const auto ra = run_pipeline(tiny_options(), a);
  const auto rb = run_pipeline(tiny_options(), b);
  for (const char* f : {"grounding.gpar", "loss.csv", "pgt.jsonl", "mil.mpar", "detections.jsonl",
                        "metrics.json", "data/vocab.tsv", "data/classes.txt", "data/spec.json"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(read_text(a / f), read_text(b / f)) << f;
  }
  EXPECT_EQ(ra.grounding.trace.size(), 60u);
  EXPECT_GE(ra.metrics.map, 0.0);
  EXPECT_LE(ra.metrics.map, 1.0);
  EXPECT_EQ(ra.metrics.images, 20u);
  EXPECT_EQ(rb.mil.params, ra.mil.params);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, CorpusLoadingAndClassResolution) {
  const fs::path dir = scratch("corpus");
  auto spec = tiny_options().synth;
  write_dataset(synth_generate(spec), dir);
  const Corpus c = load_corpus(dir);
  EXPECT_EQ(c.images().size(), 60u);
  EXPECT_EQ(c.images("heldout").size(), 20u);
  EXPECT_EQ(c.class_names.size(), 8u);
  EXPECT_EQ(c.ground_truth.size(), 60u);
  EXPECT_EQ(c.fmap("s00000").rows(), spec.grid);
  EXPECT_THROW(c.caption("nope"), InvalidArgument);
  const std::vector<std::string> bad{"dog", "unicorn"};
  EXPECT_THROW(resolve_classes(c.vocab, bad), UnknownWord);
  EXPECT_THROW(load_corpus(dir / "missing"), IoError);
  fs::remove_all(dir);
}

TEST(Pipeline, ProposalKinds) {
  ProposalOptions p;
  EXPECT_EQ(make_proposals(p, 14), lattice_proposals(14, 2, 8));
  p.kind = ProposalKind::Grid;
  EXPECT_EQ(make_proposals(p, 14).size(), 300u);
}
