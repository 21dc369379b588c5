#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "capg/error.hpp"
#include "capg/formats.hpp"
#include "capg/heatmap.hpp"
#include "oracles/oracles.hpp"

using namespace capg;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           ("capg_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path dir_;
};

void write_raw(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

using Formats = TempDir;

TEST_F(Formats, FmapRoundTripIsFloat32) {
  Rng rng(1);
  const Grid3D f = oracle::random_fmap(rng, 3, 4);
  write_fmap(path("a.fmap"), f);
  const Grid3D back = read_fmap(path("a.fmap"));
  ASSERT_EQ(back.rows(), 3u);
  ASSERT_EQ(back.channels(), 4u);
  for (std::size_t i = 0; i < f.data().size(); ++i) {
    EXPECT_EQ(back.data()[i], static_cast<double>(static_cast<float>(f.data()[i])));
  }
  EXPECT_EQ(fs::file_size(path("a.fmap")), 4 + 4 * 4 + 36 * 4u);
}

TEST_F(Formats, ParamRoundTripsAreExact) {
  auto g = GroundingParams::random_uniform({7, 3, 5}, 2, 0.3);
  g.img_score_bias = 0.125;
  g.txt_score_bias = -1.0 / 3.0;
  write_gpar(path("m.gpar"), g);
  EXPECT_EQ(read_gpar(path("m.gpar")), g);
  const auto m = MilParams::random_uniform(4, 6, 3);
  write_mpar(path("h.mpar"), m);
  EXPECT_EQ(read_mpar(path("h.mpar")), m);
}

TEST_F(Formats, CorruptFilesAreRejected) {
  write_raw(path("bad.fmap"), "NOPE0000");
  EXPECT_THROW(read_fmap(path("bad.fmap")), FormatError);
  const auto g = GroundingParams::random_uniform({2, 2, 2}, 1);
  write_gpar(path("t.gpar"), g);
  fs::resize_file(path("t.gpar"), fs::file_size(path("t.gpar")) - 3);
  EXPECT_THROW(read_gpar(path("t.gpar")), FormatError);
  write_fmap(path("f.fmap"), Grid3D(1, 1, 1, 1.0));
  EXPECT_THROW(read_gpar(path("f.fmap")), FormatError);
  EXPECT_THROW(read_fmap(path("missing.fmap")), IoError);
  Grid3D nan_map(1, 1, 1, 0.0);
  nan_map(0, 0, 0) = NAN;
  write_fmap(path("n.fmap"), nan_map);
  EXPECT_THROW(read_fmap(path("n.fmap")), FormatError);
}

TEST_F(Formats, VocabAndCaptions) {
  const auto v = Vocabulary::from_texts({"a dog", "a cat"});
  write_vocab(path("v.tsv"), v);
  EXPECT_EQ(read_vocab(path("v.tsv")), v);
  const std::vector<CaptionRecord> caps{{"s1", "train", "a dog"}, {"s2", "heldout", "a \"cat\""}};
  write_captions(path("c.jsonl"), caps);
  EXPECT_EQ(read_captions(path("c.jsonl")), caps);
  write_raw(path("broken.jsonl"), "{\"image_id\": 3}\n");
  EXPECT_THROW(read_captions(path("broken.jsonl")), FormatError);
}

TEST_F(Formats, BoxesRoundTripWithClassNames) {
  std::vector<BoxRecord> recs{{"s1", "train", {make_box(0.1, 0.2, 0.3, 0.4, 0.5, 1)}},
                              {"s2", "", {make_box(0, 0, 1, 1, 0.25, 0), make_box(0, 0, 0.5, 0.5, 0.1, 1)}}};
  write_boxes(path("b.jsonl"), recs, {"dog", "cat"});
  std::vector<std::string> names{"cat"};
  const auto back = read_boxes(path("b.jsonl"), names);
  EXPECT_EQ(names, (std::vector<std::string>{"cat", "dog"}));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].boxes[0].class_id, 0);  // "cat" is now index 0
  EXPECT_EQ(back[1].boxes[0].class_id, 1);
  EXPECT_EQ(back[1].boxes[0].score, 0.25);
  EXPECT_EQ(back[0].boxes[0].xmin, 0.1);
}

TEST_F(Formats, EmbeddingImport) {
  Vocabulary v;
  v.add("dog", 1);
  v.add("cat", 1);
  auto g = GroundingParams::zeros({2, 2, 3});
  write_raw(path("e.txt"), "cat 1 2 3\nzebra 4 5 6\n");
  EXPECT_EQ(import_embeddings(path("e.txt"), v, g), 1u);
  EXPECT_EQ(g.embedding(1)[2], 3.0);
  EXPECT_EQ(g.embedding(0)[0], 0.0);
  write_raw(path("bad.txt"), "cat 1 2\n");
  EXPECT_THROW(import_embeddings(path("bad.txt"), v, g), FormatError);
}

TEST_F(Formats, LossCsvAndDoubles) {
  write_loss_csv(path("l.csv"), {{1, 0.1, 0.5}, {2, 1.0 / 3.0, 1.0}});
  EXPECT_EQ(read_text(path("l.csv")), "step,loss,retrieval_top1\n1,0.1,0.5\n2,0.3333333333333333,1\n");
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.normal() * std::pow(10.0, static_cast<double>(rng.index(20)) - 10);
    EXPECT_EQ(std::stod(format_double(x)), x);
  }
}

TEST_F(Formats, JsonAndLines) {
  write_lines(path("l.txt"), {"a", "b"});
  write_raw(path("l2.txt"), "a\n\nb\n");
  EXPECT_EQ(read_lines(path("l.txt")), read_lines(path("l2.txt")));
  write_json(path("j.json"), {{"x", 1}});
  EXPECT_EQ(read_json(path("j.json"))["x"], 1);
  write_raw(path("bad.json"), "{");
  EXPECT_THROW(read_json(path("bad.json")), FormatError);
}

TEST_F(Formats, HeatmapExport) {
  Grid2D g(2, 3, std::vector<double>{-1, 0, 1, 0.5, 0.25, 1});
  export_heatmap(g, path("h.pgm"));
  const Grid2D back = read_pgm(path("h.pgm"));
  ASSERT_EQ(back.rows(), 2u);
  ASSERT_EQ(back.cols(), 3u);
  EXPECT_EQ(back(0, 0), 0.0);
  EXPECT_EQ(back(0, 2), 255.0);
  EXPECT_EQ(back(1, 0), quantize(0.5, -1, 1));
  const auto side = read_json(path("h.pgm.json"));
  EXPECT_EQ(side["min"], -1.0);
  EXPECT_EQ(side["max"], 1.0);
  export_heatmap(Grid2D(2, 2, 7.0), path("c.pgm"));
  EXPECT_EQ(read_pgm(path("c.pgm")).max(), 0.0);
  EXPECT_EQ(quantize(0.0, -1.0, 1.0), 128);
}
