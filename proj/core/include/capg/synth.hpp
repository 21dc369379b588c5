#pragma once

// Synthetic image-caption corpora.
//
// A scene is an n x n feature grid. Each object occupies a block of cells
// whose features are its class signature plus Gaussian noise; every other
// cell is pure noise. Class signatures are orthonormal. The caption names
// every object's class word inside templated text padded with words that
// describe nothing visible.
//
// The leak scenes are raw activation maps for comparing box criteria: one
// object with sharp edges and one brighter distractor that is sharp on three
// sides and fades out slowly through the fourth.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capg/box.hpp"
#include "capg/numerics.hpp"
#include "capg/objectness.hpp"
#include "capg/rng.hpp"

namespace capg {

struct SyntheticSceneSpec {
  std::size_t classes = 8;
  std::size_t scenes = 500;
  std::size_t grid = 14;
  std::size_t feature_dim = 32;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::size_t min_box_cells = 3;
  std::size_t max_box_cells = 6;
  double noise = 0.1;
  std::size_t distractors = 40;
  std::size_t heldout = 100;  // the last scenes form the "heldout" split
  std::uint64_t seed = 7;

  /// Throws SpecError on an unsatisfiable combination.
  void validate() const;
  nlohmann::json to_json() const;
};

struct SyntheticScene {
  std::string image_id;
  std::string split;  // "train" or "heldout"
  Grid3D fmap;
  std::vector<Box> boxes;  // class_id indexes SyntheticDataset::class_words
  std::string caption;
};

struct SyntheticDataset {
  SyntheticSceneSpec spec;
  std::vector<std::string> class_words;
  std::vector<std::vector<double>> signatures;
  std::vector<std::string> distractor_words;
  std::vector<SyntheticScene> scenes;
};

std::span<const std::string> class_word_pool();
std::span<const std::string> distractor_word_pool();

/// Objects in a scene have distinct classes and are separated by at least one
/// empty cell. Deterministic in spec.seed.
SyntheticDataset synth_generate(const SyntheticSceneSpec& spec);

/// Writes vocab.tsv, captions.jsonl, gt.jsonl, classes.txt, spec.json and
/// fmaps/<image_id>.fmap under dir.
void write_dataset(const SyntheticDataset& dataset, const std::filesystem::path& dir);

struct LeakSceneSpec {
  std::size_t raster = 112;
  std::size_t kernel = 5;
  double min_ratio = 1.5;  // distractor brightness relative to the object
  double max_ratio = 2.5;
  double leak_length = 1.0;  // fade length as a multiple of the distractor side
  double noise = 0.02;
};

struct LeakScene {
  Grid2D cam;
  Box object;
  Box distractor;
  Edge leak_edge = Edge::Left;
};

/// Object and distractor are both taken from `proposals` (boxes not touching
/// the image border), so an exact proposal exists for each. Throws SpecError
/// when no valid placement is found.
LeakScene make_leak_scene(const LeakSceneSpec& spec, std::span<const Box> proposals, Rng& rng);

}  // namespace capg
