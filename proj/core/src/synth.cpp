#include "capg/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "capg/error.hpp"
#include "capg/formats.hpp"
#include "capg/vocabulary.hpp"

namespace capg {

namespace {

const std::array<std::string, 20> kClassWords = {
    "dog",   "cat",   "bear",    "cake",  "car",   "boat",  "horse", "kite",   "bus",   "train",
    "bird",  "sheep", "cow",     "zebra", "giraffe", "pizza", "clock", "chair", "bottle", "umbrella"};

const std::array<std::string, 40> kDistractors = {
    "elaborate", "party",   "nice",      "day",      "beautiful", "sunny",   "old",
    "new",       "big",     "small",     "happy",    "busy",      "quiet",   "morning",
    "evening",   "weekend", "celebration", "holiday", "moment",   "scene",   "view",
    "time",      "place",   "picture",   "family",   "friends",   "summer",  "winter",
    "bright",    "lovely",  "great",     "fun",      "event",     "trip",    "city",
    "home",      "afternoon", "night",   "season",   "gathering"};

const std::array<const char*, 6> kPrefixes = {"a photo of", "there is", "we can see",
                                              "look at",    "this is",  "here is"};
const std::array<const char*, 5> kSuffixes = {"at the", "during a", "on a", "in the", "with a"};

struct CellRect {
  std::size_t r0, c0, r1, c1;  // half-open
};

bool separated(const CellRect& a, const CellRect& b) {
  // At least one empty cell between the two blocks.
  return a.r1 + 1 <= b.r0 || b.r1 + 1 <= a.r0 || a.c1 + 1 <= b.c0 || b.c1 + 1 <= a.c0;
}

std::vector<std::vector<double>> orthonormal_signatures(std::size_t count, std::size_t dim,
                                                        Rng& rng) {
  std::vector<std::vector<double>> out;
  while (out.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    for (const auto& u : out) {
      const double p = dot(v, u);
      for (std::size_t k = 0; k < dim; ++k) v[k] -= p * u[k];
    }
    const double n = l2_norm(v);
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    out.push_back(std::move(v));
  }
  for (std::size_t a = 0; a < out.size(); ++a) {
    for (std::size_t b = a + 1; b < out.size(); ++b) {
      if (std::abs(cosine(out[a], out[b])) >= 0.1) throw SpecError("signatures not orthogonal");
    }
  }
  return out;
}

std::vector<CellRect> place_objects(const SyntheticSceneSpec& spec, std::size_t count, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<CellRect> placed;
    for (int tries = 0; tries < 200 && placed.size() < count; ++tries) {
      const std::size_t span = spec.max_box_cells - spec.min_box_cells + 1;
      const std::size_t h = spec.min_box_cells + rng.index(span);
      const std::size_t w = spec.min_box_cells + rng.index(span);
      const std::size_t r0 = rng.index(spec.grid - h + 1);
      const std::size_t c0 = rng.index(spec.grid - w + 1);
      const CellRect cand{r0, c0, r0 + h, c0 + w};
      if (std::all_of(placed.begin(), placed.end(),
                      [&](const CellRect& p) { return separated(p, cand); })) {
        placed.push_back(cand);
      }
    }
    if (placed.size() == count) return placed;
  }
  throw SpecError("cannot fit " + std::to_string(count) + " objects on a " +
                  std::to_string(spec.grid) + "x" + std::to_string(spec.grid) + " grid");
}

std::string make_caption_text(const std::vector<std::string>& objects,
                              const std::vector<std::string>& distractors, Rng& rng) {
  std::string text = kPrefixes[rng.index(kPrefixes.size())];
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (i > 0) text += i + 1 == objects.size() ? " and" : ",";
    text += " a " + objects[i];
  }
  text += " ";
  text += kSuffixes[rng.index(kSuffixes.size())];
  for (int k = 0; k < 2; ++k) text += " " + distractors[rng.index(distractors.size())];
  return text;
}

}  // namespace

std::span<const std::string> class_word_pool() { return kClassWords; }
std::span<const std::string> distractor_word_pool() { return kDistractors; }

void SyntheticSceneSpec::validate() const {
  if (classes == 0 || classes > kClassWords.size()) {
    throw SpecError("classes must lie in [1, " + std::to_string(kClassWords.size()) + "]");
  }
  if (classes > feature_dim) throw SpecError("orthogonal signatures need feature_dim >= classes");
  if (distractors == 0 || distractors > kDistractors.size()) {
    throw SpecError("distractors must lie in [1, " + std::to_string(kDistractors.size()) + "]");
  }
  if (scenes == 0) throw SpecError("scenes must be positive");
  if (heldout > scenes) throw SpecError("heldout exceeds scene count");
  if (min_objects == 0 || min_objects > max_objects) {
    throw SpecError("need 1 <= min_objects <= max_objects");
  }
  if (max_objects > classes) throw SpecError("objects in a scene have distinct classes");
  if (min_box_cells == 0 || min_box_cells > max_box_cells || max_box_cells > grid) {
    throw SpecError("need 1 <= min_box_cells <= max_box_cells <= grid");
  }
  // Each object needs its block plus a one-cell gap.
  const std::size_t need = max_objects * (min_box_cells + 1) * (min_box_cells + 1);
  if (need > (grid + 1) * (grid + 1)) throw SpecError("too many objects for the grid");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw SpecError("noise must be finite and >= 0");
}

nlohmann::json SyntheticSceneSpec::to_json() const {
  return {{"classes", classes},          {"scenes", scenes},
          {"grid", grid},                {"feature_dim", feature_dim},
          {"min_objects", min_objects},  {"max_objects", max_objects},
          {"min_box_cells", min_box_cells}, {"max_box_cells", max_box_cells},
          {"noise", noise},              {"distractors", distractors},
          {"heldout", heldout},          {"seed", seed}};
}

SyntheticDataset synth_generate(const SyntheticSceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticDataset ds;
  ds.spec = spec;
  ds.class_words.assign(kClassWords.begin(), kClassWords.begin() + static_cast<long>(spec.classes));
  ds.distractor_words.assign(kDistractors.begin(),
                             kDistractors.begin() + static_cast<long>(spec.distractors));
  ds.signatures = orthonormal_signatures(spec.classes, spec.feature_dim, rng);

  const std::size_t n = spec.grid;
  const std::size_t d = spec.feature_dim;
  ds.scenes.reserve(spec.scenes);
  for (std::size_t s = 0; s < spec.scenes; ++s) {
    SyntheticScene scene;
    char id[32];
    std::snprintf(id, sizeof id, "s%05zu", s);
    scene.image_id = id;
    scene.split = s + spec.heldout >= spec.scenes ? "heldout" : "train";

    const std::size_t count =
        spec.min_objects + rng.index(spec.max_objects - spec.min_objects + 1);
    std::vector<std::size_t> classes(spec.classes);
    for (std::size_t c = 0; c < classes.size(); ++c) classes[c] = c;
    rng.shuffle(classes.begin(), classes.end());
    classes.resize(count);
    const auto blocks = place_objects(spec, count, rng);

    scene.fmap = Grid3D(n, n, d);
    for (double& v : scene.fmap.data()) v = spec.noise * rng.normal();
    std::vector<std::string> names;
    for (std::size_t o = 0; o < count; ++o) {
      const CellRect& b = blocks[o];
      const auto& sig = ds.signatures[classes[o]];
      for (std::size_t r = b.r0; r < b.r1; ++r) {
        for (std::size_t c = b.c0; c < b.c1; ++c) {
          auto cell = scene.fmap.cell(r * n + c);
          for (std::size_t k = 0; k < d; ++k) cell[k] += sig[k];
        }
      }
      scene.boxes.push_back(make_box(cell_boundary(b.c0, n), cell_boundary(b.r0, n),
                                     cell_boundary(b.c1, n), cell_boundary(b.r1, n), 1.0,
                                     static_cast<int>(classes[o])));
      names.push_back(ds.class_words[classes[o]]);
    }
    scene.caption = make_caption_text(names, ds.distractor_words, rng);
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

void write_dataset(const SyntheticDataset& dataset, const std::filesystem::path& dir) {
  std::vector<std::string> texts;
  std::vector<CaptionRecord> captions;
  std::vector<BoxRecord> gt;
  for (const auto& s : dataset.scenes) {
    texts.push_back(s.caption);
    captions.push_back({s.image_id, s.split, s.caption});
    gt.push_back({s.image_id, s.split, s.boxes});
    write_fmap(dir / "fmaps" / (s.image_id + ".fmap"), s.fmap);
  }
  write_vocab(dir / "vocab.tsv", Vocabulary::from_texts(texts));
  write_captions(dir / "captions.jsonl", captions);
  write_boxes(dir / "gt.jsonl", gt, dataset.class_words);
  write_lines(dir / "classes.txt", dataset.class_words);
  write_json(dir / "spec.json", dataset.spec.to_json());
}

namespace {

bool touches_border(const Box& b) {
  return b.xmin <= 0.0 || b.ymin <= 0.0 || b.xmax >= 1.0 || b.ymax >= 1.0;
}

// Pixel region the distractor fades through, beyond its leaking edge.
PixelRect leak_region(const PixelRect& d, Edge edge, int length, int rows, int cols) {
  switch (edge) {
    case Edge::Left:
      return {d.row0, std::max(0, d.col0 - length), d.row1, d.col0};
    case Edge::Right:
      return {d.row0, d.col1, d.row1, std::min(cols, d.col1 + length)};
    case Edge::Top:
      return {std::max(0, d.row0 - length), d.col0, d.row0, d.col1};
    case Edge::Bottom:
      return {d.row1, d.col0, std::min(rows, d.row1 + length), d.col1};
  }
  return d;
}

bool overlaps(const PixelRect& a, const PixelRect& b, int gap) {
  return a.row0 < b.row1 + gap && b.row0 < a.row1 + gap && a.col0 < b.col1 + gap &&
         b.col0 < a.col1 + gap;
}

}  // namespace

LeakScene make_leak_scene(const LeakSceneSpec& spec, std::span<const Box> proposals, Rng& rng) {
  std::vector<Box> inner;
  for (const Box& b : proposals) {
    if (!touches_border(b)) inner.push_back(b);
  }
  if (inner.size() < 2) throw SpecError("leak scene needs proposals off the image border");
  const int rows = static_cast<int>(spec.raster);
  const int cols = static_cast<int>(spec.raster);
  const int gap = static_cast<int>(spec.kernel);

  for (int attempt = 0; attempt < 1000; ++attempt) {
    LeakScene scene;
    scene.object = inner[rng.index(inner.size())];
    scene.distractor = inner[rng.index(inner.size())];
    scene.leak_edge = kEdges[rng.index(kEdges.size())];
    const PixelRect o = to_pixel_rect(scene.object, spec.raster, spec.raster);
    const PixelRect d = to_pixel_rect(scene.distractor, spec.raster, spec.raster);
    const bool vertical = scene.leak_edge == Edge::Left || scene.leak_edge == Edge::Right;
    const int length = std::max(
        2, static_cast<int>(std::lround(spec.leak_length * (vertical ? d.width() : d.height()))));
    const PixelRect leak = leak_region(d, scene.leak_edge, length, rows, cols);
    if (overlaps(o, d, gap) || (leak.area() > 0 && overlaps(o, leak, gap))) continue;

    const double level = spec.min_ratio + (spec.max_ratio - spec.min_ratio) * rng.uniform();
    Grid2D cam(spec.raster, spec.raster, 0.0);
    for (int r = o.row0; r < o.row1; ++r) {
      for (int c = o.col0; c < o.col1; ++c) cam(r, c) = 1.0;
    }
    for (int r = d.row0; r < d.row1; ++r) {
      for (int c = d.col0; c < d.col1; ++c) cam(r, c) = level;
    }
    // Linear fade from the distractor level down to zero over `length` pixels.
    for (int r = leak.row0; r < leak.row1; ++r) {
      for (int c = leak.col0; c < leak.col1; ++c) {
        int dist = 0;
        switch (scene.leak_edge) {
          case Edge::Left: dist = d.col0 - c; break;
          case Edge::Right: dist = c - d.col1 + 1; break;
          case Edge::Top: dist = d.row0 - r; break;
          case Edge::Bottom: dist = r - d.row1 + 1; break;
        }
        cam(r, c) = level * (1.0 - static_cast<double>(dist) / (length + 1));
      }
    }
    for (double& v : cam.data()) v += spec.noise * rng.normal();
    scene.cam = gaussian_smooth(cam, spec.kernel);
    return scene;
  }
  throw SpecError("no valid leak-scene placement found");
}

}  // namespace capg
