#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cdon/config.hpp"
#include "cdon/eval.hpp"
#include "cdon/image.hpp"

namespace cdon {

/// Integer pixel rectangle [x, x + w) x [y, y + h).
struct PixelRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  Box box() const;
  bool overlaps(const PixelRect& o) const;
};

/// Everything drawn into one scene, in paint order: distractors, pedestrians,
/// occluders.
struct SceneLayout {
  std::vector<PixelRect> distractors;
  std::vector<PixelRect> pedestrians;
  std::vector<PixelRect> occluders;
  std::vector<int> palettes;
};

struct Scene {
  Image8 image;
  ImageRecord record;
};

std::string scene_id(int index);

/// Random layout for scene `index`; nullopt when a pedestrian cannot be placed
/// within cfg.max_retries attempts.
std::optional<SceneLayout> sample_layout(const SceneConfig& cfg, int index);

/// Paints `layout` and annotates each pedestrian. Visibility is the fraction
/// of its pixels left uncovered by occluders; the visible box bounds them.
Scene render_scene(const SceneConfig& cfg, const SceneLayout& layout, int index);

/// Deterministic in (cfg, index). Prints a warning and returns nullopt for
/// skipped scenes.
std::optional<Scene> gen_scene(const SceneConfig& cfg, int index);

struct Sample {
  ImageRecord record;
  Tensor4 image;
};

/// Scenes first_index .. first_index + count - 1, generated in parallel.
std::vector<Sample> generate_dataset(const SceneConfig& cfg, int first_index, int count);

/// Writes images/<id>.ppm and annotations.jsonl under `dir`. Returns the
/// number of scenes written.
int write_dataset(const SceneConfig& cfg, const std::string& dir, int first_index, int count);
/// Reads a directory produced by write_dataset.
std::vector<Sample> load_dataset(const std::string& dir);

}  // namespace cdon
