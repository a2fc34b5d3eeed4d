#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "certainnet/config.hpp"
#include "certainnet/grid.hpp"

namespace certainnet {

// Shape templates. The first three are the in-distribution classes; Cross is
// never generated in-distribution and stands in for unseen objects under
// domain shift.
enum class Shape : int { Rectangle = 0, Ellipse = 1, Triangle = 2, Cross = 3 };

Shape shape_from_name(const std::string& name);
std::string shape_name(Shape s);

struct SceneObject {
  int class_id = 0;
  Shape shape = Shape::Rectangle;
  Box box;  // exact annotation, input pixels
  double intensity = 1.0;
};

struct Scene {
  int id = 0;
  Eigen::MatrixXf image;  // (height, width), values in [0,1]
  std::vector<SceneObject> objects;

  // Render context, kept so domain shift can redraw the scene. Scenes loaded
  // from disk lose it and cannot be re-rendered.
  double background = 0.15;
  double background_noise = 0.03;
  uint64_t noise_key = 0;
  bool renderable = true;
};

struct SceneConfig {
  int width = 128;
  int height = 128;
  int objects_min = 1;
  int objects_max = 4;
  double size_min = 12.0;
  double size_max = 26.0;
  double aspect_min = 0.75;
  double aspect_max = 4.0 / 3.0;
  double intensity_min = 0.55;
  double intensity_max = 0.95;
  double background = 0.15;
  double background_noise = 0.03;
  std::vector<double> class_weights = {0.7, 0.2, 0.1};
  std::vector<Shape> class_shapes = {Shape::Rectangle, Shape::Ellipse, Shape::Triangle};
  uint64_t seed = 0;

  int classes() const { return static_cast<int>(class_weights.size()); }
  static SceneConfig from_keyvalues(const KeyValues& kv);
  void validate() const;
};

// Domain shift applied on top of a generated scene: additive pixel noise, a
// global intensity offset, a size-distribution scale, and a rate at which
// rendered shapes are swapped for the unseen template (annotations keep the
// original class and the exactly scaled box).
struct ShiftConfig {
  double noise_sigma = 0.0;
  double intensity_shift = 0.0;
  double size_factor = 1.0;
  double unseen_rate = 0.0;

  bool is_identity() const {
    return noise_sigma == 0.0 && intensity_shift == 0.0 && size_factor == 1.0 &&
           unseen_rate == 0.0;
  }
  // Reads "shift.*" keys; nullopt when none are present.
  static std::optional<ShiftConfig> from_keyvalues(const KeyValues& kv);
  void validate() const;
};

// Deterministic in (config.seed, index): regenerating any scene alone yields
// the same bytes as generating the full dataset.
Scene generate_scene(const SceneConfig& cfg, int index);

Scene apply_shift(const Scene& scene, const ShiftConfig& shift, uint64_t seed);

struct Dataset {
  int width = 0;
  int height = 0;
  int classes = 0;
  std::vector<Scene> scenes;
};

Dataset generate_dataset(const SceneConfig& cfg, int count,
                         const ShiftConfig* shift = nullptr, uint64_t shift_seed = 1);

// Directory layout: manifest.txt + annotations.jsonl + grids/scene_NNNNNN.bin.
void save_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace certainnet
