#include "certainnet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "certainnet/errors.hpp"
#include "certainnet/log.hpp"
#include "certainnet/metrics_iou.hpp"
#include "certainnet/rng.hpp"

namespace certainnet {

namespace fs = std::filesystem;
using nlohmann::json;

Shape shape_from_name(const std::string& name) {
  if (name == "rectangle") return Shape::Rectangle;
  if (name == "ellipse") return Shape::Ellipse;
  if (name == "triangle") return Shape::Triangle;
  if (name == "cross") return Shape::Cross;
  throw DataError("unknown shape template '" + name + "'");
}

std::string shape_name(Shape s) {
  switch (s) {
    case Shape::Rectangle: return "rectangle";
    case Shape::Ellipse: return "ellipse";
    case Shape::Triangle: return "triangle";
    case Shape::Cross: return "cross";
  }
  return "?";
}

void SceneConfig::validate() const {
  if (width < 8 || height < 8)
    throw DataError("scene config: width/height must be at least 8");
  if (objects_min < 0 || objects_max < objects_min)
    throw DataError("scene config: bad object count range");
  if (size_min <= 0 || size_max < size_min)
    throw DataError("scene config: bad size range");
  if (aspect_min <= 0 || aspect_max < aspect_min)
    throw DataError("scene config: bad aspect range");
  if (class_weights.empty() || class_weights.size() != class_shapes.size())
    throw DataError("scene config: class_weights and class_shapes must align");
  for (double w : class_weights)
    if (w < 0) throw DataError("scene config: class weights must be non-negative");
  if (background < 0 || background > 1 || background_noise < 0)
    throw DataError("scene config: bad background parameters");
}

SceneConfig SceneConfig::from_keyvalues(const KeyValues& kv) {
  kv.require_known({"width", "height", "scenes", "objects_min", "objects_max",
                    "size_min", "size_max", "aspect_min", "aspect_max",
                    "intensity_min", "intensity_max", "background",
                    "background_noise", "class_weights", "class_shapes", "seed",
                    "shift.noise_sigma", "shift.intensity_shift",
                    "shift.size_factor", "shift.unseen_rate"});
  SceneConfig cfg;
  cfg.width = kv.get_int_or("width", cfg.width);
  cfg.height = kv.get_int_or("height", cfg.height);
  cfg.objects_min = kv.get_int_or("objects_min", cfg.objects_min);
  cfg.objects_max = kv.get_int_or("objects_max", cfg.objects_max);
  cfg.size_min = kv.get_double_or("size_min", cfg.size_min);
  cfg.size_max = kv.get_double_or("size_max", cfg.size_max);
  cfg.aspect_min = kv.get_double_or("aspect_min", cfg.aspect_min);
  cfg.aspect_max = kv.get_double_or("aspect_max", cfg.aspect_max);
  cfg.intensity_min = kv.get_double_or("intensity_min", cfg.intensity_min);
  cfg.intensity_max = kv.get_double_or("intensity_max", cfg.intensity_max);
  cfg.background = kv.get_double_or("background", cfg.background);
  cfg.background_noise = kv.get_double_or("background_noise", cfg.background_noise);
  cfg.class_weights = kv.get_double_list_or("class_weights", cfg.class_weights);
  if (kv.has("class_shapes")) {
    cfg.class_shapes.clear();
    std::string raw = kv.get_string("class_shapes");
    size_t pos = 0;
    while (pos != std::string::npos) {
      size_t comma = raw.find(',', pos);
      std::string tok = raw.substr(pos, comma == std::string::npos ? comma : comma - pos);
      tok.erase(0, tok.find_first_not_of(" \t"));
      tok.erase(tok.find_last_not_of(" \t") + 1);
      if (!tok.empty()) cfg.class_shapes.push_back(shape_from_name(tok));
      pos = comma == std::string::npos ? comma : comma + 1;
    }
  }
  cfg.seed = kv.get_u64_or("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

void ShiftConfig::validate() const {
  if (noise_sigma < 0) throw DataError("shift config: noise_sigma must be >= 0");
  if (size_factor <= 0) throw DataError("shift config: size_factor must be > 0");
  if (unseen_rate < 0 || unseen_rate > 1)
    throw DataError("shift config: unseen_rate must be in [0,1]");
}

std::optional<ShiftConfig> ShiftConfig::from_keyvalues(const KeyValues& kv) {
  if (!kv.has("shift.noise_sigma") && !kv.has("shift.intensity_shift") &&
      !kv.has("shift.size_factor") && !kv.has("shift.unseen_rate"))
    return std::nullopt;
  ShiftConfig s;
  s.noise_sigma = kv.get_double_or("shift.noise_sigma", 0.0);
  s.intensity_shift = kv.get_double_or("shift.intensity_shift", 0.0);
  s.size_factor = kv.get_double_or("shift.size_factor", 1.0);
  s.unseen_rate = kv.get_double_or("shift.unseen_rate", 0.0);
  s.validate();
  return s;
}

namespace {

bool inside_shape(const SceneObject& obj, double px, double py) {
  const double dx = px - obj.box.cx();
  const double dy = py - obj.box.cy();
  const double hw = 0.5 * obj.box.w;
  const double hh = 0.5 * obj.box.h;
  switch (obj.shape) {
    case Shape::Rectangle:
      return std::abs(dx) <= hw && std::abs(dy) <= hh;
    case Shape::Ellipse: {
      const double nx = dx / hw, ny = dy / hh;
      return nx * nx + ny * ny <= 1.0;
    }
    case Shape::Triangle: {
      // Isoceles, apex at the top edge center, base along the bottom edge.
      const double down = py - obj.box.y;
      if (down < 0.0 || down > obj.box.h) return false;
      return std::abs(dx) <= hw * (down / obj.box.h);
    }
    case Shape::Cross:
      return std::abs(dx) <= hw && std::abs(dy) <= hh &&
             (std::abs(dx) <= obj.box.w / 6.0 || std::abs(dy) <= obj.box.h / 6.0);
  }
  return false;
}

Eigen::MatrixXf render(int width, int height, double background,
                       double background_noise, uint64_t noise_key,
                       const std::vector<SceneObject>& objects) {
  Eigen::MatrixXd img = Eigen::MatrixXd::Constant(height, width, background);
  for (const SceneObject& obj : objects) {
    const int x0 = std::max(0, static_cast<int>(std::floor(obj.box.x)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(obj.box.x2())));
    const int y0 = std::max(0, static_cast<int>(std::floor(obj.box.y)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(obj.box.y2())));
    for (int py = y0; py <= y1; ++py)
      for (int px = x0; px <= x1; ++px)
        if (inside_shape(obj, px + 0.5, py + 0.5)) img(py, px) = obj.intensity;
  }
  Rng noise(noise_key);
  for (int py = 0; py < height; ++py)
    for (int px = 0; px < width; ++px) {
      const double v = img(py, px) + background_noise * noise.normal();
      img(py, px) = std::clamp(v, 0.0, 1.0);
    }
  return img.cast<float>();
}

}  // namespace

Scene generate_scene(const SceneConfig& cfg, int index) {
  cfg.validate();
  Rng rng(cfg.seed, static_cast<uint64_t>(index) * 2);

  Scene scene;
  scene.id = index;
  scene.background = cfg.background;
  scene.background_noise = cfg.background_noise;
  scene.noise_key = Rng(cfg.seed, static_cast<uint64_t>(index) * 2 + 1).next_u64();

  const int wanted = rng.uniform_int(cfg.objects_min, cfg.objects_max);
  for (int i = 0; i < wanted; ++i) {
    SceneObject obj;
    obj.class_id = rng.categorical(cfg.class_weights);
    obj.shape = cfg.class_shapes[obj.class_id];
    const double w = rng.uniform(cfg.size_min, cfg.size_max);
    const double h =
        std::clamp(w * rng.uniform(cfg.aspect_min, cfg.aspect_max), cfg.size_min,
                   cfg.size_max);
    obj.intensity = rng.uniform(cfg.intensity_min, cfg.intensity_max);

    const double margin = 1.0;
    const double cx_lo = 0.5 * w + margin, cx_hi = cfg.width - 0.5 * w - margin;
    const double cy_lo = 0.5 * h + margin, cy_hi = cfg.height - 0.5 * h - margin;
    if (cx_lo >= cx_hi || cy_lo >= cy_hi) {
      log::debug("scene " + std::to_string(index) + ": object too large for image, dropped");
      continue;
    }

    bool placed = false;
    for (int attempt = 0; attempt < 30 && !placed; ++attempt) {
      obj.box = Box::from_center(rng.uniform(cx_lo, cx_hi), rng.uniform(cy_lo, cy_hi), w, h);
      placed = true;
      for (const SceneObject& other : scene.objects)
        if (iou(obj.box, other.box) > 0.3) {
          placed = false;
          break;
        }
    }
    if (placed)
      scene.objects.push_back(obj);
    else
      log::debug("scene " + std::to_string(index) +
                 ": placement retries exhausted, object dropped");
  }

  scene.image = render(cfg.width, cfg.height, scene.background, scene.background_noise,
                       scene.noise_key, scene.objects);
  return scene;
}

Scene apply_shift(const Scene& scene, const ShiftConfig& shift, uint64_t seed) {
  shift.validate();
  if (shift.is_identity()) return scene;

  Scene out = scene;
  const bool redraw = shift.size_factor != 1.0 || shift.unseen_rate > 0.0;
  if (redraw && !scene.renderable)
    throw std::logic_error("apply_shift: scene lacks render context for size/unseen shift");

  Rng obj_rng(seed, static_cast<uint64_t>(scene.id) * 2);
  if (redraw) {
    for (SceneObject& obj : out.objects) {
      obj.box = Box::from_center(obj.box.cx(), obj.box.cy(), obj.box.w * shift.size_factor,
                                 obj.box.h * shift.size_factor);
      // The drawn template changes; the class label does not.
      if (shift.unseen_rate > 0.0 && obj_rng.uniform() < shift.unseen_rate)
        obj.shape = Shape::Cross;
    }
    const int height = static_cast<int>(scene.image.rows());
    const int width = static_cast<int>(scene.image.cols());
    out.image = render(width, height, out.background, out.background_noise,
                       out.noise_key, out.objects);
  }

  if (shift.noise_sigma > 0.0 || shift.intensity_shift != 0.0) {
    Rng noise(seed, static_cast<uint64_t>(scene.id) * 2 + 1);
    for (Eigen::Index r = 0; r < out.image.rows(); ++r)
      for (Eigen::Index c = 0; c < out.image.cols(); ++c) {
        const double v = static_cast<double>(out.image(r, c)) + shift.intensity_shift +
                         shift.noise_sigma * noise.normal();
        out.image(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  }
  return out;
}

Dataset generate_dataset(const SceneConfig& cfg, int count, const ShiftConfig* shift,
                         uint64_t shift_seed) {
  cfg.validate();
  if (count < 0) throw std::invalid_argument("generate_dataset: negative count");
  Dataset data;
  data.width = cfg.width;
  data.height = cfg.height;
  data.classes = cfg.classes();
  data.scenes.reserve(count);
  for (int i = 0; i < count; ++i) {
    Scene s = generate_scene(cfg, i);
    if (shift && !shift->is_identity()) s = apply_shift(s, *shift, shift_seed);
    data.scenes.push_back(std::move(s));
  }
  return data;
}

// ---------------------------------------------------------------------------
// On-disk dataset

namespace {

constexpr char kGridMagic[8] = {'C', 'N', 'G', 'R', 'I', 'D', '0', '1'};
constexpr int kDatasetVersion = 1;

std::string grid_filename(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06d.bin", id);
  return buf;
}

void write_grid(const std::string& path, const Eigen::MatrixXf& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write grid file: " + path);
  out.write(kGridMagic, sizeof(kGridMagic));
  const uint32_t rows = static_cast<uint32_t>(img.rows());
  const uint32_t cols = static_cast<uint32_t>(img.cols());
  out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
  out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t c = 0; c < cols; ++c) {
      const float v = img(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  if (!out) throw DataError("grid write failed: " + path);
}

Eigen::MatrixXf read_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open grid file: " + path);
  char magic[sizeof(kGridMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kGridMagic, sizeof(magic)) != 0)
    throw DataError(path + ": not a CNGRID01 grid file (schema v1)");
  uint32_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
  in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
  if (!in || rows == 0 || cols == 0 || rows > 65536 || cols > 65536)
    throw DataError(path + ": corrupt grid header");
  Eigen::MatrixXf img(rows, cols);
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t c = 0; c < cols; ++c) {
      float v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      if (!in) {
        const long long offset =
            static_cast<long long>(sizeof(kGridMagic) + 8 +
                                   (static_cast<long long>(r) * cols + c) * 4);
        throw DataError(path + ": truncated at offset " + std::to_string(offset) +
                        " (expected " + std::to_string(rows * cols) +
                        " float32 values)");
      }
      img(r, c) = v;
    }
  return img;
}

}  // namespace

void save_dataset(const Dataset& data, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "grids");

  std::string manifest;
  manifest += "format = certainnet-dataset\n";
  manifest += "version = " + std::to_string(kDatasetVersion) + "\n";
  manifest += "scenes = " + std::to_string(data.scenes.size()) + "\n";
  manifest += "width = " + std::to_string(data.width) + "\n";
  manifest += "height = " + std::to_string(data.height) + "\n";
  manifest += "classes = " + std::to_string(data.classes) + "\n";
  write_text_file((fs::path(dir) / "manifest.txt").string(), manifest);

  std::ofstream ann((fs::path(dir) / "annotations.jsonl").string(),
                    std::ios::binary | std::ios::trunc);
  if (!ann) throw DataError("cannot write annotations.jsonl in " + dir);
  for (const Scene& s : data.scenes) {
    write_grid((fs::path(dir) / "grids" / grid_filename(s.id)).string(), s.image);
    for (const SceneObject& obj : s.objects) {
      json rec;
      rec["image_id"] = s.id;
      rec["class"] = obj.class_id;
      rec["box"] = {obj.box.x, obj.box.y, obj.box.w, obj.box.h};
      ann << rec.dump() << "\n";
    }
  }
  if (!ann) throw DataError("annotation write failed in " + dir);
}

Dataset load_dataset(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  KeyValues manifest = KeyValues::parse_file(manifest_path);
  if (manifest.get_string_or("format", "") != "certainnet-dataset")
    throw DataError(manifest_path + ": not a certainnet-dataset manifest");
  const int version = manifest.get_int("version");
  if (version != kDatasetVersion)
    throw DataError(manifest_path + ": unsupported dataset version " +
                    std::to_string(version) + ", expected " +
                    std::to_string(kDatasetVersion));

  Dataset data;
  data.width = manifest.get_int("width");
  data.height = manifest.get_int("height");
  data.classes = manifest.get_int("classes");
  const int count = manifest.get_int("scenes");

  data.scenes.resize(count);
  for (int i = 0; i < count; ++i) {
    Scene& s = data.scenes[i];
    s.id = i;
    s.renderable = false;
    s.image = read_grid((fs::path(dir) / "grids" / grid_filename(i)).string());
    if (s.image.rows() != data.height || s.image.cols() != data.width)
      throw DataError(dir + ": scene " + std::to_string(i) +
                      " grid size disagrees with manifest");
  }

  const std::string ann_path = (fs::path(dir) / "annotations.jsonl").string();
  std::ifstream ann(ann_path, std::ios::binary);
  if (!ann) throw DataError("cannot open " + ann_path);
  std::string line;
  int record = 0;
  while (std::getline(ann, line)) {
    ++record;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(ann_path + " record " + std::to_string(record) +
                      ": bad JSON (schema v1): " + e.what());
    }
    try {
      SceneObject obj;
      const int image_id = rec.at("image_id").get<int>();
      obj.class_id = rec.at("class").get<int>();
      const auto& b = rec.at("box");
      obj.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                    b.at(3).get<double>()};
      if (image_id < 0 || image_id >= count)
        throw DataError(ann_path + " record " + std::to_string(record) +
                        ": image_id " + std::to_string(image_id) +
                        " out of range [0, " + std::to_string(count) + ")");
      if (obj.class_id < 0 || obj.class_id >= data.classes)
        throw DataError(ann_path + " record " + std::to_string(record) +
                        ": class " + std::to_string(obj.class_id) + " out of range");
      obj.shape = static_cast<Shape>(obj.class_id % 3);
      data.scenes[image_id].objects.push_back(obj);
    } catch (const json::exception& e) {
      throw DataError(ann_path + " record " + std::to_string(record) +
                      ": missing or malformed field (schema v1): " + e.what());
    }
  }
  return data;
}

}  // namespace certainnet
