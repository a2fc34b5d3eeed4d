#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "certainnet/errors.hpp"
#include "certainnet/metrics_iou.hpp"
#include "certainnet/synthdata.hpp"
#include "doctest.h"

using namespace certainnet;
namespace fs = std::filesystem;

namespace {

SceneConfig small_config(uint64_t seed) {
  SceneConfig cfg;
  cfg.width = 64;
  cfg.height = 64;
  cfg.seed = seed;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("scene generation is deterministic per (seed, index)") {
  const SceneConfig cfg = small_config(99);
  const Scene a = generate_scene(cfg, 7);
  const Scene b = generate_scene(cfg, 7);
  CHECK(a.image == b.image);
  REQUIRE(a.objects.size() == b.objects.size());
  for (size_t i = 0; i < a.objects.size(); ++i) {
    CHECK(a.objects[i].box.x == b.objects[i].box.x);
    CHECK(a.objects[i].class_id == b.objects[i].class_id);
    CHECK(a.objects[i].intensity == b.objects[i].intensity);
  }
  const Scene c = generate_scene(cfg, 8);
  CHECK(a.image != c.image);
}

TEST_CASE("scenes respect the configured ranges") {
  const SceneConfig cfg = small_config(5);
  for (int i = 0; i < 40; ++i) {
    const Scene s = generate_scene(cfg, i);
    CHECK(s.id == i);
    CHECK(s.image.rows() == 64);
    CHECK(s.image.cols() == 64);
    CHECK(s.image.minCoeff() >= 0.0f);
    CHECK(s.image.maxCoeff() <= 1.0f);
    CHECK(s.objects.size() >= 1);
    CHECK(s.objects.size() <= 4);
    for (const auto& o : s.objects) {
      CHECK(o.class_id >= 0);
      CHECK(o.class_id < 3);
      CHECK(o.box.w >= cfg.size_min);
      CHECK(o.box.w <= cfg.size_max);
      CHECK(o.box.h >= cfg.size_min);
      CHECK(o.box.h <= cfg.size_max);
      CHECK(o.box.x >= 0.0);
      CHECK(o.box.y >= 0.0);
      CHECK(o.box.x2() <= 64.0);
      CHECK(o.box.y2() <= 64.0);
      CHECK(o.intensity >= cfg.intensity_min);
      CHECK(o.intensity <= cfg.intensity_max);
      // In-distribution classes use the first three shape templates.
      CHECK(o.shape != Shape::Cross);
    }
    for (size_t a = 0; a < s.objects.size(); ++a)
      for (size_t b = a + 1; b < s.objects.size(); ++b)
        CHECK(iou(s.objects[a].box, s.objects[b].box) <= 0.3);
  }
}

TEST_CASE("objects are brighter than the background at their center") {
  const SceneConfig cfg = small_config(17);
  int checked = 0;
  for (int i = 0; i < 20; ++i) {
    const Scene s = generate_scene(cfg, i);
    for (const auto& o : s.objects) {
      const int cx = static_cast<int>(o.box.cx());
      const int cy = static_cast<int>(o.box.cy());
      // Every template covers its own box center.
      CHECK(s.image(cy, cx) > cfg.background + 0.1f);
      ++checked;
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("identity shift returns the scene unchanged") {
  const Scene s = generate_scene(small_config(3), 0);
  ShiftConfig shift;
  const Scene t = apply_shift(s, shift, 77);
  CHECK(s.image == t.image);
  CHECK(s.objects.size() == t.objects.size());
}

TEST_CASE("noise shift perturbs pixels but keeps annotations") {
  const Scene s = generate_scene(small_config(3), 1);
  ShiftConfig shift;
  shift.noise_sigma = 0.2;
  const Scene t = apply_shift(s, shift, 77);
  CHECK(s.image != t.image);
  CHECK(t.image.minCoeff() >= 0.0f);
  CHECK(t.image.maxCoeff() <= 1.0f);
  REQUIRE(s.objects.size() == t.objects.size());
  for (size_t i = 0; i < s.objects.size(); ++i) {
    CHECK(s.objects[i].box.x == t.objects[i].box.x);
    CHECK(s.objects[i].box.w == t.objects[i].box.w);
  }
}

TEST_CASE("size shift scales boxes exactly about their centers") {
  const Scene s = generate_scene(small_config(8), 2);
  ShiftConfig shift;
  shift.size_factor = 1.3;
  const Scene t = apply_shift(s, shift, 77);
  REQUIRE(s.objects.size() == t.objects.size());
  for (size_t i = 0; i < s.objects.size(); ++i) {
    const Box& a = s.objects[i].box;
    const Box& b = t.objects[i].box;
    CHECK(b.w == a.w * 1.3);
    CHECK(b.h == a.h * 1.3);
    CHECK(b.cx() == doctest::Approx(a.cx()).epsilon(1e-12));
    CHECK(b.cy() == doctest::Approx(a.cy()).epsilon(1e-12));
  }
}

TEST_CASE("unseen-shape shift swaps templates but not labels") {
  const Scene s = generate_scene(small_config(12), 4);
  ShiftConfig shift;
  shift.unseen_rate = 1.0;
  const Scene t = apply_shift(s, shift, 77);
  REQUIRE(s.objects.size() == t.objects.size());
  for (size_t i = 0; i < s.objects.size(); ++i) {
    CHECK(t.objects[i].shape == Shape::Cross);
    CHECK(t.objects[i].class_id == s.objects[i].class_id);
  }
  CHECK(s.image != t.image);
}

TEST_CASE("shifts on loaded scenes that need re-rendering are rejected") {
  Scene s = generate_scene(small_config(12), 4);
  s.renderable = false;
  ShiftConfig noise_only;
  noise_only.noise_sigma = 0.1;
  CHECK_NOTHROW(apply_shift(s, noise_only, 1));
  ShiftConfig resize;
  resize.size_factor = 1.5;
  CHECK_THROWS_AS(apply_shift(s, resize, 1), std::logic_error);
}

TEST_CASE("dataset save/load round trip") {
  const SceneConfig cfg = small_config(21);
  const Dataset data = generate_dataset(cfg, 6);
  REQUIRE(data.scenes.size() == 6);
  CHECK(data.classes == 3);

  TempDir dir("certainnet_test_dataset");
  save_dataset(data, dir.str());
  const Dataset back = load_dataset(dir.str());

  CHECK(back.width == data.width);
  CHECK(back.height == data.height);
  CHECK(back.classes == data.classes);
  REQUIRE(back.scenes.size() == data.scenes.size());
  for (size_t i = 0; i < data.scenes.size(); ++i) {
    const Scene& a = data.scenes[i];
    const Scene& b = back.scenes[i];
    CHECK(b.id == a.id);
    CHECK(b.image == a.image);
    CHECK_FALSE(b.renderable);
    REQUIRE(b.objects.size() == a.objects.size());
    for (size_t j = 0; j < a.objects.size(); ++j) {
      CHECK(b.objects[j].class_id == a.objects[j].class_id);
      CHECK(b.objects[j].box.x == a.objects[j].box.x);
      CHECK(b.objects[j].box.y == a.objects[j].box.y);
      CHECK(b.objects[j].box.w == a.objects[j].box.w);
      CHECK(b.objects[j].box.h == a.objects[j].box.h);
    }
  }
}

TEST_CASE("dataset loading rejects foreign versions and corrupt files") {
  const SceneConfig cfg = small_config(2);
  const Dataset data = generate_dataset(cfg, 2);
  TempDir dir("certainnet_test_dataset_bad");
  save_dataset(data, dir.str());

  SUBCASE("unsupported version") {
    std::string manifest;
    {
      std::ifstream in(dir.path / "manifest.txt");
      std::string line;
      while (std::getline(in, line)) {
        if (line.rfind("version", 0) == 0) line = "version = 2";
        manifest += line + "\n";
      }
    }
    std::ofstream(dir.path / "manifest.txt") << manifest;
    CHECK_THROWS_WITH_AS(load_dataset(dir.str()),
                         doctest::Contains("unsupported dataset version"), DataError);
  }

  SUBCASE("truncated grid file") {
    const fs::path grid = dir.path / "grids" / "scene_000001.bin";
    fs::resize_file(grid, fs::file_size(grid) - 17);
    CHECK_THROWS_AS(load_dataset(dir.str()), DataError);
  }

  SUBCASE("malformed annotation record") {
    std::ofstream out(dir.path / "annotations.jsonl", std::ios::app);
    out << "{not json\n";
    out.close();
    CHECK_THROWS_WITH_AS(load_dataset(dir.str()), doctest::Contains("record"),
                         DataError);
  }

  SUBCASE("class id out of range") {
    std::ofstream out(dir.path / "annotations.jsonl", std::ios::app);
    out << R"({"image_id":0,"class":9,"box":[1,1,5,5]})" << "\n";
    out.close();
    CHECK_THROWS_AS(load_dataset(dir.str()), DataError);
  }
}

TEST_CASE("generated datasets apply shift at build time") {
  const SceneConfig cfg = small_config(31);
  ShiftConfig shift;
  shift.noise_sigma = 0.15;
  shift.size_factor = 1.3;
  shift.unseen_rate = 0.5;
  const Dataset plain = generate_dataset(cfg, 5);
  const Dataset shifted = generate_dataset(cfg, 5, &shift, 123);
  REQUIRE(plain.scenes.size() == shifted.scenes.size());
  int crosses = 0;
  for (size_t i = 0; i < plain.scenes.size(); ++i) {
    CHECK(plain.scenes[i].image != shifted.scenes[i].image);
    for (size_t j = 0; j < plain.scenes[i].objects.size(); ++j) {
      CHECK(shifted.scenes[i].objects[j].box.w ==
            plain.scenes[i].objects[j].box.w * 1.3);
      crosses += shifted.scenes[i].objects[j].shape == Shape::Cross;
    }
  }
  CHECK(crosses > 0);
}

TEST_CASE("scene config parsing and validation") {
  const KeyValues kv = KeyValues::parse_text(
      "width = 32\nheight = 48\nscenes = 10\nseed = 4\nsize_min = 8\nsize_max = 12\n",
      "test.cfg");
  const SceneConfig cfg = SceneConfig::from_keyvalues(kv);
  CHECK(cfg.width == 32);
  CHECK(cfg.height == 48);
  CHECK(cfg.size_min == 8.0);
  CHECK(cfg.seed == 4);

  const KeyValues bad = KeyValues::parse_text("widht = 32\n", "typo.cfg");
  CHECK_THROWS_WITH_AS(SceneConfig::from_keyvalues(bad), doctest::Contains("widht"),
                       DataError);

  SceneConfig invalid = small_config(1);
  invalid.size_min = 40.0;
  invalid.size_max = 12.0;
  CHECK_THROWS_AS(invalid.validate(), DataError);
}

TEST_CASE("shift config parsing") {
  CHECK_FALSE(ShiftConfig::from_keyvalues(KeyValues::parse_text("", "x")).has_value());
  const KeyValues kv = KeyValues::parse_text(
      "shift.noise_sigma = 0.2\nshift.size_factor = 1.3\nshift.unseen_rate = 0.1\n",
      "x");
  const auto shift = ShiftConfig::from_keyvalues(kv);
  REQUIRE(shift.has_value());
  CHECK(shift->noise_sigma == 0.2);
  CHECK(shift->size_factor == 1.3);
  CHECK(shift->unseen_rate == 0.1);
  CHECK_FALSE(shift->is_identity());
}
