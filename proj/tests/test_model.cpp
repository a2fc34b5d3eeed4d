#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "certainnet/errors.hpp"
#include "certainnet/model.hpp"
#include "certainnet/rng.hpp"
#include "doctest.h"

using namespace certainnet;

namespace {

ScalarGrid random_image(int rows, int cols, Rng& rng) {
  ScalarGrid img(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) img(r, c) = rng.uniform();
  return img;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("rbf score matches hand value") {
  Eigen::VectorXd z(4), e(4);
  z << 0.5, 0.0, 0.0, 0.0;
  e.setZero();
  // |z-e|^2 = 0.25, denominator 2*4*0.25^2 = 0.5, so exp(-0.5).
  CHECK(rbf_score(z, e, 0.25) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(rbf_score(e, e, 0.25) == 1.0);
}

TEST_CASE("rbf score rejects bad arguments") {
  Eigen::VectorXd z(3), e(3), e2(2);
  z.setZero();
  e.setZero();
  e2.setZero();
  CHECK_THROWS_AS(rbf_score(z, e, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(rbf_score(z, e, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(rbf_score(z, e2, 0.25), std::invalid_argument);
}

TEST_CASE("objectness uncertainty is one minus score") {
  CHECK(objectness_uncertainty(1.0) == 0.0);
  CHECK(objectness_uncertainty(0.25) == doctest::Approx(0.75));
}

TEST_CASE("ablation presets switch features on cumulatively") {
  const TrainFlags a0 = TrainFlags::ablation(0);
  CHECK_FALSE(a0.reg_loss);
  CHECK_FALSE(a0.balanced_update);
  CHECK_FALSE(a0.outlier_protection);
  CHECK_FALSE(a0.momentum_schedule);
  CHECK_FALSE(a0.sigma_annealing);
  CHECK_FALSE(a0.freeze_final);

  const TrainFlags a3 = TrainFlags::ablation(3);
  CHECK(a3.reg_loss);
  CHECK(a3.balanced_update);
  CHECK(a3.outlier_protection);
  CHECK_FALSE(a3.momentum_schedule);
  CHECK_FALSE(a3.sigma_annealing);
  CHECK_FALSE(a3.freeze_final);

  const TrainFlags a6 = TrainFlags::ablation(6);
  CHECK(a6.reg_loss);
  CHECK(a6.balanced_update);
  CHECK(a6.outlier_protection);
  CHECK(a6.momentum_schedule);
  CHECK(a6.sigma_annealing);
  CHECK(a6.freeze_final);

  CHECK_THROWS_AS(TrainFlags::ablation(-1), std::invalid_argument);
  CHECK_THROWS_AS(TrainFlags::ablation(7), std::invalid_argument);
}

TEST_CASE("model construction produces the requested shapes") {
  ModelConfig cfg;
  cfg.channels = {4, 8};
  cfg.strides = {2, 1};
  cfg.hyperspace_dim = 6;
  cfg.classes = 2;
  Rng rng(9);
  const Model m = Model::make(cfg, rng);

  CHECK(m.classes() == 2);
  CHECK(m.hyperspace_dim() == 6);
  CHECK(m.stride() == 2);
  CHECK(m.features.feature_dim() == 8);
  REQUIRE(m.projector.weights.size() == 2);
  CHECK(m.projector.weights[0].rows() == 6);
  CHECK(m.projector.weights[0].cols() == 8);
  CHECK(m.dims_head.weight.rows() == 2);
  CHECK(m.dims_head.weight.cols() == 8);
  CHECK(m.centroids.centroids.rows() == 6);
  CHECK(m.centroids.centroids.cols() == 2);
  CHECK(m.initialized());
}

TEST_CASE("model construction is seed deterministic") {
  ModelConfig cfg;
  cfg.channels = {4, 8};
  cfg.strides = {2, 2};
  Rng r1(42), r2(42), r3(43);
  const Model a = Model::make(cfg, r1);
  const Model b = Model::make(cfg, r2);
  const Model c = Model::make(cfg, r3);
  CHECK(a.features.stages[0].weight == b.features.stages[0].weight);
  CHECK(a.projector.weights[0] == b.projector.weights[0]);
  CHECK(a.centroids.centroids == b.centroids.centroids);
  CHECK(a.features.stages[0].weight != c.features.stages[0].weight);
}

TEST_CASE("forward produces a valid lattice of scores and sizes") {
  ModelConfig cfg;
  cfg.channels = {4, 8, 8};
  cfg.strides = {2, 2, 1};
  cfg.classes = 3;
  Rng rng(11);
  const Model m = Model::make(cfg, rng);

  Rng img_rng(3);
  const ScalarGrid img = random_image(16, 16, img_rng);
  const HeadOutputs out = forward(m, img);

  // 16 -> 8 -> 4 -> 4 under strides 2,2,1.
  CHECK(out.rows == 4);
  CHECK(out.cols == 4);
  CHECK(out.stride == 4);
  REQUIRE(out.class_heatmaps.size() == 3);
  REQUIRE(out.embedding_maps.size() == 3);
  CHECK(out.dims_map.channels() == 2);

  for (const auto& h : out.class_heatmaps) {
    CHECK(h.rows() == 4);
    CHECK(h.minCoeff() > 0.0);
    CHECK(h.maxCoeff() <= 1.0);
  }
  CHECK(out.dims_map.data.minCoeff() > 0.0);
}

TEST_CASE("heatmap scores agree with rbf_score on the embeddings") {
  ModelConfig cfg;
  cfg.channels = {4, 8};
  cfg.strides = {2, 2};
  cfg.classes = 2;
  cfg.hyperspace_dim = 5;
  Rng rng(21);
  const Model m = Model::make(cfg, rng);
  Rng img_rng(4);
  const ScalarGrid img = random_image(12, 12, img_rng);
  const HeadOutputs out = forward(m, img);

  for (int cls = 0; cls < 2; ++cls) {
    for (int r = 0; r < out.rows; ++r) {
      for (int c = 0; c < out.cols; ++c) {
        const Eigen::VectorXd z = out.embedding_maps[cls].cell(r, c);
        const double expected =
            rbf_score(z, m.centroids.centroids.col(cls), m.centroids.length_scale);
        CHECK(out.class_heatmaps[cls](r, c) == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("checkpoint round trip preserves the model exactly") {
  ModelConfig cfg;
  cfg.channels = {4, 8};
  cfg.strides = {2, 1};
  cfg.classes = 2;
  Rng rng(33);
  Model m = Model::make(cfg, rng);
  m.centroids.length_scale = 0.123;
  m.centroids.momentum = 0.997;
  m.flags = TrainFlags::ablation(4);

  const std::string path = temp_path("certainnet_ckpt_roundtrip.bin");
  save_checkpoint(m, path);
  const Model l = load_checkpoint(path);

  REQUIRE(l.features.stages.size() == m.features.stages.size());
  for (size_t i = 0; i < m.features.stages.size(); ++i) {
    CHECK(l.features.stages[i].weight == m.features.stages[i].weight);
    CHECK(l.features.stages[i].bias == m.features.stages[i].bias);
    CHECK(l.features.stages[i].stride == m.features.stages[i].stride);
  }
  for (int c = 0; c < m.classes(); ++c)
    CHECK(l.projector.weights[c] == m.projector.weights[c]);
  CHECK(l.dims_head.weight == m.dims_head.weight);
  CHECK(l.dims_head.bias == m.dims_head.bias);
  CHECK(l.centroids.centroids == m.centroids.centroids);
  CHECK(l.centroids.length_scale == m.centroids.length_scale);
  CHECK(l.centroids.momentum == m.centroids.momentum);
  CHECK(l.flags.outlier_protection == m.flags.outlier_protection);
  CHECK(l.flags.momentum_schedule == m.flags.momentum_schedule);
  CHECK(l.flags.freeze_final == m.flags.freeze_final);

  // Same bytes in, same outputs out.
  Rng img_rng(5);
  const ScalarGrid img = random_image(10, 10, img_rng);
  const HeadOutputs a = forward(m, img);
  const HeadOutputs b = forward(l, img);
  for (int cls = 0; cls < 2; ++cls) CHECK(a.class_heatmaps[cls] == b.class_heatmaps[cls]);
  CHECK(a.dims_map.data == b.dims_map.data);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loading rejects foreign and truncated files") {
  const std::string bad = temp_path("certainnet_ckpt_bad.bin");
  {
    std::ofstream out(bad, std::ios::binary);
    out << "definitely not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(bad), DataError);
  std::remove(bad.c_str());

  ModelConfig cfg;
  cfg.channels = {4};
  cfg.strides = {2};
  Rng rng(1);
  const Model m = Model::make(cfg, rng);
  const std::string full = temp_path("certainnet_ckpt_full.bin");
  save_checkpoint(m, full);

  std::ifstream in(full, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();
  const std::string cut = temp_path("certainnet_ckpt_cut.bin");
  {
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 40));
  }
  CHECK_THROWS_AS(load_checkpoint(cut), DataError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("certainnet_ckpt_missing.bin")), UsageError);
  std::remove(full.c_str());
  std::remove(cut.c_str());
}

TEST_CASE("rng streams are stable and distributions sane") {
  Rng a(7), b(7), c(7, 1);
  CHECK(a.next_u64() == b.next_u64());
  CHECK(a.next_u64() == b.next_u64());
  Rng d(7);
  CHECK(d.next_u64() != c.next_u64());

  Rng u(123);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double v = u.uniform();
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  CHECK(sum / 10000 == doctest::Approx(0.5).epsilon(0.05));

  Rng n(456);
  double mean = 0.0, var = 0.0;
  const int kN = 20000;
  std::vector<double> xs(kN);
  for (int i = 0; i < kN; ++i) {
    xs[i] = n.normal();
    mean += xs[i];
  }
  mean /= kN;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= kN;
  CHECK(mean == doctest::Approx(0.0).epsilon(0.05));
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));

  Rng ui(789);
  int counts[5] = {0, 0, 0, 0, 0};
  for (int i = 0; i < 5000; ++i) {
    const int v = ui.uniform_int(1, 4);
    REQUIRE(v >= 1);
    REQUIRE(v <= 4);
    ++counts[v];
  }
  for (int v = 1; v <= 4; ++v) CHECK(counts[v] > 1000);

  Rng cat(31);
  int picked[3] = {0, 0, 0};
  for (int i = 0; i < 6000; ++i) ++picked[cat.categorical({0.7, 0.2, 0.1})];
  CHECK(picked[0] > picked[1]);
  CHECK(picked[1] > picked[2]);
}
