// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 1-3 and 6 exercise the library in-process; criteria 4-5
// and 7-8 drive the real command-line binary on a generated benchmark.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "certainnet/decode.hpp"
#include "certainnet/metrics.hpp"
#include "certainnet/model.hpp"
#include "certainnet/rng.hpp"
#include "certainnet/synthdata.hpp"
#include "certainnet/training.hpp"

using namespace certainnet;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// plumbing

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string g_sandbox;

const std::string& sandbox() {
  if (g_sandbox.empty()) {
    char tmpl[] = "/tmp/certainnet_acceptance_XXXXXX";
    const char* d = mkdtemp(tmpl);
    if (!d) throw std::runtime_error("cannot create sandbox directory");
    g_sandbox = d;
  }
  return g_sandbox;
}

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(CERTAINNET_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.good()) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool files_equal(const std::string& a, const std::string& b) {
  return slurp(a) == slurp(b);
}

// "key = value" lines from an evaluation report.
std::map<std::string, double> parse_report(const std::string& path) {
  std::map<std::string, double> out;
  std::istringstream in(slurp(path));
  std::string line;
  while (std::getline(in, line)) {
    const size_t eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    try {
      out[line.substr(0, eq)] = std::stod(line.substr(eq + 3));
    } catch (...) {
    }
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// criterion 1: analytic gradients against central finite differences

double rel_gap(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

double check_detection_fd(Rng& rng) {
  Eigen::MatrixXd s(3, 5), y(3, 5);
  for (int i = 0; i < s.size(); ++i) {
    s.data()[i] = 0.05 + 0.9 * rng.uniform();
    y.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.7 * rng.uniform();
  }
  Eigen::MatrixXd grad;
  detection_loss(s, y, 10.0, &grad);
  const double h = 1e-6;
  double worst = 0.0;
  for (int i = 0; i < s.size(); ++i) {
    Eigen::MatrixXd up = s, down = s;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double fd =
        (detection_loss(up, y, 10.0) - detection_loss(down, y, 10.0)) / (2.0 * h);
    worst = std::max(worst, rel_gap(grad.data()[i], fd));
  }
  return worst;
}

double check_regularization_fd(Rng& rng) {
  const int classes = 2, dim = 3, cells = 4;
  std::vector<Eigen::MatrixXd> emb(classes, Eigen::MatrixXd(dim, cells));
  Eigen::MatrixXd centroids(dim, classes), y(classes, cells);
  for (auto& e : emb)
    for (int i = 0; i < e.size(); ++i) e.data()[i] = 2.0 * rng.uniform() - 1.0;
  for (int i = 0; i < centroids.size(); ++i)
    centroids.data()[i] = 2.0 * rng.uniform() - 1.0;
  for (int i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform();

  std::vector<Eigen::MatrixXd> grads;
  regularization_loss(emb, centroids, y, 3.0, &grads);
  const double h = 1e-6;
  double worst = 0.0;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < emb[c].size(); ++i) {
      auto probe = emb;
      probe[c].data()[i] += h;
      const double up = regularization_loss(probe, centroids, y, 3.0);
      probe[c].data()[i] -= 2.0 * h;
      const double down = regularization_loss(probe, centroids, y, 3.0);
      worst = std::max(worst, rel_gap(grads[c].data()[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

double check_dims_fd(Rng& rng) {
  Eigen::MatrixXd pred(2, 5), target(2, 5);
  Eigen::ArrayXi mask(5);
  for (int j = 0; j < 5; ++j) {
    mask[j] = rng.uniform() < 0.6 ? 1 : 0;
    for (int k = 0; k < 2; ++k) {
      target(k, j) = 10.0 * rng.uniform();
      pred(k, j) = target(k, j) +
                   (rng.uniform() < 0.5 ? 1.0 : -1.0) * (0.5 + rng.uniform());
    }
  }
  mask[0] = 1;
  Eigen::MatrixXd grad;
  dims_loss(pred, target, mask, &grad);
  const double h = 1e-6;
  double worst = 0.0;
  for (int i = 0; i < pred.size(); ++i) {
    Eigen::MatrixXd up = pred, down = pred;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double fd =
        (dims_loss(up, target, mask) - dims_loss(down, target, mask)) / (2.0 * h);
    worst = std::max(worst, rel_gap(grad.data()[i], fd));
  }
  return worst;
}

double check_end_to_end_fd(unsigned seed) {
  ModelConfig mc;
  mc.channels = {3, 4};
  mc.strides = {2, 1};
  mc.hyperspace_dim = 3;
  mc.classes = 2;
  Rng init(seed);
  Model m = Model::make(mc, init);

  Rng rng(seed + 500);
  ScalarGrid img(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) img(r, c) = rng.uniform();

  std::vector<SceneObject> objs(2);
  objs[0].class_id = 0;
  objs[0].box = Box::from_center(3.1, 4.2, 4.5, 5.0);
  objs[1].class_id = 1;
  objs[1].box = Box::from_center(6.0, 2.0, 3.0, 3.5);
  const SceneTargets targets =
      stack_targets(splat_ground_truth(objs, 2, 4, 4, 2), 20.0);

  TrainConfig cfg;
  cfg.pos_weight = 10.0;
  cfg.reg_weight = 0.01;
  cfg.dims_weight = 0.5;
  cfg.lambda = 20.0;

  std::vector<const ScalarGrid*> images{&img};
  std::vector<const SceneTargets*> tgts{&targets};

  ModelGrads grads = ModelGrads::zeros_like(m);
  batch_loss(m, images, tgts, cfg, &grads);
  const Eigen::VectorXd analytic = flatten_gradients(m, grads);
  Eigen::VectorXd theta = flatten_parameters(m);

  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    theta[i] += h;
    set_flat_parameters(m, theta);
    const double up = batch_loss(m, images, tgts, cfg, nullptr).total;
    theta[i] -= 2.0 * h;
    set_flat_parameters(m, theta);
    const double down = batch_loss(m, images, tgts, cfg, nullptr).total;
    theta[i] += h;
    set_flat_parameters(m, theta);
    worst = std::max(worst, rel_gap(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  int instances = 0;
  double worst = 0.0;
  for (unsigned s = 1; s <= 6; ++s) {
    Rng rng(100 + s);
    worst = std::max(worst, check_detection_fd(rng));
    ++instances;
  }
  for (unsigned s = 1; s <= 6; ++s) {
    Rng rng(200 + s);
    worst = std::max(worst, check_regularization_fd(rng));
    ++instances;
  }
  for (unsigned s = 1; s <= 6; ++s) {
    Rng rng(300 + s);
    worst = std::max(worst, check_dims_fd(rng));
    ++instances;
  }
  for (unsigned s = 1; s <= 8; ++s) {
    worst = std::max(worst, check_end_to_end_fd(400 + s));
    ++instances;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst <= 1e-5 && instances >= 20 && secs < 60.0;
  o.detail = std::to_string(instances) + " instances, worst relative gap " +
             fmt(worst) + ", " + fmt(secs) + "s";
  return o;
}

// ---------------------------------------------------------------------------
// criterion 2: closed-form uncertainty oracles

Outcome criterion2() {
  std::vector<std::pair<std::string, double>> gaps;

  // lateral spread: center cell 1.0 flanked horizontally by 0.5, size 10
  {
    ScalarGrid heat = ScalarGrid::Zero(5, 5);
    heat(2, 2) = 1.0;
    heat(2, 1) = 0.5;
    heat(2, 3) = 0.5;
    const auto [ux, uy] = location_uncertainty(heat, 2, 2, 10.0, 10.0, 4.0, 1, 1);
    gaps.emplace_back("U_x", std::abs(ux - 0.07071));
    (void)uy;
  }

  // size spread: widths 10/8/12 at full score, predicted width 10
  {
    ScalarGrid heat = ScalarGrid::Zero(3, 3);
    heat(1, 1) = 1.0;
    heat(1, 0) = 1.0;
    heat(1, 2) = 1.0;
    ScalarGrid dw(3, 3), dh(3, 3);
    dw.setConstant(10.0);
    dw(1, 0) = 8.0;
    dw(1, 2) = 12.0;
    dh.setConstant(10.0);
    const auto [uw, uh] = dimension_uncertainty(dw, dh, heat, 1, 1, 10.0, 10.0, 1);
    gaps.emplace_back("U_w", std::abs(uw - 0.16330));
    (void)uh;
  }

  // class ambiguity over scores 0.8 / 0.4 / 0.2
  gaps.emplace_back("U_cls",
                    std::abs(class_uncertainty({0.8, 0.4, 0.2}) - 0.26172));

  // boundary quality: inner 6x6 centered in the 10x10 truth, outer equal to it
  {
    const UbqResult r =
        ubq(Box{0, 0, 10, 10}, Box{2, 2, 6, 6}, Box{0, 0, 10, 10});
    gaps.emplace_back("UBQ", std::abs(100.0 * r.ubq - 60.0));
    gaps.emplace_back("BR", std::abs(100.0 * r.br - 60.0));
  }

  Outcome o;
  o.pass = true;
  for (const auto& [name, gap] : gaps) {
    if (gap > 1e-4) o.pass = false;
    o.detail += (o.detail.empty() ? "" : ", ") + name + " gap " + fmt(gap);
  }
  return o;
}

// ---------------------------------------------------------------------------
// criterion 3: centroid update dynamics and schedules

Outcome criterion3() {
  std::vector<std::string> fails;

  // one positive cell at (1,0), centroid at origin, gamma 0.9
  {
    std::vector<Eigen::MatrixXd> emb{(Eigen::MatrixXd(2, 1) << 1.0, 0.0).finished()};
    Eigen::MatrixXd y = Eigen::MatrixXd::Ones(1, 1);
    Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(2, 1);
    const Eigen::MatrixXd out =
        update_centroids(emb, y, 20.0, 0.9, 1.0, true, centroids);
    if (std::abs(out(0, 0) - 0.1) > 1e-12 || out(1, 0) != 0.0)
      fails.push_back("EMA step");
  }

  // every positive far outside the 3-sigma gate: centroid must not move
  {
    std::vector<Eigen::MatrixXd> emb{Eigen::MatrixXd::Constant(2, 3, 50.0)};
    Eigen::MatrixXd y = Eigen::MatrixXd::Ones(1, 3);
    Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(2, 1);
    const Eigen::MatrixXd out =
        update_centroids(emb, y, 1.0, 0.9, 0.1, true, centroids);
    if (!(out.array() == centroids.array()).all()) fails.push_back("outlier gate");
  }

  // length-scale anchors: starts at 0.25 and settles on the 0.05 floor
  if (anneal_length_scale(0, 0.25, 0.999, 0.05) != 0.25)
    fails.push_back("sigma(0)");
  if (anneal_length_scale(100000000L, 0.25, 0.999, 0.05) != 0.05)
    fails.push_back("sigma floor");

  // momentum anchors at the scheduled epochs
  {
    const std::vector<std::pair<int, double>> sched{
        {0, 0.9}, {5, 0.99}, {20, 0.999}, {60, 0.9999}};
    if (schedule_momentum(0, sched) != 0.9 || schedule_momentum(5, sched) != 0.99 ||
        schedule_momentum(20, sched) != 0.999 ||
        schedule_momentum(60, sched) != 0.9999)
      fails.push_back("gamma anchors");
  }

  Outcome o;
  o.pass = fails.empty();
  if (fails.empty()) {
    o.detail = "EMA step, outlier gate, sigma and gamma anchors all exact";
  } else {
    for (const auto& f : fails) o.detail += (o.detail.empty() ? "" : ", ") + f;
  }
  return o;
}

// ---------------------------------------------------------------------------
// criterion 6: metric suite against brute-force enumeration

double bf_pr_area(const std::vector<double>& vals, const std::vector<bool>& pos,
                  size_t denom) {
  std::set<double, std::greater<double>> thresholds(vals.begin(), vals.end());
  std::vector<double> recall, precision;
  for (double t : thresholds) {
    size_t tp = 0, keep = 0;
    for (size_t i = 0; i < vals.size(); ++i) {
      if (vals[i] >= t) {
        ++keep;
        tp += pos[i] ? 1 : 0;
      }
    }
    recall.push_back(double(tp) / double(denom));
    precision.push_back(double(tp) / double(keep));
  }
  double area = 0.0;
  for (size_t i = 0; i < recall.size(); ++i) {
    double env = 0.0;
    for (size_t j = i; j < recall.size(); ++j) env = std::max(env, precision[j]);
    const double prev = i == 0 ? 0.0 : recall[i - 1];
    area += (recall[i] - prev) * env;
  }
  return 100.0 * area;
}

double bf_auroc(const std::vector<double>& s, const std::vector<bool>& c) {
  double wins = 0.0;
  size_t n_pos = 0, n_neg = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (!c[i]) continue;
    ++n_pos;
    for (size_t j = 0; j < s.size(); ++j) {
      if (c[j]) continue;
      if (s[i] > s[j])
        wins += 1.0;
      else if (s[i] == s[j])
        wins += 0.5;
    }
  }
  for (bool b : c) n_neg += b ? 0 : 1;
  return 100.0 * wins / (double(n_pos) * double(n_neg));
}

double bf_ece(const std::vector<double>& s, const std::vector<bool>& c, int bins) {
  std::vector<double> conf(bins, 0.0), acc(bins, 0.0);
  std::vector<size_t> count(bins, 0);
  for (size_t i = 0; i < s.size(); ++i) {
    int b = std::min(int(s[i] * bins), bins - 1);
    conf[b] += s[i];
    acc[b] += c[i] ? 1.0 : 0.0;
    count[b] += 1;
  }
  double total = 0.0;
  for (int b = 0; b < bins; ++b) {
    if (!count[b]) continue;
    const double n = double(count[b]);
    total += (n / double(s.size())) * std::abs(acc[b] / n - conf[b] / n);
  }
  return 100.0 * total;
}

double bf_ue(const std::vector<double>& u, const std::vector<bool>& c) {
  std::vector<double> taus{-1.0};
  for (double v : u) {
    taus.push_back(v - 1e-9);
    taus.push_back(v + 1e-9);
  }
  size_t n_cor = 0, n_inc = 0;
  for (bool b : c) (b ? n_cor : n_inc) += 1;
  double best = 1.0;
  for (double tau : taus) {
    size_t hc = 0, li = 0;
    for (size_t i = 0; i < u.size(); ++i) {
      if (c[i] && u[i] > tau) ++hc;
      if (!c[i] && u[i] <= tau) ++li;
    }
    double e;
    if (n_cor && n_inc)
      e = 0.5 * hc / n_cor + 0.5 * li / n_inc;
    else if (n_cor)
      e = double(hc) / n_cor;
    else
      e = double(li) / n_inc;
    best = std::min(best, e);
  }
  return 100.0 * best;
}

Outcome criterion6() {
  Rng rng(606);
  double worst = 0.0;
  bool invariant = true;
  int trials = 0;

  for (int trial = 0; trial < 12; ++trial) {
    const int n = 3 + int(rng.uniform() * 8);  // at most 10 samples
    std::vector<double> s, u;
    std::vector<bool> c;
    bool any_pos = false, any_neg = false;
    for (int i = 0; i < n; ++i) {
      s.push_back(0.1 * int(rng.uniform() * 10));
      u.push_back(1.0 - s.back());
      const bool hit = rng.uniform() > 0.5;
      c.push_back(hit);
      (hit ? any_pos : any_neg) = true;
    }
    if (!any_pos) c[0] = true;
    if (!any_neg) c[n - 1] = false;

    size_t n_pos = 0;
    for (bool b : c) n_pos += b ? 1 : 0;

    worst = std::max(worst,
                     std::abs(average_precision(s, c, n) - bf_pr_area(s, c, n)));
    worst = std::max(worst, std::abs(*aupr_in(s, c) - bf_pr_area(s, c, n_pos)));
    std::vector<double> inv_s;
    std::vector<bool> miss;
    for (size_t i = 0; i < s.size(); ++i) {
      inv_s.push_back(1.0 - s[i]);
      miss.push_back(!c[i]);
    }
    worst = std::max(worst, std::abs(*aupr_out(s, c) -
                                     bf_pr_area(inv_s, miss, s.size() - n_pos)));
    worst = std::max(worst, std::abs(*auroc(s, c) - bf_auroc(s, c)));
    worst = std::max(worst, std::abs(ece(s, c, 10) - bf_ece(s, c, 10)));
    worst = std::max(worst, std::abs(uncertainty_error(u, c) - bf_ue(u, c)));

    // monotone rescoring: the cube preserves order on [0, 1]
    std::vector<double> s3;
    for (double v : s) s3.push_back(v * v * v);
    if (average_precision(s, c, n) != average_precision(s3, c, n))
      invariant = false;
    if (*aupr_in(s, c) != *aupr_in(s3, c)) invariant = false;
    if (*aupr_out(s, c) != *aupr_out(s3, c)) invariant = false;
    if (*auroc(s, c) != *auroc(s3, c)) invariant = false;
    ++trials;
  }

  Outcome o;
  o.pass = worst <= 1e-12 && invariant;
  o.detail = std::to_string(trials) + " trials, worst brute-force gap " +
             fmt(worst) + (invariant ? ", rescoring invariant" : ", INVARIANCE BROKEN");
  return o;
}

// ---------------------------------------------------------------------------
// criteria 4, 5, 7, 8: the desk-scale benchmark through the CLI

const char* kBenchTrainScenes =
    "width = 128\n"
    "height = 128\n"
    "scenes = 2000\n"
    "objects_min = 1\n"
    "objects_max = 4\n"
    "size_min = 14\n"
    "size_max = 26\n"
    "aspect_min = 0.75\n"
    "aspect_max = 1.3333333\n"
    "intensity_min = 0.55\n"
    "intensity_max = 0.95\n"
    "background = 0.15\n"
    "background_noise = 0.03\n"
    "class_weights = 0.34,0.33,0.33\n"
    "class_shapes = rectangle,cross,triangle\n"
    "seed = 11\n";

const char* kBenchValScenes =
    "width = 128\n"
    "height = 128\n"
    "scenes = 500\n"
    "objects_min = 1\n"
    "objects_max = 4\n"
    "size_min = 14\n"
    "size_max = 26\n"
    "aspect_min = 0.75\n"
    "aspect_max = 1.3333333\n"
    "intensity_min = 0.55\n"
    "intensity_max = 0.95\n"
    "background = 0.15\n"
    "background_noise = 0.03\n"
    "class_weights = 0.34,0.33,0.33\n"
    "class_shapes = rectangle,cross,triangle\n"
    "seed = 12\n";

const char* kBenchShift =
    "shift.noise_sigma = 0.2\n"
    "shift.size_factor = 1.3\n"
    "shift.unseen_rate = 0.1\n";

const char* kBenchTrainCfg =
    "epochs = 40\n"
    "freeze_epochs = 2\n"
    "batch_size = 16\n"
    "lr = 3e-4\n"
    "lr_decay_epochs = 32,37\n"
    "lr_decay_factor = 0.1\n"
    "lambda = 20\n"
    "gamma_schedule = 0:0.9,2:0.99,6:0.999,14:0.9999\n"
    "sigma0 = 0.25\n"
    "sigma_min = 0.2\n"
    "sigma_decay = 0.9995\n"
    "reg_weight = 0.01\n"
    "dims_weight = 2.0\n"
    "pos_weight = 10\n"
    "hyperspace_dim = 16\n"
    "channels = 8,16,32,32\n"
    "conv_strides = 2,2,1,1\n";

const char* kInferArgs = " --peak-thresh 0.25";

struct BenchState {
  bool ready = false;
  std::string err;
  double ap_a6 = 0.0, ap_a0 = 0.0;
  double a6_wall = 0.0;
};

BenchState g_bench;

// Runs the full benchmark once; criteria 4, 5, 7, 8 read from the results.
void run_benchmark() {
  const std::string& sb = sandbox();
  write_file(sb + "/bench_train.cfg", kBenchTrainScenes);
  write_file(sb + "/bench_val.cfg", kBenchValScenes);
  write_file(sb + "/bench_val_shift.cfg", std::string(kBenchValScenes) + kBenchShift);
  write_file(sb + "/bench_model.cfg", kBenchTrainCfg);

  auto step = [&](const std::string& label, const std::string& args) {
    if (run_cli(args) != 0) throw std::runtime_error(label + " failed");
  };

  const auto t0 = std::chrono::steady_clock::now();
  step("synth train", "synth --config " + sb + "/bench_train.cfg --out " + sb + "/ds_train");
  step("synth val", "synth --config " + sb + "/bench_val.cfg --out " + sb + "/ds_val");
  step("train A6", "train --data " + sb + "/ds_train --config " + sb +
                       "/bench_model.cfg --out " + sb + "/run_a6 --ablation A6 --seed 1");
  step("infer A6", "infer --checkpoint " + sb + "/run_a6/checkpoint.bin --data " +
                       sb + "/ds_val --out " + sb + "/inf_a6 --export-heatmaps" +
                       kInferArgs);
  step("eval A6", "eval --detections " + sb + "/inf_a6/detections.jsonl --data " +
                      sb + "/ds_val --out " + sb + "/eval_a6");
  g_bench.a6_wall = seconds_since(t0);
  g_bench.ap_a6 = parse_report(sb + "/eval_a6/report.txt").at("ap");

  step("train A0", "train --data " + sb + "/ds_train --config " + sb +
                       "/bench_model.cfg --out " + sb + "/run_a0 --ablation A0 --seed 1");
  step("infer A0", "infer --checkpoint " + sb + "/run_a0/checkpoint.bin --data " +
                       sb + "/ds_val --out " + sb + "/inf_a0" + kInferArgs);
  step("eval A0", "eval --detections " + sb + "/inf_a0/detections.jsonl --data " +
                      sb + "/ds_val --out " + sb + "/eval_a0");
  g_bench.ap_a0 = parse_report(sb + "/eval_a0/report.txt").at("ap");

  g_bench.ready = true;
}

Outcome criterion4() {
  Outcome o;
  if (!g_bench.ready) {
    o.detail = "benchmark unavailable: " + g_bench.err;
    return o;
  }
  const bool ap_ok = g_bench.ap_a6 >= 90.0;
  const bool time_ok = g_bench.a6_wall < 1800.0;
  const bool abl_ok = g_bench.ap_a0 < g_bench.ap_a6;
  o.pass = ap_ok && time_ok && abl_ok;
  o.detail = "A6 ap " + fmt(g_bench.ap_a6) + " in " + fmt(g_bench.a6_wall) +
             "s, A0 ap " + fmt(g_bench.ap_a0) +
             (abl_ok ? " (strictly lower)" : " (NOT lower)");
  return o;
}

Outcome criterion5() {
  Outcome o;
  if (!g_bench.ready) {
    o.detail = "benchmark unavailable: " + g_bench.err;
    return o;
  }
  const std::string& sb = sandbox();
  if (run_cli("synth --config " + sb + "/bench_val_shift.cfg --out " + sb +
              "/ds_shift") != 0 ||
      run_cli("infer --checkpoint " + sb + "/run_a6/checkpoint.bin --data " + sb +
              "/ds_shift --out " + sb + "/inf_shift" + kInferArgs) != 0) {
    o.detail = "shifted inference failed";
    return o;
  }
  const std::vector<Detection> in_domain =
      read_detections_jsonl(sb + "/inf_a6/detections.jsonl");
  const std::vector<Detection> shifted =
      read_detections_jsonl(sb + "/inf_shift/detections.jsonl");
  if (in_domain.empty() || shifted.empty()) {
    o.detail = "a detection set is empty";
    return o;
  }
  double mean_in = 0.0, mean_out = 0.0;
  for (const Detection& d : in_domain) mean_in += d.u_obj;
  for (const Detection& d : shifted) mean_out += d.u_obj;
  mean_in /= double(in_domain.size());
  mean_out /= double(shifted.size());
  const double delta = mean_out - mean_in;
  o.pass = delta > 0.02;
  o.detail = "mean objectness uncertainty " + fmt(mean_in) + " in-domain vs " +
             fmt(mean_out) + " shifted, delta " + fmt(delta);
  return o;
}

Outcome criterion7() {
  Outcome o;
  if (!g_bench.ready) {
    o.detail = "benchmark unavailable: " + g_bench.err;
    return o;
  }
  const std::string& sb = sandbox();
  std::vector<std::string> fails;

  // regenerate the validation set and compare every artifact byte for byte
  if (run_cli("synth --config " + sb + "/bench_val.cfg --out " + sb + "/ds_val_r") != 0) {
    o.detail = "synth rerun failed";
    return o;
  }
  if (!files_equal(sb + "/ds_val/annotations.jsonl", sb + "/ds_val_r/annotations.jsonl") ||
      !files_equal(sb + "/ds_val/manifest.txt", sb + "/ds_val_r/manifest.txt"))
    fails.push_back("synth text artifacts");
  bool grids_ok = true;
  for (const auto& entry : fs::directory_iterator(sb + "/ds_val/grids")) {
    const std::string name = entry.path().filename().string();
    if (!files_equal(entry.path().string(), sb + "/ds_val_r/grids/" + name))
      grids_ok = false;
  }
  if (!grids_ok) fails.push_back("synth grids");

  // a short training run twice with one seed
  write_file(sb + "/short_train.cfg",
             std::string("epochs = 3\nfreeze_epochs = 1\nbatch_size = 16\n"
                         "lr = 3e-4\nlambda = 20\ngamma_schedule = 0:0.9,2:0.99\n"
                         "sigma0 = 0.25\nsigma_min = 0.2\nsigma_decay = 0.9995\n"
                         "reg_weight = 0.01\ndims_weight = 2.0\npos_weight = 10\n"
                         "hyperspace_dim = 16\nchannels = 8,16,32,32\n"
                         "conv_strides = 2,2,1,1\n"));
  if (run_cli("train --data " + sb + "/ds_val --config " + sb +
              "/short_train.cfg --out " + sb + "/run_d1 --seed 5") != 0 ||
      run_cli("train --data " + sb + "/ds_val --config " + sb +
              "/short_train.cfg --out " + sb + "/run_d2 --seed 5") != 0) {
    o.detail = "train rerun failed";
    return o;
  }
  if (!files_equal(sb + "/run_d1/checkpoint.bin", sb + "/run_d2/checkpoint.bin") ||
      !files_equal(sb + "/run_d1/trace.csv", sb + "/run_d2/trace.csv"))
    fails.push_back("train artifacts");

  // inference rerun over the same checkpoint and data
  if (run_cli("infer --checkpoint " + sb + "/run_a6/checkpoint.bin --data " + sb +
              "/ds_val --out " + sb + "/inf_a6_r --export-heatmaps" + kInferArgs) != 0) {
    o.detail = "infer rerun failed";
    return o;
  }
  if (!files_equal(sb + "/inf_a6/detections.jsonl", sb + "/inf_a6_r/detections.jsonl") ||
      !files_equal(sb + "/inf_a6/heatmaps.jsonl", sb + "/inf_a6_r/heatmaps.jsonl"))
    fails.push_back("infer artifacts");

  o.pass = fails.empty();
  if (fails.empty()) {
    o.detail =
        "synth, train, and infer reruns byte-identical (manifests and timing "
        "files excluded)";
  } else {
    for (const auto& f : fails) o.detail += (o.detail.empty() ? "" : ", ") + f;
  }
  return o;
}

Outcome criterion8() {
  Outcome o;
  if (!g_bench.ready) {
    o.detail = "benchmark unavailable: " + g_bench.err;
    return o;
  }
  const std::string& sb = sandbox();
  if (run_cli("infer --dump " + sb + "/inf_a6/heatmaps.jsonl --out " + sb +
              "/inf_posthoc" + kInferArgs) != 0) {
    o.detail = "post-hoc decode failed";
    return o;
  }
  o.pass = files_equal(sb + "/inf_a6/detections.jsonl",
                       sb + "/inf_posthoc/detections.jsonl");
  o.detail = o.pass ? "dump-decoded detections byte-identical to the model pass"
                    : "post-hoc detections differ from the model pass";
  return o;
}

}  // namespace

int main() {
  Outcome results[8];
  auto note = [&](int idx) {
    std::cerr << "[accept] criterion " << (idx + 1) << " "
              << (results[idx].pass ? "ok" : "FAILED") << ": "
              << results[idx].detail << "\n";
  };
  auto guarded = [&](int idx, Outcome (*fn)()) {
    try {
      results[idx] = fn();
    } catch (const std::exception& e) {
      results[idx] = Outcome{false, std::string("unexpected error: ") + e.what()};
    }
    note(idx);
  };

  guarded(0, &criterion1);
  guarded(1, &criterion2);
  guarded(2, &criterion3);
  guarded(5, &criterion6);

  std::cerr << "[accept] benchmark starting (two full training runs)\n";
  try {
    run_benchmark();
  } catch (const std::exception& e) {
    g_bench.err = e.what();
  }
  guarded(3, &criterion4);
  guarded(4, &criterion5);
  guarded(6, &criterion7);
  guarded(7, &criterion8);

  int failures = 0;
  for (int i = 0; i < 8; ++i) {
    const Outcome& o = results[i];
    std::cout << "criterion " << (i + 1) << ": " << (o.pass ? "PASS" : "FAIL")
              << "  " << o.detail << "\n";
    if (!o.pass) ++failures;
  }
  return failures;
}
