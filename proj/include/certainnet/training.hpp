#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "certainnet/config.hpp"
#include "certainnet/model.hpp"
#include "certainnet/synthdata.hpp"

namespace certainnet {

// Training targets on the output lattice for one scene.
struct GroundTruthHeatmaps {
  int rows = 0;
  int cols = 0;
  int stride = 1;
  std::vector<ScalarGrid> class_maps;  // per-class splats, max-merged, centers 1.0
  ScalarGrid target_w;                 // valid where center_mask != 0, input pixels
  ScalarGrid target_h;
  Eigen::ArrayXXi center_mask;
};

// Largest Gaussian radius (in cells) keeping worst-case corner-shifted boxes
// above `min_overlap` IoU with a (height x width) box.
double gaussian_radius(double height, double width, double min_overlap = 0.7);

GroundTruthHeatmaps splat_ground_truth(const std::vector<SceneObject>& objects,
                                       int classes, int rows, int cols, int stride);

// Matrix-form targets for one scene, precomputed once per training run.
struct SceneTargets {
  Eigen::MatrixXd y;      // (classes x cells)
  Eigen::MatrixXd y_pow;  // y^lambda
  Eigen::MatrixXd dims;   // (2 x cells), valid at centers
  Eigen::ArrayXi mask;    // (cells), 1 at object centers
  int n_centers = 0;
};
SceneTargets stack_targets(const GroundTruthHeatmaps& gt, double lambda);

// --- losses ----------------------------------------------------------------
// All three operate on stacked matrices: a batch is the horizontal
// concatenation of per-image cell columns. Optional out-parameters receive
// gradients with respect to the first argument.

// Mean binary cross-entropy between kernel scores and splatted targets over
// every cell and class; cells with target >= 0.5 get `positive_weight`.
double detection_loss(const Eigen::Ref<const Eigen::MatrixXd>& scores,
                      const Eigen::Ref<const Eigen::MatrixXd>& targets,
                      double positive_weight, Eigen::MatrixXd* grad_scores = nullptr);

// Target-weighted mean squared distance between embeddings and their class
// centroid: sum_{c,i} y^lambda |z - e_c|^2 / sum_{c,i} y^lambda. Gradients
// flow to embeddings only; centroids are EMA-tracked, never trained.
double regularization_loss(const std::vector<Eigen::MatrixXd>& embeddings,
                           const Eigen::Ref<const Eigen::MatrixXd>& centroids,
                           const Eigen::Ref<const Eigen::MatrixXd>& targets,
                           double lambda,
                           std::vector<Eigen::MatrixXd>* grad_embeddings = nullptr);

// Mean L1 over (width, height) components at ground-truth center cells.
double dims_loss(const Eigen::Ref<const Eigen::MatrixXd>& dims,
                 const Eigen::Ref<const Eigen::MatrixXd>& targets,
                 const Eigen::Ref<const Eigen::ArrayXi>& center_mask,
                 Eigen::MatrixXd* grad_dims = nullptr);

// --- centroid tracking emas -------------------------------------------------

// Balanced EMA step: e <- gamma*e + (1-gamma) * (sum_i y^lambda z_i / sum_i
// y^lambda), per class. With outlier protection, cells whose normalized
// distance sqrt(|z-e|^2/dim) exceeds 3*sigma are excluded from both sums; a
// class with no surviving weight keeps its centroid.
Eigen::MatrixXd update_centroids(const std::vector<Eigen::MatrixXd>& embeddings,
                                 const Eigen::Ref<const Eigen::MatrixXd>& targets,
                                 double lambda, double gamma, double sigma,
                                 bool outlier_protection,
                                 const Eigen::Ref<const Eigen::MatrixXd>& centroids);

// Piecewise-constant momentum: value of the last schedule entry whose epoch
// is <= `epoch`. The first entry must be at epoch 0.
double schedule_momentum(int epoch, const std::vector<std::pair<int, double>>& schedule);

// Exponentially decayed length scale with a floor.
double anneal_length_scale(long step, double sigma0, double decay, double sigma_min);

// --- backpropagation ---------------------------------------------------------

struct ModelGrads {
  std::vector<Eigen::MatrixXd> conv_weight;
  std::vector<Eigen::VectorXd> conv_bias;
  std::vector<Eigen::MatrixXd> proj_weight;
  Eigen::MatrixXd dims_weight;
  Eigen::VectorXd dims_bias;

  static ModelGrads zeros_like(const Model& m);
};

// Accumulates into `acc` the parameter gradients for one image given upstream
// gradients on kernel scores, extra per-class embedding gradients (the
// regularization term), and size-head outputs. Null pointers mean "no
// contribution".
void backward(const Model& m, const ForwardCache& cache,
              const Eigen::MatrixXd* d_scores,
              const std::vector<Eigen::MatrixXd>* d_embeddings,
              const Eigen::MatrixXd* d_dims, ModelGrads& acc);

// Flat parameter vector in a fixed order (conv stages, projections, dims
// head). Centroids are excluded: they are never gradient-trained.
Eigen::VectorXd flatten_parameters(const Model& m);
void set_flat_parameters(Model& m, const Eigen::Ref<const Eigen::VectorXd>& theta);
Eigen::VectorXd flatten_gradients(const Model& m, const ModelGrads& g);
// Per-scalar parameter group: 0 = backbone, 1 = projector, 2 = dims head.
Eigen::VectorXi parameter_groups(const Model& m);

struct AdamState {
  Eigen::VectorXd m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit AdamState(Eigen::Index n)
      : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
  // `active` masks which coordinates update; null = all.
  void step(Eigen::Ref<Eigen::VectorXd> theta, const Eigen::Ref<const Eigen::VectorXd>& grad,
            double lr, const Eigen::VectorXi* active = nullptr);
};

// --- the loop ----------------------------------------------------------------

struct TrainConfig {
  ModelConfig model;
  TrainFlags flags;
  int epochs = 70;
  int freeze_epochs = 10;  // appended when freeze_final is on
  int batch_size = 16;
  double lr = 1.25e-4;
  std::vector<int> lr_decay_epochs = {45, 60};
  double lr_decay_factor = 0.1;
  double lambda = 20.0;
  std::vector<std::pair<int, double>> gamma_schedule = {
      {0, 0.9}, {5, 0.99}, {20, 0.999}, {60, 0.9999}};
  double sigma0 = 0.25;
  double sigma_min = 0.05;
  double sigma_decay = 0.999;
  double reg_weight = 1e-2;
  double dims_weight = 0.2;
  double pos_weight = 10.0;

  static TrainConfig from_keyvalues(const KeyValues& kv);
  void validate() const;
};

struct LossBreakdown {
  double total = 0, detection = 0, regularization = 0, dims = 0;
};

// Joint loss over a batch of images (losses normalize across the whole
// batch, matching the per-minibatch definitions). Optionally accumulates
// parameter gradients and exposes the forward caches for the centroid step.
LossBreakdown batch_loss(const Model& m, const std::vector<const ScalarGrid*>& images,
                         const std::vector<const SceneTargets*>& targets,
                         const TrainConfig& cfg, ModelGrads* grads,
                         std::vector<ForwardCache>* caches_out = nullptr);

struct TraceRow {
  int epoch = 0;
  long step = 0;
  double det_loss = 0, reg_loss = 0, dims_loss = 0;
  double sigma = 0, gamma = 0, centroid_drift = 0;
};

struct TrainResult {
  Model model;
  std::vector<TraceRow> trace;
};

TrainResult train(const Dataset& data, const TrainConfig& cfg, uint64_t seed);

std::string trace_to_csv(const std::vector<TraceRow>& trace);

}  // namespace certainnet
