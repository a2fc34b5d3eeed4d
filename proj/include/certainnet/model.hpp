#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "certainnet/grid.hpp"
#include "certainnet/rng.hpp"

namespace certainnet {

// One 3x3 / zero-pad-1 convolution stage followed by an ELU. Weights are laid
// out (out_channels x 9*in_channels) to match the im2col patch rows.
struct ConvStage {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

struct FeatureExtractor {
  std::vector<ConvStage> stages;

  int output_stride() const {
    int s = 1;
    for (const auto& st : stages) s *= st.stride;
    return s;
  }
  int feature_dim() const {
    return stages.empty() ? 0 : stages.back().out_channels;
  }
  bool initialized() const { return !stages.empty() && stages[0].weight.size() > 0; }
};

// Per-class linear maps from feature space into the hyperspace where
// centroids live. No bias: a pure W_c per class.
struct HyperspaceProjector {
  std::vector<Eigen::MatrixXd> weights;  // each (dim x feature_dim)

  int classes() const { return static_cast<int>(weights.size()); }
  int dim() const {
    return weights.empty() ? 0 : static_cast<int>(weights[0].rows());
  }
};

// Class centroids plus the kernel length scale sigma and EMA momentum gamma,
// which travel with the model because inference needs sigma and resumed
// training needs gamma.
struct CentroidSet {
  Eigen::MatrixXd centroids;  // (dim x classes)
  double length_scale = 0.25;
  double momentum = 0.9;

  int classes() const { return static_cast<int>(centroids.cols()); }
  int dim() const { return static_cast<int>(centroids.rows()); }
};

// Linear head regressing (width, height) per cell; softplus keeps both
// strictly positive.
struct DimsHead {
  Eigen::MatrixXd weight;  // (2 x feature_dim)
  Eigen::VectorXd bias;    // (2)
};

// Stabilization features, cumulative ablation rungs A0..A6.
struct TrainFlags {
  bool reg_loss = true;
  bool balanced_update = true;
  bool outlier_protection = true;
  bool momentum_schedule = true;
  bool sigma_annealing = true;
  bool freeze_final = true;

  // A0 = everything off, each level switches one more feature on, A6 = all.
  static TrainFlags ablation(int level);
  std::string describe() const;
};

struct ModelConfig {
  int input_channels = 1;
  std::vector<int> channels = {8, 16, 32};
  std::vector<int> strides = {2, 2, 1};
  int hyperspace_dim = 16;
  int classes = 3;
  double sigma0 = 0.25;
  double gamma0 = 0.9;
};

struct Model {
  FeatureExtractor features;
  HyperspaceProjector projector;
  DimsHead dims_head;
  CentroidSet centroids;
  TrainFlags flags;

  int classes() const { return projector.classes(); }
  int hyperspace_dim() const { return projector.dim(); }
  int stride() const { return features.output_stride(); }
  bool initialized() const {
    return features.initialized() && projector.classes() > 0 &&
           dims_head.weight.size() > 0 && centroids.centroids.size() > 0;
  }

  static Model make(const ModelConfig& cfg, Rng& rng);
};

// Everything the decoder consumes for one image.
struct HeadOutputs {
  int rows = 0;
  int cols = 0;
  int stride = 1;
  std::vector<ScalarGrid> class_heatmaps;   // kernel scores in (0, 1]
  VectorGrid dims_map;                      // channel 0 = width, 1 = height (pixels)
  std::vector<VectorGrid> embedding_maps;   // per class; empty for imported dumps
};

// Gaussian kernel score against a centroid. The squared distance is
// normalized by the hyperspace dimension so sigma means the same thing
// regardless of dim: exp(-|z-e|^2 / (2*dim*sigma^2)).
template <typename DZ, typename DE>
double rbf_score(const Eigen::MatrixBase<DZ>& z, const Eigen::MatrixBase<DE>& centroid,
                 double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("rbf_score: sigma must be positive");
  if (z.size() != centroid.size())
    throw std::invalid_argument("rbf_score: embedding/centroid dimension mismatch");
  const double d2 = (z - centroid).squaredNorm();
  const double dim = static_cast<double>(z.size());
  return std::exp(-d2 / (2.0 * dim * sigma * sigma));
}

inline double objectness_uncertainty(double score) { return 1.0 - score; }

VectorGrid project_features(const VectorGrid& features, const HyperspaceProjector& proj,
                            int class_id);

// Intermediate activations kept for backpropagation. `heat` and `embeddings`
// are the matrix-form twins of HeadOutputs.
struct ForwardCache {
  int rows = 0;
  int cols = 0;
  std::vector<Eigen::MatrixXd> stage_inputs;   // per stage (C_in x cells_in)
  std::vector<Eigen::MatrixXd> stage_preact;   // per stage (C_out x cells_out)
  std::vector<std::pair<int, int>> stage_shapes;  // input (rows, cols) per stage
  Eigen::MatrixXd features;                    // (C x cells), post-ELU
  std::vector<Eigen::MatrixXd> embeddings;     // per class (dim x cells)
  Eigen::MatrixXd dims_pre;                    // (2 x cells)
  Eigen::MatrixXd dims;                        // softplus(dims_pre)
  Eigen::MatrixXd heat;                        // (classes x cells)
};

ForwardCache forward_cache(const Model& m, const Eigen::Ref<const ScalarGrid>& image);
HeadOutputs forward(const Model& m, const ScalarGrid& image);

// Versioned binary checkpoint. Magic: CERTAINNET-CKPT-v1.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace certainnet
