#include "certainnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "certainnet/conv.hpp"
#include "certainnet/errors.hpp"
#include "certainnet/log.hpp"
#include "certainnet/rng.hpp"

namespace certainnet {

double gaussian_radius(double height, double width, double min_overlap) {
  if (height <= 0.0 || width <= 0.0)
    throw std::invalid_argument("gaussian_radius: box size must be positive");
  if (min_overlap <= 0.0 || min_overlap >= 1.0)
    throw std::invalid_argument("gaussian_radius: min_overlap must be in (0,1)");

  const double a1 = 1.0;
  const double b1 = height + width;
  const double c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
  const double r1 = (b1 - std::sqrt(b1 * b1 - 4.0 * a1 * c1)) / (2.0 * a1);

  const double a2 = 4.0;
  const double b2 = 2.0 * (height + width);
  const double c2 = (1.0 - min_overlap) * width * height;
  const double r2 = (b2 - std::sqrt(b2 * b2 - 4.0 * a2 * c2)) / (2.0 * a2);

  const double a3 = 4.0 * min_overlap;
  const double b3 = 2.0 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1.0) * width * height;
  const double r3 = (std::sqrt(b3 * b3 - 4.0 * a3 * c3) - b3) / (2.0 * a3);

  return std::min({r1, r2, r3});
}

GroundTruthHeatmaps splat_ground_truth(const std::vector<SceneObject>& objects,
                                       int classes, int rows, int cols, int stride) {
  if (classes < 1 || rows < 1 || cols < 1 || stride < 1)
    throw std::invalid_argument("splat_ground_truth: bad grid geometry");

  GroundTruthHeatmaps gt;
  gt.rows = rows;
  gt.cols = cols;
  gt.stride = stride;
  gt.class_maps.assign(classes, ScalarGrid::Zero(rows, cols));
  gt.target_w = ScalarGrid::Zero(rows, cols);
  gt.target_h = ScalarGrid::Zero(rows, cols);
  gt.center_mask = Eigen::ArrayXXi::Zero(rows, cols);

  for (const SceneObject& obj : objects) {
    if (obj.box.w <= 0.0 || obj.box.h <= 0.0)
      throw std::invalid_argument("splat_ground_truth: zero-size box");
    if (obj.class_id < 0 || obj.class_id >= classes)
      throw std::out_of_range("splat_ground_truth: class id out of range");

    const int cr = std::clamp(static_cast<int>(obj.box.cy() / stride), 0, rows - 1);
    const int cc = std::clamp(static_cast<int>(obj.box.cx() / stride), 0, cols - 1);

    const double h_cells = std::ceil(obj.box.h / stride);
    const double w_cells = std::ceil(obj.box.w / stride);
    const int radius =
        std::max(0, static_cast<int>(std::floor(gaussian_radius(h_cells, w_cells))));
    const double sig = (2.0 * radius + 1.0) / 6.0;

    ScalarGrid& map = gt.class_maps[obj.class_id];
    for (int dr = -radius; dr <= radius; ++dr) {
      const int r = cr + dr;
      if (r < 0 || r >= rows) continue;
      for (int dc = -radius; dc <= radius; ++dc) {
        const int c = cc + dc;
        if (c < 0 || c >= cols) continue;
        const double v = std::exp(-(dr * dr + dc * dc) / (2.0 * sig * sig));
        map(r, c) = std::max(map(r, c), v);
      }
    }
    gt.target_w(cr, cc) = obj.box.w;
    gt.target_h(cr, cc) = obj.box.h;
    gt.center_mask(cr, cc) = 1;
  }
  return gt;
}

SceneTargets stack_targets(const GroundTruthHeatmaps& gt, double lambda) {
  SceneTargets t;
  const int classes = static_cast<int>(gt.class_maps.size());
  const Eigen::Index cells = static_cast<Eigen::Index>(gt.rows) * gt.cols;
  t.y.resize(classes, cells);
  for (int c = 0; c < classes; ++c)
    t.y.row(c) = grid_to_flat(gt.class_maps[c]).transpose();
  t.y_pow = t.y.array().pow(lambda);
  t.dims.resize(2, cells);
  t.dims.row(0) = grid_to_flat(gt.target_w).transpose();
  t.dims.row(1) = grid_to_flat(gt.target_h).transpose();
  t.mask.resize(cells);
  Eigen::Index i = 0;
  for (int r = 0; r < gt.rows; ++r)
    for (int c = 0; c < gt.cols; ++c) t.mask[i++] = gt.center_mask(r, c);
  t.n_centers = t.mask.sum();
  return t;
}

// ---------------------------------------------------------------------------
// losses

namespace {
constexpr double kScoreFloor = 1e-300;
constexpr double kScoreCeil = 1.0 - 1e-12;
}  // namespace

double detection_loss(const Eigen::Ref<const Eigen::MatrixXd>& scores,
                      const Eigen::Ref<const Eigen::MatrixXd>& targets,
                      double positive_weight, Eigen::MatrixXd* grad_scores) {
  if (scores.rows() != targets.rows() || scores.cols() != targets.cols())
    throw std::invalid_argument("detection_loss: score/target shape mismatch");
  if (scores.size() == 0) throw std::invalid_argument("detection_loss: empty input");
  if (!scores.allFinite() || !targets.allFinite())
    throw std::invalid_argument("detection_loss: non-finite input");

  const double n = static_cast<double>(scores.size());
  if (grad_scores) grad_scores->setZero(scores.rows(), scores.cols());

  double sum = 0.0;
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      const double y = targets(i, j);
      const double p = std::clamp(scores(i, j), kScoreFloor, kScoreCeil);
      const double w = y >= 0.5 ? positive_weight : 1.0;
      sum += w * (-y * std::log(p) - (1.0 - y) * std::log1p(-p));
      if (grad_scores)
        (*grad_scores)(i, j) = w * (p - y) / (p * (1.0 - p) * n);
    }
  }
  return sum / n;
}

double regularization_loss(const std::vector<Eigen::MatrixXd>& embeddings,
                           const Eigen::Ref<const Eigen::MatrixXd>& centroids,
                           const Eigen::Ref<const Eigen::MatrixXd>& targets,
                           double lambda,
                           std::vector<Eigen::MatrixXd>* grad_embeddings) {
  const int classes = static_cast<int>(embeddings.size());
  if (classes != centroids.cols() || classes != targets.rows())
    throw std::invalid_argument("regularization_loss: class count mismatch");
  if (lambda < 1.0) throw std::invalid_argument("regularization_loss: lambda must be >= 1");

  double num = 0.0, den = 0.0;
  for (int c = 0; c < classes; ++c) {
    const Eigen::MatrixXd diff = embeddings[c].colwise() - centroids.col(c);
    const Eigen::RowVectorXd d2 = diff.colwise().squaredNorm();
    const Eigen::RowVectorXd u = targets.row(c).array().pow(lambda);
    num += (u.array() * d2.array()).sum();
    den += u.sum();
  }
  const double loss = den > 0.0 ? num / den : 0.0;

  if (grad_embeddings) {
    grad_embeddings->resize(classes);
    for (int c = 0; c < classes; ++c) {
      if (den > 0.0) {
        const Eigen::MatrixXd diff = embeddings[c].colwise() - centroids.col(c);
        const Eigen::RowVectorXd u = targets.row(c).array().pow(lambda);
        (*grad_embeddings)[c] = diff.array().rowwise() * (u.array() * (2.0 / den));
      } else {
        (*grad_embeddings)[c] =
            Eigen::MatrixXd::Zero(embeddings[c].rows(), embeddings[c].cols());
      }
    }
  }
  return loss;
}

double dims_loss(const Eigen::Ref<const Eigen::MatrixXd>& dims,
                 const Eigen::Ref<const Eigen::MatrixXd>& targets,
                 const Eigen::Ref<const Eigen::ArrayXi>& center_mask,
                 Eigen::MatrixXd* grad_dims) {
  if (dims.rows() != 2 || targets.rows() != 2 || dims.cols() != targets.cols() ||
      dims.cols() != center_mask.size())
    throw std::invalid_argument("dims_loss: shape mismatch");

  if (grad_dims) grad_dims->setZero(2, dims.cols());
  long centers = 0;
  double sum = 0.0;
  for (Eigen::Index j = 0; j < dims.cols(); ++j) {
    if (!center_mask[j]) continue;
    ++centers;
    for (int k = 0; k < 2; ++k) sum += std::abs(dims(k, j) - targets(k, j));
  }
  if (centers == 0) return 0.0;
  const double n = 2.0 * static_cast<double>(centers);
  if (grad_dims) {
    for (Eigen::Index j = 0; j < dims.cols(); ++j) {
      if (!center_mask[j]) continue;
      for (int k = 0; k < 2; ++k) {
        const double d = dims(k, j) - targets(k, j);
        (*grad_dims)(k, j) = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
      }
    }
  }
  return sum / n;
}

// ---------------------------------------------------------------------------
// centroid EMA

namespace {

// Weighted embedding sums for one class, honouring the outlier gate.
void centroid_sums(const Eigen::MatrixXd& emb, const Eigen::RowVectorXd& weights,
                   const Eigen::VectorXd& centroid, double sigma, bool outlier_protection,
                   Eigen::VectorXd& num, double& den) {
  const double dim = static_cast<double>(emb.rows());
  const double gate = 3.0 * sigma;
  for (Eigen::Index j = 0; j < emb.cols(); ++j) {
    const double u = weights[j];
    if (u <= 0.0) continue;
    if (outlier_protection) {
      const double nd = std::sqrt((emb.col(j) - centroid).squaredNorm() / dim);
      if (nd > gate) continue;
    }
    num += u * emb.col(j);
    den += u;
  }
}

}  // namespace

Eigen::MatrixXd update_centroids(const std::vector<Eigen::MatrixXd>& embeddings,
                                 const Eigen::Ref<const Eigen::MatrixXd>& targets,
                                 double lambda, double gamma, double sigma,
                                 bool outlier_protection,
                                 const Eigen::Ref<const Eigen::MatrixXd>& centroids) {
  const int classes = static_cast<int>(embeddings.size());
  if (classes != centroids.cols() || classes != targets.rows())
    throw std::invalid_argument("update_centroids: class count mismatch");
  if (gamma < 0.0 || gamma > 1.0)
    throw std::invalid_argument("update_centroids: gamma must be in [0,1]");

  Eigen::MatrixXd out = centroids;
  for (int c = 0; c < classes; ++c) {
    Eigen::VectorXd num = Eigen::VectorXd::Zero(centroids.rows());
    double den = 0.0;
    const Eigen::RowVectorXd u = targets.row(c).array().pow(lambda);
    centroid_sums(embeddings[c], u, centroids.col(c), sigma, outlier_protection, num, den);
    if (den > 0.0) out.col(c) = gamma * centroids.col(c) + (1.0 - gamma) * (num / den);
  }
  return out;
}

double schedule_momentum(int epoch, const std::vector<std::pair<int, double>>& schedule) {
  if (schedule.empty()) throw std::invalid_argument("schedule_momentum: empty schedule");
  if (epoch < 0) throw std::invalid_argument("schedule_momentum: negative epoch");
  if (schedule.front().first != 0)
    throw std::invalid_argument("schedule_momentum: first entry must be epoch 0");
  double value = schedule.front().second;
  int prev = -1;
  for (const auto& [e, v] : schedule) {
    if (e <= prev)
      throw std::invalid_argument("schedule_momentum: epochs must be strictly increasing");
    prev = e;
    if (e <= epoch) value = v;
  }
  return value;
}

double anneal_length_scale(long step, double sigma0, double decay, double sigma_min) {
  if (step < 0) throw std::invalid_argument("anneal_length_scale: negative step");
  if (sigma_min <= 0.0 || sigma0 < sigma_min)
    throw std::invalid_argument("anneal_length_scale: need sigma0 >= sigma_min > 0");
  if (decay <= 0.0 || decay > 1.0)
    throw std::invalid_argument("anneal_length_scale: decay must be in (0,1]");
  return std::max(sigma_min, sigma0 * std::pow(decay, static_cast<double>(step)));
}

// ---------------------------------------------------------------------------
// backpropagation

ModelGrads ModelGrads::zeros_like(const Model& m) {
  ModelGrads g;
  for (const auto& st : m.features.stages) {
    g.conv_weight.push_back(Eigen::MatrixXd::Zero(st.weight.rows(), st.weight.cols()));
    g.conv_bias.push_back(Eigen::VectorXd::Zero(st.bias.size()));
  }
  for (const auto& w : m.projector.weights)
    g.proj_weight.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  g.dims_weight = Eigen::MatrixXd::Zero(m.dims_head.weight.rows(), m.dims_head.weight.cols());
  g.dims_bias = Eigen::VectorXd::Zero(m.dims_head.bias.size());
  return g;
}

void backward(const Model& m, const ForwardCache& cache,
              const Eigen::MatrixXd* d_scores,
              const std::vector<Eigen::MatrixXd>* d_embeddings,
              const Eigen::MatrixXd* d_dims, ModelGrads& acc) {
  const int classes = m.classes();
  const double sigma = m.centroids.length_scale;
  const double dim = static_cast<double>(m.hyperspace_dim());
  const double inv = 1.0 / (dim * sigma * sigma);  // d(-d2/(2*dim*s^2))/d(d2) * -2

  Eigen::MatrixXd d_features =
      Eigen::MatrixXd::Zero(cache.features.rows(), cache.features.cols());

  // Heads: kernel scores and the regularization term both reach the
  // projection; the size head joins at the shared feature map.
  for (int c = 0; c < classes; ++c) {
    Eigen::MatrixXd d_emb;
    bool any = false;
    if (d_scores) {
      // p = exp(-|z-e|^2/(2*dim*sigma^2))  =>  dp/dz = -p*inv*(z-e)
      const Eigen::RowVectorXd coef =
          -(d_scores->row(c).array() * cache.heat.row(c).array()) * inv;
      d_emb = (cache.embeddings[c].colwise() - m.centroids.centroids.col(c)).array().rowwise() *
              coef.array();
      any = true;
    }
    if (d_embeddings && (*d_embeddings)[c].size() != 0) {
      if (any)
        d_emb += (*d_embeddings)[c];
      else {
        d_emb = (*d_embeddings)[c];
        any = true;
      }
    }
    if (!any) continue;
    acc.proj_weight[c].noalias() += d_emb * cache.features.transpose();
    d_features.noalias() += m.projector.weights[c].transpose() * d_emb;
  }

  if (d_dims) {
    const Eigen::MatrixXd d_pre =
        d_dims->array() * cache.dims_pre.unaryExpr([](double v) {
                             return detail::sigmoid(v);
                           }).array();
    acc.dims_weight.noalias() += d_pre * cache.features.transpose();
    acc.dims_bias.noalias() += d_pre.rowwise().sum();
    d_features.noalias() += m.dims_head.weight.transpose() * d_pre;
  }

  // Backbone, last stage first.
  Eigen::MatrixXd d_out = std::move(d_features);
  for (int s = static_cast<int>(m.features.stages.size()) - 1; s >= 0; --s) {
    const ConvStage& st = m.features.stages[s];
    const auto [in_rows, in_cols] = cache.stage_shapes[s];
    const Eigen::MatrixXd d_pre =
        d_out.array() *
        cache.stage_preact[s].unaryExpr([](double v) { return detail::elu_grad(v); }).array();
    const Eigen::MatrixXd patches =
        detail::im2col(cache.stage_inputs[s], in_rows, in_cols, st.stride);
    acc.conv_weight[s].noalias() += d_pre * patches.transpose();
    acc.conv_bias[s].noalias() += d_pre.rowwise().sum();
    if (s > 0) {
      const Eigen::MatrixXd d_patches = st.weight.transpose() * d_pre;
      Eigen::MatrixXd d_in =
          Eigen::MatrixXd::Zero(st.in_channels, static_cast<Eigen::Index>(in_rows) * in_cols);
      detail::col2im_add(d_patches, in_rows, in_cols, st.stride, d_in);
      d_out = std::move(d_in);
    }
  }
}

// ---------------------------------------------------------------------------
// flat parameter plumbing

namespace {

template <typename Fn>
void for_each_tensor(const Model& m, Fn&& fn) {
  for (size_t s = 0; s < m.features.stages.size(); ++s) {
    fn(m.features.stages[s].weight, 0);
    fn(m.features.stages[s].bias, 0);
  }
  for (const auto& w : m.projector.weights) fn(w, 1);
  fn(m.dims_head.weight, 2);
  fn(m.dims_head.bias, 2);
}

}  // namespace

Eigen::VectorXd flatten_parameters(const Model& m) {
  Eigen::Index total = 0;
  for_each_tensor(m, [&](const auto& t, int) { total += t.size(); });
  Eigen::VectorXd theta(total);
  Eigen::Index at = 0;
  for_each_tensor(m, [&](const auto& t, int) {
    theta.segment(at, t.size()) = Eigen::Map<const Eigen::VectorXd>(t.data(), t.size());
    at += t.size();
  });
  return theta;
}

void set_flat_parameters(Model& m, const Eigen::Ref<const Eigen::VectorXd>& theta) {
  Eigen::Index at = 0;
  auto put = [&](Eigen::Ref<Eigen::MatrixXd> t) {
    Eigen::Map<Eigen::VectorXd>(t.data(), t.size()) = theta.segment(at, t.size());
    at += t.size();
  };
  for (auto& st : m.features.stages) {
    put(st.weight);
    Eigen::Map<Eigen::VectorXd>(st.bias.data(), st.bias.size()) =
        theta.segment(at, st.bias.size());
    at += st.bias.size();
  }
  for (auto& w : m.projector.weights) put(w);
  put(m.dims_head.weight);
  Eigen::Map<Eigen::VectorXd>(m.dims_head.bias.data(), m.dims_head.bias.size()) =
      theta.segment(at, m.dims_head.bias.size());
  at += m.dims_head.bias.size();
  if (at != theta.size())
    throw std::invalid_argument("set_flat_parameters: size mismatch");
}

Eigen::VectorXd flatten_gradients(const Model& m, const ModelGrads& g) {
  Eigen::VectorXd flat(flatten_parameters(m).size());
  Eigen::Index at = 0;
  auto put = [&](const auto& t) {
    flat.segment(at, t.size()) = Eigen::Map<const Eigen::VectorXd>(t.data(), t.size());
    at += t.size();
  };
  for (size_t s = 0; s < m.features.stages.size(); ++s) {
    put(g.conv_weight[s]);
    put(g.conv_bias[s]);
  }
  for (const auto& w : g.proj_weight) put(w);
  put(g.dims_weight);
  put(g.dims_bias);
  return flat;
}

Eigen::VectorXi parameter_groups(const Model& m) {
  Eigen::Index total = 0;
  for_each_tensor(m, [&](const auto& t, int) { total += t.size(); });
  Eigen::VectorXi groups(total);
  Eigen::Index at = 0;
  for_each_tensor(m, [&](const auto& t, int group) {
    groups.segment(at, t.size()).setConstant(group);
    at += t.size();
  });
  return groups;
}

void AdamState::step(Eigen::Ref<Eigen::VectorXd> theta,
                     const Eigen::Ref<const Eigen::VectorXd>& grad, double lr,
                     const Eigen::VectorXi* active) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (active && (*active)[i] == 0) continue;
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
}

// ---------------------------------------------------------------------------
// batch loss

LossBreakdown batch_loss(const Model& m, const std::vector<const ScalarGrid*>& images,
                         const std::vector<const SceneTargets*>& targets,
                         const TrainConfig& cfg, ModelGrads* grads,
                         std::vector<ForwardCache>* caches_out) {
  if (images.empty() || images.size() != targets.size())
    throw std::invalid_argument("batch_loss: empty batch or image/target mismatch");

  const size_t batch = images.size();
  const int classes = m.classes();

  std::vector<ForwardCache> caches;
  caches.reserve(batch);

  double det_sum = 0.0, det_count = 0.0;
  double reg_num = 0.0, reg_den = 0.0;
  double dims_sum = 0.0;
  long centers = 0;

  for (size_t b = 0; b < batch; ++b) {
    caches.push_back(forward_cache(m, *images[b]));
    const ForwardCache& cache = caches.back();
    const SceneTargets& t = *targets[b];
    if (cache.heat.cols() != t.y.cols())
      throw std::invalid_argument("batch_loss: target lattice does not match model output");

    det_count += static_cast<double>(cache.heat.size());
    for (Eigen::Index j = 0; j < cache.heat.cols(); ++j)
      for (int c = 0; c < classes; ++c) {
        const double y = t.y(c, j);
        const double p = std::clamp(cache.heat(c, j), kScoreFloor, kScoreCeil);
        const double w = y >= 0.5 ? cfg.pos_weight : 1.0;
        det_sum += w * (-y * std::log(p) - (1.0 - y) * std::log1p(-p));
      }

    if (m.flags.reg_loss) {
      for (int c = 0; c < classes; ++c) {
        const Eigen::RowVectorXd d2 =
            (caches[b].embeddings[c].colwise() - m.centroids.centroids.col(c))
                .colwise()
                .squaredNorm();
        reg_num += (t.y_pow.row(c).array() * d2.array()).sum();
        reg_den += t.y_pow.row(c).sum();
      }
    }

    centers += t.n_centers;
    for (Eigen::Index j = 0; j < cache.dims.cols(); ++j)
      if (t.mask[j])
        dims_sum += std::abs(cache.dims(0, j) - t.dims(0, j)) +
                    std::abs(cache.dims(1, j) - t.dims(1, j));
  }

  LossBreakdown loss;
  loss.detection = det_sum / det_count;
  loss.regularization = reg_den > 0.0 ? reg_num / reg_den : 0.0;
  loss.dims = centers > 0 ? dims_sum / (2.0 * static_cast<double>(centers)) : 0.0;
  loss.total = loss.detection + cfg.reg_weight * loss.regularization +
               cfg.dims_weight * loss.dims;

  if (grads) {
    const double dims_n = 2.0 * static_cast<double>(std::max<long>(centers, 1));
    for (size_t b = 0; b < batch; ++b) {
      const ForwardCache& cache = caches[b];
      const SceneTargets& t = *targets[b];

      Eigen::MatrixXd d_heat(classes, cache.heat.cols());
      for (Eigen::Index j = 0; j < cache.heat.cols(); ++j)
        for (int c = 0; c < classes; ++c) {
          const double y = t.y(c, j);
          const double p = std::clamp(cache.heat(c, j), kScoreFloor, kScoreCeil);
          const double w = y >= 0.5 ? cfg.pos_weight : 1.0;
          d_heat(c, j) = w * (p - y) / (p * (1.0 - p) * det_count);
        }

      std::vector<Eigen::MatrixXd> d_emb;
      if (m.flags.reg_loss && reg_den > 0.0) {
        d_emb.resize(classes);
        const double scale = 2.0 * cfg.reg_weight / reg_den;
        for (int c = 0; c < classes; ++c) {
          const Eigen::MatrixXd diff =
              cache.embeddings[c].colwise() - m.centroids.centroids.col(c);
          d_emb[c] = diff.array().rowwise() * (t.y_pow.row(c).array() * scale);
        }
      }

      Eigen::MatrixXd d_dims = Eigen::MatrixXd::Zero(2, cache.dims.cols());
      for (Eigen::Index j = 0; j < cache.dims.cols(); ++j) {
        if (!t.mask[j]) continue;
        for (int k = 0; k < 2; ++k) {
          const double d = cache.dims(k, j) - t.dims(k, j);
          d_dims(k, j) =
              cfg.dims_weight * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / dims_n;
        }
      }

      backward(m, cache, &d_heat, d_emb.empty() ? nullptr : &d_emb, &d_dims, *grads);
    }
  }

  if (caches_out) *caches_out = std::move(caches);
  return loss;
}

// ---------------------------------------------------------------------------
// config and loop

void TrainConfig::validate() const {
  if (epochs < 1) throw DataError("train config: epochs must be >= 1");
  if (freeze_epochs < 0) throw DataError("train config: freeze_epochs must be >= 0");
  if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
  if (lr <= 0) throw DataError("train config: lr must be positive");
  if (lambda < 1.0) throw DataError("train config: lambda must be >= 1");
  if (reg_weight < 0 || dims_weight < 0 || pos_weight < 1)
    throw DataError("train config: loss weights out of range");
  if (sigma_min <= 0 || sigma0 < sigma_min)
    throw DataError("train config: need sigma0 >= sigma_min > 0");
  if (sigma_decay <= 0 || sigma_decay > 1)
    throw DataError("train config: sigma_decay must be in (0,1]");
  if (gamma_schedule.empty() || gamma_schedule.front().first != 0)
    throw DataError("train config: gamma schedule must start at epoch 0");
  int prev = -1;
  for (const auto& [e, v] : gamma_schedule) {
    if (e <= prev) throw DataError("train config: gamma schedule epochs must increase");
    if (v < 0 || v > 1) throw DataError("train config: gamma values must be in [0,1]");
    prev = e;
  }
}

TrainConfig TrainConfig::from_keyvalues(const KeyValues& kv) {
  kv.require_known({"epochs", "freeze_epochs", "batch_size", "lr", "lr_decay_epochs",
                    "lr_decay_factor", "lambda", "gamma_schedule", "sigma0", "sigma_min",
                    "sigma_decay", "reg_weight", "dims_weight", "pos_weight",
                    "hyperspace_dim", "channels", "conv_strides", "flags"});
  TrainConfig cfg;
  cfg.epochs = kv.get_int_or("epochs", cfg.epochs);
  cfg.freeze_epochs = kv.get_int_or("freeze_epochs", cfg.freeze_epochs);
  cfg.batch_size = kv.get_int_or("batch_size", cfg.batch_size);
  cfg.lr = kv.get_double_or("lr", cfg.lr);
  cfg.lr_decay_epochs = kv.get_int_list_or("lr_decay_epochs", cfg.lr_decay_epochs);
  cfg.lr_decay_factor = kv.get_double_or("lr_decay_factor", cfg.lr_decay_factor);
  cfg.lambda = kv.get_double_or("lambda", cfg.lambda);
  cfg.gamma_schedule = kv.get_schedule_or("gamma_schedule", cfg.gamma_schedule);
  cfg.sigma0 = kv.get_double_or("sigma0", cfg.sigma0);
  cfg.sigma_min = kv.get_double_or("sigma_min", cfg.sigma_min);
  cfg.sigma_decay = kv.get_double_or("sigma_decay", cfg.sigma_decay);
  cfg.reg_weight = kv.get_double_or("reg_weight", cfg.reg_weight);
  cfg.dims_weight = kv.get_double_or("dims_weight", cfg.dims_weight);
  cfg.pos_weight = kv.get_double_or("pos_weight", cfg.pos_weight);
  cfg.model.hyperspace_dim = kv.get_int_or("hyperspace_dim", cfg.model.hyperspace_dim);
  cfg.model.channels = kv.get_int_list_or("channels", cfg.model.channels);
  cfg.model.strides = kv.get_int_list_or("conv_strides", cfg.model.strides);
  if (kv.has("flags")) {
    TrainFlags f;
    f.reg_loss = f.balanced_update = f.outlier_protection = false;
    f.momentum_schedule = f.sigma_annealing = f.freeze_final = false;
    std::string raw = kv.get_string("flags");
    size_t pos = 0;
    while (pos <= raw.size()) {
      size_t comma = raw.find(',', pos);
      std::string tok = raw.substr(pos, comma == std::string::npos ? comma : comma - pos);
      tok.erase(0, tok.find_first_not_of(" \t"));
      tok.erase(tok.find_last_not_of(" \t") + 1);
      if (tok == "reg_loss") f.reg_loss = true;
      else if (tok == "balanced_update") f.balanced_update = true;
      else if (tok == "outlier_protection") f.outlier_protection = true;
      else if (tok == "momentum_schedule") f.momentum_schedule = true;
      else if (tok == "sigma_annealing") f.sigma_annealing = true;
      else if (tok == "freeze_final") f.freeze_final = true;
      else if (tok == "none" || tok.empty()) {}
      else throw DataError(kv.origin() + ": unknown training flag '" + tok + "'");
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    cfg.flags = f;
  }
  cfg.model.sigma0 = cfg.sigma0;
  cfg.model.gamma0 = cfg.gamma_schedule.front().second;
  cfg.validate();
  return cfg;
}

namespace {

// Per-class EMA state. The balanced update renormalizes each batch before
// mixing; the plain variant keeps separate value/count EMAs the way the
// original single-image classifier did, which lets batch composition leak
// into the effective step size.
struct CentroidTracker {
  bool balanced = true;
  Eigen::MatrixXd value_ema;      // plain update: EMA of weighted sums
  Eigen::VectorXd count_ema;      // plain update: EMA of weight totals
  double last_drift = 0.0;

  void init(const Model& m) {
    value_ema = m.centroids.centroids;
    count_ema = Eigen::VectorXd::Ones(m.classes());
  }

  void step(Model& m, const std::vector<ForwardCache>& caches,
            const std::vector<const SceneTargets*>& targets, double gamma, double sigma,
            bool outlier_protection) {
    const int classes = m.classes();
    const Eigen::MatrixXd before = m.centroids.centroids;
    for (int c = 0; c < classes; ++c) {
      Eigen::VectorXd num = Eigen::VectorXd::Zero(m.hyperspace_dim());
      double den = 0.0;
      for (size_t b = 0; b < caches.size(); ++b)
        centroid_sums(caches[b].embeddings[c], targets[b]->y_pow.row(c), before.col(c),
                      sigma, outlier_protection, num, den);
      if (balanced) {
        if (den > 0.0)
          m.centroids.centroids.col(c) = gamma * before.col(c) + (1.0 - gamma) * (num / den);
      } else {
        value_ema.col(c) = gamma * value_ema.col(c) + (1.0 - gamma) * num;
        count_ema[c] = gamma * count_ema[c] + (1.0 - gamma) * den;
        if (count_ema[c] > 0.0)
          m.centroids.centroids.col(c) = value_ema.col(c) / count_ema[c];
      }
    }
    double drift = 0.0;
    for (int c = 0; c < classes; ++c)
      drift += (m.centroids.centroids.col(c) - before.col(c)).norm();
    last_drift = drift / classes;
  }
};

}  // namespace

TrainResult train(const Dataset& data, const TrainConfig& cfg_in, uint64_t seed) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  if (data.scenes.empty()) throw DataError("train: dataset has no scenes");
  cfg.model.classes = data.classes;
  cfg.model.sigma0 = cfg.sigma0;
  cfg.model.gamma0 = cfg.gamma_schedule.front().second;

  Rng init_rng(seed, 0);
  Model model = Model::make(cfg.model, init_rng);
  model.flags = cfg.flags;

  // Output lattice geometry falls out of the conv arithmetic.
  int rows = data.height, cols = data.width;
  for (const auto& st : model.features.stages) {
    rows = detail::conv_out_extent(rows, st.stride);
    cols = detail::conv_out_extent(cols, st.stride);
  }
  const int stride = model.stride();

  std::vector<SceneTargets> targets;
  targets.reserve(data.scenes.size());
  for (const Scene& s : data.scenes)
    targets.push_back(
        stack_targets(splat_ground_truth(s.objects, data.classes, rows, cols, stride),
                      cfg.lambda));
  std::vector<ScalarGrid> images;
  images.reserve(data.scenes.size());
  for (const Scene& s : data.scenes) images.push_back(s.image.cast<double>());

  Eigen::VectorXd theta = flatten_parameters(model);
  const Eigen::VectorXi groups = parameter_groups(model);
  Eigen::VectorXi proj_only(groups.size());
  for (Eigen::Index i = 0; i < groups.size(); ++i) proj_only[i] = groups[i] == 1 ? 1 : 0;
  AdamState opt(theta.size());

  CentroidTracker tracker;
  tracker.balanced = cfg.flags.balanced_update;
  tracker.init(model);

  const int total_epochs = cfg.epochs + (cfg.flags.freeze_final ? cfg.freeze_epochs : 0);
  std::vector<TraceRow> trace;
  trace.reserve(total_epochs);
  long step = 0;

  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const bool frozen = cfg.flags.freeze_final && epoch >= cfg.epochs;
    const double gamma = cfg.flags.momentum_schedule
                             ? schedule_momentum(epoch, cfg.gamma_schedule)
                             : cfg.gamma_schedule.front().second;
    double lr = cfg.lr;
    for (int de : cfg.lr_decay_epochs)
      if (epoch >= de) lr *= cfg.lr_decay_factor;

    std::vector<int> order(data.scenes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(seed, 1000 + static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double ep_det = 0, ep_reg = 0, ep_dims = 0, ep_drift = 0;
    double ep_sigma = model.centroids.length_scale;
    long ep_steps = 0;

    for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const size_t end = std::min(order.size(), at + cfg.batch_size);
      const double sigma = cfg.flags.sigma_annealing
                               ? anneal_length_scale(step, cfg.sigma0, cfg.sigma_decay,
                                                     cfg.sigma_min)
                               : cfg.sigma_min;
      model.centroids.length_scale = sigma;
      ep_sigma = sigma;

      std::vector<const ScalarGrid*> batch_images;
      std::vector<const SceneTargets*> batch_targets;
      for (size_t i = at; i < end; ++i) {
        batch_images.push_back(&images[order[i]]);
        batch_targets.push_back(&targets[order[i]]);
      }

      ModelGrads grads = ModelGrads::zeros_like(model);
      std::vector<ForwardCache> caches;
      const LossBreakdown loss =
          batch_loss(model, batch_images, batch_targets, cfg, &grads, &caches);

      if (!std::isfinite(loss.total))
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                              " step " + std::to_string(step) + " (detection=" +
                              std::to_string(loss.detection) + ", regularization=" +
                              std::to_string(loss.regularization) + ", dims=" +
                              std::to_string(loss.dims) + ")");

      const Eigen::VectorXd grad = flatten_gradients(model, grads);
      opt.step(theta, grad, lr, frozen ? &proj_only : nullptr);
      set_flat_parameters(model, theta);

      tracker.step(model, caches, batch_targets, gamma, sigma, cfg.flags.outlier_protection);

      ep_det += loss.detection;
      ep_reg += loss.regularization;
      ep_dims += loss.dims;
      ep_drift += tracker.last_drift;
      ++ep_steps;
      ++step;
    }

    model.centroids.momentum = gamma;
    TraceRow row;
    row.epoch = epoch;
    row.step = step;
    row.det_loss = ep_det / ep_steps;
    row.reg_loss = ep_reg / ep_steps;
    row.dims_loss = ep_dims / ep_steps;
    row.sigma = ep_sigma;
    row.gamma = gamma;
    row.centroid_drift = ep_drift / ep_steps;
    trace.push_back(row);
    log::info("epoch " + std::to_string(epoch) + (frozen ? " (frozen)" : "") +
              ": det=" + std::to_string(row.det_loss) + " reg=" + std::to_string(row.reg_loss) +
              " dims=" + std::to_string(row.dims_loss) + " sigma=" + std::to_string(row.sigma) +
              " gamma=" + std::to_string(row.gamma));
  }

  return {std::move(model), std::move(trace)};
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::string out = "epoch,step,det_loss,reg_loss,dims_loss,sigma,gamma,centroid_drift\n";
  char buf[256];
  for (const TraceRow& r : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.epoch,
                  r.step, r.det_loss, r.reg_loss, r.dims_loss, r.sigma, r.gamma,
                  r.centroid_drift);
    out += buf;
  }
  return out;
}

}  // namespace certainnet
