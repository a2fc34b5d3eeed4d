#include "certainnet/model.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "certainnet/conv.hpp"
#include "certainnet/errors.hpp"

namespace certainnet {

using nlohmann::json;

TrainFlags TrainFlags::ablation(int level) {
  if (level < 0 || level > 6)
    throw std::invalid_argument("ablation level must be in [0, 6]");
  TrainFlags f;
  f.reg_loss = level >= 1;
  f.balanced_update = level >= 2;
  f.outlier_protection = level >= 3;
  f.momentum_schedule = level >= 4;
  f.sigma_annealing = level >= 5;
  f.freeze_final = level >= 6;
  return f;
}

std::string TrainFlags::describe() const {
  std::string s;
  auto add = [&s](bool on, const char* name) {
    if (!s.empty()) s += ",";
    s += name;
    s += on ? "=on" : "=off";
  };
  add(reg_loss, "reg_loss");
  add(balanced_update, "balanced_update");
  add(outlier_protection, "outlier_protection");
  add(momentum_schedule, "momentum_schedule");
  add(sigma_annealing, "sigma_annealing");
  add(freeze_final, "freeze_final");
  return s;
}

Model Model::make(const ModelConfig& cfg, Rng& rng) {
  if (cfg.channels.size() != cfg.strides.size() || cfg.channels.empty())
    throw std::invalid_argument("model config: channels/strides must be non-empty and equal length");
  if (cfg.classes < 1 || cfg.hyperspace_dim < 1)
    throw std::invalid_argument("model config: classes and hyperspace_dim must be positive");

  Model m;
  int in_ch = cfg.input_channels;
  for (size_t i = 0; i < cfg.channels.size(); ++i) {
    ConvStage st;
    st.in_channels = in_ch;
    st.out_channels = cfg.channels[i];
    st.stride = cfg.strides[i];
    const double scale = std::sqrt(2.0 / (9.0 * in_ch));
    st.weight.resize(st.out_channels, 9 * in_ch);
    for (Eigen::Index r = 0; r < st.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < st.weight.cols(); ++c)
        st.weight(r, c) = scale * rng.normal();
    st.bias = Eigen::VectorXd::Zero(st.out_channels);
    m.features.stages.push_back(std::move(st));
    in_ch = cfg.channels[i];
  }

  const int feat = in_ch;
  const double proj_scale = std::sqrt(1.0 / feat);
  m.projector.weights.resize(cfg.classes);
  for (auto& w : m.projector.weights) {
    w.resize(cfg.hyperspace_dim, feat);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = proj_scale * rng.normal();
  }

  m.dims_head.weight.resize(2, feat);
  for (Eigen::Index r = 0; r < 2; ++r)
    for (Eigen::Index c = 0; c < feat; ++c)
      m.dims_head.weight(r, c) = proj_scale * rng.normal();
  // Bias the size head into the plausible range so early L1 gradients are not
  // uniformly "grow".
  m.dims_head.bias = Eigen::VectorXd::Constant(2, 10.0);

  m.centroids.centroids.resize(cfg.hyperspace_dim, cfg.classes);
  for (Eigen::Index r = 0; r < m.centroids.centroids.rows(); ++r)
    for (Eigen::Index c = 0; c < m.centroids.centroids.cols(); ++c)
      m.centroids.centroids(r, c) = cfg.sigma0 * rng.normal();
  m.centroids.length_scale = cfg.sigma0;
  m.centroids.momentum = cfg.gamma0;
  return m;
}

VectorGrid project_features(const VectorGrid& features, const HyperspaceProjector& proj,
                            int class_id) {
  if (class_id < 0 || class_id >= proj.classes())
    throw std::out_of_range("project_features: class id out of range");
  const Eigen::MatrixXd& w = proj.weights[class_id];
  if (w.cols() != features.data.rows())
    throw std::invalid_argument("project_features: feature dimension mismatch");
  VectorGrid out;
  out.rows = features.rows;
  out.cols = features.cols;
  out.data = w * features.data;
  return out;
}

ForwardCache forward_cache(const Model& m, const Eigen::Ref<const ScalarGrid>& image) {
  if (!m.initialized())
    throw std::logic_error("forward: model parameters not initialized");
  if (image.rows() < 1 || image.cols() < 1)
    throw std::invalid_argument("forward: empty image");

  ForwardCache cache;
  int rows = static_cast<int>(image.rows());
  int cols = static_cast<int>(image.cols());

  // Image as a 1-channel feature map with row-major cells.
  Eigen::MatrixXd cur(1, static_cast<Eigen::Index>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      cur(0, static_cast<Eigen::Index>(r) * cols + c) = image(r, c);

  for (const ConvStage& st : m.features.stages) {
    cache.stage_inputs.push_back(cur);
    cache.stage_shapes.emplace_back(rows, cols);
    Eigen::MatrixXd patches = detail::im2col(cur, rows, cols, st.stride);
    Eigen::MatrixXd pre = st.weight * patches;
    pre.colwise() += st.bias;
    cache.stage_preact.push_back(pre);
    cur = pre.unaryExpr([](double v) { return detail::elu(v); });
    rows = detail::conv_out_extent(rows, st.stride);
    cols = detail::conv_out_extent(cols, st.stride);
  }

  cache.rows = rows;
  cache.cols = cols;
  cache.features = std::move(cur);

  const int n_cls = m.classes();
  cache.embeddings.resize(n_cls);
  cache.heat.resize(n_cls, cache.features.cols());
  const double sigma = m.centroids.length_scale;
  const double dim = static_cast<double>(m.hyperspace_dim());
  const double inv = 1.0 / (2.0 * dim * sigma * sigma);
  for (int c = 0; c < n_cls; ++c) {
    cache.embeddings[c] = m.projector.weights[c] * cache.features;
    Eigen::RowVectorXd d2 = (cache.embeddings[c].colwise() - m.centroids.centroids.col(c))
                                .colwise()
                                .squaredNorm();
    cache.heat.row(c) = (-d2 * inv).array().exp();
  }

  cache.dims_pre = m.dims_head.weight * cache.features;
  cache.dims_pre.colwise() += m.dims_head.bias;
  cache.dims = cache.dims_pre.unaryExpr([](double v) { return detail::softplus(v); });
  return cache;
}

HeadOutputs forward(const Model& m, const ScalarGrid& image) {
  ForwardCache cache = forward_cache(m, image);
  HeadOutputs out;
  out.rows = cache.rows;
  out.cols = cache.cols;
  out.stride = m.stride();
  out.class_heatmaps.reserve(m.classes());
  for (int c = 0; c < m.classes(); ++c)
    out.class_heatmaps.push_back(
        flat_to_grid(cache.heat.row(c).transpose(), cache.rows, cache.cols));
  out.dims_map.rows = cache.rows;
  out.dims_map.cols = cache.cols;
  out.dims_map.data = cache.dims;
  out.embedding_maps.reserve(m.classes());
  for (int c = 0; c < m.classes(); ++c) {
    VectorGrid g;
    g.rows = cache.rows;
    g.cols = cache.cols;
    g.data = cache.embeddings[c];
    out.embedding_maps.push_back(std::move(g));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
//
// Layout: magic line, uint64 little-endian JSON header length, JSON header
// (architecture, sigma/gamma, flags, tensor manifest), then raw float64
// tensor payloads in manifest order.

namespace {

constexpr char kMagic[] = "CERTAINNET-CKPT-v1\n";

struct TensorRef {
  std::string name;
  const Eigen::MatrixXd* mat = nullptr;
  const Eigen::VectorXd* vec = nullptr;
};

std::vector<TensorRef> tensor_manifest(const Model& m) {
  std::vector<TensorRef> t;
  for (size_t i = 0; i < m.features.stages.size(); ++i) {
    t.push_back({"conv" + std::to_string(i) + ".weight", &m.features.stages[i].weight, nullptr});
    t.push_back({"conv" + std::to_string(i) + ".bias", nullptr, &m.features.stages[i].bias});
  }
  for (size_t c = 0; c < m.projector.weights.size(); ++c)
    t.push_back({"proj" + std::to_string(c) + ".weight", &m.projector.weights[c], nullptr});
  t.push_back({"dims.weight", &m.dims_head.weight, nullptr});
  t.push_back({"dims.bias", nullptr, &m.dims_head.bias});
  t.push_back({"centroids", &m.centroids.centroids, nullptr});
  return t;
}

void write_doubles(std::ofstream& out, const double* data, size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
}

}  // namespace

void save_checkpoint(const Model& m, const std::string& path) {
  if (!m.initialized()) throw std::logic_error("save_checkpoint: model not initialized");

  json header;
  header["input_channels"] = m.features.stages[0].in_channels;
  json channels = json::array(), strides = json::array();
  for (const auto& st : m.features.stages) {
    channels.push_back(st.out_channels);
    strides.push_back(st.stride);
  }
  header["channels"] = channels;
  header["conv_strides"] = strides;
  header["hyperspace_dim"] = m.hyperspace_dim();
  header["classes"] = m.classes();
  header["stride"] = m.stride();
  header["sigma"] = m.centroids.length_scale;
  header["gamma"] = m.centroids.momentum;
  header["flags"] = {{"reg_loss", m.flags.reg_loss},
                     {"balanced_update", m.flags.balanced_update},
                     {"outlier_protection", m.flags.outlier_protection},
                     {"momentum_schedule", m.flags.momentum_schedule},
                     {"sigma_annealing", m.flags.sigma_annealing},
                     {"freeze_final", m.flags.freeze_final}};
  json tensors = json::array();
  for (const auto& t : tensor_manifest(m)) {
    const Eigen::Index rows = t.mat ? t.mat->rows() : t.vec->size();
    const Eigen::Index cols = t.mat ? t.mat->cols() : 1;
    tensors.push_back({t.name, rows, cols});
  }
  header["tensors"] = tensors;

  const std::string head = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic) - 1);
  const uint64_t len = head.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& t : tensor_manifest(m)) {
    if (t.mat)
      write_doubles(out, t.mat->data(), static_cast<size_t>(t.mat->size()));
    else
      write_doubles(out, t.vec->data(), static_cast<size_t>(t.vec->size()));
  }
  if (!out) throw DataError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint: " + path);

  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw DataError(path + ": not a CERTAINNET-CKPT-v1 checkpoint (bad magic, expected schema v1)");

  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ull << 30))
    throw DataError(path + ": corrupt checkpoint header length");
  std::string head(len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path + ": truncated checkpoint header");

  json header;
  try {
    header = json::parse(head);
  } catch (const json::exception& e) {
    throw DataError(path + ": corrupt checkpoint header: " + e.what());
  }

  Model m;
  try {
    const int input_channels = header.at("input_channels").get<int>();
    const auto channels = header.at("channels").get<std::vector<int>>();
    const auto strides = header.at("conv_strides").get<std::vector<int>>();
    const int dim = header.at("hyperspace_dim").get<int>();
    const int classes = header.at("classes").get<int>();
    m.centroids.length_scale = header.at("sigma").get<double>();
    m.centroids.momentum = header.at("gamma").get<double>();
    const json& fl = header.at("flags");
    m.flags.reg_loss = fl.at("reg_loss").get<bool>();
    m.flags.balanced_update = fl.at("balanced_update").get<bool>();
    m.flags.outlier_protection = fl.at("outlier_protection").get<bool>();
    m.flags.momentum_schedule = fl.at("momentum_schedule").get<bool>();
    m.flags.sigma_annealing = fl.at("sigma_annealing").get<bool>();
    m.flags.freeze_final = fl.at("freeze_final").get<bool>();

    int in_ch = input_channels;
    for (size_t i = 0; i < channels.size(); ++i) {
      ConvStage st;
      st.in_channels = in_ch;
      st.out_channels = channels[i];
      st.stride = strides.at(i);
      m.features.stages.push_back(std::move(st));
      in_ch = channels[i];
    }
    m.projector.weights.resize(classes);
    m.centroids.centroids.resize(dim, classes);
  } catch (const json::exception& e) {
    throw DataError(path + ": checkpoint header missing fields: " + e.what());
  }

  auto read_tensor = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols,
                         double* dst) {
    const std::streamsize bytes =
        static_cast<std::streamsize>(rows * cols * sizeof(double));
    in.read(reinterpret_cast<char*>(dst), bytes);
    if (!in)
      throw DataError(path + ": truncated tensor '" + name + "' at offset " +
                      std::to_string(static_cast<long long>(in.tellg())));
  };

  const auto tensors = header.at("tensors");
  size_t idx = 0;
  auto expect = [&](const std::string& name) -> std::pair<Eigen::Index, Eigen::Index> {
    if (idx >= tensors.size())
      throw DataError(path + ": tensor manifest missing entry for '" + name + "'");
    const auto& entry = tensors[idx++];
    if (entry.at(0).get<std::string>() != name)
      throw DataError(path + ": unexpected tensor order, wanted '" + name + "', got '" +
                      entry.at(0).get<std::string>() + "'");
    return {entry.at(1).get<Eigen::Index>(), entry.at(2).get<Eigen::Index>()};
  };

  for (size_t i = 0; i < m.features.stages.size(); ++i) {
    auto& st = m.features.stages[i];
    auto [wr, wc] = expect("conv" + std::to_string(i) + ".weight");
    st.weight.resize(wr, wc);
    read_tensor("conv weight", wr, wc, st.weight.data());
    auto [br, bc] = expect("conv" + std::to_string(i) + ".bias");
    (void)bc;
    st.bias.resize(br);
    read_tensor("conv bias", br, 1, st.bias.data());
  }
  for (size_t c = 0; c < m.projector.weights.size(); ++c) {
    auto [r, cc] = expect("proj" + std::to_string(c) + ".weight");
    m.projector.weights[c].resize(r, cc);
    read_tensor("projection", r, cc, m.projector.weights[c].data());
  }
  {
    auto [r, cc] = expect("dims.weight");
    m.dims_head.weight.resize(r, cc);
    read_tensor("dims weight", r, cc, m.dims_head.weight.data());
  }
  {
    auto [r, cc] = expect("dims.bias");
    (void)cc;
    m.dims_head.bias.resize(r);
    read_tensor("dims bias", r, 1, m.dims_head.bias.data());
  }
  {
    auto [r, cc] = expect("centroids");
    m.centroids.centroids.resize(r, cc);
    read_tensor("centroids", r, cc, m.centroids.centroids.data());
  }
  return m;
}

}  // namespace certainnet
