#include "certainnet/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "certainnet/errors.hpp"
#include "certainnet/training.hpp"
#include "json.hpp"

namespace certainnet {

using nlohmann::json;

void DecodeConfig::validate() const {
  if (!(peak_threshold > 0.0 && peak_threshold < 1.0))
    throw std::invalid_argument("DecodeConfig: peak_threshold must be in (0, 1)");
  if (eta < 0.0) throw std::invalid_argument("DecodeConfig: eta must be >= 0");
  if (boundary_scale <= 0.0)
    throw std::invalid_argument("DecodeConfig: boundary_scale must be positive");
  if (!(min_overlap > 0.0 && min_overlap < 1.0))
    throw std::invalid_argument("DecodeConfig: min_overlap must be in (0, 1)");
  if (min_window_radius < 0)
    throw std::invalid_argument("DecodeConfig: min_window_radius must be >= 0");
}

std::vector<Peak> extract_peaks(const std::vector<ScalarGrid>& class_heatmaps,
                                double threshold) {
  std::vector<Peak> peaks;
  for (int cls = 0; cls < static_cast<int>(class_heatmaps.size()); ++cls) {
    const ScalarGrid& h = class_heatmaps[cls];
    const int rows = static_cast<int>(h.rows());
    const int cols = static_cast<int>(h.cols());
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const double v = h(r, c);
        if (v < threshold) continue;
        bool is_max = true;
        for (int dr = -1; dr <= 1 && is_max; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc == 0) continue;
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
            if (h(rr, cc) > v) {
              is_max = false;
              break;
            }
          }
        }
        if (is_max) peaks.push_back(Peak{r, c, cls, v});
      }
    }
  }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.row != b.row) return a.row < b.row;
    if (a.col != b.col) return a.col < b.col;
    return a.class_id < b.class_id;
  });
  return peaks;
}

std::pair<double, double> location_uncertainty(const ScalarGrid& heatmap, int row,
                                               int col, double w, double h, double eta,
                                               int window_radius, int stride) {
  if (w <= 0.0 || h <= 0.0)
    throw std::invalid_argument("location_uncertainty: predicted size must be positive");
  const int rows = static_cast<int>(heatmap.rows());
  const int cols = static_cast<int>(heatmap.cols());
  double num_x = 0.0, den_x = 0.0, num_y = 0.0, den_y = 0.0;
  for (int r = std::max(0, row - window_radius);
       r <= std::min(rows - 1, row + window_radius); ++r) {
    for (int c = std::max(0, col - window_radius);
         c <= std::min(cols - 1, col + window_radius); ++c) {
      const double p = heatmap(r, c);
      const int dr = r - row, dc = c - col;
      if (dr == 0 && dc == 0) {
        // Angle is undefined at the peak itself: full weight, zero offset.
        den_x += p;
        den_y += p;
        continue;
      }
      const double norm = std::sqrt(static_cast<double>(dr * dr + dc * dc));
      const double wx = std::pow(std::abs(dc) / norm, eta);
      const double wy = std::pow(std::abs(dr) / norm, eta);
      const double ox = dc * static_cast<double>(stride);
      const double oy = dr * static_cast<double>(stride);
      num_x += ox * ox * p * wx;
      den_x += p * wx;
      num_y += oy * oy * p * wy;
      den_y += p * wy;
    }
  }
  const double var_x = den_x > 0.0 ? num_x / den_x : 0.0;
  const double var_y = den_y > 0.0 ? num_y / den_y : 0.0;
  return {std::sqrt(var_x) / w, std::sqrt(var_y) / h};
}

std::pair<double, double> dimension_uncertainty(const ScalarGrid& dims_w,
                                                const ScalarGrid& dims_h,
                                                const ScalarGrid& heatmap, int row,
                                                int col, double w, double h,
                                                int window_radius) {
  if (w <= 0.0 || h <= 0.0)
    throw std::invalid_argument(
        "dimension_uncertainty: predicted size must be positive");
  const int rows = static_cast<int>(heatmap.rows());
  const int cols = static_cast<int>(heatmap.cols());
  double num_w = 0.0, num_h = 0.0, den = 0.0;
  for (int r = std::max(0, row - window_radius);
       r <= std::min(rows - 1, row + window_radius); ++r) {
    for (int c = std::max(0, col - window_radius);
         c <= std::min(cols - 1, col + window_radius); ++c) {
      const double p = heatmap(r, c);
      const double dw = w - dims_w(r, c);
      const double dh = h - dims_h(r, c);
      num_w += p * dw * dw;
      num_h += p * dh * dh;
      den += p;
    }
  }
  if (den <= 0.0) return {0.0, 0.0};
  return {std::sqrt(num_w / den) / w, std::sqrt(num_h / den) / h};
}

double class_uncertainty(const std::vector<double>& class_scores) {
  if (class_scores.empty())
    throw std::invalid_argument("class_uncertainty: no class scores");
  std::vector<double> s = class_scores;
  std::sort(s.begin(), s.end(), std::greater<double>());
  if (s[0] <= 0.0)
    throw std::invalid_argument("class_uncertainty: top score must be positive");
  double u = 0.0;
  // The rank-1 term is the top score against itself (ratio 1), carrying no
  // ambiguity evidence, so accumulation starts at rank 2.
  for (size_t i = 2; i <= s.size(); ++i) {
    const double ratio = s[i - 1] / s[0];
    u += (1.0 - u) * std::pow(ratio, static_cast<double>(i));
  }
  return std::clamp(u, 0.0, 1.0);
}

std::pair<Box, Box> boundaries_from(double cx, double cy, double w, double h,
                                    double u_x, double u_y, double u_w, double u_h,
                                    double k) {
  const double sx = k * u_x * w + k * u_w * w / 2.0;
  const double sy = k * u_y * h + k * u_h * h / 2.0;
  Box outer = Box::from_center(cx, cy, w + 2.0 * sx, h + 2.0 * sy);
  Box inner = Box::from_center(cx, cy, std::max(0.0, w - 2.0 * sx),
                               std::max(0.0, h - 2.0 * sy));
  return {inner, outer};
}

std::pair<Box, Box> uncertainty_boundaries(const Detection& det, double k) {
  return boundaries_from(det.cx, det.cy, det.w, det.h, det.u_x, det.u_y, det.u_w,
                         det.u_h, k);
}

std::vector<Detection> decode(const HeadOutputs& outputs, const DecodeConfig& cfg) {
  cfg.validate();
  if (outputs.class_heatmaps.empty())
    throw std::invalid_argument("decode: no class heatmaps");
  const ScalarGrid dims_w = outputs.dims_map.channel(0);
  const ScalarGrid dims_h = outputs.dims_map.channel(1);
  const auto peaks = extract_peaks(outputs.class_heatmaps, cfg.peak_threshold);

  std::vector<Detection> dets;
  dets.reserve(peaks.size());
  std::vector<double> scores_at(outputs.class_heatmaps.size());
  for (const auto& pk : peaks) {
    Detection d;
    d.class_id = pk.class_id;
    d.score = pk.score;
    d.u_obj = objectness_uncertainty(pk.score);
    d.w = dims_w(pk.row, pk.col);
    d.h = dims_h(pk.row, pk.col);
    if (d.w <= 0.0 || d.h <= 0.0) continue;
    d.cx = (pk.col + 0.5) * outputs.stride;
    d.cy = (pk.row + 0.5) * outputs.stride;

    const double r_cells = gaussian_radius(d.h / outputs.stride,
                                           d.w / outputs.stride, cfg.min_overlap);
    const int wr =
        std::max(cfg.min_window_radius, static_cast<int>(std::floor(r_cells)));

    const ScalarGrid& heat = outputs.class_heatmaps[pk.class_id];
    std::tie(d.u_x, d.u_y) =
        location_uncertainty(heat, pk.row, pk.col, d.w, d.h, cfg.eta, wr,
                             outputs.stride);
    std::tie(d.u_w, d.u_h) =
        dimension_uncertainty(dims_w, dims_h, heat, pk.row, pk.col, d.w, d.h, wr);

    for (size_t k = 0; k < outputs.class_heatmaps.size(); ++k)
      scores_at[k] = outputs.class_heatmaps[k](pk.row, pk.col);
    d.u_cls = class_uncertainty(scores_at);

    std::tie(d.inner_box, d.outer_box) =
        boundaries_from(d.cx, d.cy, d.w, d.h, d.u_x, d.u_y, d.u_w, d.u_h,
                        cfg.boundary_scale);
    dets.push_back(d);
  }
  return dets;
}

namespace {

json box_to_json(const Box& b) { return json::array({b.x, b.y, b.w, b.h}); }

Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4)
    throw std::runtime_error("box must be an array [x, y, w, h]");
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
             j[3].get<double>()};
}

[[noreturn]] void record_error(const std::string& path, size_t record,
                               const std::string& what, const char* schema) {
  throw DataError(path + ": record " + std::to_string(record) + ": " + what + " (" +
                  schema + ")");
}

}  // namespace

void write_detections_jsonl(const std::string& path,
                            const std::vector<Detection>& dets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  for (const auto& d : dets) {
    const Box b = d.box();
    json j{{"image_id", d.image_id}, {"class", d.class_id},
           {"score", d.score},       {"box", box_to_json(b)},
           {"u_obj", d.u_obj},       {"u_x", d.u_x},
           {"u_y", d.u_y},           {"u_w", d.u_w},
           {"u_h", d.u_h},           {"u_cls", d.u_cls},
           {"inner_box", box_to_json(d.inner_box)},
           {"outer_box", box_to_json(d.outer_box)}};
    out << j.dump() << "\n";
  }
  if (!out) throw DataError("failed while writing " + path);
}

std::vector<Detection> read_detections_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open detections file " + path);
  std::vector<Detection> dets;
  std::string line;
  size_t rec = 0;
  const char* schema = "detections schema v1";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rec;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      record_error(path, rec, std::string("malformed JSON: ") + e.what(), schema);
    }
    try {
      Detection d;
      d.image_id = j.at("image_id").get<int>();
      d.class_id = j.at("class").get<int>();
      d.score = j.at("score").get<double>();
      const Box b = box_from_json(j.at("box"));
      d.cx = b.cx();
      d.cy = b.cy();
      d.w = b.w;
      d.h = b.h;
      d.u_obj = j.at("u_obj").get<double>();
      d.u_x = j.at("u_x").get<double>();
      d.u_y = j.at("u_y").get<double>();
      d.u_w = j.at("u_w").get<double>();
      d.u_h = j.at("u_h").get<double>();
      d.u_cls = j.at("u_cls").get<double>();
      d.inner_box = box_from_json(j.at("inner_box"));
      d.outer_box = box_from_json(j.at("outer_box"));
      dets.push_back(d);
    } catch (const std::exception& e) {
      record_error(path, rec, e.what(), schema);
    }
  }
  return dets;
}

HeatmapDump dump_from_outputs(int image_id, const HeadOutputs& outputs) {
  HeatmapDump d;
  d.image_id = image_id;
  d.stride = outputs.stride;
  d.rows = outputs.rows;
  d.cols = outputs.cols;
  d.class_heatmaps = outputs.class_heatmaps;
  d.dims_w = outputs.dims_map.channel(0);
  d.dims_h = outputs.dims_map.channel(1);
  return d;
}

HeadOutputs outputs_from_dump(const HeatmapDump& dump) {
  HeadOutputs out;
  out.rows = dump.rows;
  out.cols = dump.cols;
  out.stride = dump.stride;
  out.class_heatmaps = dump.class_heatmaps;
  out.dims_map = VectorGrid(2, dump.rows, dump.cols);
  for (int r = 0; r < dump.rows; ++r) {
    for (int c = 0; c < dump.cols; ++c) {
      auto cell = out.dims_map.cell(r, c);
      cell(0) = dump.dims_w(r, c);
      cell(1) = dump.dims_h(r, c);
    }
  }
  return out;
}

namespace {

json grid_flat_json(const ScalarGrid& g) {
  json a = json::array();
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c) a.push_back(g(r, c));
  return a;
}

ScalarGrid grid_from_flat_json(const json& a, int rows, int cols) {
  if (!a.is_array() || a.size() != static_cast<size_t>(rows) * cols)
    throw std::runtime_error("grid array size does not match rows*cols");
  ScalarGrid g(rows, cols);
  size_t i = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) g(r, c) = a[i++].get<double>();
  return g;
}

}  // namespace

void write_heatmap_dump_jsonl(const std::string& path,
                              const std::vector<HeatmapDump>& dumps) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  for (const auto& d : dumps) {
    json maps = json::array();
    for (const auto& g : d.class_heatmaps) maps.push_back(grid_flat_json(g));
    json j{{"image_id", d.image_id}, {"stride", d.stride},
           {"rows", d.rows},         {"cols", d.cols},
           {"class_heatmaps", maps}, {"dims_w", grid_flat_json(d.dims_w)},
           {"dims_h", grid_flat_json(d.dims_h)}};
    out << j.dump() << "\n";
  }
  if (!out) throw DataError("failed while writing " + path);
}

std::vector<HeatmapDump> read_heatmap_dump_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open heatmap dump " + path);
  std::vector<HeatmapDump> dumps;
  std::string line;
  size_t rec = 0;
  const char* schema = "heatmap dump schema v1";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rec;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      record_error(path, rec, std::string("malformed JSON: ") + e.what(), schema);
    }
    try {
      HeatmapDump d;
      d.image_id = j.at("image_id").get<int>();
      d.stride = j.at("stride").get<int>();
      d.rows = j.at("rows").get<int>();
      d.cols = j.at("cols").get<int>();
      if (d.rows <= 0 || d.cols <= 0 || d.stride <= 0)
        throw std::runtime_error("rows, cols, and stride must be positive");
      const json& maps = j.at("class_heatmaps");
      if (!maps.is_array() || maps.empty())
        throw std::runtime_error("class_heatmaps must be a non-empty array");
      for (const auto& m : maps)
        d.class_heatmaps.push_back(grid_from_flat_json(m, d.rows, d.cols));
      d.dims_w = grid_from_flat_json(j.at("dims_w"), d.rows, d.cols);
      d.dims_h = grid_from_flat_json(j.at("dims_h"), d.rows, d.cols);
      dumps.push_back(std::move(d));
    } catch (const std::exception& e) {
      record_error(path, rec, e.what(), schema);
    }
  }
  return dumps;
}

}  // namespace certainnet
