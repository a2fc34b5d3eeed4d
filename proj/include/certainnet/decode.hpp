#pragma once

#include <string>
#include <utility>
#include <vector>

#include "certainnet/grid.hpp"
#include "certainnet/model.hpp"

namespace certainnet {

struct Detection {
  int image_id = -1;
  int class_id = 0;
  double cx = 0, cy = 0;  // center, input pixels
  double w = 0, h = 0;    // size, input pixels
  double score = 0;       // kernel score at the peak
  double u_obj = 0;       // 1 - score
  double u_x = 0, u_y = 0;  // location spread, relative to predicted size
  double u_w = 0, u_h = 0;  // size spread, relative to predicted size
  double u_cls = 0;         // cross-class ambiguity at the peak
  Box inner_box, outer_box;

  Box box() const { return Box::from_center(cx, cy, w, h); }
};

struct DecodeConfig {
  double peak_threshold = 0.3;
  double eta = 4.0;          // angular sharpness of the location weighting
  double boundary_scale = 1.0;
  double min_overlap = 0.7;  // analysis-window radius rule
  int min_window_radius = 1;

  void validate() const;
};

struct Peak {
  int row = 0, col = 0;
  int class_id = 0;
  double score = 0;
};

// Cells that are >= all eight neighbours and >= threshold, per class.
// Returned sorted by score descending, ties by (row, column, class).
std::vector<Peak> extract_peaks(const std::vector<ScalarGrid>& class_heatmaps,
                                double threshold);

// Score-weighted spread of the window around (row, col), axis-projected with
// |cos|^eta / |sin|^eta angular weights; the center cell enters with weight 1
// and offset 0. Offsets are measured in input pixels (cells * stride) and the
// returned pair (u_x, u_y) is normalized by the predicted (w, h).
std::pair<double, double> location_uncertainty(const ScalarGrid& heatmap, int row,
                                               int col, double w, double h, double eta,
                                               int window_radius, int stride);

// Score-weighted standard deviation of the size channels over the same
// window, normalized by the predicted size at the peak.
std::pair<double, double> dimension_uncertainty(const ScalarGrid& dims_w,
                                                const ScalarGrid& dims_h,
                                                const ScalarGrid& heatmap, int row,
                                                int col, double w, double h,
                                                int window_radius);

// Recursive evidence accumulation over the per-class scores at one cell,
// sorted descending internally. The i=1 ratio term is skipped (it is 1 by
// construction); the result is clamped to [0, 1].
double class_uncertainty(const std::vector<double>& class_scores);

// Inner/outer confidence boxes: each side moves by
// k * (u_loc * size + u_size * size / 2); the inner box clamps at zero size.
std::pair<Box, Box> boundaries_from(double cx, double cy, double w, double h,
                                    double u_x, double u_y, double u_w, double u_h,
                                    double k);
std::pair<Box, Box> uncertainty_boundaries(const Detection& det, double k);

// Full decoding of one image's head outputs, sorted by score descending.
std::vector<Detection> decode(const HeadOutputs& outputs, const DecodeConfig& cfg);

// --- interchange ------------------------------------------------------------

void write_detections_jsonl(const std::string& path, const std::vector<Detection>& dets);
std::vector<Detection> read_detections_jsonl(const std::string& path);

// Per-image dump of raw head grids, sufficient to reproduce decoding
// bit-exactly without the checkpoint.
struct HeatmapDump {
  int image_id = -1;
  int stride = 1;
  int rows = 0, cols = 0;
  std::vector<ScalarGrid> class_heatmaps;
  ScalarGrid dims_w, dims_h;
};

HeatmapDump dump_from_outputs(int image_id, const HeadOutputs& outputs);
HeadOutputs outputs_from_dump(const HeatmapDump& dump);

void write_heatmap_dump_jsonl(const std::string& path,
                              const std::vector<HeatmapDump>& dumps);
std::vector<HeatmapDump> read_heatmap_dump_jsonl(const std::string& path);

}  // namespace certainnet
