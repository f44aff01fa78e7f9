#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rotcatt/losses.hpp"

namespace rotcatt {

// Hard overlap per class. A class absent from both masks scores 1.
std::vector<double> dsc_per_class(const LabelTensor& pred, const LabelTensor& truth, int num_classes);
std::vector<double> iou_per_class(const LabelTensor& pred, const LabelTensor& truth, int num_classes);

// Mean over classes 1..K-1, skipping empty optionals.
double foreground_mean(const std::vector<double>& per_class);
std::optional<double> foreground_mean(const std::vector<std::optional<double>>& per_class);

// Voxels inside the mask with a face neighbour outside it (the image border
// counts as outside). Works for rank 2 and rank 3 masks.
std::vector<uint8_t> boundary(const LabelTensor& mask);

// Squared Euclidean distance from every voxel to the nearest set voxel of
// `seeds`, axis spacing applied. Infinity when `seeds` is empty.
std::vector<double> squared_distance_transform(const std::vector<uint8_t>& seeds, const Shape& shape,
                                               const std::vector<double>& spacing);

struct HausdorffResult {
  std::optional<double> distance;  // empty when both masks are empty
  bool absent_in_one = false;      // distance is the volume diagonal
};

// Symmetric Hausdorff distance between the boundaries of two binary masks.
HausdorffResult hausdorff(const LabelTensor& pred_mask, const LabelTensor& truth_mask,
                          const std::vector<double>& spacing);

// Largest distance between two voxel centres of a volume.
double volume_diagonal(const Shape& shape, const std::vector<double>& spacing);

// Binary mask of class c.
LabelTensor class_mask(const LabelTensor& labels, int c);

struct ClassMetrics {
  int label = 0;
  double dsc = 0, iou = 0;
  std::optional<double> hd_voxel, hd_mm;
  bool hd_absent_in_one = false;
};

struct MetricsReport {
  int num_classes = 0;
  std::vector<double> spacing;
  std::vector<ClassMetrics> classes;
  double macro_dsc = 0, macro_iou = 0;
  std::optional<double> macro_hd_voxel, macro_hd_mm;
  std::optional<double> dice_loss, iou_loss, combined_loss;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  static std::string csv_header();
  // One line per class plus a `macro` line.
  std::string csv_rows() const;
};

// Every metric for a label volume (S, H, W) with (z, y, x) spacing.
MetricsReport evaluate_labels(const LabelTensor& pred, const LabelTensor& truth, int num_classes,
                              const std::vector<double>& spacing);

}  // namespace rotcatt
