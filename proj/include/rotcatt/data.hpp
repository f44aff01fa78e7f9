#pragma once

#include <array>
#include <span>
#include <cstdint>
#include <string>
#include <vector>

#include "rotcatt/losses.hpp"

namespace rotcatt {

// Intensities and labels of one (S, H, W) volume.
struct VolumePair {
  Tensor<float> intensities;
  LabelTensor labels;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // (z, y, x)
  int num_classes = 0;

  int64_t slices() const { return intensities.dim(0); }
  int64_t height() const { return intensities.dim(1); }
  int64_t width() const { return intensities.dim(2); }
};

// Checks shape agreement and label range; DataError otherwise.
void validate_volume(const VolumePair& pair);

struct Blob {
  double z = 0, y = 0, x = 0;
  double radius_z = 1, radius_yx = 2;
};

// Generative geometry of a phantom.
//   class 0          background (also distractor blobs)
//   class 1          chamber, ellipsoid core rho <= chamber_scale
//   classes 2..K-2   nested shells splitting chamber_scale < rho <= 1
//   class K-1        thin tube winding around the shell
struct PhantomGeometry {
  int64_t slices = 0, height = 0, width = 0;
  int num_classes = 0;
  double cz = 0, cy = 0, cx = 0;
  double semi_z = 0, semi_y = 0, semi_x = 0;
  double chamber_scale = 0.65;
  int64_t tube_z_begin = 0, tube_z_end = 0;  // inclusive
  double tube_radius = 1.6;
  double tube_ring_y = 0, tube_ring_x = 0;
  double tube_phase = 0, tube_turns = 0.75;
  std::vector<Blob> blobs;

  // Centreline (y, x) of the tube at slice z.
  std::array<double, 2> tube_center(int64_t z) const;
  bool in_tube(int64_t z, int64_t y, int64_t x) const;
  // Normalized ellipsoid radius of a voxel centre.
  double rho(int64_t z, int64_t y, int64_t x) const;
  int shell_classes() const { return num_classes - 3; }
};

constexpr float kBackgroundLevel = 0.1f;
constexpr float kChamberLevel = 0.7f;
constexpr float kShellLevel = 0.45f;
constexpr float kTubeLevel = 0.9f;
constexpr float kNoiseSigma = 0.05f;
constexpr std::array<double, 3> kPhantomSpacing{2.0, 1.0, 1.0};

PhantomGeometry describe_phantom(uint64_t seed, int64_t slices, int64_t height, int64_t width, int num_classes);
VolumePair generate_phantom(uint64_t seed, int64_t slices, int64_t height, int64_t width, int num_classes);

// Per-volume min-max scaling to [0, 1]; a constant volume becomes zeros.
Tensor<float> normalize(const Tensor<float>& volume);

enum class SliceMode { Train, Eval };

struct SliceBatch {
  Tensor<float> images;  // (B, 1, H, W)
  LabelTensor labels;    // (B, H, W)
  int64_t start = 0;
};

// Train: stride B, a trailing partial window dropped. Eval: windows overlap
// by two slices so every slice 1..S-2 is interior to some window; the last
// start is clamped to S - B.
std::vector<int64_t> window_starts(int64_t slices, int window, SliceMode mode);
std::vector<SliceBatch> slice_batches(const VolumePair& pair, int window, SliceMode mode);
SliceBatch extract_window(const VolumePair& pair, int64_t start, int window);

// For each slice, the index into window_starts(S, B, Eval) whose prediction
// it takes: the first window holding it as an interior slice, slice 0 the
// first window and slice S-1 the last.
std::vector<size_t> eval_assignment(int64_t slices, int window);

// `<stem>.vol` (little-endian f32), `<stem>.lbl` (u8) and `<stem>.json`.
void save_volume(const VolumePair& pair, const std::string& stem);
// A sidecar with dtype "u8" describes a label-only triple (intensities left
// empty); for "f32" the `.lbl` file is optional.
VolumePair load_volume(const std::string& stem);
void save_labels(const LabelTensor& labels, const std::array<double, 3>& spacing, int num_classes,
                 const std::string& stem);
// Strips a trailing .vol/.lbl/.json so any member of the triple names it.
std::string volume_stem(const std::string& path);

// Little-endian helpers, independent of host byte order.
std::vector<char> encode_f32_le(std::span<const float> values);
std::vector<float> decode_f32_le(const std::vector<char>& bytes);

}  // namespace rotcatt
