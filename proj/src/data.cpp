#include "rotcatt/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

namespace rotcatt {

namespace fs = std::filesystem;

void validate_volume(const VolumePair& pair) {
  const bool has_vol = !pair.intensities.empty(), has_lbl = !pair.labels.empty();
  if (!has_vol && !has_lbl) throw DataError("volume: no intensities and no labels");
  const Shape& s = has_vol ? pair.intensities.shape() : pair.labels.shape();
  if (s.size() != 3 || shape_numel(s) == 0) throw DataError("volume: expected non-empty (S, H, W), got " + shape_string(s));
  if (has_vol && has_lbl && pair.labels.shape() != s) {
    throw DataError("volume: label shape " + shape_string(pair.labels.shape()) + " differs from " + shape_string(s));
  }
  if (pair.num_classes < 1 || pair.num_classes > 255) throw DataError("volume: classes must lie in 1..255");
  if (has_lbl) {
    for (uint8_t v : pair.labels.span()) {
      if (v >= pair.num_classes) {
        throw DataError("volume: label " + std::to_string(int(v)) + " outside [0, " + std::to_string(pair.num_classes) + ")");
      }
    }
  }
  if (has_vol) {
    for (float v : pair.intensities.span()) {
      if (!std::isfinite(v)) throw DataError("volume: non-finite intensity");
    }
  }
}

// Phantom ---------------------------------------------------------------------

std::array<double, 2> PhantomGeometry::tube_center(int64_t z) const {
  const double span = std::max<int64_t>(tube_z_end - tube_z_begin, 1);
  const double theta = tube_phase + 2.0 * std::numbers::pi * tube_turns * double(z - tube_z_begin) / span;
  return {cy + tube_ring_y * std::sin(theta), cx + tube_ring_x * std::cos(theta)};
}

bool PhantomGeometry::in_tube(int64_t z, int64_t y, int64_t x) const {
  if (z < tube_z_begin || z > tube_z_end) return false;
  auto [ty, tx] = tube_center(z);
  const double dy = double(y) - ty, dx = double(x) - tx;
  return dy * dy + dx * dx <= tube_radius * tube_radius;
}

double PhantomGeometry::rho(int64_t z, int64_t y, int64_t x) const {
  const double a = (double(z) - cz) / semi_z, b = (double(y) - cy) / semi_y, c = (double(x) - cx) / semi_x;
  return std::sqrt(a * a + b * b + c * c);
}

PhantomGeometry describe_phantom(uint64_t seed, int64_t slices, int64_t height, int64_t width, int num_classes) {
  if (num_classes < 3 || num_classes > 255) throw ConfigError("phantom: num_classes must lie in 3..255");
  if (slices < 3 || height < 16 || width < 16) {
    throw ConfigError("phantom: dims must be at least (3, 16, 16), got (" + std::to_string(slices) + "," +
                      std::to_string(height) + "," + std::to_string(width) + ")");
  }
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  PhantomGeometry g;
  g.slices = slices;
  g.height = height;
  g.width = width;
  g.num_classes = num_classes;
  g.cz = (double(slices) - 1.0) / 2.0 + uni(-0.03, 0.03) * double(slices);
  g.cy = (double(height) - 1.0) / 2.0 + uni(-0.04, 0.04) * double(height);
  g.cx = (double(width) - 1.0) / 2.0 + uni(-0.04, 0.04) * double(width);
  g.semi_z = 0.55 * double(slices) * uni(0.95, 1.05);
  g.semi_y = 0.28 * double(height) * uni(0.93, 1.07);
  g.semi_x = 0.23 * double(width) * uni(0.93, 1.07);
  g.chamber_scale = num_classes == 3 ? 1.0 : uni(0.6, 0.7);

  const int64_t margin = std::llround(0.1 * double(slices));
  g.tube_z_begin = margin;
  g.tube_z_end = slices - 1 - margin;
  g.tube_radius = uni(1.4, 1.8);
  const double room_y = std::min(g.cy, double(height) - 1.0 - g.cy) - g.tube_radius - 1.0;
  const double room_x = std::min(g.cx, double(width) - 1.0 - g.cx) - g.tube_radius - 1.0;
  g.tube_ring_y = std::min(g.semi_y + 3.0, room_y);
  g.tube_ring_x = std::min(g.semi_x + 3.0, room_x);
  g.tube_phase = uni(0.0, 2.0 * std::numbers::pi);
  g.tube_turns = uni(0.2, 0.35) * (uni(0.0, 1.0) < 0.5 ? -1.0 : 1.0);

  const int blobs = std::uniform_int_distribution<int>(3, 6)(rng);
  for (int b = 0; b < blobs; ++b) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Blob blob;
      blob.radius_yx = uni(2.0, 3.5);
      blob.radius_z = uni(1.0, 2.0);
      const double r = blob.radius_yx;
      blob.z = uni(0.0, double(slices - 1));
      blob.y = uni(r + 1.0, double(height) - r - 2.0);
      blob.x = uni(r + 1.0, double(width) - r - 2.0);
      const double ny = (blob.y - g.cy) / g.semi_y, nx = (blob.x - g.cx) / g.semi_x;
      if (std::sqrt(ny * ny + nx * nx) > 1.6) {
        g.blobs.push_back(blob);
        break;
      }
    }
  }
  return g;
}

VolumePair generate_phantom(uint64_t seed, int64_t slices, int64_t height, int64_t width, int num_classes) {
  const PhantomGeometry g = describe_phantom(seed, slices, height, width, num_classes);
  VolumePair pair;
  pair.num_classes = num_classes;
  pair.spacing = kPhantomSpacing;
  pair.labels = LabelTensor({slices, height, width});
  Tensor<float> raw({slices, height, width}, kBackgroundLevel);
  const int shells = g.shell_classes();
  const int tube_class = num_classes - 1;
  for (int64_t z = 0; z < slices; ++z) {
    for (int64_t y = 0; y < height; ++y) {
      for (int64_t x = 0; x < width; ++x) {
        const int64_t i = (z * height + y) * width + x;
        uint8_t label = 0;
        float level = kBackgroundLevel;
        const double r = g.rho(z, y, x);
        if (g.in_tube(z, y, x)) {
          label = static_cast<uint8_t>(tube_class);
          level = kTubeLevel;
        } else if (r <= g.chamber_scale) {
          label = 1;
          level = kChamberLevel;
        } else if (r <= 1.0 && shells > 0) {
          const int s = std::min(shells - 1, int((r - g.chamber_scale) / (1.0 - g.chamber_scale) * shells));
          label = static_cast<uint8_t>(2 + s);
          level = std::max(0.2f, kShellLevel - 0.08f * float(s));
        } else {
          for (const Blob& b : g.blobs) {
            const double dz = (double(z) - b.z) / b.radius_z, dy = (double(y) - b.y) / b.radius_yx,
                         dx = (double(x) - b.x) / b.radius_yx;
            if (dz * dz + dy * dy + dx * dx <= 1.0) {
              level = kShellLevel;
              break;
            }
          }
        }
        pair.labels[i] = label;
        raw[i] = level;
      }
    }
  }
  std::mt19937_64 noise_rng(seed ^ 0x6a09e667f3bcc909ull);
  std::normal_distribution<float> noise(0.0f, kNoiseSigma);
  for (auto& v : raw.span()) v += noise(noise_rng);
  pair.intensities = normalize(raw);
  return pair;
}

Tensor<float> normalize(const Tensor<float>& volume) {
  if (volume.numel() == 0) return volume;
  float lo = volume[0], hi = volume[0];
  for (float v : volume.span()) {
    if (!std::isfinite(v)) throw NumericError("normalize: non-finite intensity");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Tensor<float> out(volume.shape());
  if (hi == lo) return out;
  const double range = double(hi) - double(lo);
  for (int64_t i = 0; i < volume.numel(); ++i) {
    out[i] = static_cast<float>((double(volume[i]) - double(lo)) / range);
  }
  return out;
}

// Slicing ---------------------------------------------------------------------

std::vector<int64_t> window_starts(int64_t slices, int window, SliceMode mode) {
  if (window < 1) throw ConfigError("slicing: window must be positive");
  if (slices < window) {
    throw DataError("slicing: volume has " + std::to_string(slices) + " slices, fewer than the window " +
                    std::to_string(window));
  }
  std::vector<int64_t> starts;
  if (mode == SliceMode::Train) {
    for (int64_t s = 0; s + window <= slices; s += window) starts.push_back(s);
    return starts;
  }
  const int64_t step = window >= 3 ? window - 2 : window;
  int64_t s = 0;
  starts.push_back(s);
  while (s + window < slices) {
    s = std::min(s + step, slices - window);
    starts.push_back(s);
  }
  return starts;
}

std::vector<size_t> eval_assignment(int64_t slices, int window) {
  const std::vector<int64_t> starts = window_starts(slices, window, SliceMode::Eval);
  std::vector<size_t> out(static_cast<size_t>(slices), 0);
  for (int64_t z = 0; z < slices; ++z) {
    size_t pick = starts.size() - 1;
    for (size_t w = 0; w < starts.size(); ++w) {
      const int64_t s = starts[w];
      const bool inside = window >= 3 ? (z > s && z < s + window - 1) : (z >= s && z < s + window);
      if (inside) {
        pick = w;
        break;
      }
    }
    if (z == 0) pick = 0;
    out[static_cast<size_t>(z)] = pick;
  }
  return out;
}

SliceBatch extract_window(const VolumePair& pair, int64_t start, int window) {
  const int64_t h = pair.height(), w = pair.width();
  if (start < 0 || start + window > pair.slices()) throw DataError("slicing: window out of range");
  SliceBatch b;
  b.start = start;
  const int64_t plane = h * w;
  b.images = Tensor<float>({window, 1, h, w});
  std::copy_n(pair.intensities.data() + start * plane, window * plane, b.images.data());
  if (!pair.labels.empty()) {
    b.labels = LabelTensor({window, h, w});
    std::copy_n(pair.labels.data() + start * plane, window * plane, b.labels.data());
  }
  return b;
}

std::vector<SliceBatch> slice_batches(const VolumePair& pair, int window, SliceMode mode) {
  std::vector<SliceBatch> out;
  for (int64_t s : window_starts(pair.slices(), window, mode)) out.push_back(extract_window(pair, s, window));
  return out;
}

// File I/O --------------------------------------------------------------------

std::vector<char> encode_f32_le(std::span<const float> values) {
  std::vector<char> out(values.size() * 4);
  for (size_t i = 0; i < values.size(); ++i) {
    const uint32_t bits = std::bit_cast<uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return out;
}

std::vector<float> decode_f32_le(const std::vector<char>& bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (size_t i = 0; i < out.size(); ++i) {
    uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= uint32_t(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

namespace {

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::string& path, const char* data, size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(data, static_cast<std::streamsize>(n));
  if (!out) throw DataError("write failed: " + path);
}

void write_sidecar(const std::string& stem, const Shape& shape, const char* dtype, const std::array<double, 3>& spacing,
                   int classes) {
  nlohmann::ordered_json j;
  j["shape"] = shape;
  j["dtype"] = dtype;
  j["label_dtype"] = "u8";
  j["spacing"] = spacing;
  j["classes"] = classes;
  j["version"] = 1;
  const std::string text = j.dump(2) + "\n";
  write_bytes(stem + ".json", text.data(), text.size());
}

}  // namespace

std::string volume_stem(const std::string& path) {
  for (const char* ext : {".vol", ".lbl", ".json"}) {
    const std::string e(ext);
    if (path.size() > e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0) {
      return path.substr(0, path.size() - e.size());
    }
  }
  return path;
}

void save_volume(const VolumePair& pair, const std::string& stem) {
  validate_volume(pair);
  if (pair.intensities.empty()) throw DataError("save_volume: no intensities");
  write_sidecar(stem, pair.intensities.shape(), "f32", pair.spacing, pair.num_classes);
  const std::vector<char> payload = encode_f32_le(pair.intensities.span());
  write_bytes(stem + ".vol", payload.data(), payload.size());
  if (!pair.labels.empty()) {
    write_bytes(stem + ".lbl", reinterpret_cast<const char*>(pair.labels.data()), size_t(pair.labels.numel()));
  }
}

void save_labels(const LabelTensor& labels, const std::array<double, 3>& spacing, int num_classes,
                 const std::string& stem) {
  VolumePair pair;
  pair.labels = labels;
  pair.spacing = spacing;
  pair.num_classes = num_classes;
  validate_volume(pair);
  write_sidecar(stem, labels.shape(), "u8", spacing, num_classes);
  write_bytes(stem + ".lbl", reinterpret_cast<const char*>(labels.data()), size_t(labels.numel()));
}

VolumePair load_volume(const std::string& path) {
  const std::string stem = volume_stem(path);
  const std::vector<char> header = read_bytes(stem + ".json");
  VolumePair pair;
  Shape shape;
  std::string dtype;
  try {
    const auto j = nlohmann::json::parse(header.begin(), header.end());
    if (j.at("version").get<int>() != 1) throw DataError("unsupported volume version in " + stem + ".json");
    shape = j.at("shape").get<Shape>();
    dtype = j.at("dtype").get<std::string>();
    const auto sp = j.at("spacing").get<std::vector<double>>();
    if (sp.size() != 3) throw DataError("corrupt header " + stem + ".json: spacing needs 3 values");
    pair.spacing = {sp[0], sp[1], sp[2]};
    pair.num_classes = j.at("classes").get<int>();
    if (j.contains("label_dtype") && j.at("label_dtype").get<std::string>() != "u8") {
      throw DataError("corrupt header " + stem + ".json: label_dtype must be u8");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt header " + stem + ".json: " + e.what());
  }
  if (shape.size() != 3 || std::any_of(shape.begin(), shape.end(), [](int64_t d) { return d <= 0; })) {
    throw DataError("corrupt header " + stem + ".json: shape must hold three positive dims");
  }
  if (dtype != "f32" && dtype != "u8") throw DataError("corrupt header " + stem + ".json: unknown dtype " + dtype);
  const int64_t n = shape_numel(shape);
  if (dtype == "f32") {
    const std::vector<char> bytes = read_bytes(stem + ".vol");
    if (static_cast<int64_t>(bytes.size()) != n * 4) {
      throw DataError("size mismatch: header " + shape_string(shape) + " needs " + std::to_string(n * 4) +
                      " bytes, " + stem + ".vol has " + std::to_string(bytes.size()));
    }
    pair.intensities = Tensor<float>(shape, decode_f32_le(bytes));
  }
  if (dtype == "u8" || fs::exists(stem + ".lbl")) {
    const std::vector<char> bytes = read_bytes(stem + ".lbl");
    if (static_cast<int64_t>(bytes.size()) != n) {
      throw DataError("size mismatch: header " + shape_string(shape) + " needs " + std::to_string(n) + " bytes, " +
                      stem + ".lbl has " + std::to_string(bytes.size()));
    }
    std::vector<uint8_t> labels(bytes.begin(), bytes.end());
    pair.labels = LabelTensor(shape, std::move(labels));
  }
  validate_volume(pair);
  return pair;
}

}  // namespace rotcatt
