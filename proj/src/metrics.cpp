#include "rotcatt/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>

namespace rotcatt {

namespace {

struct Counts {
  std::vector<int64_t> pred, truth, both;
};

Counts count_classes(const LabelTensor& pred, const LabelTensor& truth, int k) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("metrics: prediction " + shape_string(pred.shape()) + " vs truth " + shape_string(truth.shape()));
  }
  Counts c{std::vector<int64_t>(k), std::vector<int64_t>(k), std::vector<int64_t>(k)};
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const int a = pred[i], b = truth[i];
    if (a >= k || b >= k) throw DataError("metrics: label outside [0, " + std::to_string(k) + ")");
    ++c.pred[a];
    ++c.truth[b];
    if (a == b) ++c.both[a];
  }
  return c;
}

// One pass of the 1D lower-envelope transform (Felzenszwalb & Huttenlocher)
// over `n` samples at stride `stride`, sample spacing `h`.
void edt_1d(double* f, int64_t n, int64_t stride, double h, std::vector<double>& buf, std::vector<int64_t>& v,
            std::vector<double>& z) {
  const double inf = std::numeric_limits<double>::infinity();
  const double h2 = h * h;
  for (int64_t i = 0; i < n; ++i) buf[i] = f[i * stride];
  int64_t k = -1;
  for (int64_t q = 0; q < n; ++q) {
    if (buf[q] == inf) continue;
    while (true) {
      if (k < 0) {
        v[0] = q;
        z[0] = -inf;
        k = 0;
        break;
      }
      const int64_t p = v[k];
      const double s = ((buf[q] + h2 * double(q) * double(q)) - (buf[p] + h2 * double(p) * double(p))) /
                       (2.0 * h2 * double(q - p));
      if (s <= z[k]) {
        --k;
        continue;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      break;
    }
  }
  if (k < 0) return;
  int64_t j = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (j < k && z[j + 1] < double(q)) ++j;
    const double d = double(q - v[j]) * h;
    f[q * stride] = buf[v[j]] + d * d;
  }
}

}  // namespace

std::vector<double> dsc_per_class(const LabelTensor& pred, const LabelTensor& truth, int num_classes) {
  Counts c = count_classes(pred, truth, num_classes);
  std::vector<double> out(num_classes);
  for (int k = 0; k < num_classes; ++k) {
    const int64_t denom = c.pred[k] + c.truth[k];
    out[k] = denom == 0 ? 1.0 : 2.0 * double(c.both[k]) / double(denom);
  }
  return out;
}

std::vector<double> iou_per_class(const LabelTensor& pred, const LabelTensor& truth, int num_classes) {
  Counts c = count_classes(pred, truth, num_classes);
  std::vector<double> out(num_classes);
  for (int k = 0; k < num_classes; ++k) {
    const int64_t uni = c.pred[k] + c.truth[k] - c.both[k];
    out[k] = uni == 0 ? 1.0 : double(c.both[k]) / double(uni);
  }
  return out;
}

double foreground_mean(const std::vector<double>& per_class) {
  if (per_class.size() < 2) return 1.0;
  double s = 0;
  for (size_t c = 1; c < per_class.size(); ++c) s += per_class[c];
  return s / double(per_class.size() - 1);
}

std::optional<double> foreground_mean(const std::vector<std::optional<double>>& per_class) {
  double s = 0;
  int n = 0;
  for (size_t c = 1; c < per_class.size(); ++c) {
    if (per_class[c]) {
      s += *per_class[c];
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

std::vector<uint8_t> boundary(const LabelTensor& mask) {
  const Shape& s = mask.shape();
  if (s.size() != 2 && s.size() != 3) throw ShapeError("boundary: expected a 2D or 3D mask");
  const int64_t d0 = s.size() == 3 ? s[0] : 1;
  const int64_t d1 = s[s.size() - 2], d2 = s[s.size() - 1];
  const bool volumetric = s.size() == 3;
  std::vector<uint8_t> out(static_cast<size_t>(mask.numel()), 0);
  auto in = [&](int64_t a, int64_t b, int64_t c) {
    if (a < 0 || b < 0 || c < 0 || a >= d0 || b >= d1 || c >= d2) return false;
    return mask[(a * d1 + b) * d2 + c] != 0;
  };
  for (int64_t a = 0; a < d0; ++a) {
    for (int64_t b = 0; b < d1; ++b) {
      for (int64_t c = 0; c < d2; ++c) {
        if (!in(a, b, c)) continue;
        bool edge = !in(a, b - 1, c) || !in(a, b + 1, c) || !in(a, b, c - 1) || !in(a, b, c + 1);
        if (volumetric) edge = edge || !in(a - 1, b, c) || !in(a + 1, b, c);
        out[(a * d1 + b) * d2 + c] = edge ? 1 : 0;
      }
    }
  }
  return out;
}

std::vector<double> squared_distance_transform(const std::vector<uint8_t>& seeds, const Shape& shape,
                                               const std::vector<double>& spacing) {
  if (spacing.size() != shape.size()) throw ShapeError("distance transform: spacing rank differs from mask rank");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> f(seeds.size());
  for (size_t i = 0; i < seeds.size(); ++i) f[i] = seeds[i] ? 0.0 : inf;
  int64_t longest = 1;
  for (int64_t d : shape) longest = std::max(longest, d);
  std::vector<double> buf(longest), z(longest + 1);
  std::vector<int64_t> v(longest);
  const int64_t total = shape_numel(shape);
  for (int axis = static_cast<int>(shape.size()) - 1; axis >= 0; --axis) {
    int64_t stride = 1;
    for (size_t a = axis + 1; a < shape.size(); ++a) stride *= shape[a];
    const int64_t n = shape[axis];
    const int64_t outer = total / (n * stride);
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t i = 0; i < stride; ++i) {
        edt_1d(f.data() + o * n * stride + i, n, stride, spacing[axis], buf, v, z);
      }
    }
  }
  return f;
}

double volume_diagonal(const Shape& shape, const std::vector<double>& spacing) {
  double s = 0;
  for (size_t a = 0; a < shape.size(); ++a) {
    const double e = double(shape[a] - 1) * spacing[a];
    s += e * e;
  }
  return std::sqrt(s);
}

HausdorffResult hausdorff(const LabelTensor& pred_mask, const LabelTensor& truth_mask,
                          const std::vector<double>& spacing) {
  if (pred_mask.shape() != truth_mask.shape()) {
    throw ShapeError("hausdorff: mask shapes differ: " + shape_string(pred_mask.shape()) + " vs " +
                     shape_string(truth_mask.shape()));
  }
  const Shape& shape = pred_mask.shape();
  std::vector<uint8_t> a = boundary(pred_mask), b = boundary(truth_mask);
  bool has_a = false, has_b = false;
  for (uint8_t x : a) has_a = has_a || x;
  for (uint8_t x : b) has_b = has_b || x;
  HausdorffResult r;
  if (!has_a && !has_b) return r;
  if (has_a != has_b) {
    r.distance = volume_diagonal(shape, spacing);
    r.absent_in_one = true;
    return r;
  }
  std::vector<double> to_b = squared_distance_transform(b, shape, spacing);
  std::vector<double> to_a = squared_distance_transform(a, shape, spacing);
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i]) worst = std::max(worst, to_b[i]);
    if (b[i]) worst = std::max(worst, to_a[i]);
  }
  r.distance = std::sqrt(worst);
  return r;
}

LabelTensor class_mask(const LabelTensor& labels, int c) {
  LabelTensor out(labels.shape());
  for (int64_t i = 0; i < labels.numel(); ++i) out[i] = labels[i] == c ? 1 : 0;
  return out;
}

MetricsReport evaluate_labels(const LabelTensor& pred, const LabelTensor& truth, int num_classes,
                              const std::vector<double>& spacing) {
  MetricsReport r;
  r.num_classes = num_classes;
  r.spacing = spacing;
  std::vector<double> dsc = dsc_per_class(pred, truth, num_classes);
  std::vector<double> iou = iou_per_class(pred, truth, num_classes);
  std::vector<std::optional<double>> hdv(num_classes), hdm(num_classes);
  const std::vector<double> unit(spacing.size(), 1.0);
  for (int c = 0; c < num_classes; ++c) {
    ClassMetrics m;
    m.label = c;
    m.dsc = dsc[c];
    m.iou = iou[c];
    if (c > 0) {
      LabelTensor pm = class_mask(pred, c), tm = class_mask(truth, c);
      HausdorffResult v = hausdorff(pm, tm, unit);
      HausdorffResult p = hausdorff(pm, tm, spacing);
      m.hd_voxel = v.distance;
      m.hd_mm = p.distance;
      m.hd_absent_in_one = v.absent_in_one;
      hdv[c] = v.distance;
      hdm[c] = p.distance;
    }
    r.classes.push_back(m);
  }
  r.macro_dsc = foreground_mean(dsc);
  r.macro_iou = foreground_mean(iou);
  r.macro_hd_voxel = foreground_mean(hdv);
  r.macro_hd_mm = foreground_mean(hdm);
  return r;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}
std::string csv_num(const std::optional<double>& v) { return v ? fmt::format("{:.10g}", *v) : std::string(); }

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["num_classes"] = num_classes;
  j["spacing"] = spacing;
  j["classes"] = nlohmann::json::array();
  for (const ClassMetrics& c : classes) {
    j["classes"].push_back({{"label", c.label},
                            {"dsc", c.dsc},
                            {"iou", c.iou},
                            {"hd_voxel", opt(c.hd_voxel)},
                            {"hd_mm", opt(c.hd_mm)},
                            {"hd_absent_in_one", c.hd_absent_in_one}});
  }
  j["macro"] = {{"dsc", macro_dsc}, {"iou", macro_iou}, {"hd_voxel", opt(macro_hd_voxel)}, {"hd_mm", opt(macro_hd_mm)}};
  j["loss"] = {{"dice", opt(dice_loss)}, {"iou", opt(iou_loss)}, {"combined", opt(combined_loss)}};
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.num_classes = j.at("num_classes").get<int>();
    r.spacing = j.at("spacing").get<std::vector<double>>();
    for (const auto& c : j.at("classes")) {
      ClassMetrics m;
      m.label = c.at("label").get<int>();
      m.dsc = c.at("dsc").get<double>();
      m.iou = c.at("iou").get<double>();
      m.hd_voxel = opt_from(c.at("hd_voxel"));
      m.hd_mm = opt_from(c.at("hd_mm"));
      m.hd_absent_in_one = c.at("hd_absent_in_one").get<bool>();
      r.classes.push_back(m);
    }
    const auto& m = j.at("macro");
    r.macro_dsc = m.at("dsc").get<double>();
    r.macro_iou = m.at("iou").get<double>();
    r.macro_hd_voxel = opt_from(m.at("hd_voxel"));
    r.macro_hd_mm = opt_from(m.at("hd_mm"));
    const auto& l = j.at("loss");
    r.dice_loss = opt_from(l.at("dice"));
    r.iou_loss = opt_from(l.at("iou"));
    r.combined_loss = opt_from(l.at("combined"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics report: ") + e.what());
  }
  return r;
}

std::string MetricsReport::csv_header() {
  return "class,dsc,iou,hd_voxel,hd_mm,hd_absent_in_one";
}

std::string MetricsReport::csv_rows() const {
  std::ostringstream os;
  for (const ClassMetrics& c : classes) {
    os << c.label << ',' << fmt::format("{:.10g}", c.dsc) << ',' << fmt::format("{:.10g}", c.iou) << ','
       << csv_num(c.hd_voxel) << ',' << csv_num(c.hd_mm) << ',' << (c.hd_absent_in_one ? 1 : 0) << '\n';
  }
  os << "macro," << fmt::format("{:.10g}", macro_dsc) << ',' << fmt::format("{:.10g}", macro_iou) << ','
     << csv_num(macro_hd_voxel) << ',' << csv_num(macro_hd_mm) << ",\n";
  return os.str();
}

}  // namespace rotcatt
