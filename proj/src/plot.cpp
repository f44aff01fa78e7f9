#include "rotcatt/plot.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>

#include <fmt/format.h>

namespace rotcatt {

namespace {

// 3x5 glyphs, one 3-bit row per nibble, top row first.
const std::map<char, std::array<uint8_t, 5>>& glyphs() {
  static const std::map<char, std::array<uint8_t, 5>> g{
      {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
      {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}},
      {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'A', {2, 5, 7, 5, 5}}, {'B', {6, 5, 6, 5, 6}},
      {'C', {3, 4, 4, 4, 3}}, {'D', {6, 5, 5, 5, 6}}, {'E', {7, 4, 6, 4, 7}}, {'F', {7, 4, 6, 4, 4}},
      {'G', {3, 4, 5, 5, 3}}, {'H', {5, 5, 7, 5, 5}}, {'I', {7, 2, 2, 2, 7}}, {'J', {1, 1, 1, 5, 2}},
      {'K', {5, 5, 6, 5, 5}}, {'L', {4, 4, 4, 4, 7}}, {'M', {5, 7, 7, 5, 5}}, {'N', {6, 5, 5, 5, 5}},
      {'O', {2, 5, 5, 5, 2}}, {'P', {6, 5, 6, 4, 4}}, {'Q', {2, 5, 5, 6, 3}}, {'R', {6, 5, 6, 5, 5}},
      {'S', {3, 4, 2, 1, 6}}, {'T', {7, 2, 2, 2, 2}}, {'U', {5, 5, 5, 5, 7}}, {'V', {5, 5, 5, 5, 2}},
      {'W', {5, 5, 7, 7, 5}}, {'X', {5, 5, 2, 5, 5}}, {'Y', {5, 5, 2, 2, 2}}, {'Z', {7, 1, 2, 4, 7}},
      {'.', {0, 0, 0, 0, 2}}, {'-', {0, 0, 7, 0, 0}}, {'/', {1, 1, 2, 4, 4}}, {'_', {0, 0, 0, 0, 7}},
      {'(', {2, 4, 4, 4, 2}}, {')', {2, 1, 1, 1, 2}}, {':', {0, 2, 0, 2, 0}}, {'=', {0, 7, 0, 7, 0}},
      {' ', {0, 0, 0, 0, 0}},
  };
  return g;
}

const Rgb kBlack{0, 0, 0};
const Rgb kGrey{200, 200, 200};
const Rgb kSeries[3] = {{31, 119, 180}, {214, 39, 40}, {44, 160, 44}};

}  // namespace

Rgb class_color(int label) {
  if (label <= 0) return {0, 0, 0};
  return kClassColors[size_t(label - 1) % kClassColors.size()];
}

Canvas::Canvas(int width, int height, Rgb background)
    : width_(width), height_(height), rgb_(size_t(width) * size_t(height) * 3) {
  if (width <= 0 || height <= 0) throw ConfigError("canvas size must be positive");
  for (size_t i = 0; i < rgb_.size(); i += 3) std::copy(background.begin(), background.end(), rgb_.begin() + i);
}

Rgb Canvas::pixel(int x, int y) const {
  const size_t i = (size_t(y) * size_t(width_) + size_t(x)) * 3;
  return {rgb_[i], rgb_[i + 1], rgb_[i + 2]};
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const size_t i = (size_t(y) * size_t(width_) + size_t(x)) * 3;
  rgb_[i] = c[0];
  rgb_[i + 1] = c[1];
  rgb_[i + 2] = c[2];
}

void Canvas::blend(int x, int y, Rgb c, double alpha) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const Rgb p = pixel(x, y);
  Rgb out;
  for (int k = 0; k < 3; ++k) out[k] = uint8_t(std::lround((1.0 - alpha) * p[k] + alpha * c[k]));
  set(x, y, out);
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) {
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
  }
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
  int cx = x;
  for (char ch : s) {
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    auto it = glyphs().find(up);
    if (it != glyphs().end()) {
      for (int row = 0; row < 5; ++row) {
        for (int col = 0; col < 3; ++col) {
          if (it->second[size_t(row)] & (4 >> col)) {
            fill_rect(cx + col * scale, y + row * scale, cx + (col + 1) * scale - 1, y + (row + 1) * scale - 1, c);
          }
        }
      }
    }
    cx += 4 * scale;
  }
}

void write_png(const Canvas& canvas, const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw DataError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png encoding failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(canvas.width()), png_uint_32(canvas.height()), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const auto& px = canvas.rgb();
  for (int y = 0; y < canvas.height(); ++y) {
    png_write_row(png, const_cast<png_bytep>(px.data() + size_t(y) * size_t(canvas.width()) * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Canvas read_png(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw DataError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png decoding failed for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = int(png_get_image_width(png, info)), h = int(png_get_image_height(png, info));
  std::vector<uint8_t> row(png_get_rowbytes(png, info));
  std::vector<std::vector<uint8_t>> rows;
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    rows.push_back(row);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  Canvas c(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) c.set(x, y, {rows[size_t(y)][size_t(x) * 3], rows[size_t(y)][size_t(x) * 3 + 1], rows[size_t(y)][size_t(x) * 3 + 2]});
  }
  return c;
}

Canvas plot_loss_curves(const std::vector<LossRecord>& records) {
  if (records.empty()) throw DataError("loss log is empty");
  const int w = 800, h = 500, left = 70, right = 20, top = 50, bottom = 60;
  Canvas c(w, h);
  double ymax = 1.0;
  for (const auto& r : records) ymax = std::max({ymax, r.dice, r.iou, r.combined});
  const int64_t s0 = records.front().step, s1 = std::max(records.back().step, s0 + 1);
  auto px = [&](int64_t step) { return left + int(std::lround(double(step - s0) / double(s1 - s0) * (w - left - right))); };
  auto py = [&](double v) { return h - bottom - int(std::lround(v / ymax * (h - top - bottom))); };
  for (int k = 0; k <= 4; ++k) {
    const double v = ymax * k / 4.0;
    c.line(left, py(v), w - right, py(v), kGrey);
    c.text(8, py(v) - 5, fmt::format("{:.2f}", v), kBlack);
  }
  c.line(left, top, left, h - bottom, kBlack);
  c.line(left, h - bottom, w - right, h - bottom, kBlack);
  c.text(left, h - bottom + 10, std::to_string(s0), kBlack);
  const std::string last = std::to_string(s1);
  c.text(w - right - int(last.size()) * 8, h - bottom + 10, last, kBlack);
  c.text(w / 2 - 16, h - 25, "STEP", kBlack);
  c.text(left, 15, "TRAINING LOSS", kBlack, 3);
  const char* names[3] = {"DICE", "IOU", "COMBINED"};
  for (int s = 0; s < 3; ++s) {
    const int lx = w - right - 130, ly = top + 10 + s * 16;
    c.fill_rect(lx, ly, lx + 14, ly + 9, kSeries[s]);
    c.text(lx + 20, ly, names[s], kBlack);
    for (size_t i = 1; i < records.size(); ++i) {
      auto val = [&](const LossRecord& r) { return s == 0 ? r.dice : s == 1 ? r.iou : r.combined; };
      c.line(px(records[i - 1].step), py(val(records[i - 1])), px(records[i].step), py(val(records[i])), kSeries[s]);
    }
  }
  return c;
}

Canvas plot_class_scores(const std::vector<MetricsReport>& reports, const std::vector<std::string>& names) {
  if (reports.empty()) throw DataError("no reports to plot");
  const int classes = reports.front().num_classes;
  for (const auto& r : reports) {
    if (r.num_classes != classes) throw DataError("reports disagree on the number of classes");
  }
  const int w = 900, h = 500, left = 60, bottom = 60, top = 60;
  Canvas c(w, h);
  const int groups = std::max(classes - 1, 1);
  const int bars = int(reports.size()) * 2;
  const double group_w = double(w - left - 20) / groups;
  const double bar_w = group_w * 0.8 / bars;
  auto py = [&](double v) { return h - bottom - int(std::lround(v * (h - top - bottom))); };
  for (int k = 0; k <= 4; ++k) {
    c.line(left, py(k / 4.0), w - 20, py(k / 4.0), kGrey);
    c.text(8, py(k / 4.0) - 5, fmt::format("{:.2f}", k / 4.0), kBlack);
  }
  c.line(left, top, left, h - bottom, kBlack);
  c.line(left, h - bottom, w - 20, h - bottom, kBlack);
  c.text(left, 15, "PER-CLASS DSC / IOU", kBlack, 3);
  for (int g = 0; g < groups; ++g) {
    const int label = g + 1;
    const double gx = left + g * group_w + group_w * 0.1;
    for (size_t r = 0; r < reports.size(); ++r) {
      const ClassMetrics& m = reports[r].classes.at(size_t(label));
      for (int metric = 0; metric < 2; ++metric) {
        const int b = int(r) * 2 + metric;
        const int x0 = int(gx + b * bar_w), x1 = int(gx + (b + 1) * bar_w) - 2;
        Rgb col = kSeries[r % 3];
        if (metric == 1) col = {uint8_t(col[0] / 2 + 127), uint8_t(col[1] / 2 + 127), uint8_t(col[2] / 2 + 127)};
        c.fill_rect(x0, py(metric == 0 ? m.dsc : m.iou), x1, h - bottom, col);
      }
    }
    c.text(int(gx + group_w * 0.3), h - bottom + 10, fmt::format("C{}", label), kBlack);
  }
  for (size_t r = 0; r < reports.size(); ++r) {
    const int lx = w - 260, ly = top - 25 + int(r) * 14;
    c.fill_rect(lx, ly, lx + 12, ly + 9, kSeries[r % 3]);
    c.text(lx + 18, ly, (r < names.size() ? names[r] : fmt::format("RUN {}", r + 1)) + " DSC (LIGHT: IOU)", kBlack);
  }
  return c;
}

Canvas plot_overlay(const Tensor<float>& intensities, const LabelTensor& truth, const LabelTensor& prediction,
                    int64_t slice, int scale) {
  if (intensities.rank() != 3 || truth.shape() != intensities.shape() || prediction.shape() != intensities.shape()) {
    throw ShapeError("overlay: intensities, truth and prediction must share one (S, H, W) shape");
  }
  if (slice < 0 || slice >= intensities.dim(0)) {
    throw DataError(fmt::format("overlay: slice {} out of range [0, {})", slice, intensities.dim(0)));
  }
  const int hh = int(intensities.dim(1)), ww = int(intensities.dim(2));
  const int gap = 10, header = 30;
  Canvas c(2 * ww * scale + gap, hh * scale + header, {255, 255, 255});
  c.text(4, 8, "GROUND TRUTH", kBlack);
  c.text(ww * scale + gap + 4, 8, "PREDICTION", kBlack);
  float lo = intensities[0], hi = intensities[0];
  for (float v : intensities.span()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = hi > lo ? hi - lo : 1.0f;
  const int64_t plane = int64_t(hh) * ww;
  for (int panel = 0; panel < 2; ++panel) {
    const LabelTensor& lbl = panel == 0 ? truth : prediction;
    const int ox = panel * (ww * scale + gap);
    for (int y = 0; y < hh; ++y) {
      for (int x = 0; x < ww; ++x) {
        const int64_t i = slice * plane + int64_t(y) * ww + x;
        const auto g = uint8_t(std::lround(255.0 * (intensities[i] - lo) / range));
        c.fill_rect(ox + x * scale, header + y * scale, ox + (x + 1) * scale - 1, header + (y + 1) * scale - 1, {g, g, g});
        if (lbl[i] > 0) {
          for (int dy = 0; dy < scale; ++dy) {
            for (int dx = 0; dx < scale; ++dx) c.blend(ox + x * scale + dx, header + y * scale + dy, class_color(lbl[i]), 0.55);
          }
        }
      }
    }
  }
  return c;
}

}  // namespace rotcatt
