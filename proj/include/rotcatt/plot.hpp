#pragma once

#include <array>
#include <string>
#include <vector>

#include "rotcatt/data.hpp"
#include "rotcatt/harness.hpp"
#include "rotcatt/metrics.hpp"

namespace rotcatt {

using Rgb = std::array<uint8_t, 3>;

// Overlay colors; class c > 0 uses kClassColors[(c - 1) % size].
inline constexpr std::array<Rgb, 8> kClassColors{{
    {230, 25, 75},   // 1 red
    {60, 180, 75},   // 2 green
    {255, 225, 25},  // 3 yellow
    {0, 130, 200},   // 4 blue
    {245, 130, 48},  // 5 orange
    {145, 30, 180},  // 6 purple
    {70, 240, 240},  // 7 cyan
    {240, 50, 230},  // 8 magenta
}};
Rgb class_color(int label);

// 8-bit RGB raster.
class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255});

  int width() const { return width_; }
  int height() const { return height_; }
  Rgb pixel(int x, int y) const;
  void set(int x, int y, Rgb c);
  void blend(int x, int y, Rgb c, double alpha);
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c);
  // Upper-case 3x5 bitmap text, `scale` pixels per dot.
  void text(int x, int y, const std::string& s, Rgb c, int scale = 2);
  const std::vector<uint8_t>& rgb() const { return rgb_; }

 private:
  int width_, height_;
  std::vector<uint8_t> rgb_;
};

void write_png(const Canvas& canvas, const std::string& path);
Canvas read_png(const std::string& path);

Canvas plot_loss_curves(const std::vector<LossRecord>& records);
// Grouped DSC / IoU bars per class for one or more reports.
Canvas plot_class_scores(const std::vector<MetricsReport>& reports, const std::vector<std::string>& names);
// Ground truth (left) and prediction (right) over the grayscale slice.
Canvas plot_overlay(const Tensor<float>& intensities, const LabelTensor& truth, const LabelTensor& prediction,
                    int64_t slice, int scale = 4);

}  // namespace rotcatt
