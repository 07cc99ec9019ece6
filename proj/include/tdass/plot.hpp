#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "tdass/bytes.hpp"
#include "tdass/corpus.hpp"
#include "tdass/errors.hpp"
#include "tdass/tensor.hpp"

namespace tdass {

inline constexpr std::size_t kPanelSeparator = 2;

struct PanelRange {
  double min = 0.0;
  double max = 0.0;
};

inline PanelRange panel_range(const Tensor& mel) {
  const auto d = mel.data();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  return {*lo, *hi};
}

inline std::uint8_t quantize(double v, const PanelRange& r) {
  if (r.max <= r.min) return 0;
  return static_cast<std::uint8_t>(std::lround(255.0 * (v - r.min) / (r.max - r.min)));
}

/// P5 image, ground truth left and prediction right, each min-max normalized on its own; the top
/// row is the highest mel bin. Width = frames_gt + separator + frames_pred, height = n_mels.
inline std::string mel_comparison_pgm(const Tensor& ground_truth, const Tensor& predicted) {
  if (ground_truth.dim(1) != predicted.dim(1)) throw DimensionError("plot: panels disagree on n_mels");
  const std::size_t n_mels = ground_truth.dim(1);
  const std::size_t w_gt = ground_truth.dim(0), w_pred = predicted.dim(0);
  const std::size_t width = w_gt + kPanelSeparator + w_pred;
  const PanelRange r_gt = panel_range(ground_truth), r_pred = panel_range(predicted);
  std::string img = "P5\n" + std::to_string(width) + " " + std::to_string(n_mels) + "\n255\n";
  for (std::size_t row = 0; row < n_mels; ++row) {
    const std::size_t m = n_mels - 1 - row;
    for (std::size_t t = 0; t < w_gt; ++t) img.push_back(static_cast<char>(quantize(ground_truth.at(t, m), r_gt)));
    for (std::size_t s = 0; s < kPanelSeparator; ++s) img.push_back(static_cast<char>(255));
    for (std::size_t t = 0; t < w_pred; ++t) img.push_back(static_cast<char>(quantize(predicted.at(t, m), r_pred)));
  }
  return img;
}

/// One row per mel bin (bin 0 first): ground-truth frames, then predicted frames. The leading
/// comment line records truncation and both panels' ranges.
inline std::string mel_comparison_csv(const Tensor& ground_truth, const Tensor& predicted, bool truncated) {
  const PanelRange r_gt = panel_range(ground_truth), r_pred = panel_range(predicted);
  std::string s = "# truncated=" + std::string(truncated ? "1" : "0") +
                  " frames_gt=" + std::to_string(ground_truth.dim(0)) +
                  " frames_pred=" + std::to_string(predicted.dim(0)) + " gt_min=" + format_double(r_gt.min) +
                  " gt_max=" + format_double(r_gt.max) + " pred_min=" + format_double(r_pred.min) +
                  " pred_max=" + format_double(r_pred.max) + "\n";
  for (std::size_t m = 0; m < ground_truth.dim(1); ++m) {
    for (std::size_t t = 0; t < ground_truth.dim(0); ++t) s += (t ? "," : "") + format_double(ground_truth.at(t, m));
    for (std::size_t t = 0; t < predicted.dim(0); ++t) s += "," + format_double(predicted.at(t, m));
    s += "\n";
  }
  return s;
}

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::string pixels;
};

inline PgmImage parse_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("truncated PGM header", pos);
    return std::string(bytes.substr(start, pos - start));
  };
  if (token() != "P5") throw FormatError("not a P5 PGM", 0);
  PgmImage img;
  img.width = std::stoul(token());
  img.height = std::stoul(token());
  if (token() != "255") throw FormatError("unsupported PGM maxval", pos);
  ++pos;
  if (bytes.size() - pos != img.width * img.height) throw FormatError("PGM pixel count mismatch", pos);
  img.pixels = std::string(bytes.substr(pos));
  return img;
}

}  // namespace tdass
