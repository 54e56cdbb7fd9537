#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "retmap/errors.hpp"

namespace retmap {

// Time-ordered binary aperture frames on a square visual-field grid.
struct Stimulus {
  int height = 0;
  int width = 0;
  double field_extent = 20.0;  // degrees spanned per axis
  double tr = 1.0;             // seconds per frame
  std::vector<std::vector<std::uint8_t>> frames;  // row-major h*w, 0/1

  int frame_count() const { return static_cast<int>(frames.size()); }
  // Visual-field coordinates of a grid sample center; row 0 is the bottom.
  double sample_x(int col) const;
  double sample_y(int row) const;
  double sample_area() const;
};

struct HRFParams {
  double peak_delay = 6.0;         // s
  double undershoot_delay = 16.0;  // s
  double peak_dispersion = 1.0;
  double undershoot_dispersion = 1.0;
  double undershoot_ratio = 1.0 / 6.0;
};

struct BoldSeries {
  std::vector<std::vector<double>> samples;  // per vertex
  double tr = 1.0;
};

// Neural drive of a circular 2D-Gaussian pRF: per frame, the aperture
// integral of the unit-integral Gaussian at (x, y) with size sigma.
// Throws SigmaNonPositive.
std::vector<double> prf_drive(const Stimulus& stimulus, double x, double y,
                              double sigma);

// Double-gamma difference sampled at the TR grid, peak-normalized to 1.
std::vector<double> canonical_hrf(const HRFParams& params, double tr,
                                  double duration);

// Drive convolved with the HRF kernel, truncated to the stimulus length.
// Unit gain, zero baseline.
std::vector<double> predict_bold(const Stimulus& stimulus, double x, double y,
                                 double sigma, const HRFParams& hrf);

// Per-vertex goodness of fit between an observed series and a prediction.
struct FitEntry {
  double gain = 0.0;
  double baseline = 0.0;
  double rss = 0.0;
  double rmse = 0.0;
  double pearson = 0.0;
  double aic = 0.0;
  bool valid = false;  // false when either series has zero variance
};

// Number of pRF model parameters counted by AIC: x, y, sigma, gain, baseline.
inline constexpr int kAicParamCount = 5;

// Least-squares gain+baseline fit, then rmse = sqrt(RSS/n), Pearson
// correlation, and aic = n ln(RSS/n) + 2k. Series shorter than 8 samples
// are rejected. Degenerate (zero-variance) series yield valid = false.
FitEntry fit_gain_and_metrics(std::span<const double> observed,
                              std::span<const double> predicted);

// Stimulus file: `RETSTIM 1`, `<nframes> <h> <w> <extent_deg> <tr>`, then
// nframes rows of h*w 0/1 values.
Stimulus load_stimulus(const std::filesystem::path& path);
void save_stimulus(const std::filesystem::path& path, const Stimulus& stimulus);

// BOLD CSV: header `vertex,t0,...`, one row per vertex.
BoldSeries load_bold_csv(const std::filesystem::path& path, double tr);
void save_bold_csv(const std::filesystem::path& path, const BoldSeries& series);

}  // namespace retmap
