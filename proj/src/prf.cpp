#include "retmap/prf.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "retmap/io.hpp"

namespace retmap {

double Stimulus::sample_x(int col) const {
  return -0.5 * field_extent + (col + 0.5) * field_extent / width;
}

double Stimulus::sample_y(int row) const {
  return -0.5 * field_extent + (row + 0.5) * field_extent / height;
}

double Stimulus::sample_area() const {
  return (field_extent / width) * (field_extent / height);
}

std::vector<double> prf_drive(const Stimulus& stimulus, double x, double y,
                              double sigma) {
  if (!(sigma > 0.0)) throw SigmaNonPositive("pRF size must be positive");
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
  const double norm = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
  const double da = stimulus.sample_area();

  // Gaussian factorizes, so row/column terms are precomputed once.
  std::vector<double> gx(stimulus.width), gy(stimulus.height);
  for (int c = 0; c < stimulus.width; ++c) {
    double dx = stimulus.sample_x(c) - x;
    gx[c] = std::exp(-dx * dx * inv_two_sigma2);
  }
  for (int r = 0; r < stimulus.height; ++r) {
    double dy = stimulus.sample_y(r) - y;
    gy[r] = std::exp(-dy * dy * inv_two_sigma2);
  }

  std::vector<double> drive(stimulus.frame_count(), 0.0);
  for (int t = 0; t < stimulus.frame_count(); ++t) {
    const auto& frame = stimulus.frames[t];
    double acc = 0.0;
    for (int r = 0; r < stimulus.height; ++r) {
      const std::uint8_t* row = frame.data() + static_cast<std::size_t>(r) * stimulus.width;
      double row_acc = 0.0;
      for (int c = 0; c < stimulus.width; ++c)
        if (row[c]) row_acc += gx[c];
      acc += row_acc * gy[r];
    }
    drive[t] = acc * norm * da;
  }
  return drive;
}

namespace {

// Gamma pdf with shape a, scale b, evaluated through logs for stability.
double gamma_pdf(double t, double a, double b) {
  if (t <= 0.0) return 0.0;
  return std::exp((a - 1.0) * std::log(t) - t / b - a * std::log(b) - std::lgamma(a));
}

}  // namespace

std::vector<double> canonical_hrf(const HRFParams& params, double tr, double duration) {
  if (!(tr > 0.0) || !(duration > 0.0))
    throw InvalidArgument("HRF sampling needs positive tr and duration");
  double a1 = params.peak_delay / params.peak_dispersion;
  double a2 = params.undershoot_delay / params.undershoot_dispersion;
  int n = static_cast<int>(std::floor(duration / tr)) + 1;
  std::vector<double> h(n);
  double peak = 0.0;
  for (int k = 0; k < n; ++k) {
    double t = k * tr;
    h[k] = gamma_pdf(t, a1, params.peak_dispersion) -
           params.undershoot_ratio * gamma_pdf(t, a2, params.undershoot_dispersion);
    peak = std::max(peak, h[k]);
  }
  if (peak <= 0.0) throw InvalidArgument("HRF has no positive peak at this sampling");
  for (double& v : h) v /= peak;
  return h;
}

std::vector<double> predict_bold(const Stimulus& stimulus, double x, double y,
                                 double sigma, const HRFParams& hrf) {
  std::vector<double> drive = prf_drive(stimulus, x, y, sigma);
  std::vector<double> kernel = canonical_hrf(hrf, stimulus.tr, 32.0);
  const int nt = static_cast<int>(drive.size());
  const int nk = static_cast<int>(kernel.size());
  std::vector<double> bold(nt, 0.0);
  for (int t = 0; t < nt; ++t) {
    double acc = 0.0;
    int kmax = std::min(t, nk - 1);
    for (int k = 0; k <= kmax; ++k) acc += kernel[k] * drive[t - k];
    bold[t] = acc;
  }
  return bold;
}

FitEntry fit_gain_and_metrics(std::span<const double> observed,
                              std::span<const double> predicted) {
  const std::size_t n = observed.size();
  if (n != predicted.size())
    throw InvalidArgument("observed and predicted series differ in length");
  if (n < 8) throw InvalidArgument("need at least 8 samples to fit");

  double mo = 0.0, mp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mo += observed[i];
    mp += predicted[i];
  }
  mo /= static_cast<double>(n);
  mp /= static_cast<double>(n);

  double spp = 0.0, soo = 0.0, spo = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dp = predicted[i] - mp;
    double dobs = observed[i] - mo;
    spp += dp * dp;
    soo += dobs * dobs;
    spo += dp * dobs;
  }

  FitEntry fit;
  if (spp <= 0.0 || soo <= 0.0) return fit;  // valid = false

  fit.gain = spo / spp;
  fit.baseline = mo - fit.gain * mp;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = observed[i] - (fit.gain * predicted[i] + fit.baseline);
    rss += r * r;
  }
  fit.rss = rss;
  double mean_sq = rss / static_cast<double>(n);
  fit.rmse = std::sqrt(mean_sq);
  fit.aic = static_cast<double>(n) * std::log(std::max(mean_sq, 1e-300)) +
            2.0 * kAicParamCount;
  fit.pearson = spo / std::sqrt(spp * soo);
  fit.valid = true;
  return fit;
}

Stimulus load_stimulus(const std::filesystem::path& path) {
  std::istringstream in(strip_hash_comments(read_text_file(path)));
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "RETSTIM" || version != 1)
    throw ParseError(path.string() + ": expected RETSTIM 1 header");
  int nframes = 0;
  Stimulus s;
  in >> nframes >> s.height >> s.width >> s.field_extent >> s.tr;
  if (!in || nframes < 0 || s.height <= 0 || s.width <= 0 || s.field_extent <= 0.0 ||
      s.tr <= 0.0)
    throw ParseError(path.string() + ": bad stimulus dimensions");
  s.frames.assign(nframes, std::vector<std::uint8_t>(
                               static_cast<std::size_t>(s.height) * s.width));
  for (int t = 0; t < nframes; ++t) {
    for (auto& cell : s.frames[t]) {
      int v = -1;
      in >> v;
      if (!in || (v != 0 && v != 1))
        throw ParseError(path.string() + ": aperture values must be 0 or 1");
      cell = static_cast<std::uint8_t>(v);
    }
  }
  return s;
}

void save_stimulus(const std::filesystem::path& path, const Stimulus& stimulus) {
  std::string out = "RETSTIM 1\n";
  out += std::to_string(stimulus.frame_count()) + " " + std::to_string(stimulus.height) +
         " " + std::to_string(stimulus.width) + " " +
         format_double(stimulus.field_extent) + " " + format_double(stimulus.tr) + "\n";
  for (const auto& frame : stimulus.frames) {
    std::string line;
    line.reserve(frame.size() * 2);
    for (std::size_t i = 0; i < frame.size(); ++i) {
      if (i) line += ' ';
      line += frame[i] ? '1' : '0';
    }
    out += line + "\n";
  }
  write_text_file(path, out);
}

BoldSeries load_bold_csv(const std::filesystem::path& path, double tr) {
  std::istringstream in(read_text_file(path));
  std::string line;
  BoldSeries series;
  series.tr = tr;
  bool header_seen = false;
  std::size_t nt = 0, row = 0;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::string context = path.string() + ":" + std::to_string(lineno);
    std::vector<std::string> fields = split(line, ',');
    if (!header_seen) {
      if (fields.empty() || fields[0] != "vertex")
        throw ParseError(context + ": expected header starting with 'vertex'");
      nt = fields.size() - 1;
      header_seen = true;
      continue;
    }
    if (fields.size() != nt + 1)
      throw ParseError(context + ": expected " + std::to_string(nt + 1) + " fields");
    if (parse_double(fields[0], context) != static_cast<double>(row))
      throw ParseError(context + ": vertex indices must be sequential from 0");
    std::vector<double> samples(nt);
    for (std::size_t k = 0; k < nt; ++k)
      samples[k] = parse_double(fields[k + 1], context);
    series.samples.push_back(std::move(samples));
    ++row;
  }
  if (!header_seen) throw ParseError(path.string() + ": missing header");
  return series;
}

void save_bold_csv(const std::filesystem::path& path, const BoldSeries& series) {
  std::string out = "vertex";
  std::size_t nt = series.samples.empty() ? 0 : series.samples[0].size();
  for (std::size_t t = 0; t < nt; ++t) out += ",t" + std::to_string(t);
  out += "\n";
  for (std::size_t v = 0; v < series.samples.size(); ++v) {
    if (series.samples[v].size() != nt)
      throw InvalidArgument("ragged BOLD series cannot be saved");
    out += std::to_string(v);
    for (double s : series.samples[v]) out += "," + format_double(s);
    out += "\n";
  }
  write_text_file(path, out);
}

}  // namespace retmap
