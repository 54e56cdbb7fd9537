#include "retmap/registration.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "retmap/errors.hpp"
#include "retmap/io.hpp"

namespace retmap {

void check_map_invariants(const RetinotopicMap& map) {
  const std::size_t nv = static_cast<std::size_t>(map.mesh.vertex_count());
  if (map.param.uv.size() != nv || map.visual.size() != nv ||
      map.prf_size.size() != nv || map.variance_explained.size() != nv)
    throw InvalidArgument("per-vertex arrays do not match the vertex count");
  for (std::size_t i = 0; i < nv; ++i)
    if (map.variance_explained[i] > 0.0 && !(map.prf_size[i] > 0.0))
      throw InvalidArgument("vertex " + std::to_string(i) +
                            " has positive R^2 but non-positive pRF size");
}

RegistrationConfig registration_config_from(const std::map<std::string, std::string>& kv) {
  RegistrationConfig c;
  c.smoothness_weight = config_get(kv, "smoothness_weight", c.smoothness_weight);
  c.epsilon = config_get(kv, "epsilon", c.epsilon);
  c.max_outer_iterations = config_get(kv, "max_outer_iterations", c.max_outer_iterations);
  c.energy_tolerance = config_get(kv, "energy_tolerance", c.energy_tolerance);
  c.step_size = config_get(kv, "step_size", c.step_size);
  c.backtracking_factor = config_get(kv, "backtracking_factor", c.backtracking_factor);
  c.max_backtracks = config_get(kv, "max_backtracks", c.max_backtracks);
  c.r2_threshold = config_get(kv, "r2_threshold", c.r2_threshold);
  std::string conv = config_get(kv, "smooth_convention", std::string("displacement"));
  if (conv == "displacement")
    c.smooth_convention = SmoothConvention::Displacement;
  else if (conv == "absolute")
    c.smooth_convention = SmoothConvention::Absolute;
  else
    throw InvalidArgument("unknown smooth_convention: " + conv);
  if (c.epsilon <= 0.0 || c.epsilon >= 1.0)
    throw InvalidArgument("epsilon must lie in (0, 1)");
  if (c.step_size <= 0.0) throw InvalidArgument("step_size must be positive");
  return c;
}

std::map<std::string, std::string> registration_config_to(const RegistrationConfig& c) {
  std::map<std::string, std::string> kv;
  kv["smoothness_weight"] = format_double(c.smoothness_weight);
  kv["epsilon"] = format_double(c.epsilon);
  kv["max_outer_iterations"] = std::to_string(c.max_outer_iterations);
  kv["energy_tolerance"] = format_double(c.energy_tolerance);
  kv["step_size"] = format_double(c.step_size);
  kv["backtracking_factor"] = format_double(c.backtracking_factor);
  kv["max_backtracks"] = std::to_string(c.max_backtracks);
  kv["r2_threshold"] = format_double(c.r2_threshold);
  kv["smooth_convention"] =
      c.smooth_convention == SmoothConvention::Displacement ? "displacement" : "absolute";
  return kv;
}

namespace {

inline double cross2(const Vec2& a, const Vec2& b) {
  return a.x() * b.y() - a.y() * b.x();
}

std::array<Vec2, 3> shape_gradients_2d(const Vec2& p0, const Vec2& p1, const Vec2& p2,
                                       double d) {
  auto rot90 = [](const Vec2& v) { return Vec2(-v.y(), v.x()); };
  return {rot90(p2 - p1) / d, rot90(p0 - p2) / d, rot90(p1 - p0) / d};
}

}  // namespace

TemplateInterpolator::TemplateInterpolator(const RetinotopicMap& templ) : templ_(templ) {
  check_map_invariants(templ);
  const auto& uv = templ_.param.uv;
  const auto& faces = templ_.mesh.faces;

  Vec2 lo = uv[0], hi = uv[0];
  for (const Vec2& p : uv) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  lo.array() -= kBoundaryProjectionBand;
  hi.array() += kBoundaryProjectionBand;
  grid_min_ = lo;
  grid_dim_ = std::max(1, static_cast<int>(std::floor(std::sqrt(
                              static_cast<double>(faces.size())))));
  double extent = std::max({hi.x() - lo.x(), hi.y() - lo.y(), 1e-12});
  cell_size_ = extent / grid_dim_;
  cells_.assign(static_cast<std::size_t>(grid_dim_) * grid_dim_, {});

  auto cell_of = [&](double coord, double origin) {
    int c = static_cast<int>(std::floor((coord - origin) / cell_size_));
    return std::clamp(c, 0, grid_dim_ - 1);
  };

  jacobians_.assign(faces.size(), Eigen::Matrix2d::Zero());
  for (std::size_t fi = 0; fi < faces.size(); ++fi) {
    const Face& f = faces[fi];
    const Vec2 &p0 = uv[f[0]], &p1 = uv[f[1]], &p2 = uv[f[2]];
    Vec2 flo = p0.cwiseMin(p1).cwiseMin(p2);
    Vec2 fhi = p0.cwiseMax(p1).cwiseMax(p2);
    int x0 = cell_of(flo.x(), grid_min_.x()), x1 = cell_of(fhi.x(), grid_min_.x());
    int y0 = cell_of(flo.y(), grid_min_.y()), y1 = cell_of(fhi.y(), grid_min_.y());
    for (int gy = y0; gy <= y1; ++gy)
      for (int gx = x0; gx <= x1; ++gx)
        cells_[static_cast<std::size_t>(gy) * grid_dim_ + gx].push_back(
            static_cast<int>(fi));

    double d = cross2(p1 - p0, p2 - p0);
    if (std::abs(d) < 2.0 * kMinFaceArea) continue;  // unusable sliver
    auto g = shape_gradients_2d(p0, p1, p2, d);
    Eigen::Matrix2d J = Eigen::Matrix2d::Zero();
    for (int k = 0; k < 3; ++k) J += templ_.visual[f[k]] * g[k].transpose();
    jacobians_[fi] = J;
  }
}

Eigen::Matrix2d TemplateInterpolator::visual_jacobian(int face) const {
  return jacobians_[static_cast<std::size_t>(face)];
}

int TemplateInterpolator::locate_face(const Vec2& q, double* bary) const {
  const auto& uv = templ_.param.uv;
  const auto& faces = templ_.mesh.faces;
  int gx = std::clamp(static_cast<int>(std::floor((q.x() - grid_min_.x()) / cell_size_)),
                      0, grid_dim_ - 1);
  int gy = std::clamp(static_cast<int>(std::floor((q.y() - grid_min_.y()) / cell_size_)),
                      0, grid_dim_ - 1);
  for (double tol : {1e-12, 1e-9}) {
    for (int fi : cells_[static_cast<std::size_t>(gy) * grid_dim_ + gx]) {
      const Face& f = faces[fi];
      const Vec2 &p0 = uv[f[0]], &p1 = uv[f[1]], &p2 = uv[f[2]];
      double d = cross2(p1 - p0, p2 - p0);
      if (std::abs(d) < 2.0 * kMinFaceArea) continue;
      Vec2 r = q - p0;
      double l1 = cross2(r, p2 - p0) / d;
      double l2 = cross2(p1 - p0, r) / d;
      double l0 = 1.0 - l1 - l2;
      if (l0 >= -tol && l1 >= -tol && l2 >= -tol) {
        bary[0] = l0;
        bary[1] = l1;
        bary[2] = l2;
        return fi;
      }
    }
  }
  return -1;
}

TemplateSample TemplateInterpolator::project_to_boundary(const Vec2& q) const {
  const auto& uv = templ_.param.uv;
  const auto& loop = templ_.param.boundary_ids;
  double best_dist2 = std::numeric_limits<double>::infinity();
  Vec2 best = q;
  const int nb = static_cast<int>(loop.size());
  for (int k = 0; k < nb; ++k) {
    const Vec2& a = uv[loop[k]];
    const Vec2& b = uv[loop[(k + 1) % nb]];
    Vec2 ab = b - a;
    double len2 = ab.squaredNorm();
    double t = len2 > 0.0 ? std::clamp((q - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    Vec2 p = a + t * ab;
    double d2 = (q - p).squaredNorm();
    if (d2 < best_dist2) {
      best_dist2 = d2;
      best = p;
    }
  }
  TemplateSample sample;
  sample.point = best;
  if (best_dist2 > kBoundaryProjectionBand * kBoundaryProjectionBand) return sample;
  double bary[3];
  int face = locate_face(best, bary);
  if (face < 0) return sample;
  const Face& f = templ_.mesh.faces[face];
  sample.visual = bary[0] * templ_.visual[f[0]] + bary[1] * templ_.visual[f[1]] +
                  bary[2] * templ_.visual[f[2]];
  sample.prf_size = bary[0] * templ_.prf_size[f[0]] + bary[1] * templ_.prf_size[f[1]] +
                    bary[2] * templ_.prf_size[f[2]];
  sample.valid = true;
  sample.face = face;
  return sample;
}

TemplateSample TemplateInterpolator::sample(const Vec2& query) const {
  double bary[3];
  int face = locate_face(query, bary);
  if (face < 0) return project_to_boundary(query);
  TemplateSample out;
  const Face& f = templ_.mesh.faces[face];
  out.visual = bary[0] * templ_.visual[f[0]] + bary[1] * templ_.visual[f[1]] +
               bary[2] * templ_.visual[f[2]];
  out.prf_size = bary[0] * templ_.prf_size[f[0]] + bary[1] * templ_.prf_size[f[1]] +
                 bary[2] * templ_.prf_size[f[2]];
  out.valid = true;
  out.face = face;
  out.point = query;
  return out;
}

std::vector<TemplateSample> interpolate_template(const RetinotopicMap& templ,
                                                 std::span<const Vec2> query_points) {
  TemplateInterpolator interp(templ);
  std::vector<TemplateSample> out(query_points.size());
  for (std::size_t i = 0; i < query_points.size(); ++i)
    out[i] = interp.sample(query_points[i]);
  return out;
}

namespace {

// Cotangent graph Laplacian of the subject's disk parameterization.
Eigen::SparseMatrix<double> cot_laplacian_2d(const CorticalMesh& mesh,
                                             std::span<const Vec2> uv) {
  const int nv = mesh.vertex_count();
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(nv);
  for (const Face& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3], c = f[(k + 2) % 3];
      Vec2 u = uv[a] - uv[c];
      Vec2 v = uv[b] - uv[c];
      double cr = cross2(u, v);
      if (std::abs(cr) < 1e-15) continue;
      double w = 0.5 * u.dot(v) / cr;
      triplets.emplace_back(a, b, -w);
      triplets.emplace_back(b, a, -w);
      diag[a] += w;
      diag[b] += w;
    }
  }
  for (int v = 0; v < nv; ++v) triplets.emplace_back(v, v, diag[v]);
  Eigen::SparseMatrix<double> L(nv, nv);
  L.setFromTriplets(triplets.begin(), triplets.end());
  return L;
}

struct EnergyEvaluator {
  const RetinotopicMap& subject;
  const RegistrationConfig& config;
  TemplateInterpolator interp;
  std::vector<double> weight;       // max(R^2, 0), zeroed below threshold
  Eigen::SparseMatrix<double> L;
  Eigen::MatrixXd identity;         // nv x 2 starting positions

  EnergyEvaluator(const RetinotopicMap& subj, const RetinotopicMap& templ,
                  const RegistrationConfig& cfg)
      : subject(subj), config(cfg), interp(templ) {
    const int nv = subject.vertex_count();
    weight.resize(nv);
    for (int i = 0; i < nv; ++i) {
      double r2 = subject.variance_explained[i];
      weight[i] = r2 >= config.r2_threshold ? std::max(r2, 0.0) : 0.0;
    }
    L = cot_laplacian_2d(subject.mesh, subject.param.uv);
    identity.resize(nv, 2);
    for (int i = 0; i < nv; ++i) identity.row(i) = subject.param.uv[i].transpose();
  }

  // Samples are produced only where the data weight is positive; they are
  // reused by gradient() for the same f.
  EnergyBreakdown energy(std::span<const Vec2> f,
                         std::vector<TemplateSample>* samples_out) const {
    const int nv = subject.vertex_count();
    if (samples_out) samples_out->assign(nv, TemplateSample{});
    EnergyBreakdown e;
    for (int i = 0; i < nv; ++i) {
      if (weight[i] <= 0.0) continue;
      TemplateSample s = interp.sample(f[i]);
      if (samples_out) (*samples_out)[i] = s;
      if (!s.valid) continue;
      e.data += weight[i] * (subject.visual[i] - s.visual).squaredNorm();
    }
    Eigen::MatrixXd d(nv, 2);
    for (int i = 0; i < nv; ++i) d.row(i) = f[i].transpose();
    if (config.smooth_convention == SmoothConvention::Displacement) d -= identity;
    Eigen::MatrixXd Ld = L * d;
    e.smooth = config.smoothness_weight *
               (d.col(0).dot(Ld.col(0)) + d.col(1).dot(Ld.col(1)));
    e.total = e.data + e.smooth;
    return e;
  }

  Eigen::MatrixXd gradient(std::span<const Vec2> f,
                           const std::vector<TemplateSample>& samples) const {
    const int nv = subject.vertex_count();
    Eigen::MatrixXd d(nv, 2);
    for (int i = 0; i < nv; ++i) d.row(i) = f[i].transpose();
    if (config.smooth_convention == SmoothConvention::Displacement) d -= identity;
    Eigen::MatrixXd g = (2.0 * config.smoothness_weight) * (L * d);
    for (int i = 0; i < nv; ++i) {
      if (weight[i] <= 0.0 || !samples[i].valid) continue;
      Vec2 r = subject.visual[i] - samples[i].visual;
      Eigen::Matrix2d J = interp.visual_jacobian(samples[i].face);
      g.row(i) -= (2.0 * weight[i]) * (J.transpose() * r).transpose();
    }
    return g;
  }

  // Inner-product matrix for the gradient step. The raw gradient is a
  // poor direction here: the template's visual gradient varies by orders
  // of magnitude and rotates face to face, so raw steps shear neighboring
  // vertices apart until the map degenerates. Measuring the step in a
  // smoothness-weighted (Sobolev) metric — a strong Laplacian scaled to
  // the data curvature plus the Gauss-Newton diagonal — yields smooth
  // descent directions whose distortion stays bounded. The matrix acts
  // per coordinate and every term is invariant under a common rotation of
  // both disks, so directions stay rotation-equivariant.
  Eigen::SparseMatrix<double> step_metric(
      const std::vector<TemplateSample>& samples) const {
    const int nv = subject.vertex_count();
    Eigen::VectorXd gn(nv);
    for (int i = 0; i < nv; ++i) {
      double v = 0.0;
      if (weight[i] > 0.0 && samples[i].valid) {
        Eigen::Matrix2d J = interp.visual_jacobian(samples[i].face);
        v = 2.0 * weight[i] * J.squaredNorm();
      }
      gn[i] = v;
    }
    double alpha = gn.maxCoeff();
    if (alpha <= 0.0) alpha = 1.0;
    double floor = 1e-9 * (1.0 + alpha + 2.0 * config.smoothness_weight);
    Eigen::SparseMatrix<double> M =
        (alpha + 2.0 * config.smoothness_weight) * L;
    for (int i = 0; i < nv; ++i) M.coeffRef(i, i) += gn[i] + floor;
    return M;
  }
};

}  // namespace

EnergyBreakdown registration_energy(const RetinotopicMap& subject,
                                    const RetinotopicMap& templ,
                                    std::span<const Vec2> f,
                                    const RegistrationConfig& config) {
  check_map_invariants(subject);
  if (f.size() != static_cast<std::size_t>(subject.vertex_count()))
    throw InvalidArgument("candidate map length does not match the subject");
  EnergyEvaluator ev(subject, templ, config);
  return ev.energy(f, nullptr);
}

Eigen::MatrixXd registration_gradient(const RetinotopicMap& subject,
                                      const RetinotopicMap& templ,
                                      std::span<const Vec2> f,
                                      const RegistrationConfig& config) {
  check_map_invariants(subject);
  if (f.size() != static_cast<std::size_t>(subject.vertex_count()))
    throw InvalidArgument("candidate map length does not match the subject");
  EnergyEvaluator ev(subject, templ, config);
  std::vector<TemplateSample> samples;
  ev.energy(f, &samples);
  return ev.gradient(f, samples);
}

RegistrationResult register_maps(const RetinotopicMap& subject,
                                 const RetinotopicMap& templ,
                                 const RegistrationConfig& config) {
  check_map_invariants(subject);
  const int nv = subject.vertex_count();
  const auto& faces = subject.mesh.faces;
  EnergyEvaluator ev(subject, templ, config);

  RegistrationResult result;
  result.f = subject.param.uv;
  std::vector<TemplateSample> samples;
  result.energy_trace.push_back(ev.energy(result.f, &samples));

  std::vector<char> on_boundary(nv, 0);
  for (int b : subject.param.boundary_ids) on_boundary[b] = 1;

  for (int iter = 0; iter < config.max_outer_iterations; ++iter) {
    Eigen::MatrixXd grad = ev.gradient(result.f, samples);
    double gmax = grad.rowwise().norm().maxCoeff();
    if (gmax <= 1e-12 * (1.0 + result.energy_trace.back().total)) {
      result.converged = true;
      break;
    }

    // Gradient step measured in the Sobolev metric; falls back to the raw
    // gradient if the factorization fails.
    Eigen::MatrixXd dir;
    {
      Eigen::SparseMatrix<double> M = ev.step_metric(samples);
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(M);
      if (solver.info() == Eigen::Success) dir = solver.solve(grad);
      if (solver.info() != Eigen::Success || dir.size() == 0 ||
          !dir.allFinite())
        dir = grad;
    }
    double dmax = dir.rowwise().norm().maxCoeff();
    if (!(dmax > 0.0)) {
      result.converged = true;
      break;
    }

    // Backtracking line search; sigma is the largest per-vertex
    // displacement of the trial.
    bool accepted = false;
    double sigma = config.step_size;
    for (int bt = 0; bt <= config.max_backtracks && !accepted;
         ++bt, sigma *= config.backtracking_factor) {
      std::vector<Vec2> trial(nv);
      double scale = sigma / dmax;
      for (int i = 0; i < nv; ++i)
        trial[i] = result.f[i] - scale * Vec2(dir(i, 0), dir(i, 1));
      for (int i = 0; i < nv; ++i) {
        if (!on_boundary[i]) continue;
        double n = trial[i].norm();
        trial[i] = n > 1e-300 ? Vec2(trial[i] / n) : result.f[i];
      }

      BeltramiField mu;
      try {
        mu = compute_beltrami(faces, subject.param.uv, trial);
      } catch (const ConformalSingularity&) {
        continue;  // step collapsed a face; shrink
      }

      std::vector<Vec2> candidate;
      if (mu.max_abs() <= 1.0 - config.epsilon) {
        // Clamp is a no-op, and reconstructing a map from its own
        // coefficient with its own boundary reproduces it exactly.
        candidate = std::move(trial);
      } else {
        BeltramiField clamped = clamp_beltrami(mu, config.epsilon);
        std::map<int, Vec2> pins;
        for (int b : subject.param.boundary_ids) pins[b] = trial[b];
        candidate = linear_beltrami_solve(faces, subject.param.uv, clamped, pins);
        // The reconstruction only approximates the clamped coefficient; a
        // candidate that lands outside the admissible ball is rejected so
        // every accepted iterate stays strictly inside, where small steps
        // need no projection and the line search stays healthy.
        try {
          if (compute_beltrami(faces, subject.param.uv, candidate).max_abs() >
              1.0 - config.epsilon)
            continue;
        } catch (const ConformalSingularity&) {
          continue;
        }
      }
      if (count_flipped(candidate, faces) > 0) continue;

      std::vector<TemplateSample> trial_samples;
      EnergyBreakdown e = ev.energy(candidate, &trial_samples);
      double prev = result.energy_trace.back().total;
      if (e.total < prev) {
        result.f = std::move(candidate);
        samples = std::move(trial_samples);
        result.energy_trace.push_back(e);
        accepted = true;
        if (prev - e.total <= config.energy_tolerance * std::max(prev, 1e-300))
          result.converged = true;
      }
    }

    if (!accepted) {
      if (result.energy_trace.size() == 1 && result.energy_trace.back().total > 0.0)
        throw NoProgress("line search could not decrease the energy from the start");
      result.converged = true;
      break;
    }
    if (result.converged) break;
  }

  result.final_mu_max =
      compute_beltrami(faces, subject.param.uv, result.f).max_abs();
  return result;
}

AppliedRegistration apply_registration(const RetinotopicMap& subject,
                                       const RetinotopicMap& templ,
                                       std::span<const Vec2> f) {
  check_map_invariants(subject);
  if (f.size() != static_cast<std::size_t>(subject.vertex_count()))
    throw InvalidArgument("map length does not match the subject");
  AppliedRegistration out;
  out.map = subject;
  out.valid.assign(f.size(), 0);
  std::vector<TemplateSample> samples = interpolate_template(templ, f);
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!samples[i].valid) continue;
    out.map.visual[i] = samples[i].visual;
    out.map.prf_size[i] = samples[i].prf_size;
    out.valid[i] = 1;
  }
  return out;
}

PrfTable load_prf_csv(const std::filesystem::path& path,
                      const std::string& default_convention) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::string convention = default_convention;
  bool header_seen = false;
  PrfTable table;
  std::size_t row = 0;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string context = path.string() + ":" + std::to_string(lineno);
    if (line.empty()) continue;
    if (line[0] == '#') {
      // In-file declaration `# angle_convention: <value>` (or `=`) overrides
      // the caller-provided default.
      if (line.find("angle_convention") != std::string::npos) {
        auto sep = line.find_first_of(":=", line.find("angle_convention"));
        if (sep != std::string::npos) {
          std::string value = line.substr(sep + 1);
          value.erase(0, value.find_first_not_of(" \t"));
          value.erase(value.find_last_not_of(" \t") + 1);
          convention = value;
        }
      }
      continue;
    }
    if (!header_seen) {
      if (line != "vertex,ecc,ang,sigma,r2")
        throw ParseError(context + ": expected header vertex,ecc,ang,sigma,r2");
      header_seen = true;
      continue;
    }
    std::vector<std::string> fields = split(line, ',');
    if (fields.size() != 5) throw ParseError(context + ": expected 5 fields");
    if (parse_double(fields[0], context) != static_cast<double>(row))
      throw ParseError(context + ": vertex indices must be sequential from 0");
    double ecc = parse_double(fields[1], context);
    double ang = parse_double(fields[2], context);
    double sigma = parse_double(fields[3], context);
    double r2 = parse_double(fields[4], context);
    double math_deg;
    if (convention == kAngleConventionMath)
      math_deg = ang;
    else if (convention == kAngleConventionClinical)
      math_deg = 90.0 - ang;
    else
      throw ParseError(path.string() + ": unknown angle convention '" + convention + "'");
    double rad = math_deg * std::numbers::pi / 180.0;
    table.visual.emplace_back(ecc * std::cos(rad), ecc * std::sin(rad));
    table.prf_size.push_back(sigma);
    table.variance_explained.push_back(r2);
    ++row;
  }
  if (!header_seen) throw ParseError(path.string() + ": missing header");
  return table;
}

void save_prf_csv(const std::filesystem::path& path, const PrfTable& table) {
  std::string out = "# angle_convention: ";
  out += kAngleConventionMath;
  out += "\nvertex,ecc,ang,sigma,r2\n";
  for (std::size_t i = 0; i < table.visual.size(); ++i) {
    double ecc = table.visual[i].norm();
    double ang = ecc > 0.0
                     ? std::atan2(table.visual[i].y(), table.visual[i].x()) * 180.0 /
                           std::numbers::pi
                     : 0.0;
    out += std::to_string(i) + "," + format_double(ecc) + "," + format_double(ang) +
           "," + format_double(table.prf_size[i]) + "," +
           format_double(table.variance_explained[i]) + "\n";
  }
  write_text_file(path, out);
}

}  // namespace retmap
