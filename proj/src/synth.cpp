#include "retmap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include "retmap/io.hpp"

namespace retmap {

std::uint64_t Rng::splitmix() {
  state_ += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() { return splitmix(); }

double Rng::uniform() {
  return static_cast<double>(splitmix() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double radius = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  have_spare_ = true;
  return radius * std::cos(angle);
}

CorticalMesh regular_disk_mesh(int target_vertices, double radius_mm) {
  if (target_vertices < 1 || radius_mm <= 0.0)
    throw InvalidArgument("disk mesh needs a positive size and radius");
  int rings = 1;
  while (1 + 3 * rings * (rings + 1) < target_vertices) ++rings;

  CorticalMesh mesh;
  mesh.vertices.emplace_back(0.0, 0.0, 0.0);
  std::vector<int> ring_start = {0};  // index of each ring's first vertex
  for (int k = 1; k <= rings; ++k) {
    ring_start.push_back(mesh.vertex_count());
    double r = radius_mm * k / rings;
    for (int j = 0; j < 6 * k; ++j) {
      double theta = 2.0 * std::numbers::pi * j / (6 * k);
      mesh.vertices.emplace_back(r * std::cos(theta), r * std::sin(theta), 0.0);
    }
  }

  for (int k = 1; k <= rings; ++k) {
    int ni = k == 1 ? 1 : 6 * (k - 1);
    int no = 6 * k;
    int inner0 = ring_start[k - 1];
    int outer0 = ring_start[k];
    if (k == 1) {
      for (int j = 0; j < no; ++j)
        mesh.faces.push_back({inner0, outer0 + j, outer0 + (j + 1) % no});
      continue;
    }
    // Stitch two concentric rings by merging them in angular order.
    int i = 0, o = 0;
    while (i < ni || o < no) {
      bool take_outer;
      if (o >= no)
        take_outer = false;
      else if (i >= ni)
        take_outer = true;
      else
        take_outer = static_cast<double>(o + 1) / no <= static_cast<double>(i + 1) / ni;
      if (take_outer) {
        mesh.faces.push_back(
            {inner0 + i % ni, outer0 + o % no, outer0 + (o + 1) % no});
        ++o;
      } else {
        mesh.faces.push_back(
            {inner0 + i % ni, outer0 + o % no, inner0 + (i + 1) % ni});
        ++i;
      }
    }
  }
  return mesh;
}

CorticalMesh random_disk_patch(int target_vertices, std::uint64_t seed,
                               double radius_mm) {
  CorticalMesh mesh = regular_disk_mesh(target_vertices, radius_mm);
  Rng rng(seed);

  // Boundary wobble: scale each radius by a low-harmonic function of the
  // angle. Linear in r at fixed angle, so the planar map stays injective.
  std::array<double, 8> harm;
  for (double& h : harm) h = rng.normal();
  // Height relief from a handful of smooth bumps.
  const int n_bumps = 5;
  std::vector<Vec3> bumps(n_bumps);  // (cx, cy, amplitude)
  std::vector<double> widths(n_bumps);
  for (int m = 0; m < n_bumps; ++m) {
    double r = radius_mm * std::sqrt(rng.uniform());
    double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    bumps[m] = Vec3(r * std::cos(a), r * std::sin(a), rng.normal() * 0.15 * radius_mm);
    widths[m] = rng.uniform(0.3, 0.6) * radius_mm;
  }

  for (Vec3& p : mesh.vertices) {
    double theta = std::atan2(p.y(), p.x());
    double wobble = 0.0;
    for (int j = 0; j < 4; ++j)
      wobble += (harm[2 * j] * std::cos((j + 1) * theta) +
                 harm[2 * j + 1] * std::sin((j + 1) * theta)) /
                (j + 1.0);
    double scale = 1.0 + 0.08 * wobble;
    double z = 0.0;
    for (int m = 0; m < n_bumps; ++m) {
      double dx = p.x() - bumps[m].x(), dy = p.y() - bumps[m].y();
      z += bumps[m].z() * std::exp(-(dx * dx + dy * dy) / (2.0 * widths[m] * widths[m]));
    }
    p = Vec3(p.x() * scale, p.y() * scale, z);
  }
  return mesh;
}

RetinotopicMap synth_template(const SyntheticSpec& spec) {
  if (spec.ecc_min <= 0.0 || spec.ecc_max <= spec.ecc_min || spec.bands < 1)
    throw InvalidArgument("template needs 0 < ecc_min < ecc_max and bands >= 1");
  RetinotopicMap map;
  map.mesh = regular_disk_mesh(spec.mesh_resolution, spec.patch_radius_mm);
  const int nv = map.mesh.vertex_count();

  // The flat construction is already a scaled disk, so the normalized
  // planar coordinates are an exact unit-disk parameterization.
  map.param.uv.resize(nv);
  for (int i = 0; i < nv; ++i)
    map.param.uv[i] = Vec2(map.mesh.vertices[i].x(), map.mesh.vertices[i].y()) /
                      spec.patch_radius_mm;
  map.param.boundary_ids = boundary_loop(map.mesh);

  map.visual.resize(nv);
  map.prf_size.resize(nv);
  map.variance_explained.assign(nv, 1.0);
  double log_ratio = std::log(spec.ecc_max / spec.ecc_min);
  for (int i = 0; i < nv; ++i) {
    double r = std::min(map.param.uv[i].norm(), 1.0);
    double theta = std::atan2(map.param.uv[i].y(), map.param.uv[i].x());
    double ecc = spec.ecc_min * std::exp(log_ratio * r);

    // Fraction of the way around the disk, mirrored across band boundaries
    // so the angle map stays continuous for multi-band layouts.
    double t = theta / (2.0 * std::numbers::pi) + 0.5;  // [0, 1)
    double s = std::min(t * spec.bands, static_cast<double>(spec.bands));
    int band = std::min(static_cast<int>(std::floor(s)), spec.bands - 1);
    double u = s - band;
    if (band % 2 == 1) u = 1.0 - u;
    double ang_deg = (u - 0.5) * spec.wedge_deg;

    double rad = ang_deg * std::numbers::pi / 180.0;
    map.visual[i] = Vec2(ecc * std::cos(rad), ecc * std::sin(rad));
    map.prf_size[i] = spec.sigma_intercept + spec.sigma_slope * ecc;
  }
  return map;
}

SynthDeformation synth_deformation(const CorticalMesh& mesh,
                                   const DiskParameterization& param,
                                   double mu_max, std::uint64_t seed) {
  if (mu_max <= 0.0 || mu_max >= 1.0)
    throw InvalidArgument("deformation strength must lie in (0, 1)");
  Rng rng(seed);

  const int nf = mesh.face_count();
  std::map<int, Vec2> pins;
  for (int b : param.boundary_ids) pins[b] = param.uv[b];
  const double win_lo = mu_max * (1.0 - 1e-3);

  // The reconstruction smooths the prescribed field, so its recomputed
  // coefficient can saturate below the requested strength no matter the
  // scaling; draw fields until one can land on the target.
  for (int draw = 0; draw < 16; ++draw) {
    // Low-order random polynomial, tapered to zero at the boundary so the
    // prescribed field is compatible with the fixed rim.
    std::array<Complex, 4> coeff;
    for (Complex& c : coeff) c = Complex(rng.normal(), rng.normal());
    auto shape = [&](const Vec2& p) {
      Complex z(p.x(), p.y());
      Complex q = coeff[0] + z * (coeff[1] + z * (coeff[2] + z * coeff[3]));
      return (1.0 - std::norm(z)) * q;
    };

    std::vector<Complex> base(nf);
    double base_max = 0.0;
    for (int fi = 0; fi < nf; ++fi) {
      const Face& f = mesh.faces[fi];
      Vec2 centroid = (param.uv[f[0]] + param.uv[f[1]] + param.uv[f[2]]) / 3.0;
      base[fi] = shape(centroid);
      base_max = std::max(base_max, std::abs(base[fi]));
    }
    if (base_max <= 0.0) continue;

    struct Eval {
      bool admissible = false;  // flip-free with recomputed |mu| < 1
      double achieved = 0.0;
      std::vector<Vec2> deformed;
      BeltramiField prescribed;
    };
    auto eval = [&](double scale) {
      Eval e;
      e.prescribed.mu.resize(nf);
      for (int fi = 0; fi < nf; ++fi) e.prescribed.mu[fi] = scale * base[fi];
      try {
        e.deformed =
            linear_beltrami_solve(mesh.faces, param.uv, e.prescribed, pins);
        if (count_flipped(e.deformed, mesh.faces) > 0) return e;
        e.achieved =
            compute_beltrami(mesh.faces, param.uv, e.deformed).max_abs();
        e.admissible = e.achieved < 1.0;
      } catch (const Error&) {
        e.admissible = false;
      }
      return e;
    };

    // Rescale until the recomputed coefficient lands in
    // [mu_max - 0.1%, mu_max]: secant growth until the target is passed or
    // the prescribed field hits its own admissibility cap, then bisection.
    // achieved(scale) is continuous and reaches 1 before any flip appears,
    // so a bracket around the window always contains a landing point.
    const double cap = 0.95 / base_max;
    double lo = 0.0;   // admissible with achieved below the window
    double hi = 0.0;   // too strong (above mu_max) or inadmissible
    bool have_hi = false;
    double scale = std::min(mu_max / base_max, cap);

    for (int it = 0; it < 80; ++it) {
      Eval e = eval(scale);
      if (e.admissible && e.achieved >= win_lo && e.achieved <= mu_max) {
        SynthDeformation out;
        out.deformed_uv = std::move(e.deformed);
        out.prescribed_mu = std::move(e.prescribed);
        out.achieved_mu_max = e.achieved;
        return out;
      }
      if (!e.admissible || e.achieved > mu_max) {
        hi = scale;
        have_hi = true;
      } else {
        lo = scale;
        if (!have_hi) {
          if (scale >= cap * (1.0 - 1e-12)) break;  // saturated: redraw
          double next = scale * win_lo / std::max(e.achieved, 1e-12);
          scale = std::min(std::max(next, 1.05 * scale), cap);
          continue;
        }
      }
      if (hi - lo <= 1e-14 * std::max(1.0, hi)) break;  // stuck: redraw
      scale = 0.5 * (lo + hi);
    }
  }
  throw SolverFailure("deformation strength did not converge to the target");
}

RetinotopicMap synth_subject(const RetinotopicMap& templ,
                             const SynthDeformation& deformation,
                             double visual_noise_sd, double r2_base,
                             double r2_decay, std::uint64_t seed) {
  check_map_invariants(templ);
  const int nv = templ.vertex_count();
  if (deformation.deformed_uv.size() != static_cast<std::size_t>(nv))
    throw InvalidArgument("deformation does not match the template mesh");
  Rng rng(seed);

  RetinotopicMap subject;
  subject.mesh = templ.mesh;
  subject.param = templ.param;
  subject.visual.resize(nv);
  subject.prf_size.resize(nv);
  subject.variance_explained.resize(nv);

  std::vector<TemplateSample> samples =
      interpolate_template(templ, deformation.deformed_uv);
  for (int i = 0; i < nv; ++i) {
    if (!samples[i].valid)
      throw SolverFailure("deformed vertex " + std::to_string(i) +
                          " left the template domain");
    double nx = rng.normal(), ny = rng.normal();
    subject.visual[i] = samples[i].visual + visual_noise_sd * Vec2(nx, ny);
    subject.prf_size[i] = samples[i].prf_size;
    double ecc = samples[i].visual.norm();
    subject.variance_explained[i] = std::clamp(r2_base - r2_decay * ecc, 0.0, 1.0);
  }
  return subject;
}

Stimulus synth_bar_stimulus(int n_sweeps, int frames_per_sweep, double extent,
                            int resolution, double tr) {
  if (n_sweeps < 1 || frames_per_sweep < 1 || extent <= 0.0 || resolution < 1 ||
      tr <= 0.0)
    throw InvalidArgument("bar stimulus needs positive dimensions");
  Stimulus s;
  s.height = resolution;
  s.width = resolution;
  s.field_extent = extent;
  s.tr = tr;
  const double bar_width = extent / 8.0;

  for (int k = 0; k < n_sweeps; ++k) {
    double phi = std::numbers::pi * k / n_sweeps;  // sweep direction
    Vec2 dir(std::cos(phi), std::sin(phi));
    for (int rev = 0; rev < 2; ++rev) {
      for (int j = 0; j < frames_per_sweep; ++j) {
        double c = -0.5 * extent + (j + 0.5) * extent / frames_per_sweep;
        if (rev) c = -c;
        std::vector<std::uint8_t> frame(
            static_cast<std::size_t>(resolution) * resolution, 0);
        for (int r = 0; r < resolution; ++r) {
          for (int col = 0; col < resolution; ++col) {
            double proj = dir.dot(Vec2(s.sample_x(col), s.sample_y(r)));
            if (std::abs(proj - c) <= 0.5 * bar_width)
              frame[static_cast<std::size_t>(r) * resolution + col] = 1;
          }
        }
        s.frames.push_back(std::move(frame));
      }
    }
  }
  return s;
}

void save_deformation(const std::filesystem::path& path,
                      const SynthDeformation& deformation) {
  std::string out = "RETDEF 1\n" + std::to_string(deformation.deformed_uv.size()) + "\n";
  for (const Vec2& p : deformation.deformed_uv)
    out += format_double(p.x()) + " " + format_double(p.y()) + "\n";
  write_text_file(path, out);
}

std::vector<Vec2> load_deformation(const std::filesystem::path& path) {
  std::istringstream in(strip_hash_comments(read_text_file(path)));
  std::string magic;
  int version = 0, nv = 0;
  in >> magic >> version >> nv;
  if (magic != "RETDEF" || version != 1 || !in || nv < 0)
    throw ParseError(path.string() + ": expected RETDEF 1 header");
  std::vector<Vec2> out(nv);
  for (int i = 0; i < nv; ++i) {
    in >> out[i].x() >> out[i].y();
    if (!in) throw ParseError(path.string() + ": truncated coordinate list");
  }
  return out;
}

}  // namespace retmap
