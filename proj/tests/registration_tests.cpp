#include <doctest.h>

#include <cmath>

#include "retmap/eval.hpp"
#include "retmap/registration.hpp"
#include "retmap/synth.hpp"

using namespace retmap;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.mesh_resolution = 469;
  return spec;
}

struct Case {
  RetinotopicMap templ;
  RetinotopicMap subject;
  SynthDeformation truth;
};

Case make_case(double mu_max, double noise_sd, std::uint64_t seed,
               int vertices = 469) {
  SyntheticSpec spec = small_spec();
  spec.mesh_resolution = vertices;
  Case c{synth_template(spec), {}, {}};
  c.truth = synth_deformation(c.templ.mesh, c.templ.param, mu_max, seed);
  c.subject = synth_subject(c.templ, c.truth, noise_sd, spec.r2_base,
                            spec.r2_decay, seed + 1);
  return c;
}

}  // namespace

TEST_SUITE("registration") {

TEST_CASE("analytic gradient matches central finite differences") {
  Case c = make_case(0.25, 0.0, 3);
  RegistrationConfig cfg;
  // Evaluate at a generic non-stationary point: the halfway map.
  std::vector<Vec2> f(c.subject.param.uv.size());
  for (std::size_t i = 0; i < f.size(); ++i)
    f[i] = 0.5 * (c.subject.param.uv[i] + c.truth.deformed_uv[i]);
  Eigen::MatrixXd g = registration_gradient(c.subject, c.templ, f, cfg);
  const double h = 1e-7;
  int checked = 0;
  for (int i = 0; i < c.subject.vertex_count(); i += 37) {
    for (int j = 0; j < 2; ++j) {
      std::vector<Vec2> fp = f, fm = f;
      fp[i][j] += h;
      fm[i][j] -= h;
      double ep = registration_energy(c.subject, c.templ, fp, cfg).total;
      double em = registration_energy(c.subject, c.templ, fm, cfg).total;
      double fd = (ep - em) / (2.0 * h);
      CHECK(std::abs(g(i, j) - fd) <= 1e-4 * (1.0 + std::abs(fd)));
      ++checked;
    }
  }
  CHECK(checked >= 20);
}

TEST_CASE("energy terms vanish where they should") {
  Case c = make_case(0.3, 0.0, 11);
  RegistrationConfig cfg;
  SUBCASE("identity map under the displacement convention has zero smoothness") {
    EnergyBreakdown e =
        registration_energy(c.subject, c.templ, c.subject.param.uv, cfg);
    CHECK(e.smooth == 0.0);
    CHECK(e.data > 0.0);
  }
  SUBCASE("ground-truth correspondence has zero data term at zero noise") {
    EnergyBreakdown e =
        registration_energy(c.subject, c.templ, c.truth.deformed_uv, cfg);
    CHECK(e.data <= 1e-18);
    CHECK(e.smooth > 0.0);
  }
  SUBCASE("absolute convention penalizes the identity") {
    cfg.smooth_convention = SmoothConvention::Absolute;
    EnergyBreakdown e =
        registration_energy(c.subject, c.templ, c.subject.param.uv, cfg);
    CHECK(e.smooth > 0.0);
  }
}

TEST_CASE("vertices below the confidence threshold carry no weight") {
  Case c = make_case(0.3, 0.0, 13);
  RegistrationConfig cfg;
  int victim = c.subject.vertex_count() / 2;
  c.subject.variance_explained[victim] = 0.5 * cfg.r2_threshold;
  EnergyBreakdown before =
      registration_energy(c.subject, c.templ, c.subject.param.uv, cfg);
  c.subject.visual[victim] += Vec2(25.0, -40.0);
  EnergyBreakdown after =
      registration_energy(c.subject, c.templ, c.subject.param.uv, cfg);
  CHECK(before.total == after.total);
}

TEST_CASE("noise-free deformation is recovered") {
  Case c = make_case(0.3, 0.0, 17);
  RegistrationConfig cfg;
  RegistrationResult res = register_maps(c.subject, c.templ, cfg);
  CHECK(count_flipped(res.f, c.subject.mesh.faces) == 0);
  CHECK(res.final_mu_max < 1.0 - cfg.epsilon + 1e-12);
  double dv0 = visual_coordinate_change(c.subject, c.templ,
                                        c.subject.param.uv, cfg.r2_threshold);
  double dv1 =
      visual_coordinate_change(c.subject, c.templ, res.f, cfg.r2_threshold);
  CHECK(dv1 <= 0.1 * dv0);
  // Accepted-energy trace is non-increasing, starting from the identity.
  EnergyBreakdown init =
      registration_energy(c.subject, c.templ, c.subject.param.uv, cfg);
  REQUIRE(!res.energy_trace.empty());
  CHECK(res.energy_trace[0].total == init.total);
  for (std::size_t k = 1; k < res.energy_trace.size(); ++k)
    CHECK(res.energy_trace[k].total <= res.energy_trace[k - 1].total);
}

TEST_CASE("noisy run stays flip-free with a monotone trace") {
  Case c = make_case(0.4, 0.5, 19);
  RegistrationConfig cfg;
  RegistrationResult res = register_maps(c.subject, c.templ, cfg);
  CHECK(count_flipped(res.f, c.subject.mesh.faces) == 0);
  CHECK(res.final_mu_max <= 1.0 - cfg.epsilon + 1e-12);
  for (std::size_t k = 1; k < res.energy_trace.size(); ++k)
    CHECK(res.energy_trace[k].total <= res.energy_trace[k - 1].total);
}

TEST_CASE("perfect start converges immediately") {
  SyntheticSpec spec = small_spec();
  RetinotopicMap templ = synth_template(spec);
  SynthDeformation identity;  // ground-truth correspondence g = id
  identity.deformed_uv = templ.param.uv;
  RetinotopicMap subject =
      synth_subject(templ, identity, 0.0, spec.r2_base, spec.r2_decay, 6);
  RegistrationConfig cfg;
  RegistrationResult res = register_maps(subject, templ, cfg);
  CHECK(res.converged);
  double dv =
      visual_coordinate_change(subject, templ, res.f, cfg.r2_threshold);
  CHECK(dv <= 1e-6);
}

TEST_CASE("hopeless line search reports no progress") {
  Case c = make_case(0.3, 0.0, 23);
  RegistrationConfig cfg;
  cfg.step_size = 5.0;      // steps the whole disk past the template
  cfg.max_backtracks = 0;   // and forbids shrinking
  CHECK_THROWS_AS(register_maps(c.subject, c.templ, cfg), NoProgress);
}

TEST_CASE("config round-trips through key-value form") {
  RegistrationConfig cfg;
  cfg.smoothness_weight = 0.75;
  cfg.epsilon = 0.125;
  cfg.max_outer_iterations = 77;
  cfg.energy_tolerance = 3e-7;
  cfg.step_size = 0.01;
  cfg.backtracking_factor = 0.25;
  cfg.max_backtracks = 9;
  cfg.r2_threshold = 0.2;
  cfg.smooth_convention = SmoothConvention::Absolute;
  RegistrationConfig back = registration_config_from(registration_config_to(cfg));
  CHECK(back.smoothness_weight == cfg.smoothness_weight);
  CHECK(back.epsilon == cfg.epsilon);
  CHECK(back.max_outer_iterations == cfg.max_outer_iterations);
  CHECK(back.energy_tolerance == cfg.energy_tolerance);
  CHECK(back.step_size == cfg.step_size);
  CHECK(back.backtracking_factor == cfg.backtracking_factor);
  CHECK(back.max_backtracks == cfg.max_backtracks);
  CHECK(back.r2_threshold == cfg.r2_threshold);
  CHECK(back.smooth_convention == cfg.smooth_convention);
}

TEST_CASE("template interpolation matches a brute-force barycentric scan") {
  SyntheticSpec spec = small_spec();
  RetinotopicMap templ = synth_template(spec);
  TemplateInterpolator interp(templ);
  Rng rng(31);
  const auto& uv = templ.param.uv;
  int tested = 0;
  for (int k = 0; k < 200; ++k) {
    double r = std::sqrt(rng.uniform()) * 0.98;
    double t = rng.uniform(-M_PI, M_PI);
    Vec2 q(r * std::cos(t), r * std::sin(t));
    // Brute force: scan faces for one whose barycentrics contain q.
    bool found = false;
    Vec2 want = Vec2::Zero();
    double want_sigma = 0.0;
    for (const Face& f : templ.mesh.faces) {
      double area = doubled_area(uv[f[0]], uv[f[1]], uv[f[2]]);
      double l0 = doubled_area(q, uv[f[1]], uv[f[2]]) / area;
      double l1 = doubled_area(uv[f[0]], q, uv[f[2]]) / area;
      double l2 = 1.0 - l0 - l1;
      if (l0 < -1e-12 || l1 < -1e-12 || l2 < -1e-12) continue;
      want = l0 * templ.visual[f[0]] + l1 * templ.visual[f[1]] +
             l2 * templ.visual[f[2]];
      want_sigma = l0 * templ.prf_size[f[0]] + l1 * templ.prf_size[f[1]] +
                   l2 * templ.prf_size[f[2]];
      found = true;
      break;
    }
    if (!found) continue;  // fell in the sliver between polygon and circle
    TemplateSample s = interp.sample(q);
    REQUIRE(s.valid);
    CHECK((s.visual - want).norm() <= 1e-9);
    CHECK(std::abs(s.prf_size - want_sigma) <= 1e-9);
    ++tested;
  }
  CHECK(tested >= 150);
}

TEST_CASE("queries just outside the disk project to the boundary") {
  SyntheticSpec spec = small_spec();
  RetinotopicMap templ = synth_template(spec);
  TemplateInterpolator interp(templ);
  TemplateSample near = interp.sample(Vec2(1.01, 0.0));
  CHECK(near.valid);
  CHECK(near.point.norm() <= 1.0 + 1e-12);
  CHECK(near.point.norm() >= 0.98);
  TemplateSample far = interp.sample(Vec2(1.5, 0.0));
  CHECK(!far.valid);
}

TEST_CASE("applying the identity correspondence copies the template") {
  SyntheticSpec spec = small_spec();
  RetinotopicMap templ = synth_template(spec);
  AppliedRegistration applied =
      apply_registration(templ, templ, templ.param.uv);
  for (int i = 0; i < templ.vertex_count(); ++i) {
    REQUIRE(applied.valid[i]);
    CHECK((applied.map.visual[i] - templ.visual[i]).norm() <= 1e-9);
    CHECK(std::abs(applied.map.prf_size[i] - templ.prf_size[i]) <= 1e-9);
  }
}

TEST_CASE("map invariant checks reject malformed inputs") {
  SyntheticSpec spec = small_spec();
  RetinotopicMap map = synth_template(spec);
  SUBCASE("length mismatch") {
    map.visual.pop_back();
    CHECK_THROWS_AS(check_map_invariants(map), InvalidArgument);
  }
  SUBCASE("non-positive prf size at positive confidence") {
    map.prf_size[7] = 0.0;
    CHECK_THROWS_AS(check_map_invariants(map), InvalidArgument);
  }
}

}  // TEST_SUITE
