#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "retmap/beltrami.hpp"
#include "retmap/synth.hpp"

using namespace retmap;

TEST_SUITE("synth") {

TEST_CASE("rng is deterministic and in range") {
  Rng a(99), b(99);
  for (int i = 0; i < 1000; ++i) {
    double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  Rng c(99);
  c.uniform();
  CHECK(c.uniform() != a.uniform());  // streams advance
  Rng d(1), e(2);
  CHECK(d.next_u64() != e.next_u64());
  CHECK(std::isfinite(Rng(7).normal()));
}

TEST_CASE("regular disk mesh hits the ring formula") {
  CorticalMesh m = regular_disk_mesh(469, 30.0);
  CHECK(m.vertex_count() == 469);  // 1 + 3K(K+1) at K = 12
  CorticalMesh m2 = regular_disk_mesh(450, 30.0);
  CHECK(m2.vertex_count() == 469);  // rounded up to the next closed ring
  TopologyReport r = validate_topology(m);
  CHECK(r.is_disk);
  double rmax = 0.0;
  for (const auto& v : m.vertices) rmax = std::max(rmax, v.norm());
  CHECK(rmax == doctest::Approx(30.0));
}

TEST_CASE("template eccentricity follows the log-polar schematic") {
  SyntheticSpec spec;
  spec.mesh_resolution = 469;
  RetinotopicMap t = synth_template(spec);
  CHECK(count_flipped(t.param.uv, t.mesh.faces) == 0);
  double log_ratio = std::log(spec.ecc_max / spec.ecc_min);
  for (int i = 0; i < t.vertex_count(); ++i) {
    double r = t.param.uv[i].norm();
    double ecc = t.visual[i].norm();
    if (r < 1e-12) {
      CHECK(ecc <= spec.ecc_min + 1e-9);  // center degenerates to ecc_min
      continue;
    }
    double want = spec.ecc_min * std::exp(log_ratio * r);
    CHECK(ecc == doctest::Approx(want).epsilon(1e-9));
    // sigma grows linearly with eccentricity; full confidence everywhere.
    CHECK(t.prf_size[i] == doctest::Approx(0.1 + 0.25 * ecc).epsilon(1e-9));
    CHECK(t.variance_explained[i] == 1.0);
  }
  // Boundary vertex at angle 0 maps to (ecc_max, 0).
  int best = -1;
  double best_angle = 1e9;
  for (int b : t.param.boundary_ids) {
    double ang = std::abs(std::atan2(t.param.uv[b].y(), t.param.uv[b].x()));
    if (ang < best_angle) {
      best_angle = ang;
      best = b;
    }
  }
  REQUIRE(best >= 0);
  REQUIRE(best_angle <= 1e-9);  // the ring construction places one exactly
  CHECK((t.visual[best] - Vec2(spec.ecc_max, 0)).norm() <= 1e-9);
}

TEST_CASE("template eccentricity increases along rays") {
  SyntheticSpec spec;
  spec.mesh_resolution = 469;
  RetinotopicMap t = synth_template(spec);
  // Gather vertices in a thin angular sector and sweep outward.
  for (double ray : {0.0, 1.0, 2.5, -2.0}) {
    std::vector<std::pair<double, double>> along;  // (radius, ecc)
    for (int i = 0; i < t.vertex_count(); ++i) {
      double r = t.param.uv[i].norm();
      if (r < 1e-12) continue;
      double ang = std::atan2(t.param.uv[i].y(), t.param.uv[i].x());
      if (std::abs(std::remainder(ang - ray, 2.0 * M_PI)) < 0.1)
        along.emplace_back(r, t.visual[i].norm());
    }
    REQUIRE(along.size() >= 3);
    std::sort(along.begin(), along.end());
    for (std::size_t k = 1; k < along.size(); ++k)
      if (along[k].first > along[k - 1].first + 1e-12)
        CHECK(along[k].second > along[k - 1].second);
  }
}

TEST_CASE("mirrored bands reverse polar angle across boundaries") {
  SyntheticSpec spec;
  spec.mesh_resolution = 469;
  spec.wedge_deg = 180.0;
  spec.bands = 2;
  RetinotopicMap t = synth_template(spec);
  // With two mirrored bands the angular map is continuous: neighboring
  // vertices never jump more than the wedge allows.
  double max_jump = 0.0;
  for (const Face& f : t.mesh.faces)
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      double ang_a = std::atan2(t.visual[a].y(), t.visual[a].x());
      double ang_b = std::atan2(t.visual[b].y(), t.visual[b].x());
      double jump = std::abs(std::remainder(ang_a - ang_b, 2.0 * M_PI));
      if (t.param.uv[a].norm() > 0.3 && t.param.uv[b].norm() > 0.3)
        max_jump = std::max(max_jump, jump);
    }
  CHECK(max_jump < 0.5);  // radians; a tear would show ~pi jumps
}

TEST_CASE("deformation strength outside (0, 1) is rejected") {
  SyntheticSpec spec;
  spec.mesh_resolution = 91;
  RetinotopicMap t = synth_template(spec);
  CHECK_THROWS_AS(synth_deformation(t.mesh, t.param, 0.0, 12), InvalidArgument);
  CHECK_THROWS_AS(synth_deformation(t.mesh, t.param, 1.0, 12), InvalidArgument);
  CHECK_THROWS_AS(synth_deformation(t.mesh, t.param, -0.2, 12), InvalidArgument);
}

TEST_CASE("near-zero strength stays near the identity") {
  SyntheticSpec spec;
  spec.mesh_resolution = 469;
  RetinotopicMap t = synth_template(spec);
  SynthDeformation def = synth_deformation(t.mesh, t.param, 0.01, 12);
  CHECK(def.achieved_mu_max <= 0.01 + 1e-6);
  CHECK(def.achieved_mu_max >= 0.01 - 1e-3);
  double max_disp = 0.0;
  for (int i = 0; i < t.vertex_count(); ++i)
    max_disp = std::max(max_disp, (def.deformed_uv[i] - t.param.uv[i]).norm());
  CHECK(max_disp <= 0.05);  // a 1% dilatation barely moves the unit disk
}

TEST_CASE("deformation strength is calibrated and flip-free") {
  SyntheticSpec spec;
  spec.mesh_resolution = 469;
  RetinotopicMap t = synth_template(spec);
  for (double target : {0.2, 0.4, 0.6}) {
    SynthDeformation def =
        synth_deformation(t.mesh, t.param, target, 100 + int(target * 10));
    CHECK(count_flipped(def.deformed_uv, t.mesh.faces) == 0);
    BeltramiField mu =
        compute_beltrami(t.mesh.faces, t.param.uv, def.deformed_uv);
    CHECK(mu.max_abs() <= target + 1e-6);
    CHECK(mu.max_abs() >= target - 1e-3);  // lands at, not merely below
    CHECK(def.achieved_mu_max == doctest::Approx(mu.max_abs()));
    // Boundary stays fixed.
    for (int b : t.param.boundary_ids)
      CHECK((def.deformed_uv[b] - t.param.uv[b]).norm() <= 1e-12);
  }
}

TEST_CASE("deformation and subject are seed-deterministic") {
  SyntheticSpec spec;
  spec.mesh_resolution = 469;
  RetinotopicMap t = synth_template(spec);
  SynthDeformation d1 = synth_deformation(t.mesh, t.param, 0.4, 77);
  SynthDeformation d2 = synth_deformation(t.mesh, t.param, 0.4, 77);
  REQUIRE(d1.deformed_uv.size() == d2.deformed_uv.size());
  for (std::size_t i = 0; i < d1.deformed_uv.size(); ++i)
    CHECK(d1.deformed_uv[i] == d2.deformed_uv[i]);
  RetinotopicMap s1 = synth_subject(t, d1, 0.5, 0.9, 0.02, 5);
  RetinotopicMap s2 = synth_subject(t, d2, 0.5, 0.9, 0.02, 5);
  for (int i = 0; i < s1.vertex_count(); ++i) {
    CHECK(s1.visual[i] == s2.visual[i]);
    CHECK(s1.prf_size[i] == s2.prf_size[i]);
    CHECK(s1.variance_explained[i] == s2.variance_explained[i]);
  }
  RetinotopicMap s3 = synth_subject(t, d1, 0.5, 0.9, 0.02, 6);
  int differing = 0;
  for (int i = 0; i < s1.vertex_count(); ++i)
    differing += s1.visual[i] != s3.visual[i];
  CHECK(differing > s1.vertex_count() / 2);
}

TEST_CASE("subject noise has the requested scale") {
  SyntheticSpec spec;
  spec.mesh_resolution = 1141;
  RetinotopicMap t = synth_template(spec);
  SynthDeformation def = synth_deformation(t.mesh, t.param, 0.3, 21);
  double sd = 0.5;
  RetinotopicMap noisy = synth_subject(t, def, sd, 0.9, 0.02, 22);
  RetinotopicMap clean = synth_subject(t, def, 0.0, 0.9, 0.02, 22);
  double mean_disp = 0.0;
  for (int i = 0; i < t.vertex_count(); ++i)
    mean_disp += (noisy.visual[i] - clean.visual[i]).norm();
  mean_disp /= t.vertex_count();
  // Mean magnitude of an isotropic 2D gaussian is sd*sqrt(pi/2).
  double want = sd * std::sqrt(M_PI / 2.0);
  CHECK(mean_disp == doctest::Approx(want).epsilon(0.05));
  // Confidence profile: base minus decay times the noiseless eccentricity.
  for (int i = 0; i < t.vertex_count(); ++i) {
    double want_r2 =
        std::clamp(0.9 - 0.02 * clean.visual[i].norm(), 0.0, 1.0);
    CHECK(noisy.variance_explained[i] == doctest::Approx(want_r2).epsilon(1e-9));
  }
}

TEST_CASE("random patches are valid disks with relief") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    CorticalMesh m = random_disk_patch(300, seed);
    TopologyReport r = validate_topology(m);
    CHECK(r.is_disk);
    check_mesh_invariants(m);
    check_orientation_consistency(m);
    double zspan = 0.0;
    for (const auto& v : m.vertices) zspan = std::max(zspan, std::abs(v.z()));
    CHECK(zspan > 0.0);  // not flat
  }
}

TEST_CASE("deformation file roundtrip") {
  SyntheticSpec spec;
  spec.mesh_resolution = 91;
  RetinotopicMap t = synth_template(spec);
  SynthDeformation def = synth_deformation(t.mesh, t.param, 0.35, 9);
  auto path = std::filesystem::temp_directory_path() / "roundtrip.retdef";
  save_deformation(path, def);
  // The file holds the deformed position per vertex; parse by hand.
  std::ifstream in(path);
  std::string magic;
  int version, nv;
  in >> magic >> version >> nv;
  CHECK(magic == "RETDEF");
  CHECK(version == 1);
  REQUIRE(nv == t.vertex_count());
  for (int i = 0; i < nv; ++i) {
    double u, v;
    in >> u >> v;
    CHECK(u == def.deformed_uv[i].x());
    CHECK(v == def.deformed_uv[i].y());
  }
  std::filesystem::remove(path);
}

}  // TEST_SUITE
