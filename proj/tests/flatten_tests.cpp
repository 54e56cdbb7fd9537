#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "retmap/flatten.hpp"
#include "retmap/mesh.hpp"
#include "retmap/synth.hpp"

using namespace retmap;

namespace {

// Flat mesh whose parameterization is its own xy coordinates.
DiskParameterization identity_param(const CorticalMesh& mesh) {
  DiskParameterization p;
  p.uv.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices) p.uv.push_back({v.x(), v.y()});
  p.boundary_ids = boundary_loop(mesh);
  return p;
}

}  // namespace

TEST_SUITE("flatten") {

TEST_CASE("random patches flatten onto the unit circle without flips") {
  for (int k = 0; k < 20; ++k) {
    CorticalMesh m = random_disk_patch(200 + 37 * k, 100 + k);
    DiskParameterization p = harmonic_disk_map(m);
    for (int b : p.boundary_ids)
      CHECK(std::abs(p.uv[b].norm() - 1.0) <= 1e-9);
    CHECK(count_flipped(p.uv, m.faces) == 0);
    CHECK(p.uv.size() == m.vertices.size());
  }
}

TEST_CASE("interior vertices are convex combinations of their neighbors") {
  CorticalMesh m = random_disk_patch(300, 7);
  DiskParameterization p = harmonic_disk_map(m, InteriorWeights::Uniform);
  std::set<int> boundary(p.boundary_ids.begin(), p.boundary_ids.end());
  std::map<int, std::set<int>> nbrs;
  for (const Face& f : m.faces)
    for (int k = 0; k < 3; ++k) {
      nbrs[f[k]].insert(f[(k + 1) % 3]);
      nbrs[f[k]].insert(f[(k + 2) % 3]);
    }
  for (int i = 0; i < m.vertex_count(); ++i) {
    if (boundary.count(i)) continue;
    Vec2 mean = Vec2::Zero();
    for (int j : nbrs[i]) mean += p.uv[j];
    mean /= double(nbrs[i].size());
    CHECK((mean - p.uv[i]).norm() <= 1e-8);
  }
}

TEST_CASE("boundary spacing follows 3D arc length") {
  CorticalMesh m = regular_disk_mesh(91, 10.0);
  DiskParameterization p = harmonic_disk_map(m);
  const auto& loop = p.boundary_ids;
  double total = 0.0;
  std::vector<double> arc(loop.size(), 0.0);
  for (std::size_t k = 0; k < loop.size(); ++k) {
    arc[k] = total;
    const Vec3& a = m.vertices[loop[k]];
    const Vec3& b = m.vertices[loop[(k + 1) % loop.size()]];
    total += (a - b).norm();
  }
  double theta0 = std::atan2(p.uv[loop[0]].y(), p.uv[loop[0]].x());
  for (std::size_t k = 0; k < loop.size(); ++k) {
    double want = theta0 + 2.0 * M_PI * arc[k] / total;
    double got = std::atan2(p.uv[loop[k]].y(), p.uv[loop[k]].x());
    double diff = std::remainder(got - want, 2.0 * M_PI);
    CHECK(std::abs(diff) <= 1e-9);
  }
}

TEST_CASE("flattening of an already-flat patch is conformal") {
  CorticalMesh m = regular_disk_mesh(169, 1.0);  // planar, z = 0
  DiskParameterization p = identity_param(m);
  BeltramiField mu = flattening_beltrami(m, p);
  CHECK(mu.max_abs() <= 1e-12);
  ConformalErrorStats stats = conformal_error(m, p);
  CHECK(stats.max <= 1e-12);
}

TEST_CASE("conformal refinement never increases mean distortion or flips") {
  CorticalMesh m = random_disk_patch(400, 3);
  DiskParameterization p0 = harmonic_disk_map(m);
  double before = flattening_beltrami(m, p0).mean_abs();
  DiskParameterization p1 = conformal_refine(m, p0, 5);
  double after = flattening_beltrami(m, p1).mean_abs();
  CHECK(after <= before + 1e-15);
  CHECK(count_flipped(p1.uv, m.faces) == 0);
  for (int b : p1.boundary_ids)
    CHECK(std::abs(p1.uv[b].norm() - 1.0) <= 1e-9);
}

TEST_CASE("flattening is deterministic") {
  CorticalMesh m = random_disk_patch(350, 12);
  DiskParameterization a = harmonic_disk_map(m);
  DiskParameterization b = harmonic_disk_map(m);
  REQUIRE(a.uv.size() == b.uv.size());
  for (std::size_t i = 0; i < a.uv.size(); ++i) CHECK(a.uv[i] == b.uv[i]);
}

TEST_CASE("closed surfaces are rejected") {
  CorticalMesh m;
  m.vertices = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
  m.faces = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4},
             {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
  CHECK_THROWS_AS(harmonic_disk_map(m), NotADisk);
}

TEST_CASE("parameterization file roundtrip") {
  CorticalMesh m = random_disk_patch(200, 5);
  DiskParameterization p = harmonic_disk_map(m);
  auto path = std::filesystem::temp_directory_path() / "roundtrip.retuv";
  save_parameterization(path, p);
  DiskParameterization back = load_parameterization(path, m);
  REQUIRE(back.uv.size() == p.uv.size());
  for (std::size_t i = 0; i < p.uv.size(); ++i) CHECK(back.uv[i] == p.uv[i]);
  CHECK(back.boundary_ids == p.boundary_ids);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
