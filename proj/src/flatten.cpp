#include "retmap/flatten.hpp"

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <string>

#include "retmap/errors.hpp"
#include "retmap/io.hpp"

namespace retmap {

namespace {

// Isometric 2D coordinates of one 3D triangle: p0 at the origin, p1 on
// the positive x axis.
std::array<Vec2, 3> local_frame(const Vec3& p0, const Vec3& p1, const Vec3& p2) {
  Vec3 e1 = p1 - p0;
  Vec3 e2 = p2 - p0;
  double len = e1.norm();
  if (len < 1e-15) throw DegenerateSourceFace("triangle edge has near-zero length");
  double x2 = e1.dot(e2) / len;
  double y2 = e1.cross(e2).norm() / len;
  return {Vec2(0.0, 0.0), Vec2(len, 0.0), Vec2(x2, y2)};
}

// Per-edge weights for the convex-combination interior solve.
std::vector<std::map<int, double>> edge_weights(const CorticalMesh& mesh,
                                                InteriorWeights weights) {
  const int nv = mesh.vertex_count();
  std::vector<std::map<int, double>> w(nv);
  auto add = [&](int a, int b, double value) {
    w[a][b] += value;
    w[b][a] += value;
  };
  for (const Face& f : mesh.faces) {
    if (weights == InteriorWeights::Uniform) {
      add(f[0], f[1], 0.5);
      add(f[1], f[2], 0.5);
      add(f[2], f[0], 0.5);
      continue;
    }
    for (int k = 0; k < 3; ++k) {
      // Half-cotangent at the vertex opposite edge (a, b).
      int a = f[k], b = f[(k + 1) % 3], c = f[(k + 2) % 3];
      Vec3 u = mesh.vertices[a] - mesh.vertices[c];
      Vec3 v = mesh.vertices[b] - mesh.vertices[c];
      double cross = u.cross(v).norm();
      if (cross < 1e-15) continue;
      add(a, b, 0.5 * u.dot(v) / cross);
    }
  }
  if (weights == InteriorWeights::ClampedCotan) {
    for (auto& row : w)
      for (auto& [j, value] : row)
        if (value < 0.0) value = 0.0;
  }
  return w;
}

}  // namespace

DiskParameterization harmonic_disk_map(const CorticalMesh& mesh,
                                       InteriorWeights weights) {
  std::vector<int> boundary = boundary_loop(mesh);
  const int nv = mesh.vertex_count();
  const int nb = static_cast<int>(boundary.size());

  // Boundary goes onto the unit circle by cumulative 3D arc length, the
  // loop's first vertex at angle zero.
  std::vector<double> arc(nb, 0.0);
  for (int k = 1; k < nb; ++k)
    arc[k] = arc[k - 1] +
             (mesh.vertices[boundary[k]] - mesh.vertices[boundary[k - 1]]).norm();
  double total = arc[nb - 1] +
                 (mesh.vertices[boundary[0]] - mesh.vertices[boundary[nb - 1]]).norm();
  if (total <= 0.0) throw SolverFailure("boundary loop has zero length");

  std::vector<Vec2> uv(nv, Vec2::Zero());
  std::vector<char> on_boundary(nv, 0);
  for (int k = 0; k < nb; ++k) {
    double theta = 2.0 * std::numbers::pi * arc[k] / total;
    uv[boundary[k]] = Vec2(std::cos(theta), std::sin(theta));
    on_boundary[boundary[k]] = 1;
  }

  std::vector<int> free_index(nv, -1);
  int nfree = 0;
  for (int v = 0; v < nv; ++v)
    if (!on_boundary[v]) free_index[v] = nfree++;

  if (nfree > 0) {
    auto w = edge_weights(mesh, weights);
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(nfree, 2);
    for (int v = 0; v < nv; ++v) {
      if (free_index[v] < 0) continue;
      double row_sum = 0.0;
      for (const auto& [j, value] : w[v]) row_sum += value;
      // A fully clamped row would pin the vertex to nothing; fall back to
      // uniform weights for that row so it stays a convex combination.
      const bool uniform_row = row_sum <= 0.0;
      if (uniform_row) row_sum = static_cast<double>(w[v].size());
      if (row_sum <= 0.0) throw SolverFailure("isolated interior vertex");
      int r = free_index[v];
      triplets.emplace_back(r, r, 1.0);
      for (const auto& [j, value] : w[v]) {
        double coeff = (uniform_row ? 1.0 : value) / row_sum;
        if (free_index[j] >= 0) {
          triplets.emplace_back(r, free_index[j], -coeff);
        } else {
          rhs(r, 0) += coeff * uv[j].x();
          rhs(r, 1) += coeff * uv[j].y();
        }
      }
    }

    Eigen::SparseMatrix<double> A(nfree, nfree);
    A.setFromTriplets(triplets.begin(), triplets.end());
    A.makeCompressed();

    Eigen::MatrixXd sol(nfree, 2);
    bool solved = false;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(A);
    if (lu.info() == Eigen::Success) {
      sol = lu.solve(rhs);
      double rel = (A * sol - rhs).norm() / std::max(rhs.norm(), 1e-300);
      solved = sol.allFinite() && rel <= 1e-10;
    }
    if (!solved) {
      Eigen::BiCGSTAB<Eigen::SparseMatrix<double>> cg(A);
      cg.setTolerance(1e-12);
      cg.setMaxIterations(20000);
      sol = cg.solve(rhs);
      double rel = (A * sol - rhs).norm() / std::max(rhs.norm(), 1e-300);
      if (!sol.allFinite() || rel > 1e-8)
        throw SolverFailure("interior solve did not reach requested residual");
    }
    for (int v = 0; v < nv; ++v)
      if (free_index[v] >= 0) uv[v] = Vec2(sol(free_index[v], 0), sol(free_index[v], 1));
  }

  if (count_flipped(uv, mesh.faces) > 0) {
    if (weights == InteriorWeights::ClampedCotan)
      return harmonic_disk_map(mesh, InteriorWeights::Uniform);
    throw SolverFailure("flipped triangles persist under uniform weights");
  }
  return {std::move(uv), std::move(boundary)};
}

BeltramiField flattening_beltrami(const CorticalMesh& mesh,
                                  const DiskParameterization& param) {
  BeltramiField field;
  field.mu.resize(mesh.face_count());
  const Face local{0, 1, 2};
  for (int fi = 0; fi < mesh.face_count(); ++fi) {
    const Face& f = mesh.faces[fi];
    auto src = local_frame(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
    std::array<Vec2, 3> tgt = {param.uv[f[0]], param.uv[f[1]], param.uv[f[2]]};
    FaceDerivatives d = face_derivatives(local, std::span<const Vec2>(src),
                                         std::span<const Vec2>(tgt));
    if (std::abs(d.fz) < kConformalSingularityEps)
      throw ConformalSingularity("face " + std::to_string(fi) +
                                 " has vanishing holomorphic derivative");
    field.mu[fi] = d.fzb / d.fz;
  }
  return field;
}

ConformalErrorStats conformal_error(const CorticalMesh& mesh,
                                    const DiskParameterization& param) {
  BeltramiField field = flattening_beltrami(mesh, param);
  return {field.mean_abs(), field.max_abs()};
}

DiskParameterization conformal_refine(const CorticalMesh& mesh,
                                      const DiskParameterization& param,
                                      int iterations) {
  DiskParameterization current = param;
  std::map<int, Vec2> pins;
  for (int b : current.boundary_ids) pins[b] = current.uv[b];

  const Face local{0, 1, 2};
  for (int pass = 0; pass < iterations; ++pass) {
    BeltramiField flat = flattening_beltrami(mesh, current);
    double before = flat.mean_abs();
    if (before < 1e-14) break;

    // Correction g on the current parameterization: composing g after the
    // flattening f cancels mu when mu_g = -f_zbar / conj(f_z).
    BeltramiField correction;
    correction.mu.resize(mesh.face_count());
    for (int fi = 0; fi < mesh.face_count(); ++fi) {
      const Face& f = mesh.faces[fi];
      auto src = local_frame(mesh.vertices[f[0]], mesh.vertices[f[1]],
                             mesh.vertices[f[2]]);
      std::array<Vec2, 3> tgt = {current.uv[f[0]], current.uv[f[1]], current.uv[f[2]]};
      FaceDerivatives d = face_derivatives(local, std::span<const Vec2>(src),
                                           std::span<const Vec2>(tgt));
      if (std::abs(d.fz) < kConformalSingularityEps)
        throw ConformalSingularity("face " + std::to_string(fi) +
                                   " has vanishing holomorphic derivative");
      correction.mu[fi] = -d.fzb / std::conj(d.fz);
    }

    bool accepted = false;
    double damp = 1.0;
    for (int attempt = 0; attempt < 5 && !accepted; ++attempt, damp *= 0.5) {
      BeltramiField scaled = correction;
      for (Complex& c : scaled.mu) c *= damp;
      scaled = clamp_beltrami(scaled, 1e-6);
      std::vector<Vec2> candidate =
          linear_beltrami_solve(mesh.faces, current.uv, scaled, pins);
      if (count_flipped(candidate, mesh.faces) > 0) continue;
      BeltramiField after = flattening_beltrami(mesh, {candidate, current.boundary_ids});
      if (after.mean_abs() < before) {
        current.uv = std::move(candidate);
        accepted = true;
      }
    }
    if (!accepted) break;
  }
  return current;
}

DiskParameterization load_parameterization(const std::filesystem::path& path,
                                           const CorticalMesh& mesh) {
  std::istringstream in(strip_hash_comments(read_text_file(path)));
  std::string magic;
  int version = 0, nv = 0;
  in >> magic >> version >> nv;
  if (magic != "RETUV" || version != 1 || !in)
    throw ParseError(path.string() + ": expected RETUV 1 header");
  if (nv != mesh.vertex_count())
    throw ParseError(path.string() + ": vertex count does not match mesh");
  DiskParameterization param;
  param.uv.resize(nv);
  for (int i = 0; i < nv; ++i) {
    in >> param.uv[i].x() >> param.uv[i].y();
    if (!in) throw ParseError(path.string() + ": truncated coordinate list");
  }
  param.boundary_ids = boundary_loop(mesh);
  return param;
}

void save_parameterization(const std::filesystem::path& path,
                           const DiskParameterization& param) {
  std::string out = "RETUV 1\n" + std::to_string(param.uv.size()) + "\n";
  for (const Vec2& p : param.uv)
    out += format_double(p.x()) + " " + format_double(p.y()) + "\n";
  write_text_file(path, out);
}

}  // namespace retmap
