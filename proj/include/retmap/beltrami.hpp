#pragma once

#include <complex>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "retmap/mesh.hpp"

namespace retmap {

using Complex = std::complex<double>;

// Per-face Beltrami coefficient mu = f_zbar / f_z of a piecewise-linear
// planar map. |mu| < 1 iff the face is orientation-preserving.
struct BeltramiField {
  std::vector<Complex> mu;

  double max_abs() const;
  double mean_abs() const;
};

// Wirtinger derivatives of a piecewise-linear map on one face.
struct FaceDerivatives {
  Complex fz;
  Complex fzb;
};

// |f_z| below this is treated as a conformal singularity (mu undefined).
inline constexpr double kConformalSingularityEps = 1e-14;

// Doubled signed area of a 2D triangle.
double doubled_area(const Vec2& a, const Vec2& b, const Vec2& c);

// Derivatives of the linear map taking face `f` of `source2d` onto the
// same face of `target2d`. Throws DegenerateSourceFace.
FaceDerivatives face_derivatives(const Face& f, std::span<const Vec2> source2d,
                                 std::span<const Vec2> target2d);

// mu per face from the linear shape-function gradients. Throws
// DegenerateSourceFace and ConformalSingularity (|f_z| < 1e-14).
BeltramiField compute_beltrami(std::span<const Face> faces,
                               std::span<const Vec2> source2d,
                               std::span<const Vec2> target2d);

// Rescales entries with |mu| > 1 - epsilon onto that radius, preserving
// the argument. Idempotent.
BeltramiField clamp_beltrami(const BeltramiField& field, double epsilon);

// Reconstructs the piecewise-linear map with prescribed Beltrami
// coefficient: solves div(A grad u) = div(A grad v) = 0 with per-face
//   alpha = ((1-Re mu)^2 + (Im mu)^2) / (1-|mu|^2)
//   beta  = -2 Im mu / (1-|mu|^2)
//   gamma = ((1+Re mu)^2 + (Im mu)^2) / (1-|mu|^2)
// under Dirichlet constraints, eliminated by substitution. `pins` must
// cover at least 2 vertices (every boundary vertex in normal use).
// Throws MuOutOfRange, ConstraintInsufficient, SolverFailure.
std::vector<Vec2> linear_beltrami_solve(std::span<const Face> faces,
                                        std::span<const Vec2> source2d,
                                        const BeltramiField& field,
                                        const std::map<int, Vec2>& pins);

// Debug dump format: `RETMU 1`, `<nf>`, nf `re im` lines.
BeltramiField load_beltrami(const std::filesystem::path& path);
void save_beltrami(const std::filesystem::path& path, const BeltramiField& field);

}  // namespace retmap
