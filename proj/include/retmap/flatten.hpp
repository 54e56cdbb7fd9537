#pragma once

#include <filesystem>
#include <vector>

#include "retmap/beltrami.hpp"
#include "retmap/mesh.hpp"

namespace retmap {

// Unit-disk parameterization of a disk-topology patch: the parametric
// domain the registration runs in.
struct DiskParameterization {
  std::vector<Vec2> uv;
  std::vector<int> boundary_ids;  // ordered boundary loop
};

enum class InteriorWeights {
  ClampedCotan,  // cotangent weights, negatives clamped to 0, rows renormalized
  Uniform,
};

// Maps the boundary loop onto the unit circle by cumulative 3D arc length
// and solves the interior as a convex combination of neighbors. The result
// has zero flipped triangles. Throws NotADisk, SolverFailure.
DiskParameterization harmonic_disk_map(const CorticalMesh& mesh,
                                       InteriorWeights weights = InteriorWeights::ClampedCotan);

// Beltrami coefficient of the 3D -> 2D flattening, computed per face in an
// isometric local frame of the 3D triangle.
BeltramiField flattening_beltrami(const CorticalMesh& mesh,
                                  const DiskParameterization& param);

struct ConformalErrorStats {
  double mean = 0.0;
  double max = 0.0;
};

ConformalErrorStats conformal_error(const CorticalMesh& mesh,
                                    const DiskParameterization& param);

// Drives the flattening's Beltrami coefficient toward zero: per pass,
// computes mu of the 3D -> 2D map, prescribes the correction that cancels
// it, and reconstructs with the Linear Beltrami Solver keeping the circular
// boundary fixed. A pass is kept only if mean |mu| decreased and no
// triangle flipped, so mean |mu| is non-increasing and F_flip stays 0.
DiskParameterization conformal_refine(const CorticalMesh& mesh,
                                      const DiskParameterization& param,
                                      int iterations);

// Text format: `RETUV 1`, `<nv>`, nv `u v` lines. The boundary loop is
// recovered from the mesh on load.
DiskParameterization load_parameterization(const std::filesystem::path& path,
                                           const CorticalMesh& mesh);
void save_parameterization(const std::filesystem::path& path,
                           const DiskParameterization& param);

}  // namespace retmap
