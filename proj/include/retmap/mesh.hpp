#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "retmap/errors.hpp"

namespace retmap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;

// Oriented triangle mesh of a cortical patch. Face vertices are listed
// counter-clockwise when viewed from outside; coordinates are in mm.
struct CorticalMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int face_count() const { return static_cast<int>(faces.size()); }
};

struct TopologyReport {
  int vertex_count = 0;
  int face_count = 0;
  int boundary_loop_count = 0;
  int euler_characteristic = 0;
  bool is_disk = false;
};

// Minimum allowed triangle area (mm^2); anything smaller is degenerate.
inline constexpr double kMinFaceArea = 1e-12;

double face_area_3d(const CorticalMesh& mesh, int face);

// Checks index bounds, repeated vertices within a face, and degenerate
// faces. Throws InvalidMesh on violation.
void check_mesh_invariants(const CorticalMesh& mesh);

// Verifies that adjacent faces traverse shared edges in opposite
// directions. Throws InconsistentOrientation otherwise.
void check_orientation_consistency(const CorticalMesh& mesh);

// Euler characteristic, boundary loop count, and the disk predicate.
// Throws NonManifoldEdge if an edge is shared by more than two faces and
// MultipleComponents if the face graph is disconnected.
TopologyReport validate_topology(const CorticalMesh& mesh);

// The single ordered boundary loop of a disk-topology mesh, traversed so
// the surface lies to the left (counter-clockwise for CCW faces), starting
// at the lowest-index boundary vertex.
std::vector<int> boundary_loop(const CorticalMesh& mesh);

// Sign of the doubled signed area of each face under a 2D embedding:
// +1 CCW, -1 CW, 0 exactly degenerate.
std::vector<int> triangle_orientation_signs(std::span<const Vec2> points2d,
                                            std::span<const Face> faces);

// Number of faces whose orientation sign is not +1 (degenerate faces count).
int count_flipped(std::span<const Vec2> points2d, std::span<const Face> faces);

// Text format: header `RETMESH 1`, `<nv> <nf>`, nv `x y z` lines, nf
// `i j k` lines (0-based). `#` starts a comment. The loader enforces the
// mesh invariants and orientation consistency.
CorticalMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const std::filesystem::path& path, const CorticalMesh& mesh);

}  // namespace retmap
