#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "retmap/flatten.hpp"
#include "retmap/mesh.hpp"

namespace retmap {

// A retinotopic map: patch geometry plus per-vertex visual-field data.
// Visual coordinates are Cartesian degrees (x = ecc*cos(ang), y =
// ecc*sin(ang)); the polar form is converted at ingestion. The same shape
// serves subject and template.
struct RetinotopicMap {
  CorticalMesh mesh;
  DiskParameterization param;
  std::vector<Vec2> visual;                 // degrees of visual angle
  std::vector<double> prf_size;             // sigma, degrees
  std::vector<double> variance_explained;   // R^2

  int vertex_count() const { return mesh.vertex_count(); }
};

// Checks array lengths and the prf_size > 0 where R^2 > 0 invariant.
void check_map_invariants(const RetinotopicMap& map);

enum class SmoothConvention {
  Displacement,  // Dirichlet energy of f - id (identity costs zero)
  Absolute,      // Dirichlet energy of f itself
};

struct RegistrationConfig {
  double smoothness_weight = 0.1;   // lambda_s
  double epsilon = 0.05;            // Beltrami clamp: max |mu| <= 1 - epsilon
  int max_outer_iterations = 200;
  double energy_tolerance = 1e-6;   // relative total-energy decrease
  double step_size = 0.05;          // max per-vertex displacement of a trial step
  double backtracking_factor = 0.5;
  int max_backtracks = 20;
  double r2_threshold = 0.1;        // weights zeroed below this R^2
  SmoothConvention smooth_convention = SmoothConvention::Displacement;
};

RegistrationConfig registration_config_from(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> registration_config_to(const RegistrationConfig& config);

struct EnergyBreakdown {
  double data = 0.0;
  double smooth = 0.0;
  double total = 0.0;
};

struct RegistrationResult {
  std::vector<Vec2> f;                       // per-vertex target disk coordinates
  std::vector<EnergyBreakdown> energy_trace; // accepted iterations, [0] = initial
  double final_mu_max = 0.0;
  bool converged = false;
};

// One interpolated template sample. Queries outside the mesh are projected
// to the nearest boundary point when within kBoundaryProjectionBand, else
// flagged invalid.
struct TemplateSample {
  Vec2 visual = Vec2::Zero();
  double prf_size = 0.0;
  bool valid = false;
  int face = -1;       // containing (or boundary-adjacent) face
  Vec2 point = Vec2::Zero();  // query after any boundary projection
};

inline constexpr double kBoundaryProjectionBand = 0.02;

// Point location + barycentric interpolation over a template map's disk
// parameterization. Builds a uniform bin grid once; lookups are O(1).
class TemplateInterpolator {
public:
  explicit TemplateInterpolator(const RetinotopicMap& templ);

  TemplateSample sample(const Vec2& query) const;
  // Gradient of the interpolated visual field inside a face: column j is
  // d(visual)/d(query_j). Constant per face.
  Eigen::Matrix2d visual_jacobian(int face) const;

private:
  const RetinotopicMap& templ_;
  int grid_dim_;
  double cell_size_;
  Vec2 grid_min_;
  std::vector<std::vector<int>> cells_;  // face indices, ascending
  std::vector<Eigen::Matrix2d> jacobians_;

  int locate_face(const Vec2& q, double* bary) const;
  TemplateSample project_to_boundary(const Vec2& q) const;
};

std::vector<TemplateSample> interpolate_template(const RetinotopicMap& templ,
                                                 std::span<const Vec2> query_points);

/// Energy of a candidate map f: weighted visual mismatch plus lambda_s times
// the cot-weighted Dirichlet energy of f (or of f - id under the
// displacement convention) on the subject parameterization.
EnergyBreakdown registration_energy(const RetinotopicMap& subject,
                                    const RetinotopicMap& templ,
                                    std::span<const Vec2> f,
                                    const RegistrationConfig& config);

// Analytic gradient of the registration energy at f, one row per vertex.
// Piecewise exact: matches finite differences wherever no sample crosses a
// template face boundary.
Eigen::MatrixXd registration_gradient(const RetinotopicMap& subject,
                                      const RetinotopicMap& templ,
                                      std::span<const Vec2> f,
                                      const RegistrationConfig& config);

// Minimizes the registration energy subject to ||mu_f||_inf < 1 by
// alternating gradient descent with clamp + Linear-Beltrami-Solver
// reconstruction. The accepted-energy trace is non-increasing and the
// result has zero flipped triangles. Throws NoProgress if the first
// iteration cannot decrease the energy away from a non-stationary start,
// and SolverFailure from the reconstruction.
RegistrationResult register_maps(const RetinotopicMap& subject,
                                 const RetinotopicMap& templ,
                                 const RegistrationConfig& config);

struct AppliedRegistration {
  RetinotopicMap map;
  std::vector<std::uint8_t> valid;  // vertices that received template values
};

// Subject map with visual and prf_size replaced by template values at f;
// invalid-interpolation vertices keep their originals and are marked.
AppliedRegistration apply_registration(const RetinotopicMap& subject,
                                       const RetinotopicMap& templ,
                                       std::span<const Vec2> f);

// pRF parameter CSV: `vertex,ecc,ang,sigma,r2`. Angles are converted to the
// internal math convention (CCW degrees from +x) at ingestion; the source
// convention comes from the case manifest's `angle_convention` entry, or
// from an in-file `# angle_convention = ...` comment, which wins.
struct PrfTable {
  std::vector<Vec2> visual;
  std::vector<double> prf_size;
  std::vector<double> variance_explained;
};

inline constexpr const char* kAngleConventionMath = "math_ccw_from_positive_x";
inline constexpr const char* kAngleConventionClinical = "clockwise_from_upper_vertical";

PrfTable load_prf_csv(const std::filesystem::path& path,
                      const std::string& default_convention = kAngleConventionMath);
void save_prf_csv(const std::filesystem::path& path, const PrfTable& table);

}  // namespace retmap
