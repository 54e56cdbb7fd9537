#pragma once

#include <cstdint>

#include "retmap/prf.hpp"
#include "retmap/registration.hpp"

namespace retmap {

// Deterministic RNG used by all generators: a splitmix64 stream with
// explicit uniform/normal transforms so values are bit-stable everywhere.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  double uniform();                    // [0, 1)
  double uniform(double lo, double hi);
  double normal();                     // standard normal (Box-Muller)
  std::uint64_t next_u64();

private:
  std::uint64_t splitmix();
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

struct SyntheticSpec {
  int mesh_resolution = 4921;   // vertex count target
  double patch_radius_mm = 30.0;
  double ecc_min = 1.0;         // degrees
  double ecc_max = 40.0;        // wide-field schematic range
  double wedge_deg = 360.0;     // angular span of the visual wedge
  int bands = 1;                // mirrored polar-angle bands
  double sigma_intercept = 0.1; // sigma = intercept + slope * ecc
  double sigma_slope = 0.25;
  double deformation_mu_max = 0.4;
  double visual_noise_sd = 0.5; // degrees
  double r2_base = 0.9;         // R^2 = clamp(base - decay * ecc, 0, 1)
  double r2_decay = 0.02;
  std::uint64_t seed = 1;
};

// Flat regular disk mesh built from concentric rings (ring k holds 6k
// vertices); vertex count is the closest 1 + 3K(K+1) at or above target.
CorticalMesh regular_disk_mesh(int target_vertices, double radius_mm);

// Regular disk mesh warped by smooth random radial bumps and height
// relief: a disk-topology test patch with curvature.
CorticalMesh random_disk_patch(int target_vertices, std::uint64_t seed,
                               double radius_mm = 30.0);

// Analytic banded retinotopic template on a regular disk mesh: disk radius
// r maps to eccentricity ecc_min * (ecc_max/ecc_min)^r, disk angle maps
// linearly onto the wedge (mirrored across band boundaries when bands > 1),
// sigma grows linearly with eccentricity, R^2 = 1.
RetinotopicMap synth_template(const SyntheticSpec& spec);

struct SynthDeformation {
  std::vector<Vec2> deformed_uv;  // ground-truth correspondence g(uv_i)
  BeltramiField prescribed_mu;
  double achieved_mu_max = 0.0;
};

// Smooth random quasiconformal deformation of the disk with the boundary
// fixed: draws a low-order polynomial Beltrami field, reconstructs with the
// Linear Beltrami Solver, and rescales the field until the reconstruction's
// recomputed max |mu| lands at mu_max (within 0.1% below, never above).
// Fields whose reconstruction saturates under the target are redrawn.
// The output is flip-free. Throws InvalidArgument unless 0 < mu_max < 1.
SynthDeformation synth_deformation(const CorticalMesh& mesh,
                                   const DiskParameterization& param,
                                   double mu_max, std::uint64_t seed);

// Subject map manufactured from a template and a known deformation:
// visual = template visual at g(uv_i) plus isotropic Gaussian noise,
// sigma carried through the same interpolation, R^2 from the spec profile.
RetinotopicMap synth_subject(const RetinotopicMap& templ,
                             const SynthDeformation& deformation,
                             double visual_noise_sd, double r2_base,
                             double r2_decay, std::uint64_t seed);

// Bar of width extent/8 sweeping the field at n_sweeps orientations
// (0, 45, 90, 135 degrees for the default 4), each with its reverse.
// Frame count = n_sweeps * 2 * frames_per_sweep.
Stimulus synth_bar_stimulus(int n_sweeps, int frames_per_sweep, double extent,
                            int resolution, double tr);

// Ground-truth deformation file: `RETDEF 1`, `<nv>`, nv `u v` lines holding
// the deformed position of each vertex.
void save_deformation(const std::filesystem::path& path,
                      const SynthDeformation& deformation);
std::vector<Vec2> load_deformation(const std::filesystem::path& path);

}  // namespace retmap
