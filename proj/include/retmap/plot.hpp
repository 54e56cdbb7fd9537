#pragma once

#include <span>
#include <string>

#include "retmap/flatten.hpp"

namespace retmap {

enum class ColormapMode {
  Sequential,  // scalar fields
  Cyclic,      // angular fields in degrees; continuous across +-180
};

// Flat-shaded triangle rendering of a per-vertex field on the disk.
// Angular faces are colored by the circular mean of their corners.
// Output is byte-deterministic for fixed inputs.
std::string plot_disk_map(const DiskParameterization& param,
                          std::span<const Face> faces,
                          std::span<const double> values, ColormapMode mode);

// Wireframe overlay variant used by the flatten CLI: faces filled by a
// per-face scalar (e.g. |mu|) with stroked edges.
std::string plot_disk_faces(const DiskParameterization& param,
                            std::span<const Face> faces,
                            std::span<const double> face_values);

}  // namespace retmap
