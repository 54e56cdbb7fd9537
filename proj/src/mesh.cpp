#include "retmap/mesh.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>

#include "retmap/io.hpp"

namespace retmap {

double face_area_3d(const CorticalMesh& mesh, int face) {
  const Face& f = mesh.faces[face];
  Vec3 e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
  Vec3 e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
  return 0.5 * e1.cross(e2).norm();
}

void check_mesh_invariants(const CorticalMesh& mesh) {
  const int nv = mesh.vertex_count();
  for (int fi = 0; fi < mesh.face_count(); ++fi) {
    const Face& f = mesh.faces[fi];
    for (int k = 0; k < 3; ++k) {
      if (f[k] < 0 || f[k] >= nv)
        throw InvalidMesh("face " + std::to_string(fi) + " references vertex " +
                          std::to_string(f[k]) + " outside [0, " + std::to_string(nv) + ")");
    }
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
      throw InvalidMesh("face " + std::to_string(fi) + " repeats a vertex");
    if (face_area_3d(mesh, fi) < kMinFaceArea)
      throw InvalidMesh("face " + std::to_string(fi) + " is degenerate (area < 1e-12 mm^2)");
  }
}

namespace {

// Undirected edge key with deterministic ordering.
inline std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

struct EdgeUse {
  int count = 0;
  int forward = 0;  // times seen as (lo -> hi)
  std::array<int, 2> faces = {-1, -1};
};

std::map<std::uint64_t, EdgeUse> collect_edges(const CorticalMesh& mesh) {
  std::map<std::uint64_t, EdgeUse> edges;
  for (int fi = 0; fi < mesh.face_count(); ++fi) {
    const Face& f = mesh.faces[fi];
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      EdgeUse& use = edges[edge_key(a, b)];
      if (use.count < 2) use.faces[use.count] = fi;
      ++use.count;
      if (a < b) ++use.forward;
    }
  }
  return edges;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

void check_orientation_consistency(const CorticalMesh& mesh) {
  for (const auto& [key, use] : collect_edges(mesh)) {
    if (use.count == 2 && use.forward != 1) {
      int a = static_cast<int>(key >> 32), b = static_cast<int>(key & 0xffffffffu);
      throw InconsistentOrientation("faces " + std::to_string(use.faces[0]) + " and " +
                                    std::to_string(use.faces[1]) +
                                    " traverse edge (" + std::to_string(a) + ", " +
                                    std::to_string(b) + ") in the same direction");
    }
  }
}

TopologyReport validate_topology(const CorticalMesh& mesh) {
  TopologyReport report;
  report.vertex_count = mesh.vertex_count();
  report.face_count = mesh.face_count();

  auto edges = collect_edges(mesh);
  for (const auto& [key, use] : edges) {
    if (use.count > 2) {
      int a = static_cast<int>(key >> 32), b = static_cast<int>(key & 0xffffffffu);
      throw NonManifoldEdge("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                            ") is shared by " + std::to_string(use.count) + " faces");
    }
  }

  // Face connectivity through shared edges; isolated vertices also split
  // the component count.
  if (mesh.face_count() > 0) {
    UnionFind uf(mesh.face_count());
    for (const auto& [key, use] : edges)
      if (use.count == 2) uf.unite(use.faces[0], use.faces[1]);
    int root = uf.find(0);
    for (int fi = 1; fi < mesh.face_count(); ++fi)
      if (uf.find(fi) != root)
        throw MultipleComponents("mesh faces form more than one connected component");
    std::vector<char> touched(mesh.vertex_count(), 0);
    for (const Face& f : mesh.faces)
      for (int k = 0; k < 3; ++k) touched[f[k]] = 1;
    if (std::find(touched.begin(), touched.end(), 0) != touched.end())
      throw MultipleComponents("mesh has vertices not referenced by any face");
  }

  int edge_count = static_cast<int>(edges.size());
  report.euler_characteristic = report.vertex_count - edge_count + report.face_count;

  // Boundary loops: walk successor links over boundary directed edges.
  std::map<int, int> next;  // boundary edge a -> b as traversed by its face
  for (const auto& [key, use] : edges) {
    if (use.count != 1) continue;
    const Face& f = mesh.faces[use.faces[0]];
    int lo = static_cast<int>(key >> 32), hi = static_cast<int>(key & 0xffffffffu);
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      if (edge_key(a, b) == key) {
        next[a] = b;
        break;
      }
    }
    (void)lo;
    (void)hi;
  }
  std::map<int, char> visited;
  int loops = 0;
  for (const auto& [start, succ] : next) {
    if (visited.count(start)) continue;
    ++loops;
    int v = start;
    while (!visited.count(v)) {
      visited[v] = 1;
      auto it = next.find(v);
      if (it == next.end())
        throw NonManifoldEdge("boundary does not close at vertex " + std::to_string(v));
      v = it->second;
    }
  }
  report.boundary_loop_count = loops;
  report.is_disk = (report.euler_characteristic == 1 && loops == 1);
  return report;
}

std::vector<int> boundary_loop(const CorticalMesh& mesh) {
  TopologyReport report = validate_topology(mesh);
  if (!report.is_disk) throw NotADisk("mesh is not a topological disk");

  auto edges = collect_edges(mesh);
  std::map<int, int> next;
  for (const auto& [key, use] : edges) {
    if (use.count != 1) continue;
    const Face& f = mesh.faces[use.faces[0]];
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      if (edge_key(a, b) == key) {
        next[a] = b;
        break;
      }
    }
  }
  int start = next.begin()->first;  // lowest-index boundary vertex
  std::vector<int> loop;
  int v = start;
  do {
    loop.push_back(v);
    v = next.at(v);
  } while (v != start);
  return loop;
}

std::vector<int> triangle_orientation_signs(std::span<const Vec2> points2d,
                                            std::span<const Face> faces) {
  std::vector<int> signs(faces.size());
  for (std::size_t fi = 0; fi < faces.size(); ++fi) {
    const Face& f = faces[fi];
    const Vec2& p0 = points2d[f[0]];
    const Vec2& p1 = points2d[f[1]];
    const Vec2& p2 = points2d[f[2]];
    double cross = (p1.x() - p0.x()) * (p2.y() - p0.y()) -
                   (p1.y() - p0.y()) * (p2.x() - p0.x());
    signs[fi] = cross > 0.0 ? 1 : (cross < 0.0 ? -1 : 0);
  }
  return signs;
}

int count_flipped(std::span<const Vec2> points2d, std::span<const Face> faces) {
  std::vector<int> signs = triangle_orientation_signs(points2d, faces);
  int flipped = 0;
  for (int s : signs)
    if (s != 1) ++flipped;
  return flipped;
}

CorticalMesh load_mesh(const std::filesystem::path& path) {
  std::istringstream in(strip_hash_comments(read_text_file(path)));
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "RETMESH" || version != 1)
    throw ParseError(path.string() + ": expected RETMESH 1 header");
  int nv = 0, nf = 0;
  in >> nv >> nf;
  if (!in || nv < 3 || nf < 1)
    throw ParseError(path.string() + ": bad vertex/face counts");
  CorticalMesh mesh;
  mesh.vertices.resize(nv);
  mesh.faces.resize(nf);
  for (int i = 0; i < nv; ++i) {
    in >> mesh.vertices[i].x() >> mesh.vertices[i].y() >> mesh.vertices[i].z();
    if (!in) throw ParseError(path.string() + ": truncated vertex list");
  }
  for (int i = 0; i < nf; ++i) {
    in >> mesh.faces[i][0] >> mesh.faces[i][1] >> mesh.faces[i][2];
    if (!in) throw ParseError(path.string() + ": truncated face list");
  }
  check_mesh_invariants(mesh);
  check_orientation_consistency(mesh);
  return mesh;
}

void save_mesh(const std::filesystem::path& path, const CorticalMesh& mesh) {
  std::string out = "RETMESH 1\n";
  out += std::to_string(mesh.vertex_count()) + " " + std::to_string(mesh.face_count()) + "\n";
  for (const Vec3& v : mesh.vertices) {
    out += format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
    out += "\n";
  }
  for (const Face& f : mesh.faces) {
    out += std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]);
    out += "\n";
  }
  write_text_file(path, out);
}

}  // namespace retmap
