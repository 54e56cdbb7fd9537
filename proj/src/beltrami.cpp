#include "retmap/beltrami.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cmath>
#include <sstream>
#include <string>

#include "retmap/errors.hpp"
#include "retmap/io.hpp"

namespace retmap {

double BeltramiField::max_abs() const {
  double m = 0.0;
  for (const Complex& c : mu) m = std::max(m, std::abs(c));
  return m;
}

double BeltramiField::mean_abs() const {
  if (mu.empty()) return 0.0;
  double s = 0.0;
  for (const Complex& c : mu) s += std::abs(c);
  return s / static_cast<double>(mu.size());
}

double doubled_area(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

namespace {

// Gradients of the three linear shape functions on a source triangle:
// grad phi_i = rot90(p_{i+2} - p_{i+1}) / d with rot90(x, y) = (-y, x).
std::array<Vec2, 3> shape_gradients(const Vec2& p0, const Vec2& p1, const Vec2& p2,
                                    double d) {
  auto rot90 = [](const Vec2& v) { return Vec2(-v.y(), v.x()); };
  return {rot90(p2 - p1) / d, rot90(p0 - p2) / d, rot90(p1 - p0) / d};
}

}  // namespace

FaceDerivatives face_derivatives(const Face& f, std::span<const Vec2> source2d,
                                 std::span<const Vec2> target2d) {
  const Vec2& p0 = source2d[f[0]];
  const Vec2& p1 = source2d[f[1]];
  const Vec2& p2 = source2d[f[2]];
  double d = doubled_area(p0, p1, p2);
  if (std::abs(d) < 2.0 * kMinFaceArea)
    throw DegenerateSourceFace("source triangle has near-zero area");
  auto grads = shape_gradients(p0, p1, p2, d);

  Complex dx(0.0, 0.0), dy(0.0, 0.0);
  for (int k = 0; k < 3; ++k) {
    Complex value(target2d[f[k]].x(), target2d[f[k]].y());
    dx += value * grads[k].x();
    dy += value * grads[k].y();
  }
  const Complex i(0.0, 1.0);
  return {0.5 * (dx - i * dy), 0.5 * (dx + i * dy)};
}

BeltramiField compute_beltrami(std::span<const Face> faces,
                               std::span<const Vec2> source2d,
                               std::span<const Vec2> target2d) {
  BeltramiField field;
  field.mu.resize(faces.size());
  for (std::size_t fi = 0; fi < faces.size(); ++fi) {
    FaceDerivatives d = face_derivatives(faces[fi], source2d, target2d);
    if (std::abs(d.fz) < kConformalSingularityEps)
      throw ConformalSingularity("face " + std::to_string(fi) +
                                 " has vanishing holomorphic derivative");
    field.mu[fi] = d.fzb / d.fz;
  }
  return field;
}

BeltramiField clamp_beltrami(const BeltramiField& field, double epsilon) {
  if (epsilon <= 0.0 || epsilon >= 1.0)
    throw InvalidArgument("clamp radius 1 - epsilon requires epsilon in (0, 1)");
  BeltramiField out = field;
  const double radius = 1.0 - epsilon;
  for (Complex& c : out.mu) {
    double mag = std::abs(c);
    if (mag > radius) c *= radius / mag;
  }
  return out;
}

std::vector<Vec2> linear_beltrami_solve(std::span<const Face> faces,
                                        std::span<const Vec2> source2d,
                                        const BeltramiField& field,
                                        const std::map<int, Vec2>& pins) {
  if (field.mu.size() != faces.size())
    throw InvalidArgument("beltrami field size does not match face count");
  if (pins.size() < 2)
    throw ConstraintInsufficient("need at least 2 pinned vertices");
  const int nv = static_cast<int>(source2d.size());
  for (const auto& [idx, pos] : pins)
    if (idx < 0 || idx >= nv)
      throw ConstraintInsufficient("pinned vertex " + std::to_string(idx) +
                                   " out of range");

  // Free-vertex numbering with pins eliminated by substitution.
  std::vector<int> free_index(nv, -1);
  int nfree = 0;
  for (int v = 0; v < nv; ++v)
    if (!pins.count(v)) free_index[v] = nfree++;

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(faces.size() * 9);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(nfree, 2);

  for (std::size_t fi = 0; fi < faces.size(); ++fi) {
    const Complex& mu = field.mu[fi];
    double m2 = std::norm(mu);
    if (m2 >= 1.0)
      throw MuOutOfRange("face " + std::to_string(fi) +
                         " has |mu| >= 1; clamp before solving");
    double denom = 1.0 - m2;
    double alpha = ((1.0 - mu.real()) * (1.0 - mu.real()) + mu.imag() * mu.imag()) / denom;
    double beta = -2.0 * mu.imag() / denom;
    double gamma = ((1.0 + mu.real()) * (1.0 + mu.real()) + mu.imag() * mu.imag()) / denom;
    Eigen::Matrix2d A;
    A << alpha, beta, beta, gamma;

    const Face& f = faces[fi];
    double d = doubled_area(source2d[f[0]], source2d[f[1]], source2d[f[2]]);
    if (std::abs(d) < 2.0 * kMinFaceArea)
      throw DegenerateSourceFace("source triangle has near-zero area");
    auto grads = shape_gradients(source2d[f[0]], source2d[f[1]], source2d[f[2]], d);
    double area = 0.5 * std::abs(d);

    for (int a = 0; a < 3; ++a) {
      int va = f[a];
      if (free_index[va] < 0) continue;
      for (int b = 0; b < 3; ++b) {
        int vb = f[b];
        double w = area * grads[a].dot(A * grads[b]);
        if (free_index[vb] >= 0) {
          triplets.emplace_back(free_index[va], free_index[vb], w);
        } else {
          const Vec2& pin = pins.at(vb);
          rhs(free_index[va], 0) -= w * pin.x();
          rhs(free_index[va], 1) -= w * pin.y();
        }
      }
    }
  }

  Eigen::MatrixXd solution(nfree, 2);
  if (nfree > 0) {
    Eigen::SparseMatrix<double> L(nfree, nfree);
    L.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(L);
    if (solver.info() != Eigen::Success)
      throw SolverFailure("stiffness factorization failed");
    solution = solver.solve(rhs);
    if (solver.info() != Eigen::Success || !solution.allFinite())
      throw SolverFailure("back-substitution produced no finite solution");
  }

  std::vector<Vec2> out(nv);
  for (int v = 0; v < nv; ++v) {
    if (free_index[v] >= 0)
      out[v] = Vec2(solution(free_index[v], 0), solution(free_index[v], 1));
    else
      out[v] = pins.at(v);
  }
  return out;
}

BeltramiField load_beltrami(const std::filesystem::path& path) {
  std::istringstream in(strip_hash_comments(read_text_file(path)));
  std::string magic;
  int version = 0, nf = 0;
  in >> magic >> version >> nf;
  if (magic != "RETMU" || version != 1 || !in || nf < 0)
    throw ParseError(path.string() + ": expected RETMU 1 header");
  BeltramiField field;
  field.mu.resize(nf);
  for (int i = 0; i < nf; ++i) {
    double re = 0.0, im = 0.0;
    in >> re >> im;
    if (!in) throw ParseError(path.string() + ": truncated coefficient list");
    field.mu[i] = Complex(re, im);
  }
  return field;
}

void save_beltrami(const std::filesystem::path& path, const BeltramiField& field) {
  std::string out = "RETMU 1\n" + std::to_string(field.mu.size()) + "\n";
  for (const Complex& c : field.mu)
    out += format_double(c.real()) + " " + format_double(c.imag()) + "\n";
  write_text_file(path, out);
}

}  // namespace retmap
