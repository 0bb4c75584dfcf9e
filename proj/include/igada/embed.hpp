#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "igada/dataset.hpp"
#include "igada/stats.hpp"

namespace igada {

/// PCA projection plus per-coordinate standardization, fitted on the real
/// windows of one class. Coordinates: z = (basis * (vec(x) - mean)) / scale.
struct ClassEmbedding {
  std::size_t class_id = 0;
  std::size_t T = 0, F = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd basis;  // dim x (T*F), orthonormal rows
  Eigen::VectorXd scale;  // dim, strictly positive
  double explained_variance = 0;  // fraction of total variance kept
  bool degenerate = false;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(basis.rows()); }

  Eigen::VectorXd transform(const TimeWindow& w) const {
    if (w.T() != T || w.F() != F) throw ValidationError("transform: window shape does not match embedding");
    Eigen::Map<const Eigen::VectorXd> x(w.values().data(), static_cast<Eigen::Index>(w.values().size()));
    return (basis * (x - mean)).cwiseQuotient(scale);
  }

  PointSet transform_all(const std::vector<TimeWindow>& windows) const {
    PointSet out(dim());
    for (const auto& w : windows) {
      Eigen::VectorXd z = transform(w);
      out.push_back(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())));
    }
    return out;
  }

  /// Maps embedding coordinates back to a flattened window (within the kept subspace).
  std::vector<double> inverse(std::span<const double> z) const {
    if (z.size() != dim()) throw ValidationError("inverse: coordinate dimension mismatch");
    Eigen::Map<const Eigen::VectorXd> zv(z.data(), static_cast<Eigen::Index>(z.size()));
    Eigen::VectorXd x = mean + basis.transpose() * zv.cwiseProduct(scale);
    return {x.data(), x.data() + x.size()};
  }
};

/// Fits the class embedding. The kept dimension is the smallest one whose
/// leading eigenvalues reach `variance_threshold` of the total variance,
/// capped at d_max, at N-1 and at T*F. Identical inputs give a flagged
/// degenerate embedding with one unit-scale axis.
inline ClassEmbedding fit_class_embedding(const std::vector<TimeWindow>& windows, double variance_threshold = 0.95,
                                          std::size_t d_max = 10) {
  if (windows.size() < 2) throw ValidationError("fit_class_embedding needs at least 2 windows");
  if (!(variance_threshold > 0 && variance_threshold <= 1)) throw ValidationError("variance_threshold must lie in (0, 1]");
  if (d_max == 0) throw ValidationError("d_max must be >= 1");

  const std::size_t n = windows.size();
  ClassEmbedding emb;
  emb.class_id = windows.front().label();
  emb.T = windows.front().T();
  emb.F = windows.front().F();
  const auto D = static_cast<Eigen::Index>(emb.T * emb.F);

  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), D);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& w = windows[i];
    if (w.label() != emb.class_id) throw ValidationError("fit_class_embedding: windows span several classes");
    if (w.T() != emb.T || w.F() != emb.F) throw ValidationError("fit_class_embedding: mixed window shapes");
    X.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(w.values().data(), D);
  }
  emb.mean = X.colwise().mean().transpose();
  X.rowwise() -= emb.mean.transpose();
  Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw RuntimeFailure("eigendecomposition failed");
  // Eigen returns ascending order; walk from the top.
  Eigen::VectorXd evals = solver.eigenvalues().reverse();
  Eigen::MatrixXd evecs = solver.eigenvectors().rowwise().reverse();

  double total = std::max(0.0, evals.sum());
  double ref = std::max(1.0, emb.mean.squaredNorm());
  if (total <= 1e-24 * ref) {
    emb.degenerate = true;
    emb.basis = Eigen::MatrixXd::Zero(1, D);
    emb.basis(0, 0) = 1.0;
    emb.scale = Eigen::VectorXd::Ones(1);
    emb.explained_variance = 1.0;
    return emb;
  }

  std::size_t cap = std::min({d_max, n - 1, static_cast<std::size_t>(D)});
  std::size_t d = 0;
  double cum = 0;
  while (d < cap) {
    if (evals(static_cast<Eigen::Index>(d)) <= 1e-12 * total) break;
    cum += evals(static_cast<Eigen::Index>(d));
    ++d;
    if (cum / total >= variance_threshold - 1e-12) break;
  }
  d = std::max<std::size_t>(d, 1);

  emb.basis.resize(static_cast<Eigen::Index>(d), D);
  emb.scale.resize(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    auto jj = static_cast<Eigen::Index>(j);
    Eigen::VectorXd v = evecs.col(jj);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;  // fixed sign convention
    emb.basis.row(jj) = v.transpose();
    emb.scale(jj) = std::sqrt(std::max(evals(jj), 1e-300));
  }
  emb.explained_variance = cum / total;
  return emb;
}

}  // namespace igada
