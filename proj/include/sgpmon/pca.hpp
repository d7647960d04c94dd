#pragma once

#include <string>

#include "sgpmon/numeric.hpp"

namespace sgpmon {

/// Centered linear projection onto the leading principal axes of training data.
struct PcaProjection {
  MatrixXd components;         // k × d, orthonormal rows
  VectorXd feature_means;      // d
  VectorXd explained_variance; // k, non-increasing
  bool whiten = false;         // scale each component to unit variance

  [[nodiscard]] Eigen::Index num_components() const { return components.rows(); }
  [[nodiscard]] Eigen::Index input_dim() const { return components.cols(); }
};

/// Fits a k-component PCA on the rows of `features` (samples × dims).
inline PcaProjection fit_pca(const MatrixXd& features, Eigen::Index num_components = 10, bool whiten = false) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (num_components < 1 || num_components > d) {
    fail(ErrorKind::InvalidInput, "PCA component count must lie in [1, " + std::to_string(d) + "]");
  }
  if (n < num_components) {
    fail(ErrorKind::InsufficientRank, "PCA needs at least " + std::to_string(num_components) + " rows");
  }
  PcaProjection proj;
  proj.whiten = whiten;
  proj.feature_means = features.colwise().mean().transpose();
  const MatrixXd centered = features.rowwise() - proj.feature_means.transpose();
  const MatrixXd cov = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  if (es.info() != Eigen::Success) fail(ErrorKind::InsufficientRank, "PCA eigendecomposition failed");
  // Eigen returns ascending eigenvalues.
  const VectorXd ev = es.eigenvalues().reverse();
  const double floor = 1e-12 * std::max(ev[0], 1e-300);
  if (!(ev[num_components - 1] > floor)) {
    fail(ErrorKind::InsufficientRank,
         "training data has rank below " + std::to_string(num_components) + "; cannot fit PCA");
  }
  proj.explained_variance = ev.head(num_components);
  proj.components = es.eigenvectors().rowwise().reverse().leftCols(num_components).transpose();
  // Deterministic sign: largest-magnitude loading positive.
  for (Eigen::Index k = 0; k < num_components; ++k) {
    Eigen::Index arg = 0;
    proj.components.row(k).cwiseAbs().maxCoeff(&arg);
    if (proj.components(k, arg) < 0) proj.components.row(k) *= -1.0;
  }
  return proj;
}

/// Projects rows of `features` onto the fitted components.
inline MatrixXd apply_pca(const PcaProjection& proj, const MatrixXd& features) {
  if (features.cols() != proj.input_dim()) {
    fail(ErrorKind::InvalidInput, "apply_pca: expected " + std::to_string(proj.input_dim()) + " columns");
  }
  MatrixXd out = (features.rowwise() - proj.feature_means.transpose()) * proj.components.transpose();
  if (proj.whiten) out = out * proj.explained_variance.cwiseSqrt().cwiseInverse().asDiagonal();
  return out;
}

}  // namespace sgpmon
