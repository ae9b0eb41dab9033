#pragma once

#include "backtrack/dataset.hpp"
#include "backtrack/graph.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>

namespace backtrack {

/// Ground-truth generator for the synthetic thickness / intensity / image
/// surrogate SCM:
///   T = 0.5 + U_T,                     U_T ~ Gamma(shape 10, rate 5)
///   I = 191 sigmoid(0.5 U_I + 2 T - 5) + 64,   U_I ~ N(0, 1)
///   Z = exp(S q + s0) * U_Z + M q + m0,  q = (T - 2.5, (I - 159.5) / 50),  U_Z ~ N(0, I)
/// The image-surrogate parameters (S, s0, M, m0) are drawn once from
/// `parameter_seed`.
struct GroundTruthMorpho {
  double gamma_shape = 10.0;
  double gamma_rate = 5.0;
  double thickness_offset = 0.5;
  double intensity_scale = 191.0;  // A
  double latent_slope = 0.5;       // b
  double thickness_slope = 2.0;    // c
  double intensity_shift = -5.0;   // d
  double intensity_floor = 64.0;   // e

  Eigen::Index image_dim = 4;
  std::uint64_t parameter_seed = 0;
  Eigen::MatrixXd image_loc_weight;    // image_dim x 2
  Eigen::VectorXd image_loc_bias;
  Eigen::MatrixXd image_scale_weight;  // image_dim x 2, log scale
  Eigen::VectorXd image_scale_bias;

  static GroundTruthMorpho standard(Eigen::Index image_dim = 4, std::uint64_t parameter_seed = 17);

  /// Node specs T (id 0), I (id 1, parent T), image (id 2, parents T, I).
  CausalGraph graph() const;

  double intensity(double t, double u_i) const;
  Eigen::VectorXd image_location(double t, double i) const;
  Eigen::VectorXd image_log_scale(double t, double i) const;

  /// Columns T, I, image[0..dim). Deterministic per seed.
  Dataset sample(Eigen::Index n, std::uint64_t seed) const;

  double nll_thickness(double t) const;
  double nll_intensity(double t, double i) const;
  double nll_image(double t, double i, const Eigen::Ref<const Eigen::VectorXd>& z) const;
};

/// Samples n rows with GroundTruthMorpho::standard() and writes them as CSV.
/// Throws InvalidPlan for n < 1, IoFailure on write errors.
Dataset generate_morpho_dataset(Eigen::Index n, std::uint64_t seed, const std::filesystem::path& out);

}  // namespace backtrack
