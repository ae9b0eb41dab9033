#include "backtrack/morpho.hpp"

#include "backtrack/errors.hpp"

#include <cmath>
#include <random>

namespace backtrack {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

Eigen::Vector2d image_input(double t, double i) { return {t - 2.5, (i - 159.5) / 50.0}; }

}  // namespace

GroundTruthMorpho GroundTruthMorpho::standard(Eigen::Index image_dim, std::uint64_t parameter_seed) {
  if (image_dim < 1) throw InvalidPlan("image surrogate needs at least one dimension");
  GroundTruthMorpho gt;
  gt.image_dim = image_dim;
  gt.parameter_seed = parameter_seed;
  std::mt19937_64 rng(parameter_seed);
  std::uniform_real_distribution<double> loc(-1.0, 1.0);
  std::uniform_real_distribution<double> scale(-0.2, 0.2);
  gt.image_loc_weight.resize(image_dim, 2);
  gt.image_scale_weight.resize(image_dim, 2);
  gt.image_loc_bias.resize(image_dim);
  gt.image_scale_bias.resize(image_dim);
  for (Eigen::Index k = 0; k < image_dim; ++k) {
    gt.image_loc_weight(k, 0) = loc(rng);
    gt.image_loc_weight(k, 1) = loc(rng);
    gt.image_loc_bias[k] = loc(rng);
    gt.image_scale_weight(k, 0) = scale(rng);
    gt.image_scale_weight(k, 1) = scale(rng);
    gt.image_scale_bias[k] = scale(rng) - 0.5;
  }
  return gt;
}

CausalGraph GroundTruthMorpho::graph() const {
  return CausalGraph({{NodeId{0}, "T", 1, {}},
                      {NodeId{1}, "I", 1, {NodeId{0}}},
                      {NodeId{2}, "image", image_dim, {NodeId{0}, NodeId{1}}}});
}

double GroundTruthMorpho::intensity(double t, double u_i) const {
  const double z = latent_slope * u_i + thickness_slope * t + intensity_shift;
  return intensity_scale / (1.0 + std::exp(-z)) + intensity_floor;
}

Eigen::VectorXd GroundTruthMorpho::image_location(double t, double i) const {
  return image_loc_weight * image_input(t, i) + image_loc_bias;
}

Eigen::VectorXd GroundTruthMorpho::image_log_scale(double t, double i) const {
  return image_scale_weight * image_input(t, i) + image_scale_bias;
}

Dataset GroundTruthMorpho::sample(Eigen::Index n, std::uint64_t seed) const {
  if (n < 1) throw InvalidPlan("dataset size must be at least 1");
  // Gamma with rate 5 is Gamma with scale 1/5.
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gamma(gamma_shape, 1.0 / gamma_rate);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset data;
  data.columns = {"T", "I"};
  for (const auto& name : column_names(NodeSpec{NodeId{2}, "image", image_dim, {}})) data.columns.push_back(name);
  data.values.resize(n, 2 + image_dim);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double t = thickness_offset + gamma(rng);
    const double i = intensity(t, normal(rng));
    Eigen::VectorXd u(image_dim);
    for (Eigen::Index k = 0; k < image_dim; ++k) u[k] = normal(rng);
    const Eigen::VectorXd z =
        image_log_scale(t, i).array().exp() * u.array() + image_location(t, i).array();
    data.values(r, 0) = t;
    data.values(r, 1) = i;
    data.values.row(r).tail(image_dim) = z.transpose();
  }
  return data;
}

double GroundTruthMorpho::nll_thickness(double t) const {
  const double x = t - thickness_offset;
  if (!(x > 0.0)) return INFINITY;
  const double log_pdf = gamma_shape * std::log(gamma_rate) - std::lgamma(gamma_shape) +
                         (gamma_shape - 1.0) * std::log(x) - gamma_rate * x;
  return -log_pdf;
}

double GroundTruthMorpho::nll_intensity(double t, double i) const {
  const double p = (i - intensity_floor) / intensity_scale;
  if (!(p > 0.0 && p < 1.0)) return INFINITY;
  const double pre = std::log(p) - std::log1p(-p);
  const double u = (pre - thickness_slope * t - intensity_shift) / latent_slope;
  // |du/di| = 1 / (b A p (1 - p)).
  const double log_jac = -std::log(latent_slope * intensity_scale * p * (1.0 - p));
  return 0.5 * u * u + kHalfLog2Pi - log_jac;
}

double GroundTruthMorpho::nll_image(double t, double i, const Eigen::Ref<const Eigen::VectorXd>& z) const {
  const Eigen::VectorXd s = image_log_scale(t, i);
  const Eigen::VectorXd u = (z - image_location(t, i)).array() / s.array().exp();
  return 0.5 * u.squaredNorm() + kHalfLog2Pi * static_cast<double>(image_dim) + s.sum();
}

Dataset generate_morpho_dataset(Eigen::Index n, std::uint64_t seed, const std::filesystem::path& out) {
  const auto data = GroundTruthMorpho::standard().sample(n, seed);
  write_csv(data, out);
  return data;
}

}  // namespace backtrack
