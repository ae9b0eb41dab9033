#include "backtrack/mechanisms.hpp"

#include "backtrack/errors.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace backtrack {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Eigen::Index resolve_parent_dim(Eigen::Index requested,
                                std::initializer_list<const Conditioner*> conditioners) {
  Eigen::Index inferred = -1;
  for (const auto* c : conditioners) {
    if (c->shape() == Conditioner::Shape::kConstant) continue;
    if (inferred >= 0 && inferred != c->input_dim()) {
      throw DimensionMismatch("conditioners of one mechanism see different parent sizes");
    }
    inferred = c->input_dim();
  }
  if (requested < 0) return inferred < 0 ? 0 : inferred;
  if (inferred >= 0 && inferred != requested) {
    throw DimensionMismatch("mechanism parameters do not match the parent dimension");
  }
  return requested;
}

void require_size(const ConstVec& v, Eigen::Index n, const char* what) {
  if (v.size() != n) {
    throw DimensionMismatch(std::string(what) + ": expected size " + std::to_string(n) + ", got " +
                            std::to_string(v.size()));
  }
}

Eigen::VectorXd broadcast(const nlohmann::json& j, Eigen::Index n, const char* what) {
  Eigen::VectorXd v = detail::vector_from_json(j);
  if (v.size() == 1 && n > 1) return Eigen::VectorXd::Constant(n, v[0]);
  if (v.size() != n) throw DimensionMismatch(std::string(what) + " has the wrong length");
  return v;
}

}  // namespace

std::string to_string(MechanismKind kind) {
  switch (kind) {
    case MechanismKind::kAffine:
      return "affine";
    case MechanismKind::kSigmoid:
      return "sigmoid";
    case MechanismKind::kCategorical:
      return "categorical";
    case MechanismKind::kPredictor:
      return "predictor";
  }
  return "affine";
}

double Mechanism::negative_log_density(const ConstVec& parents, const ConstVec& value) const {
  const Eigen::VectorXd u = inverse(parents, value);
  return 0.5 * u.squaredNorm() + kHalfLog2Pi * static_cast<double>(u.size()) -
         inverse_log_det(parents, value);
}

// ---------------------------------------------------------------------------
// AffineFlow

AffineFlow::AffineFlow(Conditioner location, Conditioner log_scale, Eigen::Index parent_dim)
    : location_(std::move(location)), log_scale_(std::move(log_scale)) {
  if (location_.output_dim() != log_scale_.output_dim()) {
    throw DimensionMismatch("affine flow: location and scale sizes differ");
  }
  parent_dim_ = resolve_parent_dim(parent_dim, {&location_, &log_scale_});
}

AffineFlow AffineFlow::constant(Eigen::VectorXd location, Eigen::VectorXd scale) {
  if ((scale.array() <= 0.0).any()) throw Error("affine flow: scale must be positive");
  return AffineFlow(Conditioner::constant(std::move(location)),
                    Conditioner::constant(scale.array().log().matrix()));
}

Eigen::VectorXd AffineFlow::forward(const ConstVec& parents, const ConstVec& latent) const {
  require_size(parents, parent_dim_, "affine forward parents");
  require_size(latent, latent_dim(), "affine forward latent");
  return (log_scale_.evaluate(parents).array().exp() * latent.array()).matrix() +
         location_.evaluate(parents);
}

Eigen::VectorXd AffineFlow::inverse(const ConstVec& parents, const ConstVec& value) const {
  require_size(parents, parent_dim_, "affine inverse parents");
  require_size(value, output_dim(), "affine inverse value");
  return ((value - location_.evaluate(parents)).array() * (-log_scale_.evaluate(parents)).array().exp())
      .matrix();
}

Eigen::MatrixXd AffineFlow::latent_jacobian(const ConstVec& parents, const ConstVec&) const {
  return log_scale_.evaluate(parents).array().exp().matrix().asDiagonal();
}

Eigen::MatrixXd AffineFlow::parent_jacobian(const ConstVec& parents, const ConstVec& latent) const {
  const Eigen::VectorXd scaled_u =
      (log_scale_.evaluate(parents).array().exp() * latent.array()).matrix();
  return location_.jacobian(parents) + scaled_u.asDiagonal() * log_scale_.jacobian(parents);
}

double AffineFlow::inverse_log_det(const ConstVec& parents, const ConstVec&) const {
  return -log_scale_.evaluate(parents).sum();
}

Eigen::VectorXd AffineFlow::parameters() const {
  Eigen::VectorXd theta(location_.parameter_count() + log_scale_.parameter_count());
  theta << location_.parameters(), log_scale_.parameters();
  return theta;
}

void AffineFlow::set_parameters(const ConstVec& theta) {
  require_size(theta, location_.parameter_count() + log_scale_.parameter_count(), "affine params");
  location_.set_parameters(theta.head(location_.parameter_count()));
  log_scale_.set_parameters(theta.tail(log_scale_.parameter_count()));
}

double AffineFlow::accumulate_nll_gradient(const ConstVec& parents, const ConstVec& value,
                                           Eigen::Ref<Eigen::VectorXd> grad) const {
  const Eigen::VectorXd s = log_scale_.evaluate(parents);
  const Eigen::ArrayXd inv_scale = (-s).array().exp();
  const Eigen::ArrayXd u = (value - location_.evaluate(parents)).array() * inv_scale;
  const Eigen::VectorXd d_loc = (-u * inv_scale).matrix();
  const Eigen::VectorXd d_log_scale = (1.0 - u.square()).matrix();
  const auto n_loc = location_.parameter_count();
  location_.accumulate_gradient(parents, d_loc, grad.head(n_loc));
  log_scale_.accumulate_gradient(parents, d_log_scale, grad.tail(log_scale_.parameter_count()));
  return 0.5 * u.square().sum() + kHalfLog2Pi * static_cast<double>(u.size()) + s.sum();
}

nlohmann::json AffineFlow::to_json() const {
  return {{"kind", "affine"},
          {"params", {{"location", location_.to_json()}, {"log_scale", log_scale_.to_json()}}}};
}

// ---------------------------------------------------------------------------
// SigmoidFlow

SigmoidFlow::SigmoidFlow(Eigen::VectorXd lower, Eigen::VectorXd width, Eigen::VectorXd log_slope,
                         Conditioner pre_activation, Eigen::Index parent_dim)
    : lower_(std::move(lower)),
      width_(std::move(width)),
      log_slope_(std::move(log_slope)),
      pre_(std::move(pre_activation)) {
  parent_dim_ = resolve_parent_dim(parent_dim, {&pre_});
  const auto d = lower_.size();
  if (width_.size() != d || log_slope_.size() != d || pre_.output_dim() != d) {
    throw DimensionMismatch("sigmoid flow: inconsistent dimensions");
  }
  if ((width_.array() <= 0.0).any() || !width_.allFinite() || !lower_.allFinite()) {
    throw Error("sigmoid flow: output range must be finite with positive width");
  }
}

Eigen::VectorXd SigmoidFlow::pre_activation(const ConstVec& parents, const ConstVec& latent) const {
  require_size(latent, latent_dim(), "sigmoid latent");
  require_size(parents, parent_dim_, "sigmoid parents");
  return (log_slope_.array().exp() * latent.array()).matrix() + pre_.evaluate(parents);
}

Eigen::VectorXd SigmoidFlow::forward(const ConstVec& parents, const ConstVec& latent) const {
  const Eigen::VectorXd z = pre_activation(parents, latent);
  Eigen::VectorXd x(z.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) x[k] = lower_[k] + width_[k] * sigmoid(z[k]);
  return x;
}

Eigen::VectorXd SigmoidFlow::inverse(const ConstVec& parents, const ConstVec& value) const {
  require_size(value, output_dim(), "sigmoid inverse value");
  const Eigen::VectorXd h = pre_.evaluate(parents);
  Eigen::VectorXd u(value.size());
  for (Eigen::Index k = 0; k < value.size(); ++k) {
    const double below = value[k] - lower_[k];
    const double above = lower_[k] + width_[k] - value[k];
    if (!(below > 0.0) || !(above > 0.0)) {
      throw InversionFailure("sigmoid flow: value " + std::to_string(value[k]) +
                             " outside the open range (" + std::to_string(lower_[k]) + ", " +
                             std::to_string(lower_[k] + width_[k]) + ")");
    }
    const double z = std::log(below) - std::log(above);
    u[k] = (z - h[k]) * std::exp(-log_slope_[k]);
  }
  return u;
}

Eigen::MatrixXd SigmoidFlow::latent_jacobian(const ConstVec& parents, const ConstVec& latent) const {
  const Eigen::VectorXd z = pre_activation(parents, latent);
  Eigen::VectorXd diag(z.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    const double s = sigmoid(z[k]);
    diag[k] = width_[k] * s * (1.0 - s) * std::exp(log_slope_[k]);
  }
  return diag.asDiagonal();
}

Eigen::MatrixXd SigmoidFlow::parent_jacobian(const ConstVec& parents, const ConstVec& latent) const {
  const Eigen::VectorXd z = pre_activation(parents, latent);
  Eigen::VectorXd diag(z.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    const double s = sigmoid(z[k]);
    diag[k] = width_[k] * s * (1.0 - s);
  }
  return diag.asDiagonal() * pre_.jacobian(parents);
}

double SigmoidFlow::inverse_log_det(const ConstVec&, const ConstVec& value) const {
  double total = 0.0;
  for (Eigen::Index k = 0; k < value.size(); ++k) {
    const double below = value[k] - lower_[k];
    const double above = lower_[k] + width_[k] - value[k];
    if (!(below > 0.0) || !(above > 0.0)) throw InversionFailure("sigmoid flow: value out of range");
    // dx/dz = below * above / width.
    total -= log_slope_[k] + std::log(below) + std::log(above) - std::log(width_[k]);
  }
  return total;
}

Eigen::VectorXd SigmoidFlow::parameters() const {
  Eigen::VectorXd theta(log_slope_.size() + pre_.parameter_count());
  theta << log_slope_, pre_.parameters();
  return theta;
}

void SigmoidFlow::set_parameters(const ConstVec& theta) {
  require_size(theta, log_slope_.size() + pre_.parameter_count(), "sigmoid params");
  log_slope_ = theta.head(log_slope_.size());
  pre_.set_parameters(theta.tail(pre_.parameter_count()));
}

double SigmoidFlow::accumulate_nll_gradient(const ConstVec& parents, const ConstVec& value,
                                            Eigen::Ref<Eigen::VectorXd> grad) const {
  const Eigen::VectorXd u = inverse(parents, value);
  const auto d = log_slope_.size();
  grad.head(d).array() += 1.0 - u.array().square();
  const Eigen::VectorXd d_pre = (-u.array() * (-log_slope_).array().exp()).matrix();
  pre_.accumulate_gradient(parents, d_pre, grad.tail(pre_.parameter_count()));
  return 0.5 * u.squaredNorm() + kHalfLog2Pi * static_cast<double>(d) -
         inverse_log_det(parents, value);
}

nlohmann::json SigmoidFlow::to_json() const {
  return {{"kind", "sigmoid"},
          {"params",
           {{"lower", detail::vector_to_json(lower_)},
            {"width", detail::vector_to_json(width_)},
            {"log_slope", detail::vector_to_json(log_slope_)},
            {"pre", pre_.to_json()}}}};
}

// ---------------------------------------------------------------------------
// CategoricalMechanism

CategoricalMechanism::CategoricalMechanism(std::unique_ptr<Mechanism> inner, double c, double tau)
    : inner_(std::move(inner)), c_(c), tau_(tau) {
  if (!inner_) throw Error("categorical mechanism needs an inner flow");
  if (!(c_ > 0.0) || !(tau_ > 0.0)) throw Error("categorical mechanism: c and tau must be positive");
  if (inner_->output_dim() < 1 || inner_->latent_dim() != inner_->output_dim()) {
    throw DimensionMismatch("categorical mechanism: inner flow must map K-1 latents to K-1 logits");
  }
}

CategoricalMechanism::CategoricalMechanism(const CategoricalMechanism& other)
    : Mechanism(other), inner_(other.inner_->clone()), c_(other.c_), tau_(other.tau_) {}

Eigen::VectorXd CategoricalMechanism::probabilities(const ConstVec& logits) const {
  const auto k = logits.size() + 1;
  Eigen::VectorXd scaled(k);
  scaled.head(k - 1) = logits / tau_;
  scaled[k - 1] = c_ / tau_;
  const double top = scaled.maxCoeff();
  Eigen::VectorXd p = (scaled.array() - top).exp().matrix();
  return p / p.sum();
}

Eigen::VectorXd CategoricalMechanism::logits(const ConstVec& p) const {
  require_size(p, classes(), "categorical probabilities");
  if (!p.allFinite() || (p.array() <= 0.0).any() || (p.array() >= 1.0).any()) {
    throw InversionFailure("categorical mechanism: probabilities must lie inside the open simplex");
  }
  if (std::abs(p.sum() - 1.0) > 1e-9) {
    throw InversionFailure("categorical mechanism: probabilities do not sum to one");
  }
  const auto k = p.size();
  const double log_ref = std::log(p[k - 1]);
  return (c_ + tau_ * (p.head(k - 1).array().log() - log_ref)).matrix();
}

Eigen::VectorXd CategoricalMechanism::forward(const ConstVec& parents, const ConstVec& latent) const {
  return probabilities(inner_->forward(parents, latent));
}

Eigen::VectorXd CategoricalMechanism::inverse(const ConstVec& parents, const ConstVec& value) const {
  return inner_->inverse(parents, logits(value));
}

Eigen::MatrixXd CategoricalMechanism::softmax_jacobian(const Eigen::VectorXd& p) const {
  const auto k = p.size();
  Eigen::MatrixXd jac = -p * p.head(k - 1).transpose();
  for (Eigen::Index i = 0; i < k - 1; ++i) jac(i, i) += p[i];
  return jac / tau_;
}

Eigen::MatrixXd CategoricalMechanism::latent_jacobian(const ConstVec& parents,
                                                      const ConstVec& latent) const {
  const Eigen::VectorXd p = forward(parents, latent);
  return softmax_jacobian(p) * inner_->latent_jacobian(parents, latent);
}

Eigen::MatrixXd CategoricalMechanism::parent_jacobian(const ConstVec& parents,
                                                      const ConstVec& latent) const {
  const Eigen::VectorXd p = forward(parents, latent);
  return softmax_jacobian(p) * inner_->parent_jacobian(parents, latent);
}

// det d p_{1..K-1} / d g = tau^{-(K-1)} * prod_{k=1..K} p_k.
double CategoricalMechanism::inverse_log_det(const ConstVec& parents, const ConstVec& value) const {
  const Eigen::VectorXd g = logits(value);
  return inner_->inverse_log_det(parents, g) + static_cast<double>(g.size()) * std::log(tau_) -
         value.array().log().sum();
}

double CategoricalMechanism::accumulate_nll_gradient(const ConstVec& parents, const ConstVec& value,
                                                     Eigen::Ref<Eigen::VectorXd> grad) const {
  const Eigen::VectorXd g = logits(value);
  const double inner_nll = inner_->accumulate_nll_gradient(parents, g, grad);
  return inner_nll - static_cast<double>(g.size()) * std::log(tau_) + value.array().log().sum();
}

nlohmann::json CategoricalMechanism::to_json() const {
  return {{"kind", "categorical"},
          {"params", {{"c", c_}, {"tau", tau_}, {"inner", inner_->to_json()}}}};
}

// ---------------------------------------------------------------------------
// PredictorMechanism

PredictorMechanism::PredictorMechanism(Conditioner map, Eigen::Index parent_dim)
    : map_(std::move(map)) {
  parent_dim_ = resolve_parent_dim(parent_dim, {&map_});
}

Eigen::VectorXd PredictorMechanism::forward(const ConstVec& parents, const ConstVec& latent) const {
  require_size(latent, 0, "predictor latent");
  require_size(parents, parent_dim_, "predictor parents");
  return map_.evaluate(parents);
}

Eigen::VectorXd PredictorMechanism::inverse(const ConstVec&, const ConstVec& value) const {
  require_size(value, output_dim(), "predictor value");
  return Eigen::VectorXd(0);
}

Eigen::MatrixXd PredictorMechanism::latent_jacobian(const ConstVec&, const ConstVec&) const {
  return Eigen::MatrixXd::Zero(output_dim(), 0);
}

Eigen::MatrixXd PredictorMechanism::parent_jacobian(const ConstVec& parents, const ConstVec&) const {
  require_size(parents, parent_dim_, "predictor parents");
  return map_.jacobian(parents);
}

double PredictorMechanism::inverse_log_det(const ConstVec&, const ConstVec&) const {
  throw InversionFailure("predictor node is deterministic and has no density");
}

double PredictorMechanism::accumulate_nll_gradient(const ConstVec&, const ConstVec&,
                                                   Eigen::Ref<Eigen::VectorXd>) const {
  throw Error("predictor mechanisms are not trained by maximum likelihood");
}

nlohmann::json PredictorMechanism::to_json() const {
  return {{"kind", "predictor"}, {"params", {{"map", map_.to_json()}}}};
}

// ---------------------------------------------------------------------------
// JSON factory

namespace {

Conditioner conditioner_or_default(const nlohmann::json& params, const char* key,
                                   Eigen::Index input_dim, Eigen::Index output_dim,
                                   std::uint64_t seed, const char* fallback) {
  if (params.contains(key)) return Conditioner::from_json(params.at(key), input_dim, output_dim, seed);
  const std::string shape = input_dim == 0 ? "constant" : fallback;
  return Conditioner::from_json(shape, input_dim, output_dim, seed);
}

}  // namespace

Eigen::Index latent_dim_for(const nlohmann::json& j, Eigen::Index output_dim) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "categorical") return output_dim - 1;
  if (kind == "predictor") return 0;
  return output_dim;
}

std::unique_ptr<Mechanism> mechanism_from_json(const nlohmann::json& j, Eigen::Index parent_dim,
                                               Eigen::Index output_dim, std::uint64_t init_seed) {
  if (!j.is_object() || !j.contains("kind")) throw FormatError("mechanism needs a 'kind'");
  const auto kind = j.at("kind").get<std::string>();
  const nlohmann::json params = j.value("params", nlohmann::json::object());

  if (kind == "affine") {
    auto loc = conditioner_or_default(params, "location", parent_dim, output_dim, init_seed, "linear");
    auto scale =
        conditioner_or_default(params, "log_scale", parent_dim, output_dim, init_seed + 1, "linear");
    return std::make_unique<AffineFlow>(std::move(loc), std::move(scale), parent_dim);
  }
  if (kind == "sigmoid") {
    Eigen::VectorXd lower;
    Eigen::VectorXd width;
    if (params.contains("lower")) {
      lower = broadcast(params.at("lower"), output_dim, "sigmoid lower");
      width = broadcast(params.at("width"), output_dim, "sigmoid width");
    } else if (params.contains("range")) {
      const auto& range = params.at("range");
      if (!range.is_array() || range.size() != 2) throw FormatError("sigmoid range must be [lo, hi]");
      lower = broadcast(range[0], output_dim, "sigmoid range");
      width = broadcast(range[1], output_dim, "sigmoid range") - lower;
    } else {
      throw FormatError("sigmoid mechanism needs an output range");
    }
    Eigen::VectorXd log_slope = params.contains("log_slope")
                                    ? broadcast(params.at("log_slope"), output_dim, "sigmoid slope")
                                    : Eigen::VectorXd::Zero(output_dim);
    auto pre = conditioner_or_default(params, "pre", parent_dim, output_dim, init_seed, "linear");
    return std::make_unique<SigmoidFlow>(std::move(lower), std::move(width), std::move(log_slope),
                                         std::move(pre), parent_dim);
  }
  if (kind == "categorical") {
    if (output_dim < 2) throw DimensionMismatch("categorical node needs at least two classes");
    const double c = params.value("c", 1.0);
    const double tau = params.value("tau", 1.0);
    std::unique_ptr<Mechanism> inner =
        params.contains("inner")
            ? mechanism_from_json(params.at("inner"), parent_dim, output_dim - 1, init_seed)
            : mechanism_from_json({{"kind", "affine"}}, parent_dim, output_dim - 1, init_seed);
    return std::make_unique<CategoricalMechanism>(std::move(inner), c, tau);
  }
  if (kind == "predictor") {
    auto map = conditioner_or_default(params, "map", parent_dim, output_dim, init_seed, "linear");
    return std::make_unique<PredictorMechanism>(std::move(map), parent_dim);
  }
  throw FormatError("unknown mechanism kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Training

double mean_negative_log_density(const Mechanism& mechanism, const Eigen::MatrixXd& parents,
                                 const Eigen::MatrixXd& values) {
  if (values.rows() == 0) throw EmptyDataset("no samples");
  double total = 0.0;
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    total += mechanism.negative_log_density(parents.row(r).transpose(), values.row(r).transpose());
  }
  return total / static_cast<double>(values.rows());
}

TrainingResult train_flow_mle(const Mechanism& mechanism, const Eigen::MatrixXd& parents,
                              const Eigen::MatrixXd& values, const TrainingOptions& options) {
  const Eigen::Index n = values.rows();
  if (n == 0) throw EmptyDataset("training dataset is empty");
  if (parents.rows() != n) throw DimensionMismatch("parents and values have different row counts");
  if (values.cols() != mechanism.output_dim() || parents.cols() != mechanism.parent_dim()) {
    throw DimensionMismatch("dataset columns do not match the mechanism signature");
  }
  if (!(options.learning_rate > 0.0) || options.iterations < 1 || options.batch_size < 1 ||
      !(options.tolerance > 0.0)) {
    throw Error("training options must be positive");
  }

  TrainingResult result;
  auto fitted = mechanism.clone();
  Eigen::VectorXd theta = fitted->parameters();
  Eigen::VectorXd grad(theta.size());

  std::mt19937_64 rng(options.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index batch = std::min<Eigen::Index>(options.batch_size, n);

  auto full_nll = [&] {
    const double value = mean_negative_log_density(*fitted, parents, values);
    if (!std::isfinite(value)) throw NonFinite("training produced a non-finite likelihood");
    return value;
  };

  result.initial_nll = full_nll();
  result.nll_trace.push_back(result.initial_nll);

  std::size_t cursor = order.size();
  int it = 0;
  while (it < options.iterations) {
    if (cursor + static_cast<std::size_t>(batch) > order.size()) {
      if (batch < n) std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    grad.setZero();
    for (Eigen::Index b = 0; b < batch; ++b) {
      const auto r = order[cursor + static_cast<std::size_t>(b)];
      fitted->accumulate_nll_gradient(parents.row(r).transpose(), values.row(r).transpose(), grad);
    }
    cursor += static_cast<std::size_t>(batch);
    theta -= options.learning_rate * grad / static_cast<double>(batch);
    if (!theta.allFinite()) throw NonFinite("training diverged: non-finite parameters");
    fitted->set_parameters(theta);
    ++it;

    const bool epoch_done = cursor + static_cast<std::size_t>(batch) > order.size();
    if (epoch_done || it == options.iterations) {
      const double nll = full_nll();
      const double previous = result.nll_trace.back();
      result.nll_trace.push_back(nll);
      if (std::abs(previous - nll) < options.tolerance) break;
    }
  }

  result.final_nll = result.nll_trace.back();
  result.iterations = it;
  result.mechanism = std::move(fitted);
  return result;
}

}  // namespace backtrack
