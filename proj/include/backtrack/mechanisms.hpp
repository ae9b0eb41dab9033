#pragma once

#include "backtrack/conditioner.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace backtrack {

enum class MechanismKind { kAffine, kSigmoid, kCategorical, kPredictor };

std::string to_string(MechanismKind kind);

/// One structural assignment x_i = f(x_pa, u_i), invertible in u_i for every
/// fixed parent value.
///
/// Implementations are immutable value types; trainers work on a clone through
/// parameters()/set_parameters().
class Mechanism {
 public:
  virtual ~Mechanism() = default;

  virtual MechanismKind kind() const = 0;
  virtual Eigen::Index parent_dim() const = 0;
  virtual Eigen::Index output_dim() const = 0;
  virtual Eigen::Index latent_dim() const = 0;

  virtual Eigen::VectorXd forward(const ConstVec& parents, const ConstVec& latent) const = 0;
  /// Throws InversionFailure when `value` lies outside the mechanism's range.
  virtual Eigen::VectorXd inverse(const ConstVec& parents, const ConstVec& value) const = 0;
  /// d forward / d latent, output_dim x latent_dim.
  virtual Eigen::MatrixXd latent_jacobian(const ConstVec& parents, const ConstVec& latent) const = 0;
  /// d forward / d parents, output_dim x parent_dim.
  virtual Eigen::MatrixXd parent_jacobian(const ConstVec& parents, const ConstVec& latent) const = 0;

  /// log |det d inverse / d value|; for categorical nodes the determinant is
  /// taken over the first K-1 probability coordinates.
  virtual double inverse_log_det(const ConstVec& parents, const ConstVec& value) const = 0;

  /// -log p(value | parents) under a standard normal latent.
  double negative_log_density(const ConstVec& parents, const ConstVec& value) const;

  virtual Eigen::VectorXd parameters() const = 0;
  virtual void set_parameters(const ConstVec& theta) = 0;
  /// Returns the sample NLL and adds its parameter gradient into `grad`.
  virtual double accumulate_nll_gradient(const ConstVec& parents, const ConstVec& value,
                                         Eigen::Ref<Eigen::VectorXd> grad) const = 0;

  virtual nlohmann::json to_json() const = 0;
  virtual std::unique_ptr<Mechanism> clone() const = 0;
};

using MechanismPtr = std::shared_ptr<const Mechanism>;

/// x = exp(s(x_pa)) * u + m(x_pa), elementwise.
class AffineFlow final : public Mechanism {
 public:
  /// `parent_dim` < 0 infers it from the non-constant conditioners.
  AffineFlow(Conditioner location, Conditioner log_scale, Eigen::Index parent_dim = -1);
  /// Constant location/scale (no parents).
  static AffineFlow constant(Eigen::VectorXd location, Eigen::VectorXd scale);

  MechanismKind kind() const override { return MechanismKind::kAffine; }
  Eigen::Index parent_dim() const override { return parent_dim_; }
  Eigen::Index output_dim() const override { return location_.output_dim(); }
  Eigen::Index latent_dim() const override { return location_.output_dim(); }

  Eigen::VectorXd forward(const ConstVec& parents, const ConstVec& latent) const override;
  Eigen::VectorXd inverse(const ConstVec& parents, const ConstVec& value) const override;
  Eigen::MatrixXd latent_jacobian(const ConstVec& parents, const ConstVec& latent) const override;
  Eigen::MatrixXd parent_jacobian(const ConstVec& parents, const ConstVec& latent) const override;
  double inverse_log_det(const ConstVec& parents, const ConstVec& value) const override;

  Eigen::VectorXd parameters() const override;
  void set_parameters(const ConstVec& theta) override;
  double accumulate_nll_gradient(const ConstVec& parents, const ConstVec& value,
                                 Eigen::Ref<Eigen::VectorXd> grad) const override;

  nlohmann::json to_json() const override;
  std::unique_ptr<Mechanism> clone() const override { return std::make_unique<AffineFlow>(*this); }

  const Conditioner& location() const { return location_; }
  const Conditioner& log_scale() const { return log_scale_; }

 private:
  Conditioner location_;
  Conditioner log_scale_;
  Eigen::Index parent_dim_ = 0;
};

/// x = lower + width * sigmoid(exp(log_slope) * u + h(x_pa)), elementwise.
/// The output range (lower, lower + width) is fixed; only the slope and the
/// pre-activation conditioner h are trained.
class SigmoidFlow final : public Mechanism {
 public:
  SigmoidFlow(Eigen::VectorXd lower, Eigen::VectorXd width, Eigen::VectorXd log_slope,
              Conditioner pre_activation, Eigen::Index parent_dim = -1);

  MechanismKind kind() const override { return MechanismKind::kSigmoid; }
  Eigen::Index parent_dim() const override { return parent_dim_; }
  Eigen::Index output_dim() const override { return lower_.size(); }
  Eigen::Index latent_dim() const override { return lower_.size(); }

  Eigen::VectorXd forward(const ConstVec& parents, const ConstVec& latent) const override;
  Eigen::VectorXd inverse(const ConstVec& parents, const ConstVec& value) const override;
  Eigen::MatrixXd latent_jacobian(const ConstVec& parents, const ConstVec& latent) const override;
  Eigen::MatrixXd parent_jacobian(const ConstVec& parents, const ConstVec& latent) const override;
  double inverse_log_det(const ConstVec& parents, const ConstVec& value) const override;

  Eigen::VectorXd parameters() const override;
  void set_parameters(const ConstVec& theta) override;
  double accumulate_nll_gradient(const ConstVec& parents, const ConstVec& value,
                                 Eigen::Ref<Eigen::VectorXd> grad) const override;

  nlohmann::json to_json() const override;
  std::unique_ptr<Mechanism> clone() const override { return std::make_unique<SigmoidFlow>(*this); }

  const Eigen::VectorXd& lower() const { return lower_; }
  const Eigen::VectorXd& width() const { return width_; }

 private:
  Eigen::VectorXd pre_activation(const ConstVec& parents, const ConstVec& latent) const;

  Eigen::VectorXd lower_;
  Eigen::VectorXd width_;
  Eigen::VectorXd log_slope_;
  Conditioner pre_;
  Eigen::Index parent_dim_ = 0;
};

/// Softmax over (g_1/tau, ..., g_{K-1}/tau, c/tau) where g is an inner flow
/// from K-1 latents to K-1 logits. Invertible on the open simplex.
class CategoricalMechanism final : public Mechanism {
 public:
  CategoricalMechanism(std::unique_ptr<Mechanism> inner, double c, double tau);
  CategoricalMechanism(const CategoricalMechanism& other);
  CategoricalMechanism& operator=(const CategoricalMechanism&) = delete;

  MechanismKind kind() const override { return MechanismKind::kCategorical; }
  Eigen::Index parent_dim() const override { return inner_->parent_dim(); }
  Eigen::Index output_dim() const override { return inner_->output_dim() + 1; }
  Eigen::Index latent_dim() const override { return inner_->latent_dim(); }
  Eigen::Index classes() const { return output_dim(); }
  double reference_logit() const { return c_; }
  double temperature() const { return tau_; }
  const Mechanism& inner() const { return *inner_; }

  Eigen::VectorXd forward(const ConstVec& parents, const ConstVec& latent) const override;
  Eigen::VectorXd inverse(const ConstVec& parents, const ConstVec& value) const override;
  Eigen::MatrixXd latent_jacobian(const ConstVec& parents, const ConstVec& latent) const override;
  Eigen::MatrixXd parent_jacobian(const ConstVec& parents, const ConstVec& latent) const override;
  double inverse_log_det(const ConstVec& parents, const ConstVec& value) const override;

  /// Probabilities for the given logits g (size K-1).
  Eigen::VectorXd probabilities(const ConstVec& logits) const;
  /// g_k = c + tau * log(p_k / p_K); throws InversionFailure off the open simplex.
  Eigen::VectorXd logits(const ConstVec& probabilities) const;

  Eigen::VectorXd parameters() const override { return inner_->parameters(); }
  void set_parameters(const ConstVec& theta) override { inner_->set_parameters(theta); }
  double accumulate_nll_gradient(const ConstVec& parents, const ConstVec& value,
                                 Eigen::Ref<Eigen::VectorXd> grad) const override;

  nlohmann::json to_json() const override;
  std::unique_ptr<Mechanism> clone() const override {
    return std::make_unique<CategoricalMechanism>(*this);
  }

 private:
  Eigen::MatrixXd softmax_jacobian(const Eigen::VectorXd& p) const;

  std::unique_ptr<Mechanism> inner_;
  double c_ = 1.0;
  double tau_ = 1.0;
};

/// Deterministic y = h(x_pa); carries no latent block.
class PredictorMechanism final : public Mechanism {
 public:
  explicit PredictorMechanism(Conditioner map, Eigen::Index parent_dim = -1);

  MechanismKind kind() const override { return MechanismKind::kPredictor; }
  Eigen::Index parent_dim() const override { return parent_dim_; }
  Eigen::Index output_dim() const override { return map_.output_dim(); }
  Eigen::Index latent_dim() const override { return 0; }

  Eigen::VectorXd predict(const ConstVec& parents) const { return map_.evaluate(parents); }
  Eigen::VectorXd forward(const ConstVec& parents, const ConstVec& latent) const override;
  Eigen::VectorXd inverse(const ConstVec& parents, const ConstVec& value) const override;
  Eigen::MatrixXd latent_jacobian(const ConstVec& parents, const ConstVec& latent) const override;
  Eigen::MatrixXd parent_jacobian(const ConstVec& parents, const ConstVec& latent) const override;
  /// A deterministic node has no density; throws InversionFailure.
  double inverse_log_det(const ConstVec& parents, const ConstVec& value) const override;

  Eigen::VectorXd parameters() const override { return map_.parameters(); }
  void set_parameters(const ConstVec& theta) override { map_.set_parameters(theta); }
  double accumulate_nll_gradient(const ConstVec& parents, const ConstVec& value,
                                 Eigen::Ref<Eigen::VectorXd> grad) const override;

  nlohmann::json to_json() const override;
  std::unique_ptr<Mechanism> clone() const override {
    return std::make_unique<PredictorMechanism>(*this);
  }

 private:
  Conditioner map_;
  Eigen::Index parent_dim_ = 0;
};

/// Builds a mechanism from its JSON form. Missing parameters produce an
/// untrained template sized for (parent_dim, output_dim); mlp conditioners are
/// seeded from `init_seed`.
std::unique_ptr<Mechanism> mechanism_from_json(const nlohmann::json& j, Eigen::Index parent_dim,
                                               Eigen::Index output_dim,
                                               std::uint64_t init_seed = 0);

/// Latent dimension a mechanism JSON will produce for a node of `output_dim`.
Eigen::Index latent_dim_for(const nlohmann::json& j, Eigen::Index output_dim);

// ---------------------------------------------------------------------------
// Maximum-likelihood training.

struct TrainingOptions {
  double learning_rate = 0.05;
  int iterations = 4000;
  int batch_size = 256;
  std::uint64_t seed = 0;
  /// Stop when the full-data NLL changes by less than this between epochs.
  double tolerance = 1e-9;
};

struct TrainingResult {
  std::unique_ptr<Mechanism> mechanism;
  double initial_nll = 0.0;
  double final_nll = 0.0;
  int iterations = 0;
  /// Full-data mean NLL after every epoch (first entry is the initial value).
  std::vector<double> nll_trace;
};

/// Mean-NLL SGD on rows of (parents, values). `parents` may have zero columns.
/// Throws EmptyDataset, DimensionMismatch, NonFinite.
TrainingResult train_flow_mle(const Mechanism& mechanism, const Eigen::MatrixXd& parents,
                              const Eigen::MatrixXd& values, const TrainingOptions& options);

/// Mean NLL of a mechanism over a dataset.
double mean_negative_log_density(const Mechanism& mechanism, const Eigen::MatrixXd& parents,
                                 const Eigen::MatrixXd& values);

}  // namespace backtrack
