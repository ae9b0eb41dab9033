#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>

namespace backtrack {

using ConstVec = Eigen::Ref<const Eigen::VectorXd>;

/// Differentiable map from parent values to a fixed-size output.
///
/// Three shapes are supported: `constant` (bias only, ignores the input),
/// `linear` (W x + b) and `mlp` (one tanh hidden layer). Parameters are
/// exposed as a flat vector so trainers can treat every mechanism uniformly.
class Conditioner {
 public:
  enum class Shape { kConstant, kLinear, kMlp };

  static constexpr Eigen::Index kDefaultHidden = 8;

  Conditioner() = default;
  static Conditioner constant(Eigen::VectorXd bias);
  static Conditioner linear(Eigen::MatrixXd weights, Eigen::VectorXd bias);
  static Conditioner mlp(Eigen::MatrixXd w1, Eigen::VectorXd b1, Eigen::MatrixXd w2,
                         Eigen::VectorXd b2);
  /// Zero-initialised constant/linear map, or an mlp with small seeded hidden weights
  /// and a zero output layer (so every shape starts as the zero function).
  static Conditioner initial(Shape shape, Eigen::Index input_dim, Eigen::Index output_dim,
                             std::uint64_t seed, Eigen::Index hidden = kDefaultHidden);

  Shape shape() const { return shape_; }
  Eigen::Index input_dim() const { return input_dim_; }
  Eigen::Index output_dim() const { return b_out_.size(); }

  Eigen::VectorXd evaluate(const ConstVec& x) const;
  /// d output / d input, output_dim x input_dim.
  Eigen::MatrixXd jacobian(const ConstVec& x) const;

  Eigen::Index parameter_count() const;
  Eigen::VectorXd parameters() const;
  void set_parameters(const ConstVec& theta);
  /// Adds (d output / d theta)^T * upstream into `grad`.
  void accumulate_gradient(const ConstVec& x, const ConstVec& upstream,
                           Eigen::Ref<Eigen::VectorXd> grad) const;

  nlohmann::json to_json() const;
  /// Reads a conditioner. A bare shape string ("linear") or an object without
  /// weights yields the initial() map for the given dimensions.
  static Conditioner from_json(const nlohmann::json& j, Eigen::Index input_dim,
                               Eigen::Index output_dim, std::uint64_t seed);

 private:
  Shape shape_ = Shape::kConstant;
  Eigen::Index input_dim_ = 0;
  // linear: w_out is output x input. mlp: w_hidden/b_hidden feed w_out/b_out.
  Eigen::MatrixXd w_hidden_;
  Eigen::VectorXd b_hidden_;
  Eigen::MatrixXd w_out_;
  Eigen::VectorXd b_out_;
};

Conditioner::Shape parse_conditioner_shape(const std::string& name);
std::string to_string(Conditioner::Shape shape);

}  // namespace backtrack
