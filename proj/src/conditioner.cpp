#include "backtrack/conditioner.hpp"

#include "backtrack/errors.hpp"
#include "json_util.hpp"

#include <random>

namespace backtrack {

Conditioner Conditioner::constant(Eigen::VectorXd bias) {
  Conditioner c;
  c.shape_ = Shape::kConstant;
  c.input_dim_ = 0;
  c.w_out_ = Eigen::MatrixXd::Zero(bias.size(), 0);
  c.b_out_ = std::move(bias);
  return c;
}

Conditioner Conditioner::linear(Eigen::MatrixXd weights, Eigen::VectorXd bias) {
  if (weights.rows() != bias.size()) {
    throw DimensionMismatch("linear conditioner: weight rows must match bias size");
  }
  Conditioner c;
  c.shape_ = Shape::kLinear;
  c.input_dim_ = weights.cols();
  c.w_out_ = std::move(weights);
  c.b_out_ = std::move(bias);
  return c;
}

Conditioner Conditioner::mlp(Eigen::MatrixXd w1, Eigen::VectorXd b1, Eigen::MatrixXd w2,
                             Eigen::VectorXd b2) {
  if (w1.rows() != b1.size() || w2.cols() != w1.rows() || w2.rows() != b2.size()) {
    throw DimensionMismatch("mlp conditioner: inconsistent layer shapes");
  }
  Conditioner c;
  c.shape_ = Shape::kMlp;
  c.input_dim_ = w1.cols();
  c.w_hidden_ = std::move(w1);
  c.b_hidden_ = std::move(b1);
  c.w_out_ = std::move(w2);
  c.b_out_ = std::move(b2);
  return c;
}

Conditioner Conditioner::initial(Shape shape, Eigen::Index input_dim, Eigen::Index output_dim,
                                 std::uint64_t seed, Eigen::Index hidden) {
  switch (shape) {
    case Shape::kConstant:
      return constant(Eigen::VectorXd::Zero(output_dim));
    case Shape::kLinear:
      return linear(Eigen::MatrixXd::Zero(output_dim, input_dim), Eigen::VectorXd::Zero(output_dim));
    case Shape::kMlp: {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> normal(0.0, 1.0);
      const double scale = input_dim > 0 ? 1.0 / std::sqrt(static_cast<double>(input_dim)) : 0.0;
      Eigen::MatrixXd w1(hidden, input_dim);
      for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = scale * normal(rng);
      Eigen::VectorXd b1(hidden);
      for (Eigen::Index i = 0; i < hidden; ++i) b1[i] = 0.1 * normal(rng);
      return mlp(std::move(w1), std::move(b1), Eigen::MatrixXd::Zero(output_dim, hidden),
                 Eigen::VectorXd::Zero(output_dim));
    }
  }
  throw Error("unreachable conditioner shape");
}

Eigen::VectorXd Conditioner::evaluate(const ConstVec& x) const {
  if (x.size() != input_dim_ && shape_ != Shape::kConstant) {
    throw DimensionMismatch("conditioner expects input of size " + std::to_string(input_dim_) +
                            ", got " + std::to_string(x.size()));
  }
  switch (shape_) {
    case Shape::kConstant:
      return b_out_;
    case Shape::kLinear:
      return w_out_ * x + b_out_;
    case Shape::kMlp:
      return w_out_ * (w_hidden_ * x + b_hidden_).array().tanh().matrix() + b_out_;
  }
  return b_out_;
}

Eigen::MatrixXd Conditioner::jacobian(const ConstVec& x) const {
  switch (shape_) {
    case Shape::kConstant:
      return Eigen::MatrixXd::Zero(output_dim(), x.size());
    case Shape::kLinear:
      return w_out_;
    case Shape::kMlp: {
      Eigen::ArrayXd h = (w_hidden_ * x + b_hidden_).array().tanh();
      Eigen::VectorXd slope = (1.0 - h.square()).matrix();
      return w_out_ * slope.asDiagonal() * w_hidden_;
    }
  }
  return {};
}

Eigen::Index Conditioner::parameter_count() const {
  return w_hidden_.size() + b_hidden_.size() + w_out_.size() + b_out_.size();
}

// Flat layout: w_hidden (col-major), b_hidden, w_out (col-major), b_out.
Eigen::VectorXd Conditioner::parameters() const {
  Eigen::VectorXd theta(parameter_count());
  Eigen::Index pos = 0;
  auto put = [&](const auto& m) {
    theta.segment(pos, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    pos += m.size();
  };
  put(w_hidden_);
  put(b_hidden_);
  put(w_out_);
  put(b_out_);
  return theta;
}

void Conditioner::set_parameters(const ConstVec& theta) {
  if (theta.size() != parameter_count()) {
    throw DimensionMismatch("conditioner: wrong parameter count");
  }
  Eigen::Index pos = 0;
  auto take = [&](auto& m) {
    Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = theta.segment(pos, m.size());
    pos += m.size();
  };
  take(w_hidden_);
  take(b_hidden_);
  take(w_out_);
  take(b_out_);
}

void Conditioner::accumulate_gradient(const ConstVec& x, const ConstVec& upstream,
                                      Eigen::Ref<Eigen::VectorXd> grad) const {
  Eigen::Index pos = 0;
  if (shape_ == Shape::kMlp) {
    Eigen::VectorXd h = (w_hidden_ * x + b_hidden_).array().tanh().matrix();
    Eigen::VectorXd back = (w_out_.transpose() * upstream).cwiseProduct(
        (1.0 - h.array().square()).matrix());
    Eigen::Map<Eigen::MatrixXd>(grad.data() + pos, w_hidden_.rows(), w_hidden_.cols()) +=
        back * x.transpose();
    pos += w_hidden_.size();
    grad.segment(pos, b_hidden_.size()) += back;
    pos += b_hidden_.size();
    Eigen::Map<Eigen::MatrixXd>(grad.data() + pos, w_out_.rows(), w_out_.cols()) +=
        upstream * h.transpose();
    pos += w_out_.size();
  } else if (shape_ == Shape::kLinear) {
    Eigen::Map<Eigen::MatrixXd>(grad.data() + pos, w_out_.rows(), w_out_.cols()) +=
        upstream * x.transpose();
    pos += w_out_.size();
  }
  grad.segment(pos, b_out_.size()) += upstream;
}

nlohmann::json Conditioner::to_json() const {
  nlohmann::json j;
  j["type"] = to_string(shape_);
  switch (shape_) {
    case Shape::kConstant:
      j["bias"] = detail::vector_to_json(b_out_);
      break;
    case Shape::kLinear:
      j["weights"] = detail::matrix_to_json(w_out_);
      j["bias"] = detail::vector_to_json(b_out_);
      break;
    case Shape::kMlp:
      j["hidden_weights"] = detail::matrix_to_json(w_hidden_);
      j["hidden_bias"] = detail::vector_to_json(b_hidden_);
      j["weights"] = detail::matrix_to_json(w_out_);
      j["bias"] = detail::vector_to_json(b_out_);
      break;
  }
  return j;
}

Conditioner Conditioner::from_json(const nlohmann::json& j, Eigen::Index input_dim,
                                   Eigen::Index output_dim, std::uint64_t seed) {
  if (j.is_string()) {
    return initial(parse_conditioner_shape(j.get<std::string>()), input_dim, output_dim, seed);
  }
  if (!j.is_object() || !j.contains("type")) {
    throw FormatError("conditioner must be a shape name or an object with a 'type'");
  }
  const Shape shape = parse_conditioner_shape(j.at("type").get<std::string>());
  if (!j.contains("bias")) {
    const Eigen::Index hidden =
        j.contains("hidden") ? j.at("hidden").get<Eigen::Index>() : kDefaultHidden;
    return initial(shape, input_dim, output_dim, seed, hidden);
  }
  Conditioner c;
  switch (shape) {
    case Shape::kConstant:
      c = constant(detail::vector_from_json(j.at("bias")));
      break;
    case Shape::kLinear:
      c = linear(detail::matrix_from_json(j.at("weights"), output_dim, input_dim),
                 detail::vector_from_json(j.at("bias")));
      break;
    case Shape::kMlp: {
      auto w1 = detail::matrix_from_json(j.at("hidden_weights"), -1, input_dim);
      c = mlp(w1, detail::vector_from_json(j.at("hidden_bias")),
              detail::matrix_from_json(j.at("weights"), output_dim, w1.rows()),
              detail::vector_from_json(j.at("bias")));
      break;
    }
  }
  if (c.output_dim() != output_dim || (shape != Shape::kConstant && c.input_dim() != input_dim)) {
    throw DimensionMismatch("conditioner parameters do not match the node signature");
  }
  return c;
}

Conditioner::Shape parse_conditioner_shape(const std::string& name) {
  if (name == "constant") return Conditioner::Shape::kConstant;
  if (name == "linear") return Conditioner::Shape::kLinear;
  if (name == "mlp") return Conditioner::Shape::kMlp;
  throw FormatError("unknown conditioner type '" + name + "'");
}

std::string to_string(Conditioner::Shape shape) {
  switch (shape) {
    case Conditioner::Shape::kConstant:
      return "constant";
    case Conditioner::Shape::kLinear:
      return "linear";
    case Conditioner::Shape::kMlp:
      return "mlp";
  }
  return "constant";
}

}  // namespace backtrack
