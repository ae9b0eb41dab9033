#pragma once

#include "backtrack/scm.hpp"

#include <span>
#include <string>

namespace backtrack {

/// Inner distance m: SQU is the squared Euclidean norm of a block
/// difference, ABS its 1-norm.
enum class InnerDistance { kSqu, kAbs };

std::string to_string(InnerDistance m);
/// Accepts "SQU"/"ABS" in any case. Throws UnknownDistanceKind.
InnerDistance parse_inner_distance(const std::string& text);

struct MetricReport {
  double plausible = 0.0;
  double obs = 0.0;
  double causal = 0.0;
  InnerDistance m = InnerDistance::kSqu;
  std::size_t n = 0;
};

/// Mean over the attribute nodes of -log p(x*_A | x*_pa(A)).
/// Throws InversionFailure, DimensionMismatch.
double plausible(const Scm& scm, const StructuredVector& x_star, std::span<const NodeId> attributes);

/// Mean over the attribute nodes of m(x_A, x*_A).
double obs_distance(const StructuredVector& x, const StructuredVector& x_star, InnerDistance m,
                    std::span<const NodeId> attributes);

/// Mean over the attribute nodes of m between abducted latents
/// f_A^{-1}(x_pa(A), x_A) and f_A^{-1}(x*_pa(A), x*_A).
double causal_distance(const Scm& scm, const StructuredVector& x, const StructuredVector& x_star,
                       InnerDistance m, std::span<const NodeId> attributes);

MetricReport evaluate_metrics(const Scm& scm, const StructuredVector& x,
                              const StructuredVector& x_star, InnerDistance m,
                              std::span<const NodeId> attributes);

}  // namespace backtrack
