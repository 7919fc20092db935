#pragma once

#include "gslosh/nn.hpp"

namespace gslosh {

/// Operators driving one metriplectic (reversible + irreversible) update:
/// dx/dt = L * DE + M * DS with L skew-symmetric and M symmetric.
struct GenericOperators {
  Tensor2 L;
  Tensor2 M;
  Vector DE;
  Vector DS;

  std::size_t dim() const { return static_cast<std::size_t>(DE.size()); }
  /// L * DE + M * DS
  Vector rate() const { return L * DE + M * DS; }
};

}  // namespace gslosh
