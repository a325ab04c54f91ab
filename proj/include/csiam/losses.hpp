// csiam/losses.hpp
//
// Umbrella for the two training objectives and their weighted combination.

#pragma once

#include <stdexcept>

#include "csiam/contrastive.hpp"
#include "csiam/graph.hpp"
#include "csiam/rnnt.hpp"

namespace csiam {

struct LossWeights {
  double lambda_unsup = 1.0;

  void validate() const {
    if (lambda_unsup < 0.0) throw std::invalid_argument("lambda_unsup must be >= 0");
  }
};

template <typename Real>
Var total_loss(Graph<Real>& g, Var rnnt, Var contrastive, const LossWeights& w) {
  w.validate();
  return g.add(rnnt, g.scale(contrastive, static_cast<Real>(w.lambda_unsup)));
}

}  // namespace csiam
