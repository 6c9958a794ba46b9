#pragma once

#include <functional>
#include <vector>

#include "airsum/rng.hpp"
#include "airsum/tape.hpp"
#include "airsum/tensor.hpp"

namespace airsum::test {

using BuildLoss =
    std::function<num::Var(num::Tape&, const std::vector<num::Var>&)>;

struct GradCheckResult {
  double max_error = 0.0;     // worst combined-tolerance ratio
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
  std::size_t checked = 0;
};

// Central finite differences against the tape's reverse-mode gradients.
// A coordinate passes when |a - fd| <= abs_tol + rel_tol * max(|a|, |fd|).
// Returns the worst ratio |a - fd| / (abs_tol + rel_tol * max(|a|, |fd|)),
// so values <= 1 pass.
inline GradCheckResult check_gradients(const BuildLoss& build,
                                       const std::vector<num::Tensor>& leaf_values,
                                       double step = 1e-5, double rel_tol = 1e-4,
                                       double abs_tol = 1e-8) {
  using num::Tape;
  using num::Tensor;
  using num::Var;

  auto eval = [&](const std::vector<Tensor>& values) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(values.size());
    for (const Tensor& v : values) leaves.push_back(tape.leaf(v, true));
    return build(tape, leaves).item();
  };

  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& v : leaf_values) leaves.push_back(tape.leaf(v, true));
  num::Var loss = build(tape, leaves);
  num::Gradients grads = tape.backward(loss);

  GradCheckResult result;
  std::vector<Tensor> work = leaf_values;
  for (std::size_t t = 0; t < leaf_values.size(); ++t) {
    const Tensor& analytic = grads.at(leaves[t]);
    for (std::size_t i = 0; i < work[t].size(); ++i) {
      double original = work[t][i];
      work[t][i] = original + step;
      double plus = eval(work);
      work[t][i] = original - step;
      double minus = eval(work);
      work[t][i] = original;
      double fd = (plus - minus) / (2.0 * step);
      double a = analytic[i];
      double tol = abs_tol + rel_tol * std::max(std::abs(a), std::abs(fd));
      double ratio = std::abs(a - fd) / tol;
      if (ratio > result.max_error) {
        result.max_error = ratio;
        result.worst_analytic = a;
        result.worst_fd = fd;
      }
      ++result.checked;
    }
  }
  return result;
}

inline num::Tensor random_tensor(num::RngStream& rng, num::Shape shape,
                                 double scale = 1.0, double offset = 0.0) {
  num::Tensor t = rng.gauss_tensor(std::move(shape));
  for (double& v : t.mutable_data()) v = v * scale + offset;
  return t;
}

}  // namespace airsum::test
