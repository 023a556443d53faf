// Copyright 2026 The molspace Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "molspace/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace molspace::ad {

double evaluate(const ScalarFn& fn, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return fn(tape, vars).value().item();
}

GradCheckResult check_gradients(const ScalarFn& fn, std::vector<Tensor> inputs, double h) {
  GradCheckResult result;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.parameter(t));
    Var out = fn(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double diff2 = 0.0, an2 = 0.0, nu2 = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double fp = evaluate(fn, inputs);
      inputs[k][i] = saved - h;
      const double fm = evaluate(fn, inputs);
      inputs[k][i] = saved;
      result.evaluations += 2;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      diff2 += (a - numeric) * (a - numeric);
      an2 += a * a;
      nu2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(an2), std::sqrt(nu2), 1e-12});
    result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff2) / denom);
  }
  return result;
}

}  // namespace molspace::ad
