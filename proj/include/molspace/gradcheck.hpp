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

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "molspace/autodiff.hpp"

namespace molspace::ad {

/// Builds a scalar from tape-registered inputs (same order as the tensors).
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  /// max over inputs of ||analytic - numeric||_2 / max(||analytic||, ||numeric||)
  double max_rel_error = 0.0;
  std::size_t evaluations = 0;
};

/// Central finite differences against reverse-mode gradients.
///
/// The numeric side only calls the forward function; it shares no code with
/// the backward rules it is checking.
GradCheckResult check_gradients(const ScalarFn& fn, std::vector<Tensor> inputs, double h = 1e-5);

/// Forward value of `fn` at `inputs` on a throwaway tape.
double evaluate(const ScalarFn& fn, const std::vector<Tensor>& inputs);

}  // namespace molspace::ad
