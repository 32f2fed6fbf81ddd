#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flexfuse/dfm.hpp"
#include "flexfuse/primitives.hpp"

namespace flexfuse::oracle {

struct GradcheckOptions {
  double step;                      // five-point stencil step, scaled by max(1, |x|)
  double tolerance;                 // bound on |analytic - numeric| / max(|analytic|, |numeric|, floor)
  double floor;                     // keeps exactly-zero gradients from dividing by zero
  std::size_t coords_per_tensor = 3;
};

template <std::floating_point T>
GradcheckOptions default_gradcheck_options();

struct GradcheckReport {
  std::string name;
  std::size_t checked = 0;
  double worst = 0.0;
  bool passed = true;
  std::string detail;  // coordinate of the worst mismatch
};

/// Random inputs inside the primitive's domain (positive steps for zoh,
/// contracting transitions for the scan, ...). `series` selects ZOH inputs
/// with |delta * A| below the series threshold.
template <std::floating_point T>
std::vector<Tensor<T>> random_primitive_inputs(nn::Primitive p, std::uint64_t seed, nn::PrimitiveAttrs& attrs,
                                               bool series = false);

/// Projects the outputs onto a random cotangent and compares the VJP from
/// nn::backward with central differences of a long double nn::forward, for
/// every input tensor.
template <std::floating_point T>
GradcheckReport check_primitive(nn::Primitive p, std::uint64_t seed, const GradcheckOptions& opts,
                                bool series = false);

/// Small architecture used for composed-model checks.
DfmConfig gradcheck_config();

/// Composed dfm_forward/dfm_backward check: one report per parameter tensor
/// plus one for the input image. Parameters are randomized so that no
/// tensor sits at its zero initialization.
template <std::floating_point T>
std::vector<GradcheckReport> check_model(const DfmConfig& cfg, std::uint64_t seed, const GradcheckOptions& opts);

}  // namespace flexfuse::oracle
