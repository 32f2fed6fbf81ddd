#pragma once

// Brute-force references for the EM sub-problems. Nothing here touches the
// FFT path or the closed forms in core.

#include <cstdint>
#include <functional>
#include <random>

#include "flexfuse/em.hpp"

namespace flexfuse::oracle {

Field random_field(std::size_t h, std::size_t w, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);
GradientField random_gradient_field(std::size_t h, std::size_t w, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0);

/// Solves (I + Dh^T Dh + Dv^T Dv) k = x + Dh^T uh + Dv^T uv with explicitly
/// assembled periodic difference matrices and a dense LU factorization.
Field dense_k_solve(const Field& x, const GradientField& u);

/// Vertex of a 1-D quadratic sampled at -1, 0, 1 around `center`.
double quadratic_vertex(const std::function<double(double)>& f, double center = 0.0);

/// Per-pixel minimizer of (eta/2)(u - g)^2 + psi u^2 for every gradient sample g of k.
GradientField reference_u(const Field& k, double eta, double psi);

/// Per-pixel minimizer of m^2(x - y)^2 + n^2 x^2 + (eta/2)(k - x)^2.
Field reference_x(const Field& y, const Field& k, const Field& m, const Field& n, double eta);

/// Term-by-term double loop over the splitting objective.
double naive_hqs_objective(const Field& x, const Field& y, const Field& k, const GradientField& u, const Field& m,
                           const Field& n, double eta, double psi);

}  // namespace flexfuse::oracle
