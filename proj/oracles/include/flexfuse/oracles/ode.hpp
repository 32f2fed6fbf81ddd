#pragma once

#include <cstddef>
#include <vector>

namespace flexfuse::oracle {

struct ZohReference {
  double a_bar;
  double b_bar;
};

/// Integrates h' = a h + b u over [0, delta] with classical RK4 in long
/// double: a_bar from h(0) = 1, u = 0; b_bar from h(0) = 0, u = 1.
ZohReference integrate_zoh(double a, double b, double delta, std::size_t steps = 4096);

/// Time-invariant SSM evaluated as a causal convolution. x: [L x E] row-major,
/// a_bar, b_bar: [E x N], c: [N]. Kernel K_e[j] = sum_n c_n a_bar^j b_bar.
std::vector<double> scan_by_convolution(const std::vector<double>& x, std::size_t length, std::size_t channels,
                                        const std::vector<double>& a_bar, const std::vector<double>& b_bar,
                                        const std::vector<double>& c, std::size_t state);

}  // namespace flexfuse::oracle
