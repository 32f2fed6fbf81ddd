#pragma once

// Straightforward re-implementations of every fusion metric, kept separate
// from core so the two can be compared. Inputs are [0,1] single-channel grids.

#include <vector>

#include "flexfuse/grid.hpp"

namespace flexfuse::oracle {

double naive_entropy(const Grid<double>& a);
double naive_sd(const Grid<double>& a);
double naive_psnr(const Grid<double>& f, const std::vector<Grid<double>>& sources);
double naive_ssim(const Grid<double>& f, const std::vector<Grid<double>>& sources);
double naive_mi(const Grid<double>& f, const std::vector<Grid<double>>& sources);
double naive_cc(const Grid<double>& f, const std::vector<Grid<double>>& sources);
double naive_scd(const Grid<double>& f, const std::vector<Grid<double>>& sources);
double naive_qncie(const Grid<double>& f, const std::vector<Grid<double>>& sources);

/// Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues.
std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a);

}  // namespace flexfuse::oracle
