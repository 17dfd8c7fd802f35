#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ops.hpp"

namespace cfmn {

struct CheckReport {
    std::string op_name;
    std::vector<double> per_input_error;  // max rel error per input tensor
    double max_error = 0;
    bool passed = false;
};

// Builds the op output from leaf vars; may close over constants/state but
// must be repeatable (state copies, no accumulation across calls).
using CheckedOp = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central-difference check of the analytic backward pass. The output is
// reduced to a scalar with a fixed random projection; per-input error is
// ||g_analytic - g_fd||_inf / max(1, ||g_fd||_inf). Non-finite gradients
// throw NumericError naming the op.
CheckReport grad_check(const std::string& op_name, const CheckedOp& op,
                       const std::vector<Tensor>& inputs, double eps = 1e-5, double tol = 1e-4,
                       uint64_t projection_seed = 0x5eed);

// One round of checks over every differentiable op plus the full matching
// block, on randomized small shapes.
std::vector<CheckReport> grad_check_round(uint64_t seed, double eps = 1e-5, double tol = 1e-4);

// `rounds` independent rounds; returns all reports.
std::vector<CheckReport> grad_check_battery(uint64_t seed, int rounds, double eps = 1e-5,
                                            double tol = 1e-4);

}  // namespace cfmn
