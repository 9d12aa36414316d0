#pragma once

#include <functional>
#include <vector>

namespace ssrl {

// Limited-memory BFGS with strong-Wolfe line search. The objective fills
// `grad` and returns the value; everything runs in double for stable,
// rerun-identical trajectories.
using LbfgsObjective =
    std::function<double(const std::vector<double>& x, std::vector<double>& grad)>;

struct LbfgsOptions {
    int max_iters = 800;
    double grad_tol = 1e-6;  // sup-norm
    int history = 10;
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_line_search = 25;
};

struct LbfgsResult {
    int iterations = 0;
    double value = 0.0;
    double grad_norm = 0.0;
    bool converged = false;
};

LbfgsResult lbfgs_minimize(const LbfgsObjective& f, std::vector<double>& x,
                           const LbfgsOptions& opt);

}  // namespace ssrl
