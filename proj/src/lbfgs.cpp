#include <algorithm>
#include <cmath>
#include <deque>

#include "ssrl/lbfgs.hpp"

namespace ssrl {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double sup_norm(const std::vector<double>& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace

LbfgsResult lbfgs_minimize(const LbfgsObjective& f, std::vector<double>& x,
                           const LbfgsOptions& opt) {
    const size_t n = x.size();
    std::vector<double> g(n), g_new(n), x_new(n), d(n);
    std::deque<std::pair<std::vector<double>, std::vector<double>>> mem;  // (s, y)

    LbfgsResult res;
    double fx = f(x, g);
    res.value = fx;
    res.grad_norm = sup_norm(g);

    for (int iter = 0; iter < opt.max_iters; ++iter) {
        if (res.grad_norm <= opt.grad_tol) {
            res.converged = true;
            break;
        }

        // Two-loop recursion.
        d = g;
        std::vector<double> alpha(mem.size());
        for (size_t i = mem.size(); i-- > 0;) {
            const auto& [s, y] = mem[i];
            double rho = 1.0 / dot(y, s);
            alpha[i] = rho * dot(s, d);
            for (size_t j = 0; j < n; ++j) d[j] -= alpha[i] * y[j];
        }
        if (!mem.empty()) {
            const auto& [s, y] = mem.back();
            double gamma = dot(s, y) / dot(y, y);
            for (size_t j = 0; j < n; ++j) d[j] *= gamma;
        }
        for (size_t i = 0; i < mem.size(); ++i) {
            const auto& [s, y] = mem[i];
            double rho = 1.0 / dot(y, s);
            double beta = rho * dot(y, d);
            for (size_t j = 0; j < n; ++j) d[j] += (alpha[i] - beta) * s[j];
        }
        for (size_t j = 0; j < n; ++j) d[j] = -d[j];

        double dg = dot(d, g);
        if (dg >= 0.0) {  // not a descent direction; fall back to steepest descent
            for (size_t j = 0; j < n; ++j) d[j] = -g[j];
            dg = -dot(g, g);
        }

        // Strong-Wolfe line search (bracket + zoom).
        double step = iter == 0 ? std::min(1.0, 1.0 / std::max(1e-12, sup_norm(g))) : 1.0;
        double lo = 0.0, hi = 0.0;
        double f_lo = fx, dg_lo = dg;
        double f_prev = fx, step_prev = 0.0;
        bool bracketed = false, done = false;
        double f_trial = fx;

        auto eval_at = [&](double a) {
            for (size_t j = 0; j < n; ++j) x_new[j] = x[j] + a * d[j];
            return f(x_new, g_new);
        };

        for (int ls = 0; ls < opt.max_line_search && !done; ++ls) {
            f_trial = eval_at(step);
            double dg_trial = dot(d, g_new);
            if (!bracketed) {
                if (f_trial > fx + opt.c1 * step * dg || (ls > 0 && f_trial >= f_prev)) {
                    lo = step_prev;
                    hi = step;
                    f_lo = f_prev;
                    bracketed = true;
                } else if (std::abs(dg_trial) <= -opt.c2 * dg) {
                    done = true;
                } else if (dg_trial >= 0.0) {
                    lo = step;
                    hi = step_prev;
                    f_lo = f_trial;
                    bracketed = true;
                } else {
                    step_prev = step;
                    f_prev = f_trial;
                    step *= 2.0;
                    continue;
                }
            }
            if (bracketed && !done) {
                step = 0.5 * (lo + hi);
                f_trial = eval_at(step);
                dg_trial = dot(d, g_new);
                if (f_trial > fx + opt.c1 * step * dg || f_trial >= f_lo) {
                    hi = step;
                } else if (std::abs(dg_trial) <= -opt.c2 * dg) {
                    done = true;
                } else {
                    if (dg_trial * (hi - lo) >= 0.0) hi = lo;
                    lo = step;
                    f_lo = f_trial;
                }
                if (std::abs(hi - lo) < 1e-16) done = true;
            }
        }
        (void)dg_lo;

        if (!(f_trial < fx) ) {
            // Line search failed to improve; shrink aggressively once more.
            step = 1e-8;
            f_trial = eval_at(step);
            if (!(f_trial < fx)) {
                res.iterations = iter;
                res.value = fx;
                res.grad_norm = sup_norm(g);
                return res;  // stagnated
            }
        }

        std::vector<double> s(n), y(n);
        for (size_t j = 0; j < n; ++j) {
            s[j] = x_new[j] - x[j];
            y[j] = g_new[j] - g[j];
        }
        if (dot(s, y) > 1e-12) {
            mem.emplace_back(std::move(s), std::move(y));
            if (int(mem.size()) > opt.history) mem.pop_front();
        }
        x = x_new;
        g = g_new;
        fx = f_trial;
        res.iterations = iter + 1;
        res.value = fx;
        res.grad_norm = sup_norm(g);
    }
    if (res.grad_norm <= opt.grad_tol) res.converged = true;
    return res;
}

}  // namespace ssrl
