#pragma once

#include <vector>

#include "lcvn/common.hpp"
#include "lcvn/tensor.hpp"

namespace lcvn {

// Linear-beta diffusion schedule with L levels; alpha_bar[0] = 1 and
// alpha_bar strictly decreasing with alpha_bar[L] > 0.
struct NoiseSchedule {
    int levels = 64;
    std::vector<double> alpha_bar;  // size levels + 1

    static NoiseSchedule linear(int levels, double beta_start = 2e-3, double beta_end = 0.14) {
        LCVN_CHECK(levels >= 1, "schedule: need at least one level");
        NoiseSchedule s;
        s.levels = levels;
        s.alpha_bar.resize(size_t(levels) + 1);
        s.alpha_bar[0] = 1.0;
        for (int l = 1; l <= levels; ++l) {
            double beta = beta_start + (beta_end - beta_start) * double(l - 1) /
                                           double(std::max(1, levels - 1));
            s.alpha_bar[size_t(l)] = s.alpha_bar[size_t(l) - 1] * (1.0 - beta);
        }
        for (int l = 1; l <= levels; ++l)
            LCVN_CHECK(s.alpha_bar[size_t(l)] < s.alpha_bar[size_t(l) - 1] &&
                           s.alpha_bar[size_t(l)] > 0.0,
                       "schedule: alpha_bar must strictly decrease and stay positive");
        return s;
    }

    double at(int level) const {
        LCVN_CHECK(level >= 0 && level <= levels, "schedule: level out of range");
        return alpha_bar[size_t(level)];
    }
};

// z_noisy = sqrt(abar) * z + sqrt(1 - abar) * eps, exactly.
inline Mat apply_noise_alpha(const Mat& z, double alpha_bar, const Mat& eps) {
    LCVN_CHECK(z.rows() == eps.rows() && z.cols() == eps.cols(),
               "apply_noise: noise shape mismatch");
    return std::sqrt(alpha_bar) * z + std::sqrt(1.0 - alpha_bar) * eps;
}

inline Mat apply_noise(const Mat& z, int level, const Mat& eps, const NoiseSchedule& sched) {
    return apply_noise_alpha(z, sched.at(level), eps);
}

// tape version used inside training losses
inline Var apply_noise_var(Tape& t, Var z, double alpha_bar, Var eps) {
    return t.add(t.scale(z, std::sqrt(alpha_bar)), t.scale(eps, std::sqrt(1.0 - alpha_bar)));
}

}  // namespace lcvn
