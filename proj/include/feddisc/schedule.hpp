#pragma once

#include <cmath>
#include <vector>

#include "feddisc/errors.hpp"
#include "feddisc/io.hpp"
#include "feddisc/linalg.hpp"

namespace feddisc {

// Linear beta schedule. Arrays are indexed by timestep with the convention
// that timestep 0 is the identity: beta(0) = 0, alpha_bar(0) = 1.
class NoiseSchedule {
public:
    NoiseSchedule(int timesteps, double beta_start, double beta_end)
        : timesteps_(timesteps), beta_start_(beta_start), beta_end_(beta_end) {
        if (timesteps < 1) throw ConfigError("schedule timesteps must be >= 1");
        if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
            throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");
        beta_.resize(timesteps + 1, 0.0);
        alpha_.resize(timesteps + 1, 1.0);
        alpha_bar_.resize(timesteps + 1, 1.0);
        for (int t = 1; t <= timesteps; ++t) {
            beta_[t] = timesteps == 1
                           ? beta_start
                           : beta_start + (beta_end - beta_start) * (t - 1) / (timesteps - 1);
            alpha_[t] = 1.0 - beta_[t];
            alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
        }
    }

    static NoiseSchedule linear_default() { return NoiseSchedule(1000, 1e-4, 0.02); }

    int timesteps() const { return timesteps_; }
    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }

    double beta(int t) const { return beta_[check(t)]; }
    double alpha(int t) const { return alpha_[check(t)]; }
    double alpha_bar(int t) const { return alpha_bar_[check(t)]; }

    // stable identifier shared between uploads and the sampler
    std::uint64_t id() const {
        ByteWriter w;
        w.u32(static_cast<std::uint32_t>(timesteps_));
        w.f64(beta_start_);
        w.f64(beta_end_);
        return fnv1a(w.bytes());
    }

private:
    int check(int t) const {
        if (t < 0 || t > timesteps_) throw IntensityOutOfRange(t, timesteps_);
        return t;
    }

    int timesteps_;
    double beta_start_;
    double beta_end_;
    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;
};

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
inline Vec forward_diffuse(const Vec& x0, int t, const NoiseSchedule& schedule, const Vec& eps) {
    if (eps.size() != x0.size()) throw DimensionMismatch("forward_diffuse", x0.size(), eps.size());
    double ab = schedule.alpha_bar(t);
    double signal = std::sqrt(ab);
    double noise = std::sqrt(1.0 - ab);
    Vec out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = signal * x0[i] + noise * eps[i];
    return out;
}

}  // namespace feddisc
