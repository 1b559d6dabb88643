#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "feddisc/denoiser.hpp"
#include "feddisc/errors.hpp"
#include "feddisc/linalg.hpp"
#include "feddisc/rng.hpp"
#include "feddisc/schedule.hpp"

namespace feddisc {

struct GuidanceWeights {
    double feature_weight = 2.0;  // w_f, on the centroid-conditioned pass
    double domain_weight = 2.0;   // w_g, on the domain-feature pass

    void validate() const {
        if (!std::isfinite(feature_weight) || !std::isfinite(domain_weight))
            throw ConfigError("guidance weights must be finite");
    }
};

struct SamplerConfig {
    int num_steps = 20;
    double eta = 0.0;
    std::uint64_t seed = 0;

    void validate(int timesteps) const {
        if (num_steps < 1 || num_steps > timesteps)
            throw ConfigError("sampler num_steps must be in [1, T]");
        if (!(eta >= 0.0) || !(eta <= 1.0)) throw ConfigError("sampler eta must be in [0, 1]");
    }
};

struct GeneratedSample {
    Vec data;
    int pseudo_label = 0;
    // where the conditioning came from
    int source_client = -1;
    int source_category = -1;
    int centroid_index = -1;
    std::vector<int> domain_feature_clients;
};

// Composed prediction: category-only plus weighted offsets toward the
// centroid-conditioned and domain-conditioned predictions.
inline Vec composed_eps(const Denoiser& denoiser, const Vec& x_t, int t, int category,
                        const Vec* centroid, const Vec* domain, const GuidanceWeights& w) {
    Vec eps_cat = denoiser.predict(x_t, t, category, nullptr);
    Vec out = eps_cat;
    if (centroid != nullptr && w.feature_weight != 0.0) {
        Vec eps_z = denoiser.predict(x_t, t, category, centroid);
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] += w.feature_weight * (eps_z[i] - eps_cat[i]);
    }
    if (domain != nullptr && w.domain_weight != 0.0) {
        Vec eps_g = denoiser.predict(x_t, t, category, domain);
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] += w.domain_weight * (eps_g[i] - eps_cat[i]);
    }
    return out;
}

// One DDIM update from t to t_prev:
//   x0_est = (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t)
//   sigma  = eta sqrt((1-ab_prev)/(1-ab_t)) sqrt(1 - ab_t/ab_prev)
//   x_prev = sqrt(ab_prev) x0_est + sqrt(1-ab_prev-sigma^2) eps + sigma z
inline Vec ddim_step(const Vec& x_t, const Vec& eps_hat, int t, int t_prev,
                     const NoiseSchedule& schedule, double eta, Rng& rng) {
    if (!(t_prev >= 0 && t_prev < t && t <= schedule.timesteps()))
        throw Error("ddim_step: need 0 <= t_prev < t <= T");
    if (eps_hat.size() != x_t.size())
        throw DimensionMismatch("ddim_step", x_t.size(), eps_hat.size());
    double ab_t = schedule.alpha_bar(t);
    double ab_prev = schedule.alpha_bar(t_prev);
    double sigma = 0.0;
    if (eta > 0.0 && t_prev > 0)
        sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
    double dir_sq = 1.0 - ab_prev - sigma * sigma;
    if (dir_sq < -1e-12) throw Error("ddim_step: schedule/eta inconsistency, negative sqrt");
    if (dir_sq < 0.0) dir_sq = 0.0;

    double sqrt_ab_t = std::sqrt(ab_t);
    double coef_x0 = std::sqrt(ab_prev);
    double coef_dir = std::sqrt(dir_sq);
    Vec out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i) {
        double x0_est = (x_t[i] - std::sqrt(1.0 - ab_t) * eps_hat[i]) / sqrt_ab_t;
        out[i] = coef_x0 * x0_est + coef_dir * eps_hat[i];
    }
    if (sigma > 0.0)
        for (auto& v : out) v += sigma * rng.normal();
    return out;
}

// num_steps + 1 timestep values evenly spaced from T down to 0
inline std::vector<int> sampling_timesteps(int timesteps, int num_steps) {
    std::vector<int> ts(num_steps + 1);
    for (int i = 0; i <= num_steps; ++i) {
        double frac = static_cast<double>(num_steps - i) / static_cast<double>(num_steps);
        ts[i] = static_cast<int>(std::lround(frac * timesteps));
    }
    for (int i = 0; i < num_steps; ++i)
        if (ts[i] <= ts[i + 1]) throw ConfigError("sampler timestep grid is not strictly decreasing");
    return ts;
}

// Guided DDIM sampling, conditioned on a category plus an optional noised
// centroid and domain feature. The output carries the conditioning category
// as its pseudo-label.
inline GeneratedSample sample(const Denoiser& denoiser, int category, const Vec* centroid,
                              const Vec* domain, const GuidanceWeights& w,
                              const SamplerConfig& cfg, const NoiseSchedule& schedule, Rng& rng) {
    w.validate();
    cfg.validate(schedule.timesteps());
    std::vector<int> ts = sampling_timesteps(schedule.timesteps(), cfg.num_steps);

    Vec state(denoiser.config().data_dim);
    for (auto& v : state) v = rng.normal();
    for (int i = 0; i < cfg.num_steps; ++i) {
        Vec eps_hat = composed_eps(denoiser, state, ts[i], category, centroid, domain, w);
        state = ddim_step(state, eps_hat, ts[i], ts[i + 1], schedule, cfg.eta, rng);
        if (!all_finite(state)) throw SamplerDivergence(i);
    }

    GeneratedSample out;
    out.data = std::move(state);
    out.pseudo_label = category;
    return out;
}

}  // namespace feddisc
