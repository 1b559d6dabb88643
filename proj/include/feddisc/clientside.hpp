#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "feddisc/broadcast.hpp"
#include "feddisc/corpus.hpp"
#include "feddisc/errors.hpp"
#include "feddisc/featurizer.hpp"
#include "feddisc/io.hpp"
#include "feddisc/linalg.hpp"
#include "feddisc/rng.hpp"
#include "feddisc/schedule.hpp"

namespace feddisc {

struct ClusterSet {
    int category = 0;
    std::vector<Vec> centroids;
    std::vector<int> member_counts;
    double objective = 0.0;
    // objective after every Lloyd iteration of the winning restart
    std::vector<double> objective_trace;
};

struct DomainFeature {
    int category = 0;
    Vec values;
    std::size_t support_count = 0;
};

struct NoiseMechConfig {
    int intensity = 200;
    std::uint64_t schedule_ref = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<Vec> kmeanspp_init(const std::vector<const Vec*>& pts, int k, Rng& rng) {
    std::vector<Vec> centroids;
    centroids.reserve(k);
    centroids.push_back(*pts[rng.below(pts.size())]);
    std::vector<double> d2(pts.size());
    while (static_cast<int>(centroids.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double best = squared_distance(*pts[i], centroids.front());
            for (std::size_t c = 1; c < centroids.size(); ++c)
                best = std::min(best, squared_distance(*pts[i], centroids[c]));
            d2[i] = best;
            total += best;
        }
        std::size_t pick;
        if (total <= 0.0) {
            pick = rng.below(pts.size());
        } else {
            double u = rng.uniform() * total;
            double cum = 0.0;
            pick = pts.size() - 1;
            for (std::size_t i = 0; i < pts.size(); ++i) {
                cum += d2[i];
                if (u < cum) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(*pts[pick]);
    }
    return centroids;
}

inline void assign_points(const std::vector<const Vec*>& pts, const std::vector<Vec>& centroids,
                          std::vector<int>& assign, double& objective) {
    objective = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        int best = 0;
        double best_d = squared_distance(*pts[i], centroids[0]);
        for (std::size_t c = 1; c < centroids.size(); ++c) {
            double d = squared_distance(*pts[i], centroids[c]);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        assign[i] = best;
        objective += best_d;
    }
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs.
// Fewer samples than `k` returns one singleton centroid per sample.
inline ClusterSet kmeans(const std::vector<FeatureVector>& features, int k, int restarts,
                         int max_iters, std::uint64_t seed) {
    if (features.empty()) throw Error("kmeans: empty input");
    if (k < 1) throw Error("kmeans: k must be >= 1");
    std::vector<const Vec*> pts;
    pts.reserve(features.size());
    for (const auto& f : features) pts.push_back(&f.values);
    const std::size_t n = pts.size();

    ClusterSet out;
    if (n <= static_cast<std::size_t>(k)) {
        for (const Vec* p : pts) {
            out.centroids.push_back(*p);
            out.member_counts.push_back(1);
        }
        out.objective = 0.0;
        out.objective_trace = {0.0};
        return out;
    }

    bool have_best = false;
    for (int r = 0; r < restarts; ++r) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
        std::vector<Vec> centroids = detail::kmeanspp_init(pts, k, rng);
        std::vector<int> assign(n, -1);
        double objective = 0.0;
        detail::assign_points(pts, centroids, assign, objective);
        std::vector<double> trace{objective};

        for (int iter = 0; iter < max_iters; ++iter) {
            // update step: centroid = mean of members
            std::vector<MeanAccumulator> acc(k, MeanAccumulator(centroids[0].size()));
            for (std::size_t i = 0; i < n; ++i) acc[assign[i]].add(*pts[i]);
            std::vector<int> empties;
            for (int c = 0; c < k; ++c) {
                if (acc[c].count() > 0)
                    centroids[c] = acc[c].mean();
                else
                    empties.push_back(c);
            }
            // re-seed empty clusters on the point farthest from its centroid
            for (int c : empties) {
                std::size_t farthest = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    double d = squared_distance(*pts[i], centroids[assign[i]]);
                    if (d > far_d) {
                        far_d = d;
                        farthest = i;
                    }
                }
                centroids[c] = *pts[farthest];
                assign[farthest] = c;
            }

            std::vector<int> new_assign(n, -1);
            double new_objective = 0.0;
            detail::assign_points(pts, centroids, new_assign, new_objective);
            if (new_objective > trace.back() + 1e-9)
                throw Error("kmeans: objective increased within a Lloyd run");
            trace.push_back(new_objective);
            bool unchanged = new_assign == assign;
            assign = std::move(new_assign);
            objective = new_objective;
            if (unchanged) break;
        }

        if (!have_best || objective < out.objective) {
            have_best = true;
            out.centroids = centroids;
            out.objective = objective;
            out.objective_trace = trace;
            out.member_counts.assign(k, 0);
            for (std::size_t i = 0; i < n; ++i) ++out.member_counts[assign[i]];
        }
    }

    // drop clusters that ended empty (only degenerate duplicate inputs)
    for (int c = static_cast<int>(out.centroids.size()) - 1; c >= 0; --c) {
        if (out.member_counts[c] == 0) {
            out.centroids.erase(out.centroids.begin() + c);
            out.member_counts.erase(out.member_counts.begin() + c);
        }
    }
    return out;
}

// Per-category mean of a client's pseudo-labeled features.
inline DomainFeature domain_feature(const std::vector<FeatureVector>& features, int category) {
    if (features.empty()) throw EmptyCategoryError(category);
    MeanAccumulator acc(features.front().values.size());
    for (const auto& f : features) acc.add(f.values);
    return DomainFeature{category, acc.mean(), acc.count()};
}

// Gaussian mechanism applied before upload:
// out = sqrt(alpha_bar_n) v + sqrt(1 - alpha_bar_n) eps
inline Vec add_noise(const Vec& vec, const NoiseMechConfig& mech, const NoiseSchedule& schedule,
                     Rng& rng) {
    if (mech.intensity < 0 || mech.intensity > schedule.timesteps())
        throw IntensityOutOfRange(mech.intensity, schedule.timesteps());
    if (mech.schedule_ref != 0 && mech.schedule_ref != schedule.id())
        throw Error("add_noise: schedule does not match mech.schedule_ref");
    if (!all_finite(vec)) throw Error("add_noise: non-finite input");
    double ab = schedule.alpha_bar(mech.intensity);
    if (mech.intensity == 0) return vec;
    double signal = std::sqrt(ab);
    double noise = std::sqrt(1.0 - ab);
    Vec out(vec.size());
    for (std::size_t i = 0; i < vec.size(); ++i) out[i] = signal * vec[i] + noise * rng.normal();
    return out;
}

// ---- the one-shot uplink message ----

struct CategoryUpload {
    int category = 0;
    std::vector<Vec> centroids;  // noised
    Vec domain_vector;           // noised
    std::uint32_t sample_count = 0;
};

struct ClientUpload {
    int client_id = 0;
    int num_categories = 0;   // M
    int centroid_limit = 0;   // L
    int feature_dim = 0;      // d
    std::vector<CategoryUpload> categories;  // ascending by category, absent ones omitted
    std::size_t byte_size = 0;
};

// header {schema u16, client_id u16, M u16, L u16, d u16}, then per present
// category {category u16, centroid_count u16, centroids d x f32 each,
// domain feature d x f32, sample_count u32}
inline std::vector<std::uint8_t> serialize_upload(const ClientUpload& upload) {
    ByteWriter w;
    w.u16(kWireSchemaVersion);
    w.u16(static_cast<std::uint16_t>(upload.client_id));
    w.u16(static_cast<std::uint16_t>(upload.num_categories));
    w.u16(static_cast<std::uint16_t>(upload.centroid_limit));
    w.u16(static_cast<std::uint16_t>(upload.feature_dim));
    for (const CategoryUpload& cat : upload.categories) {
        w.u16(static_cast<std::uint16_t>(cat.category));
        w.u16(static_cast<std::uint16_t>(cat.centroids.size()));
        for (const Vec& c : cat.centroids) w.f32_array(c);
        w.f32_array(cat.domain_vector);
        w.u32(cat.sample_count);
    }
    return w.bytes();
}

inline ClientUpload deserialize_upload(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    ClientUpload upload;
    if (r.u16() != kWireSchemaVersion) throw IoError("unsupported upload schema version");
    upload.client_id = r.u16();
    upload.num_categories = r.u16();
    upload.centroid_limit = r.u16();
    upload.feature_dim = r.u16();
    while (!r.done()) {
        CategoryUpload cat;
        cat.category = r.u16();
        std::size_t count = r.u16();
        for (std::size_t i = 0; i < count; ++i)
            cat.centroids.push_back(r.f32_array(upload.feature_dim));
        cat.domain_vector = r.f32_array(upload.feature_dim);
        cat.sample_count = r.u32();
        upload.categories.push_back(std::move(cat));
    }
    upload.byte_size = bytes.size();
    return upload;
}

enum class UploadMode {
    kmeans_centroids,  // the standard pipeline
    random_features,   // ablation: L uniformly chosen raw features per category
};

// Full client pipeline: encode, pseudo-label, cluster, average, noise,
// assemble. Inference only; no parameter is written anywhere on this path.
inline ClientUpload build_upload(int client_id, const ClientView& view,
                                 const ServerBroadcast& broadcast, int centroid_limit,
                                 const NoiseMechConfig& mech, const NoiseSchedule& schedule,
                                 std::uint64_t seed, UploadMode mode = UploadMode::kmeans_centroids,
                                 int kmeans_restarts = 10, int kmeans_max_iters = 100) {
    if (view.data.empty()) throw EmptyClientError(client_id);
    if (broadcast.featurizer == nullptr) throw Error("build_upload: broadcast lacks featurizer");
    const Featurizer& featurizer = *broadcast.featurizer;
    const int M = static_cast<int>(broadcast.prototypes.size());

    std::vector<std::vector<FeatureVector>> by_category(M);
    for (const Vec& x : view.data) {
        FeatureVector f = encode(featurizer, x);
        PseudoLabel pl = pseudo_label(f, broadcast.prototypes);
        by_category[pl.category].push_back(std::move(f));
    }

    const std::uint64_t client_seed = derive_seed(seed, stream::upload, client_id);
    Rng noise_rng(derive_seed(client_seed, stream::noise));

    ClientUpload upload;
    upload.client_id = client_id;
    upload.num_categories = M;
    upload.centroid_limit = centroid_limit;
    upload.feature_dim = featurizer.feature_dim();
    for (int j = 0; j < M; ++j) {
        const auto& members = by_category[j];
        if (members.empty()) continue;  // absent categories are omitted

        std::vector<Vec> representatives;
        if (mode == UploadMode::kmeans_centroids) {
            ClusterSet clusters = kmeans(members, centroid_limit, kmeans_restarts,
                                         kmeans_max_iters, derive_seed(client_seed, 100 + j));
            representatives = std::move(clusters.centroids);
        } else {
            // uniform choice without replacement
            Rng pick_rng(derive_seed(client_seed, 200 + j));
            std::vector<std::size_t> order(members.size());
            std::iota(order.begin(), order.end(), 0);
            std::size_t take = std::min<std::size_t>(centroid_limit, members.size());
            for (std::size_t i = 0; i < take; ++i) {
                std::size_t swap_with = i + pick_rng.below(order.size() - i);
                std::swap(order[i], order[swap_with]);
                representatives.push_back(members[order[i]].values);
            }
        }
        DomainFeature domain = domain_feature(members, j);

        CategoryUpload cat;
        cat.category = j;
        for (const Vec& c : representatives)
            cat.centroids.push_back(add_noise(c, mech, schedule, noise_rng));
        cat.domain_vector = add_noise(domain.values, mech, schedule, noise_rng);
        cat.sample_count = static_cast<std::uint32_t>(members.size());
        upload.categories.push_back(std::move(cat));
    }
    upload.byte_size = serialize_upload(upload).size();
    return upload;
}

}  // namespace feddisc
