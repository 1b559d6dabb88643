#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "feddisc/broadcast.hpp"
#include "feddisc/classifier.hpp"
#include "feddisc/clientside.hpp"
#include "feddisc/config.hpp"
#include "feddisc/corpus.hpp"
#include "feddisc/denoiser.hpp"
#include "feddisc/errors.hpp"
#include "feddisc/featurizer.hpp"
#include "feddisc/federation.hpp"
#include "feddisc/parallel.hpp"
#include "feddisc/rng.hpp"
#include "feddisc/sampler.hpp"
#include "feddisc/schedule.hpp"

namespace feddisc {

// Pipeline variants used by the ablation command. `full` is the normal path;
// the others knock out one conditioning signal each.
enum class Variant { full, no_domain, no_centroid };

inline std::string record_method_name(Method m, Variant v) {
    std::string base = method_name(m);
    if (v == Variant::no_domain) return base + "_no_domain";
    if (v == Variant::no_centroid) return base + "_no_centroid";
    return base;
}

struct RunRecord {
    std::string run_id;
    std::uint64_t seed = 0;
    std::string method;
    std::string tag;  // sweep axis annotation like "L=3", empty otherwise
    Metrics metrics;
    CommLedger ledger;
    std::size_t generated_count = 0;
    double wall_seconds = 0.0;
    std::uint64_t config_hash = 0;
};

struct ExperimentAssets {
    Corpus corpus;
    Featurizer featurizer;
    NoiseSchedule schedule;
};

inline ExperimentAssets make_assets(const ExperimentConfig& cfg) {
    cfg.validate();
    return ExperimentAssets{
        build_corpus(cfg.corpus),
        Featurizer(cfg.featurizer.seed, cfg.featurizer.feature_dim, cfg.corpus.data_dim),
        cfg.schedule.build()};
}

inline std::vector<Prototype> server_prototypes(const Corpus& corpus, const Featurizer& f) {
    std::vector<std::pair<FeatureVector, int>> features;
    features.reserve(corpus.server_set.size());
    for (const Sample& s : corpus.server_set) {
        if (!s.label) throw Error("server set must be labeled");
        features.emplace_back(encode(f, s), *s.label);
    }
    return extract_prototypes(features, corpus.config.num_categories);
}

namespace detail {

inline const CategoryUpload& find_category(const ClientUpload& upload, int category) {
    for (const CategoryUpload& c : upload.categories)
        if (c.category == category) return c;
    throw Error("upload from client " + std::to_string(upload.client_id) +
                " lacks category " + std::to_string(category));
}

}  // namespace detail

// Server-side generation: every plan entry yields samples_per_entry draws,
// each conditioned on the entry's centroid and (when planned) one uploaded
// domain feature. Entries run in parallel on disjoint rng streams.
inline std::vector<GeneratedSample> generate_from_plan(
    const GenerationPlan& plan, const std::vector<ClientUpload>& uploads,
    const Denoiser& denoiser, const NoiseSchedule& schedule, const GuidanceWeights& weights,
    const SamplerConfig& sampler_cfg, std::uint64_t run_seed) {
    std::vector<std::vector<GeneratedSample>> per_entry(plan.entries.size());
    parallel_for(plan.entries.size(), [&](std::size_t e) {
        const PlanEntry& pe = plan.entries[e];
        const CategoryUpload& cat = detail::find_category(uploads[pe.client_index], pe.category);
        const Vec& centroid = cat.centroids.at(pe.centroid_index);
        Rng rng(derive_seed(run_seed, stream::generate, e));
        per_entry[e].reserve(plan.samples_per_entry);
        for (int i = 0; i < plan.samples_per_entry; ++i) {
            const Vec* domain = nullptr;
            int domain_client = -1;
            if (!pe.domain_clients.empty()) {
                domain_client = pe.domain_clients.at(i);
                domain = &detail::find_category(uploads[domain_client], pe.category).domain_vector;
            }
            GeneratedSample g =
                sample(denoiser, pe.category, &centroid, domain, weights, sampler_cfg, schedule, rng);
            g.source_client = uploads[pe.client_index].client_id;
            g.source_category = pe.category;
            g.centroid_index = pe.centroid_index;
            if (domain_client >= 0)
                g.domain_feature_clients.push_back(uploads[domain_client].client_id);
            per_entry[e].push_back(std::move(g));
        }
    });
    std::vector<GeneratedSample> out;
    out.reserve(plan.total_samples());
    for (auto& group : per_entry)
        for (auto& g : group) out.push_back(std::move(g));
    return out;
}

// Nearest-prototype classification of the test sets; no fine-tuning at all.
inline Metrics evaluate_zeroshot(const std::vector<Prototype>& prototypes, const Featurizer& f,
                                 const std::vector<std::vector<Sample>>& test_views) {
    Metrics m;
    m.per_client_accuracy.resize(test_views.size(), 0.0);
    for (std::size_t k = 0; k < test_views.size(); ++k) {
        const auto& view = test_views[k];
        if (view.empty()) throw EmptyClientError(static_cast<int>(k));
        std::vector<int> hits(view.size(), 0);
        parallel_for(view.size(), [&](std::size_t i) {
            const Sample& s = view[i];
            if (!s.label) throw Error("evaluate_zeroshot: unlabeled test sample");
            hits[i] = pseudo_label(encode(f, s), prototypes).category == *s.label ? 1 : 0;
        });
        long correct = 0;
        for (int h : hits) correct += h;
        m.per_client_accuracy[k] = static_cast<double>(correct) / static_cast<double>(view.size());
    }
    m.average_accuracy = 0.0;
    for (double a : m.per_client_accuracy) m.average_accuracy += a;
    m.average_accuracy /= static_cast<double>(m.per_client_accuracy.size());
    return m;
}

// One full experiment for one seed. `denoiser` may be null for methods that
// never generate (finetune_centroids, proto_zeroshot, oracle_upperbound).
inline RunRecord run_single(const ExperimentConfig& cfg, const ExperimentAssets& assets,
                            const Denoiser* denoiser, std::uint64_t run_seed,
                            Variant variant = Variant::full) {
    cfg.validate();
    if (cfg.method == Method::feddisc && denoiser == nullptr)
        throw Error("run_single: method feddisc requires a denoiser checkpoint");
    if (variant != Variant::full && cfg.method != Method::feddisc)
        throw ConfigError("ablation variants only apply to method feddisc");

    const auto t_start = std::chrono::steady_clock::now();
    const Corpus& corpus = assets.corpus;
    const Featurizer& featurizer = assets.featurizer;
    const NoiseSchedule& schedule = assets.schedule;
    const int K = corpus.config.num_clients;
    const int M = corpus.config.num_categories;

    PartitionedCorpus parts = partition(corpus);
    MessageBus bus(K);

    // server phase: prototypes go out to everyone
    ServerBroadcast broadcast = make_broadcast(featurizer, server_prototypes(corpus, featurizer));
    bus.post_broadcast(broadcast);

    RunRecord rec;
    rec.seed = run_seed;
    rec.method = record_method_name(cfg.method, variant);
    rec.config_hash = config_hash(cfg);

    std::vector<std::pair<Vec, int>> train_pairs;
    bool needs_finetune = cfg.method != Method::proto_zeroshot;

    if (cfg.method == Method::feddisc || cfg.method == Method::finetune_centroids) {
        // client phase: strictly inference, metered through the bus
        NoiseMechConfig mech;
        mech.intensity = cfg.resolved_noise_intensity();
        mech.schedule_ref = schedule.id();
        mech.seed = run_seed;
        UploadMode mode = variant == Variant::no_centroid ? UploadMode::random_features
                                                          : UploadMode::kmeans_centroids;
        const std::uint64_t mutations_before = mutation_count();
        std::vector<ClientUpload> uploads;
        uploads.reserve(K);
        for (const ClientView& view : parts.client_views)
            uploads.push_back(bus.post_upload(build_upload(
                view.client_id, view, broadcast, cfg.protocol.centroids_per_category, mech,
                schedule, run_seed, mode, cfg.protocol.kmeans_restarts,
                cfg.protocol.kmeans_max_iters)));
        bus.ledger().client_param_updates += mutation_count() - mutations_before;

        if (cfg.method == Method::feddisc) {
            GenerationPlan plan =
                plan_generation(uploads, cfg.protocol.images_per_centroid, run_seed,
                                variant != Variant::no_domain);
            GuidanceWeights weights;
            weights.feature_weight = cfg.protocol.feature_weight;
            weights.domain_weight = variant == Variant::no_domain ? 0.0 : cfg.protocol.domain_weight;
            SamplerConfig sampler_cfg;
            sampler_cfg.num_steps = cfg.protocol.sampler_steps;
            sampler_cfg.eta = cfg.protocol.eta;
            sampler_cfg.seed = run_seed;
            std::vector<GeneratedSample> generated = generate_from_plan(
                plan, uploads, *denoiser, schedule, weights, sampler_cfg, run_seed);
            rec.generated_count = generated.size();

            train_pairs.reserve(generated.size());
            for (const GeneratedSample& g : generated)
                train_pairs.emplace_back(encode(featurizer, g.data).values, g.pseudo_label);
        } else {
            for (const ClientUpload& u : uploads)
                for (const CategoryUpload& cat : u.categories)
                    for (const Vec& c : cat.centroids) train_pairs.emplace_back(c, cat.category);
        }
        if (cfg.protocol.append_server_features)
            for (const Sample& s : corpus.server_set)
                train_pairs.emplace_back(encode(featurizer, s).values, *s.label);
    } else if (cfg.method == Method::oracle_upperbound) {
        // diagnostic ceiling: true labels on raw client features, bypassing
        // the protocol entirely (nothing is uploaded)
        for (int k = 0; k < K; ++k)
            for (std::size_t i = 0; i < corpus.client_sets[k].size(); ++i)
                train_pairs.emplace_back(encode(featurizer, corpus.client_sets[k][i].data).values,
                                         corpus.client_truth[k][i]);
    }

    if (needs_finetune) {
        TrainConfig tc;
        tc.learning_rate = cfg.finetune.learning_rate;
        tc.batch_size = cfg.finetune.batch_size;
        tc.epochs = cfg.finetune.epochs;
        tc.seed = derive_seed(run_seed, stream::finetune);
        LinearHead head(M, featurizer.feature_dim());
        std::vector<double> curve;
        head = finetune(std::move(head), train_pairs, tc, &curve);
        rec.metrics = evaluate(head, featurizer, corpus.test_sets);
        rec.metrics.loss_curve = std::move(curve);
    } else {
        rec.metrics = evaluate_zeroshot(broadcast.prototypes, featurizer, corpus.test_sets);
    }

    bus.close_round();
    bus.ledger().assert_one_shot(K);
    rec.ledger = bus.ledger();
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    char id[128];
    std::snprintf(id, sizeof(id), "%s-s%llu-%08llx", rec.method.c_str(),
                  static_cast<unsigned long long>(run_seed),
                  static_cast<unsigned long long>(rec.config_hash & 0xffffffffULL));
    rec.run_id = id;
    return rec;
}

// ---- output files: metrics.csv, summary.json, ledger.json ----

inline std::string format_accuracy(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string metrics_csv(const std::vector<RunRecord>& records) {
    std::string out = "run_id,seed,method,client_id,accuracy\n";
    for (const RunRecord& r : records)
        for (std::size_t k = 0; k < r.metrics.per_client_accuracy.size(); ++k) {
            out += r.run_id;
            out += ',';
            out += std::to_string(r.seed);
            out += ',';
            out += r.method;
            out += ',';
            out += std::to_string(k);
            out += ',';
            out += format_accuracy(r.metrics.per_client_accuracy[k]);
            out += '\n';
        }
    return out;
}

inline nlohmann::json ledger_to_json(const CommLedger& ledger) {
    return nlohmann::json{{"downlink_bytes", ledger.downlink_bytes},
                          {"uplink_bytes", ledger.uplink_bytes},
                          {"round_count", ledger.round_count},
                          {"client_param_updates", ledger.client_param_updates},
                          {"broadcast_count", ledger.broadcast_count},
                          {"upload_count", ledger.upload_count}};
}

inline nlohmann::json run_to_json(const RunRecord& r, bool with_wall_time) {
    nlohmann::json j{{"run_id", r.run_id},
                     {"seed", r.seed},
                     {"method", r.method},
                     {"average_accuracy", r.metrics.average_accuracy},
                     {"per_client_accuracy", r.metrics.per_client_accuracy},
                     {"generated_samples", r.generated_count},
                     {"ledger", ledger_to_json(r.ledger)}};
    if (!r.tag.empty()) j["tag"] = r.tag;
    if (with_wall_time) j["wall_time_seconds"] = r.wall_seconds;
    return j;
}

// summary.json carries the config echo and per-run results. Wall times are
// the only non-reproducible field; metrics.csv and ledger.json stay
// byte-identical across reruns of the same config+seed.
inline nlohmann::json summary_json(const ExperimentConfig& cfg,
                                   const std::vector<RunRecord>& records) {
    nlohmann::json j;
    j["config"] = detail::config_to_json(cfg);
    j["config_hash"] = config_hash_hex(cfg);
    j["runs"] = nlohmann::json::array();
    std::map<std::string, std::pair<double, int>> groups;
    double total_wall = 0.0;
    for (const RunRecord& r : records) {
        j["runs"].push_back(run_to_json(r, true));
        std::string key = r.tag.empty() ? r.method : r.method + "[" + r.tag + "]";
        groups[key].first += r.metrics.average_accuracy;
        groups[key].second += 1;
        total_wall += r.wall_seconds;
    }
    nlohmann::json means;
    for (const auto& [key, agg] : groups) means[key] = agg.first / agg.second;
    j["mean_average_accuracy"] = means;
    j["wall_time_seconds"] = total_wall;
    return j;
}

inline nlohmann::json ledgers_json(const std::vector<RunRecord>& records) {
    nlohmann::json j = nlohmann::json::array();
    for (const RunRecord& r : records) {
        nlohmann::json e = ledger_to_json(r.ledger);
        e["run_id"] = r.run_id;
        j.push_back(e);
    }
    return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    write_file(path, bytes);
}

inline void write_run_outputs(const ExperimentConfig& cfg, const std::vector<RunRecord>& records,
                              const std::string& dir) {
    std::filesystem::create_directories(dir);
    write_text_file(dir + "/metrics.csv", metrics_csv(records));
    write_text_file(dir + "/summary.json", summary_json(cfg, records).dump(2) + "\n");
    write_text_file(dir + "/ledger.json", ledgers_json(records).dump(2) + "\n");
}

}  // namespace feddisc
