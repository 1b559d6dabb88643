#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "feddisc/classifier.hpp"
#include "feddisc/corpus.hpp"
#include "feddisc/denoiser.hpp"
#include "feddisc/errors.hpp"
#include "feddisc/io.hpp"
#include "feddisc/sampler.hpp"
#include "feddisc/schedule.hpp"

namespace feddisc {

enum class Method { feddisc, finetune_centroids, proto_zeroshot, oracle_upperbound };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::feddisc: return "feddisc";
        case Method::finetune_centroids: return "finetune_centroids";
        case Method::proto_zeroshot: return "proto_zeroshot";
        case Method::oracle_upperbound: return "oracle_upperbound";
    }
    throw ConfigError("bad method enum");
}

inline Method parse_method(const std::string& s) {
    if (s == "feddisc") return Method::feddisc;
    if (s == "finetune_centroids") return Method::finetune_centroids;
    if (s == "proto_zeroshot") return Method::proto_zeroshot;
    if (s == "oracle_upperbound") return Method::oracle_upperbound;
    throw ConfigError("unknown method '" + s +
                      "' (expected feddisc|finetune_centroids|proto_zeroshot|oracle_upperbound)");
}

struct FeaturizerConfig {
    std::uint64_t seed = 7;
    int feature_dim = 16;

    void validate() const {
        if (feature_dim < 1) throw ConfigError("featurizer.feature_dim must be >= 1");
    }
};

struct ScheduleConfig {
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    NoiseSchedule build() const { return NoiseSchedule(timesteps, beta_start, beta_end); }
};

struct ProtocolConfig {
    int centroids_per_category = 5;  // L
    int images_per_centroid = 10;    // R
    int noise_intensity = -1;        // -1: use round(0.2 * timesteps)
    double feature_weight = 2.0;
    double domain_weight = 2.0;
    int sampler_steps = 20;
    double eta = 0.0;
    int kmeans_restarts = 10;
    int kmeans_max_iters = 100;
    bool append_server_features = false;

    void validate(int timesteps) const {
        if (centroids_per_category < 1) throw ConfigError("protocol.centroids_per_category >= 1");
        if (images_per_centroid < 1) throw ConfigError("protocol.images_per_centroid >= 1");
        if (noise_intensity < -1 || noise_intensity > timesteps)
            throw ConfigError("protocol.noise_intensity must be -1 (auto) or in [0, T]");
        if (sampler_steps < 1 || sampler_steps > timesteps)
            throw ConfigError("protocol.sampler_steps must be in [1, T]");
        if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("protocol.eta must be in [0, 1]");
        if (kmeans_restarts < 1) throw ConfigError("protocol.kmeans_restarts >= 1");
        if (kmeans_max_iters < 1) throw ConfigError("protocol.kmeans_max_iters >= 1");
    }
};

struct PretrainSection {
    int epochs = 80;
    double drop_prob = 0.3;
    double learning_rate = 1e-3;
    int batch_size = 128;
    std::uint64_t seed = 11;
    std::vector<int> hidden = {128, 128};
    int time_embed_dim = 16;
    int category_embed_dim = 16;

    void validate() const {
        if (epochs < 0) throw ConfigError("pretrain.epochs must be >= 0");
        if (!(drop_prob >= 0.0 && drop_prob <= 1.0))
            throw ConfigError("pretrain.drop_prob must be in [0, 1]");
        if (!(learning_rate > 0.0)) throw ConfigError("pretrain.learning_rate must be > 0");
        if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
        if (hidden.empty()) throw ConfigError("pretrain.hidden must be nonempty");
        for (int h : hidden)
            if (h < 1) throw ConfigError("pretrain.hidden dims must be >= 1");
        if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
            throw ConfigError("pretrain.time_embed_dim must be a positive even number");
        if (category_embed_dim < 1) throw ConfigError("pretrain.category_embed_dim >= 1");
    }
};

struct FinetuneSection {
    double learning_rate = 0.01;
    int batch_size = 256;
    int epochs = 20;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("finetune.learning_rate must be > 0");
        if (batch_size < 1) throw ConfigError("finetune.batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("finetune.epochs must be >= 1");
    }
};

struct ExperimentConfig {
    CorpusConfig corpus;
    FeaturizerConfig featurizer;
    ScheduleConfig schedule;
    PretrainSection pretrain;
    ProtocolConfig protocol;
    FinetuneSection finetune;
    Method method = Method::feddisc;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string out_dir = "out";

    void validate() const {
        corpus.validate();
        featurizer.validate();
        schedule.build();  // throws on bad beta/T
        pretrain.validate();
        protocol.validate(schedule.timesteps);
        finetune.validate();
        if (seeds.empty()) throw ConfigError("seeds must be nonempty");
        if (out_dir.empty()) throw ConfigError("out_dir must be nonempty");
    }

    int resolved_noise_intensity() const {
        if (protocol.noise_intensity >= 0) return protocol.noise_intensity;
        return static_cast<int>(std::lround(0.2 * schedule.timesteps));
    }

    DenoiserConfig denoiser_config() const {
        DenoiserConfig dc;
        dc.data_dim = corpus.data_dim;
        dc.feature_dim = featurizer.feature_dim;
        dc.num_categories = corpus.num_categories;
        dc.time_embed_dim = pretrain.time_embed_dim;
        dc.category_embed_dim = pretrain.category_embed_dim;
        dc.hidden = pretrain.hidden;
        dc.init_seed = derive_seed(pretrain.seed, stream::pretrain);
        return dc;
    }
};

namespace detail {

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["corpus"] = {{"num_categories", c.corpus.num_categories},
                   {"num_clients", c.corpus.num_clients},
                   {"data_dim", c.corpus.data_dim},
                   {"samples_per_category_server", c.corpus.samples_per_category_server},
                   {"samples_per_category_client", c.corpus.samples_per_category_client},
                   {"category_separation", c.corpus.category_separation},
                   {"domain_shift", c.corpus.domain_shift},
                   {"intra_noise", c.corpus.intra_noise},
                   {"seed", c.corpus.seed}};
    j["featurizer"] = {{"seed", c.featurizer.seed}, {"feature_dim", c.featurizer.feature_dim}};
    j["schedule"] = {{"timesteps", c.schedule.timesteps},
                     {"beta_start", c.schedule.beta_start},
                     {"beta_end", c.schedule.beta_end}};
    j["pretrain"] = {{"epochs", c.pretrain.epochs},
                     {"drop_prob", c.pretrain.drop_prob},
                     {"learning_rate", c.pretrain.learning_rate},
                     {"batch_size", c.pretrain.batch_size},
                     {"seed", c.pretrain.seed},
                     {"hidden", c.pretrain.hidden},
                     {"time_embed_dim", c.pretrain.time_embed_dim},
                     {"category_embed_dim", c.pretrain.category_embed_dim}};
    j["protocol"] = {{"centroids_per_category", c.protocol.centroids_per_category},
                     {"images_per_centroid", c.protocol.images_per_centroid},
                     {"noise_intensity", c.protocol.noise_intensity},
                     {"feature_weight", c.protocol.feature_weight},
                     {"domain_weight", c.protocol.domain_weight},
                     {"sampler_steps", c.protocol.sampler_steps},
                     {"eta", c.protocol.eta},
                     {"kmeans_restarts", c.protocol.kmeans_restarts},
                     {"kmeans_max_iters", c.protocol.kmeans_max_iters},
                     {"append_server_features", c.protocol.append_server_features}};
    j["finetune"] = {{"learning_rate", c.finetune.learning_rate},
                     {"batch_size", c.finetune.batch_size},
                     {"epochs", c.finetune.epochs}};
    j["method"] = method_name(c.method);
    j["seeds"] = c.seeds;
    j["out_dir"] = c.out_dir;
    return j;
}

// Recursive overlay of `patch` onto `base`: every key in the patch must
// already exist in the defaults, so typos fail loudly at any depth.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& patch,
                         const std::string& path) {
    if (!patch.is_object()) throw ConfigError("expected an object at '" + path + "'");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        std::string here = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown key '" + here + "'");
        nlohmann::json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_strict(slot, it.value(), here);
        } else {
            if (it.value().is_object())
                throw ConfigError("'" + here + "' does not take an object");
            slot = it.value();
        }
    }
}

template <typename T>
T pick(const nlohmann::json& section, const char* key, const std::string& where) {
    try {
        return section.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad value for '" + where + "." + key + "': " + e.what());
    }
}

}  // namespace detail

inline nlohmann::json default_config_json() { return detail::config_to_json(ExperimentConfig{}); }

inline ExperimentConfig config_from_json(const nlohmann::json& merged) {
    ExperimentConfig c;
    const auto& jc = merged.at("corpus");
    c.corpus.num_categories = detail::pick<int>(jc, "num_categories", "corpus");
    c.corpus.num_clients = detail::pick<int>(jc, "num_clients", "corpus");
    c.corpus.data_dim = detail::pick<int>(jc, "data_dim", "corpus");
    c.corpus.samples_per_category_server =
        detail::pick<int>(jc, "samples_per_category_server", "corpus");
    c.corpus.samples_per_category_client =
        detail::pick<int>(jc, "samples_per_category_client", "corpus");
    c.corpus.category_separation = detail::pick<double>(jc, "category_separation", "corpus");
    c.corpus.domain_shift = detail::pick<double>(jc, "domain_shift", "corpus");
    c.corpus.intra_noise = detail::pick<double>(jc, "intra_noise", "corpus");
    c.corpus.seed = detail::pick<std::uint64_t>(jc, "seed", "corpus");

    const auto& jf = merged.at("featurizer");
    c.featurizer.seed = detail::pick<std::uint64_t>(jf, "seed", "featurizer");
    c.featurizer.feature_dim = detail::pick<int>(jf, "feature_dim", "featurizer");

    const auto& js = merged.at("schedule");
    c.schedule.timesteps = detail::pick<int>(js, "timesteps", "schedule");
    c.schedule.beta_start = detail::pick<double>(js, "beta_start", "schedule");
    c.schedule.beta_end = detail::pick<double>(js, "beta_end", "schedule");

    const auto& jp = merged.at("pretrain");
    c.pretrain.epochs = detail::pick<int>(jp, "epochs", "pretrain");
    c.pretrain.drop_prob = detail::pick<double>(jp, "drop_prob", "pretrain");
    c.pretrain.learning_rate = detail::pick<double>(jp, "learning_rate", "pretrain");
    c.pretrain.batch_size = detail::pick<int>(jp, "batch_size", "pretrain");
    c.pretrain.seed = detail::pick<std::uint64_t>(jp, "seed", "pretrain");
    c.pretrain.hidden = detail::pick<std::vector<int>>(jp, "hidden", "pretrain");
    c.pretrain.time_embed_dim = detail::pick<int>(jp, "time_embed_dim", "pretrain");
    c.pretrain.category_embed_dim = detail::pick<int>(jp, "category_embed_dim", "pretrain");

    const auto& jr = merged.at("protocol");
    c.protocol.centroids_per_category = detail::pick<int>(jr, "centroids_per_category", "protocol");
    c.protocol.images_per_centroid = detail::pick<int>(jr, "images_per_centroid", "protocol");
    c.protocol.noise_intensity = detail::pick<int>(jr, "noise_intensity", "protocol");
    c.protocol.feature_weight = detail::pick<double>(jr, "feature_weight", "protocol");
    c.protocol.domain_weight = detail::pick<double>(jr, "domain_weight", "protocol");
    c.protocol.sampler_steps = detail::pick<int>(jr, "sampler_steps", "protocol");
    c.protocol.eta = detail::pick<double>(jr, "eta", "protocol");
    c.protocol.kmeans_restarts = detail::pick<int>(jr, "kmeans_restarts", "protocol");
    c.protocol.kmeans_max_iters = detail::pick<int>(jr, "kmeans_max_iters", "protocol");
    c.protocol.append_server_features =
        detail::pick<bool>(jr, "append_server_features", "protocol");

    const auto& jt = merged.at("finetune");
    c.finetune.learning_rate = detail::pick<double>(jt, "learning_rate", "finetune");
    c.finetune.batch_size = detail::pick<int>(jt, "batch_size", "finetune");
    c.finetune.epochs = detail::pick<int>(jt, "epochs", "finetune");

    c.method = parse_method(detail::pick<std::string>(merged, "method", ""));
    c.seeds = detail::pick<std::vector<std::uint64_t>>(merged, "seeds", "");
    c.out_dir = detail::pick<std::string>(merged, "out_dir", "");
    c.validate();
    return c;
}

// Dotted-path override, e.g. "protocol.images_per_centroid=5". The path must
// name an existing leaf; the value is parsed as JSON, falling back to string.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
    std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects KEY=VALUE, got '" + assignment + "'");
    std::string path = assignment.substr(0, eq);
    std::string raw = assignment.substr(eq + 1);

    std::vector<std::string> parts;
    std::stringstream ss(path);
    std::string piece;
    while (std::getline(ss, piece, '.')) parts.push_back(piece);
    if (parts.empty()) throw ConfigError("--set: empty key in '" + assignment + "'");

    nlohmann::json* node = &doc;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
            throw ConfigError("--set: no section '" + parts[i] + "' in '" + path + "'");
        node = &(*node)[parts[i]];
    }
    const std::string& leaf = parts.back();
    if (!node->contains(leaf)) throw ConfigError("--set: unknown key '" + path + "'");
    if ((*node)[leaf].is_object()) throw ConfigError("--set: '" + path + "' is a section");

    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // unquoted strings like method names
    (*node)[leaf] = value;
}

inline nlohmann::json load_config_document(const std::string& config_path,
                                           const std::vector<std::string>& overrides) {
    nlohmann::json doc = default_config_json();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw IoError("cannot open config file " + config_path);
        nlohmann::json file = nlohmann::json::parse(in, nullptr, false);
        if (file.is_discarded()) throw ConfigError("invalid JSON in " + config_path);
        detail::merge_strict(doc, file, "");
    }
    for (const auto& a : overrides) apply_override(doc, a);
    return doc;
}

// Hash of the canonical dump (keys are stored sorted, so field order in the
// source file cannot change the hash).
inline std::uint64_t config_hash(const ExperimentConfig& c) {
    return fnv1a(detail::config_to_json(c).dump());
}

inline std::string config_hash_hex(const ExperimentConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%08llx",
                  static_cast<unsigned long long>(config_hash(c) & 0xffffffffULL));
    return std::string(buf);
}

}  // namespace feddisc
