#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "feddisc/errors.hpp"
#include "feddisc/io.hpp"
#include "feddisc/linalg.hpp"
#include "feddisc/rng.hpp"

namespace feddisc {

// Synthetic multi-domain corpus: one labeled server domain plus K unlabeled
// client domains drawn from data = mean(category) + offset(domain) + sigma * eta.

struct CorpusConfig {
    int num_categories = 10;
    int num_clients = 5;
    int data_dim = 32;
    int samples_per_category_server = 80;
    int samples_per_category_client = 50;
    double category_separation = 1.0;
    double domain_shift = 0.6;
    double intra_noise = 1.4;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_categories < 2) throw ConfigError("num_categories must be >= 2");
        if (num_clients < 1) throw ConfigError("num_clients must be >= 1");
        if (data_dim < 2) throw ConfigError("data_dim must be >= 2");
        if (samples_per_category_server < 1) throw ConfigError("samples_per_category_server must be >= 1");
        if (samples_per_category_client < 1) throw ConfigError("samples_per_category_client must be >= 1");
        if (!std::isfinite(category_separation) || category_separation <= 0.0)
            throw ConfigError("category_separation must be positive and finite");
        if (!std::isfinite(domain_shift) || domain_shift < 0.0)
            throw ConfigError("domain_shift must be non-negative and finite");
        if (!std::isfinite(intra_noise) || intra_noise <= 0.0)
            throw ConfigError("intra_noise must be positive and finite");
    }
};

struct Sample {
    Vec data;
    int domain_id = 0;  // 0 = server domain, 1..K = clients
    std::optional<int> label;
};

struct Corpus {
    CorpusConfig config;
    std::vector<Sample> server_set;
    std::vector<std::vector<Sample>> client_sets;  // unlabeled
    std::vector<std::vector<Sample>> test_sets;    // labeled per-client holdouts
    std::vector<Sample> pretrain_set;              // labeled, spans all domains
    // ground truth of client samples, diagnostic only (oracle baseline); the
    // protocol path never reads it
    std::vector<std::vector<int>> client_truth;
    // generative parameters, kept for verification
    std::vector<Vec> category_means;
    std::vector<Vec> domain_offsets;
};

namespace detail {

// round through f32 so in-memory corpora match their serialized form exactly
inline double to_wire_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

inline Sample draw_sample(const CorpusConfig& cfg, const std::vector<Vec>& means,
                          const std::vector<Vec>& offsets, int category, int domain,
                          bool labeled, Rng& rng) {
    Sample s;
    s.domain_id = domain;
    if (labeled) s.label = category;
    s.data.resize(cfg.data_dim);
    for (int i = 0; i < cfg.data_dim; ++i) {
        double v = means[category][i] + offsets[domain][i] + cfg.intra_noise * rng.normal();
        s.data[i] = to_wire_precision(v);
    }
    return s;
}

}  // namespace detail

inline Corpus build_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    const int M = cfg.num_categories;
    const int K = cfg.num_clients;
    const int p = cfg.data_dim;

    Corpus corpus;
    corpus.config = cfg;

    Rng mean_rng(derive_seed(cfg.seed, stream::category_means));
    corpus.category_means.resize(M);
    for (int j = 0; j < M; ++j) {
        corpus.category_means[j].resize(p);
        for (int i = 0; i < p; ++i)
            corpus.category_means[j][i] =
                detail::to_wire_precision(cfg.category_separation * mean_rng.normal());
    }

    Rng offset_rng(derive_seed(cfg.seed, stream::domain_offsets));
    corpus.domain_offsets.resize(K + 1);
    for (int dom = 0; dom <= K; ++dom) {
        corpus.domain_offsets[dom].resize(p);
        for (int i = 0; i < p; ++i)
            corpus.domain_offsets[dom][i] =
                detail::to_wire_precision(cfg.domain_shift * offset_rng.normal());
    }

    // server set: labeled, domain 0
    {
        Rng rng(derive_seed(cfg.seed, stream::samples, 0));
        for (int j = 0; j < M; ++j)
            for (int i = 0; i < cfg.samples_per_category_server; ++i)
                corpus.server_set.push_back(detail::draw_sample(
                    cfg, corpus.category_means, corpus.domain_offsets, j, 0, true, rng));
    }

    // client sets: unlabeled, domains 1..K; truth kept aside for diagnostics
    corpus.client_sets.resize(K);
    corpus.client_truth.resize(K);
    for (int k = 0; k < K; ++k) {
        Rng rng(derive_seed(cfg.seed, stream::samples, 1 + k));
        for (int j = 0; j < M; ++j)
            for (int i = 0; i < cfg.samples_per_category_client; ++i) {
                corpus.client_sets[k].push_back(detail::draw_sample(
                    cfg, corpus.category_means, corpus.domain_offsets, j, k + 1, false, rng));
                corpus.client_truth[k].push_back(j);
            }
    }

    // per-client labeled holdouts, same domain distribution as the client
    corpus.test_sets.resize(K);
    for (int k = 0; k < K; ++k) {
        Rng rng(derive_seed(cfg.seed, stream::samples, 1 + K + k));
        for (int j = 0; j < M; ++j)
            for (int i = 0; i < cfg.samples_per_category_client; ++i)
                corpus.test_sets[k].push_back(detail::draw_sample(
                    cfg, corpus.category_means, corpus.domain_offsets, j, k + 1, true, rng));
    }

    // pretraining corpus spans all K+1 domains
    {
        Rng rng(derive_seed(cfg.seed, stream::samples, 1 + 2 * static_cast<std::uint64_t>(K)));
        for (int dom = 0; dom <= K; ++dom)
            for (int j = 0; j < M; ++j)
                for (int i = 0; i < cfg.samples_per_category_server; ++i)
                    corpus.pretrain_set.push_back(detail::draw_sample(
                        cfg, corpus.category_means, corpus.domain_offsets, j, dom, true, rng));
    }

    return corpus;
}

// Views handed to the protocol. Client views carry raw data only; the label
// field does not exist on them.
struct ClientView {
    int client_id = 0;
    std::vector<Vec> data;
};

struct PartitionedCorpus {
    const std::vector<Sample>* server_view;
    std::vector<ClientView> client_views;
    std::vector<const std::vector<Sample>*> test_views;
};

inline PartitionedCorpus partition(const Corpus& corpus) {
    PartitionedCorpus out;
    out.server_view = &corpus.server_set;
    out.client_views.reserve(corpus.client_sets.size());
    for (std::size_t k = 0; k < corpus.client_sets.size(); ++k) {
        ClientView view;
        view.client_id = static_cast<int>(k);
        view.data.reserve(corpus.client_sets[k].size());
        for (const Sample& s : corpus.client_sets[k]) view.data.push_back(s.data);
        out.client_views.push_back(std::move(view));
    }
    for (const auto& t : corpus.test_sets) out.test_views.push_back(&t);
    return out;
}

// ---- corpus file (versioned, little-endian f32 body) ----

inline constexpr std::uint32_t kCorpusMagic = 0x43444446;  // "FDDC"
inline constexpr std::uint16_t kCorpusSchemaVersion = 1;

namespace detail {

inline void write_sample_set(ByteWriter& w, const std::vector<Sample>& set) {
    w.u32(static_cast<std::uint32_t>(set.size()));
    for (const Sample& s : set) {
        w.u16(static_cast<std::uint16_t>(s.domain_id));
        w.u8(s.label.has_value() ? 1 : 0);
        w.u16(static_cast<std::uint16_t>(s.label.value_or(0)));
        w.f32_array(s.data);
    }
}

inline std::vector<Sample> read_sample_set(ByteReader& r, int data_dim) {
    std::uint32_t n = r.u32();
    std::vector<Sample> set(n);
    for (auto& s : set) {
        s.domain_id = r.u16();
        bool has_label = r.u8() != 0;
        int label = r.u16();
        if (has_label) s.label = label;
        s.data = r.f32_array(static_cast<std::size_t>(data_dim));
    }
    return set;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_corpus(const Corpus& corpus) {
    const CorpusConfig& cfg = corpus.config;
    ByteWriter w;
    w.u32(kCorpusMagic);
    w.u16(kCorpusSchemaVersion);
    w.u16(static_cast<std::uint16_t>(cfg.num_categories));
    w.u16(static_cast<std::uint16_t>(cfg.num_clients));
    w.u16(static_cast<std::uint16_t>(cfg.data_dim));
    w.u32(static_cast<std::uint32_t>(cfg.samples_per_category_server));
    w.u32(static_cast<std::uint32_t>(cfg.samples_per_category_client));
    w.f64(cfg.category_separation);
    w.f64(cfg.domain_shift);
    w.f64(cfg.intra_noise);
    w.u64(cfg.seed);
    for (const auto& m : corpus.category_means) w.f32_array(m);
    for (const auto& o : corpus.domain_offsets) w.f32_array(o);
    detail::write_sample_set(w, corpus.server_set);
    for (const auto& set : corpus.client_sets) detail::write_sample_set(w, set);
    for (const auto& set : corpus.test_sets) detail::write_sample_set(w, set);
    detail::write_sample_set(w, corpus.pretrain_set);
    for (const auto& truth : corpus.client_truth) {
        w.u32(static_cast<std::uint32_t>(truth.size()));
        for (int label : truth) w.u16(static_cast<std::uint16_t>(label));
    }
    return w.bytes();
}

inline Corpus deserialize_corpus(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    if (r.u32() != kCorpusMagic) throw IoError("not a corpus file");
    if (r.u16() != kCorpusSchemaVersion) throw IoError("unsupported corpus schema version");
    Corpus corpus;
    CorpusConfig& cfg = corpus.config;
    cfg.num_categories = r.u16();
    cfg.num_clients = r.u16();
    cfg.data_dim = r.u16();
    cfg.samples_per_category_server = static_cast<int>(r.u32());
    cfg.samples_per_category_client = static_cast<int>(r.u32());
    cfg.category_separation = r.f64();
    cfg.domain_shift = r.f64();
    cfg.intra_noise = r.f64();
    cfg.seed = r.u64();
    cfg.validate();
    corpus.category_means.resize(cfg.num_categories);
    for (auto& m : corpus.category_means) m = r.f32_array(cfg.data_dim);
    corpus.domain_offsets.resize(cfg.num_clients + 1);
    for (auto& o : corpus.domain_offsets) o = r.f32_array(cfg.data_dim);
    corpus.server_set = detail::read_sample_set(r, cfg.data_dim);
    corpus.client_sets.resize(cfg.num_clients);
    for (auto& set : corpus.client_sets) set = detail::read_sample_set(r, cfg.data_dim);
    corpus.test_sets.resize(cfg.num_clients);
    for (auto& set : corpus.test_sets) set = detail::read_sample_set(r, cfg.data_dim);
    corpus.pretrain_set = detail::read_sample_set(r, cfg.data_dim);
    corpus.client_truth.resize(cfg.num_clients);
    for (auto& truth : corpus.client_truth) {
        std::uint32_t n = r.u32();
        truth.resize(n);
        for (auto& label : truth) label = r.u16();
    }
    if (!r.done()) throw IoError("trailing bytes in corpus file");
    return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
    write_file(path, serialize_corpus(corpus));
}

inline Corpus load_corpus(const std::string& path) { return deserialize_corpus(read_file(path)); }

}  // namespace feddisc
