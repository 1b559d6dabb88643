#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "feddisc/corpus.hpp"
#include "feddisc/errors.hpp"
#include "feddisc/io.hpp"
#include "feddisc/linalg.hpp"
#include "feddisc/rng.hpp"

namespace feddisc {

// Frozen encoder: a fixed random linear map with unit-norm rows. It is never
// updated after construction; server and clients share one instance.
class Featurizer {
public:
    Featurizer(std::uint64_t seed, int feature_dim, int input_dim)
        : seed_(seed), weight_(feature_dim, input_dim) {
        Rng rng(derive_seed(seed, stream::featurizer));
        for (std::size_t r = 0; r < weight_.rows; ++r) {
            Vec row(input_dim);
            for (auto& v : row) v = rng.normal();
            double n = norm(row);
            for (std::size_t c = 0; c < weight_.cols; ++c)
                weight_.at(r, c) = detail::to_wire_precision(row[c] / n);
        }
    }

    int feature_dim() const { return static_cast<int>(weight_.rows); }
    int input_dim() const { return static_cast<int>(weight_.cols); }
    std::uint64_t seed() const { return seed_; }
    const Matrix& weight() const { return weight_; }

    std::uint64_t checksum() const {
        ByteWriter w;
        w.u64(seed_);
        w.u16(static_cast<std::uint16_t>(weight_.rows));
        w.u16(static_cast<std::uint16_t>(weight_.cols));
        w.f32_array(weight_.a);
        return fnv1a(w.bytes());
    }

private:
    friend Featurizer deserialize_featurizer(const std::vector<std::uint8_t>&);
    Featurizer() = default;
    std::uint64_t seed_ = 0;
    Matrix weight_;
};

struct FeatureVector {
    Vec values;
    std::optional<int> origin_domain;
};

struct Prototype {
    int category = 0;
    Vec values;
    std::size_t support_count = 0;
};

struct PseudoLabel {
    int category = 0;
    double score = 0.0;
    Vec all_scores;
};

inline FeatureVector encode(const Featurizer& featurizer, const Sample& sample) {
    if (static_cast<int>(sample.data.size()) != featurizer.input_dim())
        throw DimensionMismatch("encode", featurizer.input_dim(), sample.data.size());
    return FeatureVector{featurizer.weight().multiply(sample.data), sample.domain_id};
}

inline FeatureVector encode(const Featurizer& featurizer, const Vec& data) {
    if (static_cast<int>(data.size()) != featurizer.input_dim())
        throw DimensionMismatch("encode", featurizer.input_dim(), data.size());
    return FeatureVector{featurizer.weight().multiply(data), std::nullopt};
}

// Per-category mean of labeled features.
inline std::vector<Prototype> extract_prototypes(
    const std::vector<std::pair<FeatureVector, int>>& features, int num_categories) {
    if (features.empty()) throw EmptyCategoryError(0);
    std::size_t dim = features.front().first.values.size();
    std::vector<MeanAccumulator> acc(num_categories, MeanAccumulator(dim));
    for (const auto& [feature, label] : features) {
        if (label < 0 || label >= num_categories)
            throw Error("extract_prototypes: label " + std::to_string(label) + " out of range");
        acc[label].add(feature.values);
    }
    std::vector<Prototype> prototypes(num_categories);
    for (int j = 0; j < num_categories; ++j) {
        if (acc[j].count() == 0) throw EmptyCategoryError(j);
        prototypes[j] = Prototype{j, acc[j].mean(), acc[j].count()};
    }
    return prototypes;
}

inline double cosine_similarity(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw DimensionMismatch("cosine_similarity", a.size(), b.size());
    double na = norm(a);
    double nb = norm(b);
    if (na < 1e-12 || nb < 1e-12) throw ZeroVectorError("cosine_similarity");
    return dot(a, b) / (na * nb);
}

inline double cosine_similarity(const FeatureVector& a, const Vec& b) {
    return cosine_similarity(a.values, b);
}

// Argmax of cosine similarity against all prototypes; ties break to the
// smallest category index.
inline PseudoLabel pseudo_label(const FeatureVector& feature,
                                const std::vector<Prototype>& prototypes) {
    PseudoLabel out;
    out.all_scores.resize(prototypes.size());
    for (std::size_t j = 0; j < prototypes.size(); ++j)
        out.all_scores[j] = cosine_similarity(feature.values, prototypes[j].values);
    out.category = 0;
    out.score = out.all_scores[0];
    for (std::size_t j = 1; j < out.all_scores.size(); ++j) {
        if (out.all_scores[j] > out.score) {
            out.score = out.all_scores[j];
            out.category = static_cast<int>(j);
        }
    }
    return out;
}

// ---- featurizer file (same binary conventions as the corpus file) ----

inline constexpr std::uint32_t kFeaturizerMagic = 0x5A464446;  // "FDFZ"
inline constexpr std::uint16_t kFeaturizerSchemaVersion = 1;

inline std::vector<std::uint8_t> serialize_featurizer(const Featurizer& f) {
    ByteWriter w;
    w.u32(kFeaturizerMagic);
    w.u16(kFeaturizerSchemaVersion);
    w.u64(f.seed());
    w.u16(static_cast<std::uint16_t>(f.feature_dim()));
    w.u16(static_cast<std::uint16_t>(f.input_dim()));
    w.f32_array(f.weight().a);
    return w.bytes();
}

inline Featurizer deserialize_featurizer(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    if (r.u32() != kFeaturizerMagic) throw IoError("not a featurizer file");
    if (r.u16() != kFeaturizerSchemaVersion) throw IoError("unsupported featurizer schema version");
    Featurizer f;
    f.seed_ = r.u64();
    std::size_t rows = r.u16();
    std::size_t cols = r.u16();
    f.weight_ = Matrix(rows, cols);
    f.weight_.a = r.f32_array(rows * cols);
    if (!r.done()) throw IoError("trailing bytes in featurizer file");
    return f;
}

inline void save_featurizer(const Featurizer& f, const std::string& path) {
    write_file(path, serialize_featurizer(f));
}

inline Featurizer load_featurizer(const std::string& path) {
    return deserialize_featurizer(read_file(path));
}

}  // namespace feddisc
