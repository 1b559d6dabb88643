#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "feddisc/errors.hpp"
#include "feddisc/featurizer.hpp"
#include "feddisc/linalg.hpp"
#include "feddisc/parallel.hpp"
#include "feddisc/rng.hpp"

namespace feddisc {

// Linear softmax head over frozen features. Zero-initialized, so an untrained
// head predicts the uniform distribution.
struct LinearHead {
    Matrix weight;  // M x d
    Vec bias;       // M

    LinearHead() = default;
    LinearHead(int num_categories, int feature_dim)
        : weight(num_categories, feature_dim), bias(num_categories, 0.0) {}

    int num_categories() const { return static_cast<int>(weight.rows); }
    int feature_dim() const { return static_cast<int>(weight.cols); }
};

struct TrainConfig {
    double learning_rate = 0.01;
    int batch_size = 256;
    int epochs = 30;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ConfigError("learning_rate must be finite and >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
    }
};

struct Metrics {
    std::vector<double> per_client_accuracy;
    double average_accuracy = 0.0;
    std::vector<double> loss_curve;
};

struct Prediction {
    int category = 0;
    Vec probabilities;
};

inline Vec softmax(const Vec& logits) {
    double top = *std::max_element(logits.begin(), logits.end());
    Vec p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - top);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

inline Prediction predict(const LinearHead& head, const Vec& feature) {
    if (static_cast<int>(feature.size()) != head.feature_dim())
        throw DimensionMismatch("predict", head.feature_dim(), feature.size());
    Vec logits = head.weight.multiply(feature);
    for (int j = 0; j < head.num_categories(); ++j) logits[j] += head.bias[j];
    Prediction out;
    out.probabilities = softmax(logits);
    out.category = static_cast<int>(
        std::max_element(out.probabilities.begin(), out.probabilities.end()) -
        out.probabilities.begin());
    return out;
}

inline Prediction predict(const LinearHead& head, const FeatureVector& feature) {
    return predict(head, feature.values);
}

namespace detail {

// Mean cross-entropy over one batch plus its gradient; returns the loss.
// grad_w and grad_b must be pre-sized and zeroed.
inline double batch_loss_grad(const LinearHead& head,
                              const std::vector<std::pair<Vec, int>>& samples,
                              const std::vector<int>& index, std::size_t begin, std::size_t end,
                              Matrix& grad_w, Vec& grad_b) {
    const double inv = 1.0 / static_cast<double>(end - begin);
    double loss = 0.0;
    for (std::size_t s = begin; s < end; ++s) {
        const auto& [x, label] = samples[index[s]];
        Vec logits = head.weight.multiply(x);
        for (int j = 0; j < head.num_categories(); ++j) logits[j] += head.bias[j];
        Vec p = softmax(logits);
        loss -= std::log(std::max(p[label], 1e-300)) * inv;
        for (int j = 0; j < head.num_categories(); ++j) {
            double delta = (p[j] - (j == label ? 1.0 : 0.0)) * inv;
            grad_b[j] += delta;
            double* row = &grad_w.a[static_cast<std::size_t>(j) * grad_w.cols];
            for (std::size_t c = 0; c < grad_w.cols; ++c) row[c] += delta * x[c];
        }
    }
    return loss;
}

}  // namespace detail

// Mini-batch SGD on mean cross-entropy. Deterministic given cfg.seed; the
// final batch of an epoch may be short.
inline LinearHead finetune(LinearHead head, const std::vector<std::pair<Vec, int>>& samples,
                           const TrainConfig& cfg, std::vector<double>* loss_curve = nullptr) {
    cfg.validate();
    if (samples.empty()) throw Error("finetune: empty training set");
    for (const auto& [x, label] : samples) {
        if (static_cast<int>(x.size()) != head.feature_dim())
            throw DimensionMismatch("finetune", head.feature_dim(), x.size());
        if (label < 0 || label >= head.num_categories())
            throw Error("finetune: label out of range: " + std::to_string(label));
    }

    const std::size_t n = samples.size();
    std::vector<int> index(n);
    std::iota(index.begin(), index.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, stream::finetune));

    Matrix grad_w(head.num_categories(), head.feature_dim());
    Vec grad_b(head.num_categories(), 0.0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i)
            std::swap(index[i - 1], index[shuffle_rng.below(i)]);
        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            std::size_t end = std::min(n, begin + cfg.batch_size);
            std::fill(grad_w.a.begin(), grad_w.a.end(), 0.0);
            std::fill(grad_b.begin(), grad_b.end(), 0.0);
            double loss = detail::batch_loss_grad(head, samples, index, begin, end, grad_w, grad_b);
            if (!std::isfinite(loss)) throw DivergedTraining("finetune", epoch);
            epoch_loss += loss * static_cast<double>(end - begin);
            for (std::size_t i = 0; i < grad_w.a.size(); ++i)
                head.weight.a[i] -= cfg.learning_rate * grad_w.a[i];
            for (int j = 0; j < head.num_categories(); ++j)
                head.bias[j] -= cfg.learning_rate * grad_b[j];
            note_mutation();
        }
        if (loss_curve) loss_curve->push_back(epoch_loss / static_cast<double>(n));
    }
    return head;
}

// Per-client top-1 accuracy on encoded test samples, averaged uniformly.
inline Metrics evaluate(const LinearHead& head, const Featurizer& featurizer,
                        const std::vector<std::vector<Sample>>& test_views) {
    Metrics m;
    m.per_client_accuracy.resize(test_views.size(), 0.0);
    for (std::size_t k = 0; k < test_views.size(); ++k) {
        const auto& view = test_views[k];
        if (view.empty()) throw EmptyClientError(static_cast<int>(k));
        std::vector<int> hits(view.size(), 0);
        parallel_for(view.size(), [&](std::size_t i) {
            const Sample& s = view[i];
            if (!s.label) throw Error("evaluate: unlabeled test sample");
            FeatureVector f = encode(featurizer, s);
            hits[i] = predict(head, f).category == *s.label ? 1 : 0;
        });
        long correct = std::accumulate(hits.begin(), hits.end(), 0L);
        m.per_client_accuracy[k] = static_cast<double>(correct) / static_cast<double>(view.size());
    }
    m.average_accuracy =
        std::accumulate(m.per_client_accuracy.begin(), m.per_client_accuracy.end(), 0.0) /
        static_cast<double>(m.per_client_accuracy.size());
    return m;
}

}  // namespace feddisc
