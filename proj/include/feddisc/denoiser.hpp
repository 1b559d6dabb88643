#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "feddisc/corpus.hpp"
#include "feddisc/errors.hpp"
#include "feddisc/featurizer.hpp"
#include "feddisc/io.hpp"
#include "feddisc/linalg.hpp"
#include "feddisc/parallel.hpp"
#include "feddisc/rng.hpp"
#include "feddisc/schedule.hpp"

namespace feddisc {

// Small conditional MLP standing in for the pre-trained generator. Input is
// the concatenation of the state, a sinusoidal timestep embedding, a learned
// category embedding, and a feature-condition slot that holds either a real
// feature vector or the learned null token.
struct DenoiserConfig {
    int data_dim = 32;
    int feature_dim = 16;
    int num_categories = 10;
    int time_embed_dim = 16;
    int category_embed_dim = 16;
    std::vector<int> hidden = {128, 128};
    std::uint64_t init_seed = 0;

    int input_dim() const { return data_dim + time_embed_dim + category_embed_dim + feature_dim; }

    void validate() const {
        if (data_dim < 1 || feature_dim < 1 || num_categories < 1)
            throw ConfigError("denoiser dimensions must be positive");
        if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
            throw ConfigError("time_embed_dim must be even and >= 2");
        if (category_embed_dim < 1) throw ConfigError("category_embed_dim must be positive");
        if (hidden.empty()) throw ConfigError("denoiser needs at least one hidden layer");
        for (int h : hidden)
            if (h < 1) throw ConfigError("hidden sizes must be positive");
    }
};

inline Vec time_embedding(int t, int dim) {
    Vec emb(dim);
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        emb[2 * i] = std::sin(t * freq);
        emb[2 * i + 1] = std::cos(t * freq);
    }
    return emb;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline double silu_grad(double x) {
    double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

class Denoiser {
public:
    explicit Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        Rng rng(derive_seed(cfg.init_seed, stream::pretrain));
        std::vector<int> dims;
        dims.push_back(cfg.input_dim());
        for (int h : cfg.hidden) dims.push_back(h);
        dims.push_back(cfg.data_dim);
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            Matrix w(dims[l + 1], dims[l]);
            bool last = l + 2 == dims.size();
            if (!last) {
                double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
                for (auto& v : w.a) v = (2.0 * rng.uniform() - 1.0) * bound;
            }
            // final layer stays zero so a fresh model predicts zero noise
            weights_.push_back(std::move(w));
            biases_.emplace_back(dims[l + 1], 0.0);
        }
        cat_embed_ = Matrix(cfg.num_categories, cfg.category_embed_dim);
        for (auto& v : cat_embed_.a) v = 0.1 * rng.normal();
        null_token_.assign(cfg.feature_dim, 0.0);
        for (auto& v : null_token_) v = 0.1 * rng.normal();
    }

    const DenoiserConfig& config() const { return cfg_; }

    // Deterministic forward pass; feature == nullptr selects the null token.
    Vec predict(const Vec& x_t, int t, int category, const Vec* feature) const {
        if (static_cast<int>(x_t.size()) != cfg_.data_dim)
            throw DimensionMismatch("Denoiser::predict state", cfg_.data_dim, x_t.size());
        if (category < 0 || category >= cfg_.num_categories)
            throw Error("Denoiser::predict: category out of range");
        const Vec& cond = feature ? *feature : null_token_;
        if (static_cast<int>(cond.size()) != cfg_.feature_dim)
            throw DimensionMismatch("Denoiser::predict feature", cfg_.feature_dim, cond.size());

        Vec act = assemble_input(x_t, t, category, cond);
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            Vec z = weights_[l].multiply(act);
            for (std::size_t i = 0; i < z.size(); ++i) z[i] += biases_[l][i];
            if (l + 1 < weights_.size())
                for (auto& v : z) v = silu(v);
            act = std::move(z);
        }
        return act;
    }

    std::size_t parameter_count() const {
        std::size_t n = cat_embed_.a.size() + null_token_.size();
        for (std::size_t l = 0; l < weights_.size(); ++l)
            n += weights_[l].a.size() + biases_[l].size();
        return n;
    }

    // flattened view used by the trainer, checkpoints, and tests
    std::vector<const Vec*> parameter_blocks() const {
        std::vector<const Vec*> blocks;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            blocks.push_back(&weights_[l].a);
            blocks.push_back(&biases_[l]);
        }
        blocks.push_back(&cat_embed_.a);
        blocks.push_back(&null_token_);
        return blocks;
    }

private:
    friend class DenoiserTrainer;
    friend std::vector<std::uint8_t> serialize_denoiser(const Denoiser&, const NoiseSchedule&,
                                                        double, std::uint64_t);
    friend Denoiser deserialize_denoiser(const std::vector<std::uint8_t>&, NoiseSchedule*, double*,
                                         std::uint64_t*);

    Vec assemble_input(const Vec& x_t, int t, int category, const Vec& cond) const {
        Vec input;
        input.reserve(cfg_.input_dim());
        input.insert(input.end(), x_t.begin(), x_t.end());
        Vec temb = time_embedding(t, cfg_.time_embed_dim);
        input.insert(input.end(), temb.begin(), temb.end());
        const double* row = cat_embed_.a.data() + static_cast<std::size_t>(category) * cfg_.category_embed_dim;
        input.insert(input.end(), row, row + cfg_.category_embed_dim);
        input.insert(input.end(), cond.begin(), cond.end());
        return input;
    }

    DenoiserConfig cfg_;
    std::vector<Matrix> weights_;
    std::vector<Vec> biases_;
    Matrix cat_embed_;
    Vec null_token_;
};

struct PretrainConfig {
    int epochs = 60;
    double drop_prob = 0.2;
    double learning_rate = 1e-3;
    int batch_size = 128;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 0) throw ConfigError("pretrain epochs must be >= 0");
        if (drop_prob < 0.0 || drop_prob > 1.0) throw ConfigError("drop_prob must be in [0,1]");
        if (!(learning_rate > 0.0)) throw ConfigError("pretrain learning_rate must be positive");
        if (batch_size < 1) throw ConfigError("pretrain batch_size must be >= 1");
    }
};

// Adam over the denoiser parameters. Gradients for a batch are accumulated
// over fixed-size chunks that are reduced in chunk order, so results do not
// depend on the number of worker threads.
class DenoiserTrainer {
public:
    DenoiserTrainer(Denoiser& model, double learning_rate)
        : model_(model), lr_(learning_rate) {
        grads_.resize(block_count());
        m_.resize(block_count());
        v_.resize(block_count());
        auto blocks = model_.parameter_blocks();
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            grads_[i].assign(blocks[i]->size(), 0.0);
            m_[i].assign(blocks[i]->size(), 0.0);
            v_[i].assign(blocks[i]->size(), 0.0);
        }
    }

    struct Example {
        const Vec* x0;
        const Vec* feature;
        int category;
    };

    // One optimizer step over a batch; returns the mean per-coordinate loss.
    // Per-example randomness is keyed by the example's global draw index so
    // batching and threading cannot change it.
    double step(const std::vector<Example>& batch, const NoiseSchedule& schedule,
                double drop_prob, std::uint64_t seed, std::uint64_t first_draw_index) {
        constexpr std::size_t kChunk = 32;
        std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
        std::vector<std::vector<Vec>> chunk_grads(chunks);
        std::vector<double> chunk_loss(chunks, 0.0);

        parallel_for(chunks, [&](std::size_t c) {
            std::vector<Vec> local(block_count());
            auto blocks = model_.parameter_blocks();
            for (std::size_t i = 0; i < local.size(); ++i) local[i].assign(blocks[i]->size(), 0.0);
            double loss = 0.0;
            std::size_t begin = c * kChunk;
            std::size_t end = std::min(batch.size(), begin + kChunk);
            for (std::size_t i = begin; i < end; ++i) {
                Rng rng(derive_seed(seed, stream::pretrain, first_draw_index + i));
                loss += backward_one(batch[i], schedule, drop_prob, rng, local);
            }
            chunk_grads[c] = std::move(local);
            chunk_loss[c] = loss;
        });

        double total_loss = 0.0;
        for (std::size_t i = 0; i < grads_.size(); ++i)
            std::fill(grads_[i].begin(), grads_[i].end(), 0.0);
        for (std::size_t c = 0; c < chunks; ++c) {
            total_loss += chunk_loss[c];
            for (std::size_t i = 0; i < grads_.size(); ++i)
                for (std::size_t k = 0; k < grads_[i].size(); ++k)
                    grads_[i][k] += chunk_grads[c][i][k];
        }
        double inv = 1.0 / static_cast<double>(batch.size());
        for (auto& g : grads_)
            for (auto& x : g) x *= inv;

        apply_adam();
        return total_loss * inv;
    }

private:
    std::size_t block_count() const { return model_.weights_.size() * 2 + 2; }

    std::vector<Vec*> mutable_blocks() {
        std::vector<Vec*> blocks;
        for (std::size_t l = 0; l < model_.weights_.size(); ++l) {
            blocks.push_back(&model_.weights_[l].a);
            blocks.push_back(&model_.biases_[l]);
        }
        blocks.push_back(&model_.cat_embed_.a);
        blocks.push_back(&model_.null_token_);
        return blocks;
    }

    // forward + backward for one example, accumulating into `local`
    double backward_one(const Example& ex, const NoiseSchedule& schedule, double drop_prob,
                        Rng& rng, std::vector<Vec>& local) {
        const DenoiserConfig& cfg = model_.cfg_;
        int t = static_cast<int>(rng.below(schedule.timesteps())) + 1;
        bool drop = rng.uniform() < drop_prob;
        Vec eps(cfg.data_dim);
        for (auto& e : eps) e = rng.normal();
        Vec x_t = forward_diffuse(*ex.x0, t, schedule, eps);
        const Vec& cond = drop ? model_.null_token_ : *ex.feature;

        // forward, keeping pre-activations
        Vec input = model_.assemble_input(x_t, t, ex.category, cond);
        std::size_t layers = model_.weights_.size();
        std::vector<Vec> acts(layers + 1);
        std::vector<Vec> pre(layers);
        acts[0] = std::move(input);
        for (std::size_t l = 0; l < layers; ++l) {
            Vec z = model_.weights_[l].multiply(acts[l]);
            for (std::size_t i = 0; i < z.size(); ++i) z[i] += model_.biases_[l][i];
            pre[l] = z;
            if (l + 1 < layers)
                for (auto& x : z) x = silu(x);
            acts[l + 1] = std::move(z);
        }

        const Vec& out = acts[layers];
        double loss = 0.0;
        Vec delta(out.size());
        double inv_p = 1.0 / static_cast<double>(cfg.data_dim);
        for (std::size_t i = 0; i < out.size(); ++i) {
            double diff = out[i] - eps[i];
            loss += diff * diff;
            delta[i] = 2.0 * diff * inv_p;
        }
        loss *= inv_p;

        // backward
        for (std::size_t l = layers; l-- > 0;) {
            Vec& gw = local[2 * l];
            Vec& gb = local[2 * l + 1];
            const Vec& a_in = acts[l];
            const Matrix& w = model_.weights_[l];
            for (std::size_t r = 0; r < w.rows; ++r) {
                double dr = delta[r];
                gb[r] += dr;
                double* gw_row = gw.data() + r * w.cols;
                for (std::size_t cidx = 0; cidx < w.cols; ++cidx) gw_row[cidx] += dr * a_in[cidx];
            }
            Vec next(w.cols, 0.0);
            w.multiply_transpose_into(delta, next);
            if (l == 0) {
                // input gradient carries the embedding-slot gradients
                std::size_t cat_off = static_cast<std::size_t>(cfg.data_dim) + cfg.time_embed_dim;
                Vec& gcat = local[2 * layers];
                std::size_t row = static_cast<std::size_t>(ex.category) * cfg.category_embed_dim;
                for (int i = 0; i < cfg.category_embed_dim; ++i) gcat[row + i] += next[cat_off + i];
                if (drop) {
                    Vec& gnull = local[2 * layers + 1];
                    std::size_t feat_off = cat_off + cfg.category_embed_dim;
                    for (int i = 0; i < cfg.feature_dim; ++i) gnull[i] += next[feat_off + i];
                }
                break;
            }
            for (std::size_t i = 0; i < next.size(); ++i) next[i] *= silu_grad(pre[l - 1][i]);
            delta = std::move(next);
        }
        return loss;
    }

    void apply_adam() {
        ++step_count_;
        double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
        double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
        auto blocks = mutable_blocks();
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            Vec& p = *blocks[i];
            for (std::size_t k = 0; k < p.size(); ++k) {
                double g = grads_[i][k];
                m_[i][k] = b1 * m_[i][k] + (1.0 - b1) * g;
                v_[i][k] = b2 * v_[i][k] + (1.0 - b2) * g * g;
                double mh = m_[i][k] / bc1;
                double vh = v_[i][k] / bc2;
                p[k] -= lr_ * mh / (std::sqrt(vh) + eps);
            }
        }
        note_mutation();
    }

    Denoiser& model_;
    double lr_;
    long step_count_ = 0;
    std::vector<Vec> grads_;
    std::vector<Vec> m_;
    std::vector<Vec> v_;
};

struct PretrainResult {
    Denoiser denoiser;
    std::vector<double> epoch_losses;
};

// Standard eps-prediction pre-training on the labeled pretrain corpus. The
// category condition is always supplied; the feature condition is the
// sample's own encoding, replaced by the null token with probability
// drop_prob so the guidance formula can query a feature-free prediction.
inline PretrainResult pretrain_denoiser(const std::vector<Sample>& pretrain_set,
                                        const Featurizer& featurizer,
                                        const NoiseSchedule& schedule, const DenoiserConfig& arch,
                                        const PretrainConfig& cfg) {
    cfg.validate();
    if (pretrain_set.empty()) throw Error("pretrain_denoiser: empty pretrain set");
    for (const Sample& s : pretrain_set)
        if (!s.label) throw Error("pretrain_denoiser: pretrain set must be labeled");

    PretrainResult result{Denoiser(arch), {}};
    if (cfg.epochs == 0) return result;

    // encoder is frozen; cache features once
    std::vector<Vec> features(pretrain_set.size());
    parallel_for(pretrain_set.size(), [&](std::size_t i) {
        features[i] = encode(featurizer, pretrain_set[i]).values;
    });

    DenoiserTrainer trainer(result.denoiser, cfg.learning_rate);
    const std::size_t n = pretrain_set.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::uint64_t draw_index = 0;
    long step_index = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, stream::pretrain, 1000000 + epoch));
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double epoch_loss = 0.0;
        std::size_t pos = 0;
        while (pos < n) {
            std::size_t take = std::min<std::size_t>(cfg.batch_size, n - pos);
            std::vector<DenoiserTrainer::Example> batch;
            batch.reserve(take);
            for (std::size_t i = 0; i < take; ++i) {
                std::size_t idx = order[pos + i];
                batch.push_back({&pretrain_set[idx].data, &features[idx],
                                 *pretrain_set[idx].label});
            }
            double loss = trainer.step(batch, schedule, cfg.drop_prob, cfg.seed, draw_index);
            if (!std::isfinite(loss)) throw DivergedTraining("pretrain_denoiser", step_index);
            epoch_loss += loss * static_cast<double>(take);
            draw_index += take;
            pos += take;
            ++step_index;
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
    }
    return result;
}

inline Vec predict_eps(const Denoiser& denoiser, const Vec& x_t, int t, int category,
                       const Vec* feature_or_null) {
    return denoiser.predict(x_t, t, category, feature_or_null);
}

// ---- checkpoint file ----

inline constexpr std::uint32_t kCheckpointMagic = 0x4B434446;  // "FDCK"
inline constexpr std::uint16_t kCheckpointSchemaVersion = 1;

inline std::vector<std::uint8_t> serialize_denoiser(const Denoiser& model,
                                                    const NoiseSchedule& schedule,
                                                    double drop_prob, std::uint64_t train_seed) {
    const DenoiserConfig& cfg = model.cfg_;
    ByteWriter w;
    w.u32(kCheckpointMagic);
    w.u16(kCheckpointSchemaVersion);
    w.u32(static_cast<std::uint32_t>(schedule.timesteps()));
    w.f64(schedule.beta_start());
    w.f64(schedule.beta_end());
    w.u16(static_cast<std::uint16_t>(cfg.data_dim));
    w.u16(static_cast<std::uint16_t>(cfg.feature_dim));
    w.u16(static_cast<std::uint16_t>(cfg.num_categories));
    w.u16(static_cast<std::uint16_t>(cfg.time_embed_dim));
    w.u16(static_cast<std::uint16_t>(cfg.category_embed_dim));
    w.u16(static_cast<std::uint16_t>(cfg.hidden.size()));
    for (int h : cfg.hidden) w.u16(static_cast<std::uint16_t>(h));
    w.f64(drop_prob);
    w.u64(train_seed);
    w.u64(cfg.init_seed);
    for (const Vec* block : model.parameter_blocks()) w.f32_array(*block);
    return w.bytes();
}

// Restores the model; optionally returns the schedule and training metadata
// recorded in the header.
inline Denoiser deserialize_denoiser(const std::vector<std::uint8_t>& bytes,
                                     NoiseSchedule* schedule_out = nullptr,
                                     double* drop_prob_out = nullptr,
                                     std::uint64_t* train_seed_out = nullptr) {
    ByteReader r(bytes);
    if (r.u32() != kCheckpointMagic) throw IoError("not a denoiser checkpoint");
    if (r.u16() != kCheckpointSchemaVersion) throw IoError("unsupported checkpoint schema version");
    int timesteps = static_cast<int>(r.u32());
    double beta_start = r.f64();
    double beta_end = r.f64();
    DenoiserConfig cfg;
    cfg.data_dim = r.u16();
    cfg.feature_dim = r.u16();
    cfg.num_categories = r.u16();
    cfg.time_embed_dim = r.u16();
    cfg.category_embed_dim = r.u16();
    cfg.hidden.resize(r.u16());
    for (auto& h : cfg.hidden) h = r.u16();
    double drop_prob = r.f64();
    std::uint64_t train_seed = r.u64();
    cfg.init_seed = r.u64();

    Denoiser model(cfg);
    for (std::size_t l = 0; l < model.weights_.size(); ++l) {
        model.weights_[l].a = r.f32_array(model.weights_[l].a.size());
        model.biases_[l] = r.f32_array(model.biases_[l].size());
    }
    model.cat_embed_.a = r.f32_array(model.cat_embed_.a.size());
    model.null_token_ = r.f32_array(model.null_token_.size());
    if (!r.done()) throw IoError("trailing bytes in checkpoint");
    if (schedule_out) *schedule_out = NoiseSchedule(timesteps, beta_start, beta_end);
    if (drop_prob_out) *drop_prob_out = drop_prob;
    if (train_seed_out) *train_seed_out = train_seed;
    return model;
}

inline void save_denoiser(const Denoiser& model, const NoiseSchedule& schedule, double drop_prob,
                          std::uint64_t train_seed, const std::string& path) {
    write_file(path, serialize_denoiser(model, schedule, drop_prob, train_seed));
}

}  // namespace feddisc
