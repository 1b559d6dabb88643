// Experiment runner: corpus generation, denoiser pre-training, the one-shot
// federated round, baselines, sweeps, and ablations. All outputs are
// machine-readable (metrics.csv, summary.json, ledger.json) and reproducible
// from config + seed.

#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "feddisc/feddisc.hpp"

namespace {

namespace fs = std::filesystem;
using namespace feddisc;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string method;
    std::vector<std::string> overrides;
    std::vector<std::uint64_t> seeds;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--out", args.out_dir, "output directory (overrides config out_dir)");
    cmd->add_option("--method", args.method, "method (overrides config)");
    cmd->add_option("--set", args.overrides, "dotted-path override KEY=VALUE")
        ->type_name("KEY=VALUE");
    cmd->add_option("--seed", args.seeds, "run seed, repeatable (overrides config seeds)");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
    nlohmann::json doc = load_config_document(args.config_path, args.overrides);
    if (!args.method.empty()) doc["method"] = args.method;
    if (!args.seeds.empty()) doc["seeds"] = args.seeds;
    if (!args.out_dir.empty()) doc["out_dir"] = args.out_dir;
    return config_from_json(doc);
}

std::string corpus_path(const ExperimentConfig& cfg) { return cfg.out_dir + "/corpus.bin"; }
std::string featurizer_path(const ExperimentConfig& cfg) { return cfg.out_dir + "/featurizer.bin"; }
std::string checkpoint_path(const ExperimentConfig& cfg) { return cfg.out_dir + "/denoiser.ckpt"; }

// The corpus and featurizer are pure functions of the config; loading a file
// written by `corpus` and rebuilding inline give bit-identical objects, so
// commands may do either.
ExperimentAssets obtain_assets(const ExperimentConfig& cfg) {
    cfg.validate();
    Corpus corpus = fs::exists(corpus_path(cfg)) ? load_corpus(corpus_path(cfg))
                                                 : build_corpus(cfg.corpus);
    Featurizer featurizer =
        fs::exists(featurizer_path(cfg))
            ? load_featurizer(featurizer_path(cfg))
            : Featurizer(cfg.featurizer.seed, cfg.featurizer.feature_dim, cfg.corpus.data_dim);
    if (corpus.config.num_categories != cfg.corpus.num_categories ||
        corpus.config.data_dim != cfg.corpus.data_dim ||
        corpus.config.num_clients != cfg.corpus.num_clients ||
        corpus.config.seed != cfg.corpus.seed)
        throw ConfigError("corpus file at " + corpus_path(cfg) + " does not match the config");
    if (featurizer.input_dim() != cfg.corpus.data_dim ||
        featurizer.feature_dim() != cfg.featurizer.feature_dim)
        throw ConfigError("featurizer file at " + featurizer_path(cfg) +
                          " does not match the config");
    return ExperimentAssets{std::move(corpus), std::move(featurizer), cfg.schedule.build()};
}

int cmd_corpus(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    fs::create_directories(cfg.out_dir);
    Corpus corpus = build_corpus(cfg.corpus);
    save_corpus(corpus, corpus_path(cfg));
    Featurizer featurizer(cfg.featurizer.seed, cfg.featurizer.feature_dim, cfg.corpus.data_dim);
    save_featurizer(featurizer, featurizer_path(cfg));
    std::printf("corpus: %zu server, %d x %zu client, %zu pretrain samples -> %s\n",
                corpus.server_set.size(), cfg.corpus.num_clients,
                corpus.client_sets.empty() ? 0 : corpus.client_sets.front().size(),
                corpus.pretrain_set.size(), corpus_path(cfg).c_str());
    return 0;
}

int cmd_pretrain(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    fs::create_directories(cfg.out_dir);
    ExperimentAssets assets = obtain_assets(cfg);
    if (!fs::exists(corpus_path(cfg))) save_corpus(assets.corpus, corpus_path(cfg));
    if (!fs::exists(featurizer_path(cfg))) save_featurizer(assets.featurizer, featurizer_path(cfg));

    PretrainConfig pc;
    pc.epochs = cfg.pretrain.epochs;
    pc.drop_prob = cfg.pretrain.drop_prob;
    pc.learning_rate = cfg.pretrain.learning_rate;
    pc.batch_size = cfg.pretrain.batch_size;
    pc.seed = cfg.pretrain.seed;

    auto t0 = std::chrono::steady_clock::now();
    PretrainResult result = pretrain_denoiser(assets.corpus.pretrain_set, assets.featurizer,
                                              assets.schedule, cfg.denoiser_config(), pc);
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_denoiser(result.denoiser, assets.schedule, pc.drop_prob, pc.seed, checkpoint_path(cfg));

    nlohmann::json j;
    j["epochs"] = cfg.pretrain.epochs;
    j["epoch_losses"] = result.epoch_losses;
    if (!result.epoch_losses.empty()) {
        j["first_epoch_loss"] = result.epoch_losses.front();
        j["last_epoch_loss"] = result.epoch_losses.back();
    }
    j["checkpoint"] = checkpoint_path(cfg);
    write_text_file(cfg.out_dir + "/pretrain.json", j.dump(2) + "\n");

    if (result.epoch_losses.empty())
        std::printf("pretrain: 0 epochs, checkpoint is the initialization\n");
    else
        std::printf("pretrain: first epoch loss %.6f, last epoch loss %.6f (%d epochs, %.1fs)\n",
                    result.epoch_losses.front(), result.epoch_losses.back(), cfg.pretrain.epochs,
                    wall);
    return 0;
}

Denoiser load_checkpoint_checked(const ExperimentConfig& cfg) {
    if (!fs::exists(checkpoint_path(cfg)))
        throw IoError("missing denoiser checkpoint " + checkpoint_path(cfg) +
                      " (run the pretrain command first)");
    NoiseSchedule stored = NoiseSchedule::linear_default();
    Denoiser model = deserialize_denoiser(read_file(checkpoint_path(cfg)), &stored);
    if (stored.timesteps() != cfg.schedule.timesteps ||
        stored.beta_start() != cfg.schedule.beta_start ||
        stored.beta_end() != cfg.schedule.beta_end)
        throw ConfigError("checkpoint schedule differs from the config schedule");
    const DenoiserConfig want = cfg.denoiser_config();
    const DenoiserConfig& got = model.config();
    if (got.data_dim != want.data_dim || got.feature_dim != want.feature_dim ||
        got.num_categories != want.num_categories)
        throw ConfigError("checkpoint architecture differs from the config");
    return model;
}

int run_records(const ExperimentConfig& cfg, const std::vector<RunRecord>& records) {
    write_run_outputs(cfg, records, cfg.out_dir);
    for (const RunRecord& r : records)
        std::printf("%-42s seed=%llu avg_acc=%.4f up=%llu B down=%llu B gen=%zu\n",
                    r.run_id.c_str(), static_cast<unsigned long long>(r.seed),
                    r.metrics.average_accuracy,
                    static_cast<unsigned long long>(r.ledger.uplink_bytes),
                    static_cast<unsigned long long>(r.ledger.downlink_bytes), r.generated_count);
    std::printf("wrote %s/metrics.csv\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_run(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    ExperimentAssets assets = obtain_assets(cfg);
    Denoiser* denoiser_ptr = nullptr;
    std::optional<Denoiser> denoiser;
    if (cfg.method == Method::feddisc) {
        denoiser.emplace(load_checkpoint_checked(cfg));
        denoiser_ptr = &*denoiser;
    }
    std::vector<RunRecord> records;
    for (std::uint64_t seed : cfg.seeds)
        records.push_back(run_single(cfg, assets, denoiser_ptr, seed));
    return run_records(cfg, records);
}

int cmd_sweep(const CommonArgs& args, const std::string& axis, std::vector<int> values) {
    if (values.empty()) throw ConfigError("sweep: --values must be nonempty");
    if (axis != "L" && axis != "R") throw ConfigError("sweep: --axis must be L or R");
    ExperimentConfig base = resolve_config(args);
    ExperimentAssets assets = obtain_assets(base);
    std::optional<Denoiser> denoiser;
    Denoiser* denoiser_ptr = nullptr;
    if (base.method == Method::feddisc) {
        denoiser.emplace(load_checkpoint_checked(base));
        denoiser_ptr = &*denoiser;
    }

    std::vector<RunRecord> all;
    for (int v : values) {
        ExperimentConfig cfg = base;
        if (axis == "L")
            cfg.protocol.centroids_per_category = v;
        else
            cfg.protocol.images_per_centroid = v;
        cfg.validate();
        for (std::uint64_t seed : cfg.seeds) {
            RunRecord rec = run_single(cfg, assets, denoiser_ptr, seed);
            rec.tag = axis + "=" + std::to_string(v);
            rec.run_id = rec.run_id + "-" + axis + std::to_string(v);
            write_run_outputs(cfg, {rec}, cfg.out_dir + "/runs/" + rec.run_id);
            all.push_back(std::move(rec));
        }
    }
    return run_records(base, all);
}

int cmd_ablate(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    if (cfg.method != Method::feddisc)
        throw ConfigError("ablate requires method feddisc");
    ExperimentAssets assets = obtain_assets(cfg);
    Denoiser denoiser = load_checkpoint_checked(cfg);

    std::vector<RunRecord> all;
    for (Variant v : {Variant::full, Variant::no_domain, Variant::no_centroid})
        for (std::uint64_t seed : cfg.seeds) {
            RunRecord rec = run_single(cfg, assets, &denoiser, seed, v);
            write_run_outputs(cfg, {rec}, cfg.out_dir + "/runs/" + rec.run_id);
            all.push_back(std::move(rec));
        }
    return run_records(cfg, all);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"one-shot federated learning with diffusion-generated training data"};
    app.require_subcommand(1);

    CommonArgs corpus_args, pretrain_args, run_args, sweep_args, ablate_args;
    std::string sweep_axis;
    std::vector<int> sweep_values;

    add_common(app.add_subcommand("corpus", "generate the synthetic corpus and featurizer"),
               corpus_args);
    add_common(app.add_subcommand("pretrain", "pre-train the conditional denoiser"),
               pretrain_args);
    add_common(app.add_subcommand("run", "run one method over the configured seeds"), run_args);
    CLI::App* sweep = app.add_subcommand("sweep", "sweep L or R over a list of values");
    add_common(sweep, sweep_args);
    sweep->add_option("--axis", sweep_axis, "L or R")->required();
    sweep->add_option("--values", sweep_values, "axis values")->required();
    add_common(app.add_subcommand("ablate", "full pipeline plus single-condition knockouts"),
               ablate_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("corpus")) return cmd_corpus(corpus_args);
        if (app.got_subcommand("pretrain")) return cmd_pretrain(pretrain_args);
        if (app.got_subcommand("run")) return cmd_run(run_args);
        if (app.got_subcommand("sweep")) return cmd_sweep(sweep_args, sweep_axis, sweep_values);
        if (app.got_subcommand("ablate")) return cmd_ablate(ablate_args);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
