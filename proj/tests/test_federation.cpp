#include <gtest/gtest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "feddisc/experiment.hpp"
#include "oracles.hpp"

using namespace feddisc;

namespace {

ClientUpload synthetic_upload(int client_id, int m, int l, int d, const std::vector<int>& cats,
                              std::uint64_t seed) {
    Rng rng(seed);
    ClientUpload u;
    u.client_id = client_id;
    u.num_categories = m;
    u.centroid_limit = l;
    u.feature_dim = d;
    for (int c : cats) {
        CategoryUpload cat;
        cat.category = c;
        for (int i = 0; i < l; ++i) {
            Vec v(d);
            for (auto& x : v) x = rng.normal();
            cat.centroids.push_back(std::move(v));
        }
        cat.domain_vector.resize(d);
        for (auto& x : cat.domain_vector) x = rng.normal();
        cat.sample_count = 17;
        u.categories.push_back(std::move(cat));
    }
    u.byte_size = serialize_upload(u).size();
    return u;
}

// Small but complete experiment: 3 clients, 4 categories, tiny denoiser.
ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.corpus.num_categories = 4;
    cfg.corpus.num_clients = 3;
    cfg.corpus.data_dim = 8;
    cfg.corpus.samples_per_category_server = 12;
    cfg.corpus.samples_per_category_client = 8;
    cfg.corpus.category_separation = 1.2;
    cfg.corpus.domain_shift = 0.6;
    cfg.corpus.intra_noise = 0.3;
    cfg.corpus.seed = 33;
    cfg.featurizer.seed = 7;
    cfg.featurizer.feature_dim = 6;
    cfg.schedule.timesteps = 60;
    cfg.schedule.beta_start = 1e-3;
    cfg.schedule.beta_end = 0.05;
    cfg.pretrain.epochs = 2;
    cfg.pretrain.batch_size = 32;
    cfg.pretrain.hidden = {32};
    cfg.pretrain.time_embed_dim = 8;
    cfg.pretrain.category_embed_dim = 8;
    cfg.pretrain.seed = 11;
    cfg.protocol.centroids_per_category = 2;
    cfg.protocol.images_per_centroid = 3;
    cfg.protocol.sampler_steps = 5;
    cfg.protocol.kmeans_restarts = 3;
    cfg.protocol.kmeans_max_iters = 50;
    cfg.finetune.learning_rate = 0.05;
    cfg.finetune.batch_size = 64;
    cfg.finetune.epochs = 5;
    cfg.method = Method::feddisc;
    return cfg;
}

struct FedFixture {
    ExperimentConfig cfg;
    ExperimentAssets assets;
    Denoiser denoiser;
};

const FedFixture& fed_fixture() {
    static FedFixture* f = [] {
        ExperimentConfig cfg = small_config();
        ExperimentAssets assets = make_assets(cfg);
        PretrainConfig pc;
        pc.epochs = cfg.pretrain.epochs;
        pc.drop_prob = cfg.pretrain.drop_prob;
        pc.learning_rate = cfg.pretrain.learning_rate;
        pc.batch_size = cfg.pretrain.batch_size;
        pc.seed = cfg.pretrain.seed;
        PretrainResult r = pretrain_denoiser(assets.corpus.pretrain_set, assets.featurizer,
                                             assets.schedule, cfg.denoiser_config(), pc);
        return new FedFixture{std::move(cfg), std::move(assets), std::move(r.denoiser)};
    }();
    return *f;
}

// Replays the client phase exactly as run_single performs it.
std::vector<ClientUpload> rebuild_uploads(const FedFixture& f, const ServerBroadcast& broadcast,
                                          std::uint64_t run_seed,
                                          UploadMode mode = UploadMode::kmeans_centroids) {
    NoiseMechConfig mech;
    mech.intensity = f.cfg.resolved_noise_intensity();
    mech.schedule_ref = f.assets.schedule.id();
    mech.seed = run_seed;
    std::vector<ClientUpload> uploads;
    for (const ClientView& view : partition(f.assets.corpus).client_views)
        uploads.push_back(build_upload(view.client_id, view, broadcast,
                                       f.cfg.protocol.centroids_per_category, mech,
                                       f.assets.schedule, run_seed, mode,
                                       f.cfg.protocol.kmeans_restarts,
                                       f.cfg.protocol.kmeans_max_iters));
    return uploads;
}

}  // namespace

// ---------------------------------------------------------------- accounting

TEST(Account, MatchesWireSizeFormulas) {
    std::vector<int> all_cats(10);
    for (int i = 0; i < 10; ++i) all_cats[i] = i;
    ClientUpload u = synthetic_upload(0, 10, 5, 16, all_cats, 1);
    // header 10 bytes, then per category 2+2+4 bookkeeping plus (L+1) vectors of d f32
    EXPECT_EQ(account(u), 10u + 10u * (8u + 6u * 16u * 4u));
    EXPECT_EQ(account(u), 3930u);

    ClientUpload empty = synthetic_upload(1, 10, 5, 16, {}, 2);
    EXPECT_EQ(account(empty), 10u);

    Featurizer f(7, 16, 8);
    std::vector<Prototype> protos(10);
    for (int j = 0; j < 10; ++j) {
        protos[j].category = j;
        protos[j].values.assign(16, 0.25 * j);
    }
    ServerBroadcast b = make_broadcast(f, protos);
    EXPECT_EQ(account(b), 14u + 10u * (2u + 16u * 4u));
    EXPECT_EQ(account(b), 674u);
    EXPECT_EQ(b.byte_size, account(b));
}

// ---------------------------------------------------------------- message bus

TEST(MessageBus, EnforcesSingleBroadcast) {
    Featurizer f(3, 4, 6);
    std::vector<Prototype> protos(2);
    protos[0].category = 0;
    protos[0].values.assign(4, 0.0);
    protos[1].category = 1;
    protos[1].values.assign(4, 1.0);
    ServerBroadcast b = make_broadcast(f, protos);

    MessageBus bus(2);
    bus.post_broadcast(b);
    EXPECT_THROW(bus.post_broadcast(b), ProtocolViolation);
    EXPECT_EQ(bus.ledger().broadcast_count, 1);
    EXPECT_EQ(bus.ledger().downlink_bytes, account(b));
}

TEST(MessageBus, RejectsUploadBeforeBroadcast) {
    MessageBus bus(2);
    ClientUpload u = synthetic_upload(0, 4, 2, 4, {0, 2}, 5);
    EXPECT_THROW(bus.post_upload(u), ProtocolViolation);
}

TEST(MessageBus, RejectsDuplicateAndUnknownClients) {
    Featurizer f(3, 4, 6);
    std::vector<Prototype> protos(1);
    protos[0].values.assign(4, 0.0);
    MessageBus bus(3);
    bus.post_broadcast(make_broadcast(f, protos));

    bus.post_upload(synthetic_upload(1, 4, 2, 4, {0}, 6));
    EXPECT_THROW(bus.post_upload(synthetic_upload(1, 4, 2, 4, {0}, 7)), ProtocolViolation);
    EXPECT_THROW(bus.post_upload(synthetic_upload(3, 4, 2, 4, {0}, 8)), ProtocolViolation);
    EXPECT_THROW(bus.post_upload(synthetic_upload(-1, 4, 2, 4, {0}, 9)), ProtocolViolation);
    EXPECT_EQ(bus.ledger().upload_count, 1);
}

TEST(MessageBus, MetersExactBytesAndRoundTripsUploads) {
    Featurizer f(3, 4, 6);
    std::vector<Prototype> protos(2);
    protos[0].category = 0;
    protos[0].values.assign(4, 0.5);
    protos[1].category = 1;
    protos[1].values.assign(4, -0.5);
    ServerBroadcast b = make_broadcast(f, protos);

    MessageBus bus(2);
    bus.post_broadcast(b);
    ClientUpload u0 = synthetic_upload(0, 4, 2, 4, {0, 1, 3}, 10);
    ClientUpload u1 = synthetic_upload(1, 4, 2, 4, {2}, 11);
    ClientUpload r0 = bus.post_upload(u0);
    ClientUpload r1 = bus.post_upload(u1);
    bus.close_round();

    EXPECT_EQ(bus.ledger().uplink_bytes, serialize_upload(u0).size() + serialize_upload(u1).size());
    EXPECT_EQ(bus.ledger().upload_count, 2);
    EXPECT_EQ(bus.ledger().round_count, 1);
    // the server-side copy is exactly what went over the wire
    EXPECT_EQ(serialize_upload(r0), serialize_upload(u0));
    EXPECT_EQ(serialize_upload(r1), serialize_upload(u1));
    EXPECT_EQ(r0.byte_size, serialize_upload(u0).size());

    EXPECT_NO_THROW(bus.ledger().assert_one_shot(2));
}

TEST(MessageBus, OneShotAssertionCatchesEveryViolation) {
    CommLedger good;
    good.round_count = 1;
    good.broadcast_count = 1;
    good.upload_count = 3;
    EXPECT_NO_THROW(good.assert_one_shot(3));

    CommLedger l = good;
    l.round_count = 0;
    EXPECT_THROW(l.assert_one_shot(3), ProtocolViolation);
    l = good;
    l.round_count = 2;
    EXPECT_THROW(l.assert_one_shot(3), ProtocolViolation);
    l = good;
    l.client_param_updates = 1;
    EXPECT_THROW(l.assert_one_shot(3), ProtocolViolation);
    l = good;
    l.broadcast_count = 2;
    EXPECT_THROW(l.assert_one_shot(3), ProtocolViolation);
    l = good;
    l.upload_count = 4;
    EXPECT_THROW(l.assert_one_shot(3), ProtocolViolation);
}

// -------------------------------------------------------------- generation plan

TEST(Plan, OneEntryPerUploadedCentroidWithValidDomainPools) {
    std::vector<ClientUpload> uploads = {synthetic_upload(0, 4, 2, 4, {0, 1}, 20),
                                         synthetic_upload(1, 4, 2, 4, {1, 2}, 21)};
    const int r = 4;
    GenerationPlan plan = plan_generation(uploads, r, 99);
    EXPECT_EQ(plan.samples_per_entry, r);
    ASSERT_EQ(plan.entries.size(), 8u);  // 2 clients x 2 categories x 2 centroids
    EXPECT_EQ(plan.total_samples(), 32u);

    for (const PlanEntry& e : plan.entries) {
        EXPECT_GE(e.centroid_index, 0);
        EXPECT_LT(e.centroid_index, 2);
        ASSERT_EQ(e.domain_clients.size(), static_cast<std::size_t>(r));
        for (int c : e.domain_clients) {
            // only clients that actually uploaded this category may be drawn
            if (e.category == 0) EXPECT_EQ(c, 0);
            if (e.category == 2) EXPECT_EQ(c, 1);
            if (e.category == 1) EXPECT_TRUE(c == 0 || c == 1);
        }
    }
}

TEST(Plan, SingleClientAlwaysDrawsItself) {
    std::vector<ClientUpload> uploads = {synthetic_upload(0, 4, 3, 4, {0, 1, 2, 3}, 30)};
    GenerationPlan plan = plan_generation(uploads, 5, 7);
    ASSERT_EQ(plan.entries.size(), 12u);
    for (const PlanEntry& e : plan.entries)
        for (int c : e.domain_clients) EXPECT_EQ(c, 0);
}

TEST(Plan, DomainReferencesAbsentWhenDisabled) {
    std::vector<ClientUpload> uploads = {synthetic_upload(0, 4, 2, 4, {0, 1}, 40),
                                         synthetic_upload(1, 4, 2, 4, {0}, 41)};
    GenerationPlan plan = plan_generation(uploads, 6, 7, false);
    EXPECT_EQ(plan.entries.size(), 6u);
    EXPECT_EQ(plan.total_samples(), 36u);
    for (const PlanEntry& e : plan.entries) EXPECT_TRUE(e.domain_clients.empty());
}

TEST(Plan, DomainDrawsAreUniformOverHolders) {
    std::vector<ClientUpload> uploads = {synthetic_upload(0, 2, 1, 3, {0}, 50),
                                         synthetic_upload(1, 2, 1, 3, {0}, 51)};
    GenerationPlan plan = plan_generation(uploads, 5000, 123);
    ASSERT_EQ(plan.entries.size(), 2u);
    long zeros = 0, total = 0;
    for (const PlanEntry& e : plan.entries)
        for (int c : e.domain_clients) {
            zeros += c == 0 ? 1 : 0;
            ++total;
        }
    ASSERT_EQ(total, 10000);
    double frac = static_cast<double>(zeros) / static_cast<double>(total);
    // 4 standard errors around 1/2 at n = 10000 is +-0.02
    EXPECT_GT(frac, 0.47);
    EXPECT_LT(frac, 0.53);
}

TEST(Plan, DeterministicGivenSeed) {
    std::vector<ClientUpload> uploads = {synthetic_upload(0, 4, 2, 4, {0, 1}, 60),
                                         synthetic_upload(1, 4, 2, 4, {0, 1}, 61)};
    GenerationPlan a = plan_generation(uploads, 7, 5);
    GenerationPlan b = plan_generation(uploads, 7, 5);
    ASSERT_EQ(a.entries.size(), b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i)
        EXPECT_EQ(a.entries[i].domain_clients, b.entries[i].domain_clients);

    GenerationPlan c = plan_generation(uploads, 7, 6);
    bool different = false;
    for (std::size_t i = 0; i < a.entries.size(); ++i)
        different |= a.entries[i].domain_clients != c.entries[i].domain_clients;
    EXPECT_TRUE(different);
}

TEST(Plan, RejectsBadInputs) {
    EXPECT_THROW(plan_generation({}, 5, 1), Error);
    std::vector<ClientUpload> uploads = {synthetic_upload(0, 4, 2, 4, {0}, 70)};
    EXPECT_THROW(plan_generation(uploads, 0, 1), ConfigError);
}

// ----------------------------------------------------------- full experiments

TEST(RunSingle, FeddiscLedgerMatchesRecomputedTraffic) {
    const FedFixture& f = fed_fixture();
    const std::uint64_t run_seed = 1;
    RunRecord rec = run_single(f.cfg, f.assets, &f.denoiser, run_seed);

    ServerBroadcast broadcast =
        make_broadcast(f.assets.featurizer, server_prototypes(f.assets.corpus, f.assets.featurizer));
    std::vector<ClientUpload> uploads = rebuild_uploads(f, broadcast, run_seed);

    std::uint64_t uplink = 0;
    std::size_t centroid_total = 0;
    for (const ClientUpload& u : uploads) {
        uplink += serialize_upload(u).size();
        for (const CategoryUpload& cat : u.categories) centroid_total += cat.centroids.size();
    }

    EXPECT_EQ(rec.ledger.downlink_bytes, account(broadcast));
    EXPECT_EQ(rec.ledger.uplink_bytes, uplink);
    EXPECT_EQ(rec.ledger.round_count, 1);
    EXPECT_EQ(rec.ledger.broadcast_count, 1);
    EXPECT_EQ(rec.ledger.upload_count, 3);
    EXPECT_EQ(rec.ledger.client_param_updates, 0u);
    EXPECT_EQ(rec.generated_count,
              centroid_total * static_cast<std::size_t>(f.cfg.protocol.images_per_centroid));

    EXPECT_EQ(rec.method, "feddisc");
    ASSERT_EQ(rec.metrics.per_client_accuracy.size(), 3u);
    for (double a : rec.metrics.per_client_accuracy) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
    }
    EXPECT_EQ(rec.metrics.loss_curve.size(), 5u);
}

TEST(RunSingle, ZeroshotSendsNothingUpstream) {
    const FedFixture& f = fed_fixture();
    ExperimentConfig cfg = f.cfg;
    cfg.method = Method::proto_zeroshot;
    RunRecord rec = run_single(cfg, f.assets, nullptr, 2);

    ServerBroadcast broadcast =
        make_broadcast(f.assets.featurizer, server_prototypes(f.assets.corpus, f.assets.featurizer));
    EXPECT_EQ(rec.ledger.uplink_bytes, 0u);
    EXPECT_EQ(rec.ledger.upload_count, 0);
    EXPECT_EQ(rec.ledger.downlink_bytes, account(broadcast));
    EXPECT_EQ(rec.ledger.round_count, 1);
    EXPECT_EQ(rec.generated_count, 0u);
    EXPECT_TRUE(rec.metrics.loss_curve.empty());
    EXPECT_EQ(rec.method, "proto_zeroshot");
}

TEST(RunSingle, FinetuneCentroidsUsesSameUplinkWithoutGeneration) {
    const FedFixture& f = fed_fixture();
    RunRecord feddisc_rec = run_single(f.cfg, f.assets, &f.denoiser, 3);

    ExperimentConfig cfg = f.cfg;
    cfg.method = Method::finetune_centroids;
    RunRecord rec = run_single(cfg, f.assets, nullptr, 3);

    EXPECT_EQ(rec.ledger.uplink_bytes, feddisc_rec.ledger.uplink_bytes);
    EXPECT_EQ(rec.ledger.upload_count, 3);
    EXPECT_EQ(rec.generated_count, 0u);
    EXPECT_EQ(rec.ledger.client_param_updates, 0u);
    EXPECT_EQ(rec.method, "finetune_centroids");
}

TEST(RunSingle, OracleUpperboundBypassesTheProtocol) {
    const FedFixture& f = fed_fixture();
    ExperimentConfig cfg = f.cfg;
    cfg.method = Method::oracle_upperbound;
    RunRecord rec = run_single(cfg, f.assets, nullptr, 4);
    EXPECT_EQ(rec.ledger.uplink_bytes, 0u);
    EXPECT_EQ(rec.ledger.upload_count, 0);
    EXPECT_EQ(rec.ledger.round_count, 1);
    EXPECT_EQ(rec.generated_count, 0u);
    EXPECT_EQ(rec.method, "oracle_upperbound");
}

TEST(RunSingle, AblationVariantsRenameTheMethod) {
    const FedFixture& f = fed_fixture();
    RunRecord no_domain = run_single(f.cfg, f.assets, &f.denoiser, 5, Variant::no_domain);
    EXPECT_EQ(no_domain.method, "feddisc_no_domain");
    EXPECT_GT(no_domain.generated_count, 0u);

    RunRecord no_centroid = run_single(f.cfg, f.assets, &f.denoiser, 5, Variant::no_centroid);
    EXPECT_EQ(no_centroid.method, "feddisc_no_centroid");
    EXPECT_GT(no_centroid.generated_count, 0u);

    ExperimentConfig cfg = f.cfg;
    cfg.method = Method::proto_zeroshot;
    EXPECT_THROW(run_single(cfg, f.assets, nullptr, 5, Variant::no_domain), ConfigError);
}

TEST(RunSingle, FeddiscRequiresADenoiser) {
    const FedFixture& f = fed_fixture();
    EXPECT_THROW(run_single(f.cfg, f.assets, nullptr, 1), Error);
}

TEST(RunSingle, DeterministicPerSeed) {
    const FedFixture& f = fed_fixture();
    RunRecord a = run_single(f.cfg, f.assets, &f.denoiser, 8);
    RunRecord b = run_single(f.cfg, f.assets, &f.denoiser, 8);
    EXPECT_EQ(a.run_id, b.run_id);
    EXPECT_EQ(a.metrics.per_client_accuracy, b.metrics.per_client_accuracy);
    EXPECT_EQ(a.metrics.average_accuracy, b.metrics.average_accuracy);
    EXPECT_EQ(a.ledger.uplink_bytes, b.ledger.uplink_bytes);
    EXPECT_EQ(a.generated_count, b.generated_count);

    RunRecord c = run_single(f.cfg, f.assets, &f.denoiser, 9);
    EXPECT_NE(a.run_id, c.run_id);
}

TEST(Generation, SamplesCarryTheirProvenance) {
    const FedFixture& f = fed_fixture();
    ServerBroadcast broadcast =
        make_broadcast(f.assets.featurizer, server_prototypes(f.assets.corpus, f.assets.featurizer));
    std::vector<ClientUpload> uploads = rebuild_uploads(f, broadcast, 12);

    const int r = 2;
    GenerationPlan plan = plan_generation(uploads, r, 12);
    GuidanceWeights weights;
    SamplerConfig sampler_cfg;
    sampler_cfg.num_steps = 4;
    std::vector<GeneratedSample> generated =
        generate_from_plan(plan, uploads, f.denoiser, f.assets.schedule, weights, sampler_cfg, 12);

    ASSERT_EQ(generated.size(), plan.total_samples());
    for (std::size_t e = 0; e < plan.entries.size(); ++e) {
        const PlanEntry& pe = plan.entries[e];
        for (int i = 0; i < r; ++i) {
            const GeneratedSample& g = generated[e * r + i];
            EXPECT_EQ(g.pseudo_label, pe.category);
            EXPECT_EQ(g.source_category, pe.category);
            EXPECT_EQ(g.source_client, uploads[pe.client_index].client_id);
            EXPECT_EQ(g.centroid_index, pe.centroid_index);
            ASSERT_EQ(g.domain_feature_clients.size(), 1u);
            EXPECT_EQ(g.domain_feature_clients[0], uploads[pe.domain_clients[i]].client_id);
            EXPECT_EQ(g.data.size(), static_cast<std::size_t>(f.cfg.corpus.data_dim));
        }
    }
}

// ------------------------------------------------------------------- outputs

TEST(Outputs, MetricsCsvHasExactShape) {
    RunRecord r;
    r.run_id = "feddisc-s1-00000000";
    r.seed = 1;
    r.method = "feddisc";
    r.metrics.per_client_accuracy = {0.5, 0.25};

    std::string csv = metrics_csv({r});
    EXPECT_EQ(csv,
              "run_id,seed,method,client_id,accuracy\n"
              "feddisc-s1-00000000,1,feddisc,0,0.5\n"
              "feddisc-s1-00000000,1,feddisc,1,0.25\n");
}

TEST(Outputs, SummaryAndLedgerFilesAreWellFormed) {
    const FedFixture& f = fed_fixture();
    ExperimentConfig cfg = f.cfg;
    cfg.method = Method::proto_zeroshot;
    std::vector<RunRecord> records = {run_single(cfg, f.assets, nullptr, 1),
                                      run_single(cfg, f.assets, nullptr, 2)};

    auto dir = std::filesystem::temp_directory_path() / "feddisc_test_outputs";
    std::filesystem::remove_all(dir);
    write_run_outputs(cfg, records, dir.string());

    std::ifstream sf(dir / "summary.json");
    ASSERT_TRUE(sf.good());
    nlohmann::json summary = nlohmann::json::parse(sf);
    EXPECT_EQ(summary.at("runs").size(), 2u);
    EXPECT_EQ(summary.at("config_hash").get<std::string>(), config_hash_hex(cfg));
    EXPECT_TRUE(summary.at("mean_average_accuracy").contains("proto_zeroshot"));
    EXPECT_TRUE(summary.contains("wall_time_seconds"));
    // the echoed config is a complete, loadable document
    ExperimentConfig echoed = config_from_json(summary.at("config"));
    EXPECT_EQ(config_hash(echoed), config_hash(cfg));

    std::ifstream lf(dir / "ledger.json");
    ASSERT_TRUE(lf.good());
    nlohmann::json ledgers = nlohmann::json::parse(lf);
    ASSERT_EQ(ledgers.size(), 2u);
    for (const auto& e : ledgers) {
        EXPECT_EQ(e.at("round_count").get<int>(), 1);
        EXPECT_EQ(e.at("uplink_bytes").get<std::uint64_t>(), 0u);
        EXPECT_EQ(e.at("client_param_updates").get<std::uint64_t>(), 0u);
        EXPECT_TRUE(e.contains("run_id"));
    }

    std::ifstream mf(dir / "metrics.csv");
    ASSERT_TRUE(mf.good());
    std::string header;
    std::getline(mf, header);
    EXPECT_EQ(header, "run_id,seed,method,client_id,accuracy");
    int rows = 0;
    std::string line;
    while (std::getline(mf, line))
        if (!line.empty()) ++rows;
    EXPECT_EQ(rows, 6);  // 2 runs x 3 clients
    std::filesystem::remove_all(dir);
}
