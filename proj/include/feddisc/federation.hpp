#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "feddisc/broadcast.hpp"
#include "feddisc/clientside.hpp"
#include "feddisc/errors.hpp"
#include "feddisc/rng.hpp"

namespace feddisc {

// Exact communication accounting for one experiment. round_count counts
// broadcast->upload exchanges; client_param_updates is the number of model
// parameter writes that happened while client code was running.
struct CommLedger {
    std::uint64_t downlink_bytes = 0;
    std::uint64_t uplink_bytes = 0;
    int round_count = 0;
    std::uint64_t client_param_updates = 0;
    int broadcast_count = 0;
    int upload_count = 0;

    void assert_one_shot(int expected_uploads) const {
        if (round_count != 1)
            throw ProtocolViolation("round_count = " + std::to_string(round_count) +
                                    ", expected 1");
        if (client_param_updates != 0)
            throw ProtocolViolation("clients performed " +
                                    std::to_string(client_param_updates) +
                                    " parameter updates, expected 0");
        if (broadcast_count != 1)
            throw ProtocolViolation("broadcast_count = " + std::to_string(broadcast_count));
        if (upload_count > expected_uploads)
            throw ProtocolViolation("more uploads than clients");
    }
};

inline std::uint64_t account(const ServerBroadcast& b) { return serialize_broadcast(b).size(); }
inline std::uint64_t account(const ClientUpload& u) { return serialize_upload(u).size(); }

// In-process "network": enforces the one-shot shape (a single broadcast, at
// most one upload per client) and meters every byte that crosses it.
class MessageBus {
public:
    explicit MessageBus(int num_clients) : upload_seen_(num_clients, false) {}

    // Server -> clients. Multicast is metered once; the payload is identical
    // for every receiver.
    const ServerBroadcast& post_broadcast(const ServerBroadcast& b) {
        if (broadcast_posted_) throw ProtocolViolation("second broadcast in a one-shot round");
        broadcast_posted_ = true;
        ledger_.broadcast_count += 1;
        ledger_.downlink_bytes += account(b);
        broadcast_ = &b;
        return b;
    }

    // Client -> server. The upload is round-tripped through its wire format so
    // the server only ever sees what was actually serialized.
    ClientUpload post_upload(const ClientUpload& u) {
        if (!broadcast_posted_)
            throw ProtocolViolation("client upload before the server broadcast");
        if (u.client_id < 0 || u.client_id >= static_cast<int>(upload_seen_.size()))
            throw ProtocolViolation("upload from unknown client " + std::to_string(u.client_id));
        if (upload_seen_[u.client_id])
            throw ProtocolViolation("client " + std::to_string(u.client_id) +
                                    " uploaded twice in a one-shot round");
        upload_seen_[u.client_id] = true;
        ledger_.upload_count += 1;
        std::vector<std::uint8_t> wire = serialize_upload(u);
        ledger_.uplink_bytes += wire.size();
        return deserialize_upload(wire);
    }

    void close_round() { ledger_.round_count += 1; }

    const CommLedger& ledger() const { return ledger_; }
    CommLedger& ledger() { return ledger_; }

private:
    std::vector<bool> upload_seen_;
    bool broadcast_posted_ = false;
    const ServerBroadcast* broadcast_ = nullptr;
    CommLedger ledger_;
};

// One planned generation: a centroid (by position in the uploads) plus the
// clients whose domain features will condition each generated sample. An
// empty domain list means unconditioned-on-domain generation (ablation).
struct PlanEntry {
    int client_index = 0;    // position in the uploads vector
    int category = 0;
    int centroid_index = 0;  // within that client's category block
    std::vector<int> domain_clients;
};

struct GenerationPlan {
    std::vector<PlanEntry> entries;
    int samples_per_entry = 0;

    std::size_t total_samples() const { return entries.size() * samples_per_entry; }
};

// For every uploaded centroid of category j, draw R clients uniformly with
// replacement from those whose upload contains category j; their domain
// features condition the R samples generated from that centroid.
inline GenerationPlan plan_generation(const std::vector<ClientUpload>& uploads, int r,
                                      std::uint64_t seed, bool include_domain = true) {
    if (uploads.empty()) throw Error("plan_generation: no uploads");
    if (r < 1) throw ConfigError("plan_generation: R must be >= 1");

    // clients holding each category, in upload order
    std::unordered_map<int, std::vector<int>> holders;
    for (std::size_t ui = 0; ui < uploads.size(); ++ui)
        for (const auto& cat : uploads[ui].categories)
            holders[cat.category].push_back(static_cast<int>(ui));

    GenerationPlan plan;
    plan.samples_per_entry = r;
    Rng rng(derive_seed(seed, stream::plan));
    for (std::size_t ui = 0; ui < uploads.size(); ++ui) {
        for (const auto& cat : uploads[ui].categories) {
            const std::vector<int>& pool = holders.at(cat.category);
            for (std::size_t ci = 0; ci < cat.centroids.size(); ++ci) {
                PlanEntry e;
                e.client_index = static_cast<int>(ui);
                e.category = cat.category;
                e.centroid_index = static_cast<int>(ci);
                if (include_domain) {
                    e.domain_clients.reserve(r);
                    for (int i = 0; i < r; ++i)
                        e.domain_clients.push_back(pool[rng.below(pool.size())]);
                }
                plan.entries.push_back(std::move(e));
            }
        }
    }
    return plan;
}

}  // namespace feddisc
