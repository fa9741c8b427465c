#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "mobile/config.hpp"

namespace mobile {

/// Raised when a slot is needed but every resident expert is pinned.
class CapacityDeadlock : public Error {
public:
    using Error::Error;
};

/// Single FIFO CPU->GPU channel. Each transfer holds the channel for t_xfer.
class TransferEngine {
public:
    struct Transfer {
        ExpertId expert;
        double issue_time = 0.0;
        double start_time = 0.0;
        double ready_time = 0.0;
    };

    explicit TransferEngine(double t_xfer);

    /// Enqueues a transfer issued at `now`; returns its completion time.
    double issue(ExpertId expert, double now);

    double busy_until() const { return busy_until_; }
    double t_xfer() const { return t_xfer_; }
    std::uint64_t transfers() const { return count_; }
    /// Channel time spent transferring, summed over all transfers.
    double busy_time() const { return busy_time_; }

    /// Keep a per-transfer log (off by default).
    void set_logging(bool on) { logging_ = on; }
    const std::vector<Transfer>& log() const { return log_; }

private:
    double t_xfer_;
    double busy_until_ = 0.0;
    double busy_time_ = 0.0;
    std::uint64_t count_ = 0;
    bool logging_ = false;
    std::vector<Transfer> log_;
};

struct CacheStats {
    std::uint64_t hits = 0;
    std::uint64_t issued = 0;
    std::uint64_t coalesced = 0;  // requests that joined an in-flight transfer
    std::uint64_t evictions = 0;

    std::uint64_t requests() const { return hits + issued + coalesced; }
    double hit_rate() const { return requests() ? static_cast<double>(hits) / requests() : 0.0; }
};

/// HBM expert slots with LRU replacement. Entries count against capacity from the moment
/// their transfer is issued. Pinned entries are never evicted.
class HbmCache {
public:
    struct Entry {
        double ready_time = 0.0;
        std::uint64_t last_use = 0;
        int pins = 0;
    };

    explicit HbmCache(int capacity_slots);

    int capacity() const { return capacity_; }
    int size() const { return static_cast<int>(entries_.size()); }
    bool contains(ExpertId id) const { return entries_.count(id) != 0; }
    const Entry* find(ExpertId id) const;
    int pinned_count() const;

    /// Inserts without a transfer (ready at `ready_time`); evicts if full.
    void insert(ExpertId id, double ready_time);
    void touch(ExpertId id);
    void pin(ExpertId id);
    void unpin(ExpertId id);
    void clear_pins();

    /// Removes the n least-recently-used unpinned experts, oldest first.
    std::vector<ExpertId> evict_lru(int n);

    CacheStats& stats() { return stats_; }
    const CacheStats& stats() const { return stats_; }
    const std::map<ExpertId, Entry>& entries() const { return entries_; }

private:
    Entry& at(ExpertId id);

    int capacity_;
    std::uint64_t clock_ = 0;
    std::map<ExpertId, Entry> entries_;
    CacheStats stats_;
};

enum class RequestKind { Hit, InFlight, Issued };

struct RequestResult {
    RequestKind kind = RequestKind::Hit;
    double ready_time = 0.0;
    std::vector<ExpertId> evicted;
};

/// Resident and arrived: Hit. Resident but still transferring: InFlight (coalesced).
/// Otherwise evicts if needed, enqueues on the channel, and returns Issued.
RequestResult request(HbmCache& cache, TransferEngine& engine, ExpertId expert, double now);

inline std::vector<ExpertId> evict_lru(HbmCache& cache, int n) { return cache.evict_lru(n); }

/// Token boundary: residency carries over, pins are dropped.
inline HbmCache& warm_state_carryover(HbmCache& cache) {
    cache.clear_pins();
    return cache;
}

}  // namespace mobile
