#include "mobile/memory.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace mobile {

TransferEngine::TransferEngine(double t_xfer) : t_xfer_(t_xfer) {
    if (!(t_xfer > 0.0)) throw Error("TransferEngine: t_xfer must be positive");
}

double TransferEngine::issue(ExpertId expert, double now) {
    const double start = std::max(now, busy_until_);
    busy_until_ = start + t_xfer_;
    busy_time_ += t_xfer_;
    ++count_;
    if (logging_) log_.push_back({expert, now, start, busy_until_});
    return busy_until_;
}

HbmCache::HbmCache(int capacity_slots) : capacity_(capacity_slots) {
    if (capacity_slots < 1) throw Error("HbmCache: capacity must be at least one slot");
}

const HbmCache::Entry* HbmCache::find(ExpertId id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
}

HbmCache::Entry& HbmCache::at(ExpertId id) {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw Error(fmt::format("HbmCache: {} is not resident", to_string(id)));
    return it->second;
}

int HbmCache::pinned_count() const {
    return static_cast<int>(std::count_if(entries_.begin(), entries_.end(),
                                          [](const auto& kv) { return kv.second.pins > 0; }));
}

void HbmCache::insert(ExpertId id, double ready_time) {
    if (contains(id)) {
        touch(id);
        return;
    }
    if (size() >= capacity_) evict_lru(size() - capacity_ + 1);
    entries_.emplace(id, Entry{ready_time, ++clock_, 0});
}

void HbmCache::touch(ExpertId id) { at(id).last_use = ++clock_; }

void HbmCache::pin(ExpertId id) { ++at(id).pins; }

void HbmCache::unpin(ExpertId id) {
    auto& e = at(id);
    if (e.pins > 0) --e.pins;
}

void HbmCache::clear_pins() {
    for (auto& [id, e] : entries_) e.pins = 0;
}

std::vector<ExpertId> HbmCache::evict_lru(int n) {
    std::vector<std::pair<std::uint64_t, ExpertId>> candidates;
    for (const auto& [id, e] : entries_) {
        if (e.pins == 0) candidates.emplace_back(e.last_use, id);
    }
    if (n > static_cast<int>(candidates.size())) {
        throw CapacityDeadlock(fmt::format("need to evict {} experts but only {} of {} resident are unpinned", n,
                                           candidates.size(), entries_.size()));
    }
    std::partial_sort(candidates.begin(), candidates.begin() + n, candidates.end());
    std::vector<ExpertId> evicted;
    evicted.reserve(n);
    for (int i = 0; i < n; ++i) {
        entries_.erase(candidates[i].second);
        evicted.push_back(candidates[i].second);
    }
    stats_.evictions += n;
    return evicted;
}

RequestResult request(HbmCache& cache, TransferEngine& engine, ExpertId expert, double now) {
    RequestResult result;
    if (const auto* e = cache.find(expert)) {
        cache.touch(expert);
        if (e->ready_time <= now) {
            result.kind = RequestKind::Hit;
            result.ready_time = now;
            ++cache.stats().hits;
        } else {
            result.kind = RequestKind::InFlight;
            result.ready_time = e->ready_time;
            ++cache.stats().coalesced;
        }
        return result;
    }
    if (cache.size() >= cache.capacity()) result.evicted = cache.evict_lru(cache.size() - cache.capacity() + 1);
    result.kind = RequestKind::Issued;
    result.ready_time = engine.issue(expert, now);
    cache.insert(expert, result.ready_time);
    ++cache.stats().issued;
    if (cache.size() > cache.capacity()) throw Error("HbmCache: capacity exceeded");
    return result;
}

}  // namespace mobile
