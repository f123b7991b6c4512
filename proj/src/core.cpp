#include "warmbandit/core.hpp"

#include <charconv>
#include <cmath>
#include <cstring>

namespace warmbandit {

std::uint64_t mix_seed(std::uint64_t root, std::uint64_t tag) {
    std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Rng make_stream(std::uint64_t root, std::uint64_t tag) { return Rng(mix_seed(root, tag)); }

// ---------------------------------------------------------------------------
// BucketIndex

void BucketIndex::insert(std::size_t slot, BucketId bucket) {
    if (slot >= bucket_of_.size()) {
        bucket_of_.resize(slot + 1, npos);
        position_.resize(slot + 1, 0);
    }
    if (bucket_of_[slot] != npos) throw InternalError("slot already indexed");
    if (bucket >= buckets_.size()) buckets_.resize(bucket + 1);
    position_[slot] = buckets_[bucket].size();
    bucket_of_[slot] = bucket;
    buckets_[bucket].push_back(slot);
}

void BucketIndex::erase(std::size_t slot) {
    if (!contains(slot)) return;
    auto& members = buckets_[bucket_of_[slot]];
    const std::size_t pos = position_[slot];
    const std::size_t last = members.back();
    members[pos] = last;
    position_[last] = pos;
    members.pop_back();
    bucket_of_[slot] = npos;
}

bool BucketIndex::contains(std::size_t slot) const {
    return slot < bucket_of_.size() && bucket_of_[slot] != npos;
}

std::span<const std::size_t> BucketIndex::members(BucketId bucket) const {
    if (bucket >= buckets_.size()) return {};
    return buckets_[bucket];
}

// ---------------------------------------------------------------------------
// LoggedDataset

LoggedDataset::LoggedDataset(std::size_t num_actions, std::size_t dim, RewardRange range)
    : num_actions_(num_actions), dim_(dim), range_(range) {
    if (num_actions == 0) throw ParameterError("dataset needs at least one action");
}

void LoggedDataset::add(LoggedRecord record) {
    if (record.action >= num_actions_) throw DataError("record action out of range");
    if (record.context.size() != dim_) throw DataError("record context dimension mismatch");
    for (double v : record.context)
        if (!std::isfinite(v)) throw DataError("record context is not finite");
    if (!range_.contains(record.outcome)) throw DataError("record outcome outside reward range");
    if (record.propensity_chosen && !(*record.propensity_chosen > 0.0 && *record.propensity_chosen <= 1.0))
        throw DataError("propensity_chosen must lie in (0,1]");
    if (record.propensity_vector) {
        const auto& p = *record.propensity_vector;
        if (p.size() + 1 != num_actions_) throw DataError("propensity vector must have K-1 entries");
        double sum = 0.0;
        for (double v : p) {
            if (!(v >= 0.0 && v <= 1.0)) throw DataError("propensity entries must lie in [0,1]");
            sum += v;
        }
        if (sum > 1.0 + 1e-9) throw DataError("propensity vector sums above 1");
    }
    if (slot_by_id_.count(record.id)) throw DataError("duplicate record id " + std::to_string(record.id));

    const std::size_t slot = records_.size();
    const std::string key = exact_key(record.context, record.action);
    auto [it, inserted] = exact_bucket_.try_emplace(key, exact_bucket_.size());
    exact_.insert(slot, it->second);
    slot_by_id_.emplace(record.id, slot);
    records_.push_back(std::move(record));
    alive_.push_back(1);
    ++live_count_;
}

bool LoggedDataset::alive(RecordId id) const {
    auto it = slot_by_id_.find(id);
    return it != slot_by_id_.end() && alive_[it->second];
}

std::size_t LoggedDataset::slot_of(RecordId id) const {
    auto it = slot_by_id_.find(id);
    if (it == slot_by_id_.end()) throw ContractError("unknown record id " + std::to_string(id));
    return it->second;
}

const LoggedRecord& LoggedDataset::record(RecordId id) const { return records_[slot_of(id)]; }

std::string LoggedDataset::exact_key(const Context& context, Action action) const {
    std::string key(sizeof(Action) + context.size() * sizeof(double), '\0');
    std::memcpy(key.data(), &action, sizeof(Action));
    if (!context.empty())
        std::memcpy(key.data() + sizeof(Action), context.data(), context.size() * sizeof(double));
    return key;
}

std::span<const std::size_t> LoggedDataset::exact_slots(const Context& context, Action action) const {
    if (context.size() != dim_) return {};
    auto it = exact_bucket_.find(exact_key(context, action));
    if (it == exact_bucket_.end()) return {};
    return exact_.members(it->second);
}

std::vector<RecordId> LoggedDataset::index_exact(const Context& context, Action action) const {
    std::vector<RecordId> ids;
    for (std::size_t slot : exact_slots(context, action)) ids.push_back(records_[slot].id);
    return ids;
}

LoggedRecord LoggedDataset::sample_and_remove(std::span<const RecordId> ids, Rng& rng) {
    if (ids.empty()) throw ContractError("sample_and_remove called with an empty id set");
    std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
    const RecordId id = ids[pick(rng)];
    auto it = slot_by_id_.find(id);
    if (it == slot_by_id_.end() || !alive_[it->second])
        throw InternalError("sample_and_remove drew a dead or unknown id " + std::to_string(id));
    LoggedRecord out = records_[it->second];
    remove_slot(it->second);
    return out;
}

LoggedRecord LoggedDataset::sample_and_remove_slot(std::span<const std::size_t> slots, Rng& rng) {
    if (slots.empty()) throw ContractError("sample_and_remove called with an empty id set");
    std::uniform_int_distribution<std::size_t> pick(0, slots.size() - 1);
    const std::size_t slot = slots[pick(rng)];
    if (slot >= records_.size() || !alive_[slot]) throw InternalError("sample_and_remove drew a dead slot");
    LoggedRecord out = records_[slot];
    remove_slot(slot);
    return out;
}

void LoggedDataset::remove(RecordId id) {
    const std::size_t slot = slot_of(id);
    if (!alive_[slot]) throw ContractError("record " + std::to_string(id) + " already deleted");
    remove_slot(slot);
}

void LoggedDataset::remove_slot(std::size_t slot) {
    alive_[slot] = 0;
    --live_count_;
    exact_.erase(slot);
}

std::vector<RecordId> LoggedDataset::live_ids() const {
    std::vector<RecordId> ids;
    ids.reserve(live_count_);
    for (std::size_t s = 0; s < records_.size(); ++s)
        if (alive_[s]) ids.push_back(records_[s].id);
    return ids;
}

// ---------------------------------------------------------------------------

Action BanditOracle::play(const Context& x, Rng& rng) const {
    const auto actions = all_actions(num_actions());
    return play_among(x, actions, rng);
}

std::vector<Action> all_actions(std::size_t k) {
    std::vector<Action> a(k);
    for (std::size_t i = 0; i < k; ++i) a[i] = i;
    return a;
}

std::size_t argmax_first(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace warmbandit
