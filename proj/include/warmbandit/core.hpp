// Core domain types: contexts, logged records, the logged dataset with its
// exact-match index, seeded random streams, and the two plug-in contracts
// (bandit oracle and offline evaluator) that the framework drives.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace warmbandit {

using Context = std::vector<double>;
using Action = std::size_t;
using RecordId = std::uint64_t;
using Rng = std::mt19937_64;

// Error categories. Everything derives from std::runtime_error so callers that
// do not care can catch one type.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParameterError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InternalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RewardRange {
    double lo = 0.0;
    double hi = 1.0;

    bool contains(double y) const { return y >= lo && y <= hi; }
    bool is_unit() const { return lo == 0.0 && hi == 1.0; }
    double midpoint() const { return 0.5 * (lo + hi); }
};

// Deterministic seed derivation. One root seed per run is split into
// independent streams by mixing in a stream tag (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t root, std::uint64_t tag);
Rng make_stream(std::uint64_t root, std::uint64_t tag);

// Named stream tags used by the framework and experiments.
namespace stream {
inline constexpr std::uint64_t environment = 1;
inline constexpr std::uint64_t oracle = 2;
inline constexpr std::uint64_t evaluator = 3;
inline constexpr std::uint64_t context_generator = 4;
inline constexpr std::uint64_t logged_data = 5;
inline constexpr std::uint64_t environment_params = 6;
inline constexpr std::uint64_t forest = 7;
inline constexpr std::uint64_t virtual_play = 8;
}  // namespace stream

struct LoggedRecord {
    RecordId id = 0;
    Action action = 0;
    Context context;
    double outcome = 0.0;
    std::optional<double> propensity_chosen;
    // p(0..K-2 | x); the last action's probability is implied.
    std::optional<std::vector<double>> propensity_vector;
};

// Uniform-sample-and-delete buckets. Every record belongs to at most one
// bucket; removal swaps with the bucket's last element, so both sampling and
// deletion are O(1).
class BucketIndex {
public:
    using BucketId = std::size_t;
    static constexpr BucketId npos = static_cast<BucketId>(-1);

    // Places `slot` (a dense record slot) into `bucket`, growing storage.
    void insert(std::size_t slot, BucketId bucket);
    void erase(std::size_t slot);
    bool contains(std::size_t slot) const;

    std::span<const std::size_t> members(BucketId bucket) const;
    std::size_t bucket_count() const { return buckets_.size(); }

private:
    std::vector<std::vector<std::size_t>> buckets_;
    std::vector<BucketId> bucket_of_;
    std::vector<std::size_t> position_;
};

class LoggedDataset {
public:
    LoggedDataset() = default;
    LoggedDataset(std::size_t num_actions, std::size_t dim, RewardRange range = {});

    // Validates and appends. Ids must be unique.
    void add(LoggedRecord record);

    std::size_t num_actions() const { return num_actions_; }
    std::size_t dim() const { return dim_; }
    const RewardRange& reward_range() const { return range_; }

    std::size_t size() const { return live_count_; }
    std::size_t total_size() const { return records_.size(); }
    bool empty() const { return live_count_ == 0; }

    bool alive(RecordId id) const;
    const LoggedRecord& record(RecordId id) const;
    // Dense slot access, including dead slots; used to build secondary indices.
    const LoggedRecord& at_slot(std::size_t slot) const { return records_[slot]; }
    bool slot_alive(std::size_t slot) const { return alive_[slot] != 0; }
    std::size_t slot_of(RecordId id) const;

    // Ids of live records with this exact (bitwise) context and action.
    std::vector<RecordId> index_exact(const Context& context, Action action) const;
    // Same set as slots, without copying.
    std::span<const std::size_t> exact_slots(const Context& context, Action action) const;

    // Uniformly picks one id from `ids`, deletes it and returns the record.
    LoggedRecord sample_and_remove(std::span<const RecordId> ids, Rng& rng);
    // Slot variant used by indexed evaluators; `slots` may alias an index
    // bucket and is not read after the removal.
    LoggedRecord sample_and_remove_slot(std::span<const std::size_t> slots, Rng& rng);

    // Permanent deletion.
    void remove(RecordId id);

    std::vector<RecordId> live_ids() const;

private:
    void remove_slot(std::size_t slot);
    std::string exact_key(const Context& context, Action action) const;

    std::size_t num_actions_ = 0;
    std::size_t dim_ = 0;
    RewardRange range_;
    std::vector<LoggedRecord> records_;
    std::vector<char> alive_;
    std::size_t live_count_ = 0;
    std::unordered_map<RecordId, std::size_t> slot_by_id_;
    std::unordered_map<std::string, BucketIndex::BucketId> exact_bucket_;
    BucketIndex exact_;
};

// Online learner. `play_among` must not modify the oracle; randomness comes
// only from the caller-owned stream. `update` is the single mutator.
class BanditOracle {
public:
    virtual ~BanditOracle() = default;

    virtual std::size_t num_actions() const = 0;
    virtual Action play_among(const Context& x, std::span<const Action> candidates, Rng& rng) const = 0;
    virtual void update(const Context& x, Action a, double y) = 0;
    // Stable text fingerprint of the sufficient statistics.
    virtual std::string digest() const = 0;

    Action play(const Context& x, Rng& rng) const;
};

// Synthesizes a reward for (x, a) from logged data, or nothing.
class OfflineEvaluator {
public:
    virtual ~OfflineEvaluator() = default;
    virtual std::optional<double> get_outcome(const Context& x, Action a, Rng& rng) = 0;
};

std::vector<Action> all_actions(std::size_t k);

// Lowest index among maximal entries.
std::size_t argmax_first(std::span<const double> values);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace warmbandit
