#include "warmbandit/core.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <cstdint>

using namespace warmbandit;

namespace {

LoggedRecord rec(RecordId id, Action a, Context x, double y) {
    LoggedRecord r;
    r.id = id;
    r.action = a;
    r.context = std::move(x);
    r.outcome = y;
    return r;
}

// linear scan reference for the exact index
std::vector<RecordId> scan(const LoggedDataset& d, const Context& x, Action a) {
    std::vector<RecordId> out;
    for (std::size_t s = 0; s < d.total_size(); ++s) {
        const auto& r = d.at_slot(s);
        if (d.slot_alive(s) && r.action == a && r.context == x) out.push_back(r.id);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<RecordId> sorted(std::vector<RecordId> v) {
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

TEST_SUITE("core") {

TEST_CASE("exact index finds the single matching record") {
    LoggedDataset d(2, 2);
    d.add(rec(7, 1, {1, 0}, 1));
    CHECK(d.index_exact({1, 0}, 1) == std::vector<RecordId>{7});
    CHECK(d.index_exact({1, 0}, 0).empty());
    CHECK(d.index_exact({0, 1}, 1).empty());
}

TEST_CASE("exact index agrees with a linear scan") {
    Rng rng(3);
    std::uniform_int_distribution<int> bit(0, 1), act(0, 2);
    LoggedDataset d(3, 3);
    for (RecordId id = 0; id < 400; ++id)
        d.add(rec(id, act(rng), {double(bit(rng)), double(bit(rng)), double(bit(rng))}, 0.5));
    // delete a third
    for (RecordId id = 0; id < 400; id += 3) d.remove(id);
    for (int m = 0; m < 8; ++m)
        for (Action a = 0; a < 3; ++a) {
            const Context x{double(m & 1), double((m >> 1) & 1), double((m >> 2) & 1)};
            CHECK(sorted(d.index_exact(x, a)) == scan(d, x, a));
            CHECK(d.exact_slots(x, a).size() == scan(d, x, a).size());
        }
    CHECK(d.size() == 400 - 134);
}

TEST_CASE("signed zero and distinct bits are distinct contexts") {
    LoggedDataset d(1, 1);
    d.add(rec(1, 0, {0.0}, 0));
    CHECK(d.index_exact({-0.0}, 0).empty());
    CHECK(d.index_exact({0.0}, 0).size() == 1);
}

TEST_CASE("sample_and_remove on a singleton returns it and deletes it") {
    LoggedDataset d(2, 1);
    d.add(rec(5, 0, {0.5}, 0.25));
    Rng rng(1);
    const std::array<RecordId, 1> ids{5};
    const auto r = d.sample_and_remove(ids, rng);
    CHECK(r.id == 5);
    CHECK(r.outcome == 0.25);
    CHECK(d.size() == 0);
    CHECK_FALSE(d.alive(5));
    CHECK(d.index_exact({0.5}, 0).empty());
}

TEST_CASE("sample_and_remove is uniform") {
    Rng rng(11);
    std::array<int, 5> hits{};
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        LoggedDataset d(1, 1);
        for (RecordId id = 1; id <= 4; ++id) d.add(rec(id, 0, {0}, 0));
        const auto ids = d.index_exact({0}, 0);
        hits[d.sample_and_remove(ids, rng).id]++;
    }
    for (int id = 1; id <= 4; ++id) CHECK(std::abs(hits[id] / double(draws) - 0.25) <= 0.01);
}

TEST_CASE("two draws from the same set are distinct") {
    Rng rng(2);
    for (int rep = 0; rep < 200; ++rep) {
        LoggedDataset d(1, 1);
        for (RecordId id = 0; id < 3; ++id) d.add(rec(id, 0, {0}, 0));
        const auto first = d.sample_and_remove(d.index_exact({0}, 0), rng);
        const auto second = d.sample_and_remove(d.index_exact({0}, 0), rng);
        CHECK(first.id != second.id);
    }
}

TEST_CASE("dataset errors") {
    LoggedDataset d(2, 1);
    d.add(rec(1, 0, {0}, 0));
    Rng rng(0);
    CHECK_THROWS_AS(d.sample_and_remove(std::span<const RecordId>{}, rng), ContractError);
    CHECK_THROWS_AS(d.add(rec(1, 1, {0}, 0)), DataError);
    CHECK_THROWS_AS(d.add(rec(2, 2, {0}, 0)), DataError);
    CHECK_THROWS_AS(d.add(rec(3, 0, {0, 1}, 0)), DataError);
    CHECK_THROWS_AS(d.add(rec(4, 0, {0}, 1.5)), DataError);
    CHECK_THROWS_AS(d.add(rec(5, 0, {std::nan("")}, 0)), DataError);
    auto bad = rec(6, 0, {0}, 0);
    bad.propensity_chosen = 0.0;
    CHECK_THROWS_AS(d.add(bad), DataError);
    d.remove(1);
    CHECK_THROWS_AS(d.remove(1), ContractError);
    CHECK_THROWS_AS(d.remove(99), ContractError);
    const std::array<RecordId, 1> dead{1};
    CHECK_THROWS_AS(d.sample_and_remove(dead, rng), InternalError);
}

TEST_CASE("live ids track deletions") {
    LoggedDataset d(2, 1);
    for (RecordId id = 10; id < 15; ++id) d.add(rec(id, id % 2, {0}, 0));
    d.remove(12);
    CHECK(sorted(d.live_ids()) == std::vector<RecordId>{10, 11, 13, 14});
    CHECK(d.total_size() == 5);
}

TEST_CASE("bucket index insert and erase") {
    BucketIndex b;
    b.insert(0, 2);
    b.insert(1, 2);
    b.insert(2, 0);
    CHECK(b.members(2).size() == 2);
    b.erase(0);
    CHECK(b.members(2).size() == 1);
    CHECK(b.members(2)[0] == 1);
    CHECK_FALSE(b.contains(0));
    CHECK(b.contains(2));
    CHECK_THROWS_AS(b.insert(2, 1), InternalError);
}

TEST_CASE("seed mixing is deterministic and separates streams") {
    CHECK(mix_seed(1, 2) == mix_seed(1, 2));
    CHECK(mix_seed(1, 2) != mix_seed(2, 1));
    CHECK(mix_seed(1, stream::oracle) != mix_seed(1, stream::environment));
    Rng a = make_stream(9, stream::oracle), b = make_stream(9, stream::oracle);
    for (int i = 0; i < 10; ++i) CHECK(a() == b());
}

TEST_CASE("argmax breaks ties low") {
    const std::vector<double> v{1, 3, 3, 2};
    CHECK(argmax_first(v) == 1);
    CHECK(all_actions(3) == std::vector<Action>{0, 1, 2});
}

TEST_CASE("format_double round trips") {
    Rng rng(4);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
        const double v = u(rng) / 7.0;
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.1) == "0.1");
}

}
