#include <doctest.h>

#include <atomic>
#include <cstdint>
#include <vector>

#include "lifmixer/parallel.hpp"

using namespace lifmixer;

TEST_CASE("parallel_for touches every index exactly once") {
    set_global_threads(4);
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(0, 1000, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) hits[static_cast<size_t>(i)]++;
    });
    for (auto& h : hits) CHECK(h.load() == 1);
    set_global_threads(1);
}

TEST_CASE("slice assignment is deterministic across thread counts") {
    // Record which slice each index lands in; per-slot writes must agree
    // between a single-threaded and a multi-threaded run.
    auto run = [](int threads) {
        set_global_threads(threads);
        std::vector<int64_t> tag(777, -1);
        parallel_for(0, 777, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) tag[static_cast<size_t>(i)] = i * 3 - 1;
        });
        set_global_threads(1);
        return tag;
    };
    CHECK(run(1) == run(4));
}

TEST_CASE("empty and single-element ranges behave") {
    set_global_threads(3);
    int calls = 0;
    parallel_for(5, 5, [&](int64_t, int64_t) { ++calls; });
    CHECK(calls == 0);
    int64_t seen = -1;
    parallel_for(9, 10, [&](int64_t lo, int64_t hi) {
        CHECK(hi - lo == 1);
        seen = lo;
    });
    CHECK(seen == 9);
    set_global_threads(1);
}

TEST_CASE("global thread count is adjustable") {
    set_global_threads(2);
    CHECK(global_threads() == 2);
    set_global_threads(1);
    CHECK(global_threads() == 1);
}
