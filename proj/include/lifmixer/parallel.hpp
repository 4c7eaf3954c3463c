#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace lifmixer {

// Fork-join worker pool. parallel_for splits [begin, end) into one
// contiguous slice per worker, so the work-to-slice assignment is a pure
// function of (range, pool size) and never of scheduling order. Callers
// guarantee slices touch disjoint output; reductions go through per-slot
// partials combined serially by the caller.
class ThreadPool {
public:
    static ThreadPool& global();

    explicit ThreadPool(int threads = 1);
    ~ThreadPool();

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    void resize(int threads);
    int size() const { return static_cast<int>(workers_.size()) + 1; }

    // body(lo, hi) runs on [lo, hi); not reentrant from inside a body.
    void parallel_for(int64_t begin, int64_t end,
                      const std::function<void(int64_t, int64_t)>& body);

private:
    struct Slice {
        int64_t lo;
        int64_t hi;
    };

    void worker_loop(int index);
    static Slice slice_of(int64_t begin, int64_t end, int part, int parts);

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_task_;
    std::condition_variable cv_done_;
    const std::function<void(int64_t, int64_t)>* body_ = nullptr;
    int64_t begin_ = 0, end_ = 0;
    uint64_t generation_ = 0;
    int pending_ = 0;
    bool stopping_ = false;
};

// Convenience wrapper over the global pool.
inline void parallel_for(int64_t begin, int64_t end,
                         const std::function<void(int64_t, int64_t)>& body) {
    ThreadPool::global().parallel_for(begin, end, body);
}

// Pool size used by the CLI at startup; 0 picks hardware concurrency.
void set_global_threads(int threads);
int global_threads();

} // namespace lifmixer
