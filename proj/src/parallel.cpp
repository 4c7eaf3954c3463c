#include "lifmixer/parallel.hpp"

#include <algorithm>

namespace lifmixer {

ThreadPool& ThreadPool::global() {
    static ThreadPool pool(1);
    return pool;
}

ThreadPool::ThreadPool(int threads) { resize(threads); }

ThreadPool::~ThreadPool() {
    {
        std::unique_lock<std::mutex> lock(mu_);
        stopping_ = true;
    }
    cv_task_.notify_all();
    for (auto& t : workers_) t.join();
}

void ThreadPool::resize(int threads) {
    if (threads < 1) threads = 1;
    if (threads == size()) return;
    {
        std::unique_lock<std::mutex> lock(mu_);
        stopping_ = true;
    }
    cv_task_.notify_all();
    for (auto& t : workers_) t.join();
    workers_.clear();
    stopping_ = false;
    for (int i = 1; i < threads; ++i) {
        workers_.emplace_back([this, i] { worker_loop(i); });
    }
}

ThreadPool::Slice ThreadPool::slice_of(int64_t begin, int64_t end, int part, int parts) {
    const int64_t total = end - begin;
    const int64_t chunk = (total + parts - 1) / parts;
    const int64_t lo = std::min<int64_t>(begin + chunk * part, end);
    const int64_t hi = std::min<int64_t>(lo + chunk, end);
    return {lo, hi};
}

void ThreadPool::parallel_for(int64_t begin, int64_t end,
                              const std::function<void(int64_t, int64_t)>& body) {
    if (end <= begin) return;
    const int parts = size();
    if (parts == 1 || end - begin == 1) {
        body(begin, end);
        return;
    }
    {
        std::unique_lock<std::mutex> lock(mu_);
        body_ = &body;
        begin_ = begin;
        end_ = end;
        pending_ = parts - 1;
        ++generation_;
    }
    cv_task_.notify_all();

    Slice mine = slice_of(begin, end, 0, parts);
    if (mine.lo < mine.hi) body(mine.lo, mine.hi);

    std::unique_lock<std::mutex> lock(mu_);
    cv_done_.wait(lock, [this] { return pending_ == 0; });
    body_ = nullptr;
}

void ThreadPool::worker_loop(int index) {
    uint64_t seen = 0;
    for (;;) {
        const std::function<void(int64_t, int64_t)>* body = nullptr;
        int64_t begin = 0, end = 0;
        int parts = 0;
        {
            std::unique_lock<std::mutex> lock(mu_);
            cv_task_.wait(lock, [&] { return stopping_ || generation_ != seen; });
            if (stopping_) return;
            seen = generation_;
            body = body_;
            begin = begin_;
            end = end_;
            parts = size();
        }
        Slice mine = slice_of(begin, end, index, parts);
        if (mine.lo < mine.hi) (*body)(mine.lo, mine.hi);
        {
            std::unique_lock<std::mutex> lock(mu_);
            if (--pending_ == 0) cv_done_.notify_one();
        }
    }
}

void set_global_threads(int threads) {
    if (threads <= 0) {
        threads = static_cast<int>(std::thread::hardware_concurrency());
        if (threads <= 0) threads = 1;
    }
    ThreadPool::global().resize(threads);
}

int global_threads() { return ThreadPool::global().size(); }

} // namespace lifmixer
