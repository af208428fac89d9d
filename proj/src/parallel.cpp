#include "terse/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace terse {

int worker_count() {
    static int cached = [] {
        if (const char* env = std::getenv("TERSE_THREADS")) {
            int v = std::atoi(env);
            if (v > 0) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw > 0 ? static_cast<int>(hw) : 1;
    }();
    return cached;
}

namespace {

// Persistent pool; workers park between jobs. One job at a time (training is
// single-owner), nested parallel_for degrades to serial execution.
class Pool {
public:
    explicit Pool(int workers) : stop_(false), job_id_(0), pending_(0) {
        for (int i = 0; i < workers; ++i)
            threads_.emplace_back([this] { run(); });
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(m_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void dispatch(std::size_t n, std::size_t chunks,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
        {
            std::lock_guard<std::mutex> lk(m_);
            fn_ = &fn;
            total_ = n;
            chunks_ = chunks;
            next_chunk_.store(0, std::memory_order_relaxed);
            pending_ = chunks;
            ++job_id_;
        }
        cv_.notify_all();
        work();  // caller participates
        std::unique_lock<std::mutex> lk(m_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        fn_ = nullptr;
    }

private:
    void run() {
        std::uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(m_);
                cv_.wait(lk, [&] { return stop_ || job_id_ != seen; });
                if (stop_) return;
                seen = job_id_;
            }
            work();
        }
    }

    void work() {
        for (;;) {
            std::size_t c = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            if (c >= chunks_) return;
            std::size_t lo = total_ * c / chunks_;
            std::size_t hi = total_ * (c + 1) / chunks_;
            if (lo < hi) (*fn_)(lo, hi);
            std::lock_guard<std::mutex> lk(m_);
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }

    std::vector<std::thread> threads_;
    std::mutex m_;
    std::condition_variable cv_, done_cv_;
    bool stop_;
    std::uint64_t job_id_;
    const std::function<void(std::size_t, std::size_t)>* fn_ = nullptr;
    std::size_t total_ = 0, chunks_ = 0, pending_;
    std::atomic<std::size_t> next_chunk_{0};
};

thread_local bool in_parallel_region = false;

}  // namespace

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& range_fn) {
    if (n == 0) return;
    int workers = worker_count();
    if (workers <= 1 || n == 1 || in_parallel_region) {
        range_fn(0, n);
        return;
    }
    static Pool pool(worker_count() - 1);
    std::size_t chunks = std::min<std::size_t>(n, static_cast<std::size_t>(workers) * 4);
    in_parallel_region = true;
    pool.dispatch(n, chunks, [&](std::size_t lo, std::size_t hi) {
        in_parallel_region = true;
        range_fn(lo, hi);
        in_parallel_region = false;
    });
    in_parallel_region = false;
}

}  // namespace terse
