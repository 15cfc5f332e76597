#include "sunet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace sunet {
namespace {

std::atomic<int> g_threads{1};

// Lazily started pool. Workers sleep until a job is posted; the posting
// thread participates as worker 0.
class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void run(int workers, int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    std::lock_guard serialize(run_mutex_);  // one job at a time; callers from other threads queue
    ensure_workers(workers - 1);
    {
      std::lock_guard lock(mutex_);
      job_ = &fn;
      job_n_ = n;
      job_workers_ = workers;
      job_done_ = 0;
      job_error_ = nullptr;
      ++job_id_;
    }
    cv_.notify_all();

    try {
      run_block(fn, 0, workers, n);
    } catch (...) {
      std::lock_guard lock(mutex_);
      if (!job_error_) job_error_ = std::current_exception();
    }

    std::unique_lock lock(mutex_);
    done_cv_.wait(lock, [&] { return job_done_ >= job_workers_ - 1; });
    job_ = nullptr;
    if (job_error_) std::rethrow_exception(std::exchange(job_error_, nullptr));
  }

  static void run_block(const std::function<void(int64_t, int64_t)>& fn, int worker,
                        int workers, int64_t n) {
    const int64_t chunk = (n + workers - 1) / workers;
    const int64_t begin = worker * chunk;
    const int64_t end = std::min<int64_t>(n, begin + chunk);
    if (begin < end) fn(begin, end);
  }

 private:
  void ensure_workers(int count) {
    std::lock_guard lock(mutex_);
    while (static_cast<int>(threads_.size()) < count) {
      const int worker = static_cast<int>(threads_.size()) + 1;
      threads_.emplace_back([this, worker](std::stop_token st) { worker_loop(st, worker); });
    }
  }

  void worker_loop(std::stop_token st, int worker) {
    uint64_t seen = 0;
    for (;;) {
      std::unique_lock lock(mutex_);
      if (!cv_.wait(lock, st, [&] { return job_id_ != seen; })) return;
      seen = job_id_;
      const auto* fn = job_;
      const int64_t n = job_n_;
      const int workers = job_workers_;
      lock.unlock();
      if (worker >= workers) continue;  // not part of this job; do not touch its done count
      std::exception_ptr err;
      if (fn) {
        try {
          run_block(*fn, worker, workers, n);
        } catch (...) {
          err = std::current_exception();
        }
      }
      lock.lock();
      if (err && !job_error_) job_error_ = err;
      ++job_done_;
      lock.unlock();
      done_cv_.notify_one();
    }
  }

  std::mutex run_mutex_;
  std::mutex mutex_;
  std::condition_variable_any cv_;
  std::condition_variable done_cv_;
  std::vector<std::jthread> threads_;
  const std::function<void(int64_t, int64_t)>* job_ = nullptr;
  int64_t job_n_ = 0;
  int job_workers_ = 0;
  int job_done_ = 0;
  uint64_t job_id_ = 0;
  std::exception_ptr job_error_ = nullptr;
};

}  // namespace

void set_thread_count(int n) { g_threads.store(n < 1 ? 1 : n); }

int thread_count() { return g_threads.load(); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<int64_t>(g_threads.load(), n));
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  Pool::instance().run(workers, n, fn);
}

}  // namespace sunet
