#include "pcdnet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <thread>
#include <vector>

namespace pcdnet {
namespace {

thread_local bool tls_in_worker = false;

class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  std::size_t size() {
    std::lock_guard<std::mutex> lock(mu_);
    return target_;
  }

  void resize(std::size_t n) {
    if (n == 0) n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    std::unique_lock<std::mutex> lock(mu_);
    if (n == target_) return;
    stop_locked(lock);
    target_ = n;
  }

  void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
           std::size_t grain) {
    std::lock_guard<std::mutex> job_guard(run_mu_);  // one job at a time
    std::unique_lock<std::mutex> lock(mu_);
    ensure_started_locked();
    const std::size_t workers = threads_.size() + 1;  // caller participates
    std::size_t chunks = (n + grain - 1) / grain;
    if (chunks > workers * 4) {
      chunks = workers * 4;
      grain = (n + chunks - 1) / chunks;
    }
    job_body_ = &body;
    job_n_ = n;
    job_grain_ = grain;
    cursor_.store(0, std::memory_order_relaxed);
    pending_.store(static_cast<long>(threads_.size()), std::memory_order_relaxed);
    ++generation_;
    lock.unlock();
    cv_.notify_all();

    // The caller chews chunks alongside the workers; while doing so it counts
    // as a worker, so nested parallel_for calls from the body run inline.
    const bool was_worker = tls_in_worker;
    tls_in_worker = true;
    work();
    tls_in_worker = was_worker;

    std::unique_lock<std::mutex> wait_lock(mu_);
    done_cv_.wait(wait_lock, [&] { return pending_.load(std::memory_order_acquire) == 0; });
    job_body_ = nullptr;
  }

 private:
  Pool() : target_(std::max<std::size_t>(1, std::thread::hardware_concurrency())) {}

  ~Pool() {
    std::unique_lock<std::mutex> lock(mu_);
    stop_locked(lock);
  }

  void ensure_started_locked() {
    if (!threads_.empty() || target_ <= 1) return;
    quit_ = false;
    const std::uint64_t my_gen = generation_;
    for (std::size_t i = 0; i + 1 < target_; ++i) {
      threads_.emplace_back([this, my_gen] { worker_loop(my_gen); });
    }
  }

  void stop_locked(std::unique_lock<std::mutex>& lock) {
    if (threads_.empty()) return;
    quit_ = true;
    ++generation_;
    lock.unlock();
    cv_.notify_all();
    for (auto& t : threads_) t.join();
    lock.lock();
    threads_.clear();
    quit_ = false;
  }

  void worker_loop(std::uint64_t seen_gen) {
    tls_in_worker = true;
    for (;;) {
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [&] { return quit_ || generation_ != seen_gen; });
      seen_gen = generation_;
      if (quit_) return;
      if (job_body_ == nullptr) continue;
      lock.unlock();
      work();
      if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        // The lock serializes with the waiter's predicate check; without it
        // the notification can fall into the check-then-sleep window.
        std::lock_guard<std::mutex> done_guard(mu_);
        done_cv_.notify_one();
      }
    }
  }

  void work() {
    const auto* body = job_body_;
    const std::size_t n = job_n_;
    const std::size_t grain = job_grain_;
    if (body == nullptr) return;
    for (;;) {
      const std::size_t begin = cursor_.fetch_add(grain, std::memory_order_relaxed);
      if (begin >= n) break;
      (*body)(begin, std::min(n, begin + grain));
    }
  }

  std::mutex run_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> threads_;
  std::size_t target_;
  bool quit_ = false;
  std::uint64_t generation_ = 0;

  const std::function<void(std::size_t, std::size_t)>* job_body_ = nullptr;
  std::size_t job_n_ = 0;
  std::size_t job_grain_ = 1;
  std::atomic<std::size_t> cursor_{0};
  std::atomic<long> pending_{0};
};

}  // namespace

std::size_t thread_count() { return Pool::instance().size(); }

void set_thread_count(std::size_t n) { Pool::instance().resize(n); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_grain) {
  if (n == 0) return;
  if (tls_in_worker || thread_count() <= 1 || n <= min_grain) {
    body(0, n);
    return;
  }
  Pool::instance().run(n, body, std::max<std::size_t>(1, min_grain));
}

}  // namespace pcdnet
