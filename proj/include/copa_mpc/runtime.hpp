#pragma once

// Execution runtimes shared by the engine and fabric.
//
// Every state transition runs as a task holding the runtime's state lock, so
// engine and endpoint code never synchronises by itself. Heavy accelerator
// work is offloaded: SimRuntime runs it inline and charges modeled time on a
// virtual clock; ThreadRuntime runs it on a worker pool in wall-clock time.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <queue>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace copa {

class SimStalled : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TraceEvent {
  double time_us = 0;
  std::string what;
  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

class Runtime {
 public:
  using Task = std::function<void()>;

  virtual ~Runtime() = default;

  virtual double now_us() const = 0;
  virtual bool virtual_time() const = 0;

  // Schedule `fn` to run after `delay_us` (modeled time in simulation, wall time otherwise).
  virtual void post(Task fn, double delay_us = 0.0) = 0;

  // Run `work` without the state lock, then `then` as an ordinary task once
  // `cost_us` of modeled time has passed.
  virtual void offload(Task work, double cost_us, Task then) = 0;

  virtual std::unique_lock<std::mutex> lock() = 0;

  // Block the calling host thread until `pred` holds. Returns false on timeout.
  virtual bool wait_until(std::unique_lock<std::mutex>& lk, const std::function<bool()>& pred, double timeout_s) = 0;

  virtual void trace(std::string) {}
};

// Discrete-event runtime: single-threaded and deterministic. Events at equal
// times run in posting order.
class SimRuntime final : public Runtime {
 public:
  double now_us() const override { return now_; }
  bool virtual_time() const override { return true; }

  void post(Task fn, double delay_us = 0.0) override {
    if (delay_us < 0) delay_us = 0;
    events_.push(Event{now_ + delay_us, seq_++, std::move(fn)});
  }

  void offload(Task work, double cost_us, Task then) override {
    work();
    post(std::move(then), cost_us);
  }

  std::unique_lock<std::mutex> lock() override { return std::unique_lock<std::mutex>(mu_); }

  bool wait_until(std::unique_lock<std::mutex>&, const std::function<bool()>& pred, double) override {
    while (!pred())
      if (!step()) throw SimStalled("simulation has no pending events but the awaited condition is unmet");
    return true;
  }

  bool step() {
    if (events_.empty()) return false;
    Event ev = events_.top();
    events_.pop();
    now_ = ev.time;
    ++executed_;
    ev.fn();
    return true;
  }

  void run() {
    while (step()) {
    }
  }

  std::size_t pending() const { return events_.size(); }
  std::uint64_t executed() const { return executed_; }

  void trace(std::string what) override {
    if (tracing_) timeline_.push_back({now_, std::move(what)});
  }
  void set_tracing(bool on) { tracing_ = on; }
  const std::vector<TraceEvent>& timeline() const { return timeline_; }

 private:
  struct Event {
    double time;
    std::uint64_t seq;
    Task fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };

  double now_ = 0;
  std::uint64_t seq_ = 0;
  std::uint64_t executed_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> events_;
  std::mutex mu_;
  bool tracing_ = true;
  std::vector<TraceEvent> timeline_;
};

// Wall-clock runtime: one event-loop thread runs tasks under the state lock;
// offloaded work goes to `workers` threads.
class ThreadRuntime final : public Runtime {
 public:
  explicit ThreadRuntime(unsigned workers = 1) : start_(Clock::now()) {
    if (workers == 0) workers = 1;
    loop_ = std::thread([this] { loop(); });
    for (unsigned i = 0; i < workers; ++i) pool_.emplace_back([this] { work_loop(); });
  }

  ~ThreadRuntime() override { stop(); }

  ThreadRuntime(const ThreadRuntime&) = delete;
  ThreadRuntime& operator=(const ThreadRuntime&) = delete;

  void stop() {
    {
      std::lock_guard<std::mutex> g(queue_mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    queue_cv_.notify_all();
    work_cv_.notify_all();
    if (loop_.joinable()) loop_.join();
    for (auto& t : pool_)
      if (t.joinable()) t.join();
    state_cv_.notify_all();
  }

  double now_us() const override {
    return std::chrono::duration<double, std::micro>(Clock::now() - start_).count();
  }
  bool virtual_time() const override { return false; }

  void post(Task fn, double delay_us = 0.0) override {
    const auto due = Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double, std::micro>(delay_us > 0 ? delay_us : 0));
    {
      std::lock_guard<std::mutex> g(queue_mu_);
      if (stopping_) return;
      timed_.emplace(std::make_pair(due, seq_++), std::move(fn));
    }
    queue_cv_.notify_one();
  }

  void offload(Task work, double, Task then) override {
    {
      std::lock_guard<std::mutex> g(queue_mu_);
      if (stopping_) return;
      work_.emplace_back(std::move(work), std::move(then));
    }
    work_cv_.notify_one();
  }

  std::unique_lock<std::mutex> lock() override { return std::unique_lock<std::mutex>(state_mu_); }

  bool wait_until(std::unique_lock<std::mutex>& lk, const std::function<bool()>& pred, double timeout_s) override {
    return state_cv_.wait_for(lk, std::chrono::duration<double>(timeout_s), pred);
  }

 private:
  using Clock = std::chrono::steady_clock;
  using Key = std::pair<Clock::time_point, std::uint64_t>;

  void loop() {
    for (;;) {
      Task fn;
      {
        std::unique_lock<std::mutex> g(queue_mu_);
        for (;;) {
          if (stopping_) return;
          if (!timed_.empty()) {
            auto due = timed_.begin()->first.first;
            if (due <= Clock::now()) break;
            queue_cv_.wait_until(g, due);
          } else {
            queue_cv_.wait(g);
          }
        }
        fn = std::move(timed_.begin()->second);
        timed_.erase(timed_.begin());
      }
      {
        std::lock_guard<std::mutex> s(state_mu_);
        try {
          fn();
        } catch (const std::exception& e) {
          std::cerr << "copa runtime: task failed: " << e.what() << "\n";
        }
      }
      state_cv_.notify_all();
    }
  }

  void work_loop() {
    for (;;) {
      std::pair<Task, Task> item;
      {
        std::unique_lock<std::mutex> g(queue_mu_);
        work_cv_.wait(g, [this] { return stopping_ || !work_.empty(); });
        if (stopping_) return;
        item = std::move(work_.front());
        work_.pop_front();
      }
      try {
        item.first();
      } catch (const std::exception& e) {
        std::cerr << "copa runtime: offloaded work failed: " << e.what() << "\n";
      }
      post(std::move(item.second));
    }
  }

  Clock::time_point start_;
  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::condition_variable work_cv_;
  std::map<Key, Task> timed_;
  std::deque<std::pair<Task, Task>> work_;
  std::uint64_t seq_ = 0;
  bool stopping_ = false;

  std::mutex state_mu_;
  std::condition_variable state_cv_;

  std::thread loop_;
  std::vector<std::thread> pool_;
};

}  // namespace copa
