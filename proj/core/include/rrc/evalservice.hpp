#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrc/evalcore.hpp"
#include "rrc/util/time.hpp"

/// Filesystem job queue for submission evaluation.
///
///     queue/<state>/<submission>_<protocol>.json   state = pending|claimed|done|failed
///     queue/locks/<submission>_<protocol>.lock
///     submissions/<sid>/results/<protocol>/        committed results
///
/// A job file lives in exactly one state directory; moves are rename(2) and
/// every move happens under the job's flock. Results are committed by
/// renaming a staged directory into place only if absent, so the first
/// durable result wins and re-execution is unobservable.
namespace rrc::evalservice {

enum class JobState { Pending, Claimed, Done, Failed };

std::string_view to_string(JobState s);

struct Claim {
  std::string worker;
  std::string claimed_at;
  std::string lease_expiry;
  std::string token;
};

struct Job {
  std::string submission;
  std::string protocol;
  JobState state = JobState::Pending;
  std::optional<Claim> claim;
  int attempts = 0;
  std::optional<std::string> last_error;
  std::string enqueued_at;

  std::string name() const { return submission + "_" + protocol; }
};

nlohmann::json to_json(const Job& j);
Job job_from_json(const nlohmann::json& j);

struct Counts {
  std::size_t pending = 0;
  std::size_t claimed = 0;
  std::size_t done = 0;
  std::size_t failed = 0;

  std::size_t total() const { return pending + claimed + done + failed; }
};

inline constexpr int kDefaultMaxAttempts = 3;
inline constexpr std::chrono::milliseconds kDefaultLease{600'000};

class Queue {
 public:
  explicit Queue(std::filesystem::path store_root, Clock clock = system_clock(),
                 int max_attempts = kDefaultMaxAttempts);

  /// One pending job per protocol; existing jobs are left alone. Throws
  /// NotValidated unless `submissions/<sid>/validation.json` reports ok.
  std::vector<Job> enqueue(std::string_view submission, const std::vector<std::string>& protocols);

  /// Oldest pending job (FIFO by enqueue time), or none.
  std::optional<Job> claim_next(std::string_view worker,
                                const std::optional<std::string>& protocol = std::nullopt,
                                std::chrono::milliseconds lease = kDefaultLease);

  /// Commits results and moves the job to done. Throws LeaseExpired when the
  /// caller's claim is no longer live; the store is then left untouched.
  void complete(const Job& job, const evalcore::ResultFiles& results);

  /// attempts+1; back to pending while attempts < max, else failed.
  Job fail(const Job& job, std::string_view error);

  /// Claimed jobs whose lease ended before `now` go back to pending. A reap
  /// is not an attempt.
  int reap_leases(TimePoint now);

  std::optional<Job> find(std::string_view submission, std::string_view protocol) const;
  std::vector<Job> list(JobState state) const;

  /// Counts taken while every job is locked: a consistent cut.
  Counts counts() const;

  std::filesystem::path results_dir(std::string_view submission, std::string_view protocol) const;
  const std::filesystem::path& root() const noexcept { return root_; }
  TimePoint now() const { return clock_(); }

 private:
  std::filesystem::path state_dir(JobState s) const;
  std::filesystem::path lock_path(std::string_view name) const;
  std::optional<std::pair<JobState, Job>> locate(std::string_view name) const;
  void move(const Job& job, JobState from, JobState to);

  std::filesystem::path root_;
  std::filesystem::path queue_;
  Clock clock_;
  int max_attempts_;
};

/// Turns a claimed job into result files.
using Evaluator = std::function<evalcore::ResultFiles(const Job&)>;

/// The production evaluator: reads `submissions/<sid>/submission.json`
/// (`task`, `snapshot`), the task descriptor, the frozen GT and the archive.
Evaluator store_evaluator(const std::filesystem::path& store_root);

struct WorkerOptions {
  std::string worker_id;
  std::optional<std::string> protocol;
  std::chrono::milliseconds lease = kDefaultLease;
  std::chrono::milliseconds poll{2000};
  std::chrono::milliseconds jitter{500};
  /// Return from run() once the queue has nothing pending or claimed.
  bool exit_when_idle = false;
  const std::atomic<bool>* stop = nullptr;
};

class Worker {
 public:
  Worker(Queue& queue, Evaluator evaluator, WorkerOptions options);

  /// Reaps, claims and runs at most one job. True when a job was processed.
  bool run_once();
  void run();

 private:
  Queue& queue_;
  Evaluator evaluator_;
  WorkerOptions options_;
};

}  // namespace rrc::evalservice
