#include "rrc/evalservice.hpp"

#include <algorithm>
#include <memory>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "rrc/taskdef.hpp"
#include "rrc/util/fs.hpp"
#include "rrc/util/hash.hpp"

namespace rrc::evalservice {

namespace stdfs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kStateNames[] = {"pending", "claimed", "done", "failed"};
constexpr JobState kAllStates[] = {JobState::Pending, JobState::Claimed, JobState::Done,
                                   JobState::Failed};

JobState state_from_string(std::string_view s) {
  for (int i = 0; i < 4; ++i) {
    if (kStateNames[i] == s) return static_cast<JobState>(i);
  }
  throw Error("BadValue", fmt::format("unknown job state '{}'", s));
}

bool valid_part(std::string_view s) {
  return !s.empty() && s.size() <= 128 &&
         std::all_of(s.begin(), s.end(), [](char c) {
           return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
         });
}

void check_job_id(std::string_view submission, std::string_view protocol) {
  // The file name is <submission>_<protocol>, split at the first '_'.
  if (!valid_part(submission) || submission.find('_') != std::string_view::npos ||
      !valid_part(protocol)) {
    throw Error("BadValue", fmt::format("bad job id '{}_{}'", submission, protocol));
  }
}

void log(std::string_view worker, std::string_view msg) {
  fmt::print(stderr, "{} worker {}: {}\n", to_iso8601(std::chrono::system_clock::now()), worker, msg);
}

}  // namespace

std::string_view to_string(JobState s) { return kStateNames[static_cast<int>(s)]; }

json to_json(const Job& j) {
  json claim = nullptr;
  if (j.claim) {
    claim = {{"worker", j.claim->worker},
             {"claimed_at", j.claim->claimed_at},
             {"lease_expiry", j.claim->lease_expiry},
             {"token", j.claim->token}};
  }
  return {{"submission", j.submission},
          {"protocol", j.protocol},
          {"state", to_string(j.state)},
          {"claim", claim},
          {"attempts", j.attempts},
          {"last_error", j.last_error ? json(*j.last_error) : json(nullptr)},
          {"enqueued_at", j.enqueued_at}};
}

Job job_from_json(const json& j) {
  Job job;
  job.submission = j.at("submission");
  job.protocol = j.at("protocol");
  job.state = state_from_string(j.at("state").get<std::string>());
  if (!j.at("claim").is_null()) {
    const auto& c = j.at("claim");
    job.claim = Claim{c.at("worker"), c.at("claimed_at"), c.at("lease_expiry"), c.at("token")};
  }
  job.attempts = j.at("attempts");
  if (!j.at("last_error").is_null()) job.last_error = j.at("last_error").get<std::string>();
  job.enqueued_at = j.at("enqueued_at");
  return job;
}

// ---- Queue -------------------------------------------------------------------

Queue::Queue(stdfs::path store_root, Clock clock, int max_attempts)
    : root_(std::move(store_root)), queue_(root_ / "queue"), clock_(std::move(clock)),
      max_attempts_(max_attempts) {
  for (auto s : kAllStates) stdfs::create_directories(state_dir(s));
  stdfs::create_directories(queue_ / "locks");
}

stdfs::path Queue::state_dir(JobState s) const { return queue_ / std::string(to_string(s)); }

stdfs::path Queue::lock_path(std::string_view name) const {
  return queue_ / "locks" / (std::string(name) + ".lock");
}

stdfs::path Queue::results_dir(std::string_view submission, std::string_view protocol) const {
  return root_ / "submissions" / std::string(submission) / "results" / std::string(protocol);
}

std::optional<std::pair<JobState, Job>> Queue::locate(std::string_view name) const {
  for (auto s : kAllStates) {
    if (auto text = fs::try_read_file(state_dir(s) / (std::string(name) + ".json"))) {
      return std::make_pair(s, job_from_json(json::parse(*text)));
    }
  }
  return std::nullopt;
}

// Caller holds the job lock. The content is rewritten in place first, then
// the file changes directory; readers therefore never see a job twice.
void Queue::move(const Job& job, JobState from, JobState to) {
  const std::string file = job.name() + ".json";
  fs::write_file_atomic(state_dir(from) / file, to_json(job).dump(2) + "\n");
  if (from == to) return;
  if (!fs::rename_noreplace(state_dir(from) / file, state_dir(to) / file)) {
    throw Error("QueueCorrupt", fmt::format("cannot move job {} to {}", job.name(), to_string(to)));
  }
}

std::vector<Job> Queue::enqueue(std::string_view submission,
                                const std::vector<std::string>& protocols) {
  const auto validation = fs::try_read_file(root_ / "submissions" / std::string(submission) /
                                            "validation.json");
  if (!validation || !json::parse(*validation).value("ok", false)) {
    throw Error("NotValidated", fmt::format("submission '{}' has not passed validation", submission));
  }
  std::vector<Job> out;
  for (const auto& protocol : protocols) {
    check_job_id(submission, protocol);
    Job job;
    job.submission = std::string(submission);
    job.protocol = protocol;
    fs::FileLock lock(lock_path(job.name()));
    if (auto existing = locate(job.name())) {
      out.push_back(existing->second);
      continue;
    }
    job.enqueued_at = to_iso8601(clock_());
    fs::write_file_if_absent(state_dir(JobState::Pending) / (job.name() + ".json"),
                             to_json(job).dump(2) + "\n");
    out.push_back(job);
  }
  return out;
}

std::optional<Job> Queue::claim_next(std::string_view worker,
                                     const std::optional<std::string>& protocol,
                                     std::chrono::milliseconds lease) {
  struct Candidate {
    std::string enqueued_at;
    std::string name;
  };
  std::vector<Candidate> candidates;
  for (const auto& file : fs::list_names(state_dir(JobState::Pending))) {
    if (!file.ends_with(".json")) continue;
    auto text = fs::try_read_file(state_dir(JobState::Pending) / file);
    if (!text) continue;  // moved meanwhile
    Job job;
    try {
      job = job_from_json(json::parse(*text));
    } catch (const std::exception&) {
      continue;
    }
    if (protocol && job.protocol != *protocol) continue;
    candidates.push_back({job.enqueued_at, job.name()});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.enqueued_at, a.name) < std::tie(b.enqueued_at, b.name);
  });

  for (const auto& c : candidates) {
    fs::FileLock lock(lock_path(c.name), true);
    if (!lock.owns_lock()) continue;
    auto found = locate(c.name);
    if (!found || found->first != JobState::Pending) continue;
    Job job = found->second;
    const TimePoint now = clock_();
    job.state = JobState::Claimed;
    job.claim = Claim{std::string(worker), to_iso8601(now), to_iso8601(now + lease), random_hex(16)};
    const std::string file = job.name() + ".json";
    if (!fs::rename_noreplace(state_dir(JobState::Pending) / file,
                              state_dir(JobState::Claimed) / file)) {
      continue;
    }
    fs::fault_point("queue.claim.after_rename");
    move(job, JobState::Claimed, JobState::Claimed);
    return job;
  }
  return std::nullopt;
}

void Queue::complete(const Job& job, const evalcore::ResultFiles& results) {
  fs::FileLock lock(lock_path(job.name()));
  const auto found = locate(job.name());
  const bool live = found && found->first == JobState::Claimed && found->second.claim &&
                    job.claim && found->second.claim->token == job.claim->token &&
                    from_iso8601(found->second.claim->lease_expiry) >= clock_();
  if (!live) {
    throw Error("LeaseExpired", fmt::format("claim on {} is no longer held", job.name()));
  }

  const auto final_dir = results_dir(job.submission, job.protocol);
  stdfs::create_directories(final_dir.parent_path());
  const auto staging = fs::temp_sibling(final_dir);
  evalcore::write_result_files(staging, results);
  stdfs::create_directories(staging);
  fs::fault_point("queue.complete.before_commit");
  if (!fs::rename_noreplace(staging, final_dir)) {
    // An earlier execution already committed; evaluation is deterministic.
    stdfs::remove_all(staging);
  }
  fs::fault_point("queue.complete.after_commit");

  Job done = found->second;
  done.state = JobState::Done;
  done.claim.reset();
  move(done, JobState::Claimed, JobState::Done);
}

Job Queue::fail(const Job& job, std::string_view error) {
  fs::FileLock lock(lock_path(job.name()));
  const auto found = locate(job.name());
  if (!found || found->first != JobState::Claimed || !found->second.claim || !job.claim ||
      found->second.claim->token != job.claim->token) {
    throw Error("LeaseExpired", fmt::format("claim on {} is no longer held", job.name()));
  }
  Job j = found->second;
  j.attempts += 1;
  j.last_error = std::string(error);
  j.claim.reset();
  j.state = j.attempts < max_attempts_ ? JobState::Pending : JobState::Failed;
  move(j, JobState::Claimed, j.state);
  return j;
}

int Queue::reap_leases(TimePoint now) {
  int reaped = 0;
  for (const auto& file : fs::list_names(state_dir(JobState::Claimed))) {
    if (!file.ends_with(".json")) continue;
    const std::string name = file.substr(0, file.size() - 5);
    fs::FileLock lock(lock_path(name), true);
    if (!lock.owns_lock()) continue;
    auto found = locate(name);
    if (!found || found->first != JobState::Claimed) continue;
    Job j = found->second;
    if (j.claim && from_iso8601(j.claim->lease_expiry) >= now) continue;
    j.claim.reset();
    j.state = JobState::Pending;
    move(j, JobState::Claimed, JobState::Pending);
    ++reaped;
  }
  return reaped;
}

std::optional<Job> Queue::find(std::string_view submission, std::string_view protocol) const {
  check_job_id(submission, protocol);
  auto found = locate(std::string(submission) + "_" + std::string(protocol));
  if (!found) return std::nullopt;
  return found->second;
}

std::vector<Job> Queue::list(JobState state) const {
  std::vector<Job> out;
  for (const auto& file : fs::list_names(state_dir(state))) {
    if (!file.ends_with(".json")) continue;
    if (auto text = fs::try_read_file(state_dir(state) / file)) {
      out.push_back(job_from_json(json::parse(*text)));
    }
  }
  return out;
}

Counts Queue::counts() const {
  std::vector<std::string> names;
  for (auto s : kAllStates) {
    for (const auto& file : fs::list_names(state_dir(s))) {
      if (file.ends_with(".json")) names.push_back(file.substr(0, file.size() - 5));
    }
  }
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  std::vector<fs::FileLock> locks;
  locks.reserve(names.size());
  for (const auto& n : names) locks.emplace_back(lock_path(n));

  Counts c;
  for (auto s : kAllStates) {
    std::size_t n = 0;
    for (const auto& file : fs::list_names(state_dir(s))) n += file.ends_with(".json");
    switch (s) {
      case JobState::Pending: c.pending = n; break;
      case JobState::Claimed: c.claimed = n; break;
      case JobState::Done: c.done = n; break;
      case JobState::Failed: c.failed = n; break;
    }
  }
  return c;
}

// ---- evaluator / worker --------------------------------------------------------

Evaluator store_evaluator(const stdfs::path& store_root) {
  auto store = std::make_shared<datastore::Store>(store_root);
  return [store](const Job& job) {
    const auto sub_dir = store->root() / "submissions" / job.submission;
    const auto meta = json::parse(fs::read_file(sub_dir / "submission.json"));
    taskdef::TaskStore tasks(*store);
    const auto task = tasks.load(meta.at("task").get<std::string>());
    const auto gt = tasks.snapshot_bytes(meta.at("snapshot").get<std::string>());
    return evalcore::evaluate_archives(gt, fs::read_file(sub_dir / "archive.zip"),
                                       task.protocol(job.protocol), task.input_format);
  };
}

Worker::Worker(Queue& queue, Evaluator evaluator, WorkerOptions options)
    : queue_(queue), evaluator_(std::move(evaluator)), options_(std::move(options)) {
  if (options_.worker_id.empty()) {
    options_.worker_id = fmt::format("{}-{}", random_hex(4), ::getpid());
  }
}

bool Worker::run_once() {
  if (int n = queue_.reap_leases(queue_.now())) {
    log(options_.worker_id, fmt::format("returned {} expired lease(s) to pending", n));
  }
  auto job = queue_.claim_next(options_.worker_id, options_.protocol, options_.lease);
  if (!job) return false;
  evalcore::ResultFiles results;
  try {
    results = evaluator_(*job);
  } catch (const std::exception& e) {
    try {
      const Job after = queue_.fail(*job, e.what());
      log(options_.worker_id, fmt::format("{} failed (attempt {}): {}", job->name(), after.attempts,
                                          e.what()));
    } catch (const Error& lost) {
      log(options_.worker_id, lost.what());
    }
    return true;
  }
  try {
    queue_.complete(*job, results);
  } catch (const Error& e) {
    if (e.code() != "LeaseExpired") throw;
    log(options_.worker_id, e.what());
  }
  return true;
}

void Worker::run() {
  std::mt19937_64 rng(std::random_device{}());
  const auto stopping = [&] { return options_.stop && options_.stop->load(); };
  while (!stopping()) {
    if (run_once()) continue;
    if (options_.exit_when_idle) {
      const auto c = queue_.counts();
      if (c.pending == 0 && c.claimed == 0) return;
    }
    auto wait = options_.poll;
    if (options_.jitter.count() > 0) {
      std::uniform_int_distribution<long> d(-options_.jitter.count(), options_.jitter.count());
      wait += std::chrono::milliseconds(d(rng));
    }
    const auto until = std::chrono::steady_clock::now() + std::max(wait, std::chrono::milliseconds(1));
    while (!stopping() && std::chrono::steady_clock::now() < until) {
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }
}

}  // namespace rrc::evalservice
