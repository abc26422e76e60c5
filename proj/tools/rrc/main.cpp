// rrc: command-line entry point for evaluation, serving, workers and tasks.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "golden.hpp"
#include "rrc/evalcore.hpp"
#include "rrc/evalservice.hpp"
#include "rrc/portal.hpp"
#include "rrc/taskdef.hpp"
#include "rrc/util/fs.hpp"

namespace {

namespace stdfs = std::filesystem;
using namespace rrc;

// Blocks SIGINT/SIGTERM in every thread and calls `on_signal` from a
// dedicated waiter thread when one arrives.
class SignalWaiter {
 public:
  explicit SignalWaiter(std::function<void()> on_signal) {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, nullptr);
    thread_ = std::thread([this, fn = std::move(on_signal)] {
      int sig = 0;
      sigwait(&set_, &sig);
      if (!done_) fn();
    });
  }
  ~SignalWaiter() {
    done_ = true;
    pthread_kill(thread_.native_handle(), SIGTERM);
    thread_.join();
  }

 private:
  sigset_t set_;
  std::atomic<bool> done_{false};
  std::thread thread_;
};

int cmd_eval(const std::string& gt, const std::string& subm, const std::string& kind,
             const std::string& protocol_id, const std::string& grammar, const std::string& params,
             bool per_sample, const std::string& out) {
  evalcore::Protocol protocol;
  protocol.kind = evalcore::kind_from_string(kind);
  protocol.id = protocol_id.empty() ? kind : protocol_id;
  protocol.params = evalcore::params_from_json(
      protocol.kind, params.empty() ? nlohmann::json() : nlohmann::json::parse(params));
  protocol.per_sample = per_sample;
  ingest::FormatSpec format;
  format.grammar = grammar.empty() ? evalcore::default_grammar(protocol.kind)
                                   : ingest::grammar_from_string(grammar);
  try {
    const auto files = evalcore::evaluate_archives(fs::read_file(gt), fs::read_file(subm),
                                                   protocol, format);
    evalcore::write_result_files(out, files);
    std::cout << files.at("overall.json");
  } catch (const evalcore::InvalidSubmission& e) {
    std::cerr << ingest::to_json(e.report()).dump(2) << "\n";
    return 2;
  }
  return 0;
}

int cmd_validate(const std::string& gt, const std::string& subm, const std::string& grammar) {
  const auto ids_gt = evalcore::load_gt(fs::read_file(gt));
  std::set<std::string> ids;
  for (const auto& [id, _] : ids_gt) ids.insert(id);
  const auto report = ingest::validate_archive(
      fs::read_file(subm), {"rrc", ingest::grammar_from_string(grammar)}, ids);
  std::cout << ingest::to_json(report).dump(2) << "\n";
  return report.ok ? 0 : 2;
}

int cmd_serve(const std::string& store, const std::string& bundle, const std::string& host,
              int port, int workers, bool fast_hash) {
  if (!bundle.empty()) {
    portal::BundleServer server(bundle);
    const int bound = server.bind(host, port);
    if (bound < 0) throw Error("BindFailed", fmt::format("cannot listen on {}:{}", host, port));
    fmt::print(stderr, "serving bundle on http://{}:{}/\n", host, bound);
    SignalWaiter waiter([&] { server.stop(); });
    server.listen();
    return 0;
  }
  portal::Options o;
  o.store = store;
  o.workers = workers;
  if (fast_hash) o.password_cost = PasswordCost::minimum();
  portal::Server server(o);
  const int bound = server.bind(host, port);
  if (bound < 0) throw Error("BindFailed", fmt::format("cannot listen on {}:{}", host, port));
  fmt::print(stderr, "portal listening on http://{}:{}/api\n", host, bound);
  SignalWaiter waiter([&] { server.stop(); });
  server.listen();
  return 0;
}

int cmd_worker(const std::string& store, const std::string& protocol, const std::string& id,
               double lease, double poll, bool exit_idle) {
  std::atomic<bool> stop{false};
  evalservice::Queue queue(store);
  evalservice::WorkerOptions o;
  o.worker_id = id;
  if (!protocol.empty()) o.protocol = protocol;
  o.lease = std::chrono::milliseconds(static_cast<long>(lease * 1000));
  o.poll = std::chrono::milliseconds(static_cast<long>(poll * 1000));
  o.jitter = std::chrono::milliseconds(static_cast<long>(poll * 250));
  o.exit_when_idle = exit_idle;
  o.stop = &stop;
  SignalWaiter waiter([&] { stop = true; });
  evalservice::Worker(queue, evalservice::store_evaluator(store), o).run();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust reading evaluation and annotation platform"};
  app.require_subcommand(1);

  std::string gt, subm, kind, protocol_id, grammar, params, out, store, bundle, host = "127.0.0.1",
              task, task_file, worker_id;
  bool per_sample = false, exit_idle = false, fast_hash = false;
  int port = 8080, workers = 0, count = 1000;
  double lease = 600, poll = 2;
  std::uint64_t seed = 20170101;

  auto* eval = app.add_subcommand("eval", "Evaluate a submission archive against a GT archive");
  eval->add_option("--gt", gt, "GT archive (zip)")->required()->check(CLI::ExistingFile);
  eval->add_option("--subm", subm, "Submission archive (zip)")->required()->check(CLI::ExistingFile);
  eval->add_option("--protocol", kind, "iou, deteval, e2e or recognition")->required();
  eval->add_option("--protocol-id", protocol_id, "Protocol id written to the results");
  eval->add_option("--grammar", grammar, "Result line grammar");
  eval->add_option("--params", params, "Protocol parameters as a JSON object");
  eval->add_flag("--per-sample", per_sample, "Also write per_sample/<image>.json");
  eval->add_option("-o,--out", out, "Output directory")->required();

  auto* validate = app.add_subcommand("validate", "Check a submission archive without scoring it");
  validate->add_option("--gt", gt, "GT archive (zip)")->required()->check(CLI::ExistingFile);
  validate->add_option("--subm", subm, "Submission archive")->required()->check(CLI::ExistingFile);
  validate->add_option("--grammar", grammar, "Result line grammar")->default_val("quad");

  auto* serve = app.add_subcommand("serve", "Run the portal or a standalone bundle server");
  auto* store_opt = serve->add_option("--store", store, "Store directory");
  auto* bundle_opt = serve->add_option("--bundle", bundle, "Bundle directory or zip");
  store_opt->excludes(bundle_opt);
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "Listen port (0 picks one)");
  serve->add_option("--workers", workers, "In-process evaluation workers");
  serve->add_flag("--insecure-fast-hash", fast_hash, "Cheapest password hashing (testing only)");

  auto* worker = app.add_subcommand("worker", "Evaluation workers");
  worker->require_subcommand(1);
  auto* worker_run = worker->add_subcommand("run", "Poll the queue and evaluate jobs");
  worker_run->add_option("--store", store, "Store directory")->required();
  worker_run->add_option("--protocol", protocol_id, "Only take jobs for this protocol");
  worker_run->add_option("--lease", lease, "Lease in seconds");
  worker_run->add_option("--poll", poll, "Poll interval in seconds");
  worker_run->add_option("--worker-id", worker_id, "Worker name used in claims");
  worker_run->add_flag("--exit-when-idle", exit_idle, "Stop once nothing is pending or claimed");

  auto* pack = app.add_subcommand("pack", "Build a standalone bundle for a task");
  pack->add_option("--store", store, "Store directory")->required();
  pack->add_option("--task", task, "Task id")->required();
  pack->add_option("--protocol", protocol_id, "Protocol id (default evaluation if omitted)");
  pack->add_option("-o,--out", out, "Bundle zip to write")->required();

  auto* taskcmd = app.add_subcommand("task", "Define and freeze research tasks");
  taskcmd->require_subcommand(1);
  auto* define = taskcmd->add_subcommand("define", "Persist a task descriptor");
  define->add_option("--store", store, "Store directory")->required();
  define->add_option("--file", task_file, "Task JSON")->required()->check(CLI::ExistingFile);
  auto* freeze = taskcmd->add_subcommand("freeze", "Snapshot the task's GT");
  freeze->add_option("--store", store, "Store directory")->required();
  freeze->add_option("--task", task, "Task id")->required();

  auto* golden = app.add_subcommand("golden-vectors", "Export homography test vectors");
  golden->add_option("-o,--out", out, "Output JSON file")->required();
  golden->add_option("--count", count, "Number of quads");
  golden->add_option("--seed", seed, "RNG seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*eval) return cmd_eval(gt, subm, kind, protocol_id, grammar, params, per_sample, out);
    if (*validate) return cmd_validate(gt, subm, grammar);
    if (*serve) {
      if (store.empty() && bundle.empty()) throw CLI::RequiredError("--store or --bundle");
      return cmd_serve(store, bundle, host, port, workers, fast_hash);
    }
    if (*worker_run) return cmd_worker(store, protocol_id, worker_id, lease, poll, exit_idle);
    if (*pack) {
      datastore::Store s(store);
      taskdef::TaskStore tasks(s);
      fs::write_file_atomic(out, tasks.export_bundle(task, protocol_id, "/proc/self/exe"));
      return 0;
    }
    if (*define) {
      datastore::Store s(store);
      taskdef::TaskStore tasks(s);
      const auto t = tasks.define_task(
          taskdef::task_from_json(nlohmann::json::parse(fs::read_file(task_file))));
      std::cout << taskdef::to_json(t).dump(2) << "\n";
      return 0;
    }
    if (*freeze) {
      datastore::Store s(store);
      taskdef::TaskStore tasks(s);
      const auto snap = tasks.freeze_gt(task);
      std::cout << snap.hash << "\n";
      return 0;
    }
    if (*golden) {
      fs::write_file_atomic(out, tools::golden_vectors(seed, count).dump(2) + "\n");
      return 0;
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}: {}\n", e.code(), e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
