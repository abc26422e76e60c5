#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrc/util/hash.hpp"
#include "rrc/util/time.hpp"

/// HTTP front end over the shared store, plus the read-only server that runs
/// inside standalone bundles.
///
///     users/<uid>.json, users/email/<sha256(email)>
///     sessions/<sha256(token)>.json
///     submissions/<sid>/{submission.json, archive.zip, validation.json, results/}
namespace rrc::portal {

enum class UserRole { User, Organizer, Admin };

std::string_view to_string(UserRole r);
UserRole user_role_from_string(std::string_view s);

struct UserAccount {
  std::string id;
  std::string email;
  std::string display_name;
  UserRole role = UserRole::User;
  std::string password_hash;
  std::string created_at;
};

/// Everything but the password hash.
nlohmann::json public_json(const UserAccount& u);

struct Session {
  std::string token;
  std::string user;
  std::string expires_at;
};

inline constexpr std::chrono::hours kSessionLifetime{24 * 30};

class Accounts {
 public:
  Accounts(std::filesystem::path store_root, Clock clock, PasswordCost cost);

  /// The first account ever registered becomes admin. Throws BadEmail,
  /// WeakPassword, DuplicateEmail.
  UserAccount register_user(std::string_view email, std::string_view password,
                            std::string_view display_name);
  /// Throws BadCredentials.
  Session login(std::string_view email, std::string_view password);
  /// None for unknown or expired tokens.
  std::optional<UserAccount> authenticate(std::string_view token) const;
  UserAccount load(std::string_view uid) const;  // throws UnknownUser
  UserAccount set_role(std::string_view uid, UserRole role);

 private:
  std::filesystem::path user_path(std::string_view uid) const;
  std::filesystem::path email_path(std::string_view email) const;

  std::filesystem::path root_;
  Clock clock_;
  PasswordCost cost_;
};

struct SubmissionRecord {
  std::string id;
  std::string task;
  std::string owner;
  std::string method;
  std::string description;
  std::string uploaded_at;
  bool is_public = false;
  std::string snapshot;
  std::vector<std::string> protocols;
};

nlohmann::json to_json(const SubmissionRecord& s);
SubmissionRecord submission_from_json(const nlohmann::json& j);

struct RankingRow {
  std::string submission;
  std::string method;
  std::string owner;
  std::string date;
  double precision = 0;
  double recall = 0;
  double hmean = 0;
  bool is_private = false;
};

/// hmean descending, then earlier upload, then id.
void sort_ranking(std::vector<RankingRow>& rows);

struct SotaPoint {
  std::string date;
  double best_hmean = 0;
  std::string method;
  std::string submission;
};

/// Running maximum over rows ordered by upload time, one point per day.
std::vector<SotaPoint> sota_series(std::vector<RankingRow> rows);

struct Options {
  std::filesystem::path store;
  PasswordCost password_cost = PasswordCost::interactive();
  std::size_t max_upload_bytes = 256ull << 20;
  std::filesystem::path executable = "/proc/self/exe";
  /// In-process evaluation workers; 0 leaves evaluation to `rrc worker run`.
  int workers = 0;
  Clock clock = system_clock();
};

/// The portal. `bind` then `listen` (blocking) on any thread; `stop` from
/// another.
class Server {
 public:
  explicit Server(Options options);
  ~Server();

  /// Returns the bound port; 0 requests an ephemeral one.
  int bind(const std::string& host, int port);
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Serves a standalone bundle (directory or the bundle zip itself):
/// GET /, GET /api/task, POST /api/evaluate, GET /api/results/<id>/...
class BundleServer {
 public:
  explicit BundleServer(const std::filesystem::path& bundle);
  ~BundleServer();

  int bind(const std::string& host, int port);
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rrc::portal
