#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "rrc/error.hpp"
#include "rrc/portal.hpp"
#include "rrc/util/fs.hpp"

namespace rrc::portal {

namespace stdfs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kRoleNames[] = {"user", "organizer", "admin"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool valid_email(std::string_view e) {
  const auto at = e.find('@');
  return e.size() <= 254 && at != std::string_view::npos && at > 0 && at + 1 < e.size() &&
         e.find('@', at + 1) == std::string_view::npos &&
         std::none_of(e.begin(), e.end(),
                      [](char c) { return std::isspace(static_cast<unsigned char>(c)) || c < 0x20; });
}

json account_json(const UserAccount& u) {
  return {{"id", u.id},
          {"email", u.email},
          {"display_name", u.display_name},
          {"role", to_string(u.role)},
          {"password_hash", u.password_hash},
          {"created_at", u.created_at}};
}

UserAccount account_from_json(const json& j) {
  return {j.at("id"), j.at("email"), j.at("display_name"),
          user_role_from_string(j.at("role").get<std::string>()), j.at("password_hash"),
          j.at("created_at")};
}

}  // namespace

std::string_view to_string(UserRole r) { return kRoleNames[static_cast<int>(r)]; }

UserRole user_role_from_string(std::string_view s) {
  for (int i = 0; i < 3; ++i) {
    if (kRoleNames[i] == s) return static_cast<UserRole>(i);
  }
  throw Error("BadValue", fmt::format("unknown role '{}'", s));
}

json public_json(const UserAccount& u) {
  return {{"id", u.id}, {"email", u.email}, {"display_name", u.display_name},
          {"role", to_string(u.role)}, {"created_at", u.created_at}};
}

Accounts::Accounts(stdfs::path store_root, Clock clock, PasswordCost cost)
    : root_(std::move(store_root)), clock_(std::move(clock)), cost_(cost) {
  stdfs::create_directories(root_ / "users" / "email");
  stdfs::create_directories(root_ / "sessions");
}

stdfs::path Accounts::user_path(std::string_view uid) const {
  if (uid.size() != 16 || uid.find_first_not_of("0123456789abcdef") != std::string_view::npos) {
    throw Error("UnknownUser", fmt::format("unknown user '{}'", uid));
  }
  return root_ / "users" / (std::string(uid) + ".json");
}

stdfs::path Accounts::email_path(std::string_view email) const {
  return root_ / "users" / "email" / sha256_hex(lower(email));
}

UserAccount Accounts::register_user(std::string_view email, std::string_view password,
                                    std::string_view display_name) {
  if (!valid_email(email)) throw Error("BadEmail", "not a valid email address");
  if (password.size() < 8) throw Error("WeakPassword", "passwords need at least 8 characters");
  UserAccount u;
  u.id = random_hex(8);
  u.email = std::string(email);
  u.display_name = display_name.empty() ? std::string(email.substr(0, email.find('@')))
                                        : std::string(display_name);
  u.password_hash = password_hash(password, cost_);
  u.created_at = to_iso8601(clock_());

  fs::FileLock lock(root_ / "users" / "register.lock");
  const bool first = fs::list_names(root_ / "users" / "email").empty();
  u.role = first ? UserRole::Admin : UserRole::User;
  fs::write_file_atomic(user_path(u.id), account_json(u).dump(2) + "\n");
  if (!fs::write_file_if_absent(email_path(email), u.id)) {
    stdfs::remove(user_path(u.id));
    throw Error("DuplicateEmail", "an account with this email already exists");
  }
  return u;
}

Session Accounts::login(std::string_view email, std::string_view password) {
  const auto uid = fs::try_read_file(email_path(email));
  if (!uid) {
    // Spend the same effort either way.
    password_verify(password_hash("x", cost_), password);
    throw Error("BadCredentials", "wrong email or password");
  }
  const UserAccount u = load(*uid);
  if (!password_verify(u.password_hash, password)) {
    throw Error("BadCredentials", "wrong email or password");
  }
  Session s{random_hex(32), u.id, to_iso8601(clock_() + kSessionLifetime)};
  fs::write_file_atomic(root_ / "sessions" / (sha256_hex(s.token) + ".json"),
                        json{{"user", s.user}, {"expires_at", s.expires_at}}.dump() + "\n");
  return s;
}

std::optional<UserAccount> Accounts::authenticate(std::string_view token) const {
  if (token.empty() || token.size() > 128) return std::nullopt;
  const auto text = fs::try_read_file(root_ / "sessions" / (sha256_hex(token) + ".json"));
  if (!text) return std::nullopt;
  const auto j = json::parse(*text);
  if (from_iso8601(j.at("expires_at").get<std::string>()) <= clock_()) return std::nullopt;
  try {
    return load(j.at("user").get<std::string>());
  } catch (const Error&) {
    return std::nullopt;
  }
}

UserAccount Accounts::load(std::string_view uid) const {
  const auto text = fs::try_read_file(user_path(uid));
  if (!text) throw Error("UnknownUser", fmt::format("unknown user '{}'", uid));
  return account_from_json(json::parse(*text));
}

UserAccount Accounts::set_role(std::string_view uid, UserRole role) {
  fs::FileLock lock(root_ / "users" / "register.lock");
  UserAccount u = load(uid);
  u.role = role;
  fs::write_file_atomic(user_path(uid), account_json(u).dump(2) + "\n");
  return u;
}

// ---- submissions / rankings ------------------------------------------------------

json to_json(const SubmissionRecord& s) {
  return {{"id", s.id},
          {"task", s.task},
          {"owner", s.owner},
          {"method", s.method},
          {"description", s.description},
          {"uploaded_at", s.uploaded_at},
          {"visibility", s.is_public ? "public" : "private"},
          {"snapshot", s.snapshot},
          {"protocols", s.protocols}};
}

SubmissionRecord submission_from_json(const json& j) {
  SubmissionRecord s;
  s.id = j.at("id");
  s.task = j.at("task");
  s.owner = j.at("owner");
  s.method = j.at("method");
  s.description = j.value("description", std::string());
  s.uploaded_at = j.at("uploaded_at");
  s.is_public = j.at("visibility") == "public";
  s.snapshot = j.at("snapshot");
  s.protocols = j.at("protocols").get<std::vector<std::string>>();
  return s;
}

void sort_ranking(std::vector<RankingRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const RankingRow& a, const RankingRow& b) {
    if (a.hmean != b.hmean) return a.hmean > b.hmean;
    if (a.date != b.date) return a.date < b.date;
    return a.submission < b.submission;
  });
}

std::vector<SotaPoint> sota_series(std::vector<RankingRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const RankingRow& a, const RankingRow& b) {
    return std::tie(a.date, a.submission) < std::tie(b.date, b.submission);
  });
  std::vector<SotaPoint> out;
  const RankingRow* best = nullptr;
  for (const auto& r : rows) {
    if (!best || r.hmean > best->hmean) best = &r;
    const std::string day = r.date.substr(0, 10);
    SotaPoint p{day, best->hmean, best->method, best->submission};
    if (!out.empty() && out.back().date == day) {
      out.back() = p;
    } else {
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace rrc::portal
