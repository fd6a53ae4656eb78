#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mobiseg/common.hpp"
#include "mobiseg/csv.hpp"

namespace mobiseg {

// ISO weekday: 1 = Monday ... 7 = Sunday.
using Weekday = unsigned;

inline constexpr std::array<std::string_view, 5> weekday_names{"mon", "tue", "wed", "thu", "fri"};

inline Weekday parse_weekday(std::string_view s) {
  for (std::size_t i = 0; i < weekday_names.size(); ++i) {
    if (s == weekday_names[i]) return static_cast<Weekday>(i + 1);
  }
  throw ConfigError("invalid weekday '" + std::string(s) + "' (expected mon..fri)");
}

inline std::string_view weekday_name(Weekday d) {
  if (d < 1 || d > 5) throw std::invalid_argument("weekday_name: not a working day");
  return weekday_names[d - 1];
}

// Local civil timestamp, minute resolution.
struct CivilTime {
  int year = 1970;
  unsigned month = 1;
  unsigned day = 1;
  unsigned hour = 0;
  unsigned minute = 0;

  unsigned minute_of_day() const { return hour * 60 + minute; }

  Weekday weekday() const {
    const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                          std::chrono::day{day}};
    return std::chrono::weekday{std::chrono::sys_days{ymd}}.iso_encoding();
  }

  bool is_working_day() const { return weekday() <= 5; }

  friend bool operator==(const CivilTime&, const CivilTime&) = default;
};

namespace detail {

inline bool parse_uint(std::string_view s, unsigned& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace detail

// Accepts YYYY-MM-DDTHH:MM[:SS] (a space may replace the T). Seconds are
// validated and dropped.
inline std::optional<CivilTime> parse_civil_time(std::string_view s) {
  if (s.size() != 16 && s.size() != 19) return std::nullopt;
  if (s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') return std::nullopt;
  unsigned y, mo, d, h, mi, sec = 0;
  if (!detail::parse_uint(s.substr(0, 4), y) || !detail::parse_uint(s.substr(5, 2), mo) ||
      !detail::parse_uint(s.substr(8, 2), d) || !detail::parse_uint(s.substr(11, 2), h) ||
      !detail::parse_uint(s.substr(14, 2), mi)) {
    return std::nullopt;
  }
  if (s.size() == 19 && (s[16] != ':' || !detail::parse_uint(s.substr(17, 2), sec))) return std::nullopt;
  if (h > 23 || mi > 59 || sec > 59) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{static_cast<int>(y)}, std::chrono::month{mo},
                                        std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return CivilTime{static_cast<int>(y), mo, d, h, mi};
}

inline std::string format_civil_time(const CivilTime& t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02u:%02u:00", t.year, t.month, t.day, t.hour, t.minute);
  return buf;
}

struct PingRecord {
  UserId user_id;
  TowerId tower_id;
  CivilTime time;
};

struct ParsedPings {
  std::vector<PingRecord> records;
  std::size_t malformed = 0;
};

// Reads `user_id,tower_id,timestamp` CSV. Malformed lines are skipped and
// counted; a missing header is fatal.
inline ParsedPings parse_pings(std::istream& in) {
  ParsedPings out;
  std::string line;
  if (!std::getline(in, line)) {
    if (in.bad()) throw DataError("pings: read failure");
    throw DataError("pings: missing header 'user_id,tower_id,timestamp'");
  }
  const auto header = csv::split(csv::trim_line(line));
  if (header.size() != 3 || header[0] != "user_id" || header[1] != "tower_id" || header[2] != "timestamp") {
    throw DataError("pings: missing header 'user_id,tower_id,timestamp'");
  }
  while (std::getline(in, line)) {
    const std::string_view row = csv::trim_line(line);
    if (row.empty()) continue;
    const auto f = csv::split(row);
    if (f.size() != 3 || f[0].empty() || f[1].empty()) {
      ++out.malformed;
      continue;
    }
    auto t = parse_civil_time(f[2]);
    if (!t) {
      ++out.malformed;
      continue;
    }
    out.records.push_back(PingRecord{std::string(f[0]), std::string(f[1]), *t});
  }
  if (in.bad()) throw DataError("pings: read failure");
  return out;
}

// Half-open [start, end) over minutes of the day; wraps midnight when
// start > end.
struct TimeWindow {
  unsigned start = 0;
  unsigned end = 0;

  bool contains(unsigned minute_of_day) const {
    if (start <= end) return minute_of_day >= start && minute_of_day < end;
    return minute_of_day >= start || minute_of_day < end;
  }

  friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

// Parses "HH:MM-HH:MM".
inline TimeWindow parse_time_window(std::string_view s) {
  auto hm = [&](std::string_view t) -> unsigned {
    unsigned h, m;
    if (t.size() != 5 || t[2] != ':' || !detail::parse_uint(t.substr(0, 2), h) ||
        !detail::parse_uint(t.substr(3, 2), m) || h > 24 || m > 59 || (h == 24 && m != 0)) {
      throw ConfigError("invalid time window '" + std::string(s) + "' (expected HH:MM-HH:MM)");
    }
    return h * 60 + m;
  };
  if (s.size() != 11 || s[5] != '-') throw ConfigError("invalid time window '" + std::string(s) + "'");
  TimeWindow w{hm(s.substr(0, 5)), hm(s.substr(6, 5))};
  if (w.start == w.end) throw ConfigError("empty time window '" + std::string(s) + "'");
  return w;
}

inline std::string format_time_window(const TimeWindow& w) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%02u:%02u-%02u:%02u", w.start / 60, w.start % 60, w.end / 60, w.end % 60);
  return buf;
}

enum class ShareRule {
  // (pings at home tower + pings at work tower) / all pings > share
  combined,
  // home-tower share of home-window pings > share, and likewise for work
  per_anchor,
};

inline ShareRule parse_share_rule(std::string_view s) {
  if (s == "combined") return ShareRule::combined;
  if (s == "per_anchor") return ShareRule::per_anchor;
  throw ConfigError("invalid share_rule '" + std::string(s) + "' (expected combined|per_anchor)");
}

inline std::string_view to_string(ShareRule r) { return r == ShareRule::combined ? "combined" : "per_anchor"; }

struct InferConfig {
  TimeWindow home_window{22 * 60, 7 * 60};
  TimeWindow work_window{9 * 60, 17 * 60};
  unsigned min_anchor_pings = 5;
  double anchor_share = 0.5;
  ShareRule share_rule = ShareRule::combined;
  // Restrict every count to pings on this ISO weekday (daily networks).
  std::optional<Weekday> weekday;
};

struct UserAnchor {
  UserId user_id;
  TowerId home_tower;
  TowerId work_tower;
  std::size_t n_pings_total = 0;
  std::size_t n_home_pings = 0;
  std::size_t n_work_pings = 0;
  // bit d-1 set when the user has an anchor ping on ISO weekday d
  std::uint8_t active_weekdays = 0;
  std::optional<int> community;
};

struct RejectionLog {
  std::size_t users_observed = 0;
  std::size_t accepted = 0;
  std::size_t too_few_home = 0;
  std::size_t too_few_work = 0;
  std::size_t low_anchor_share = 0;
  std::size_t no_pings_in_windows = 0;
  // users whose every ping hit a filtered tower
  std::size_t dropped_tower = 0;
  // ping-level count of records at filtered towers
  std::size_t dropped_pings = 0;

  std::size_t rejected() const {
    return too_few_home + too_few_work + low_anchor_share + no_pings_in_windows + dropped_tower;
  }
};

struct InferResult {
  std::vector<UserAnchor> anchors;  // sorted by user_id
  RejectionLog log;
};

namespace detail {

struct UserTally {
  std::map<TowerId, std::size_t> home;
  std::map<TowerId, std::size_t> work;
  std::map<TowerId, std::size_t> all;
  std::size_t total = 0;
  std::size_t home_window_total = 0;
  std::size_t work_window_total = 0;
  std::vector<const PingRecord*> in_windows;
};

// argmax by count; std::map iteration order gives the lowest id on ties
inline std::pair<TowerId, std::size_t> argmax(const std::map<TowerId, std::size_t>& counts) {
  std::pair<TowerId, std::size_t> best{{}, 0};
  for (const auto& [id, n] : counts) {
    if (n > best.second) best = {id, n};
  }
  return best;
}

}  // namespace detail

// Home = most-pinged tower inside the home window, work = most-pinged tower
// inside the work window, both on working days only. Rejections are counted
// in the log, in this precedence: dropped_tower, no_pings_in_windows,
// too_few_home, too_few_work, low_anchor_share.
inline InferResult infer_home_work(std::span<const PingRecord> pings,
                                   const std::unordered_set<TowerId>& kept_towers, const InferConfig& cfg = {}) {
  InferResult result;
  std::map<UserId, detail::UserTally> users;
  for (const auto& p : pings) {
    const Weekday wd = p.time.weekday();
    if (cfg.weekday && wd != *cfg.weekday) continue;
    auto& u = users[p.user_id];
    if (!kept_towers.contains(p.tower_id)) {
      ++result.log.dropped_pings;
      continue;
    }
    ++u.total;
    ++u.all[p.tower_id];
    if (wd > 5) continue;
    const unsigned mod = p.time.minute_of_day();
    bool in_window = false;
    if (cfg.home_window.contains(mod)) {
      ++u.home[p.tower_id];
      ++u.home_window_total;
      in_window = true;
    }
    if (cfg.work_window.contains(mod)) {
      ++u.work[p.tower_id];
      ++u.work_window_total;
      in_window = true;
    }
    if (in_window) u.in_windows.push_back(&p);
  }

  result.log.users_observed = users.size();
  for (auto& [uid, u] : users) {
    if (u.total == 0) {
      ++result.log.dropped_tower;
      continue;
    }
    if (u.home.empty() || u.work.empty()) {
      ++result.log.no_pings_in_windows;
      continue;
    }
    const auto [home, n_home] = detail::argmax(u.home);
    const auto [work, n_work] = detail::argmax(u.work);
    if (n_home < cfg.min_anchor_pings) {
      ++result.log.too_few_home;
      continue;
    }
    if (n_work < cfg.min_anchor_pings) {
      ++result.log.too_few_work;
      continue;
    }
    bool share_ok;
    if (cfg.share_rule == ShareRule::combined) {
      std::size_t at_anchors = u.all[home];
      if (work != home) at_anchors += u.all[work];
      share_ok = static_cast<double>(at_anchors) > cfg.anchor_share * static_cast<double>(u.total);
    } else {
      share_ok = static_cast<double>(n_home) > cfg.anchor_share * static_cast<double>(u.home_window_total) &&
                 static_cast<double>(n_work) > cfg.anchor_share * static_cast<double>(u.work_window_total);
    }
    if (!share_ok) {
      ++result.log.low_anchor_share;
      continue;
    }
    UserAnchor a{uid, home, work, u.total, n_home, n_work, 0, std::nullopt};
    for (const PingRecord* p : u.in_windows) {
      const unsigned mod = p->time.minute_of_day();
      if ((p->tower_id == home && cfg.home_window.contains(mod)) ||
          (p->tower_id == work && cfg.work_window.contains(mod))) {
        a.active_weekdays |= static_cast<std::uint8_t>(1u << (p->time.weekday() - 1));
      }
    }
    result.anchors.push_back(std::move(a));
  }
  result.log.accepted = result.anchors.size();
  return result;
}

}  // namespace mobiseg
