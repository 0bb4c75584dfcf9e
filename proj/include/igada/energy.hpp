#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "igada/dataset.hpp"

namespace igada {

struct TraceRecord {
  double minute = 0;  // minutes since an arbitrary origin
  int decided_class = 1;
};

struct EnergyReplayOptions {
  double energy_per_sampling_mwh = 3.73;
  double base_interval_min = 4;
  double low_interval_min = 8;   // class 0: sample less often
  double high_interval_min = 2;  // class 2: sample more often

  void validate() const {
    if (!(energy_per_sampling_mwh >= 0)) throw ValidationError("energy per sampling must be >= 0");
    if (!(base_interval_min > 0 && low_interval_min > 0 && high_interval_min > 0))
      throw ValidationError("sampling intervals must be positive");
  }
};

struct EnergyLedger {
  double energy_per_sampling_mwh = 3.73;
  long long saved_samplings = 0;
  long long extra_samplings = 0;
  double saved_energy_mwh = 0;
  double extra_energy_mwh = 0;
  std::vector<double> class_hours = std::vector<double>(3, 0.0);

  static EnergyLedger from_counts(long long saved, long long extra, double per_sampling) {
    EnergyLedger l;
    l.energy_per_sampling_mwh = per_sampling;
    l.saved_samplings = saved;
    l.extra_samplings = extra;
    l.saved_energy_mwh = static_cast<double>(saved) * per_sampling;
    l.extra_energy_mwh = static_cast<double>(extra) * per_sampling;
    return l;
  }

  nlohmann::json to_json() const {
    return {{"energy_per_sampling_mwh", energy_per_sampling_mwh},
            {"saved_samplings", saved_samplings},
            {"extra_samplings", extra_samplings},
            {"saved_energy_mwh", saved_energy_mwh},
            {"extra_energy_mwh", extra_energy_mwh},
            {"class_hours", class_hours}};
  }
};

/// Minutes from a numeric field or from "YYYY-MM-DD[ T]HH:MM[:SS]".
inline std::optional<double> parse_trace_time(std::string_view s) {
  s = detail::trim(s);
  if (auto v = detail::parse_double(s)) return v;
  int y, mo, d, h, mi;
  double sec = 0;
  char sep;
  std::string buf(s);
  int n = std::sscanf(buf.c_str(), "%d-%d-%d%c%d:%d:%lf", &y, &mo, &d, &sep, &h, &mi, &sec);
  if (n < 6 || (sep != ' ' && sep != 'T')) return std::nullopt;
  using namespace std::chrono;
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 || sec >= 61) return std::nullopt;
  double days = static_cast<double>(sys_days{ymd}.time_since_epoch().count());
  return days * 1440.0 + h * 60.0 + mi + sec / 60.0;
}

/// Two columns, timestamp and decided class (0 reduce, 1 keep, 2 increase).
/// An optional header line is skipped. Timestamps must strictly increase.
inline std::vector<TraceRecord> parse_decision_trace(std::istream& in) {
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    auto fields = detail::split_fields(body, ',');
    if (fields.size() != 2) throw ParseError(lineno, "expected timestamp,class");
    auto ts = parse_trace_time(fields[0]);
    auto cls = detail::parse_integer(detail::trim(fields[1]));
    if (!ts || !cls) {
      if (first) {  // header
        first = false;
        continue;
      }
      throw ParseError(lineno, "malformed timestamp or class");
    }
    first = false;
    if (*cls < 0 || *cls > 2) throw ParseError(lineno, "decided class must be 0, 1 or 2");
    if (!out.empty() && !(*ts > out.back().minute)) throw ParseError(lineno, "timestamps are not strictly increasing");
    out.push_back({*ts, static_cast<int>(*cls)});
  }
  return out;
}

/// Record i holds from its timestamp until the next one; the last record
/// holds for one base interval. Runs of equal decisions form spans. A class-0
/// span of length L saves floor(L/base) - floor(L/low) samplings, a class-2
/// span costs floor(L/high) - floor(L/base) extra ones.
inline EnergyLedger energy_replay(const std::vector<TraceRecord>& trace, const EnergyReplayOptions& opt = {}) {
  opt.validate();
  long long saved = 0, extra = 0;
  std::vector<double> minutes(3, 0.0);
  // Tolerates timestamp round-off such as 7.9999999 minutes.
  auto whole = [](double x) { return static_cast<long long>(std::floor(x + 1e-9)); };
  std::size_t i = 0;
  while (i < trace.size()) {
    std::size_t j = i;
    while (j + 1 < trace.size() && trace[j + 1].decided_class == trace[i].decided_class) ++j;
    double end = j + 1 < trace.size() ? trace[j + 1].minute : trace[j].minute + opt.base_interval_min;
    double span = end - trace[i].minute;
    minutes[static_cast<std::size_t>(trace[i].decided_class)] += span;
    if (trace[i].decided_class == 0)
      saved += whole(span / opt.base_interval_min) -
               whole(span / opt.low_interval_min);
    else if (trace[i].decided_class == 2)
      extra += whole(span / opt.high_interval_min) -
               whole(span / opt.base_interval_min);
    i = j + 1;
  }
  auto ledger = EnergyLedger::from_counts(saved, extra, opt.energy_per_sampling_mwh);
  for (std::size_t c = 0; c < 3; ++c) ledger.class_hours[c] = minutes[c] / 60.0;
  return ledger;
}

inline EnergyLedger energy_replay_file(const std::string& path, const EnergyReplayOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open decision trace " + path);
  return energy_replay(parse_decision_trace(in), opt);
}

}  // namespace igada
