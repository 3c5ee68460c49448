#pragma once

// ExperimentConfig and the strict plain-text configuration format:
//
//   # comment
//   model.beta = 0.2
//   grid.dt = 0.05
//
// Every key must appear in the schema; unknown keys are rejected by name.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kpzlab/core/error.hpp"
#include "kpzlab/noise.hpp"

namespace kpzlab {

/// Physical and numerical parameters shared by every experiment.
struct ExperimentConfig {
  int dimension = 3;
  double beta = 0.2;
  double eps = 1.0;
  double horizon = 20.0;
  double dt = 0.05;
  double cell = 0.25;
  std::int64_t samples = 10000;
  std::uint64_t seed = 1;
  int workers = 1;

  [[nodiscard]] std::int64_t steps() const { return std::llround(horizon / dt); }
};

struct Violation {
  std::string constraint;
  std::string message;
};

/// Checks the invariants of an ExperimentConfig. Reports every violation.
inline std::vector<Violation> check_experiment(const ExperimentConfig& c) {
  std::vector<Violation> out;
  auto add = [&](const char* name, std::string msg) { out.push_back({name, std::move(msg)}); };
  if (c.dimension < 3) add("dimension", "d=" + std::to_string(c.dimension) + " must be at least 3");
  if (!(c.beta >= 0.0)) add("beta", "beta=" + std::to_string(c.beta) + " must be nonnegative");
  if (!(c.dt > 0.0)) add("positive-step", "dt=" + std::to_string(c.dt) + " must be positive");
  if (!(c.cell > 0.0)) add("positive-cell", "cell=" + std::to_string(c.cell) + " must be positive");
  if (!(c.horizon > 0.0)) add("horizon", "horizon=" + std::to_string(c.horizon) + " must be positive");
  if (c.dt > 0.0 && c.horizon > 0.0 && !detail::is_multiple(c.horizon, c.dt))
    add("horizon-divisibility",
        "horizon=" + std::to_string(c.horizon) + " is not a multiple of dt=" + std::to_string(c.dt));
  if (!detail::is_power_of_two(c.eps))
    add("dyadic-alignment", "eps=" + std::to_string(c.eps) + " is not a power of two");
  if (c.eps != 1.0 && !(detail::is_short_dyadic(c.dt) && detail::is_short_dyadic(c.cell)))
    add("dyadic-alignment", "eps != 1 needs dyadic dt and cell (dt=" + std::to_string(c.dt) +
                                ", cell=" + std::to_string(c.cell) + ")");
  if (c.samples < 2) add("samples", "samples=" + std::to_string(c.samples) + " must be at least 2");
  if (c.workers < 1) add("workers", "workers=" + std::to_string(c.workers) + " must be at least 1");
  return out;
}

enum class ValueKind { real, integer, text, real_list };

struct SchemaEntry {
  std::string key;
  ValueKind kind;
  std::string default_value;
  std::string help;
};

/// Every accepted key with its default. Subcommand keys live under the
/// subcommand's name.
inline const std::vector<SchemaEntry>& config_schema() {
  static const std::vector<SchemaEntry> schema = {
      {"model.dimension", ValueKind::integer, "3", "spatial dimension d (3 or 4)"},
      {"model.beta", ValueKind::real, "0.2", "disorder strength"},
      {"model.eps", ValueKind::real, "1", "mollification scale, a power of two"},
      {"grid.dt", ValueKind::real, "0.05", "path and noise time step"},
      {"grid.cell", ValueKind::real, "0.25", "noise cell side"},
      {"grid.horizon", ValueKind::real, "20", "polymer horizon T"},
      {"run.samples", ValueKind::integer, "10000", "paths per partition estimate"},
      {"run.seed", ValueKind::integer, "1", "master seed"},
      {"run.workers", ValueKind::integer, "1", "worker threads"},
      {"run.seeds", ValueKind::integer, "200", "independent noise seeds or batches"},
      {"lattice.spacing", ValueKind::real, "0.125", "lattice spacing a_L"},
      {"lattice.dt", ValueKind::real, "0.001953125", "lattice time step"},
      {"lattice.box", ValueKind::real, "6", "periodic box side"},
      {"lattice.time", ValueKind::real, "0.25", "final time t"},
      {"lattice.initial", ValueKind::text, "flat", "flat | bump | droplet"},
      {"lattice.bump_width", ValueKind::real, "0.5", "variance of the Gaussian bump in h0"},
      {"point.x", ValueKind::real_list, "0", "evaluation point (first coordinates; rest zero)"},
      {"point.x0", ValueKind::real_list, "0", "droplet / narrow-wedge source point"},
      {"covariance.separations", ValueKind::real_list, "0,1,2,3", "separations |x| along e1"},
      {"covariance.overlap_horizon", ValueKind::real, "20", "horizon of the overlap estimator"},
      {"powerlaw.separations", ValueKind::real_list, "1,1.5,2,3,4", "separations for the fit"},
      {"powerlaw.horizon", ValueKind::real, "400", "overlap horizon for the fit"},
      {"plateau.horizons", ValueKind::real_list, "5,10,20,40", "horizon grid"},
      {"tiling.levels", ValueKind::real_list, "0,1,2,3", "tiling levels n"},
      {"tiling.pairs", ValueKind::integer, "4000", "path pairs for the L2 gap"},
      {"theorem1.variant", ValueKind::text, "flat", "flat | general | droplet"},
      {"theorem1.eps", ValueKind::real_list, "1,0.5,0.25", "eps sequence"},
      {"theorem1.tmax", ValueKind::real, "4", "horizon of the polymer proxy"},
      {"tails.thetas", ValueKind::real_list, "0.05,0.1,0.15,0.2,0.3,0.4,0.5", "tail thresholds"},
      {"tails.horizons", ValueKind::real_list, "20,40", "horizons for the negative moments"},
      {"split.horizons", ValueKind::real_list, "4,8,16", "bridge horizons"},
      {"split.fraction", ValueKind::real, "0.25", "m / T"},
      {"noise.lambdas", ValueKind::real_list, "1,0.5,0.25", "scales for the scaling check"},
  };
  return schema;
}

inline const SchemaEntry* find_schema_entry(const std::string& key) {
  for (const auto& e : config_schema())
    if (e.key == key) return &e;
  return nullptr;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_real(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = first + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

inline bool parse_integer(const std::string& s, std::int64_t& out) {
  const char* first = s.data();
  const char* last = first + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

/// Shortest round-trip form of a double.
inline std::string format_real(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

}  // namespace detail

/// Parsed, type-checked configuration values keyed by dotted name.
class ConfigValues {
 public:
  ConfigValues() {
    for (const auto& e : config_schema()) values_[e.key] = e.default_value;
  }

  /// Applies "key = value" lines. Unknown keys and malformed lines are
  /// collected as violations rather than thrown one at a time.
  void apply_text(const std::string& text, std::vector<Violation>& errors) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        errors.push_back({"syntax", "line " + std::to_string(lineno) + ": expected key = value"});
        continue;
      }
      set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), errors);
    }
  }

  void set(const std::string& key, const std::string& raw, std::vector<Violation>& errors) {
    const SchemaEntry* e = find_schema_entry(key);
    if (!e) {
      errors.push_back({"unknown-key", "unknown key '" + key + "'"});
      return;
    }
    std::string normalized;
    if (!normalize(*e, raw, normalized)) {
      errors.push_back({"type", "key '" + key + "' has malformed value '" + raw + "'"});
      return;
    }
    values_[key] = normalized;
  }

  [[nodiscard]] double real(const std::string& key) const {
    double v = 0.0;
    detail::parse_real(at(key), v);
    return v;
  }
  [[nodiscard]] std::int64_t integer(const std::string& key) const {
    std::int64_t v = 0;
    detail::parse_integer(at(key), v);
    return v;
  }
  [[nodiscard]] std::string text(const std::string& key) const { return at(key); }
  [[nodiscard]] std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& part : detail::split(at(key), ',')) {
      double v = 0.0;
      detail::parse_real(part, v);
      out.push_back(v);
    }
    return out;
  }

  /// Canonical text form: sorted keys, normalized values. Idempotent under
  /// parse -> normalize.
  [[nodiscard]] std::string normalized_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  [[nodiscard]] ExperimentConfig experiment() const {
    ExperimentConfig c;
    c.dimension = static_cast<int>(integer("model.dimension"));
    c.beta = real("model.beta");
    c.eps = real("model.eps");
    c.horizon = real("grid.horizon");
    c.dt = real("grid.dt");
    c.cell = real("grid.cell");
    c.samples = integer("run.samples");
    c.seed = static_cast<std::uint64_t>(integer("run.seed"));
    c.workers = static_cast<int>(integer("run.workers"));
    return c;
  }

 private:
  [[nodiscard]] const std::string& at(const std::string& key) const {
    const auto it = values_.find(key);
    require(it != values_.end(), ErrorKind::config_error, "unknown key '" + key + "'");
    return it->second;
  }

  static bool normalize(const SchemaEntry& e, const std::string& raw, std::string& out) {
    switch (e.kind) {
      case ValueKind::real: {
        double v;
        if (!detail::parse_real(raw, v)) return false;
        out = detail::format_real(v);
        return true;
      }
      case ValueKind::integer: {
        std::int64_t v;
        if (!detail::parse_integer(raw, v)) return false;
        out = std::to_string(v);
        return true;
      }
      case ValueKind::text:
        if (raw.empty()) return false;
        out = raw;
        return true;
      case ValueKind::real_list: {
        out.clear();
        for (const auto& part : detail::split(raw, ',')) {
          double v;
          if (!detail::parse_real(part, v)) return false;
          if (!out.empty()) out += ",";
          out += detail::format_real(v);
        }
        return !out.empty();
      }
    }
    return false;
  }

  std::map<std::string, std::string> values_;
};

struct ValidationReport {
  ConfigValues values;
  std::vector<Violation> violations;

  [[nodiscard]] bool ok() const { return violations.empty(); }
};

/// Cross-key constraints on top of per-key typing.
inline void check_constraints(const ConfigValues& v, std::vector<Violation>& out) {
  for (auto& viol : check_experiment(v.experiment())) out.push_back(std::move(viol));
  const double aL = v.real("lattice.spacing");
  const double dtL = v.real("lattice.dt");
  const auto d = v.integer("model.dimension");
  if (!(aL > 0.0) || !(dtL > 0.0)) {
    out.push_back({"lattice", "lattice spacing and dt must be positive"});
  } else if (d >= 1 && dtL > aL * aL / (2.0 * static_cast<double>(d)) * (1.0 + 1e-12)) {
    out.push_back({"stability", "lattice.dt=" + detail::format_real(dtL) + " exceeds a_L^2/(2d)=" +
                                    detail::format_real(aL * aL / (2.0 * static_cast<double>(d)))});
  }
  if (d != 3 && d != 4) out.push_back({"dimension", "only d = 3 and d = 4 are built"});
  const std::string ic = v.text("lattice.initial");
  if (ic != "flat" && ic != "bump" && ic != "droplet")
    out.push_back({"initial-condition", "lattice.initial='" + ic + "' is not flat, bump or droplet"});
  const std::string variant = v.text("theorem1.variant");
  if (variant != "flat" && variant != "general" && variant != "droplet")
    out.push_back({"variant", "theorem1.variant='" + variant + "' is not flat, general or droplet"});
  if (v.integer("run.seeds") < 2) out.push_back({"seeds", "run.seeds must be at least 2"});
}

/// Parses the config text plus overrides and reports every violation at once.
inline ValidationReport validate(const std::string& text, const std::vector<std::string>& overrides = {}) {
  ValidationReport r;
  r.values.apply_text(text, r.violations);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      r.violations.push_back({"syntax", "override '" + o + "' is not key=value"});
      continue;
    }
    r.values.set(detail::trim(o.substr(0, eq)), detail::trim(o.substr(eq + 1)), r.violations);
  }
  if (r.violations.empty()) check_constraints(r.values, r.violations);
  return r;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::config_error, "cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// 64-bit FNV-1a of the normalized config text, as 16 hex digits.
inline std::string config_hash(const std::string& normalized) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : normalized) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xF];
  return out;
}

}  // namespace kpzlab
