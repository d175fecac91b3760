#ifndef DPLA_CONFIG_HPP
#define DPLA_CONFIG_HPP

// Experiment configuration files.
//
// Grammar: one `key = value` per line; `#` starts a comment; blank lines are
// ignored. Keys are listed in detail::key_table(). A `preset = <name>` line
// (anywhere in the file) is applied first and every other key overrides it.
// A key may appear at most once.
//
//   preset = cifar10-like
//   epochs = 20          # override the preset
//   regime = reversed
//
// Booleans are `true` / `false`; `regime` is consistent | uniform | reversed;
// `optimizer` is adam | sgd. `seed` seeds both the data generator and the
// model / batch order.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dpla/trainer.hpp"

namespace dpla {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::string key, std::size_t line)
      : std::runtime_error(what), key_(std::move(key)), line_(line) {}
  const std::string& key() const noexcept { return key_; }
  std::size_t line() const noexcept { return line_; }  // 0 when not tied to a line

 private:
  std::string key_;
  std::size_t line_;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"toy", "cifar10-like", "cifar100-like", "svhn-like"};
  return names;
}

/// Hyperparameters of a named preset on top of ExperimentConfig defaults.
/// "toy" is the 3 known + 3 novel Gaussian problem; the "-like" presets carry
/// the per-dataset counts and adjustment constants of the reference
/// experiments on a synthetic stand-in (point `cifar_path` at real data).
inline ExperimentConfig preset_config(std::string_view name) {
  ExperimentConfig c;
  if (name == "toy") return c;
  if (name == "cifar10-like" || name == "svhn-like") {
    c.data.known_classes = 5;
    c.data.novel_classes = 5;
    c.data.labeled_head = 500;
    c.data.unlabeled_head = 4000;
    c.data.novel_head = 4500;
    c.data.gamma_labeled = c.data.gamma_unlabeled = c.data.gamma_novel = 100.0;
    c.omega_input_size = 1024.0;
    c.adjust = AdjustConfig{};  // tau 2 / 2, alpha 1.2, beta 0.8, rho 0.5, lambda 0.5 / 0.5
    c.epochs = 50;
    if (name == "cifar10-like") {
      c.optimizer = Sgd{5e-4, 0.9};
    } else {
      c.optimizer = Adam{5e-4};
    }
    return c;
  }
  if (name == "cifar100-like") {
    c.data.known_classes = 50;
    c.data.novel_classes = 50;
    c.data.labeled_head = 50;
    c.data.unlabeled_head = 400;
    c.data.novel_head = 450;
    c.data.gamma_labeled = c.data.gamma_unlabeled = c.data.gamma_novel = 100.0;
    c.data.input_dim = 16;
    c.omega_input_size = 1024.0;
    c.adjust.tau_1 = 1.0;
    c.adjust.tau_2 = 1.0;
    c.adjust.alpha = 1.05;
    c.adjust.beta = 0.95;
    c.epochs = 50;
    c.optimizer = Adam{5e-4};
    return c;
  }
  throw std::invalid_argument("unknown preset '" + std::string(name) + "'");
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::optional<T> parse_number(const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

struct Entry {
  std::string value;
  std::size_t line;
};

// Setter returns an error message, or empty on success.
struct KeySpec {
  std::function<std::string(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline std::string want_count(std::size_t& field, const std::string& v, std::size_t min) {
  const auto n = parse_number<unsigned long long>(v);
  if (!n) return "expected a non-negative integer";
  if (*n < min) return "must be >= " + std::to_string(min);
  field = static_cast<std::size_t>(*n);
  return {};
}

inline std::string want_real(double& field, const std::string& v, const std::function<bool(double)>& ok,
                             const char* rule) {
  const auto d = parse_number<double>(v);
  if (!d || !std::isfinite(*d)) return "expected a finite number";
  if (!ok(*d)) return std::string("must be ") + rule;
  field = *d;
  return {};
}

inline double& optimizer_lr(Optimizer& o) {
  return std::visit([](auto& x) -> double& { return x.lr; }, o);
}

inline const std::map<std::string, KeySpec>& key_table() {
  using C = ExperimentConfig;
  auto count = [](std::size_t C::*member, std::size_t min) {
    return KeySpec{[=](C& c, const std::string& v) { return want_count(c.*member, v, min); },
                   [=](const C& c) { return std::to_string(c.*member); }};
  };
  auto data_count = [](std::size_t DatasetSpec::*member, std::size_t min) {
    return KeySpec{[=](C& c, const std::string& v) { return want_count(c.data.*member, v, min); },
                   [=](const C& c) { return std::to_string(c.data.*member); }};
  };
  auto real = [](std::function<double&(C&)> field, std::function<bool(double)> ok, const char* rule) {
    return KeySpec{[=](C& c, const std::string& v) { return want_real(field(c), v, ok, rule); },
                   [=](const C& c) { return format_double(field(const_cast<C&>(c))); }};
  };
  auto positive = [](double x) { return x > 0.0; };
  auto at_least_one = [](double x) { return x >= 1.0; };
  auto nonneg = [](double x) { return x >= 0.0; };
  auto any = [](double) { return true; };
  auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };

  static const std::map<std::string, KeySpec> table{
      {"known_classes", data_count(&DatasetSpec::known_classes, 1)},
      {"novel_classes", data_count(&DatasetSpec::novel_classes, 0)},
      {"labeled_head", data_count(&DatasetSpec::labeled_head, 1)},
      {"unlabeled_head", data_count(&DatasetSpec::unlabeled_head, 1)},
      {"novel_head", data_count(&DatasetSpec::novel_head, 1)},
      {"input_dim", data_count(&DatasetSpec::input_dim, 1)},
      {"gamma_labeled", real([](C& c) -> double& { return c.data.gamma_labeled; }, at_least_one, ">= 1")},
      {"gamma_unlabeled", real([](C& c) -> double& { return c.data.gamma_unlabeled; }, at_least_one, ">= 1")},
      {"gamma_novel", real([](C& c) -> double& { return c.data.gamma_novel; }, at_least_one, ">= 1")},
      {"regime", KeySpec{[](C& c, const std::string& v) -> std::string {
                           if (v == "consistent") c.data.regime = Regime::Consistent;
                           else if (v == "uniform") c.data.regime = Regime::Uniform;
                           else if (v == "reversed") c.data.regime = Regime::Reversed;
                           else return "expected consistent, uniform or reversed";
                           return {};
                         },
                         [](const C& c) { return to_string(c.data.regime); }}},
      {"seed", KeySpec{[](C& c, const std::string& v) -> std::string {
                         const auto n = parse_number<unsigned long long>(v);
                         if (!n) return "expected a non-negative integer";
                         c.seed = c.data.seed = *n;
                         return {};
                       },
                       [](const C& c) { return std::to_string(c.seed); }}},
      {"separation", real([](C& c) -> double& { return c.separation; }, nonneg, ">= 0")},
      {"cifar_path", KeySpec{[](C& c, const std::string& v) -> std::string {
                               c.cifar_path = v;
                               return {};
                             },
                             [](const C& c) { return c.cifar_path; }}},
      {"test_per_class", count(&C::test_per_class, 1)},
      {"omega_input_size", real([](C& c) -> double& { return c.omega_input_size; }, nonneg, ">= 0")},
      {"tau_1", real([](C& c) -> double& { return c.adjust.tau_1; }, positive, "> 0")},
      {"tau_2", real([](C& c) -> double& { return c.adjust.tau_2; }, positive, "> 0")},
      {"alpha", real([](C& c) -> double& { return c.adjust.alpha; }, any, "finite")},
      {"beta", real([](C& c) -> double& { return c.adjust.beta; }, any, "finite")},
      {"rho", real([](C& c) -> double& { return c.adjust.rho; }, unit, "in [0, 1]")},
      {"class_base", real([](C& c) -> double& { return c.adjust.class_base; }, positive, "> 0")},
      {"size_base", real([](C& c) -> double& { return c.adjust.size_base; }, positive, "> 0")},
      {"lambda_1", real([](C& c) -> double& { return c.adjust.lambda_1; }, any, "finite")},
      {"lambda_2", real([](C& c) -> double& { return c.adjust.lambda_2; }, any, "finite")},
      {"hidden_dim", count(&C::hidden_dim, 1)},
      {"embed_dim", count(&C::embed_dim, 1)},
      {"optimizer", KeySpec{[](C& c, const std::string& v) -> std::string {
                              // Switching optimizer keeps an explicitly chosen rate.
                              const double lr = optimizer_lr(c.optimizer);
                              if (v == "adam") c.optimizer = Adam{lr};
                              else if (v == "sgd") c.optimizer = Sgd{lr, 0.9};
                              else return "expected adam or sgd";
                              return {};
                            },
                            [](const C& c) {
                              return std::string(std::holds_alternative<Adam>(c.optimizer) ? "adam" : "sgd");
                            }}},
      {"learning_rate", real([](C& c) -> double& { return optimizer_lr(c.optimizer); }, nonneg, ">= 0")},
      {"momentum", KeySpec{[](C& c, const std::string& v) -> std::string {
                             auto* sgd = std::get_if<Sgd>(&c.optimizer);
                             if (!sgd) return "only applies when optimizer = sgd";
                             return want_real(sgd->momentum, v, [](double x) { return x >= 0.0 && x < 1.0; },
                                              "in [0, 1)");
                           },
                           [](const C& c) {
                             const auto* sgd = std::get_if<Sgd>(&c.optimizer);
                             return sgd ? format_double(sgd->momentum) : std::string();
                           }}},
      {"epochs", count(&C::epochs, 1)},
      {"batch_size", count(&C::batch_size, 2)},
      {"baseline", KeySpec{[](C& c, const std::string& v) -> std::string {
                             if (v == "true") c.baseline_mode = true;
                             else if (v == "false") c.baseline_mode = false;
                             else return "expected true or false";
                             return {};
                           },
                           [](const C& c) { return std::string(c.baseline_mode ? "true" : "false"); }}},
      {"pair_threshold", real([](C& c) -> double& { return c.pair_threshold; },
                              [](double x) { return x > -1.0 && x < 1.0; }, "in (-1, 1)")},
  };
  return table;
}

// Keys in a stable order for writing; the optimizer must precede its rate.
inline const std::vector<std::string>& key_order() {
  static const std::vector<std::string> order{
      "known_classes", "novel_classes", "labeled_head", "unlabeled_head", "novel_head", "gamma_labeled",
      "gamma_unlabeled", "gamma_novel", "regime", "input_dim", "seed", "separation", "cifar_path",
      "test_per_class", "omega_input_size", "tau_1", "tau_2", "alpha", "beta", "rho", "class_base", "size_base",
      "lambda_1", "lambda_2", "hidden_dim", "embed_dim", "optimizer", "learning_rate", "momentum", "epochs",
      "batch_size", "baseline", "pair_threshold"};
  return order;
}

}  // namespace detail

/// Applies one key to `cfg`; throws ConfigError naming the key and line.
inline void set_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value,
                           std::size_t line = 0) {
  const auto& table = detail::key_table();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown key '" + key + "'", key, line);
  const std::string err = it->second.set(cfg, value);
  if (!err.empty()) {
    std::string where = line ? " (line " + std::to_string(line) + ")" : "";
    throw ConfigError("key '" + key + "'" + where + ": " + err + ", got '" + value + "'", key, line);
  }
}

/// Every key with its current value, in a fixed order. Feeding the pairs back
/// through set_config_key reproduces `cfg`.
inline std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  const auto& table = detail::key_table();
  for (const auto& key : detail::key_order()) {
    if (key == "momentum" && !std::holds_alternative<Sgd>(cfg.optimizer)) continue;
    if (key == "cifar_path" && cfg.cifar_path.empty()) continue;
    out.emplace_back(key, table.at(key).get(cfg));
  }
  return out;
}

inline std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

/// Parses config text. `origin` names the source in error messages; keys are
/// applied on top of `base` unless the text names its own preset.
inline ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>",
                                          const ExperimentConfig& base = {}) {
  std::map<std::string, detail::Entry> entries;
  std::vector<std::string> order;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::trim(std::string_view(raw).substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'", "", line_no);
    }
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": missing key", "", line_no);
    if (key != "preset" && !detail::key_table().contains(key)) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key + "'", key, line_no);
    }
    if (entries.contains(key)) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "' (first on line " +
                            std::to_string(entries[key].line) + ")",
                        key, line_no);
    }
    entries[key] = {value, line_no};
    order.push_back(key);
  }

  ExperimentConfig cfg = base;
  if (const auto p = entries.find("preset"); p != entries.end()) {
    const auto& names = preset_names();
    if (std::find(names.begin(), names.end(), p->second.value) == names.end()) {
      throw ConfigError(origin + ":" + std::to_string(p->second.line) + ": unknown preset '" + p->second.value + "'",
                        "preset", p->second.line);
    }
    cfg = preset_config(p->second.value);
  }
  // optimizer before learning_rate / momentum so they land on the chosen one.
  std::stable_partition(order.begin(), order.end(), [](const std::string& k) { return k == "optimizer"; });
  for (const auto& key : order) {
    if (key == "preset") continue;
    const auto& e = entries[key];
    try {
      set_config_key(cfg, key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(origin + ":" + std::to_string(e.line) + ": " + err.what(), key, e.line);
    }
  }

  // Cross-field rules, reported against the later of the two lines.
  auto line_of = [&](const char* k) { return entries.contains(k) ? entries[k].line : std::size_t{0}; };
  if (!(cfg.adjust.alpha >= cfg.adjust.beta)) {
    const char* key = line_of("alpha") >= line_of("beta") ? "alpha" : "beta";
    throw ConfigError(origin + ":" + std::to_string(line_of(key)) + ": key '" + key + "': alpha must be >= beta",
                      key, line_of(key));
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& err) {
    throw ConfigError(origin + ": " + err.what(), "", 0);
  }
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'", "", 0);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str(), path);
}

}  // namespace dpla

#endif  // DPLA_CONFIG_HPP
