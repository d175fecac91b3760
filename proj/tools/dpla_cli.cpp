// dpla: command-line driver.
//
//   dpla gen-data    [--preset P] [--config F] [--seed N]
//   dpla run         [--preset P] [--config F] [--seed N] [--epochs N] [--baseline] --out DIR
//   dpla eval        --checkpoint FILE [--preset P] [--config F] [--seed N] [--out DIR]
//   dpla check-grads
//   dpla export      METRICS_FILE [--out DIR]
//
// Datasets are cached under $DPLA_CACHE_DIR (default ./.dpla-cache), keyed
// by the data-related config keys.

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "dpla/config.hpp"
#include "dpla/content_hash.hpp"
#include "dpla/datagen.hpp"
#include "dpla/eval.hpp"
#include "dpla/gradient_suite.hpp"
#include "dpla/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-5;

struct CommonOptions {
  std::string preset;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool baseline = false;
  std::string out;
};

dpla::ExperimentConfig resolve_config(const CommonOptions& o) {
  dpla::ExperimentConfig cfg;
  if (!o.preset.empty()) cfg = dpla::preset_config(o.preset);
  if (!o.config_path.empty()) {
    std::ifstream f(o.config_path);
    if (!f) throw dpla::ConfigError("cannot read config file '" + o.config_path + "'", "", 0);
    std::ostringstream text;
    text << f.rdbuf();
    cfg = dpla::parse_config_text(text.str(), o.config_path, cfg);
  }
  if (o.seed) dpla::set_config_key(cfg, "seed", std::to_string(*o.seed));
  if (o.epochs) dpla::set_config_key(cfg, "epochs", std::to_string(*o.epochs));
  if (o.baseline) cfg.baseline_mode = true;
  cfg.validate();
  return cfg;
}

fs::path cache_dir() {
  const char* env = std::getenv("DPLA_CACHE_DIR");
  return env && *env ? fs::path(env) : fs::path(".dpla-cache");
}

// Cache file named after the keys that determine the dataset.
fs::path cache_path(const dpla::ExperimentConfig& cfg) {
  static const std::set<std::string> data_keys{
      "known_classes", "novel_classes", "labeled_head", "unlabeled_head", "novel_head", "gamma_labeled",
      "gamma_unlabeled", "gamma_novel", "regime", "input_dim", "seed", "separation", "cifar_path", "test_per_class"};
  std::string key_text;
  for (const auto& [k, v] : dpla::config_entries(cfg)) {
    if (data_keys.contains(k)) key_text += k + "=" + v + "\n";
  }
  const auto* p = reinterpret_cast<const std::uint8_t*>(key_text.data());
  return cache_dir() / ("dataset-" + dpla::git_blob_hash({p, key_text.size()}).substr(0, 16) + ".bin");
}

struct CachedDataset {
  dpla::DatasetBundle bundle;
  fs::path path;
  std::string hash;
};

CachedDataset load_or_generate(const dpla::ExperimentConfig& cfg) {
  const fs::path path = cache_path(cfg);
  std::vector<std::uint8_t> bytes;
  if (fs::exists(path)) {
    bytes = dpla::read_file_bytes(path.string());
  } else {
    const auto fresh = dpla::make_dataset(cfg);
    bytes = dpla::encode_dataset(fresh.splits, fresh.test);
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    dpla::write_file_bytes(tmp.string(), bytes);
    fs::rename(tmp, path);
  }
  return {dpla::decode_dataset(bytes), path, dpla::git_blob_hash(bytes)};
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    f << text;
    if (!f) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

nlohmann::json config_json(const dpla::ExperimentConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : dpla::config_entries(cfg)) {
    const char* end = v.data() + v.size();
    std::uint64_t whole = 0;
    double number = 0.0;
    const auto [wptr, wec] = std::from_chars(v.data(), end, whole);
    const auto [ptr, ec] = std::from_chars(v.data(), end, number);
    if (v == "true" || v == "false") {
      j[k] = v == "true";
    } else if (k == "cifar_path") {
      j[k] = v;
    } else if (wec == std::errc() && wptr == end) {
      j[k] = whole;
    } else if (ec == std::errc() && ptr == end) {
      j[k] = number;
    } else {
      j[k] = v;
    }
  }
  return j;
}

int cmd_gen_data(const CommonOptions& o) {
  const auto cfg = resolve_config(o);
  const auto data = load_or_generate(cfg);
  std::printf("dataset %s\nhash %s\nlabeled %zu unlabeled %zu test %zu\n", data.path.string().c_str(),
              data.hash.c_str(), data.bundle.splits.labeled().size(), data.bundle.splits.unlabeled().rows(),
              data.bundle.test.size());
  return 0;
}

int cmd_run(const CommonOptions& o) {
  const auto cfg = resolve_config(o);
  const auto data = load_or_generate(cfg);
  const auto result = dpla::run_experiment(cfg, data.bundle);

  const fs::path out(o.out);
  fs::create_directories(out);
  std::string records;
  for (const auto& r : result.history) records += dpla::eval::format_record(r) + "\n";
  write_text(out / "metrics.txt", records);
  dpla::write_file_bytes((out / "model.bin").string(), dpla::encode_checkpoint(result.model));

  nlohmann::json manifest;
  manifest["config"] = config_json(cfg);
  manifest["preset"] = o.preset.empty() ? nullptr : nlohmann::json(o.preset);
  manifest["seed"] = cfg.seed;
  manifest["dataset"] = {{"cache_file", data.path.string()}, {"git_blob_sha1", data.hash}};
  manifest["epochs_completed"] = result.history.size();
  manifest["artifacts"] = {"metrics.txt", "model.bin"};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");

  std::printf("%s\n", dpla::eval::format_record(result.final_report()).c_str());
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint) {
  if (!fs::is_regular_file(checkpoint)) {
    std::fprintf(stderr, "dpla eval: checkpoint '%s' not found\n", checkpoint.c_str());
    return 2;
  }
  const auto model = dpla::decode_checkpoint(dpla::read_file_bytes(checkpoint));
  const auto cfg = resolve_config(o);
  if (model.dims != cfg.model_dims()) {
    std::fprintf(stderr, "dpla eval: checkpoint shape does not match the configured model\n");
    return 2;
  }
  const auto data = load_or_generate(cfg);
  const auto report = dpla::evaluate(model, data.bundle.test, data.bundle.splits.known_classes(), 0);
  const std::string line = dpla::eval::format_record(report);
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_text(fs::path(o.out) / "eval.txt", line + "\n");
  }
  std::printf("%s\n", line.c_str());
  return 0;
}

int cmd_check_grads() {
  const auto report = dpla::run_gradient_suite();
  for (const auto& [name, err] : report.errors) {
    std::printf("%-18s %.3e %s\n", name.c_str(), err, err <= kGradTolerance ? "ok" : "FAIL");
  }
  std::printf("max relative error %.3e (tolerance %.0e)\n", report.max_error, kGradTolerance);
  return report.max_error <= kGradTolerance ? 0 : 1;
}

int cmd_export(const std::string& metrics_path, const std::string& out) {
  std::ifstream f(metrics_path);
  if (!f) {
    std::fprintf(stderr, "dpla export: cannot read '%s'\n", metrics_path.c_str());
    return 2;
  }
  std::vector<dpla::eval::MetricsReport> records;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) records.push_back(dpla::eval::parse_record(line));
  }
  const std::string csv = dpla::eval::records_to_csv(records);
  if (out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    fs::create_directories(out);
    write_text(fs::path(out) / "metrics.csv", csv);
  }
  return 0;
}

void add_config_flags(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--preset", o.preset, "named preset")->check(CLI::IsMember(dpla::preset_names()));
  cmd->add_option("--config", o.config_path, "config file (key = value lines)");
  cmd->add_option("--seed", o.seed, "seed for data and training");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-stage post-hoc logit adjustment experiments"};
  app.require_subcommand(1);
  CommonOptions opts;
  std::string checkpoint;
  std::string metrics_path;

  auto* gen = app.add_subcommand("gen-data", "generate and cache the dataset splits");
  add_config_flags(gen, opts);

  auto* run = app.add_subcommand("run", "train and write metrics, manifest and checkpoint");
  add_config_flags(run, opts);
  run->add_option("--epochs", opts.epochs, "override the epoch count")->check(CLI::PositiveNumber);
  run->add_flag("--baseline", opts.baseline, "disable the logit adjustment");
  run->add_option("--out", opts.out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "score a saved checkpoint on the held-out set");
  add_config_flags(ev, opts);
  ev->add_option("--checkpoint", checkpoint, "model.bin written by run")->required();
  ev->add_option("--out", opts.out, "also write eval.txt here");

  auto* grads = app.add_subcommand("check-grads", "finite-difference check of every loss");

  auto* exp = app.add_subcommand("export", "convert metric records to CSV");
  exp->add_option("metrics", metrics_path, "metrics.txt written by run")->required();
  exp->add_option("--out", opts.out, "write metrics.csv here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(opts);
    if (run->parsed()) return cmd_run(opts);
    if (ev->parsed()) return cmd_eval(opts, checkpoint);
    if (grads->parsed()) return cmd_check_grads();
    if (exp->parsed()) return cmd_export(metrics_path, opts.out);
  } catch (const dpla::ConfigError& e) {
    std::fprintf(stderr, "dpla: config error: %s\n", e.what());
    return 2;
  } catch (const dpla::FormatError& e) {
    std::fprintf(stderr, "dpla: %s (byte %zu)\n", e.what(), e.offset());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dpla: %s\n", e.what());
    return 1;
  }
  return 1;
}
