#ifndef DPLA_EVAL_HPP
#define DPLA_EVAL_HPP

// Scoring: Hungarian alignment, clustering accuracy, NMI, and the
// known / novel / all report emitted once per epoch.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpla/datagen.hpp"
#include "dpla/numerics.hpp"

namespace dpla::eval {

struct Assignment {
  std::vector<std::size_t> column_of_row;
  double cost = 0.0;
};

/// Minimum-cost perfect matching on a square cost matrix (shortest augmenting
/// path with row/column potentials, O(n^3)).
inline Assignment hungarian(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw std::invalid_argument("hungarian: cost matrix must be square");
  if (!all_finite(cost.data())) throw std::invalid_argument("hungarian: non-finite cost");
  const std::size_t n = cost.rows();
  Assignment out;
  if (n == 0) return out;
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> row_of_col(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    row_of_col[0] = i;
    std::size_t col = 0;
    std::vector<double> min_slack(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[col] = 1;
      const std::size_t row = row_of_col[col];
      double delta = inf;
      std::size_t next = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double slack = cost(row - 1, j - 1) - u[row] - v[j];
        if (slack < min_slack[j]) {
          min_slack[j] = slack;
          way[j] = col;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          next = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of_col[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      col = next;
    } while (row_of_col[col] != 0);
    do {
      const std::size_t prev = way[col];
      row_of_col[col] = row_of_col[prev];
      col = prev;
    } while (col != 0);
  }
  out.column_of_row.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) out.column_of_row[row_of_col[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i) out.cost += cost(i, out.column_of_row[i]);
  return out;
}

namespace detail {

inline void require_paired(std::span<const std::size_t> preds, std::span<const std::size_t> truth, const char* who) {
  if (preds.size() != truth.size()) throw std::invalid_argument(std::string(who) + ": length mismatch");
  if (preds.empty()) throw std::invalid_argument(std::string(who) + ": empty input");
}

}  // namespace detail

/// Fraction of samples correct under the best one-to-one relabeling of
/// predictions onto truth. Labels are in [0, num_classes).
inline double clustering_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                                  std::size_t num_classes) {
  detail::require_paired(preds, truth, "clustering_accuracy");
  Matrix counts(num_classes, num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= num_classes || truth[i] >= num_classes) {
      throw std::invalid_argument("clustering_accuracy: label outside [0, " + std::to_string(num_classes) + ")");
    }
    counts(preds[i], truth[i]) += 1.0;
  }
  const double peak = *std::max_element(counts.data().begin(), counts.data().end());
  Matrix cost(num_classes, num_classes);
  for (std::size_t i = 0; i < cost.data().size(); ++i) cost.data()[i] = peak - counts.data()[i];
  const auto match = hungarian(cost);
  double hits = 0.0;
  for (std::size_t p = 0; p < num_classes; ++p) hits += counts(p, match.column_of_row[p]);
  return hits / static_cast<double>(preds.size());
}

/// Mutual information normalized by the arithmetic mean of the two entropies.
/// Zero when either labeling is constant.
inline double nmi(std::span<const std::size_t> preds, std::span<const std::size_t> truth) {
  detail::require_paired(preds, truth, "nmi");
  const double n = static_cast<double>(preds.size());
  std::map<std::size_t, double> pa, pb;
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    pa[preds[i]] += 1.0 / n;
    pb[truth[i]] += 1.0 / n;
    joint[{preds[i], truth[i]}] += 1.0 / n;
  }
  auto entropy = [](const std::map<std::size_t, double>& p) {
    double h = 0.0;
    for (const auto& [_, q] : p) h -= q * std::log(q);
    return h;
  };
  const double ha = entropy(pa);
  const double hb = entropy(pb);
  if (pa.size() < 2 || pb.size() < 2) return 0.0;
  double mi = 0.0;
  for (const auto& [key, q] : joint) mi += q * std::log(q / (pa[key.first] * pb[key.second]));
  return std::clamp(mi / ((ha + hb) / 2.0), 0.0, 1.0);
}

struct MetricsReport {
  std::size_t epoch = 0;
  std::optional<double> known_acc;
  std::optional<double> novel_acc;
  std::optional<double> all_acc;
  std::optional<double> novel_nmi;
  std::optional<double> all_nmi;

  bool operator==(const MetricsReport&) const = default;
};

/// Known accuracy is a direct label match over samples whose truth is a known
/// class. Novel accuracy matches over all `total_classes` prediction slots but
/// only scores samples of novel classes. "All" uses unconstrained matching on
/// every sample. A group with no samples is reported as absent.
inline MetricsReport group_report(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                                  std::size_t known_classes, std::size_t total_classes, std::size_t epoch) {
  detail::require_paired(preds, truth, "group_report");
  MetricsReport rep;
  rep.epoch = epoch;
  std::vector<std::size_t> novel_preds, novel_truth;
  std::size_t known_total = 0, known_hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truth[i] < known_classes) {
      ++known_total;
      known_hits += preds[i] == truth[i] ? 1 : 0;
    } else {
      novel_preds.push_back(preds[i]);
      novel_truth.push_back(truth[i]);
    }
  }
  if (known_total > 0) rep.known_acc = static_cast<double>(known_hits) / static_cast<double>(known_total);
  if (!novel_preds.empty()) {
    rep.novel_acc = clustering_accuracy(novel_preds, novel_truth, total_classes);
    rep.novel_nmi = nmi(novel_preds, novel_truth);
  }
  rep.all_acc = clustering_accuracy(preds, truth, total_classes);
  rep.all_nmi = nmi(preds, truth);
  return rep;
}

/// The only reader of RolsslSplits' ground truth for unlabeled samples.
class TruthGate {
 public:
  static std::span<const std::size_t> hidden_truth(const RolsslSplits& s) noexcept { return s.hidden_truth_; }

  /// Replaces the stored truth; used to prove the training path never reads it.
  static void overwrite(RolsslSplits& s, std::vector<std::size_t> truth) {
    if (truth.size() != s.hidden_truth_.size()) throw std::invalid_argument("TruthGate::overwrite: length mismatch");
    s.hidden_truth_ = std::move(truth);
  }
};

/// Transductive report on the unlabeled pool.
inline MetricsReport score_unlabeled(std::span<const std::size_t> preds, const RolsslSplits& splits,
                                     std::size_t epoch) {
  return group_report(preds, TruthGate::hidden_truth(splits), splits.known_classes(), splits.total_classes(), epoch);
}

// Record format: one line per epoch, fields in fixed order, 6-decimal fixed
// point, "NA" for an absent metric:
//   epoch=3 known_acc=0.912345 novel_acc=0.700000 all_acc=0.801234 novel_nmi=0.650000 all_nmi=0.720000
inline constexpr const char* kRecordFields[] = {"known_acc", "novel_acc", "all_acc", "novel_nmi", "all_nmi"};

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

inline std::string format_record(const MetricsReport& r) {
  const std::optional<double>* values[] = {&r.known_acc, &r.novel_acc, &r.all_acc, &r.novel_nmi, &r.all_nmi};
  std::string line = "epoch=" + std::to_string(r.epoch);
  for (std::size_t i = 0; i < 5; ++i) line += std::string(" ") + kRecordFields[i] + "=" + format_metric(*values[i]);
  return line;
}

inline MetricsReport parse_record(const std::string& line) {
  std::istringstream in(line);
  std::string token;
  MetricsReport r;
  std::optional<double>* values[] = {&r.known_acc, &r.novel_acc, &r.all_acc, &r.novel_nmi, &r.all_nmi};
  auto field = [&](const std::string& expected) {
    if (!(in >> token)) throw std::invalid_argument("metrics record: missing field '" + expected + "'");
    const auto eq = token.find('=');
    if (eq == std::string::npos || token.substr(0, eq) != expected) {
      throw std::invalid_argument("metrics record: expected '" + expected + "=', got '" + token + "'");
    }
    return token.substr(eq + 1);
  };
  try {
    r.epoch = std::stoul(field("epoch"));
    for (std::size_t i = 0; i < 5; ++i) {
      const std::string v = field(kRecordFields[i]);
      if (v != "NA") *values[i] = std::stod(v);
    }
  } catch (const std::logic_error& e) {
    throw std::invalid_argument(std::string("metrics record: ") + e.what() + " in '" + line + "'");
  }
  if (in >> token) throw std::invalid_argument("metrics record: trailing data '" + token + "'");
  return r;
}

/// Comma-separated table with a header row; absent metrics are empty cells.
inline std::string records_to_csv(std::span<const MetricsReport> records) {
  std::string out = "epoch";
  for (const char* f : kRecordFields) out += std::string(",") + f;
  out += "\n";
  for (const auto& r : records) {
    const std::optional<double>* values[] = {&r.known_acc, &r.novel_acc, &r.all_acc, &r.novel_nmi, &r.all_nmi};
    out += std::to_string(r.epoch);
    for (auto* v : values) out += "," + (*v ? format_metric(*v) : std::string());
    out += "\n";
  }
  return out;
}

}  // namespace dpla::eval

#endif  // DPLA_EVAL_HPP
