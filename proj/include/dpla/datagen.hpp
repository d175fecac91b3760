#ifndef DPLA_DATAGEN_HPP
#define DPLA_DATAGEN_HPP

// Construction of open-world long-tailed semi-supervised datasets: a small
// labeled long-tailed known-class set, a larger unlabeled known-class set, and
// an unlabeled novel-class set whose tail follows one of three regimes.
//
// Class indices are zero-based throughout. Known classes occupy
// [0, known_classes), novel classes [known_classes, total_classes).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dpla/binary_io.hpp"
#include "dpla/numerics.hpp"

namespace dpla {

namespace eval {
class TruthGate;
}

enum class Regime { Consistent, Uniform, Reversed };
enum class TailDirection { Descending, Ascending, Uniform };

inline const char* to_string(Regime r) noexcept {
  switch (r) {
    case Regime::Consistent: return "consistent";
    case Regime::Uniform: return "uniform";
    case Regime::Reversed: return "reversed";
  }
  return "?";
}

/// A source pool has fewer samples for some class than the split asks for.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  std::size_t known_classes = 3;
  std::size_t novel_classes = 3;
  std::size_t labeled_head = 50;     // N_1
  std::size_t unlabeled_head = 400;  // H_1
  std::size_t novel_head = 450;      // M_1 (per-class count under Uniform)
  double gamma_labeled = 10.0;
  double gamma_unlabeled = 10.0;
  double gamma_novel = 10.0;  // ignored (treated as 1) under Regime::Uniform
  Regime regime = Regime::Consistent;
  std::size_t input_dim = 2;
  std::uint64_t seed = 0;

  std::size_t total_classes() const noexcept { return known_classes + novel_classes; }

  void validate() const {
    if (known_classes < 1) throw std::invalid_argument("DatasetSpec: known_classes must be >= 1");
    if (labeled_head < 1 || unlabeled_head < 1 || novel_head < 1) {
      throw std::invalid_argument("DatasetSpec: head counts must be >= 1");
    }
    if (gamma_labeled < 1.0 || gamma_unlabeled < 1.0 || gamma_novel < 1.0) {
      throw std::invalid_argument("DatasetSpec: imbalance ratios must be >= 1");
    }
    if (input_dim < 1) throw std::invalid_argument("DatasetSpec: input_dim must be >= 1");
  }
};

/// Per-class sample matrices; classes[c] has one row per sample.
struct SamplePool {
  std::size_t input_dim = 0;
  std::vector<Matrix> classes;

  std::size_t num_classes() const noexcept { return classes.size(); }
};

struct LabeledSamples {
  Matrix features;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool operator==(const LabeledSamples&) const = default;
};

/// Materialized labeled/unlabeled partitions.
///
/// The ground-truth class of each unlabeled row is stored but only readable
/// through eval::TruthGate, so the training path cannot depend on it.
class RolsslSplits {
 public:
  RolsslSplits() = default;
  RolsslSplits(std::size_t known_classes, std::size_t novel_classes, LabeledSamples labeled,
               Matrix unlabeled, std::vector<std::size_t> hidden_truth)
      : known_classes_(known_classes),
        novel_classes_(novel_classes),
        labeled_(std::move(labeled)),
        unlabeled_(std::move(unlabeled)),
        hidden_truth_(std::move(hidden_truth)) {
    if (hidden_truth_.size() != unlabeled_.rows()) {
      throw std::invalid_argument("RolsslSplits: truth/unlabeled length mismatch");
    }
    for (std::size_t y : labeled_.labels) {
      if (y >= known_classes_) throw std::invalid_argument("RolsslSplits: labeled sample outside known classes");
    }
  }

  std::size_t known_classes() const noexcept { return known_classes_; }
  std::size_t novel_classes() const noexcept { return novel_classes_; }
  std::size_t total_classes() const noexcept { return known_classes_ + novel_classes_; }
  std::size_t input_dim() const noexcept { return unlabeled_.cols(); }

  const LabeledSamples& labeled() const noexcept { return labeled_; }
  const Matrix& unlabeled() const noexcept { return unlabeled_; }

  bool operator==(const RolsslSplits&) const = default;

 private:
  friend class eval::TruthGate;
  friend std::vector<std::uint8_t> encode_dataset(const RolsslSplits&, const LabeledSamples&);

  std::size_t known_classes_ = 0;
  std::size_t novel_classes_ = 0;
  LabeledSamples labeled_;
  Matrix unlabeled_;
  std::vector<std::size_t> hidden_truth_;
};

/// Per-class counts along an exponential profile from n_max down to n_max/gamma:
/// counts[c] = round(n_max * gamma^(-c/(K-1))), floored at 1.
inline std::vector<std::size_t> long_tail_counts(std::size_t n_max, double gamma, std::size_t num_classes,
                                                 TailDirection direction) {
  if (n_max < 1) throw std::invalid_argument("long_tail_counts: n_max must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("long_tail_counts: num_classes must be >= 1");
  if (!(gamma >= 1.0)) throw std::invalid_argument("long_tail_counts: gamma must be >= 1");
  if (direction == TailDirection::Uniform) return std::vector<std::size_t>(num_classes, n_max);
  if (num_classes == 1) {
    if (gamma > 1.0) throw std::invalid_argument("long_tail_counts: a single class cannot express gamma > 1");
    return {n_max};
  }
  std::vector<std::size_t> counts(num_classes);
  const double span = static_cast<double>(num_classes - 1);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double v = static_cast<double>(n_max) * std::pow(gamma, -static_cast<double>(c) / span);
    counts[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(v)));
  }
  if (direction == TailDirection::Ascending) std::reverse(counts.begin(), counts.end());
  return counts;
}

struct SplitCounts {
  std::vector<std::size_t> labeled;    // N_c per known class
  std::vector<std::size_t> unlabeled;  // H_c per known class
  std::vector<std::size_t> novel;      // M_c per novel class
};

inline SplitCounts split_counts(const DatasetSpec& spec) {
  spec.validate();
  SplitCounts out;
  out.labeled = long_tail_counts(spec.labeled_head, spec.gamma_labeled, spec.known_classes, TailDirection::Descending);
  out.unlabeled =
      long_tail_counts(spec.unlabeled_head, spec.gamma_unlabeled, spec.known_classes, TailDirection::Descending);
  if (spec.novel_classes > 0) {
    switch (spec.regime) {
      case Regime::Consistent:
        out.novel = long_tail_counts(spec.novel_head, spec.gamma_novel, spec.novel_classes, TailDirection::Descending);
        break;
      case Regime::Uniform:
        out.novel = long_tail_counts(spec.novel_head, 1.0, spec.novel_classes, TailDirection::Uniform);
        break;
      case Regime::Reversed:
        out.novel = long_tail_counts(spec.novel_head, spec.gamma_novel, spec.novel_classes, TailDirection::Ascending);
        break;
    }
  }
  return out;
}

/// Draws the labeled, unlabeled-known and unlabeled-novel partitions from
/// `source` (class c of the pool is class c of the split). Labeled and
/// unlabeled samples of a known class never overlap.
inline RolsslSplits build_splits(const DatasetSpec& spec, const SamplePool& source) {
  const SplitCounts counts = split_counts(spec);
  const std::size_t total = spec.total_classes();
  if (source.num_classes() < total) {
    throw CapacityError("build_splits: source has " + std::to_string(source.num_classes()) + " classes, need " +
                        std::to_string(total));
  }
  if (source.input_dim != spec.input_dim) {
    throw std::invalid_argument("build_splits: source input_dim " + std::to_string(source.input_dim) +
                                " != spec input_dim " + std::to_string(spec.input_dim));
  }
  const auto labeled_total = std::accumulate(counts.labeled.begin(), counts.labeled.end(), std::size_t{0});
  const auto unlabeled_known_total = std::accumulate(counts.unlabeled.begin(), counts.unlabeled.end(), std::size_t{0});
  if (labeled_total >= unlabeled_known_total) {
    throw std::invalid_argument("build_splits: labeled known samples (" + std::to_string(labeled_total) +
                                ") must be fewer than unlabeled known samples (" +
                                std::to_string(unlabeled_known_total) + ")");
  }

  std::mt19937_64 rng(spec.seed);
  auto permutation = [&](std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
  };

  LabeledSamples labeled;
  labeled.features = Matrix(labeled_total, spec.input_dim);
  std::vector<const double*> unlabeled_rows;
  std::vector<std::size_t> truth;
  std::size_t next_labeled = 0;

  for (std::size_t c = 0; c < total; ++c) {
    const Matrix& pool = source.classes[c];
    const bool known = c < spec.known_classes;
    const std::size_t take_labeled = known ? counts.labeled[c] : 0;
    const std::size_t take_unlabeled = known ? counts.unlabeled[c] : counts.novel[c - spec.known_classes];
    if (pool.rows() < take_labeled + take_unlabeled) {
      throw CapacityError("build_splits: class " + std::to_string(c) + " has " + std::to_string(pool.rows()) +
                          " samples, needs " + std::to_string(take_labeled + take_unlabeled));
    }
    const auto order = permutation(pool.rows());
    for (std::size_t i = 0; i < take_labeled; ++i) {
      const auto src = pool.row(order[i]);
      std::copy(src.begin(), src.end(), labeled.features.row(next_labeled++).begin());
      labeled.labels.push_back(c);
    }
    for (std::size_t i = take_labeled; i < take_labeled + take_unlabeled; ++i) {
      unlabeled_rows.push_back(pool.row(order[i]).data());
      truth.push_back(c);
    }
  }

  const auto shuffle = permutation(unlabeled_rows.size());
  Matrix unlabeled(unlabeled_rows.size(), spec.input_dim);
  std::vector<std::size_t> shuffled_truth(truth.size());
  for (std::size_t i = 0; i < shuffle.size(); ++i) {
    std::copy_n(unlabeled_rows[shuffle[i]], spec.input_dim, unlabeled.row(i).begin());
    shuffled_truth[i] = truth[shuffle[i]];
  }
  return RolsslSplits(spec.known_classes, spec.novel_classes, std::move(labeled), std::move(unlabeled),
                      std::move(shuffled_truth));
}

/// Removes the last `per_class` rows of every class from `pool` and returns
/// them as a class-balanced labeled test set.
inline LabeledSamples split_off_test(SamplePool& pool, std::size_t per_class) {
  LabeledSamples test;
  test.features = Matrix(per_class * pool.num_classes(), pool.input_dim);
  std::size_t next = 0;
  for (std::size_t c = 0; c < pool.num_classes(); ++c) {
    Matrix& m = pool.classes[c];
    if (m.rows() < per_class) {
      throw CapacityError("split_off_test: class " + std::to_string(c) + " has only " + std::to_string(m.rows()) +
                          " samples");
    }
    const std::size_t keep = m.rows() - per_class;
    for (std::size_t r = keep; r < m.rows(); ++r) {
      std::copy(m.row(r).begin(), m.row(r).end(), test.features.row(next++).begin());
      test.labels.push_back(c);
    }
    std::vector<double> kept(m.data().begin(), m.data().begin() + static_cast<std::ptrdiff_t>(keep * m.cols()));
    m = Matrix(keep, m.cols(), std::move(kept));
  }
  return test;
}

/// Isotropic unit-variance Gaussian blobs, one per class. In two dimensions the
/// class centers sit evenly on a circle of radius `separation` with a
/// seed-chosen rotation; in higher dimensions each center is a seed-chosen unit
/// direction scaled by `separation`.
inline SamplePool gen_synthetic_gaussian(std::size_t num_classes, std::size_t input_dim, double separation,
                                         std::uint64_t seed, std::size_t per_class_cap) {
  if (num_classes < 2) throw std::invalid_argument("gen_synthetic_gaussian: need at least 2 classes");
  if (input_dim < 2) throw std::invalid_argument("gen_synthetic_gaussian: input_dim must be >= 2");
  if (!(separation >= 0.0) || !std::isfinite(separation)) {
    throw std::invalid_argument("gen_synthetic_gaussian: separation must be finite and >= 0");
  }
  if (per_class_cap == 0) throw std::invalid_argument("gen_synthetic_gaussian: per_class_cap must be > 0");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> centers(num_classes, std::vector<double>(input_dim, 0.0));
  if (input_dim == 2) {
    const double offset = std::uniform_real_distribution<double>(0.0, 2.0 * M_PI)(rng);
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double angle = offset + 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(num_classes);
      centers[c] = {separation * std::cos(angle), separation * std::sin(angle)};
    }
  } else {
    for (auto& center : centers) {
      double norm = 0.0;
      for (double& x : center) {
        x = normal(rng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (double& x : center) x *= separation / norm;
    }
  }

  SamplePool pool;
  pool.input_dim = input_dim;
  for (std::size_t c = 0; c < num_classes; ++c) {
    Matrix m(per_class_cap, input_dim);
    for (std::size_t r = 0; r < per_class_cap; ++r) {
      for (std::size_t d = 0; d < input_dim; ++d) m(r, d) = centers[c][d] + normal(rng);
    }
    pool.classes.push_back(std::move(m));
  }
  return pool;
}

// Binary image records: one label byte followed by 3072 pixel bytes.
inline constexpr std::size_t kCifarPixels = 3072;
inline constexpr std::size_t kCifarRecord = kCifarPixels + 1;
inline constexpr std::size_t kCifarClasses = 10;

inline SamplePool parse_cifar_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecord != 0) {
    throw FormatError("truncated image record: length " + std::to_string(bytes.size()) + " is not a multiple of " +
                          std::to_string(kCifarRecord),
                      bytes.size() - bytes.size() % kCifarRecord);
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  std::vector<std::size_t> per_class(kCifarClasses, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t label = bytes[i * kCifarRecord];
    if (label >= kCifarClasses) {
      throw FormatError("label byte " + std::to_string(label) + " out of range [0, 9]", i * kCifarRecord);
    }
    ++per_class[label];
  }
  SamplePool pool;
  pool.input_dim = kCifarPixels;
  for (std::size_t c = 0; c < kCifarClasses; ++c) pool.classes.emplace_back(per_class[c], kCifarPixels);
  std::vector<std::size_t> filled(kCifarClasses, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t base = i * kCifarRecord;
    const std::uint8_t label = bytes[base];
    auto dst = pool.classes[label].row(filled[label]++);
    for (std::size_t p = 0; p < kCifarPixels; ++p) dst[p] = static_cast<double>(bytes[base + 1 + p]) / 255.0;
  }
  return pool;
}

inline SamplePool load_cifar_binary(const std::string& path) { return parse_cifar_binary(read_file_bytes(path)); }

// Dataset cache layout (all integers little-endian):
//   "DPLASPL1"
//   u32 known_classes, u32 novel_classes, u32 input_dim
//   u64 n_labeled, u64 n_unlabeled, u64 n_test
//   labeled features (f64 x n_labeled*input_dim), labeled labels (u16 x n_labeled)
//   unlabeled features, unlabeled ground truth (u16)
//   test features, test labels (u16)
inline constexpr std::string_view kDatasetMagic = "DPLASPL1";

namespace detail {

inline void put_samples(ByteWriter& w, const Matrix& features) {
  for (double x : features.data()) w.put_f64(x);
}

inline void put_labels(ByteWriter& w, std::span<const std::size_t> labels) {
  for (std::size_t y : labels) w.put(static_cast<std::uint16_t>(y));
}

inline Matrix get_samples(ByteReader& r, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = r.get_f64();
  return m;
}

inline std::vector<std::size_t> get_labels(ByteReader& r, std::size_t n, std::size_t limit) {
  std::vector<std::size_t> out(n);
  for (auto& y : out) {
    const std::size_t at = r.position();
    y = r.get<std::uint16_t>();
    if (y >= limit) throw FormatError("label " + std::to_string(y) + " out of range", at);
  }
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_dataset(const RolsslSplits& splits, const LabeledSamples& test) {
  if (splits.total_classes() > 0xFFFF) throw std::invalid_argument("encode_dataset: too many classes for u16 labels");
  ByteWriter w;
  w.put_tag(kDatasetMagic);
  w.put(static_cast<std::uint32_t>(splits.known_classes()));
  w.put(static_cast<std::uint32_t>(splits.novel_classes()));
  w.put(static_cast<std::uint32_t>(splits.input_dim()));
  w.put(static_cast<std::uint64_t>(splits.labeled().size()));
  w.put(static_cast<std::uint64_t>(splits.unlabeled().rows()));
  w.put(static_cast<std::uint64_t>(test.size()));
  detail::put_samples(w, splits.labeled().features);
  detail::put_labels(w, splits.labeled().labels);
  detail::put_samples(w, splits.unlabeled());
  detail::put_labels(w, splits.hidden_truth_);
  detail::put_samples(w, test.features);
  detail::put_labels(w, test.labels);
  return w.bytes();
}

struct DatasetBundle {
  RolsslSplits splits;
  LabeledSamples test;
};

inline DatasetBundle decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag(kDatasetMagic);
  const std::size_t known = r.get<std::uint32_t>();
  const std::size_t novel = r.get<std::uint32_t>();
  const std::size_t dim = r.get<std::uint32_t>();
  const std::size_t n_labeled = r.get<std::uint64_t>();
  const std::size_t n_unlabeled = r.get<std::uint64_t>();
  const std::size_t n_test = r.get<std::uint64_t>();
  const std::size_t expected_body = (n_labeled + n_unlabeled + n_test) * (dim * 8 + 2);
  if (bytes.size() - r.position() != expected_body) {
    throw FormatError("dataset cache body length mismatch", r.position());
  }
  LabeledSamples labeled;
  labeled.features = detail::get_samples(r, n_labeled, dim);
  labeled.labels = detail::get_labels(r, n_labeled, known);
  Matrix unlabeled = detail::get_samples(r, n_unlabeled, dim);
  auto truth = detail::get_labels(r, n_unlabeled, known + novel);
  LabeledSamples test;
  test.features = detail::get_samples(r, n_test, dim);
  test.labels = detail::get_labels(r, n_test, known + novel);
  return {RolsslSplits(known, novel, std::move(labeled), std::move(unlabeled), std::move(truth)), std::move(test)};
}

}  // namespace dpla

#endif  // DPLA_DATAGEN_HPP
