#pragma once

#include <cstddef>
#include <cstdint>
#include <compare>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "okapi/errors.hpp"

namespace okapi {

// Index of a domain within the domain universe of a dataset.
struct DomainLabel {
  std::uint32_t value = 0;

  constexpr DomainLabel() = default;
  constexpr explicit DomainLabel(std::uint32_t v) : value(v) {}
  constexpr auto operator<=>(const DomainLabel&) const = default;
};

// Labelled splits map to 1, unlabelled to 0.
inline constexpr DomainLabel kUnlabeledDomain{0};
inline constexpr DomainLabel kLabeledDomain{1};

struct Sample {
  std::uint64_t id = 0;
  DomainLabel domain;
  std::optional<double> target;
  std::vector<float> embedding;
};

// Dense row-major matrix of doubles. Rows are encodings.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  // First appended row fixes the column count of an empty matrix.
  void append_row(std::span<const double> values);
  void append_rows(const Matrix& other);
};

// Validated, immutable collection of samples sharing one embedding dimension.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  EmbeddingSet(std::size_t dim, std::uint32_t domain_count, std::vector<Sample> samples);

  std::size_t dim() const { return dim_; }
  std::uint32_t domain_count() const { return domain_count_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  std::optional<std::size_t> index_of(std::uint64_t id) const;
  bool any_target() const;

  // Embeddings promoted to double, one row per sample.
  Matrix embeddings() const;
  std::vector<double> embedding(std::size_t i) const;
  std::vector<DomainLabel> domains() const;
  std::vector<std::uint64_t> ids() const;
  std::vector<DomainLabel> domains_present() const;

  // Subset of samples satisfying `keep`, preserving order and domain_count.
  template <typename Pred>
  EmbeddingSet filter(Pred keep) const {
    std::vector<Sample> out;
    for (const auto& s : samples_)
      if (keep(s)) out.push_back(s);
    return EmbeddingSet(dim_, domain_count_, std::move(out));
  }

 private:
  std::size_t dim_ = 0;
  std::uint32_t domain_count_ = 0;
  std::vector<Sample> samples_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

// Relabels samples from `labeled_domains` as 1 and all others as 0.
EmbeddingSet binary_reduction(const EmbeddingSet& data, std::span<const DomainLabel> labeled_domains);

// Concatenates two sets with the same dim; domain_count is the larger of the two.
EmbeddingSet concat(const EmbeddingSet& a, const EmbeddingSet& b);

enum class FilterReason { None, QueryCaliper, NoValidKeys };

std::string_view to_string(FilterReason reason);
FilterReason filter_reason_from_string(std::string_view text);

struct MatchRecord {
  std::uint64_t query_id = 0;
  std::vector<std::uint64_t> neighbor_ids;
  std::vector<double> distances;
  FilterReason filtered = FilterReason::None;

  bool matched() const { return filtered == FilterReason::None; }
  friend bool operator==(const MatchRecord&, const MatchRecord&) = default;
};

// Throws ValidationError when the record breaks its structural invariants.
void validate(const MatchRecord& record);

inline constexpr double kDegenerateNorm = 1e-30;

double l2_norm(std::span<const double> v);

// Unit-length copy of `v`. Throws DegenerateVector when the norm is <= 1e-30.
std::vector<double> l2_normalize(std::span<const double> v);

double squared_distance(std::span<const double> a, std::span<const double> b);

// Deterministic random source. The engine is mt19937_64, whose output sequence
// is fixed by the standard; the derived draws below are spelled out here so
// results do not depend on the standard library's distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string state() const;
  void set_state(const std::string& text);

 private:
  std::mt19937_64 engine_;
};

}  // namespace okapi
