#include "okapi/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace okapi {

void Matrix::append_row(std::span<const double> values) {
  if (rows == 0 && data.empty()) cols = values.size();
  if (values.size() != cols)
    throw DimensionMismatch("row of length " + std::to_string(values.size()) +
                            " appended to matrix with " + std::to_string(cols) + " columns");
  data.insert(data.end(), values.begin(), values.end());
  ++rows;
}

void Matrix::append_rows(const Matrix& other) {
  for (std::size_t i = 0; i < other.rows; ++i) append_row(other.row(i));
}

EmbeddingSet::EmbeddingSet(std::size_t dim, std::uint32_t domain_count, std::vector<Sample> samples)
    : dim_(dim), domain_count_(domain_count), samples_(std::move(samples)) {
  if (dim_ == 0) throw ValidationError("embedding dimension must be positive");
  index_.reserve(samples_.size());
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const Sample& s = samples_[i];
    if (s.embedding.size() != dim_)
      throw ValidationError("sample " + std::to_string(s.id) + " has embedding length " +
                            std::to_string(s.embedding.size()) + ", expected " + std::to_string(dim_));
    if (s.domain.value >= domain_count_)
      throw ValidationError("sample " + std::to_string(s.id) + " has domain " +
                            std::to_string(s.domain.value) + " outside [0, " +
                            std::to_string(domain_count_) + ")");
    for (float v : s.embedding)
      if (!std::isfinite(v))
        throw ValidationError("sample " + std::to_string(s.id) + " has a non-finite embedding component");
    if (s.target && !std::isfinite(*s.target))
      throw ValidationError("sample " + std::to_string(s.id) + " has a non-finite target");
    if (!index_.emplace(s.id, i).second)
      throw ValidationError("duplicate sample id " + std::to_string(s.id));
  }
}

std::optional<std::size_t> EmbeddingSet::index_of(std::uint64_t id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool EmbeddingSet::any_target() const {
  return std::any_of(samples_.begin(), samples_.end(), [](const Sample& s) { return s.target.has_value(); });
}

Matrix EmbeddingSet::embeddings() const {
  Matrix m(samples_.size(), dim_);
  for (std::size_t i = 0; i < samples_.size(); ++i)
    std::copy(samples_[i].embedding.begin(), samples_[i].embedding.end(), m.row(i).begin());
  return m;
}

std::vector<double> EmbeddingSet::embedding(std::size_t i) const {
  return {samples_[i].embedding.begin(), samples_[i].embedding.end()};
}

std::vector<DomainLabel> EmbeddingSet::domains() const {
  std::vector<DomainLabel> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.domain);
  return out;
}

std::vector<std::uint64_t> EmbeddingSet::ids() const {
  std::vector<std::uint64_t> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.id);
  return out;
}

std::vector<DomainLabel> EmbeddingSet::domains_present() const {
  std::set<DomainLabel> seen;
  for (const auto& s : samples_) seen.insert(s.domain);
  return {seen.begin(), seen.end()};
}

EmbeddingSet binary_reduction(const EmbeddingSet& data, std::span<const DomainLabel> labeled_domains) {
  std::vector<Sample> out = data.samples();
  for (auto& s : out) {
    bool labeled = std::find(labeled_domains.begin(), labeled_domains.end(), s.domain) != labeled_domains.end();
    s.domain = labeled ? kLabeledDomain : kUnlabeledDomain;
  }
  return EmbeddingSet(data.dim(), 2, std::move(out));
}

EmbeddingSet concat(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.dim() != b.dim())
    throw DimensionMismatch("cannot concatenate sets of dimension " + std::to_string(a.dim()) + " and " +
                            std::to_string(b.dim()));
  std::vector<Sample> out = a.samples();
  out.insert(out.end(), b.samples().begin(), b.samples().end());
  return EmbeddingSet(a.dim(), std::max(a.domain_count(), b.domain_count()), std::move(out));
}

std::string_view to_string(FilterReason reason) {
  switch (reason) {
    case FilterReason::None: return "none";
    case FilterReason::QueryCaliper: return "query_caliper";
    case FilterReason::NoValidKeys: return "no_valid_keys";
  }
  return "none";
}

FilterReason filter_reason_from_string(std::string_view text) {
  if (text == "none") return FilterReason::None;
  if (text == "query_caliper") return FilterReason::QueryCaliper;
  if (text == "no_valid_keys") return FilterReason::NoValidKeys;
  throw FormatError("unknown filter reason '" + std::string(text) + "'");
}

void validate(const MatchRecord& record) {
  const auto q = std::to_string(record.query_id);
  if (record.neighbor_ids.size() != record.distances.size())
    throw ValidationError("record " + q + ": neighbor_ids and distances differ in length");
  if (record.matched() == record.neighbor_ids.empty())
    throw ValidationError("record " + q + ": neighbours must be present iff the query is not filtered");
  if (!std::is_sorted(record.distances.begin(), record.distances.end()))
    throw ValidationError("record " + q + ": distances are not sorted");
  for (double d : record.distances)
    if (!std::isfinite(d) || d < 0.0) throw ValidationError("record " + q + ": invalid distance");
}

double l2_norm(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  return std::sqrt(sum);
}

std::vector<double> l2_normalize(std::span<const double> v) {
  const double norm = l2_norm(v);
  if (!(norm > kDegenerateNorm)) throw DegenerateVector("cannot normalise a vector with norm <= 1e-30");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    sum += diff * diff;
  }
  return sum;
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ValidationError("Rng::below requires n > 0");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& text) {
  std::istringstream is(text);
  is >> engine_;
  if (!is) throw FormatError("corrupt RNG state");
}

}  // namespace okapi
