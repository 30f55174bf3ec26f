#include "okapi/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "json.hpp"

namespace okapi {
namespace {

struct Moments {
  std::vector<double> mean;
  std::vector<double> var;
};

Moments column_moments(const Matrix& m) {
  Moments out{std::vector<double>(m.cols, 0.0), std::vector<double>(m.cols, 0.0)};
  const auto n = static_cast<double>(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out.mean[j] += m.row(i)[j];
  for (auto& mu : out.mean) mu /= n;
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) {
      const double d = m.row(i)[j] - out.mean[j];
      out.var[j] += d * d;
    }
  for (auto& v : out.var) v /= (n - 1.0);
  return out;
}

BalanceReport average(const std::vector<BalanceReport>& parts) {
  BalanceReport out = parts.front();
  out.domain_pairs.clear();
  const auto n = static_cast<double>(parts.size());
  std::fill(out.per_dim_smd.begin(), out.per_dim_smd.end(), 0.0);
  std::fill(out.per_dim_vr.begin(), out.per_dim_vr.end(), 0.0);
  out.mean_smd = out.mean_abs_log_vr = 0.0;
  for (const auto& p : parts) {
    for (std::size_t j = 0; j < p.per_dim_smd.size(); ++j) {
      out.per_dim_smd[j] += p.per_dim_smd[j] / n;
      out.per_dim_vr[j] += p.per_dim_vr[j] / n;
    }
    out.mean_smd += p.mean_smd / n;
    out.mean_abs_log_vr += p.mean_abs_log_vr / n;
    out.domain_pairs.insert(out.domain_pairs.end(), p.domain_pairs.begin(), p.domain_pairs.end());
  }
  return out;
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

BalanceReport balance(const Matrix& set_a, const Matrix& set_b) {
  if (set_a.rows == 0 || set_b.rows == 0) throw EmptyInput("balance needs two nonempty sets");
  if (set_a.cols != set_b.cols) throw DimensionMismatch("balance sets differ in dimension");
  if (set_a.rows < 2 || set_b.rows < 2) throw EmptyInput("variance ratio needs at least two samples per set");

  const Moments a = column_moments(set_a);
  const Moments b = column_moments(set_b);
  BalanceReport r;
  const std::size_t d = set_a.cols;
  r.per_dim_smd.resize(d);
  r.per_dim_vr.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double pooled = std::sqrt((a.var[j] + b.var[j]) / 2.0);
    const double gap = std::abs(a.mean[j] - b.mean[j]);
    if (pooled > 0.0) {
      r.per_dim_smd[j] = gap / pooled;
    } else if (gap == 0.0) {
      r.per_dim_smd[j] = 0.0;
    } else {
      throw ZeroVariance("dimension " + std::to_string(j) + " has zero pooled variance but different means");
    }
    if (a.var[j] == 0.0 && b.var[j] == 0.0) {
      r.per_dim_vr[j] = 1.0;
    } else if (a.var[j] == 0.0 || b.var[j] == 0.0) {
      throw ZeroVariance("dimension " + std::to_string(j) + " has zero variance in one set");
    } else {
      r.per_dim_vr[j] = a.var[j] / b.var[j];
    }
    r.mean_smd += r.per_dim_smd[j];
    r.mean_abs_log_vr += std::abs(std::log(r.per_dim_vr[j]));
  }
  r.mean_smd /= static_cast<double>(d);
  r.mean_abs_log_vr /= static_cast<double>(d);
  return r;
}

BalanceReport domain_balance(const EmbeddingSet& data) {
  const auto present = data.domains_present();
  if (present.size() < 2) throw ValidationError("domain balance needs at least two domains");
  std::map<DomainLabel, Matrix> groups;
  for (const auto& s : data.samples()) {
    const std::vector<double> z(s.embedding.begin(), s.embedding.end());
    groups[s.domain].append_row(z);
  }
  std::vector<BalanceReport> parts;
  for (std::size_t i = 0; i < present.size(); ++i)
    for (std::size_t j = i + 1; j < present.size(); ++j) {
      auto r = balance(groups[present[i]], groups[present[j]]);
      r.domain_pairs = {{present[i], present[j]}};
      parts.push_back(std::move(r));
    }
  return average(parts);
}

BalanceReport matched_balance(const EmbeddingSet& data, std::span<const MatchRecord> records) {
  using Pair = std::pair<DomainLabel, DomainLabel>;
  std::map<Pair, std::pair<Matrix, Matrix>> groups;
  std::size_t matched = 0;
  for (const auto& rec : records) {
    const auto qi = data.index_of(rec.query_id);
    if (!qi) throw ValidationError("match record refers to unknown query id " + std::to_string(rec.query_id));
    if (!rec.matched()) continue;
    ++matched;
    const auto q = data.embedding(*qi);
    const DomainLabel qd = data[*qi].domain;
    for (std::uint64_t nid : rec.neighbor_ids) {
      const auto ni = data.index_of(nid);
      if (!ni) throw ValidationError("match record refers to unknown neighbour id " + std::to_string(nid));
      const auto n = data.embedding(*ni);
      const DomainLabel nd = data[*ni].domain;
      // Lower domain label goes to set A so both directions pool together.
      if (qd <= nd) {
        auto& [a, b] = groups[{qd, nd}];
        a.append_row(q);
        b.append_row(n);
      } else {
        auto& [a, b] = groups[{nd, qd}];
        a.append_row(n);
        b.append_row(q);
      }
    }
  }
  if (matched == 0) throw NoMatches("no query retained a match");

  std::vector<BalanceReport> parts;
  for (auto& [pair, sets] : groups) {
    if (sets.first.rows < 2) continue;
    auto r = balance(sets.first, sets.second);
    r.domain_pairs = {pair};
    parts.push_back(std::move(r));
  }
  if (parts.empty()) throw NoMatches("too few matched pairs to compute balance");
  auto out = average(parts);
  out.retention_rate = static_cast<double>(matched) / static_cast<double>(records.size());
  return out;
}

std::string report_to_json(const BalanceReport& report) {
  nlohmann::ordered_json j;
  j["per_dim_smd"] = report.per_dim_smd;
  j["per_dim_vr"] = report.per_dim_vr;
  j["mean_smd"] = report.mean_smd;
  j["mean_abs_log_vr"] = report.mean_abs_log_vr;
  j["retention_rate"] = report.retention_rate;
  auto pairs = nlohmann::ordered_json::array();
  for (const auto& [a, b] : report.domain_pairs) pairs.push_back({a.value, b.value});
  j["domain_pairs"] = pairs;
  return j.dump();
}

void GridSpec::validate() const {
  if (t_fixed_values.empty() || t_std_values.empty() || tau_values.empty())
    throw ValidationError("grid value lists must be nonempty");
  if (k == 0) throw ValidationError("k must be at least 1");
  if (!(min_retention >= 0.0 && min_retention <= 1.0)) throw ValidationError("min_retention must lie in [0, 1]");
  for (double tf : t_fixed_values)
    for (double ts : t_std_values)
      for (double tau : tau_values) CaliperParams{tf, ts, tau}.validate();
}

std::vector<GridResult> grid_search(const EmbeddingSet& data, const PropensityModel& model, const GridSpec& grid,
                                    unsigned threads) {
  grid.validate();
  std::vector<GridResult> kept;
  for (double tf : grid.t_fixed_values)
    for (double ts : grid.t_std_values)
      for (double tau : grid.tau_values) {
        const CaliperParams params{tf, ts, tau};
        const auto records = matched_samples(data, model, params, grid.k, grid.direction, threads);
        const auto summary = summarize(records);
        if (summary.matched == 0 || summary.retention < grid.min_retention) continue;
        try {
          kept.push_back({params, matched_balance(data, records)});
        } catch (const NoMatches&) {
        } catch (const ZeroVariance&) {
        }
      }
  if (kept.empty()) throw EmptyGridAfterFilter("no grid cell satisfies the retention floor");
  std::sort(kept.begin(), kept.end(), [](const GridResult& a, const GridResult& b) {
    const double sa = a.report.score(), sb = b.report.score();
    if (sa != sb) return sa < sb;
    return std::tie(a.params.t_fixed, a.params.t_std, a.params.tau) <
           std::tie(b.params.t_fixed, b.params.t_std, b.params.tau);
  });
  return kept;
}

std::string grid_to_csv(std::span<const GridResult> results, std::size_t k) {
  std::string out = "rank,t_fixed,t_std,tau,k,mean_smd,mean_abs_log_vr,score,retention\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    out += std::to_string(i + 1) + ',' + format_double(r.params.t_fixed) + ',' + format_double(r.params.t_std) +
           ',' + format_double(r.params.tau) + ',' + std::to_string(k) + ',' + format_double(r.report.mean_smd) +
           ',' + format_double(r.report.mean_abs_log_vr) + ',' + format_double(r.report.score()) + ',' +
           format_double(r.report.retention_rate) + '\n';
  }
  return out;
}

}  // namespace okapi
