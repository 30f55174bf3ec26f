#include "okapi/toytrain.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace okapi {
namespace {

struct Layout {
  std::size_t w1, b1, w2, b2;
  explicit Layout(const ModelShape& s)
      : w1(0), b1(s.hidden * s.input_dim), w2(b1 + s.hidden), b2(w2 + s.embed_dim * s.hidden) {}
};

struct Activations {
  std::vector<double> hidden;  // tanh outputs
  std::vector<double> z;
};

Activations encoder_forward(const ModelShape& s, std::span<const double> p, std::span<const double> x) {
  if (x.size() != s.input_dim)
    throw DimensionMismatch("input has dimension " + std::to_string(x.size()) + ", model expects " +
                            std::to_string(s.input_dim));
  const Layout at(s);
  Activations a{std::vector<double>(s.hidden), std::vector<double>(s.embed_dim)};
  for (std::size_t h = 0; h < s.hidden; ++h) {
    double acc = p[at.b1 + h];
    for (std::size_t i = 0; i < s.input_dim; ++i) acc += p[at.w1 + h * s.input_dim + i] * x[i];
    a.hidden[h] = std::tanh(acc);
  }
  for (std::size_t e = 0; e < s.embed_dim; ++e) {
    double acc = p[at.b2 + e];
    for (std::size_t h = 0; h < s.hidden; ++h) acc += p[at.w2 + e * s.hidden + h] * a.hidden[h];
    a.z[e] = acc;
  }
  return a;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t class_index(double y, std::size_t outputs) {
  if (!(y >= 0.0) || y != std::floor(y) || y >= static_cast<double>(outputs))
    throw ValidationError("classification target " + std::to_string(y) + " is not a valid class index");
  return static_cast<std::size_t>(y);
}

void fill_uniform(std::span<double> v, double bound, Rng& rng) {
  for (auto& x : v) x = rng.uniform(-bound, bound);
}

}  // namespace

ToyModel ToyModel::init(const ModelShape& shape, Rng& rng) {
  ToyModel m;
  m.shape = shape;
  m.encoder.resize(shape.encoder_size());
  m.head.resize(shape.head_size());
  const Layout at(shape);
  std::span<double> enc(m.encoder);
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(shape.input_dim));
  const double hid_bound = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
  const double emb_bound = 1.0 / std::sqrt(static_cast<double>(shape.embed_dim));
  fill_uniform(enc.subspan(at.w1, at.w2 - at.w1), in_bound, rng);  // W1 and b1
  fill_uniform(enc.subspan(at.w2), hid_bound, rng);                // W2 and b2
  fill_uniform(m.head, emb_bound, rng);
  return m;
}

std::vector<double> encode(const ModelShape& shape, std::span<const double> encoder_params,
                           std::span<const double> x) {
  return encoder_forward(shape, encoder_params, x).z;
}

std::vector<double> head_forward(const ModelShape& s, std::span<const double> p, std::span<const double> z) {
  std::vector<double> out(s.outputs);
  const std::size_t bias = s.outputs * s.embed_dim;
  for (std::size_t o = 0; o < s.outputs; ++o) {
    double acc = p[bias + o];
    for (std::size_t e = 0; e < s.embed_dim; ++e) acc += p[o * s.embed_dim + e] * z[e];
    out[o] = acc;
  }
  return out;
}

std::vector<double> predict(const ToyModel& model, std::span<const double> x) {
  return head_forward(model.shape, model.head, encode(model.shape, model.encoder, x));
}

double accuracy(const ToyModel& model, const EmbeddingSet& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].target) throw ValidationError("accuracy needs labelled samples");
    const auto out = predict(model, data.embedding(i));
    if (argmax(out) == class_index(*data[i].target, model.shape.outputs)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

ForwardBackward forward_backward(const ToyModel& model, std::span<const TrainSample> batch, const LossSpec& spec) {
  const ModelShape& s = model.shape;
  if (model.encoder.size() != s.encoder_size() || model.head.size() != s.head_size())
    throw DimensionMismatch("model parameters do not match its shape");
  if (spec.task == Task::Regression && s.outputs != 1)
    throw DimensionMismatch("regression needs a single-output head");

  ForwardBackward out;
  out.grad_encoder.assign(model.encoder.size(), 0.0);
  out.grad_head.assign(model.head.size(), 0.0);
  if (batch.empty()) return out;

  std::size_t labeled = 0;
  for (const auto& ex : batch) labeled += ex.y.has_value();
  const double inv_labeled = labeled ? 1.0 / static_cast<double>(labeled) : 0.0;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const bool use_unsup = spec.lambda != 0.0;

  const Layout at(s);
  const std::size_t head_bias = s.outputs * s.embed_dim;

  for (const auto& ex : batch) {
    const Activations a = encoder_forward(s, model.encoder, ex.x);
    std::vector<double> dz(s.embed_dim, 0.0);
    bool touched = false;

    if (ex.y) {
      const auto logits = head_forward(s, model.head, a.z);
      std::vector<double> dout(s.outputs);
      if (spec.task == Task::Classification) {
        const std::size_t target = class_index(*ex.y, s.outputs);
        const double top = *std::max_element(logits.begin(), logits.end());
        double total = 0.0;
        for (double l : logits) total += std::exp(l - top);
        const double log_norm = top + std::log(total);
        out.loss.sup += (log_norm - logits[target]) * inv_labeled;
        for (std::size_t o = 0; o < s.outputs; ++o)
          dout[o] = (std::exp(logits[o] - log_norm) - (o == target ? 1.0 : 0.0)) * inv_labeled;
      } else {
        const double err = logits[0] - *ex.y;
        out.loss.sup += err * err * inv_labeled;
        dout[0] = 2.0 * err * inv_labeled;
      }
      for (std::size_t o = 0; o < s.outputs; ++o) {
        out.grad_head[head_bias + o] += dout[o];
        for (std::size_t e = 0; e < s.embed_dim; ++e) {
          out.grad_head[o * s.embed_dim + e] += dout[o] * a.z[e];
          dz[e] += model.head[o * s.embed_dim + e] * dout[o];
        }
      }
      touched = true;
    }

    if (!ex.neighbors.empty()) {
      const auto c = consistency_loss(a.z, ex.neighbors);
      out.loss.unsup += c.loss * inv_batch;
      ++out.loss.matched;
      if (use_unsup) {
        const double scale = spec.lambda * inv_batch;
        for (std::size_t e = 0; e < s.embed_dim; ++e) dz[e] += scale * c.grad[e];
        touched = true;
      }
    }

    if (!touched) continue;
    std::vector<double> dpre(s.hidden, 0.0);
    for (std::size_t e = 0; e < s.embed_dim; ++e) {
      out.grad_encoder[at.b2 + e] += dz[e];
      for (std::size_t h = 0; h < s.hidden; ++h) {
        out.grad_encoder[at.w2 + e * s.hidden + h] += dz[e] * a.hidden[h];
        dpre[h] += model.encoder[at.w2 + e * s.hidden + h] * dz[e];
      }
    }
    for (std::size_t h = 0; h < s.hidden; ++h) {
      dpre[h] *= 1.0 - a.hidden[h] * a.hidden[h];
      out.grad_encoder[at.b1 + h] += dpre[h];
      for (std::size_t i = 0; i < s.input_dim; ++i) out.grad_encoder[at.w1 + h * s.input_dim + i] += dpre[h] * ex.x[i];
    }
  }
  out.loss.labeled = labeled;
  out.loss.total = out.loss.sup + spec.lambda * out.loss.unsup;
  return out;
}

void SynthConfig::validate() const {
  if (n_domains == 0) throw ConfigError("n_domains must be positive");
  if (samples_per_domain < 2) throw ConfigError("samples_per_domain must be at least 2");
  if (labeled_domains.empty()) throw ConfigError("at least one labelled domain is required");
  if (!(class_separation >= 0.0) || !(noise_sd >= 0.0)) throw ConfigError("separation and noise must be nonnegative");
  for (auto d : labeled_domains) {
    if (d >= n_domains) throw ConfigError("labelled domain " + std::to_string(d) + " out of range");
    if (std::find(unlabeled_domains.begin(), unlabeled_domains.end(), d) != unlabeled_domains.end())
      throw ConfigError("domain " + std::to_string(d) + " is both labelled and unlabelled");
  }
  for (auto d : unlabeled_domains)
    if (d >= n_domains) throw ConfigError("unlabelled domain " + std::to_string(d) + " out of range");
}

EmbeddingSet SynthData::train() const { return concat(labeled, unlabeled); }

SynthData gen_synth(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::uint32_t domain_count = cfg.n_domains + cfg.ood_domains;
  std::uint64_t next_id = 0;

  auto draw = [&](std::uint32_t domain, std::size_t n, bool keep_target) {
    std::vector<Sample> out;
    out.reserve(n);
    const double angle = static_cast<double>(domain) * cfg.rotation_per_domain;
    const double c = std::cos(angle), s = std::sin(angle);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t label = i % 2;
      const double centre = (label == 0 ? -0.5 : 0.5) * cfg.class_separation;
      const double px = centre + cfg.noise_sd * rng.normal();
      const double py = cfg.noise_sd * rng.normal();
      Sample smp;
      smp.id = next_id++;
      smp.domain = DomainLabel(domain);
      if (keep_target) smp.target = static_cast<double>(label);
      smp.embedding = {static_cast<float>(c * px - s * py), static_cast<float>(s * px + c * py)};
      out.push_back(std::move(smp));
    }
    return out;
  };

  std::vector<Sample> labeled, unlabeled, id_test, ood_test;
  for (auto d : cfg.labeled_domains) {
    auto part = draw(d, cfg.samples_per_domain, true);
    labeled.insert(labeled.end(), part.begin(), part.end());
  }
  for (auto d : cfg.unlabeled_domains) {
    auto part = draw(d, cfg.samples_per_domain, false);
    unlabeled.insert(unlabeled.end(), part.begin(), part.end());
  }
  for (auto d : cfg.labeled_domains) {
    auto part = draw(d, cfg.samples_per_domain, true);
    id_test.insert(id_test.end(), part.begin(), part.end());
  }
  for (std::uint32_t d = cfg.n_domains; d < domain_count; ++d) {
    auto part = draw(d, cfg.samples_per_domain, true);
    ood_test.insert(ood_test.end(), part.begin(), part.end());
  }
  return {EmbeddingSet(2, domain_count, std::move(labeled)), EmbeddingSet(2, domain_count, std::move(unlabeled)),
          EmbeddingSet(2, domain_count, std::move(id_test)), EmbeddingSet(2, domain_count, std::move(ood_test))};
}

void TrainConfig::validate() const {
  if (total_steps == 0) throw ConfigError("total_steps must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (batch_size > bank_capacity) throw ConfigError("batch_size must not exceed bank_capacity");
  if (!(lr >= 0.0)) throw ConfigError("lr must be nonnegative");
  if (k == 0) throw ConfigError("k must be at least 1");
  if (!(zeta_start >= 0.0 && zeta_start <= 1.0 && zeta_end >= 0.0 && zeta_end <= 1.0))
    throw ConfigError("zeta values must lie in [0, 1]");
  if (!(warmup_fraction >= 0.0)) throw ConfigError("warmup_fraction must be nonnegative");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  try {
    caliper.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
}

Trainer::Trainer(const SynthData& data, TrainConfig cfg, Method method)
    : data_(&data),
      train_(data.train()),
      labeled_count_(data.labeled.size()),
      cfg_(std::move(cfg)),
      method_(method),
      rng_(cfg_.seed) {
  cfg_.validate();
  if (train_.empty()) throw ConfigError("training set is empty");
  cfg_.shape.input_dim = train_.dim();
  lambda_ = {cfg_.lambda_final, cfg_.warmup_fraction, cfg_.total_steps};

  model_ = ToyModel::init(cfg_.shape, rng_);
  ema_.shadow = model_.encoder;
  ema_.zeta_start = cfg_.zeta_start;
  ema_.zeta_end = cfg_.zeta_end;
  ema_.total_steps = cfg_.total_steps;
  bank_ = MemoryBank(cfg_.bank_capacity);
  const std::size_t arity = cfg_.binary_domains ? 2 : train_.domain_count();
  scorer_ = PropensityModel::zeros(cfg_.shape.embed_dim, arity);

  order_.resize(train_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  rng_.shuffle(order_);
}

DomainLabel Trainer::match_domain(std::size_t index) const {
  if (!cfg_.binary_domains) return train_[index].domain;
  return index < labeled_count_ ? kLabeledDomain : kUnlabeledDomain;
}

std::vector<std::size_t> Trainer::next_batch() {
  std::vector<std::size_t> batch;
  batch.reserve(cfg_.batch_size);
  while (batch.size() < cfg_.batch_size) {
    if (order_cursor_ == order_.size()) {
      rng_.shuffle(order_);
      order_cursor_ = 0;
    }
    batch.push_back(order_[order_cursor_++]);
  }
  return batch;
}

void Trainer::train_step() {
  if (method_ == Method::Okapi) ema_update(ema_, model_.encoder);

  const auto indices = next_batch();
  std::vector<TrainSample> samples(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    samples[b].x = train_.embedding(indices[b]);
    if (indices[b] < labeled_count_) samples[b].y = train_[indices[b]].target;
  }

  const double lambda = method_ == Method::Okapi ? lambda_.at(step_) : 0.0;
  double retention = 0.0;
  if (method_ == Method::Okapi) {
    StepBatch batch;
    for (std::size_t b = 0; b < indices.size(); ++b) {
      batch.ids.push_back(train_[indices[b]].id);
      batch.s.push_back(match_domain(indices[b]));
      batch.target_z.append_row(encode(cfg_.shape, ema_.shadow, samples[b].x));
      if (cfg_.query_source == QuerySource::Online)
        batch.online_z.append_row(encode(cfg_.shape, model_.encoder, samples[b].x));
    }
    auto matched = okapi_match_step(batch, bank_, scorer_, cfg_.caliper, cfg_.k, cfg_.query_source, cfg_.lr,
                                    cfg_.threads);
    std::size_t kept = 0;
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const auto& rec = matched.records[b];
      ++stats_.queries;
      if (!rec.matched()) continue;
      ++kept;
      ++stats_.matched;
      for (std::size_t r = 0; r < rec.distances.size(); ++r) {
        ++stats_.pairs;
        stats_.distance_sum += rec.distances[r];
        if (matched.neighbor_domains[b][r] == batch.s[b]) ++stats_.cross_domain_violations;
      }
      samples[b].neighbors = std::move(matched.neighbors[b]);
    }
    retention = static_cast<double>(kept) / static_cast<double>(indices.size());
  }

  const auto fb = forward_backward(model_, samples, {Task::Classification, lambda});
  for (std::size_t i = 0; i < model_.encoder.size(); ++i) model_.encoder[i] -= cfg_.lr * fb.grad_encoder[i];
  for (std::size_t i = 0; i < model_.head.size(); ++i) model_.head[i] -= cfg_.lr * fb.grad_head[i];
  ++step_;

  if (step_ % cfg_.eval_every == 0 || step_ == cfg_.total_steps) {
    history_.push_back({step_, fb.loss.sup, fb.loss.unsup, lambda, retention, accuracy(model_, data_->id_test),
                        accuracy(model_, data_->ood_test)});
  }
  if (hook_) hook_(step_, model_);
}

void Trainer::run_until(std::size_t step) {
  const std::size_t stop = std::min(step, cfg_.total_steps);
  while (step_ < stop) train_step();
}

TrainResult Trainer::result() const {
  TrainResult r;
  r.model = model_;
  r.history = history_;
  r.stats = stats_;
  r.id_acc = accuracy(model_, data_->id_test);
  r.ood_acc = accuracy(model_, data_->ood_test);
  return r;
}

TrainResult train_erm(const SynthData& data, const TrainConfig& cfg) {
  Trainer t(data, cfg, Method::Erm);
  t.run();
  return t.result();
}

TrainResult train_okapi(const SynthData& data, const TrainConfig& cfg) {
  Trainer t(data, cfg, Method::Okapi);
  t.run();
  return t.result();
}

std::string metrics_to_csv(std::span<const MetricsRow> history) {
  auto num = [](double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
  };
  std::string out = "step,L_sup,L_unsup,lambda,retention,id_acc,ood_acc\n";
  for (const auto& r : history)
    out += std::to_string(r.step) + ',' + num(r.l_sup) + ',' + num(r.l_unsup) + ',' + num(r.lambda) + ',' +
           num(r.retention) + ',' + num(r.id_acc) + ',' + num(r.ood_acc) + '\n';
  return out;
}

}  // namespace okapi
