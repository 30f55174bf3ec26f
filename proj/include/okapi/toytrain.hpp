#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "okapi/core.hpp"
#include "okapi/matcher.hpp"
#include "okapi/online.hpp"
#include "okapi/propensity.hpp"

namespace okapi {

enum class Task { Classification, Regression };

// Encoder: input -> hidden (tanh) -> embed (linear). Head: embed -> outputs.
struct ModelShape {
  std::size_t input_dim = 2;
  std::size_t hidden = 16;
  std::size_t embed_dim = 8;
  std::size_t outputs = 2;

  std::size_t encoder_size() const { return hidden * input_dim + hidden + embed_dim * hidden + embed_dim; }
  std::size_t head_size() const { return outputs * embed_dim + outputs; }
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Parameters are flat vectors in a fixed order:
//   encoder = W1 (hidden x input, row-major) | b1 | W2 (embed x hidden) | b2
//   head    = W3 (outputs x embed) | b3
struct ToyModel {
  ModelShape shape;
  std::vector<double> encoder;
  std::vector<double> head;

  // Every weight and bias ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static ToyModel init(const ModelShape& shape, Rng& rng);
};

std::vector<double> encode(const ModelShape& shape, std::span<const double> encoder_params,
                           std::span<const double> x);
std::vector<double> head_forward(const ModelShape& shape, std::span<const double> head_params,
                                 std::span<const double> z);
std::vector<double> predict(const ToyModel& model, std::span<const double> x);

// Fraction of samples whose argmax prediction equals the integer target.
double accuracy(const ToyModel& model, const EmbeddingSet& data);

struct TrainSample {
  std::vector<double> x;
  std::optional<double> y;                    // class index or regression value; absent when unlabelled
  std::vector<std::vector<double>> neighbors;  // target-encoder encodings (constants)
};

struct LossSpec {
  Task task = Task::Classification;
  double lambda = 1.0;
};

struct LossBreakdown {
  double sup = 0.0;    // mean over labelled samples
  double unsup = 0.0;  // mean over the whole batch, unmatched samples contributing 0
  double total = 0.0;  // sup + lambda * unsup
  std::size_t labeled = 0;
  std::size_t matched = 0;
};

struct ForwardBackward {
  LossBreakdown loss;
  std::vector<double> grad_encoder;
  std::vector<double> grad_head;
};

// Exact gradients of sup + lambda * unsup. When lambda is zero the
// consistency term does not touch the gradients at all.
ForwardBackward forward_backward(const ToyModel& model, std::span<const TrainSample> batch, const LossSpec& spec);

struct SynthConfig {
  std::uint32_t n_domains = 5;
  std::size_t samples_per_domain = 200;
  std::vector<std::uint32_t> labeled_domains{0, 1};
  std::vector<std::uint32_t> unlabeled_domains{2, 3, 4};
  std::uint32_t ood_domains = 2;      // held out, labelled n_domains .. n_domains + ood_domains - 1
  double rotation_per_domain = 0.3;   // radians per domain index
  double class_separation = 4.0;
  double noise_sd = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthData {
  EmbeddingSet labeled;    // targets present
  EmbeddingSet unlabeled;  // targets withheld
  EmbeddingSet id_test;    // fresh draws from the labelled domains
  EmbeddingSet ood_test;   // held-out rotations beyond every training domain

  // labeled followed by unlabeled.
  EmbeddingSet train() const;
};

// Two Gaussian classes at +/- class_separation/2 on the x axis, rotated by
// domain * rotation_per_domain. Deterministic per seed.
SynthData gen_synth(const SynthConfig& cfg);

struct TrainConfig {
  ModelShape shape;
  std::size_t total_steps = 1500;
  std::size_t batch_size = 64;
  double lr = 0.05;
  std::size_t k = 1;
  CaliperParams caliper{0.05, 1.0, 1.0};
  double zeta_start = 0.99;
  double zeta_end = 0.999;
  double lambda_final = 1.0;
  double warmup_fraction = 0.1;
  std::size_t bank_capacity = 512;
  QuerySource query_source = QuerySource::Target;
  // Labelled-split samples become domain 1 and unlabelled-split domain 0.
  bool binary_domains = true;
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;
  unsigned threads = 1;

  void validate() const;
};

struct MetricsRow {
  std::size_t step = 0;
  double l_sup = 0.0;
  double l_unsup = 0.0;
  double lambda = 0.0;
  double retention = 0.0;
  double id_acc = 0.0;
  double ood_acc = 0.0;
};

struct MatchStats {
  std::size_t queries = 0;
  std::size_t matched = 0;
  std::size_t pairs = 0;
  std::size_t cross_domain_violations = 0;
  double distance_sum = 0.0;

  double retention() const { return queries ? static_cast<double>(matched) / static_cast<double>(queries) : 0.0; }
  double mean_distance() const { return pairs ? distance_sum / static_cast<double>(pairs) : 0.0; }
};

struct TrainResult {
  ToyModel model;
  std::vector<MetricsRow> history;
  MatchStats stats;
  double id_acc = 0.0;
  double ood_acc = 0.0;
};

enum class Method { Erm, Okapi };

// Minibatch SGD over D = labelled + unlabelled. ERM uses only the supervised
// loss; Okapi adds the online matching pipeline. Both consume the random
// stream identically, so with lambda = 0 their trajectories coincide.
class Trainer {
 public:
  Trainer(const SynthData& data, TrainConfig cfg, Method method);

  // Called after every optimizer step with the step count and the model.
  void set_step_hook(std::function<void(std::size_t, const ToyModel&)> hook) { hook_ = std::move(hook); }

  void run_until(std::size_t step);
  void run() { run_until(cfg_.total_steps); }

  std::size_t step() const { return step_; }
  const ToyModel& model() const { return model_; }
  const EmaState& ema() const { return ema_; }
  const MemoryBank& bank() const { return bank_; }
  const PropensityModel& scorer() const { return scorer_; }
  TrainResult result() const;

  // Versioned binary snapshot of everything that determines future steps.
  std::vector<std::uint8_t> checkpoint() const;
  void save_checkpoint(const std::filesystem::path& path) const;
  static Trainer resume(const SynthData& data, TrainConfig cfg, std::span<const std::uint8_t> blob);
  static Trainer resume(const SynthData& data, TrainConfig cfg, const std::filesystem::path& path);

 private:
  void train_step();
  std::vector<std::size_t> next_batch();
  DomainLabel match_domain(std::size_t index) const;

  const SynthData* data_;
  EmbeddingSet train_;
  std::size_t labeled_count_ = 0;
  TrainConfig cfg_;
  Method method_;
  LambdaSchedule lambda_;

  Rng rng_;
  ToyModel model_;
  EmaState ema_;
  MemoryBank bank_;
  PropensityModel scorer_;
  std::vector<std::size_t> order_;
  std::size_t order_cursor_ = 0;
  std::size_t step_ = 0;
  MatchStats stats_;
  std::vector<MetricsRow> history_;
  std::function<void(std::size_t, const ToyModel&)> hook_;
};

TrainResult train_erm(const SynthData& data, const TrainConfig& cfg);
TrainResult train_okapi(const SynthData& data, const TrainConfig& cfg);

// step,L_sup,L_unsup,lambda,retention,id_acc,ood_acc
std::string metrics_to_csv(std::span<const MetricsRow> history);

}  // namespace okapi
