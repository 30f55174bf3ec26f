#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "okapi/core.hpp"

namespace okapi {

// Linear softmax classifier over domains: p(s | z) = softmax(W z + b).
struct PropensityModel {
  std::size_t dim = 0;
  std::size_t domain_count = 0;
  std::vector<double> weights;  // domain_count x dim, row-major
  std::vector<double> bias;      // domain_count

  static PropensityModel zeros(std::size_t dim, std::size_t domain_count);

  std::size_t parameter_count() const { return weights.size() + bias.size(); }
  std::vector<double> logits(std::span<const double> z) const;
  // Throws ValidationError on shape or finiteness violations.
  void validate() const;
};

struct PropensityScore {
  std::vector<double> probs;

  std::size_t arity() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
};

// softmax(logits / tau), stabilised by subtracting the max logit.
std::vector<double> softmax(std::span<const double> logits, double tau = 1.0);

PropensityScore score(const PropensityModel& model, std::span<const double> z, double tau);
std::vector<PropensityScore> score_all(const PropensityModel& model, const Matrix& z, double tau);

// w(s) = N / (|S_present| * n_s) for present domains, 0 otherwise.
std::vector<double> inverse_frequency_weights(std::span<const DomainLabel> labels, std::size_t domain_count);

struct PsLossGrad {
  double loss = 0.0;
  std::vector<double> grad_weights;
  std::vector<double> grad_bias;
};

// Class-weighted mean cross-entropy of the model (tau = 1) on a batch, with
// its exact gradient.
PsLossGrad ps_loss_and_grad(const PropensityModel& model, const Matrix& z, std::span<const DomainLabel> labels,
                            std::span<const double> class_weights);

void apply_gradient(PropensityModel& model, const PsLossGrad& grad, double lr);

// One online step on a batch with inverse-frequency weights. Batches with a
// single present domain leave the model untouched; returns whether it moved.
bool ps_online_step(PropensityModel& model, const Matrix& z, std::span<const DomainLabel> labels, double lr);

struct FitOptions {
  std::size_t epochs = 300;
  double lr = 0.5;
  std::uint64_t seed = 0;
};

struct FitResult {
  PropensityModel model;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Full-batch gradient descent on the whole set. Throws SingleDomain when fewer
// than two domains are present.
FitResult fit_offline_detailed(const EmbeddingSet& data, const FitOptions& options);
PropensityModel fit_offline(const EmbeddingSet& data, const FitOptions& options);

// JSON: {"dim":..,"domain_count":..,"weights":[row-major],"bias":[..]}
std::string model_to_json(const PropensityModel& model);
PropensityModel model_from_json(const std::string& text);
void save_model(const PropensityModel& model, const std::filesystem::path& path);
PropensityModel load_model(const std::filesystem::path& path);

}  // namespace okapi
