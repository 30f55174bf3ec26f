#include "okapi/propensity.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "okapi/io.hpp"

namespace okapi {

PropensityModel PropensityModel::zeros(std::size_t dim, std::size_t domain_count) {
  PropensityModel m;
  m.dim = dim;
  m.domain_count = domain_count;
  m.weights.assign(dim * domain_count, 0.0);
  m.bias.assign(domain_count, 0.0);
  return m;
}

std::vector<double> PropensityModel::logits(std::span<const double> z) const {
  if (z.size() != dim)
    throw DimensionMismatch("propensity model expects dimension " + std::to_string(dim) + ", got " +
                            std::to_string(z.size()));
  std::vector<double> out(bias);
  for (std::size_t c = 0; c < domain_count; ++c) {
    const double* w = weights.data() + c * dim;
    double acc = 0.0;
    for (std::size_t j = 0; j < dim; ++j) acc += w[j] * z[j];
    out[c] += acc;
  }
  return out;
}

void PropensityModel::validate() const {
  if (dim == 0 || domain_count == 0) throw ValidationError("propensity model has an empty shape");
  if (weights.size() != dim * domain_count || bias.size() != domain_count)
    throw ValidationError("propensity model parameter sizes do not match its shape");
  for (double w : weights)
    if (!std::isfinite(w)) throw ValidationError("propensity model has non-finite weights");
  for (double b : bias)
    if (!std::isfinite(b)) throw ValidationError("propensity model has non-finite bias");
}

std::vector<double> softmax(std::span<const double> logits, double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - top) / tau);
    total += out[i];
  }
  for (auto& p : out) p /= total;
  return out;
}

PropensityScore score(const PropensityModel& model, std::span<const double> z, double tau) {
  return {softmax(model.logits(z), tau)};
}

std::vector<PropensityScore> score_all(const PropensityModel& model, const Matrix& z, double tau) {
  std::vector<PropensityScore> out;
  out.reserve(z.rows);
  for (std::size_t i = 0; i < z.rows; ++i) out.push_back(score(model, z.row(i), tau));
  return out;
}

std::vector<double> inverse_frequency_weights(std::span<const DomainLabel> labels, std::size_t domain_count) {
  if (labels.empty()) throw EmptyInput("inverse_frequency_weights needs at least one label");
  std::vector<std::size_t> counts(domain_count, 0);
  for (DomainLabel s : labels) {
    if (s.value >= domain_count)
      throw ValidationError("domain label " + std::to_string(s.value) + " out of range");
    ++counts[s.value];
  }
  const auto present = static_cast<double>(std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
  const auto n = static_cast<double>(labels.size());
  std::vector<double> w(domain_count, 0.0);
  for (std::size_t s = 0; s < domain_count; ++s)
    if (counts[s] > 0) w[s] = n / (present * static_cast<double>(counts[s]));
  return w;
}

PsLossGrad ps_loss_and_grad(const PropensityModel& model, const Matrix& z, std::span<const DomainLabel> labels,
                            std::span<const double> class_weights) {
  if (z.rows == 0) throw EmptyInput("propensity loss needs a nonempty batch");
  if (z.cols != model.dim)
    throw DimensionMismatch("batch dimension " + std::to_string(z.cols) + " does not match model dimension " +
                            std::to_string(model.dim));
  if (labels.size() != z.rows) throw LengthMismatch("labels and encodings differ in length");
  if (class_weights.size() != model.domain_count) throw LengthMismatch("one class weight per domain is required");

  PsLossGrad out;
  out.grad_weights.assign(model.weights.size(), 0.0);
  out.grad_bias.assign(model.bias.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(z.rows);

  for (std::size_t i = 0; i < z.rows; ++i) {
    const auto zi = z.row(i);
    const std::size_t target = labels[i].value;
    if (target >= model.domain_count) throw ValidationError("domain label out of range for propensity model");
    const auto logit = model.logits(zi);
    const double top = *std::max_element(logit.begin(), logit.end());
    double total = 0.0;
    for (double l : logit) total += std::exp(l - top);
    const double log_norm = top + std::log(total);
    const double w = class_weights[target];
    out.loss += w * (log_norm - logit[target]) * inv_n;

    for (std::size_t c = 0; c < model.domain_count; ++c) {
      const double p = std::exp(logit[c] - log_norm);
      const double delta = w * inv_n * (p - (c == target ? 1.0 : 0.0));
      out.grad_bias[c] += delta;
      double* g = out.grad_weights.data() + c * model.dim;
      for (std::size_t j = 0; j < model.dim; ++j) g[j] += delta * zi[j];
    }
  }
  return out;
}

void apply_gradient(PropensityModel& model, const PsLossGrad& grad, double lr) {
  for (std::size_t i = 0; i < model.weights.size(); ++i) model.weights[i] -= lr * grad.grad_weights[i];
  for (std::size_t i = 0; i < model.bias.size(); ++i) model.bias[i] -= lr * grad.grad_bias[i];
}

bool ps_online_step(PropensityModel& model, const Matrix& z, std::span<const DomainLabel> labels, double lr) {
  if (z.rows == 0) return false;
  const auto w = inverse_frequency_weights(labels, model.domain_count);
  if (std::count_if(w.begin(), w.end(), [](double x) { return x > 0.0; }) < 2) return false;
  apply_gradient(model, ps_loss_and_grad(model, z, labels, w), lr);
  return true;
}

FitResult fit_offline_detailed(const EmbeddingSet& data, const FitOptions& options) {
  if (data.domains_present().size() < 2) throw SingleDomain("propensity fit needs at least two domains present");
  if (!(options.lr > 0.0)) throw ValidationError("learning rate must be positive");

  FitResult result;
  result.model = PropensityModel::zeros(data.dim(), data.domain_count());
  Rng rng(options.seed);
  for (auto& w : result.model.weights) w = rng.uniform(-0.01, 0.01);

  const Matrix z = data.embeddings();
  const auto labels = data.domains();
  const auto class_weights = inverse_frequency_weights(labels, data.domain_count());

  auto current = ps_loss_and_grad(result.model, z, labels, class_weights);
  result.initial_loss = current.loss;
  double lr = options.lr;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    PropensityModel next = result.model;
    apply_gradient(next, current, lr);
    auto next_eval = ps_loss_and_grad(next, z, labels, class_weights);
    // A step that raises the loss means lr overshoots the local curvature.
    while (next_eval.loss > current.loss && lr > 1e-12) {
      lr *= 0.5;
      next = result.model;
      apply_gradient(next, current, lr);
      next_eval = ps_loss_and_grad(next, z, labels, class_weights);
    }
    if (next_eval.loss > current.loss) break;
    result.model = std::move(next);
    current = std::move(next_eval);
  }
  result.final_loss = current.loss;
  return result;
}

PropensityModel fit_offline(const EmbeddingSet& data, const FitOptions& options) {
  return fit_offline_detailed(data, options).model;
}

std::string model_to_json(const PropensityModel& model) {
  nlohmann::ordered_json j;
  j["dim"] = model.dim;
  j["domain_count"] = model.domain_count;
  j["weights"] = model.weights;
  j["bias"] = model.bias;
  return j.dump();
}

PropensityModel model_from_json(const std::string& text) {
  PropensityModel m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.dim = j.at("dim").get<std::size_t>();
    m.domain_count = j.at("domain_count").get<std::size_t>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed propensity model: ") + e.what());
  }
  m.validate();
  return m;
}

void save_model(const PropensityModel& model, const std::filesystem::path& path) {
  write_text(path, model_to_json(model) + "\n");
}

PropensityModel load_model(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return model_from_json(std::string(bytes.begin(), bytes.end()));
}

}  // namespace okapi
