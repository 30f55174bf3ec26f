// okapi: offline matching, balance diagnostics, caliper grid search and the
// toy training demo.
//
// Exit codes: 0 ok, 1 I/O, 2 invalid input, 3 empty result, 64 usage.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "okapi/core.hpp"
#include "okapi/diagnostics.hpp"
#include "okapi/io.hpp"
#include "okapi/matcher.hpp"
#include "okapi/propensity.hpp"
#include "okapi/toytrain.hpp"

namespace {

using namespace okapi;
using nlohmann::ordered_json;

constexpr int kExitIo = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitEmpty = 3;
constexpr int kExitUsage = 64;

unsigned default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n ? n : 1;
}

// --- shared option groups ---------------------------------------------------

struct DataOptions {
  std::string embeddings;
  std::string format = "auto";
  std::vector<std::uint32_t> labeled_domains;

  void add(CLI::App* cmd) {
    cmd->add_option("--embeddings", embeddings, "Embedding file (.okpi binary or .csv)")->required();
    cmd->add_option("--format", format, "auto, binary or csv")->capture_default_str();
    cmd->add_option("--labeled-domains", labeled_domains,
                    "Reduce to two domains first: these labels become 1, all others 0")
        ->delimiter(',');
  }

  EmbeddingSet load() const {
    EmbeddingFormat fmt;
    if (format == "auto") {
      fmt = format_from_path(embeddings);
    } else if (format == "binary") {
      fmt = EmbeddingFormat::Binary;
    } else if (format == "csv") {
      fmt = EmbeddingFormat::Csv;
    } else {
      throw ValidationError("unknown format '" + format + "' (expected auto, binary or csv)");
    }
    auto data = load_embeddings(embeddings, fmt);
    if (labeled_domains.empty()) return data;
    std::vector<DomainLabel> labels;
    for (auto d : labeled_domains) labels.emplace_back(d);
    return binary_reduction(data, labels);
  }
};

struct ModelOptions {
  std::string model;
  std::string save_path;
  FitOptions fit;

  void add(CLI::App* cmd) {
    cmd->add_option("--model", model, "Propensity model JSON; fitted on the embeddings when omitted");
    cmd->add_option("--save-model", save_path, "Write the fitted propensity model here");
    cmd->add_option("--epochs", fit.epochs, "Propensity fit epochs")->capture_default_str();
    cmd->add_option("--lr", fit.lr, "Propensity fit learning rate")->capture_default_str();
  }

  PropensityModel obtain(const EmbeddingSet& data, std::uint64_t seed) {
    if (!model.empty()) return load_model(model);
    fit.seed = seed;
    const auto r = fit_offline_detailed(data, fit);
    std::cerr << "okapi: fitted propensity model, loss " << r.initial_loss << " -> " << r.final_loss << "\n";
    if (!save_path.empty()) save_model(r.model, save_path);
    return r.model;
  }
};

Direction parse_direction(const std::string& s) {
  if (s == "lu") return Direction::LabeledToUnlabeled;
  if (s == "ul") return Direction::UnlabeledToLabeled;
  if (s == "both") return Direction::Both;
  throw ValidationError("unknown direction '" + s + "' (expected lu, ul or both)");
}

// --- match ------------------------------------------------------------------

struct MatchCommand {
  DataOptions data;
  ModelOptions model;
  std::size_t k = 1;
  CaliperParams params;
  std::string direction = "both";
  std::string out;

  void add(CLI::App* cmd) {
    data.add(cmd);
    model.add(cmd);
    cmd->add_option("--k", k, "Neighbours per query")->capture_default_str();
    cmd->add_option("--t-fixed", params.t_fixed, "Fixed caliper, in [0, 0.5)")->capture_default_str();
    cmd->add_option("--t-std", params.t_std, "Std caliper multiplier; inf disables")->capture_default_str();
    cmd->add_option("--tau", params.tau, "Propensity temperature")->capture_default_str();
    cmd->add_option("--direction", direction, "lu, ul or both")->capture_default_str();
    cmd->add_option("--out", out, "Match records (JSONL); stdout when omitted");
  }

  int run(std::uint64_t seed, unsigned threads) {
    params.validate();
    const auto set = data.load();
    const auto ps = model.obtain(set, seed);
    const auto records = matched_samples(set, ps, params, k, parse_direction(direction), threads);
    const auto summary = summarize(records);
    ordered_json j;
    j["records"] = summary.records;
    j["matched"] = summary.matched;
    j["retention"] = summary.retention;
    j["mean_distance"] = summary.mean_distance;
    if (out.empty()) {
      for (const auto& r : records) std::cout << match_record_to_json(r) << "\n";
      std::cerr << "okapi: " << j.dump() << "\n";
    } else {
      save_matches(records, out);
      std::cout << j.dump() << "\n";
    }
    return 0;
  }
};

// --- diagnose ---------------------------------------------------------------

struct DiagnoseCommand {
  DataOptions data;
  std::string matches;

  void add(CLI::App* cmd) {
    data.add(cmd);
    cmd->add_option("--matches", matches, "Match records (JSONL) to assess");
  }

  int run() {
    const auto set = data.load();
    ordered_json j;
    j["raw"] = ordered_json::parse(report_to_json(domain_balance(set)));
    if (!matches.empty()) {
      const auto records = load_matches(matches);
      j["matched"] = ordered_json::parse(report_to_json(matched_balance(set, records)));
    }
    std::cout << j.dump() << "\n";
    return 0;
  }
};

// --- gridsearch -------------------------------------------------------------

struct GridCommand {
  DataOptions data;
  ModelOptions model;
  GridSpec grid;
  std::string direction = "both";
  std::string out;

  void add(CLI::App* cmd) {
    data.add(cmd);
    model.add(cmd);
    cmd->add_option("--t-fixed-values", grid.t_fixed_values, "Comma-separated fixed calipers")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--t-std-values", grid.t_std_values, "Comma-separated std calipers (inf allowed)")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--tau-values", grid.tau_values, "Comma-separated temperatures")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--k", grid.k, "Neighbours per query")->capture_default_str();
    cmd->add_option("--min-retention", grid.min_retention, "Drop cells retaining fewer queries")
        ->capture_default_str();
    cmd->add_option("--direction", direction, "lu, ul or both")->capture_default_str();
    cmd->add_option("--out", out, "Ranked CSV; stdout when omitted");
  }

  int run(std::uint64_t seed, unsigned threads) {
    grid.direction = parse_direction(direction);
    grid.validate();
    const auto set = data.load();
    const auto ps = model.obtain(set, seed);
    const auto results = grid_search(set, ps, grid, threads);
    const auto csv = grid_to_csv(results, grid.k);
    if (out.empty()) {
      std::cout << csv;
    } else {
      write_text(out, csv);
      std::cerr << "okapi: wrote " << results.size() << " ranked cells to " << out << "\n";
    }
    return 0;
  }
};

// --- synth ------------------------------------------------------------------

void add_synth_options(CLI::App* cmd, SynthConfig& s) {
  cmd->add_option("--n-domains", s.n_domains, "Training domains")->capture_default_str();
  cmd->add_option("--samples-per-domain", s.samples_per_domain, "Samples per domain")->capture_default_str();
  cmd->add_option("--labeled", s.labeled_domains, "Labelled domains")->delimiter(',')->capture_default_str();
  cmd->add_option("--unlabeled", s.unlabeled_domains, "Unlabelled domains")->delimiter(',')->capture_default_str();
  cmd->add_option("--ood-domains", s.ood_domains, "Held-out test rotations")->capture_default_str();
  cmd->add_option("--rotation", s.rotation_per_domain, "Radians per domain index")->capture_default_str();
  cmd->add_option("--separation", s.class_separation, "Distance between class centres")->capture_default_str();
  cmd->add_option("--noise", s.noise_sd, "Per-coordinate noise sd")->capture_default_str();
}

struct SynthCommand {
  SynthConfig cfg;
  std::string out_dir;
  std::string format = "binary";

  void add(CLI::App* cmd) {
    add_synth_options(cmd, cfg);
    cmd->add_option("--out-dir", out_dir, "Directory for the dataset files")->required();
    cmd->add_option("--format", format, "binary or csv")->capture_default_str();
  }

  int run(std::uint64_t seed) {
    cfg.seed = seed;
    EmbeddingFormat fmt;
    std::string ext;
    if (format == "binary") {
      fmt = EmbeddingFormat::Binary;
      ext = ".okpi";
    } else if (format == "csv") {
      fmt = EmbeddingFormat::Csv;
      ext = ".csv";
    } else {
      throw ValidationError("unknown format '" + format + "' (expected binary or csv)");
    }
    const auto d = gen_synth(cfg);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
    ordered_json j;
    const std::pair<const char*, const EmbeddingSet*> parts[] = {
        {"labeled", &d.labeled}, {"unlabeled", &d.unlabeled}, {"id_test", &d.id_test}, {"ood_test", &d.ood_test}};
    for (const auto& [name, set] : parts) {
      const auto path = std::filesystem::path(out_dir) / (std::string(name) + ext);
      save_embeddings(*set, path, fmt);
      j[name] = {{"path", path.string()}, {"samples", set->size()}};
    }
    std::cout << j.dump() << "\n";
    return 0;
  }
};

// --- train-demo -------------------------------------------------------------

struct TrainCommand {
  SynthConfig synth;
  TrainConfig cfg;
  std::string method = "okapi";
  std::string query_source = "target";
  bool compare = false;
  std::size_t seeds = 5;
  std::string metrics_out;
  std::string checkpoint_out;
  std::size_t checkpoint_at = 0;
  std::string resume;

  void add(CLI::App* cmd) {
    add_synth_options(cmd, synth);
    cmd->add_option("--method", method, "erm or okapi")->capture_default_str();
    cmd->add_option("--steps", cfg.total_steps, "SGD steps")->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size, "Batch size")->capture_default_str();
    cmd->add_option("--lr", cfg.lr, "SGD learning rate")->capture_default_str();
    cmd->add_option("--hidden", cfg.shape.hidden, "Encoder hidden width")->capture_default_str();
    cmd->add_option("--embed-dim", cfg.shape.embed_dim, "Encoding dimension")->capture_default_str();
    cmd->add_option("--k", cfg.k, "Neighbours per query")->capture_default_str();
    cmd->add_option("--t-fixed", cfg.caliper.t_fixed, "Fixed caliper")->capture_default_str();
    cmd->add_option("--t-std", cfg.caliper.t_std, "Std caliper multiplier; inf disables")->capture_default_str();
    cmd->add_option("--tau", cfg.caliper.tau, "Propensity temperature")->capture_default_str();
    cmd->add_option("--zeta-start", cfg.zeta_start, "Initial EMA decay")->capture_default_str();
    cmd->add_option("--zeta-end", cfg.zeta_end, "Final EMA decay")->capture_default_str();
    cmd->add_option("--lambda-final", cfg.lambda_final, "Consistency weight after warmup")->capture_default_str();
    cmd->add_option("--warmup", cfg.warmup_fraction, "Fraction of steps spent warming up lambda")
        ->capture_default_str();
    cmd->add_option("--bank", cfg.bank_capacity, "Memory bank capacity")->capture_default_str();
    cmd->add_option("--query-source", query_source, "target or online")->capture_default_str();
    cmd->add_option("--eval-every", cfg.eval_every, "Steps between metrics rows")->capture_default_str();
    cmd->add_flag("--compare", compare, "Run ERM and Okapi on paired seeds and report the OOD delta");
    cmd->add_option("--seeds", seeds, "Paired seeds for --compare")->capture_default_str();
    cmd->add_option("--metrics-out", metrics_out, "Metrics history CSV (single run only)");
    cmd->add_option("--checkpoint-out", checkpoint_out, "Write a training checkpoint here");
    cmd->add_option("--checkpoint-at", checkpoint_at, "Step at which to checkpoint (default: the end)");
    cmd->add_option("--resume", resume, "Resume from a checkpoint taken with the same settings");
  }

  Method parsed_method() const {
    if (method == "erm") return Method::Erm;
    if (method == "okapi") return Method::Okapi;
    throw ValidationError("unknown method '" + method + "' (expected erm or okapi)");
  }

  static ordered_json result_json(const std::string& name, std::uint64_t seed, const TrainResult& r) {
    ordered_json j;
    j["method"] = name;
    j["seed"] = seed;
    j["id_acc"] = r.id_acc;
    j["ood_acc"] = r.ood_acc;
    j["retention"] = r.stats.retention();
    j["mean_distance"] = r.stats.mean_distance();
    j["cross_domain_violations"] = r.stats.cross_domain_violations;
    return j;
  }

  int run(std::uint64_t seed, unsigned threads) {
    if (query_source == "target") {
      cfg.query_source = QuerySource::Target;
    } else if (query_source == "online") {
      cfg.query_source = QuerySource::Online;
    } else {
      throw ValidationError("unknown query source '" + query_source + "' (expected target or online)");
    }
    cfg.threads = threads;
    if (compare) return run_compare(seed);

    const Method m = parsed_method();
    synth.seed = seed;
    cfg.seed = seed;
    const auto data = gen_synth(synth);
    auto trainer = resume.empty() ? Trainer(data, cfg, m) : Trainer::resume(data, cfg, std::filesystem::path(resume));
    if (!checkpoint_out.empty()) {
      trainer.run_until(checkpoint_at ? std::min(checkpoint_at, cfg.total_steps) : cfg.total_steps);
      trainer.save_checkpoint(checkpoint_out);
      std::cerr << "okapi: checkpoint at step " << trainer.step() << " written to " << checkpoint_out << "\n";
    }
    trainer.run();
    const auto result = trainer.result();
    if (!metrics_out.empty()) write_text(metrics_out, metrics_to_csv(result.history));
    std::cout << result_json(method, seed, result).dump() << "\n";
    return 0;
  }

  int run_compare(std::uint64_t seed) {
    if (!metrics_out.empty() || !checkpoint_out.empty() || !resume.empty())
      throw ValidationError("--compare does not take --metrics-out, --checkpoint-out or --resume");
    if (seeds == 0) throw ValidationError("--seeds must be positive");
    ordered_json runs = ordered_json::array();
    double erm_ood = 0, okapi_ood = 0, erm_id = 0, okapi_id = 0;
    for (std::size_t i = 0; i < seeds; ++i) {
      const std::uint64_t s = seed + i;
      synth.seed = s;
      cfg.seed = s;
      const auto data = gen_synth(synth);
      const auto erm = train_erm(data, cfg);
      const auto okapi = train_okapi(data, cfg);
      std::cerr << "okapi: seed " << s << " ood erm " << erm.ood_acc << " okapi " << okapi.ood_acc << "\n";
      runs.push_back(result_json("erm", s, erm));
      runs.push_back(result_json("okapi", s, okapi));
      erm_ood += erm.ood_acc;
      okapi_ood += okapi.ood_acc;
      erm_id += erm.id_acc;
      okapi_id += okapi.id_acc;
    }
    const double n = static_cast<double>(seeds);
    ordered_json j;
    j["runs"] = runs;
    j["mean_erm_ood"] = erm_ood / n;
    j["mean_okapi_ood"] = okapi_ood / n;
    j["mean_ood_delta"] = (okapi_ood - erm_ood) / n;
    j["mean_id_delta"] = (okapi_id - erm_id) / n;
    std::cout << j.dump() << "\n";
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Propensity-calipered cross-domain matching and the Okapi toy trainer"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML file with one [subcommand] table of option values");

  std::uint64_t seed = 0;
  unsigned threads = default_threads();
  app.add_option("--seed", seed, "Random seed")->envname("OKAPI_SEED")->capture_default_str();
  app.add_option("--threads", threads, "Matching threads (default: all cores)")->capture_default_str();

  MatchCommand match;
  DiagnoseCommand diagnose;
  GridCommand gridsearch;
  SynthCommand synth;
  TrainCommand train;
  auto* match_cmd = app.add_subcommand("match", "Calipered cross-domain k-NN over an embedding file");
  auto* diagnose_cmd = app.add_subcommand("diagnose", "Covariate balance of raw domains and matched pairs");
  auto* grid_cmd = app.add_subcommand("gridsearch", "Rank caliper settings by matched balance");
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic rotated-domain dataset");
  auto* train_cmd = app.add_subcommand("train-demo", "Train the toy model with ERM or Okapi");
  match.add(match_cmd);
  diagnose.add(diagnose_cmd);
  gridsearch.add(grid_cmd);
  synth.add(synth_cmd);
  train.add(train_cmd);

  if (argc <= 1) {
    std::cerr << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, std::cerr, std::cerr);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, std::cerr, std::cerr);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitUsage;
  }

  if (threads == 0) threads = 1;
  std::cerr << "okapi: effective configuration\n";
  {
    std::istringstream all(app.config_to_str(true, false));
    const std::string prefix = app.get_subcommands().front()->get_name() + ".";
    for (std::string line; std::getline(all, line);) {
      const auto eq = line.find('=');
      const auto dot = line.find('.');
      if (dot == std::string::npos || dot > eq || line.starts_with(prefix)) std::cerr << "  " << line << "\n";
    }
  }

  try {
    if (match_cmd->parsed()) return match.run(seed, threads);
    if (diagnose_cmd->parsed()) return diagnose.run();
    if (grid_cmd->parsed()) return gridsearch.run(seed, threads);
    if (synth_cmd->parsed()) return synth.run(seed);
    if (train_cmd->parsed()) return train.run(seed, threads);
  } catch (const IoError& e) {
    std::cerr << "okapi: I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const InvalidInput& e) {
    std::cerr << "okapi: invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const EmptyResult& e) {
    std::cerr << "okapi: empty result: " << e.what() << "\n";
    return kExitEmpty;
  } catch (const std::exception& e) {
    std::cerr << "okapi: error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
