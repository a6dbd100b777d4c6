// Command-line front end: evolve, attack-bank, evaluate, compile, stats, serve.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ras/attacks.hpp"
#include "ras/fitness.hpp"
#include "ras/graph.hpp"
#include "ras/runner.hpp"
#include "ras/serialize.hpp"

namespace fs = std::filesystem;
using namespace ras;

namespace {

void print_json(const Json& j) { std::cout << j.dump() << std::endl; }

void log_event(std::ostream& log, const Json& j) {
  log << j.dump() << '\n';
  std::cerr << j.dump() << '\n';
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

TensorShape parse_shape(const std::string& text) {
  int h = 0, w = 0, c = 0;
  char x1 = 0, x2 = 0;
  std::istringstream in(text);
  if (!(in >> h >> x1 >> w >> x2 >> c) || x1 != 'x' || x2 != 'x' || h < 1 || w < 1 || c < 1)
    throw ConfigError("input shape must look like 8x8x3, got '" + text + "'");
  return TensorShape::spatial(h, w, c);
}

int run_attack_bank(const RunConfig& config, const std::string& out, const std::string& victims_arg,
                    const std::string& specs_arg, const BankBuildOptions& options, const DeOptions& de,
                    const TrainConfig& victim_train) {
  validate(config);
  const Datasets data = load_datasets(config.dataset);
  if (out.empty()) throw ConfigError("no bank output path (set bank_path or --out)");
  std::ofstream log(out + ".log.jsonl");
  if (!log) throw ConfigError("cannot write " + out + ".log.jsonl");

  std::vector<AttackSpec> specs;
  for (const auto& s : split_list(specs_arg)) {
    AttackSpec spec = parse_attack_spec(s);
    spec.budget = de;
    specs.push_back(spec);
  }
  if (specs.empty()) throw ConfigError("no attack specs given");

  auto [victim_train_set, victim_val_set] = split(data.train, 0.9, derive_seed(options.seed, 0x5654));
  std::vector<Victim> victims;
  std::uint8_t tag = 0;
  for (const auto& name : split_list(victims_arg)) {
    const std::uint8_t this_tag = tag++;
    try {
      TrainConfig tc = victim_train;
      tc.seed = derive_seed(options.seed, 0x5654, this_tag);
      Victim v = train_victim(name, this_tag, victim_train_set, victim_val_set, tc);
      v.test_accuracy = accuracy(*v.net, data.test);
      log_event(log, {{"type", "victim"}, {"name", name}, {"tag", this_tag}, {"test_accuracy", v.test_accuracy}});
      victims.push_back(std::move(v));
    } catch (const std::exception& e) {
      log_event(log, {{"type", "victim_skipped"}, {"name", name}, {"tag", this_tag}, {"error", e.what()}});
    }
  }
  if (victims.empty()) throw ConfigError("no victim could be loaded");

  const BankBuildResult result = build_bank(victims, data.test, specs, options);
  for (const auto& cell : result.cells)
    log_event(log, {{"type", "cell"},
                    {"victim", cell.victim},
                    {"spec", cell.spec},
                    {"attempted", cell.attempted},
                    {"succeeded", cell.succeeded}});
  write_bank(out, result.bank);
  write_bank(clean_sidecar_path(out), result.clean);
  print_json({{"bank", out}, {"records", result.bank.size()}, {"config_hash", config_hash(config)}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust architecture search: evolve, attack, evaluate"};
  app.require_subcommand(1);

  std::string config_path, run_dir, genome_path, out_path, input_text = "8x8x3";
  int stop_after = -1, generation = 0, classes = 3;
  bool resume = false, as_json = false;
  std::optional<int> generations_override, parallelism_override;
  std::optional<std::uint64_t> seed_override, model_id;
  std::int64_t max_params = 0;

  auto* evolve = app.add_subcommand("evolve", "run or resume an evolution");
  evolve->add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  evolve->add_option("--run-dir", run_dir, "output directory")->required();
  evolve->add_flag("--resume", resume, "continue from the run directory's checkpoint");
  evolve->add_option("--stop-after", stop_after, "stop once this generation is reached");
  evolve->add_option("--generations", generations_override, "override config generations");
  evolve->add_option("--seed", seed_override, "override config seed");
  evolve->add_option("--parallelism", parallelism_override, "override config parallelism");

  std::string victims = "cnn,mlp", specs = "L0:1,L0:3,L0:5,L0:10,Linf:1,Linf:3,Linf:5,Linf:10";
  BankBuildOptions bank_options;
  DeOptions de;
  TrainConfig victim_train;
  victim_train.max_epochs = 30;
  auto* bank = app.add_subcommand("attack-bank", "train victims and build the adversarial bank");
  bank->add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  bank->add_option("--out", out_path, "bank path (defaults to the config's bank_path)");
  bank->add_option("--victims", victims, "comma list of built-in victims (cnn, mlp) or genome snapshots");
  bank->add_option("--specs", specs, "comma list of NORM:TH attack specs");
  bank->add_option("--quota", bank_options.quota, "successes per victim and spec");
  bank->add_option("--max-attempts", bank_options.max_attempts, "attacked images per victim and spec");
  bank->add_option("--seed", bank_options.seed, "bank seed");
  bank->add_option("--de-population", de.population, "DE population");
  bank->add_option("--de-iterations", de.iterations, "DE iterations");
  bank->add_option("--victim-epochs", victim_train.max_epochs, "victim training epochs");

  auto* eval = app.add_subcommand("evaluate", "train and score one genome");
  eval->add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  eval->add_option("--genome", genome_path, "model snapshot, pool or checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--model", model_id, "model id inside a pool or checkpoint");
  eval->add_option("--generation", generation, "generation whose schedule and seed to use");
  eval->add_option("--seed", seed_override, "override config seed");

  auto* comp = app.add_subcommand("compile", "print the compiled graph of a genome");
  comp->add_option("--genome", genome_path, "model snapshot, pool or checkpoint")->required()->check(CLI::ExistingFile);
  comp->add_option("--model", model_id, "model id inside a pool or checkpoint");
  comp->add_option("--input", input_text, "input shape HxWxC");
  comp->add_option("--classes", classes, "number of classes");
  comp->add_option("--max-params", max_params, "parameter budget, 0 = unlimited");
  comp->add_flag("--json", as_json, "emit JSON instead of text");

  auto* stats = app.add_subcommand("stats", "rebuild stats tables from a run's event log");
  stats->add_option("--run-dir", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  auto* serve = app.add_subcommand("serve", "answer external-evaluator requests on stdin");
  serve->add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    auto config = [&] {
      RunConfig c = load_config(config_path);
      if (generations_override) c.generations = *generations_override;
      if (seed_override) c.seed = *seed_override;
      if (parallelism_override) c.parallelism = *parallelism_override;
      return c;
    };
    if (*evolve) {
      const RunSummary s = run_evolve(config(), run_dir, RunOptions{resume, stop_after});
      Json best = s.best.empty() ? Json(nullptr)
                                 : Json{{"model", s.best.front().model},
                                        {"fitness", s.best.front().fitness.total()},
                                        {"accuracy", s.best.front().fitness.accuracy},
                                        {"robustness", s.best.front().fitness.robustness}};
      print_json({{"generation", s.generation}, {"finished", s.finished}, {"best", best}});
    } else if (*bank) {
      const RunConfig c = config();
      return run_attack_bank(c, out_path.empty() ? c.bank_path : out_path, victims, specs, bank_options, de,
                             victim_train);
    } else if (*eval) {
      const LoadedModel genome = load_genome(genome_path, model_id);
      const FitnessReport r = evaluate_one(genome, config(), generation);
      Json j{{"accuracy", r.accuracy},          {"robustness", r.robustness}, {"fitness", r.fitness()},
             {"param_count", r.param_count},    {"epochs", r.train_epochs_used}, {"mode", to_string(r.mode)}};
      if (!r.error.empty()) j["error"] = r.error;
      print_json(j);
    } else if (*comp) {
      const LoadedModel genome = load_genome(genome_path, model_id);
      const CompiledGraph g =
          compile(genome.pool.model(genome.model_id), genome.pool, parse_shape(input_text), classes, {max_params});
      if (as_json)
        print_json(graph_to_json(g));
      else
        std::cout << dump_text(g);
    } else if (*stats) {
      const auto rows = export_stats(run_dir);
      print_json({{"rows", rows.size()},
                  {"stats", (fs::path(run_dir) / kStatsFile).string()},
                  {"clusters", (fs::path(run_dir) / kClustersFile).string()}});
    } else if (*serve) {
      serve_requests(config(), std::cin, std::cout);
    }
  } catch (const ParseError& e) {
    std::cerr << Json{{"error", "parse"}, {"location", e.location}, {"message", e.what()}}.dump() << std::endl;
    return 3;
  } catch (const CompileError& e) {
    std::cerr << Json{{"error", "compile"}, {"message", e.what()}}.dump() << std::endl;
    return 4;
  } catch (const IntegrityError& e) {
    std::cerr << Json{{"error", "integrity"}, {"message", e.what()}}.dump() << std::endl;
    return 5;
  } catch (const ConfigError& e) {
    std::cerr << Json{{"error", "config"}, {"message", e.what()}}.dump() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << Json{{"error", "runtime"}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  }
  return 0;
}
