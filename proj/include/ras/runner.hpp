#pragma once

// Experiment runner: configuration, seeded evolution with checkpoint/resume,
// event log, stats export and single-genome evaluation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ras/attacks.hpp"
#include "ras/dataset.hpp"
#include "ras/fitness.hpp"
#include "ras/niching.hpp"
#include "ras/serialize.hpp"

namespace ras {

struct DatasetConfig {
  std::string source = "synthetic";  // "synthetic" or "cifar10-binary"
  std::string path;                  // directory with data_batch_*.bin / test_batch.bin
  std::size_t subset = 0;            // cap on training samples, 0 = all
  int downscale = 0;                 // target side, 0 = native
  int n_classes = 3;
  double test_fraction = 0.2;  // synthetic only
  SyntheticOptions synthetic;
  std::uint64_t seed = 7;
};

struct ExternalConfig {
  std::vector<std::string> command;
  int timeout_ms = 600000;
};

struct RunConfig {
  std::uint64_t seed = 1;
  int generations = 20;
  int population = 25;
  PopulationCaps caps;
  EvalSchedule schedule{10, 10, 500, 10};
  DatasetConfig dataset;
  std::string bank_path;
  TrainConfig train;
  int parallelism = 1;
  bool serial_deterministic = false;
  std::int64_t max_params = 0;
  bool normalize_spectrum = false;
  bool clean_correct_denominator = false;
  std::optional<ExternalConfig> external;
};

/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig config_from_json(const Json& j);
Json config_to_json(const RunConfig& config);
RunConfig load_config(const std::string& path);
/// Hash of the canonical JSON form, as 16 hex digits.
std::string config_hash(const RunConfig& config);
void validate(const RunConfig& config);

struct Datasets {
  Dataset train;
  Dataset test;
};
Datasets load_datasets(const DatasetConfig& config);

/// Adversarial bank at `path` plus its clean sidecar when present.
struct LoadedBank {
  AdversarialBank bank;
  std::optional<AdversarialBank> clean;
};
LoadedBank load_bank(const std::string& path);
inline std::string clean_sidecar_path(const std::string& bank_path) { return bank_path + ".clean"; }

struct RunOptions {
  bool resume = false;
  int stop_after = -1;  // stop once this generation is reached, -1 = run to the end
};

struct ArchiveEntry {
  GeneId model = 0;
  int generation = 0;
  Fitness fitness;
  Json snapshot;
};

struct RunSummary {
  int generation = 0;
  bool finished = false;
  std::vector<ArchiveEntry> best;
  std::size_t cache_hits = 0;
};

inline constexpr std::size_t kArchiveSize = 5;
inline constexpr const char* kEventsFile = "events.jsonl";
inline constexpr const char* kCheckpointFile = "checkpoint.json";
inline constexpr const char* kStatsFile = "stats.csv";
inline constexpr const char* kClustersFile = "clusters.csv";
inline constexpr const char* kBestGraphFile = "best_graph.txt";
inline constexpr const char* kReportFile = "report.json";

/// Runs (or resumes) an evolution in `run_dir`, checkpointing and
/// regenerating the stats tables after every generation.
RunSummary run_evolve(const RunConfig& config, const std::string& run_dir, const RunOptions& options = {});

struct StatsRow {
  int generation = 0;
  std::size_t clusters = 0;
  double mean_fitness = 0, max_fitness = 0;
  double mean_accuracy = 0, max_accuracy = 0;
  double mean_robustness = 0, max_robustness = 0;
  double mean_blocks = 0, mean_layers = 0;
  double mean_block_conns = 0, mean_layer_conns = 0;
  double mean_layers_per_block = 0, mean_conns_per_block = 0;
  std::string config_hash;
};

/// Rebuilds per-generation rows from an event log. Throws ParseError naming
/// the offending line on corrupt input.
std::vector<StatsRow> stats_from_log(const std::string& log_text, const std::string& where = kEventsFile);
std::string stats_csv(const std::vector<StatsRow>& rows);
/// Per-representative table: fitness parts and the spectrum features.
std::string clusters_csv(const std::string& log_text, const std::string& where = kEventsFile);
/// Writes stats.csv and clusters.csv next to the event log.
std::vector<StatsRow> export_stats(const std::string& run_dir);

/// Compiles, trains and scores one genome with the run's evaluation seed
/// for `generation`.
FitnessReport evaluate_one(const LoadedModel& genome, const RunConfig& config, int generation);

/// Reads a model from a snapshot, a pool document or a checkpoint.
LoadedModel load_genome(const std::string& path, std::optional<GeneId> model_id = std::nullopt);

/// Answers external-evaluator requests from `in` on `out` until EOF.
void serve_requests(const RunConfig& config, std::istream& in, std::ostream& out);

}  // namespace ras
