#pragma once

// Fitness = validation accuracy + adversarial-bank accuracy, evaluated in
// process (thread pool, cached) or by an external child process.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ras/attacks.hpp"
#include "ras/graph.hpp"
#include "ras/niching.hpp"
#include "ras/nn.hpp"
#include "ras/serialize.hpp"

namespace ras {

struct EvalSchedule {
  int full_every = 10;
  int full_epochs = 50;
  int subset_size = 1000;
  int subset_epochs = 50;

  bool operator==(const EvalSchedule&) const = default;
};

void validate(const EvalSchedule& schedule, std::size_t training_size);
Json schedule_to_json(const EvalSchedule& schedule);
EvalSchedule schedule_from_json(const Json& j);

enum class EvalMode { FullSet, Subset };
std::string to_string(EvalMode mode);

inline EvalMode eval_mode(int generation, const EvalSchedule& s) {
  return generation % s.full_every == 0 ? EvalMode::FullSet : EvalMode::Subset;
}

struct FitnessReport {
  double accuracy = 0.0;
  double robustness = 0.0;
  int train_epochs_used = 0;
  EvalMode mode = EvalMode::FullSet;
  std::int64_t param_count = 0;
  std::string error;  // compile/training/protocol failure, report is then all zero

  double fitness() const { return accuracy + robustness; }
};

struct RobustnessOptions {
  /// Count only bank records whose clean image the model classifies
  /// correctly (needs the clean sidecar).
  bool clean_correct_denominator = false;
};

/// Adversarial accuracy: fraction of bank records whose label the model
/// still predicts. Throws ConfigError on an empty bank.
double score_robustness(Network<float>& net, const AdversarialBank& bank, const AdversarialBank* clean = nullptr,
                        const RobustnessOptions& options = {});

/// Everything an in-process evaluation needs besides the genome.
struct EvalContext {
  const Dataset* train_set = nullptr;
  const AdversarialBank* bank = nullptr;
  const AdversarialBank* clean = nullptr;
  EvalSchedule schedule;
  TrainConfig train;  // max_epochs is replaced by the schedule's budget
  CompileOptions compile;
  RobustnessOptions robustness;
  double validation_fraction = 0.1;
};

/// Seed shared by every evaluation of one generation.
inline std::uint64_t evaluation_seed(std::uint64_t run_seed, int generation) {
  return derive_seed(run_seed, 0x4556, generation);
}

/// Compiles, trains on the scheduled budget with a seeded 10% validation
/// hold-out, scores the bank. Failures give a zero report with `error` set.
FitnessReport evaluate(const ModelGene& model, const GenePool& pool, const EvalContext& context, int generation,
                       std::uint64_t seed);

class EvaluationCache {
 public:
  static std::string key(const std::string& structure, std::uint64_t seed, const EvalSchedule& schedule,
                         EvalMode mode);
  std::optional<FitnessReport> find(const std::string& key) const;
  void store(const std::string& key, const FitnessReport& report);
  std::size_t hits() const { return hits_; }
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, FitnessReport> entries_;
  mutable std::atomic<std::size_t> hits_{0};
};

EvalOutcome to_outcome(const FitnessReport& report);

/// Thread-pool evaluator. `parallelism` 1 runs everything on the calling thread.
class LocalEvaluator : public ModelEvaluator {
 public:
  LocalEvaluator(EvalContext context, std::uint64_t run_seed, int parallelism, EvaluationCache* cache = nullptr);
  std::vector<EvalOutcome> evaluate(const std::vector<GeneId>& models, const GenePool& pool, int generation) override;

 private:
  EvalContext context_;
  std::uint64_t run_seed_;
  int parallelism_;
  EvaluationCache* cache_;
};

// --- external evaluator --------------------------------------------------------

struct ExternalRequest {
  Json genome;  // model snapshot
  TensorShape input_shape;
  int n_classes = 0;
  EvalSchedule schedule;
  int generation = 0;
  std::uint64_t seed = 0;
  std::string bank_path;
};

Json request_to_json(const ExternalRequest& request);
ExternalRequest request_from_json(const Json& j);
/// One response line: {"accuracy", "robustness", "train_epochs_used"}.
std::string response_line(const FitnessReport& report);
/// Throws ParseError when the line is not a well-formed response.
FitnessReport parse_response_line(const std::string& line);

/// Persistent child process speaking the line protocol on stdin/stdout.
/// Timeouts and protocol violations give zero reports and restart the child.
class ExternalEvaluator : public ModelEvaluator {
 public:
  ExternalEvaluator(std::vector<std::string> command, ExternalRequest base, std::chrono::milliseconds timeout);
  ~ExternalEvaluator() override;
  ExternalEvaluator(const ExternalEvaluator&) = delete;
  ExternalEvaluator& operator=(const ExternalEvaluator&) = delete;

  std::vector<EvalOutcome> evaluate(const std::vector<GeneId>& models, const GenePool& pool, int generation) override;
  /// Sends one request and waits for its response line.
  FitnessReport request(const ExternalRequest& request);

 private:
  void start();
  void stop();

  std::vector<std::string> command_;
  ExternalRequest base_;
  std::chrono::milliseconds timeout_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string pending_;
};

}  // namespace ras
