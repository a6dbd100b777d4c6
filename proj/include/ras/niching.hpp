#pragma once

// Spectrum-based niching: each cluster keeps one representative, which is
// displaced only by a strictly fitter child whose spectrum is nearest to it.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ras/genome.hpp"
#include "ras/mutation.hpp"

namespace ras {

struct ClusterPopulation {
  std::vector<GeneId> representatives;
  int generation = 0;

  bool operator==(const ClusterPopulation&) const = default;
};

/// Euclidean distance over the raw feature counts.
double spectrum_distance(const Spectrum& a, const Spectrum& b);
/// Distance with each feature divided by its range (features with zero range are ignored).
double spectrum_distance(const Spectrum& a, const Spectrum& b, const std::array<double, Spectrum::kFeatures>& range);

struct EvalOutcome {
  std::optional<Fitness> fitness;  // empty when evaluation failed
  std::string error;
  int train_epochs_used = 0;
  std::string mode;
};

/// Scores a batch of models. Implementations may evaluate concurrently; the
/// returned vector is index-aligned with `models`.
class ModelEvaluator {
 public:
  virtual ~ModelEvaluator() = default;
  virtual std::vector<EvalOutcome> evaluate(const std::vector<GeneId>& models, const GenePool& pool,
                                            int generation) = 0;
};

using ChildMaker = std::function<Child(const ModelGene& parent, GenePool& pool, Rng& rng)>;

struct NichingOptions {
  int children_per_representative = 2;
  bool normalize_spectrum = false;
  ChildMaker make_child;  // defaults to ras::make_child
};

struct ChildEvent {
  int parent_index = 0;
  GeneId parent = 0;
  GeneId child = 0;
  bool exhausted = false;  // mutation fell back to an unchanged clone
  std::vector<MutationRecord> mutations;
  EvalOutcome outcome;
  int nearest_index = -1;
  double nearest_distance = 0.0;
  bool replaced = false;
  GeneId displaced = 0;
};

struct GenerationTrace {
  int generation = 0;
  std::vector<ChildEvent> children;
};

/// Index of the nearest representative (lowest index on ties).
int nearest_representative(const Spectrum& child, const std::vector<Spectrum>& representatives,
                           bool normalize, double* distance = nullptr);

/// Evaluates every unscored representative (generation 0 setup).
std::vector<EvalOutcome> evaluate_representatives(const ClusterPopulation& clusters, GenePool& pool,
                                                  ModelEvaluator& evaluator);

/// One generation: two children per representative (built from the
/// generation-start representatives), batch evaluation, then sequential
/// replacement in child order, garbage collection and counter increment.
GenerationTrace evolve_generation(ClusterPopulation& clusters, GenePool& pool, ModelEvaluator& evaluator, Rng& rng,
                                  const NichingOptions& options = {});

}  // namespace ras
