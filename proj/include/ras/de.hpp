#pragma once

// DE/rand/1/bin minimiser over a box.

#include <functional>
#include <span>
#include <vector>

#include "ras/common.hpp"

namespace ras {

struct DeOptions {
  int population = 40;
  int iterations = 100;
  double f = 0.5;   // differential weight
  double cr = 0.9;  // crossover rate
};

struct DeResult {
  std::vector<double> best;
  double best_value = 0.0;
  int iterations_run = 0;
  long evaluations = 0;
  bool stopped_early = false;
};

/// Scores `count` candidates stored row-major in `candidates` (count x dim),
/// writing one value per candidate. Returning true requests early termination.
using BatchObjective = std::function<bool(std::span<const double> candidates, int count, std::span<double> values)>;

/// Initial population is uniform in [lower, upper]; each iteration builds one
/// trial per member (r1, r2, r3 distinct from it and each other), clips trials
/// to the box, and keeps the trial when it is no worse.
DeResult differential_evolution(std::span<const double> lower, std::span<const double> upper,
                                const BatchObjective& objective, const DeOptions& options, Rng& rng);

}  // namespace ras
