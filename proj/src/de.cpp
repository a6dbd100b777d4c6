#include "ras/de.hpp"

#include <algorithm>

namespace ras {

DeResult differential_evolution(std::span<const double> lower, std::span<const double> upper,
                                const BatchObjective& objective, const DeOptions& o, Rng& rng) {
  const int dim = static_cast<int>(lower.size());
  if (dim == 0 || upper.size() != lower.size()) throw ConfigError("DE bounds must be non-empty and equal length");
  if (o.population < 4) throw ConfigError("DE/rand/1 needs a population of at least 4");
  if (o.iterations < 0) throw ConfigError("DE iterations must be >= 0");
  const int np = o.population;

  std::vector<double> pop(static_cast<std::size_t>(np) * dim), values(np);
  for (int i = 0; i < np; ++i)
    for (int j = 0; j < dim; ++j) pop[i * dim + j] = uniform_real(rng, lower[j], upper[j]);

  DeResult result;
  bool stop = objective(pop, np, values);
  result.evaluations += np;

  std::vector<double> trials(pop.size()), trial_values(np);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int it = 0; it < o.iterations && !stop; ++it) {
    for (int i = 0; i < np; ++i) {
      int r1, r2, r3;
      do r1 = uniform_int(rng, 0, np - 1); while (r1 == i);
      do r2 = uniform_int(rng, 0, np - 1); while (r2 == i || r2 == r1);
      do r3 = uniform_int(rng, 0, np - 1); while (r3 == i || r3 == r1 || r3 == r2);
      const int jrand = uniform_int(rng, 0, dim - 1);
      double* t = trials.data() + static_cast<std::size_t>(i) * dim;
      for (int j = 0; j < dim; ++j) {
        if (j == jrand || unit(rng) < o.cr) {
          const double v = pop[r1 * dim + j] + o.f * (pop[r2 * dim + j] - pop[r3 * dim + j]);
          t[j] = std::clamp(v, lower[j], upper[j]);
        } else {
          t[j] = pop[i * dim + j];
        }
      }
    }
    stop = objective(trials, np, trial_values);
    result.evaluations += np;
    for (int i = 0; i < np; ++i)
      if (trial_values[i] <= values[i]) {
        std::copy_n(trials.begin() + static_cast<std::ptrdiff_t>(i) * dim, dim,
                    pop.begin() + static_cast<std::ptrdiff_t>(i) * dim);
        values[i] = trial_values[i];
      }
    result.iterations_run = it + 1;
  }
  const int best = static_cast<int>(std::min_element(values.begin(), values.end()) - values.begin());
  result.best.assign(pop.begin() + static_cast<std::ptrdiff_t>(best) * dim,
                     pop.begin() + static_cast<std::ptrdiff_t>(best + 1) * dim);
  result.best_value = values[best];
  result.stopped_early = stop;
  return result;
}

}  // namespace ras
