#include "ras/niching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ras {

double spectrum_distance(const Spectrum& a, const Spectrum& b) {
  const auto fa = a.features(), fb = b.features();
  double sum = 0.0;
  for (int i = 0; i < Spectrum::kFeatures; ++i) {
    const double d = static_cast<double>(fa[i]) - fb[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

double spectrum_distance(const Spectrum& a, const Spectrum& b, const std::array<double, Spectrum::kFeatures>& range) {
  const auto fa = a.features(), fb = b.features();
  double sum = 0.0;
  for (int i = 0; i < Spectrum::kFeatures; ++i) {
    if (range[i] <= 0.0) continue;
    const double d = (static_cast<double>(fa[i]) - fb[i]) / range[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

int nearest_representative(const Spectrum& child, const std::vector<Spectrum>& representatives, bool normalize,
                           double* distance) {
  std::array<double, Spectrum::kFeatures> range{};
  if (normalize) {
    auto lo = child.features(), hi = child.features();
    for (const Spectrum& s : representatives) {
      const auto f = s.features();
      for (int i = 0; i < Spectrum::kFeatures; ++i) {
        lo[i] = std::min(lo[i], f[i]);
        hi[i] = std::max(hi[i], f[i]);
      }
    }
    for (int i = 0; i < Spectrum::kFeatures; ++i) range[i] = hi[i] - lo[i];
  }
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(representatives.size()); ++i) {
    const double d = normalize ? spectrum_distance(child, representatives[i], range)
                               : spectrum_distance(child, representatives[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  if (distance) *distance = best_d;
  return best;
}

std::vector<EvalOutcome> evaluate_representatives(const ClusterPopulation& clusters, GenePool& pool,
                                                  ModelEvaluator& evaluator) {
  std::vector<GeneId> pending;
  for (GeneId id : clusters.representatives)
    if (!pool.model(id).fitness) pending.push_back(id);
  auto outcomes = evaluator.evaluate(pending, pool, clusters.generation);
  for (std::size_t i = 0; i < pending.size(); ++i)
    pool.model(pending[i]).fitness = outcomes[i].fitness.value_or(Fitness{0.0, 0.0});
  return outcomes;
}

GenerationTrace evolve_generation(ClusterPopulation& clusters, GenePool& pool, ModelEvaluator& evaluator, Rng& rng,
                                  const NichingOptions& options) {
  GenerationTrace trace;
  trace.generation = clusters.generation + 1;
  auto& reps = clusters.representatives;
  for (GeneId id : reps)
    if (!pool.model(id).fitness) throw IntegrityError("representative " + std::to_string(id) + " is unevaluated");

  // Step 1: child population from the current representatives.
  const ChildMaker maker = options.make_child ? options.make_child : [](const ModelGene& p, GenePool& g, Rng& r) {
    return ras::make_child(p, g, r);
  };
  for (int r = 0; r < static_cast<int>(reps.size()); ++r) {
    const ModelGene parent = pool.model(reps[r]);
    for (int k = 0; k < options.children_per_representative; ++k) {
      ChildEvent ev;
      ev.parent_index = r;
      ev.parent = parent.id;
      try {
        Child child = maker(parent, pool, rng);
        ev.child = child.model.id;
        ev.mutations = std::move(child.records);
      } catch (const MutationExhausted&) {
        ev.exhausted = true;
        ev.child = clone_model(parent, pool).id;
      }
      trace.children.push_back(std::move(ev));
    }
  }

  std::vector<GeneId> child_ids;
  for (const auto& ev : trace.children) child_ids.push_back(ev.child);
  auto outcomes = evaluator.evaluate(child_ids, pool, trace.generation);

  // Steps 2-4: nearest representative by spectrum, strict replacement.
  std::vector<Spectrum> rep_spectra;
  for (GeneId id : reps) rep_spectra.push_back(spectrum(pool.model(id), pool));
  for (std::size_t c = 0; c < trace.children.size(); ++c) {
    ChildEvent& ev = trace.children[c];
    ev.outcome = std::move(outcomes[c]);
    if (!ev.outcome.fitness) {
      pool.erase_model(ev.child);
      continue;
    }
    ModelGene& child = pool.model(ev.child);
    child.fitness = *ev.outcome.fitness;
    const Spectrum s = spectrum(child, pool);
    ev.nearest_index = nearest_representative(s, rep_spectra, options.normalize_spectrum, &ev.nearest_distance);
    const GeneId incumbent = reps[ev.nearest_index];
    if (child.fitness->total() > pool.model(incumbent).fitness->total()) {
      ev.replaced = true;
      ev.displaced = incumbent;
      reps[ev.nearest_index] = ev.child;
      rep_spectra[ev.nearest_index] = s;
      pool.erase_model(incumbent);
    } else {
      pool.erase_model(ev.child);
    }
  }

  garbage_collect(pool);
  clusters.generation = trace.generation;
  return trace;
}

}  // namespace ras
