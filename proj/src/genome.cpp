#include "ras/genome.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>

namespace ras {

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string to_string(LayerKind kind) { return kind == LayerKind::Conv ? "conv" : "dense"; }

// --- GenePool -------------------------------------------------------------

GeneId GenePool::add_layer(LayerGene gene) {
  gene.id = take_id();
  const GeneId id = gene.id;
  layers_.emplace(id, std::move(gene));
  return id;
}

GeneId GenePool::add_block(BlockGene gene) {
  gene.id = take_id();
  const GeneId id = gene.id;
  blocks_.emplace(id, std::move(gene));
  return id;
}

GeneId GenePool::add_model(ModelGene gene) {
  gene.id = take_id();
  const GeneId id = gene.id;
  models_.emplace(id, std::move(gene));
  return id;
}

const LayerGene& GenePool::layer(GeneId id) const {
  auto it = layers_.find(id);
  if (it == layers_.end()) throw IntegrityError("dangling layer reference " + std::to_string(id));
  return it->second;
}

const BlockGene& GenePool::block(GeneId id) const {
  auto it = blocks_.find(id);
  if (it == blocks_.end()) throw IntegrityError("dangling block reference " + std::to_string(id));
  return it->second;
}

const ModelGene& GenePool::model(GeneId id) const {
  auto it = models_.find(id);
  if (it == models_.end()) throw IntegrityError("unknown model " + std::to_string(id));
  return it->second;
}

ModelGene& GenePool::model(GeneId id) {
  auto it = models_.find(id);
  if (it == models_.end()) throw IntegrityError("unknown model " + std::to_string(id));
  return it->second;
}

namespace {

template <typename Map, typename Gene>
void restore_into(Map& map, GeneId& next_id, Gene gene) {
  if (gene.id == 0) throw IntegrityError("gene id 0 is reserved");
  if (!map.emplace(gene.id, gene).second)
    throw IntegrityError("duplicate gene id " + std::to_string(gene.id));
  next_id = std::max(next_id, gene.id + 1);
}

}  // namespace

void GenePool::restore(LayerGene gene) { restore_into(layers_, next_id_, std::move(gene)); }
void GenePool::restore(BlockGene gene) { restore_into(blocks_, next_id_, std::move(gene)); }
void GenePool::restore(ModelGene gene) { restore_into(models_, next_id_, std::move(gene)); }

Spectrum Spectrum::from_features(const std::array<int, kFeatures>& f) {
  return Spectrum{f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8], f[9]};
}

// --- DAG helpers ----------------------------------------------------------

std::vector<int> entry_nodes(int node_count, const EdgeSet& edges) {
  std::vector<char> has_in(node_count, 0);
  for (const auto& [from, to] : edges) has_in.at(to) = 1;
  std::vector<int> out;
  for (int i = 0; i < node_count; ++i)
    if (!has_in[i]) out.push_back(i);
  return out;
}

std::vector<int> exit_nodes(int node_count, const EdgeSet& edges) {
  std::vector<char> has_out(node_count, 0);
  for (const auto& [from, to] : edges) has_out.at(from) = 1;
  std::vector<int> out;
  for (int i = 0; i < node_count; ++i)
    if (!has_out[i]) out.push_back(i);
  return out;
}

std::optional<std::vector<int>> topological_order(int node_count, const EdgeSet& edges) {
  std::vector<int> indegree(node_count, 0);
  std::vector<std::vector<int>> succ(node_count);
  for (const auto& [from, to] : edges) {
    if (from < 0 || to < 0 || from >= node_count || to >= node_count) return std::nullopt;
    succ[from].push_back(to);
    ++indegree[to];
  }
  std::set<int> ready;
  for (int i = 0; i < node_count; ++i)
    if (indegree[i] == 0) ready.insert(i);
  std::vector<int> order;
  order.reserve(node_count);
  while (!ready.empty()) {
    const int n = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(n);
    for (int s : succ[n])
      if (--indegree[s] == 0) ready.insert(s);
  }
  if (static_cast<int>(order.size()) != node_count) return std::nullopt;
  return order;
}

int missing_forward_edges(int node_count, const EdgeSet& edges) {
  const int complete = node_count * (node_count - 1) / 2;
  int present = 0;
  for (const auto& [from, to] : edges)
    if (from < to) ++present;
  return complete - present;
}

// --- construction ---------------------------------------------------------

LayerGene random_layer(Rng& rng) {
  if (uniform_int(rng, 0, 1) == 0) {
    const int kernel = kKernelSizes[uniform_int(rng, 0, kKernelSizes.size() - 1)];
    const int filters = kFilterSizes[uniform_int(rng, 0, kFilterSizes.size() - 1)];
    const int stride = kStrides[uniform_int(rng, 0, kStrides.size() - 1)];
    return LayerGene::conv(kernel, filters, stride);
  }
  return LayerGene::dense(kUnitSizes[uniform_int(rng, 0, kUnitSizes.size() - 1)]);
}

EdgeSet random_wiring(int node_count, Rng& rng) {
  EdgeSet edges;
  for (int i = 0; i + 1 < node_count; ++i) edges.emplace(i, i + 1);
  if (node_count < 2) return edges;
  const int extra = uniform_int(rng, 0, node_count - 1);
  std::vector<Edge> candidates;
  for (int i = 0; i < node_count; ++i)
    for (int j = i + 2; j < node_count; ++j) candidates.emplace_back(i, j);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  const int take = std::min<int>(extra, candidates.size());
  for (int k = 0; k < take; ++k) edges.insert(candidates[k]);
  return edges;
}

GeneId random_block(Rng& rng, GenePool& pool, const RandomModelOptions& options) {
  const int n_layers = uniform_int(rng, options.min_layers, options.max_layers);
  BlockGene block;
  for (int i = 0; i < n_layers; ++i) block.layer_refs.push_back(pool.add_layer(random_layer(rng)));
  block.layer_edges = random_wiring(n_layers, rng);
  return pool.add_block(std::move(block));
}

ModelGene random_model(Rng& rng, GenePool& pool, const RandomModelOptions& options) {
  const int n_blocks = uniform_int(rng, options.min_blocks, options.max_blocks);
  ModelGene model;
  for (int i = 0; i < n_blocks; ++i) model.block_refs.push_back(random_block(rng, pool, options));
  model.block_edges = random_wiring(n_blocks, rng);
  const GeneId id = pool.add_model(std::move(model));
  return pool.model(id);
}

// --- queries --------------------------------------------------------------

std::map<GeneId, int> usage_counts(const GenePool& pool) {
  std::map<GeneId, int> counts;
  for (const auto& [id, layer] : pool.layers()) counts[id] = 0;
  for (const auto& [id, block] : pool.blocks()) counts[id] = 0;
  for (const auto& [mid, model] : pool.models()) {
    std::set<GeneId> blocks(model.block_refs.begin(), model.block_refs.end());
    std::set<GeneId> layers;
    for (GeneId b : blocks) {
      const BlockGene& block = pool.block(b);
      for (GeneId l : block.layer_refs) {
        pool.layer(l);
        layers.insert(l);
      }
    }
    for (GeneId b : blocks) ++counts[b];
    for (GeneId l : layers) ++counts[l];
  }
  return counts;
}

void garbage_collect(GenePool& pool) {
  const auto counts = usage_counts(pool);
  for (const auto& [id, count] : counts) {
    if (count != 0) continue;
    if (pool.has_block(id))
      pool.erase_block(id);
    else
      pool.erase_layer(id);
  }
}

Spectrum spectrum(const ModelGene& model, const GenePool& pool) {
  Spectrum s;
  const int nb = static_cast<int>(model.block_refs.size());
  s.n_blocks = nb;
  s.n_block_conns = static_cast<int>(model.block_edges.size());

  auto count_typed = [&s](LayerKind from, LayerKind to) {
    ++s.n_layer_conns_total;
    if (from == LayerKind::Dense)
      ++(to == LayerKind::Dense ? s.n_dense_dense : s.n_dense_conv);
    else
      ++(to == LayerKind::Dense ? s.n_conv_dense : s.n_conv_conv);
  };

  // Per block position: kinds of its layers and its entry/exit layer kinds.
  std::vector<std::vector<LayerKind>> entry_kinds(nb), exit_kinds(nb);
  for (int b = 0; b < nb; ++b) {
    const BlockGene& block = pool.block(model.block_refs[b]);
    const int nl = static_cast<int>(block.layer_refs.size());
    std::vector<LayerKind> kinds;
    kinds.reserve(nl);
    for (GeneId l : block.layer_refs) kinds.push_back(pool.layer(l).kind);
    for (LayerKind k : kinds) {
      ++s.n_layers_total;
      ++(k == LayerKind::Dense ? s.n_dense_layers : s.n_conv_layers);
    }
    for (const auto& [from, to] : block.layer_edges) count_typed(kinds.at(from), kinds.at(to));
    for (int e : entry_nodes(nl, block.layer_edges)) entry_kinds[b].push_back(kinds[e]);
    for (int e : exit_nodes(nl, block.layer_edges)) exit_kinds[b].push_back(kinds[e]);
  }
  for (const auto& [from, to] : model.block_edges) {
    if (from < 0 || to < 0 || from >= nb || to >= nb)
      throw IntegrityError("block edge index out of range");
    for (LayerKind src : exit_kinds[from])
      for (LayerKind dst : entry_kinds[to]) count_typed(src, dst);
  }
  return s;
}

void check_layer(const LayerGene& layer) {
  auto in = [](int v, const auto& set) { return std::find(set.begin(), set.end(), v) != set.end(); };
  const std::string where = "layer " + std::to_string(layer.id) + ": ";
  if (layer.kind == LayerKind::Conv) {
    if (!in(layer.kernel, kKernelSizes) || !in(layer.filters, kFilterSizes) || !in(layer.stride, kStrides))
      throw IntegrityError(where + "conv hyperparameter outside legal set");
    if (layer.units != 0) throw IntegrityError(where + "conv layer carries units");
  } else {
    if (!in(layer.units, kUnitSizes)) throw IntegrityError(where + "units outside legal set");
    if (layer.kernel != 0 || layer.filters != 0 || layer.stride != 0)
      throw IntegrityError(where + "dense layer carries conv fields");
  }
}

namespace {

void check_dag(int node_count, const EdgeSet& edges, const std::string& where) {
  for (const auto& [from, to] : edges)
    if (from < 0 || to < 0 || from >= node_count || to >= node_count)
      throw IntegrityError(where + "edge endpoint out of range");
  if (!topological_order(node_count, edges)) throw IntegrityError(where + "edges contain a cycle");
}

}  // namespace

void check_block(const BlockGene& block, const GenePool& pool) {
  const std::string where = "block " + std::to_string(block.id) + ": ";
  if (block.layer_refs.empty()) throw IntegrityError(where + "no layers");
  for (GeneId l : block.layer_refs) pool.layer(l);
  check_dag(static_cast<int>(block.layer_refs.size()), block.layer_edges, where);
}

void check_model(const ModelGene& model, const GenePool& pool) {
  const std::string where = "model " + std::to_string(model.id) + ": ";
  if (model.block_refs.empty()) throw IntegrityError(where + "no blocks");
  for (GeneId b : model.block_refs) pool.block(b);
  check_dag(static_cast<int>(model.block_refs.size()), model.block_edges, where);
  if (model.fitness) {
    const Fitness& f = *model.fitness;
    if (!(f.accuracy >= 0.0 && f.accuracy <= 1.0 && f.robustness >= 0.0 && f.robustness <= 1.0))
      throw IntegrityError(where + "fitness components outside [0,1]");
  }
}

void check_integrity(const GenePool& pool) {
  for (const auto& [id, layer] : pool.layers()) {
    if (layer.id != id) throw IntegrityError("layer key/id mismatch");
    check_layer(layer);
  }
  for (const auto& [id, block] : pool.blocks()) {
    if (block.id != id) throw IntegrityError("block key/id mismatch");
    check_block(block, pool);
  }
  for (const auto& [id, model] : pool.models()) {
    if (model.id != id) throw IntegrityError("model key/id mismatch");
    check_model(model, pool);
  }
  auto beyond = [&pool](const auto& map) {
    return !map.empty() && map.rbegin()->first >= pool.next_id();
  };
  if (beyond(pool.layers()) || beyond(pool.blocks()) || beyond(pool.models()))
    throw IntegrityError("gene id beyond id counter");
}

}  // namespace ras
