#include "ras/mutation.hpp"

#include <algorithm>
#include <functional>

namespace ras {

std::string_view to_string(MutationKind kind) {
  switch (kind) {
    case MutationKind::ChangeKernel: return "change_kernel";
    case MutationKind::ChangeFilter: return "change_filter";
    case MutationKind::ChangeUnits: return "change_units";
    case MutationKind::SwapLayer: return "swap_layer";
    case MutationKind::AddLayer: return "add_layer";
    case MutationKind::RemoveLayer: return "remove_layer";
    case MutationKind::AddLayerConn: return "add_layer_conn";
    case MutationKind::RemoveLayerConn: return "remove_layer_conn";
    case MutationKind::SwapBlock: return "swap_block";
    case MutationKind::AddBlock: return "add_block";
    case MutationKind::RemoveBlock: return "remove_block";
    case MutationKind::AddBlockConn: return "add_block_conn";
    case MutationKind::RemoveBlockConn: return "remove_block_conn";
  }
  return "unknown";
}

MutationKind mutation_from_string(std::string_view name) {
  for (MutationKind k : kAllMutations)
    if (to_string(k) == name) return k;
  throw ParseError("mutation", "unknown kind '" + std::string(name) + "'");
}

bool is_layer_mutation(MutationKind kind) { return kind <= MutationKind::SwapLayer; }
bool is_block_mutation(MutationKind kind) {
  return kind >= MutationKind::AddLayer && kind <= MutationKind::SwapBlock;
}
bool is_model_mutation(MutationKind kind) { return kind >= MutationKind::AddBlock; }

namespace {

bool reaches(int from, int to, int n, const EdgeSet& edges) {
  std::vector<char> seen(n, 0);
  std::vector<int> stack{from};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (v == to) return true;
    if (seen[v]) continue;
    seen[v] = 1;
    for (auto it = edges.lower_bound({v, -1}); it != edges.end() && it->first == v; ++it) stack.push_back(it->second);
  }
  return false;
}

/// Forward pairs that can be added without creating a duplicate or a cycle.
std::vector<Edge> addable_edges(int n, const EdgeSet& edges) {
  std::vector<Edge> out;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (!edges.count({i, j}) && !reaches(j, i, n, edges)) out.emplace_back(i, j);
  return out;
}

/// Removes node `r`, connecting each predecessor to each successor.
EdgeSet splice_out(int r, const EdgeSet& edges) {
  std::vector<int> preds, succs;
  EdgeSet out;
  auto shift = [r](int v) { return v > r ? v - 1 : v; };
  for (const auto& [from, to] : edges) {
    if (to == r) preds.push_back(from);
    else if (from == r) succs.push_back(to);
    else out.emplace(shift(from), shift(to));
  }
  for (int p : preds)
    for (int s : succs) out.emplace(shift(p), shift(s));
  return out;
}

/// Inserts a node at `pos` among `n` nodes, wired between its list neighbours.
EdgeSet splice_in(int pos, int n, const EdgeSet& edges) {
  EdgeSet out;
  auto shift = [pos](int v) { return v >= pos ? v + 1 : v; };
  for (const auto& [from, to] : edges) out.emplace(shift(from), shift(to));
  if (pos > 0) out.emplace(pos - 1, pos);
  if (pos < n) out.emplace(pos, pos + 1);
  return out;
}

template <typename T>
const T& pick(const std::vector<T>& items, Rng& rng) {
  return items[uniform_int(rng, 0, static_cast<int>(items.size()) - 1)];
}

template <std::size_t N>
int pick_other(const std::array<int, N>& values, int current, Rng& rng) {
  std::vector<int> options;
  for (int v : values)
    if (v != current) options.push_back(v);
  return pick(options, rng);
}

template <typename Map>
GeneId pick_other_id(const Map& map, GeneId current, Rng& rng) {
  std::vector<GeneId> options;
  options.reserve(map.size());
  for (const auto& [id, gene] : map)
    if (id != current) options.push_back(id);
  if (options.empty()) throw NotApplicable("population has no alternative gene");
  return pick(options, rng);
}

template <typename Map>
GeneId pick_any_id(const Map& map, Rng& rng) {
  auto it = map.begin();
  std::advance(it, uniform_int(rng, 0, static_cast<int>(map.size()) - 1));
  return it->first;
}

struct LayerSite {
  int block_pos;
  int layer_pos;
};

std::vector<LayerSite> layer_sites(const ModelGene& model, const GenePool& pool,
                                   const std::function<bool(const LayerGene&)>& accept) {
  std::vector<LayerSite> sites;
  for (int b = 0; b < static_cast<int>(model.block_refs.size()); ++b) {
    const BlockGene& block = pool.block(model.block_refs[b]);
    for (int l = 0; l < static_cast<int>(block.layer_refs.size()); ++l)
      if (accept(pool.layer(block.layer_refs[l]))) sites.push_back({b, l});
  }
  return sites;
}

std::vector<int> block_positions(const ModelGene& model, const GenePool& pool,
                                 const std::function<bool(const BlockGene&)>& accept) {
  std::vector<int> out;
  for (int b = 0; b < static_cast<int>(model.block_refs.size()); ++b)
    if (accept(pool.block(model.block_refs[b]))) out.push_back(b);
  return out;
}

int size_of(const BlockGene& b) { return static_cast<int>(b.layer_refs.size()); }

bool block_can_connect(const BlockGene& b) { return !addable_edges(size_of(b), b.layer_edges).empty(); }

/// Clones the block at `block_pos` with one layer reference replaced and
/// re-points the child at the clone.
void replace_layer(ModelGene& child, const LayerSite& site, GeneId layer, GenePool& pool,
                   MutationRecord& record) {
  BlockGene clone = pool.block(child.block_refs[site.block_pos]);
  clone.layer_refs[site.layer_pos] = layer;
  const GeneId id = pool.add_block(std::move(clone));
  record.created_genes.push_back(id);
  child.block_refs[site.block_pos] = id;
}

void commit_block(ModelGene& child, int block_pos, BlockGene clone, GenePool& pool, MutationRecord& record) {
  const GeneId id = pool.add_block(std::move(clone));
  record.created_genes.push_back(id);
  child.block_refs[block_pos] = id;
}

GeneId new_layer_for_insert(GenePool& pool, Rng& rng, MutationRecord& record) {
  if (pool.layers().size() <= pool.caps().layer_cap || pool.layers().empty()) {
    const GeneId id = pool.add_layer(random_layer(rng));
    record.created_genes.push_back(id);
    return id;
  }
  return pick_any_id(pool.layers(), rng);
}

GeneId new_block_for_insert(GenePool& pool, Rng& rng, MutationRecord& record) {
  if (pool.blocks().size() <= pool.caps().block_cap || pool.blocks().empty()) {
    const RandomModelOptions bounds;
    const int n = uniform_int(rng, bounds.min_layers, bounds.max_layers);
    BlockGene block;
    for (int i = 0; i < n; ++i) block.layer_refs.push_back(new_layer_for_insert(pool, rng, record));
    block.layer_edges = random_wiring(n, rng);
    const GeneId id = pool.add_block(std::move(block));
    record.created_genes.push_back(id);
    return id;
  }
  return pick_any_id(pool.blocks(), rng);
}

}  // namespace

std::vector<MutationKind> legal_mutations(const ModelGene& model, const GenePool& pool) {
  bool has_conv = false, has_dense = false;
  bool removable_layer = false, connectable_layers = false, layer_edge = false;
  for (GeneId b : model.block_refs) {
    const BlockGene& block = pool.block(b);
    for (GeneId l : block.layer_refs) (pool.layer(l).is_conv() ? has_conv : has_dense) = true;
    removable_layer |= size_of(block) >= 2;
    connectable_layers |= block_can_connect(block);
    layer_edge |= !block.layer_edges.empty();
  }
  const int nb = static_cast<int>(model.block_refs.size());
  const bool layers_over = pool.layers().size() > pool.caps().layer_cap;
  const bool blocks_over = pool.blocks().size() > pool.caps().block_cap;

  std::vector<MutationKind> out;
  auto add_if = [&out](bool cond, MutationKind k) {
    if (cond) out.push_back(k);
  };
  add_if(has_conv && !layers_over, MutationKind::ChangeKernel);
  add_if(has_conv && !layers_over, MutationKind::ChangeFilter);
  add_if(has_dense && !layers_over, MutationKind::ChangeUnits);
  add_if(pool.layers().size() >= 2, MutationKind::SwapLayer);
  add_if(!blocks_over, MutationKind::AddLayer);
  add_if(!blocks_over && removable_layer, MutationKind::RemoveLayer);
  add_if(!blocks_over && connectable_layers, MutationKind::AddLayerConn);
  add_if(!blocks_over && layer_edge, MutationKind::RemoveLayerConn);
  add_if(pool.blocks().size() >= 2, MutationKind::SwapBlock);
  add_if(true, MutationKind::AddBlock);
  add_if(nb >= 2, MutationKind::RemoveBlock);
  add_if(!addable_edges(nb, model.block_edges).empty(), MutationKind::AddBlockConn);
  add_if(!model.block_edges.empty(), MutationKind::RemoveBlockConn);
  return out;
}

std::pair<ModelGene, MutationRecord> apply_mutation(MutationKind kind, const ModelGene& model,
                                                    GenePool& pool, Rng& rng) {
  ModelGene child = model;
  child.fitness.reset();
  MutationRecord record{kind, model.id, 0, {}};
  const int nb = static_cast<int>(child.block_refs.size());
  auto fail = [kind](const char* why) {
    return NotApplicable(std::string(to_string(kind)) + ": " + why);
  };

  switch (kind) {
    case MutationKind::ChangeKernel:
    case MutationKind::ChangeFilter:
    case MutationKind::ChangeUnits: {
      const bool wants_conv = kind != MutationKind::ChangeUnits;
      const auto sites =
          layer_sites(child, pool, [wants_conv](const LayerGene& l) { return l.is_conv() == wants_conv; });
      if (sites.empty()) throw fail(wants_conv ? "no convolution layer" : "no dense layer");
      const LayerSite site = pick(sites, rng);
      LayerGene layer = pool.layer(pool.block(child.block_refs[site.block_pos]).layer_refs[site.layer_pos]);
      if (kind == MutationKind::ChangeKernel) layer.kernel = pick_other(kKernelSizes, layer.kernel, rng);
      if (kind == MutationKind::ChangeFilter) layer.filters = pick_other(kFilterSizes, layer.filters, rng);
      if (kind == MutationKind::ChangeUnits) layer.units = pick_other(kUnitSizes, layer.units, rng);
      const GeneId id = pool.add_layer(layer);
      record.created_genes.push_back(id);
      replace_layer(child, site, id, pool, record);
      break;
    }
    case MutationKind::SwapLayer: {
      if (pool.layers().size() < 2) throw fail("layer population too small");
      const auto sites = layer_sites(child, pool, [](const LayerGene&) { return true; });
      const LayerSite site = pick(sites, rng);
      const GeneId current = pool.block(child.block_refs[site.block_pos]).layer_refs[site.layer_pos];
      replace_layer(child, site, pick_other_id(pool.layers(), current, rng), pool, record);
      break;
    }
    case MutationKind::AddLayer: {
      const int b = uniform_int(rng, 0, nb - 1);
      BlockGene clone = pool.block(child.block_refs[b]);
      const int n = size_of(clone);
      const int pos = uniform_int(rng, 0, n);
      const GeneId layer = new_layer_for_insert(pool, rng, record);
      clone.layer_refs.insert(clone.layer_refs.begin() + pos, layer);
      clone.layer_edges = splice_in(pos, n, clone.layer_edges);
      commit_block(child, b, std::move(clone), pool, record);
      break;
    }
    case MutationKind::RemoveLayer: {
      const auto blocks = block_positions(child, pool, [](const BlockGene& bg) { return size_of(bg) >= 2; });
      if (blocks.empty()) throw fail("every block has a single layer");
      const int b = pick(blocks, rng);
      BlockGene clone = pool.block(child.block_refs[b]);
      const int r = uniform_int(rng, 0, size_of(clone) - 1);
      clone.layer_edges = splice_out(r, clone.layer_edges);
      clone.layer_refs.erase(clone.layer_refs.begin() + r);
      commit_block(child, b, std::move(clone), pool, record);
      break;
    }
    case MutationKind::AddLayerConn: {
      const auto blocks = block_positions(child, pool, block_can_connect);
      if (blocks.empty()) throw fail("every block DAG is complete");
      const int b = pick(blocks, rng);
      BlockGene clone = pool.block(child.block_refs[b]);
      clone.layer_edges.insert(pick(addable_edges(size_of(clone), clone.layer_edges), rng));
      commit_block(child, b, std::move(clone), pool, record);
      break;
    }
    case MutationKind::RemoveLayerConn: {
      const auto blocks = block_positions(child, pool, [](const BlockGene& bg) { return !bg.layer_edges.empty(); });
      if (blocks.empty()) throw fail("no layer connections");
      const int b = pick(blocks, rng);
      BlockGene clone = pool.block(child.block_refs[b]);
      const std::vector<Edge> edges(clone.layer_edges.begin(), clone.layer_edges.end());
      clone.layer_edges.erase(pick(edges, rng));
      commit_block(child, b, std::move(clone), pool, record);
      break;
    }
    case MutationKind::SwapBlock: {
      if (pool.blocks().size() < 2) throw fail("block population too small");
      const int b = uniform_int(rng, 0, nb - 1);
      child.block_refs[b] = pick_other_id(pool.blocks(), child.block_refs[b], rng);
      break;
    }
    case MutationKind::AddBlock: {
      const int pos = uniform_int(rng, 0, nb);
      const GeneId block = new_block_for_insert(pool, rng, record);
      child.block_refs.insert(child.block_refs.begin() + pos, block);
      child.block_edges = splice_in(pos, nb, child.block_edges);
      break;
    }
    case MutationKind::RemoveBlock: {
      if (nb < 2) throw fail("model has a single block");
      const int r = uniform_int(rng, 0, nb - 1);
      child.block_edges = splice_out(r, child.block_edges);
      child.block_refs.erase(child.block_refs.begin() + r);
      break;
    }
    case MutationKind::AddBlockConn: {
      const auto candidates = addable_edges(nb, child.block_edges);
      if (candidates.empty()) throw fail("block DAG is complete");
      child.block_edges.insert(pick(candidates, rng));
      break;
    }
    case MutationKind::RemoveBlockConn: {
      if (child.block_edges.empty()) throw fail("no block connections");
      const std::vector<Edge> edges(child.block_edges.begin(), child.block_edges.end());
      child.block_edges.erase(pick(edges, rng));
      break;
    }
  }

  record.child_model = pool.add_model(std::move(child));
  return {pool.model(record.child_model), record};
}

ModelGene clone_model(const ModelGene& parent, GenePool& pool) {
  ModelGene copy = parent;
  copy.fitness.reset();
  const GeneId id = pool.add_model(std::move(copy));
  return pool.model(id);
}

Child make_child(const ModelGene& parent, GenePool& pool, Rng& rng, int count) {
  Child result{parent, {}};
  bool intermediate = false;
  for (int slot = 0; slot < count; ++slot) {
    bool applied = false;
    for (int attempt = 0; attempt < kMutationRetries && !applied; ++attempt) {
      const auto legal = legal_mutations(result.model, pool);
      if (legal.empty()) break;
      const MutationKind kind = pick(legal, rng);
      try {
        auto [next, record] = apply_mutation(kind, result.model, pool, rng);
        if (intermediate) pool.erase_model(result.model.id);
        result.model = std::move(next);
        result.records.push_back(std::move(record));
        intermediate = true;
        applied = true;
      } catch (const NotApplicable&) {
      }
    }
    if (!applied) {
      if (intermediate) pool.erase_model(result.model.id);
      throw MutationExhausted("no applicable mutation for model " + std::to_string(parent.id) + " at slot " +
                              std::to_string(slot));
    }
  }
  if (!intermediate) result.model = clone_model(parent, pool);
  return result;
}

}  // namespace ras
