#pragma once

// Three-tier gene populations: layers, blocks (DAGs of layer references) and
// models (DAGs of block references).

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ras/common.hpp"

namespace ras {

using GeneId = std::uint64_t;

enum class LayerKind : std::uint8_t { Conv, Dense };

inline constexpr std::array<int, 3> kKernelSizes{1, 3, 5};
inline constexpr std::array<int, 4> kFilterSizes{8, 16, 32, 64};
inline constexpr std::array<int, 2> kStrides{1, 2};
inline constexpr std::array<int, 4> kUnitSizes{64, 128, 256, 512};

struct LayerGene {
  GeneId id = 0;
  LayerKind kind = LayerKind::Conv;
  // conv only
  int kernel = 0;
  int filters = 0;
  int stride = 0;
  // dense only
  int units = 0;

  static LayerGene conv(int kernel, int filters, int stride) {
    return LayerGene{0, LayerKind::Conv, kernel, filters, stride, 0};
  }
  static LayerGene dense(int units) { return LayerGene{0, LayerKind::Dense, 0, 0, 0, units}; }

  bool is_conv() const { return kind == LayerKind::Conv; }
  bool operator==(const LayerGene&) const = default;
};

/// Directed edge between two positions of a reference list.
using Edge = std::pair<int, int>;
using EdgeSet = std::set<Edge>;

struct BlockGene {
  GeneId id = 0;
  std::vector<GeneId> layer_refs;
  EdgeSet layer_edges;

  bool operator==(const BlockGene&) const = default;
};

struct Fitness {
  double accuracy = 0.0;
  double robustness = 0.0;

  double total() const { return accuracy + robustness; }
  bool operator==(const Fitness&) const = default;
};

struct ModelGene {
  GeneId id = 0;
  std::vector<GeneId> block_refs;
  EdgeSet block_edges;
  std::optional<Fitness> fitness;

  bool operator==(const ModelGene&) const = default;
};

struct PopulationCaps {
  std::size_t layer_cap = 100;
  std::size_t block_cap = 100;

  bool operator==(const PopulationCaps&) const = default;
};

/// Owner of all genes. Ids are assigned monotonically and never reused.
class GenePool {
 public:
  GenePool() = default;
  explicit GenePool(PopulationCaps caps) : caps_(caps) {}

  GeneId add_layer(LayerGene gene);
  GeneId add_block(BlockGene gene);
  GeneId add_model(ModelGene gene);

  const LayerGene& layer(GeneId id) const;
  const BlockGene& block(GeneId id) const;
  const ModelGene& model(GeneId id) const;
  ModelGene& model(GeneId id);

  bool has_layer(GeneId id) const { return layers_.count(id) != 0; }
  bool has_block(GeneId id) const { return blocks_.count(id) != 0; }
  bool has_model(GeneId id) const { return models_.count(id) != 0; }

  void erase_layer(GeneId id) { layers_.erase(id); }
  void erase_block(GeneId id) { blocks_.erase(id); }
  void erase_model(GeneId id) { models_.erase(id); }

  const std::map<GeneId, LayerGene>& layers() const { return layers_; }
  const std::map<GeneId, BlockGene>& blocks() const { return blocks_; }
  const std::map<GeneId, ModelGene>& models() const { return models_; }

  const PopulationCaps& caps() const { return caps_; }
  void set_caps(PopulationCaps caps) { caps_ = caps; }

  GeneId next_id() const { return next_id_; }
  /// Restores a gene with a pre-assigned id (snapshot loading).
  void restore(LayerGene gene);
  void restore(BlockGene gene);
  void restore(ModelGene gene);
  void set_next_id(GeneId next) { next_id_ = next; }

  bool operator==(const GenePool&) const = default;

 private:
  GeneId take_id() { return next_id_++; }

  PopulationCaps caps_;
  GeneId next_id_ = 1;
  std::map<GeneId, LayerGene> layers_;
  std::map<GeneId, BlockGene> blocks_;
  std::map<GeneId, ModelGene> models_;
};

struct Spectrum {
  int n_blocks = 0;
  int n_layers_total = 0;
  int n_block_conns = 0;
  int n_layer_conns_total = 0;
  int n_dense_layers = 0;
  int n_conv_layers = 0;
  int n_dense_dense = 0;
  int n_dense_conv = 0;
  int n_conv_dense = 0;
  int n_conv_conv = 0;

  static constexpr int kFeatures = 10;
  std::array<int, kFeatures> features() const {
    return {n_blocks,       n_layers_total, n_block_conns, n_layer_conns_total, n_dense_layers,
            n_conv_layers,  n_dense_dense,  n_dense_conv,  n_conv_dense,        n_conv_conv};
  }
  static Spectrum from_features(const std::array<int, kFeatures>& f);
  bool operator==(const Spectrum&) const = default;
};

inline constexpr std::array<const char*, Spectrum::kFeatures> kSpectrumFeatureNames{
    "n_blocks",       "n_layers_total", "n_block_conns", "n_layer_conns_total", "n_dense_layers",
    "n_conv_layers",  "n_dense_dense",  "n_dense_conv",  "n_conv_dense",        "n_conv_conv"};

// --- DAG helpers over position-indexed edge sets -------------------------

/// Positions with no incoming edge, ascending.
std::vector<int> entry_nodes(int node_count, const EdgeSet& edges);
/// Positions with no outgoing edge, ascending.
std::vector<int> exit_nodes(int node_count, const EdgeSet& edges);
/// Kahn order, lowest position first among ready nodes. Empty optional on a cycle.
std::optional<std::vector<int>> topological_order(int node_count, const EdgeSet& edges);
/// Number of forward pairs (i < j) not yet connected.
int missing_forward_edges(int node_count, const EdgeSet& edges);

// --- construction ---------------------------------------------------------

struct RandomModelOptions {
  int min_blocks = 2;
  int max_blocks = 5;
  int min_layers = 2;
  int max_layers = 5;
};

LayerGene random_layer(Rng& rng);
/// Chain in list order plus U(0, n-1) extra random forward edges.
EdgeSet random_wiring(int node_count, Rng& rng);
/// Inserts a fresh block of U(min_layers, max_layers) fresh layers.
GeneId random_block(Rng& rng, GenePool& pool, const RandomModelOptions& options = {});
ModelGene random_model(Rng& rng, GenePool& pool, const RandomModelOptions& options = {});

// --- queries --------------------------------------------------------------

/// Number of models referencing each layer/block (once per model).
std::map<GeneId, int> usage_counts(const GenePool& pool);
/// Removes every layer and block with zero usage. Models are untouched.
void garbage_collect(GenePool& pool);

Spectrum spectrum(const ModelGene& model, const GenePool& pool);

/// Throws IntegrityError on the first violated invariant.
void check_layer(const LayerGene& layer);
void check_block(const BlockGene& block, const GenePool& pool);
void check_model(const ModelGene& model, const GenePool& pool);
void check_integrity(const GenePool& pool);

std::string to_string(LayerKind kind);

}  // namespace ras
