#pragma once

#include <array>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

#include "ras/genome.hpp"

namespace ras {

enum class MutationKind : std::uint8_t {
  // layer mutations
  ChangeKernel,
  ChangeFilter,
  ChangeUnits,
  SwapLayer,
  // block mutations
  AddLayer,
  RemoveLayer,
  AddLayerConn,
  RemoveLayerConn,
  SwapBlock,
  // model mutations
  AddBlock,
  RemoveBlock,
  AddBlockConn,
  RemoveBlockConn,
};

inline constexpr std::array<MutationKind, 13> kAllMutations{
    MutationKind::ChangeKernel, MutationKind::ChangeFilter,    MutationKind::ChangeUnits,
    MutationKind::SwapLayer,    MutationKind::AddLayer,        MutationKind::RemoveLayer,
    MutationKind::AddLayerConn, MutationKind::RemoveLayerConn, MutationKind::SwapBlock,
    MutationKind::AddBlock,     MutationKind::RemoveBlock,     MutationKind::AddBlockConn,
    MutationKind::RemoveBlockConn};

std::string_view to_string(MutationKind kind);
MutationKind mutation_from_string(std::string_view name);

bool is_layer_mutation(MutationKind kind);
bool is_block_mutation(MutationKind kind);
bool is_model_mutation(MutationKind kind);

struct MutationRecord {
  MutationKind kind{};
  GeneId parent_model = 0;
  GeneId child_model = 0;
  std::vector<GeneId> created_genes;

  bool operator==(const MutationRecord&) const = default;
};

struct NotApplicable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MutationExhausted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Kinds applicable to `model` under the current pool, in enum order.
/// Above the layer cap the only layer mutation is SwapLayer; above the block
/// cap the only block mutation is SwapBlock.
std::vector<MutationKind> legal_mutations(const ModelGene& model, const GenePool& pool);

/// Adds a mutated copy of `model` to the pool. The parent and every gene it
/// references stay untouched: edited layers/blocks are cloned first.
/// Throws NotApplicable when the kind cannot act on this model.
std::pair<ModelGene, MutationRecord> apply_mutation(MutationKind kind, const ModelGene& model,
                                                    GenePool& pool, Rng& rng);

inline constexpr int kMutationsPerChild = 5;
inline constexpr int kMutationRetries = 20;

struct Child {
  ModelGene model;
  std::vector<MutationRecord> records;
};

/// Stacks `count` successful mutations on a copy of `parent`. Only the final
/// child remains in the model population. Throws MutationExhausted when a slot
/// finds no applicable mutation within kMutationRetries draws.
Child make_child(const ModelGene& parent, GenePool& pool, Rng& rng, int count = kMutationsPerChild);

/// Unmutated copy of `parent` under a new id (fallback after MutationExhausted).
ModelGene clone_model(const ModelGene& parent, GenePool& pool);

}  // namespace ras
