#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ras/genome.hpp"
#include "ras/serialize.hpp"

namespace testing {

inline ras::GeneId add_block(ras::GenePool& pool, const std::vector<ras::LayerGene>& layers, ras::EdgeSet edges) {
  ras::BlockGene b;
  for (const auto& l : layers) b.layer_refs.push_back(pool.add_layer(l));
  b.layer_edges = std::move(edges);
  return pool.add_block(b);
}

inline ras::GeneId add_model(ras::GenePool& pool, std::vector<ras::GeneId> blocks, ras::EdgeSet edges) {
  ras::ModelGene m;
  m.block_refs = std::move(blocks);
  m.block_edges = std::move(edges);
  return pool.add_model(m);
}

inline std::string dump(const ras::GenePool& pool) { return ras::pool_to_json(pool).dump(); }

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ras_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
