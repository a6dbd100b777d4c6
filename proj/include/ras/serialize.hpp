#pragma once

// Pool snapshots: one JSON object with `layers`, `blocks` and `models` arrays.

#include <string>
#include <utility>

#include "json.hpp"
#include "ras/genome.hpp"

namespace ras {

using Json = nlohmann::json;

Json layer_to_json(const LayerGene& layer);
Json block_to_json(const BlockGene& block);
Json model_to_json(const ModelGene& model);

LayerGene layer_from_json(const Json& j);
BlockGene block_from_json(const Json& j);
ModelGene model_from_json(const Json& j);

Json pool_to_json(const GenePool& pool);
/// Throws ParseError on schema problems and IntegrityError on dangling references.
GenePool pool_from_json(const Json& j);

/// Sub-pool holding one model and exactly the genes it references.
Json model_snapshot(const ModelGene& model, const GenePool& pool);

struct LoadedModel {
  GenePool pool;
  GeneId model_id = 0;
};
/// Accepts a snapshot with exactly one model, or any pool plus an explicit id.
LoadedModel load_model_snapshot(const Json& j, std::optional<GeneId> model_id = std::nullopt);

/// Parses text into JSON, reporting the byte offset of syntax errors.
Json parse_json_text(const std::string& text, const std::string& where);
Json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

/// Id-free canonical description of a model's structure (equal for clones).
std::string structural_key(const ModelGene& model, const GenePool& pool);

}  // namespace ras
