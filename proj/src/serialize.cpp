#include "ras/serialize.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace ras {

namespace {

Json edges_to_json(const EdgeSet& edges) {
  Json arr = Json::array();
  for (const auto& [from, to] : edges) arr.push_back(Json::array({from, to}));
  return arr;
}

EdgeSet edges_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError(where, "edges must be an array");
  EdgeSet edges;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
      throw ParseError(where, "edge must be a pair of integers");
    edges.emplace(e[0].get<int>(), e[1].get<int>());
  }
  return edges;
}

template <typename T>
T field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

Json layer_to_json(const LayerGene& layer) {
  Json j{{"id", layer.id}, {"kind", to_string(layer.kind)}};
  if (layer.is_conv()) {
    j["kernel"] = layer.kernel;
    j["filters"] = layer.filters;
    j["stride"] = layer.stride;
  } else {
    j["units"] = layer.units;
  }
  return j;
}

Json block_to_json(const BlockGene& block) {
  return Json{{"id", block.id}, {"layers", block.layer_refs}, {"edges", edges_to_json(block.layer_edges)}};
}

Json model_to_json(const ModelGene& model) {
  Json j{{"id", model.id}, {"blocks", model.block_refs}, {"edges", edges_to_json(model.block_edges)}};
  if (model.fitness)
    j["fitness"] = Json{{"accuracy", model.fitness->accuracy}, {"robustness", model.fitness->robustness}};
  return j;
}

LayerGene layer_from_json(const Json& j) {
  const std::string where = "layer";
  LayerGene layer;
  layer.id = field<GeneId>(j, "id", where);
  const auto kind = field<std::string>(j, "kind", where);
  if (kind == "conv") {
    layer.kind = LayerKind::Conv;
    layer.kernel = field<int>(j, "kernel", where);
    layer.filters = field<int>(j, "filters", where);
    layer.stride = field<int>(j, "stride", where);
  } else if (kind == "dense") {
    layer.kind = LayerKind::Dense;
    layer.units = field<int>(j, "units", where);
  } else {
    throw ParseError(where, "unknown layer kind '" + kind + "'");
  }
  return layer;
}

BlockGene block_from_json(const Json& j) {
  const std::string where = "block";
  BlockGene block;
  block.id = field<GeneId>(j, "id", where);
  block.layer_refs = field<std::vector<GeneId>>(j, "layers", where);
  block.layer_edges = edges_from_json(field<Json>(j, "edges", where), where);
  return block;
}

ModelGene model_from_json(const Json& j) {
  const std::string where = "model";
  ModelGene model;
  model.id = field<GeneId>(j, "id", where);
  model.block_refs = field<std::vector<GeneId>>(j, "blocks", where);
  model.block_edges = edges_from_json(field<Json>(j, "edges", where), where);
  if (j.contains("fitness") && !j["fitness"].is_null()) {
    const Json& f = j["fitness"];
    model.fitness = Fitness{field<double>(f, "accuracy", where), field<double>(f, "robustness", where)};
  }
  return model;
}

Json pool_to_json(const GenePool& pool) {
  Json layers = Json::array(), blocks = Json::array(), models = Json::array();
  for (const auto& [id, g] : pool.layers()) layers.push_back(layer_to_json(g));
  for (const auto& [id, g] : pool.blocks()) blocks.push_back(block_to_json(g));
  for (const auto& [id, g] : pool.models()) models.push_back(model_to_json(g));
  return Json{{"next_id", pool.next_id()},
              {"caps", {{"layer", pool.caps().layer_cap}, {"block", pool.caps().block_cap}}},
              {"layers", layers},
              {"blocks", blocks},
              {"models", models}};
}

GenePool pool_from_json(const Json& j) {
  const std::string where = "pool";
  if (!j.is_object()) throw ParseError(where, "snapshot must be an object");
  GenePool pool;
  if (j.contains("caps")) {
    const Json& c = j["caps"];
    pool.set_caps({field<std::size_t>(c, "layer", where), field<std::size_t>(c, "block", where)});
  }
  for (const auto& l : field<Json>(j, "layers", where)) pool.restore(layer_from_json(l));
  for (const auto& b : field<Json>(j, "blocks", where)) pool.restore(block_from_json(b));
  for (const auto& m : field<Json>(j, "models", where)) pool.restore(model_from_json(m));
  if (j.contains("next_id")) {
    const auto next = field<GeneId>(j, "next_id", where);
    if (next < pool.next_id()) throw ParseError(where, "next_id below largest gene id");
    pool.set_next_id(next);
  }
  check_integrity(pool);
  return pool;
}

Json model_snapshot(const ModelGene& model, const GenePool& pool) {
  GenePool sub(pool.caps());
  for (GeneId b : model.block_refs) {
    if (sub.has_block(b)) continue;
    const BlockGene& block = pool.block(b);
    for (GeneId l : block.layer_refs)
      if (!sub.has_layer(l)) sub.restore(pool.layer(l));
    sub.restore(block);
  }
  sub.restore(model);
  sub.set_next_id(pool.next_id());
  return pool_to_json(sub);
}

LoadedModel load_model_snapshot(const Json& j, std::optional<GeneId> model_id) {
  LoadedModel loaded{pool_from_json(j), 0};
  if (model_id) {
    loaded.pool.model(*model_id);
    loaded.model_id = *model_id;
  } else {
    if (loaded.pool.models().size() != 1)
      throw ParseError("snapshot", "expected exactly one model, found " +
                                       std::to_string(loaded.pool.models().size()));
    loaded.model_id = loaded.pool.models().begin()->first;
  }
  return loaded;
}

Json parse_json_text(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(where + " (byte " + std::to_string(e.byte) + ")", e.what());
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json_file(const std::string& path) { return parse_json_text(read_text_file(path), path); }

void write_text_file(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path);
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

std::string structural_key(const ModelGene& model, const GenePool& pool) {
  std::ostringstream ss;
  for (std::size_t b = 0; b < model.block_refs.size(); ++b) {
    const BlockGene& block = pool.block(model.block_refs[b]);
    ss << "B[";
    for (GeneId l : block.layer_refs) {
      const LayerGene& g = pool.layer(l);
      if (g.is_conv())
        ss << 'c' << g.kernel << '.' << g.filters << '.' << g.stride << ' ';
      else
        ss << 'd' << g.units << ' ';
    }
    for (const auto& [from, to] : block.layer_edges) ss << from << '>' << to << ' ';
    ss << "]";
  }
  ss << "E[";
  for (const auto& [from, to] : model.block_edges) ss << from << '>' << to << ' ';
  ss << "]";
  return ss.str();
}

}  // namespace ras
