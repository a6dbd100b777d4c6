#include "ras/graph.hpp"

#include <algorithm>
#include <sstream>

namespace ras {

std::string TensorShape::str() const {
  if (!is_spatial()) return std::to_string(c);
  return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

std::string to_string(OpKind op) {
  switch (op) {
    case OpKind::Input: return "Input";
    case OpKind::Conv: return "Conv";
    case OpKind::Dense: return "Dense";
    case OpKind::BatchNorm: return "BatchNorm";
    case OpKind::ReLU: return "ReLU";
    case OpKind::Flatten: return "Flatten";
    case OpKind::Reshape1x1: return "Reshape1x1";
    case OpKind::PoolAlign: return "PoolAlign";
    case OpKind::Concat: return "Concat";
    case OpKind::GlobalAvgPool: return "GlobalAvgPool";
    case OpKind::Softmax: return "Softmax";
  }
  return "?";
}

TensorShape align_and_concat(std::span<const TensorShape> shapes) {
  if (shapes.empty()) throw CompileError("align_and_concat needs at least one shape");
  const bool any_spatial = std::any_of(shapes.begin(), shapes.end(), [](const auto& s) { return s.is_spatial(); });
  int channels = 0;
  for (const auto& s : shapes) channels += s.c;
  if (!any_spatial) return TensorShape::flat(channels);
  int h = 0, w = 0;
  bool first = true;
  for (const auto& s : shapes) {
    if (!s.is_spatial()) continue;
    h = first ? s.h : std::min(h, s.h);
    w = first ? s.w : std::min(w, s.w);
    first = false;
  }
  return TensorShape::spatial(h, w, channels);
}

// --- GraphBuilder -----------------------------------------------------------

GraphBuilder::GraphBuilder(TensorShape input) {
  if (!input.is_spatial() || !input.valid()) throw CompileError("network input must be a valid spatial shape");
  GraphNode node;
  node.op = OpKind::Input;
  node.out = input;
  push(std::move(node));
}

int GraphBuilder::push(GraphNode node) {
  node.id = static_cast<int>(nodes_.size());
  for (int in : node.inputs) node.in_shapes.push_back(nodes_.at(in).out);
  if (!node.out.valid()) throw CompileError("node " + std::to_string(node.id) + " (" + to_string(node.op) +
                                            ") has an empty output " + node.out.str());
  nodes_.push_back(std::move(node));
  return nodes_.back().id;
}

int GraphBuilder::conv(int in, int kernel, int filters, int stride, std::string origin) {
  const TensorShape& s = shape(in);
  if (!s.is_spatial()) throw CompileError("Conv requires a spatial input");
  if (kernel < 1 || filters < 1 || stride < 1) throw CompileError("Conv hyperparameters must be positive");
  GraphNode n;
  n.op = OpKind::Conv;
  n.inputs = {in};
  n.kernel = kernel;
  n.stride = stride;
  n.width = filters;
  n.out = TensorShape::spatial(conv_output_extent(s.h, stride), conv_output_extent(s.w, stride), filters);
  n.params = static_cast<std::int64_t>(kernel) * kernel * s.c * filters + filters;
  n.origin = std::move(origin);
  return push(std::move(n));
}

int GraphBuilder::dense(int in, int units, std::string origin) {
  const TensorShape& s = shape(in);
  if (s.is_spatial()) throw CompileError("Dense requires a flat input");
  if (units < 1) throw CompileError("Dense units must be positive");
  GraphNode n;
  n.op = OpKind::Dense;
  n.inputs = {in};
  n.width = units;
  n.out = TensorShape::flat(units);
  n.params = static_cast<std::int64_t>(s.c) * units + units;
  n.origin = std::move(origin);
  return push(std::move(n));
}

int GraphBuilder::batchnorm(int in, std::string origin) {
  GraphNode n;
  n.op = OpKind::BatchNorm;
  n.inputs = {in};
  n.out = shape(in);
  n.params = 2 * static_cast<std::int64_t>(n.out.c);
  n.origin = std::move(origin);
  return push(std::move(n));
}

int GraphBuilder::relu(int in, std::string origin) {
  GraphNode n;
  n.op = OpKind::ReLU;
  n.inputs = {in};
  n.out = shape(in);
  n.origin = std::move(origin);
  return push(std::move(n));
}

int GraphBuilder::flatten(int in) {
  GraphNode n;
  n.op = OpKind::Flatten;
  n.inputs = {in};
  n.out = TensorShape::flat(static_cast<int>(shape(in).size()));
  return push(std::move(n));
}

int GraphBuilder::reshape1x1(int in) {
  const TensorShape& s = shape(in);
  if (s.is_spatial()) throw CompileError("Reshape1x1 requires a flat input");
  GraphNode n;
  n.op = OpKind::Reshape1x1;
  n.inputs = {in};
  n.out = TensorShape::spatial(1, 1, s.c);
  return push(std::move(n));
}

int GraphBuilder::pool_align(int in, int h, int w) {
  const TensorShape& s = shape(in);
  if (!s.is_spatial()) throw CompileError("PoolAlign requires a spatial input");
  GraphNode n;
  n.op = OpKind::PoolAlign;
  n.inputs = {in};
  n.out = TensorShape::spatial(h, w, s.c);
  return push(std::move(n));
}

int GraphBuilder::concat(const std::vector<int>& ins) {
  if (ins.size() < 2) throw CompileError("Concat needs at least two inputs");
  const TensorShape& first = shape(ins[0]);
  int channels = 0;
  for (int in : ins) {
    const TensorShape& s = shape(in);
    if (s.kind != first.kind || s.h != first.h || s.w != first.w)
      throw CompileError("Concat inputs are not aligned");
    channels += s.c;
  }
  GraphNode n;
  n.op = OpKind::Concat;
  n.inputs = ins;
  n.out = first;
  n.out.c = channels;
  return push(std::move(n));
}

int GraphBuilder::global_avg_pool(int in) {
  const TensorShape& s = shape(in);
  if (!s.is_spatial()) throw CompileError("GlobalAvgPool requires a spatial input");
  GraphNode n;
  n.op = OpKind::GlobalAvgPool;
  n.inputs = {in};
  n.out = TensorShape::flat(s.c);
  return push(std::move(n));
}

int GraphBuilder::softmax(int in) {
  const TensorShape& s = shape(in);
  if (s.is_spatial()) throw CompileError("Softmax requires a flat input");
  GraphNode n;
  n.op = OpKind::Softmax;
  n.inputs = {in};
  n.out = s;
  n.origin = "head";
  return push(std::move(n));
}

int GraphBuilder::merge(const std::vector<int>& ins) {
  if (ins.empty()) throw CompileError("merge of zero tensors");
  if (ins.size() == 1) return ins[0];
  std::vector<TensorShape> shapes;
  for (int in : ins) shapes.push_back(shape(in));
  const TensorShape target = align_and_concat(shapes);
  std::vector<int> aligned;
  for (int in : ins) {
    int node = in;
    if (target.is_spatial()) {
      if (!shape(node).is_spatial()) node = reshape1x1(node);
      if (shape(node).h != target.h || shape(node).w != target.w) node = pool_align(node, target.h, target.w);
    }
    aligned.push_back(node);
  }
  return concat(aligned);
}

int GraphBuilder::adapt_for(LayerKind kind, int in) {
  const bool spatial = shape(in).is_spatial();
  if (kind == LayerKind::Dense && spatial) return flatten(in);
  if (kind == LayerKind::Conv && !spatial) return reshape1x1(in);
  return in;
}

int GraphBuilder::layer(const LayerGene& gene, int in, const std::string& origin) {
  const int x = adapt_for(gene.kind, in);
  const int core = gene.is_conv() ? conv(x, gene.kernel, gene.filters, gene.stride, origin) : dense(x, gene.units, origin);
  return batchnorm(relu(core, origin), origin);
}

CompiledGraph GraphBuilder::finish(int n_classes, GeneId source_model) && {
  CompiledGraph g;
  g.input = nodes_.front().out;
  g.nodes = std::move(nodes_);
  g.n_classes = n_classes;
  g.source_model = source_model;
  g.param_count = param_count(g);
  check_graph(g);
  return g;
}

// --- compile ---------------------------------------------------------------

namespace {

std::vector<std::vector<int>> predecessors(int n, const EdgeSet& edges) {
  std::vector<std::vector<int>> preds(n);
  for (const auto& [from, to] : edges) preds[to].push_back(from);
  for (auto& p : preds) std::sort(p.begin(), p.end());
  return preds;
}

int compile_block(GraphBuilder& b, const BlockGene& block, const GenePool& pool, int block_input, int block_pos) {
  const int n = static_cast<int>(block.layer_refs.size());
  const auto order = topological_order(n, block.layer_edges);
  if (!order) throw CompileError("block " + std::to_string(block.id) + " has a cyclic layer graph");
  const auto preds = predecessors(n, block.layer_edges);
  std::vector<int> out(n, -1);
  for (int l : *order) {
    std::vector<int> ins;
    for (int p : preds[l]) ins.push_back(out[p]);
    const int in = ins.empty() ? block_input : b.merge(ins);
    out[l] = b.layer(pool.layer(block.layer_refs[l]), in, "b" + std::to_string(block_pos) + ".l" + std::to_string(l));
  }
  std::vector<int> exits;
  for (int e : exit_nodes(n, block.layer_edges)) exits.push_back(out[e]);
  return b.merge(exits);
}

}  // namespace

CompiledGraph compile(const ModelGene& model, const GenePool& pool, const TensorShape& input_shape, int n_classes,
                      const CompileOptions& options) {
  if (n_classes < 1) throw CompileError("class count must be positive");
  try {
    check_model(model, pool);
    for (GeneId b : model.block_refs) {
      const BlockGene& block = pool.block(b);
      check_block(block, pool);
      for (GeneId l : block.layer_refs) {
        const LayerGene& g = pool.layer(l);
        if (g.is_conv() ? (g.kernel < 1 || g.filters < 1 || g.stride < 1) : g.units < 1)
          throw IntegrityError("layer " + std::to_string(l) + " has non-positive hyperparameters");
      }
    }
  } catch (const IntegrityError& e) {
    throw CompileError(std::string("invalid genome: ") + e.what());
  }

  GraphBuilder b(input_shape);
  const int nb = static_cast<int>(model.block_refs.size());
  const auto order = topological_order(nb, model.block_edges);
  const auto preds = predecessors(nb, model.block_edges);
  std::vector<int> out(nb, -1);
  for (int blk : *order) {
    std::vector<int> ins;
    for (int p : preds[blk]) ins.push_back(out[p]);
    const int in = ins.empty() ? b.input() : b.merge(ins);
    out[blk] = compile_block(b, pool.block(model.block_refs[blk]), pool, in, blk);
  }
  std::vector<int> heads;
  for (int e : exit_nodes(nb, model.block_edges)) {
    const int node = out[e];
    heads.push_back(b.shape(node).is_spatial() ? b.global_avg_pool(node) : node);
  }
  const int logits = b.dense(b.merge(heads), n_classes, "head");
  b.softmax(logits);
  CompiledGraph g = std::move(b).finish(n_classes, model.id);
  if (options.max_params > 0 && g.param_count > options.max_params)
    throw CompileError("parameter count " + std::to_string(g.param_count) + " exceeds budget " +
                       std::to_string(options.max_params));
  return g;
}

std::int64_t param_count(const CompiledGraph& graph) {
  std::int64_t total = 0;
  for (const auto& n : graph.nodes) total += n.params;
  return total;
}

void check_graph(const CompiledGraph& graph) {
  int softmax_count = 0;
  std::vector<int> consumers(graph.nodes.size(), 0);
  for (const auto& n : graph.nodes) {
    if (n.inputs.size() != n.in_shapes.size()) throw CompileError("node input/shape arity mismatch");
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      const int in = n.inputs[i];
      if (in < 0 || in >= n.id) throw CompileError("node " + std::to_string(n.id) + " is not topologically ordered");
      if (!(graph.nodes[in].out == n.in_shapes[i]))
        throw CompileError("node " + std::to_string(n.id) + " input shape mismatch");
      ++consumers[in];
    }
    if (n.op == OpKind::Softmax) ++softmax_count;
  }
  if (softmax_count != 1) throw CompileError("graph must contain exactly one Softmax");
  const GraphNode& sink = graph.nodes.back();
  if (sink.op != OpKind::Softmax || consumers.back() != 0) throw CompileError("Softmax must be the sink");
  if (sink.in_shapes[0].is_spatial() || sink.in_shapes[0].c != graph.n_classes)
    throw CompileError("Softmax input must have class-count width");
}

std::string dump_text(const CompiledGraph& graph) {
  std::ostringstream ss;
  ss << "# model " << graph.source_model << " input " << graph.input.str() << " classes " << graph.n_classes
     << " params " << graph.param_count << "\n";
  for (const auto& n : graph.nodes) {
    ss << n.id << ' ' << to_string(n.op);
    if (n.op == OpKind::Conv) ss << "(k=" << n.kernel << ",f=" << n.width << ",s=" << n.stride << ")";
    if (n.op == OpKind::Dense) ss << "(" << n.width << ")";
    ss << " in=[";
    for (std::size_t i = 0; i < n.inputs.size(); ++i)
      ss << (i ? "," : "") << n.inputs[i] << ":" << n.in_shapes[i].str();
    ss << "] out=" << n.out.str() << " params=" << n.params;
    if (!n.origin.empty()) ss << " origin=" << n.origin;
    ss << "\n";
  }
  return ss.str();
}

nlohmann::json graph_to_json(const CompiledGraph& graph) {
  auto shape_json = [](const TensorShape& s) {
    return s.is_spatial() ? nlohmann::json{{"h", s.h}, {"w", s.w}, {"c", s.c}} : nlohmann::json{{"n", s.c}};
  };
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : graph.nodes) {
    nlohmann::json in_shapes = nlohmann::json::array();
    for (const auto& s : n.in_shapes) in_shapes.push_back(shape_json(s));
    nlohmann::json j{{"id", n.id},       {"op", to_string(n.op)},     {"inputs", n.inputs},
                     {"in_shapes", in_shapes}, {"out", shape_json(n.out)}, {"params", n.params}};
    if (n.op == OpKind::Conv) {
      j["kernel"] = n.kernel;
      j["filters"] = n.width;
      j["stride"] = n.stride;
    }
    if (n.op == OpKind::Dense) j["units"] = n.width;
    if (!n.origin.empty()) j["origin"] = n.origin;
    nodes.push_back(std::move(j));
  }
  return {{"source_model", graph.source_model},
          {"input", shape_json(graph.input)},
          {"n_classes", graph.n_classes},
          {"param_count", graph.param_count},
          {"nodes", nodes}};
}

}  // namespace ras
