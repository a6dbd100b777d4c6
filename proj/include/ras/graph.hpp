#pragma once

// Compiles a ModelGene into a flat, topologically ordered list of typed ops
// with inferred shapes.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ras/genome.hpp"

namespace ras {

struct TensorShape {
  enum class Kind : std::uint8_t { Spatial, Flat };

  Kind kind = Kind::Flat;
  int h = 1;
  int w = 1;
  int c = 1;  // channels, or the feature count of a flat shape

  static TensorShape spatial(int h, int w, int c) { return {Kind::Spatial, h, w, c}; }
  static TensorShape flat(int n) { return {Kind::Flat, 1, 1, n}; }

  bool is_spatial() const { return kind == Kind::Spatial; }
  /// Elements per sample.
  std::int64_t size() const { return static_cast<std::int64_t>(h) * w * c; }
  /// Positions per channel (h*w for spatial, 1 for flat).
  int positions() const { return h * w; }
  bool valid() const { return h >= 1 && w >= 1 && c >= 1; }
  std::string str() const;

  bool operator==(const TensorShape&) const = default;
};

enum class OpKind : std::uint8_t {
  Input,
  Conv,
  Dense,
  BatchNorm,
  ReLU,
  Flatten,
  Reshape1x1,
  PoolAlign,
  Concat,
  GlobalAvgPool,
  Softmax,
};

std::string to_string(OpKind op);

struct GraphNode {
  int id = 0;
  OpKind op = OpKind::Input;
  std::vector<int> inputs;
  std::vector<TensorShape> in_shapes;
  TensorShape out;
  int kernel = 0;
  int stride = 0;
  int width = 0;  // conv filters or dense units
  std::int64_t params = 0;
  std::string origin;  // e.g. "b1.l0" for gene-derived nodes, "head" for the classifier
};

struct CompiledGraph {
  std::vector<GraphNode> nodes;
  TensorShape input;
  int n_classes = 0;
  std::int64_t param_count = 0;
  GeneId source_model = 0;

  int output_node() const { return static_cast<int>(nodes.size()) - 1; }
};

struct CompileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Same-padding output extent.
inline int conv_output_extent(int in, int stride) { return (in + stride - 1) / stride; }

/// Shape of merging several tensors: flat inputs concatenate; otherwise spatial
/// inputs pool down to the smallest (h, w), flat inputs tile to it, and
/// channels concatenate.
TensorShape align_and_concat(std::span<const TensorShape> shapes);

/// Incremental graph construction with shape inference. Node 0 is the input.
class GraphBuilder {
 public:
  explicit GraphBuilder(TensorShape input);

  int input() const { return 0; }
  const TensorShape& shape(int node) const { return nodes_.at(node).out; }

  int conv(int in, int kernel, int filters, int stride, std::string origin = {});
  int dense(int in, int units, std::string origin = {});
  int batchnorm(int in, std::string origin = {});
  int relu(int in, std::string origin = {});
  int flatten(int in);
  int reshape1x1(int in);
  int pool_align(int in, int h, int w);
  int concat(const std::vector<int>& ins);
  int global_avg_pool(int in);
  int softmax(int in);

  /// Inserts alignment ops and a Concat when more than one input is given.
  int merge(const std::vector<int>& ins);
  /// Flatten before Dense, Reshape1x1 before Conv, nothing otherwise.
  int adapt_for(LayerKind kind, int in);
  /// Adapter, core op, ReLU, BatchNorm.
  int layer(const LayerGene& gene, int in, const std::string& origin);

  CompiledGraph finish(int n_classes, GeneId source_model) &&;

 private:
  int push(GraphNode node);

  std::vector<GraphNode> nodes_;
};

struct CompileOptions {
  std::int64_t max_params = 0;  // 0 = unlimited
};

CompiledGraph compile(const ModelGene& model, const GenePool& pool, const TensorShape& input_shape, int n_classes,
                      const CompileOptions& options = {});

std::int64_t param_count(const CompiledGraph& graph);

/// One node per line: id, op, input shapes, output shape, parameter count.
std::string dump_text(const CompiledGraph& graph);
nlohmann::json graph_to_json(const CompiledGraph& graph);

/// Throws CompileError if any node's recorded input shapes disagree with its
/// predecessors or the softmax sink is malformed.
void check_graph(const CompiledGraph& graph);

}  // namespace ras
