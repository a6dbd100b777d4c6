#pragma once

// Minimal CPU runtime for compiled graphs: forward, backward, SGD training.
// Instantiated for float (training) and double (gradient oracles).

#include <cstdint>
#include <span>
#include <vector>

#include "ras/dataset.hpp"
#include "ras/graph.hpp"

namespace ras {

enum class Mode { Train, Inference };

template <typename T>
struct Param {
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<T> velocity;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
class Network {
 public:
  /// He-uniform conv/dense weights, zero biases, BatchNorm scale 1 / shift 0.
  Network(CompiledGraph graph, std::uint64_t seed);

  const CompiledGraph& graph() const { return graph_; }
  int n_classes() const { return graph_.n_classes; }
  std::int64_t input_size() const { return graph_.input.size(); }

  /// `batch` holds n samples, channel-major. Returns n x n_classes probabilities.
  std::span<const T> forward(std::span<const T> batch, int n, Mode mode);
  /// Mean softmax cross-entropy of the last forward pass; overwrites all
  /// parameter gradients.
  T backward(std::span<const int> labels);

  std::vector<Param<T>>& parameters() { return params_; }
  const std::vector<Param<T>>& parameters() const { return params_; }
  /// Index of the first parameter tensor owned by `node`, or -1.
  int param_index(int node) const { return param_of_[node]; }
  std::int64_t parameter_count() const;

  std::span<const T> activation(int node) const { return {acts_[node].data(), acts_[node].size()}; }
  std::span<const T> activation_grad(int node) const { return {grads_[node].data(), grads_[node].size()}; }
  int batch_size() const { return batch_; }

  /// BatchNorm running statistics of `node` (mean then variance).
  std::span<const T> running_mean(int node) const;
  std::span<const T> running_var(int node) const;

 private:
  struct BatchNormState {
    std::vector<T> running_mean, running_var;
    std::vector<T> mean, inv_std, xhat;
    bool train = false;
  };

  void forward_node(const GraphNode& node);
  void backward_node(const GraphNode& node);
  void im2col(const GraphNode& node, const T* in);
  void col2im(const GraphNode& node, T* grad_in);

  CompiledGraph graph_;
  std::vector<Param<T>> params_;
  std::vector<int> param_of_;
  std::vector<BatchNormState> bn_;
  std::vector<int> bn_of_;
  std::vector<std::vector<T>> acts_, grads_;
  std::vector<T> col_, scratch_, scratch2_;
  std::vector<int> labels_;
  int batch_ = 0;
  Mode mode_ = Mode::Inference;
};

extern template class Network<float>;
extern template class Network<double>;

struct TrainConfig {
  int max_epochs = 200;
  double early_stop_delta = 0.001;
  int early_stop_patience = 15;
  int batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

/// True when every metric's latest value lies within `delta` of each of its
/// previous `patience` values.
bool early_stop_reached(std::span<const double> train_accuracy, std::span<const double> val_accuracy,
                        const TrainConfig& config);

struct TrainResult {
  double val_accuracy = 0.0;
  double train_accuracy = 0.0;
  int epochs_used = 0;
  bool aborted = false;
  std::vector<double> loss_history;
  std::vector<double> train_history;
  std::vector<double> val_history;
};

/// SGD with momentum on shuffled mini-batches; stops at max_epochs or on the
/// early-stop rule. A non-finite loss aborts with zero accuracy.
TrainResult train(Network<float>& net, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config);

/// Inference-mode argmax predictions.
std::vector<int> predict(Network<float>& net, std::span<const float> images, int n, int batch = 256);
double accuracy(Network<float>& net, const Dataset& data, int batch = 256);

/// Input shape of a dataset as a spatial tensor shape.
inline TensorShape input_shape(const Dataset& d) { return TensorShape::spatial(d.height, d.width, d.channels); }

}  // namespace ras
