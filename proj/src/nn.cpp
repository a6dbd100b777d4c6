#include "ras/nn.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>

namespace ras {

namespace {

void single_threaded_blas() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

// Row-major C = alpha * op(A) * op(B) + beta * C
void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda, const float* b, int ldb,
          float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda,
              b, ldb, beta, c, ldc);
}

void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda,
              b, ldb, beta, c, ldc);
}

struct ConvGeometry {
  int in_h, in_w, in_c, out_h, out_w, filters, kernel, stride, pad_top, pad_left;
  int taps() const { return in_c * kernel * kernel; }
  int positions() const { return out_h * out_w; }
};

ConvGeometry geometry(const GraphNode& node) {
  const TensorShape& in = node.in_shapes[0];
  ConvGeometry g{in.h, in.w, in.c, node.out.h, node.out.w, node.width, node.kernel, node.stride, 0, 0};
  g.pad_top = std::max((g.out_h - 1) * g.stride + g.kernel - g.in_h, 0) / 2;
  g.pad_left = std::max((g.out_w - 1) * g.stride + g.kernel - g.in_w, 0) / 2;
  return g;
}

// Adaptive average pooling window [start, end) along one axis.
inline int window_start(int o, int in, int out) { return (o * in) / out; }
inline int window_end(int o, int in, int out) { return ((o + 1) * in + out - 1) / out; }

}  // namespace

template <typename T>
Network<T>::Network(CompiledGraph graph, std::uint64_t seed) : graph_(std::move(graph)) {
  single_threaded_blas();
  const int nn = static_cast<int>(graph_.nodes.size());
  param_of_.assign(nn, -1);
  bn_of_.assign(nn, -1);
  acts_.resize(nn);
  grads_.resize(nn);
  Rng rng(seed);
  auto he_uniform = [&rng](std::size_t count, int fan_in) {
    Param<T> p;
    const double limit = std::sqrt(6.0 / std::max(fan_in, 1));
    std::uniform_real_distribution<double> dist(-limit, limit);
    p.value.resize(count);
    for (auto& v : p.value) v = static_cast<T>(dist(rng));
    return p;
  };
  auto constant = [](std::size_t count, T value) {
    Param<T> p;
    p.value.assign(count, value);
    return p;
  };
  for (const auto& node : graph_.nodes) {
    switch (node.op) {
      case OpKind::Conv: {
        const auto g = geometry(node);
        param_of_[node.id] = static_cast<int>(params_.size());
        params_.push_back(he_uniform(static_cast<std::size_t>(g.filters) * g.taps(), g.taps()));
        params_.push_back(constant(g.filters, T(0)));
        break;
      }
      case OpKind::Dense: {
        const int fan_in = node.in_shapes[0].c;
        param_of_[node.id] = static_cast<int>(params_.size());
        params_.push_back(he_uniform(static_cast<std::size_t>(fan_in) * node.width, fan_in));
        params_.push_back(constant(node.width, T(0)));
        break;
      }
      case OpKind::BatchNorm: {
        const int c = node.out.c;
        param_of_[node.id] = static_cast<int>(params_.size());
        params_.push_back(constant(c, T(1)));
        params_.push_back(constant(c, T(0)));
        bn_of_[node.id] = static_cast<int>(bn_.size());
        BatchNormState st;
        st.running_mean.assign(c, T(0));
        st.running_var.assign(c, T(1));
        bn_.push_back(std::move(st));
        break;
      }
      default:
        break;
    }
  }
  for (auto& p : params_) {
    p.grad.assign(p.value.size(), T(0));
    p.velocity.assign(p.value.size(), T(0));
  }
}

template <typename T>
std::int64_t Network<T>::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += static_cast<std::int64_t>(p.value.size());
  return total;
}

template <typename T>
std::span<const T> Network<T>::running_mean(int node) const {
  const auto& st = bn_.at(bn_of_.at(node));
  return {st.running_mean.data(), st.running_mean.size()};
}

template <typename T>
std::span<const T> Network<T>::running_var(int node) const {
  const auto& st = bn_.at(bn_of_.at(node));
  return {st.running_var.data(), st.running_var.size()};
}

template <typename T>
std::span<const T> Network<T>::forward(std::span<const T> batch, int n, Mode mode) {
  if (n < 1 || static_cast<std::int64_t>(batch.size()) != n * input_size())
    throw IntegrityError("batch of " + std::to_string(batch.size()) + " values does not match " + std::to_string(n) +
                         " x " + graph_.input.str());
  batch_ = n;
  mode_ = mode;
  for (const auto& node : graph_.nodes) acts_[node.id].resize(static_cast<std::size_t>(n) * node.out.size());
  std::copy(batch.begin(), batch.end(), acts_[0].begin());
  for (std::size_t i = 1; i < graph_.nodes.size(); ++i) forward_node(graph_.nodes[i]);
  const auto& out = acts_.back();
  return {out.data(), out.size()};
}

template <typename T>
void Network<T>::im2col(const GraphNode& node, const T* in) {
  const auto g = geometry(node);
  const int P = g.positions(), NP = batch_ * P, k = g.kernel;
  col_.resize(static_cast<std::size_t>(g.taps()) * NP);
  const std::size_t in_stride = static_cast<std::size_t>(g.in_c) * g.in_h * g.in_w;
  for (int ci = 0; ci < g.in_c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col_.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * NP;
        for (int s = 0; s < batch_; ++s) {
          const T* plane = in + s * in_stride + static_cast<std::size_t>(ci) * g.in_h * g.in_w;
          T* dst = row + static_cast<std::size_t>(s) * P;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.pad_top + ky;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.pad_left + kx;
              dst[oy * g.out_w + ox] =
                  (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w) ? plane[iy * g.in_w + ix] : T(0);
            }
          }
        }
      }
}

template <typename T>
void Network<T>::col2im(const GraphNode& node, T* grad_in) {
  const auto g = geometry(node);
  const int P = g.positions(), NP = batch_ * P, k = g.kernel;
  const std::size_t in_stride = static_cast<std::size_t>(g.in_c) * g.in_h * g.in_w;
  for (int ci = 0; ci < g.in_c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col_.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * NP;
        for (int s = 0; s < batch_; ++s) {
          T* plane = grad_in + s * in_stride + static_cast<std::size_t>(ci) * g.in_h * g.in_w;
          const T* src = row + static_cast<std::size_t>(s) * P;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.pad_top + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.pad_left + kx;
              if (ix >= 0 && ix < g.in_w) plane[iy * g.in_w + ix] += src[oy * g.out_w + ox];
            }
          }
        }
      }
}

template <typename T>
void Network<T>::forward_node(const GraphNode& node) {
  T* out = acts_[node.id].data();
  const int n = batch_;
  switch (node.op) {
    case OpKind::Input:
      break;
    case OpKind::Conv: {
      const auto g = geometry(node);
      const int P = g.positions(), NP = n * P, K = g.taps();
      im2col(node, acts_[node.inputs[0]].data());
      scratch_.resize(static_cast<std::size_t>(g.filters) * NP);
      const auto& w = params_[param_of_[node.id]].value;
      const auto& b = params_[param_of_[node.id] + 1].value;
      gemm(false, false, g.filters, NP, K, T(1), w.data(), K, col_.data(), NP, T(0), scratch_.data(), NP);
      for (int s = 0; s < n; ++s)
        for (int f = 0; f < g.filters; ++f) {
          const T* src = scratch_.data() + static_cast<std::size_t>(f) * NP + static_cast<std::size_t>(s) * P;
          T* dst = out + (static_cast<std::size_t>(s) * g.filters + f) * P;
          for (int p = 0; p < P; ++p) dst[p] = src[p] + b[f];
        }
      break;
    }
    case OpKind::Dense: {
      const int nin = node.in_shapes[0].c, nout = node.width;
      const auto& w = params_[param_of_[node.id]].value;
      const auto& b = params_[param_of_[node.id] + 1].value;
      for (int s = 0; s < n; ++s) std::copy(b.begin(), b.end(), out + static_cast<std::size_t>(s) * nout);
      gemm(false, false, n, nout, nin, T(1), acts_[node.inputs[0]].data(), nin, w.data(), nout, T(1), out, nout);
      break;
    }
    case OpKind::BatchNorm: {
      auto& st = bn_[bn_of_[node.id]];
      const int C = node.out.c, P = node.out.positions();
      const T* in = acts_[node.inputs[0]].data();
      const auto& gamma = params_[param_of_[node.id]].value;
      const auto& beta = params_[param_of_[node.id] + 1].value;
      st.train = mode_ == Mode::Train;
      st.mean.resize(C);
      st.inv_std.resize(C);
      st.xhat.resize(static_cast<std::size_t>(n) * C * P);
      const double M = static_cast<double>(n) * P;
      for (int c = 0; c < C; ++c) {
        double mean, var;
        if (st.train) {
          double sum = 0.0;
          for (int s = 0; s < n; ++s) {
            const T* x = in + (static_cast<std::size_t>(s) * C + c) * P;
            for (int p = 0; p < P; ++p) sum += x[p];
          }
          mean = sum / M;
          double sq = 0.0;
          for (int s = 0; s < n; ++s) {
            const T* x = in + (static_cast<std::size_t>(s) * C + c) * P;
            for (int p = 0; p < P; ++p) sq += (x[p] - mean) * (x[p] - mean);
          }
          var = sq / M;
          const double unbiased = M > 1 ? var * M / (M - 1) : var;
          st.running_mean[c] = static_cast<T>((1 - kBatchNormMomentum) * st.running_mean[c] + kBatchNormMomentum * mean);
          st.running_var[c] =
              static_cast<T>((1 - kBatchNormMomentum) * st.running_var[c] + kBatchNormMomentum * unbiased);
        } else {
          mean = st.running_mean[c];
          var = st.running_var[c];
        }
        const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
        st.mean[c] = static_cast<T>(mean);
        st.inv_std[c] = static_cast<T>(inv);
        for (int s = 0; s < n; ++s) {
          const std::size_t off = (static_cast<std::size_t>(s) * C + c) * P;
          for (int p = 0; p < P; ++p) {
            const T xh = static_cast<T>((in[off + p] - mean) * inv);
            st.xhat[off + p] = xh;
            out[off + p] = gamma[c] * xh + beta[c];
          }
        }
      }
      break;
    }
    case OpKind::ReLU: {
      const auto& in = acts_[node.inputs[0]];
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
      break;
    }
    case OpKind::Flatten:
    case OpKind::Reshape1x1: {
      const auto& in = acts_[node.inputs[0]];
      std::copy(in.begin(), in.end(), out);
      break;
    }
    case OpKind::PoolAlign: {
      const TensorShape& is = node.in_shapes[0];
      const TensorShape& os = node.out;
      const T* in = acts_[node.inputs[0]].data();
      for (int s = 0; s < n; ++s)
        for (int c = 0; c < os.c; ++c) {
          const T* plane = in + (static_cast<std::size_t>(s) * is.c + c) * is.h * is.w;
          T* dst = out + (static_cast<std::size_t>(s) * os.c + c) * os.h * os.w;
          for (int oy = 0; oy < os.h; ++oy) {
            const int y0 = window_start(oy, is.h, os.h), y1 = window_end(oy, is.h, os.h);
            for (int ox = 0; ox < os.w; ++ox) {
              const int x0 = window_start(ox, is.w, os.w), x1 = window_end(ox, is.w, os.w);
              T acc = 0;
              for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) acc += plane[y * is.w + x];
              dst[oy * os.w + ox] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
            }
          }
        }
      break;
    }
    case OpKind::Concat: {
      const std::size_t out_size = node.out.size();
      std::size_t offset = 0;
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const std::size_t sz = node.in_shapes[i].size();
        const T* in = acts_[node.inputs[i]].data();
        for (int s = 0; s < n; ++s) std::copy_n(in + s * sz, sz, out + s * out_size + offset);
        offset += sz;
      }
      break;
    }
    case OpKind::GlobalAvgPool: {
      const TensorShape& is = node.in_shapes[0];
      const int P = is.positions();
      const T* in = acts_[node.inputs[0]].data();
      for (int s = 0; s < n; ++s)
        for (int c = 0; c < is.c; ++c) {
          const T* x = in + (static_cast<std::size_t>(s) * is.c + c) * P;
          T acc = 0;
          for (int p = 0; p < P; ++p) acc += x[p];
          out[static_cast<std::size_t>(s) * is.c + c] = acc / static_cast<T>(P);
        }
      break;
    }
    case OpKind::Softmax: {
      const int k = node.out.c;
      const T* in = acts_[node.inputs[0]].data();
      for (int s = 0; s < n; ++s) {
        const T* z = in + static_cast<std::size_t>(s) * k;
        T* p = out + static_cast<std::size_t>(s) * k;
        const T m = *std::max_element(z, z + k);
        T sum = 0;
        for (int j = 0; j < k; ++j) sum += (p[j] = std::exp(z[j] - m));
        for (int j = 0; j < k; ++j) p[j] /= sum;
      }
      break;
    }
  }
}

template <typename T>
T Network<T>::backward(std::span<const int> labels) {
  if (batch_ == 0 || static_cast<int>(labels.size()) != batch_)
    throw IntegrityError("label count does not match the last forward batch");
  labels_.assign(labels.begin(), labels.end());
  for (const auto& node : graph_.nodes) grads_[node.id].assign(acts_[node.id].size(), T(0));
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
  const int k = graph_.n_classes;
  const auto& probs = acts_.back();
  double loss = 0.0;
  for (int s = 0; s < batch_; ++s) {
    if (labels_[s] < 0 || labels_[s] >= k) throw IntegrityError("label out of range");
    const double py = probs[static_cast<std::size_t>(s) * k + labels_[s]];
    loss -= std::log(std::max(py, static_cast<double>(std::numeric_limits<T>::min())));
  }
  for (auto it = graph_.nodes.rbegin(); it != graph_.nodes.rend(); ++it)
    if (it->op != OpKind::Input) backward_node(*it);
  return static_cast<T>(loss / batch_);
}

template <typename T>
void Network<T>::backward_node(const GraphNode& node) {
  const int n = batch_;
  const T* dy = grads_[node.id].data();
  T* dx = grads_[node.inputs[0]].data();
  switch (node.op) {
    case OpKind::Input:
      break;
    case OpKind::Conv: {
      const auto g = geometry(node);
      const int P = g.positions(), NP = n * P, K = g.taps();
      auto& wp = params_[param_of_[node.id]];
      auto& bp = params_[param_of_[node.id] + 1];
      scratch_.resize(static_cast<std::size_t>(g.filters) * NP);
      for (int s = 0; s < n; ++s)
        for (int f = 0; f < g.filters; ++f) {
          const T* src = dy + (static_cast<std::size_t>(s) * g.filters + f) * P;
          T* dst = scratch_.data() + static_cast<std::size_t>(f) * NP + static_cast<std::size_t>(s) * P;
          T acc = 0;
          for (int p = 0; p < P; ++p) {
            dst[p] = src[p];
            acc += src[p];
          }
          bp.grad[f] += acc;
        }
      im2col(node, acts_[node.inputs[0]].data());
      gemm(false, true, g.filters, K, NP, T(1), scratch_.data(), NP, col_.data(), NP, T(0), wp.grad.data(), K);
      gemm(true, false, K, NP, g.filters, T(1), wp.value.data(), K, scratch_.data(), NP, T(0), col_.data(), NP);
      col2im(node, dx);
      break;
    }
    case OpKind::Dense: {
      const int nin = node.in_shapes[0].c, nout = node.width;
      auto& wp = params_[param_of_[node.id]];
      auto& bp = params_[param_of_[node.id] + 1];
      gemm(true, false, nin, nout, n, T(1), acts_[node.inputs[0]].data(), nin, dy, nout, T(0), wp.grad.data(), nout);
      for (int s = 0; s < n; ++s)
        for (int j = 0; j < nout; ++j) bp.grad[j] += dy[static_cast<std::size_t>(s) * nout + j];
      gemm(false, true, n, nin, nout, T(1), dy, nout, wp.value.data(), nout, T(1), dx, nin);
      break;
    }
    case OpKind::BatchNorm: {
      auto& st = bn_[bn_of_[node.id]];
      const int C = node.out.c, P = node.out.positions();
      auto& gp = params_[param_of_[node.id]];
      auto& bp = params_[param_of_[node.id] + 1];
      const double M = static_cast<double>(n) * P;
      for (int c = 0; c < C; ++c) {
        double dgamma = 0.0, dbeta = 0.0;
        for (int s = 0; s < n; ++s) {
          const std::size_t off = (static_cast<std::size_t>(s) * C + c) * P;
          for (int p = 0; p < P; ++p) {
            dgamma += static_cast<double>(dy[off + p]) * st.xhat[off + p];
            dbeta += dy[off + p];
          }
        }
        gp.grad[c] += static_cast<T>(dgamma);
        bp.grad[c] += static_cast<T>(dbeta);
        const double gamma = gp.value[c], inv = st.inv_std[c];
        for (int s = 0; s < n; ++s) {
          const std::size_t off = (static_cast<std::size_t>(s) * C + c) * P;
          for (int p = 0; p < P; ++p) {
            const double g = dy[off + p];
            const double v = st.train ? inv / M * gamma * (M * g - dbeta - st.xhat[off + p] * dgamma) : g * gamma * inv;
            dx[off + p] += static_cast<T>(v);
          }
        }
      }
      break;
    }
    case OpKind::ReLU: {
      const auto& in = acts_[node.inputs[0]];
      for (std::size_t i = 0; i < in.size(); ++i)
        if (in[i] > T(0)) dx[i] += dy[i];
      break;
    }
    case OpKind::Flatten:
    case OpKind::Reshape1x1: {
      const std::size_t sz = grads_[node.id].size();
      for (std::size_t i = 0; i < sz; ++i) dx[i] += dy[i];
      break;
    }
    case OpKind::PoolAlign: {
      const TensorShape& is = node.in_shapes[0];
      const TensorShape& os = node.out;
      for (int s = 0; s < n; ++s)
        for (int c = 0; c < os.c; ++c) {
          T* plane = dx + (static_cast<std::size_t>(s) * is.c + c) * is.h * is.w;
          const T* src = dy + (static_cast<std::size_t>(s) * os.c + c) * os.h * os.w;
          for (int oy = 0; oy < os.h; ++oy) {
            const int y0 = window_start(oy, is.h, os.h), y1 = window_end(oy, is.h, os.h);
            for (int ox = 0; ox < os.w; ++ox) {
              const int x0 = window_start(ox, is.w, os.w), x1 = window_end(ox, is.w, os.w);
              const T share = src[oy * os.w + ox] / static_cast<T>((y1 - y0) * (x1 - x0));
              for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) plane[y * is.w + x] += share;
            }
          }
        }
      break;
    }
    case OpKind::Concat: {
      const std::size_t out_size = node.out.size();
      std::size_t offset = 0;
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const std::size_t sz = node.in_shapes[i].size();
        T* g = grads_[node.inputs[i]].data();
        for (int s = 0; s < n; ++s)
          for (std::size_t j = 0; j < sz; ++j) g[s * sz + j] += dy[s * out_size + offset + j];
        offset += sz;
      }
      break;
    }
    case OpKind::GlobalAvgPool: {
      const TensorShape& is = node.in_shapes[0];
      const int P = is.positions();
      for (int s = 0; s < n; ++s)
        for (int c = 0; c < is.c; ++c) {
          const T share = dy[static_cast<std::size_t>(s) * is.c + c] / static_cast<T>(P);
          T* x = dx + (static_cast<std::size_t>(s) * is.c + c) * P;
          for (int p = 0; p < P; ++p) x[p] += share;
        }
      break;
    }
    case OpKind::Softmax: {
      // Cross-entropy through softmax: dL/dz = (p - onehot) / n.
      const int k = node.out.c;
      const auto& probs = acts_[node.id];
      for (int s = 0; s < n; ++s)
        for (int j = 0; j < k; ++j) {
          const std::size_t i = static_cast<std::size_t>(s) * k + j;
          dx[i] += (probs[i] - (j == labels_[s] ? T(1) : T(0))) / static_cast<T>(n);
        }
      break;
    }
  }
}

template class Network<float>;
template class Network<double>;

// --- training --------------------------------------------------------------

void validate(const TrainConfig& c) {
  if (c.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (c.early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
  if (!(c.early_stop_delta >= 0.0)) throw ConfigError("early_stop_delta must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

bool early_stop_reached(std::span<const double> train_accuracy, std::span<const double> val_accuracy,
                        const TrainConfig& config) {
  const auto p = static_cast<std::size_t>(config.early_stop_patience);
  auto flat = [&](std::span<const double> h) {
    if (h.size() <= p) return false;
    const double last = h.back();
    for (std::size_t i = h.size() - 1 - p; i + 1 < h.size(); ++i)
      if (std::abs(last - h[i]) > config.early_stop_delta) return false;
    return true;
  };
  return flat(train_accuracy) && flat(val_accuracy);
}

std::vector<int> predict(Network<float>& net, std::span<const float> images, int n, int batch) {
  const auto in_size = static_cast<std::size_t>(net.input_size());
  const int k = net.n_classes();
  std::vector<int> out;
  out.reserve(n);
  for (int start = 0; start < n; start += batch) {
    const int b = std::min(batch, n - start);
    const auto probs = net.forward(images.subspan(start * in_size, b * in_size), b, Mode::Inference);
    for (int s = 0; s < b; ++s) {
      const float* row = probs.data() + static_cast<std::size_t>(s) * k;
      out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
    }
  }
  return out;
}

double accuracy(Network<float>& net, const Dataset& data, int batch) {
  if (data.size() == 0) return 0.0;
  const auto pred = predict(net, data.pixels, static_cast<int>(data.size()), batch);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train(Network<float>& net, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config) {
  validate(config);
  if (train_set.size() == 0 || val_set.size() == 0) throw ConfigError("training and validation sets must be non-empty");
  if (static_cast<std::int64_t>(train_set.image_size()) != net.input_size())
    throw IntegrityError("dataset image size does not match the network input");
  TrainResult result;
  const std::size_t n = train_set.size(), in_size = train_set.image_size();
  const int k = net.n_classes();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(config.seed, 0x5348u));
  std::vector<float> batch;
  std::vector<int> labels;
  const auto lr = static_cast<float>(config.learning_rate), mu = static_cast<float>(config.momentum);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t correct = 0, seen = 0;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t b = std::min<std::size_t>(config.batch_size, n - start);
      // A single-sample batch has no batch statistics to normalise with.
      if (b < 2 && n >= 2) continue;
      batch.resize(b * in_size);
      labels.resize(b);
      for (std::size_t i = 0; i < b; ++i) {
        const auto img = train_set.image(order[start + i]);
        std::copy(img.begin(), img.end(), batch.begin() + i * in_size);
        labels[i] = train_set.labels[order[start + i]];
      }
      const auto probs = net.forward(batch, static_cast<int>(b), Mode::Train);
      for (std::size_t i = 0; i < b; ++i) {
        const float* row = probs.data() + i * k;
        correct += (std::max_element(row, row + k) - row) == labels[i];
      }
      const float loss = net.backward(labels);
      if (!std::isfinite(loss)) {
        result.aborted = true;
        result.val_accuracy = 0.0;
        result.train_accuracy = 0.0;
        result.epochs_used = epoch;
        return result;
      }
      loss_sum += static_cast<double>(loss) * b;
      seen += b;
      for (auto& p : net.parameters())
        for (std::size_t i = 0; i < p.value.size(); ++i) {
          p.velocity[i] = mu * p.velocity[i] - lr * p.grad[i];
          p.value[i] += p.velocity[i];
        }
    }
    result.loss_history.push_back(seen ? loss_sum / seen : 0.0);
    result.train_history.push_back(seen ? static_cast<double>(correct) / seen : 0.0);
    result.val_history.push_back(accuracy(net, val_set));
    result.epochs_used = epoch;
    if (early_stop_reached(result.train_history, result.val_history, config)) break;
  }
  for (const auto& p : net.parameters())
    for (float v : p.value)
      if (!std::isfinite(v)) {
        result.aborted = true;
        result.val_accuracy = result.train_accuracy = 0.0;
        return result;
      }
  result.train_accuracy = result.train_history.back();
  result.val_accuracy = result.val_history.back();
  return result;
}

}  // namespace ras
