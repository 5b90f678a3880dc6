#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace mmssl {

// Reverse-mode autodiff over vector-valued nodes. The graph is rebuilt per
// batch; values and gradients live in flat arenas so a cleared tape reuses its
// capacity. Only the handful of ops the training losses need.
class Tape {
 public:
  enum class Op : std::uint8_t {
    leaf,             // value injected; tensor >= 0 marks a trainable parameter
    affine,           // in0=W leaf (rows x cols), in1=x, in2=b -> W x + b
    relu,             //
    concat,           // args
    add_n,            // args, equal lengths
    sub,              // in0 - in1
    scale,            // factor * in0
    vecmat,           // in0=x (len r), in1=W leaf (r x c) -> row vector x W
    cos_sim,          // scalar; denominators carry +1e-12
    softmax_ce,       // -log softmax(in0)[target]
    softmax_ce_soft,  // -sum_c t_c log softmax(in0)_c, t = in1
    sq_dist,          // sum_i (a_i - b_i)^2
    log_sum_exp,      // over scalar args
    sum_scaled,       // sum_k coef_k * scalar_arg_k
  };

  struct Node {
    Op op;
    int in0 = -1, in1 = -1, in2 = -1;
    int args = -1, nargs = 0;
    int target = -1;
    double factor = 0.0;
    int rows = 0, cols = 0;
    int tensor = -1;
    int off = 0, len = 0;
  };

  void clear() {
    nodes_.clear();
    val_.clear();
    arg_pool_.clear();
    coef_pool_.clear();
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[id]; }

  std::span<const double> val(int id) const {
    const Node& n = nodes_[id];
    return {val_.data() + n.off, static_cast<size_t>(n.len)};
  }
  std::span<const double> grad_of(int id) const {
    const Node& n = nodes_[id];
    return {grad_.data() + n.off, static_cast<size_t>(n.len)};
  }
  double scalar(int id) const { return val_[nodes_[id].off]; }

  int leaf(std::span<const double> v, int rows = 0, int cols = 0, int tensor = -1) {
    const int id = alloc(Op::leaf, static_cast<int>(v.size()));
    Node& n = nodes_[id];
    n.rows = rows;
    n.cols = cols;
    n.tensor = tensor;
    std::copy(v.begin(), v.end(), val_.begin() + n.off);
    return id;
  }

  int constant_scalar(double v) { return leaf(std::span<const double>(&v, 1)); }

  // Copies a node's current value into a fresh constant leaf: a stop-gradient.
  // (leaf() must never be handed a span into this tape's own arena, since the
  // arena may reallocate; this takes the required copy first.)
  int detach(int id) {
    scratch_.assign(val(id).begin(), val(id).end());
    return leaf(scratch_);
  }

  int affine(int w, int x, int b) {
    const Node& wn = nodes_[w];
    if (wn.cols != nodes_[x].len || wn.rows != nodes_[b].len)
      throw std::invalid_argument("tape: affine shape mismatch");
    const int id = alloc(Op::affine, wn.rows);
    Node& n = nodes_[id];
    n.in0 = w;
    n.in1 = x;
    n.in2 = b;
    const double* W = vp(w);
    const double* X = vp(x);
    const double* B = vp(b);
    double* Y = val_.data() + n.off;
    for (int i = 0; i < wn.rows; ++i) {
      double acc = B[i];
      const double* row = W + static_cast<size_t>(i) * wn.cols;
      for (int j = 0; j < wn.cols; ++j) acc += row[j] * X[j];
      Y[i] = acc;
    }
    return id;
  }

  int relu(int x) {
    const int id = alloc(Op::relu, nodes_[x].len);
    nodes_[id].in0 = x;
    const double* X = vp(x);
    double* Y = val_.data() + nodes_[id].off;
    for (int i = 0; i < nodes_[id].len; ++i) Y[i] = X[i] > 0.0 ? X[i] : 0.0;
    return id;
  }

  int concat(std::span<const int> parts) {
    int total = 0;
    for (int p : parts) total += nodes_[p].len;
    const int args = push_args(parts);
    const int id = alloc(Op::concat, total);
    nodes_[id].args = args;
    nodes_[id].nargs = static_cast<int>(parts.size());
    double* Y = val_.data() + nodes_[id].off;
    for (int p : parts) {
      const double* X = vp(p);
      Y = std::copy(X, X + nodes_[p].len, Y);
    }
    return id;
  }

  int add_n(std::span<const int> parts) {
    const int len = nodes_[parts[0]].len;
    for (int p : parts)
      if (nodes_[p].len != len) throw std::invalid_argument("tape: add_n length mismatch");
    const int args = push_args(parts);
    const int id = alloc(Op::add_n, len);
    nodes_[id].args = args;
    nodes_[id].nargs = static_cast<int>(parts.size());
    double* Y = val_.data() + nodes_[id].off;
    std::fill(Y, Y + len, 0.0);
    for (int p : parts) {
      const double* X = vp(p);
      for (int i = 0; i < len; ++i) Y[i] += X[i];
    }
    return id;
  }

  int sub(int a, int b) {
    if (nodes_[a].len != nodes_[b].len) throw std::invalid_argument("tape: sub length mismatch");
    const int id = alloc(Op::sub, nodes_[a].len);
    nodes_[id].in0 = a;
    nodes_[id].in1 = b;
    const double* A = vp(a);
    const double* B = vp(b);
    double* Y = val_.data() + nodes_[id].off;
    for (int i = 0; i < nodes_[id].len; ++i) Y[i] = A[i] - B[i];
    return id;
  }

  int scale(int x, double f) {
    const int id = alloc(Op::scale, nodes_[x].len);
    nodes_[id].in0 = x;
    nodes_[id].factor = f;
    const double* X = vp(x);
    double* Y = val_.data() + nodes_[id].off;
    for (int i = 0; i < nodes_[id].len; ++i) Y[i] = f * X[i];
    return id;
  }

  int vecmat(int x, int w) {
    const Node& wn = nodes_[w];
    if (wn.rows != nodes_[x].len) throw std::invalid_argument("tape: vecmat shape mismatch");
    const int id = alloc(Op::vecmat, wn.cols);
    nodes_[id].in0 = x;
    nodes_[id].in1 = w;
    const double* X = vp(x);
    const double* W = vp(w);
    double* Y = val_.data() + nodes_[id].off;
    std::fill(Y, Y + wn.cols, 0.0);
    for (int r = 0; r < wn.rows; ++r) {
      const double xr = X[r];
      if (xr == 0.0) continue;
      const double* row = W + static_cast<size_t>(r) * wn.cols;
      for (int c = 0; c < wn.cols; ++c) Y[c] += xr * row[c];
    }
    return id;
  }

  int cos_sim(int a, int b) {
    if (nodes_[a].len != nodes_[b].len) throw std::invalid_argument("tape: cos_sim length mismatch");
    const int id = alloc(Op::cos_sim, 1);
    nodes_[id].in0 = a;
    nodes_[id].in1 = b;
    const double* A = vp(a);
    const double* B = vp(b);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int i = 0; i < nodes_[a].len; ++i) {
      dot += A[i] * B[i];
      na += A[i] * A[i];
      nb += B[i] * B[i];
    }
    val_[nodes_[id].off] = dot / (std::sqrt(na) * std::sqrt(nb) + kCosEps);
    return id;
  }

  int softmax_ce(int logits, int target) {
    const int id = alloc(Op::softmax_ce, 1);
    nodes_[id].in0 = logits;
    nodes_[id].target = target;
    val_[nodes_[id].off] = lse_of(logits) - vp(logits)[target];
    return id;
  }

  int softmax_ce_soft(int logits, int target_node) {
    if (nodes_[logits].len != nodes_[target_node].len)
      throw std::invalid_argument("tape: softmax_ce_soft length mismatch");
    const int id = alloc(Op::softmax_ce_soft, 1);
    nodes_[id].in0 = logits;
    nodes_[id].in1 = target_node;
    const double lse = lse_of(logits);
    const double* L = vp(logits);
    const double* T = vp(target_node);
    double acc = 0.0;
    for (int c = 0; c < nodes_[logits].len; ++c) acc += T[c] * (lse - L[c]);
    val_[nodes_[id].off] = acc;
    return id;
  }

  int sq_dist(int a, int b) {
    if (nodes_[a].len != nodes_[b].len) throw std::invalid_argument("tape: sq_dist length mismatch");
    const int id = alloc(Op::sq_dist, 1);
    nodes_[id].in0 = a;
    nodes_[id].in1 = b;
    const double* A = vp(a);
    const double* B = vp(b);
    double acc = 0.0;
    for (int i = 0; i < nodes_[a].len; ++i) acc += (A[i] - B[i]) * (A[i] - B[i]);
    val_[nodes_[id].off] = acc;
    return id;
  }

  int log_sum_exp(std::span<const int> scalars) {
    const int args = push_args(scalars);
    const int id = alloc(Op::log_sum_exp, 1);
    nodes_[id].args = args;
    nodes_[id].nargs = static_cast<int>(scalars.size());
    double m = -1e300;
    for (int s : scalars) m = std::max(m, val_[nodes_[s].off]);
    double acc = 0.0;
    for (int s : scalars) acc += std::exp(val_[nodes_[s].off] - m);
    val_[nodes_[id].off] = m + std::log(acc);
    return id;
  }

  int sum_scaled(std::span<const int> scalars, std::span<const double> coefs) {
    assert(scalars.size() == coefs.size());
    const int args = push_args(scalars);
    const int coff = static_cast<int>(coef_pool_.size());
    coef_pool_.insert(coef_pool_.end(), coefs.begin(), coefs.end());
    const int id = alloc(Op::sum_scaled, 1);
    nodes_[id].args = args;
    nodes_[id].nargs = static_cast<int>(scalars.size());
    nodes_[id].target = coff;  // reuse: offset into coef pool
    double acc = 0.0;
    for (size_t k = 0; k < scalars.size(); ++k) acc += coefs[k] * val_[nodes_[scalars[k]].off];
    val_[nodes_[id].off] = acc;
    return id;
  }

  // Seeds d(loss)/d(loss) = 1 and propagates to every node. The loss must be
  // scalar. Call grad_of()/harvest afterwards.
  void backward(int loss_id) {
    if (nodes_[loss_id].len != 1) throw std::logic_error("tape: backward needs a scalar loss");
    grad_.assign(val_.size(), 0.0);
    grad_[nodes_[loss_id].off] = 1.0;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      const Node& n = nodes_[id];
      const double* g = grad_.data() + n.off;
      switch (n.op) {
        case Op::leaf:
          break;
        case Op::affine: {
          const Node& wn = nodes_[n.in0];
          double* gw = gp(n.in0);
          double* gx = gp(n.in1);
          double* gb = gp(n.in2);
          const double* W = vp(n.in0);
          const double* X = vp(n.in1);
          for (int i = 0; i < wn.rows; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            gb[i] += gi;
            double* gwrow = gw + static_cast<size_t>(i) * wn.cols;
            const double* wrow = W + static_cast<size_t>(i) * wn.cols;
            for (int j = 0; j < wn.cols; ++j) {
              gwrow[j] += gi * X[j];
              gx[j] += gi * wrow[j];
            }
          }
          break;
        }
        case Op::relu: {
          double* gx = gp(n.in0);
          const double* X = vp(n.in0);
          for (int i = 0; i < n.len; ++i)
            if (X[i] > 0.0) gx[i] += g[i];
          break;
        }
        case Op::concat: {
          int pos = 0;
          for (int k = 0; k < n.nargs; ++k) {
            const int p = arg_pool_[n.args + k];
            double* gx = gp(p);
            for (int i = 0; i < nodes_[p].len; ++i) gx[i] += g[pos + i];
            pos += nodes_[p].len;
          }
          break;
        }
        case Op::add_n: {
          for (int k = 0; k < n.nargs; ++k) {
            double* gx = gp(arg_pool_[n.args + k]);
            for (int i = 0; i < n.len; ++i) gx[i] += g[i];
          }
          break;
        }
        case Op::sub: {
          double* ga = gp(n.in0);
          double* gb = gp(n.in1);
          for (int i = 0; i < n.len; ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
          }
          break;
        }
        case Op::scale: {
          double* gx = gp(n.in0);
          for (int i = 0; i < n.len; ++i) gx[i] += n.factor * g[i];
          break;
        }
        case Op::vecmat: {
          const Node& wn = nodes_[n.in1];
          double* gx = gp(n.in0);
          double* gw = gp(n.in1);
          const double* X = vp(n.in0);
          const double* W = vp(n.in1);
          for (int r = 0; r < wn.rows; ++r) {
            const double* wrow = W + static_cast<size_t>(r) * wn.cols;
            double* gwrow = gw + static_cast<size_t>(r) * wn.cols;
            double acc = 0.0;
            for (int c = 0; c < wn.cols; ++c) {
              acc += g[c] * wrow[c];
              gwrow[c] += X[r] * g[c];
            }
            gx[r] += acc;
          }
          break;
        }
        case Op::cos_sim: {
          const double* A = vp(n.in0);
          const double* B = vp(n.in1);
          double* ga = gp(n.in0);
          double* gb = gp(n.in1);
          const int len = nodes_[n.in0].len;
          double dot = 0.0, na2 = 0.0, nb2 = 0.0;
          for (int i = 0; i < len; ++i) {
            dot += A[i] * B[i];
            na2 += A[i] * A[i];
            nb2 += B[i] * B[i];
          }
          const double na = std::sqrt(na2), nb = std::sqrt(nb2);
          const double d = na * nb + kCosEps;
          const double c = dot / d;
          const double g0 = g[0];
          for (int i = 0; i < len; ++i) {
            double da = B[i] / d;
            double db = A[i] / d;
            if (na > 0.0) da -= c * (nb / na) * A[i] / d;
            if (nb > 0.0) db -= c * (na / nb) * B[i] / d;
            ga[i] += g0 * da;
            gb[i] += g0 * db;
          }
          break;
        }
        case Op::softmax_ce: {
          const double* L = vp(n.in0);
          double* gl = gp(n.in0);
          const int len = nodes_[n.in0].len;
          const double lse = lse_of(n.in0);
          for (int i = 0; i < len; ++i) {
            const double p = std::exp(L[i] - lse);
            gl[i] += g[0] * (p - (i == n.target ? 1.0 : 0.0));
          }
          break;
        }
        case Op::softmax_ce_soft: {
          const double* L = vp(n.in0);
          const double* T = vp(n.in1);
          double* gl = gp(n.in0);
          double* gt = gp(n.in1);
          const int len = nodes_[n.in0].len;
          const double lse = lse_of(n.in0);
          double tsum = 0.0;
          for (int i = 0; i < len; ++i) tsum += T[i];
          for (int i = 0; i < len; ++i) {
            const double p = std::exp(L[i] - lse);
            gl[i] += g[0] * (tsum * p - T[i]);
            gt[i] += g[0] * (lse - L[i]);
          }
          break;
        }
        case Op::sq_dist: {
          const double* A = vp(n.in0);
          const double* B = vp(n.in1);
          double* ga = gp(n.in0);
          double* gb = gp(n.in1);
          for (int i = 0; i < nodes_[n.in0].len; ++i) {
            const double diff = 2.0 * g[0] * (A[i] - B[i]);
            ga[i] += diff;
            gb[i] -= diff;
          }
          break;
        }
        case Op::log_sum_exp: {
          const double lse = val_[n.off];
          for (int k = 0; k < n.nargs; ++k) {
            const int s = arg_pool_[n.args + k];
            grad_[nodes_[s].off] += g[0] * std::exp(val_[nodes_[s].off] - lse);
          }
          break;
        }
        case Op::sum_scaled: {
          for (int k = 0; k < n.nargs; ++k) {
            const int s = arg_pool_[n.args + k];
            grad_[nodes_[s].off] += g[0] * coef_pool_[n.target + k];
          }
          break;
        }
      }
    }
  }

  // Adds each parameter leaf's gradient into grads[tensor].
  void harvest(std::vector<std::vector<double>>& grads) const {
    for (const Node& n : nodes_) {
      if (n.op != Op::leaf || n.tensor < 0) continue;
      const double* g = grad_.data() + n.off;
      auto& dst = grads[n.tensor];
      for (int i = 0; i < n.len; ++i) dst[i] += g[i];
    }
  }

 private:
  static constexpr double kCosEps = 1e-12;

  int alloc(Op op, int len) {
    Node n;
    n.op = op;
    n.off = static_cast<int>(val_.size());
    n.len = len;
    val_.resize(val_.size() + len);
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size()) - 1;
  }

  int push_args(std::span<const int> ids) {
    const int start = static_cast<int>(arg_pool_.size());
    arg_pool_.insert(arg_pool_.end(), ids.begin(), ids.end());
    return start;
  }

  const double* vp(int id) const { return val_.data() + nodes_[id].off; }
  double* gp(int id) { return grad_.data() + nodes_[id].off; }

  double lse_of(int id) const {
    const double* L = vp(id);
    const int len = nodes_[id].len;
    double m = L[0];
    for (int i = 1; i < len; ++i) m = std::max(m, L[i]);
    double acc = 0.0;
    for (int i = 0; i < len; ++i) acc += std::exp(L[i] - m);
    return m + std::log(acc);
  }

  std::vector<Node> nodes_;
  std::vector<double> val_, grad_;
  std::vector<int> arg_pool_;
  std::vector<double> coef_pool_;
  std::vector<double> scratch_;
};

}  // namespace mmssl
