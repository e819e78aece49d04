#pragma once

// Reverse-mode autodiff on dense float tensors. Define-by-run: every op
// returns a Var holding a graph node; backward() walks the tape once.
// Matrix products are delegated to Eigen via row-major maps.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "facegcd/tensor.hpp"

namespace facegcd::ag {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents
  std::vector<Tensor> saved;            // op-specific stash for backward

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : n_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(Tensor value) { return leaf(std::move(value), false); }

  bool defined() const { return n_ != nullptr; }
  const Tensor& val() const { return n_->value; }
  Tensor& val() { return n_->value; }
  const Tensor& grad() const { return n_->grad; }
  Tensor& ensure_grad() { return n_->ensure_grad(); }
  bool requires_grad() const { return n_->requires_grad; }
  const Shape& shape() const { return n_->value.shape(); }
  int dim(int i) const { return n_->value.dim(i); }
  NodePtr node() const { return n_; }

  void zero_grad() { n_->grad = Tensor(); }

 private:
  NodePtr n_;
};

inline Var make_op(Tensor value, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backprop, std::vector<Tensor> saved = {}) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->backprop = std::move(backprop);
    n->saved = std::move(saved);
  }
  return Var(n);
}

// Runs one reverse sweep from `root` (seeded with d(root)/d(root) = 1).
inline void backward(const Var& root) {
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  Tensor& g = root.node()->ensure_grad();
  for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
  Tensor out = a.val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.val()[i];
  return make_op(std::move(out), {a.node(), b.node()}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      Node* p = n.parents[k].get();
      if (!p->requires_grad) continue;
      Tensor& pg = p->ensure_grad();
      for (std::int64_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError("sub: shape mismatch");
  Tensor out = a.val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.val()[i];
  return make_op(std::move(out), {a.node(), b.node()}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& pg = n.parents[0]->ensure_grad();
      for (std::int64_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& pg = n.parents[1]->ensure_grad();
      for (std::int64_t i = 0; i < pg.numel(); ++i) pg[i] -= n.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
  Tensor out = a.val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.val()[i];
  return make_op(std::move(out), {a.node(), b.node()}, [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor& pg = n.parents[0]->ensure_grad();
      for (std::int64_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i] * bv[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& pg = n.parents[1]->ensure_grad();
      for (std::int64_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i] * av[i];
    }
  });
}

inline Var scale(const Var& a, float c) {
  Tensor out = a.val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return make_op(std::move(out), {a.node()}, [c](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < pg.numel(); ++i) pg[i] += c * n.grad[i];
  });
}

inline Var add_scalar(const Var& a, float c) {
  Tensor out = a.val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += c;
  return make_op(std::move(out), {a.node()}, [](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i];
  });
}

inline Var relu(const Var& a) {
  Tensor out = a.val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0f, out[i]);
  return make_op(std::move(out), {a.node()}, [](Node& n) {
    const Tensor& x = n.parents[0]->value;
    Tensor& pg = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < pg.numel(); ++i)
      if (x[i] > 0.0f) pg[i] += n.grad[i];
  });
}

inline Var gelu(const Var& a) {
  Tensor out = a.val();
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    float x = out[i];
    out[i] = 0.5f * x * (1.0f + std::erf(x * 0.70710678f));
  }
  return make_op(std::move(out), {a.node()}, [](Node& n) {
    const Tensor& x = n.parents[0]->value;
    Tensor& pg = n.parents[0]->ensure_grad();
    constexpr float inv_sqrt2pi = 0.3989422804f;
    for (std::int64_t i = 0; i < pg.numel(); ++i) {
      float v = x[i];
      float cdf = 0.5f * (1.0f + std::erf(v * 0.70710678f));
      float pdf = inv_sqrt2pi * std::exp(-0.5f * v * v);
      pg[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

inline Var reshape(const Var& a, Shape s) {
  Tensor out = a.val().reshaped(std::move(s));
  return make_op(std::move(out), {a.node()}, [](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i];
  });
}

// (A,B,C,D) -> (A,C,B,D); swapping axes 1 and 2 is its own inverse.
inline Var permute_0213(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("permute_0213 expects rank 4");
  const int A = s[0], B = s[1], C = s[2], D = s[3];
  auto run = [A, B, C, D](const Tensor& src, Tensor& dst, bool accumulate) {
    for (int a = 0; a < A; ++a)
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const float* sp = src.data() + ((static_cast<std::int64_t>(a) * B + b) * C + c) * D;
          float* dp = dst.data() + ((static_cast<std::int64_t>(a) * C + c) * B + b) * D;
          if (accumulate)
            for (int d = 0; d < D; ++d) dp[d] += sp[d];
          else
            for (int d = 0; d < D; ++d) dp[d] = sp[d];
        }
  };
  Tensor out({A, C, B, D});
  run(x.val(), out, false);
  return make_op(std::move(out), {x.node()}, [A, B, C, D, run](Node& n) {
    // swap roles: grad has shape (A,C,B,D), parent (A,B,C,D)
    Tensor& pg = n.parents[0]->ensure_grad();
    for (int a = 0; a < A; ++a)
      for (int c = 0; c < C; ++c)
        for (int b = 0; b < B; ++b) {
          const float* sp = n.grad.data() + ((static_cast<std::int64_t>(a) * C + c) * B + b) * D;
          float* dp = pg.data() + ((static_cast<std::int64_t>(a) * B + b) * C + c) * D;
          for (int d = 0; d < D; ++d) dp[d] += sp[d];
        }
  });
}

// Concatenate along axis 2 of rank-4 tensors: (B,h,m,dh) ++ (B,h,T,dh).
inline Var concat_seq(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[1] != sb[1] || sa[3] != sb[3])
    throw ShapeError("concat_seq: incompatible shapes");
  const int B = sa[0], H = sa[1], M = sa[2], T = sb[2], D = sa[3];
  Tensor out({B, H, M + T, D});
  for (int bh = 0; bh < B * H; ++bh) {
    std::copy_n(a.val().data() + static_cast<std::int64_t>(bh) * M * D, M * D,
                out.data() + static_cast<std::int64_t>(bh) * (M + T) * D);
    std::copy_n(b.val().data() + static_cast<std::int64_t>(bh) * T * D, T * D,
                out.data() + static_cast<std::int64_t>(bh) * (M + T) * D + M * D);
  }
  return make_op(std::move(out), {a.node(), b.node()}, [B, H, M, T, D](Node& n) {
    for (int k = 0; k < 2; ++k) {
      Node* p = n.parents[k].get();
      if (!p->requires_grad) continue;
      Tensor& pg = p->ensure_grad();
      const int len = (k == 0 ? M : T) * D;
      const int off = k == 0 ? 0 : M * D;
      for (int bh = 0; bh < B * H; ++bh) {
        const float* gp = n.grad.data() + static_cast<std::int64_t>(bh) * (M + T) * D + off;
        float* dp = pg.data() + static_cast<std::int64_t>(bh) * len;
        for (int i = 0; i < len; ++i) dp[i] += gp[i];
      }
    }
  });
}

// x (B,T,D) -> row t: (B,D)
inline Var select_token(const Var& x, int t) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("select_token expects rank 3");
  const int B = s[0], T = s[1], D = s[2];
  Tensor out({B, D});
  for (int b = 0; b < B; ++b)
    std::copy_n(x.val().data() + (static_cast<std::int64_t>(b) * T + t) * D, D,
                out.data() + static_cast<std::int64_t>(b) * D);
  return make_op(std::move(out), {x.node()}, [B, T, D, t](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    for (int b = 0; b < B; ++b) {
      float* dp = pg.data() + (static_cast<std::int64_t>(b) * T + t) * D;
      const float* gp = n.grad.data() + static_cast<std::int64_t>(b) * D;
      for (int d = 0; d < D; ++d) dp[d] += gp[d];
    }
  });
}

// mean over axis 1 of (A,T,C) -> (A,C)
inline Var mean_axis1(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("mean_axis1 expects rank 3");
  const int A = s[0], T = s[1], C = s[2];
  Tensor out({A, C});
  for (int a = 0; a < A; ++a)
    for (int t = 0; t < T; ++t) {
      const float* sp = x.val().data() + (static_cast<std::int64_t>(a) * T + t) * C;
      float* dp = out.data() + static_cast<std::int64_t>(a) * C;
      for (int c = 0; c < C; ++c) dp[c] += sp[c];
    }
  const float inv = 1.0f / static_cast<float>(T);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= inv;
  return make_op(std::move(out), {x.node()}, [A, T, C, inv](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    for (int a = 0; a < A; ++a)
      for (int t = 0; t < T; ++t) {
        float* dp = pg.data() + (static_cast<std::int64_t>(a) * T + t) * C;
        const float* gp = n.grad.data() + static_cast<std::int64_t>(a) * C;
        for (int c = 0; c < C; ++c) dp[c] += gp[c] * inv;
      }
  });
}

// mean over the last axis: (..., D) -> (...)
inline Var mean_lastdim(const Var& x) {
  const Shape& s = x.shape();
  const int D = s.back();
  Shape os(s.begin(), s.end() - 1);
  const std::int64_t rows = shape_numel(os);
  Tensor out(os);
  const float inv = 1.0f / static_cast<float>(D);
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* sp = x.val().data() + r * D;
    float acc = 0.0f;
    for (int d = 0; d < D; ++d) acc += sp[d];
    out[r] = acc * inv;
  }
  return make_op(std::move(out), {x.node()}, [rows, D, inv](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      float g = n.grad[r] * inv;
      float* dp = pg.data() + r * D;
      for (int d = 0; d < D; ++d) dp[d] += g;
    }
  });
}

inline Var mean_all(const Var& x) {
  Tensor out({1});
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.val().numel(); ++i) acc += x.val()[i];
  const std::int64_t n_el = x.val().numel();
  out[0] = static_cast<float>(acc / static_cast<double>(n_el));
  return make_op(std::move(out), {x.node()}, [n_el](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    const float g = n.grad[0] / static_cast<float>(n_el);
    for (std::int64_t i = 0; i < pg.numel(); ++i) pg[i] += g;
  });
}

// Prepend a batch axis and repeat: x (s...) -> (B, s...). Gradient sums
// over the repeats.
inline Var tile_rows(const Var& x, int B) {
  const std::int64_t n_el = x.val().numel();
  Shape os;
  os.push_back(B);
  for (int d : x.shape()) os.push_back(d);
  Tensor out(os);
  for (int b = 0; b < B; ++b)
    std::copy_n(x.val().data(), n_el, out.data() + static_cast<std::int64_t>(b) * n_el);
  return make_op(std::move(out), {x.node()}, [B, n_el](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    for (int b = 0; b < B; ++b) {
      const float* gp = n.grad.data() + static_cast<std::int64_t>(b) * n_el;
      for (std::int64_t i = 0; i < n_el; ++i) pg[i] += gp[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// x (..., in) @ W (in, out) + b (out). Pass an undefined Var to skip the bias.
inline Var linear(const Var& x, const Var& W, const Var& b = Var()) {
  const Shape& xs = x.shape();
  const int in = xs.back();
  if (W.shape().size() != 2 || W.dim(0) != in) throw ShapeError("linear: W mismatch");
  const int out_dim = W.dim(1);
  const std::int64_t rows = x.val().numel() / in;
  Shape os(xs.begin(), xs.end() - 1);
  os.push_back(out_dim);
  Tensor out(os);
  {
    CMapM xm(x.val().data(), rows, in);
    CMapM wm(W.val().data(), in, out_dim);
    MapM om(out.data(), rows, out_dim);
    om.noalias() = xm * wm;
    if (b.defined()) {
      CMapM bm(b.val().data(), 1, out_dim);
      om.rowwise() += bm.row(0);
    }
  }
  std::vector<NodePtr> parents{x.node(), W.node()};
  if (b.defined()) parents.push_back(b.node());
  return make_op(std::move(out), std::move(parents), [rows, in, out_dim](Node& n) {
    CMapM gm(n.grad.data(), rows, out_dim);
    Node* xp = n.parents[0].get();
    Node* wp = n.parents[1].get();
    if (xp->requires_grad) {
      MapM dx(xp->ensure_grad().data(), rows, in);
      CMapM wm(wp->value.data(), in, out_dim);
      dx.noalias() += gm * wm.transpose();
    }
    if (wp->requires_grad) {
      MapM dw(wp->ensure_grad().data(), in, out_dim);
      CMapM xm(xp->value.data(), rows, in);
      dw.noalias() += xm.transpose() * gm;
    }
    if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
      MapM db(n.parents[2]->ensure_grad().data(), 1, out_dim);
      db.row(0) += gm.colwise().sum();
    }
  });
}

// a (N,K) @ b (M,K)^T -> (N,M)
inline Var matmul_nt(const Var& a, const Var& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt: shape mismatch");
  const int N = a.dim(0), K = a.dim(1), M = b.dim(0);
  Tensor out({N, M});
  {
    CMapM am(a.val().data(), N, K);
    CMapM bm(b.val().data(), M, K);
    MapM om(out.data(), N, M);
    om.noalias() = am * bm.transpose();
  }
  return make_op(std::move(out), {a.node(), b.node()}, [N, K, M](Node& n) {
    CMapM gm(n.grad.data(), N, M);
    Node* ap = n.parents[0].get();
    Node* bp = n.parents[1].get();
    if (ap->requires_grad) {
      MapM da(ap->ensure_grad().data(), N, K);
      CMapM bm(bp->value.data(), M, K);
      da.noalias() += gm * bm;
    }
    if (bp->requires_grad) {
      MapM db(bp->ensure_grad().data(), M, K);
      CMapM am(ap->value.data(), N, K);
      db.noalias() += gm.transpose() * am;
    }
  });
}

// scale * Q K^T per (batch, head): Q (B,h,T,dh), K (B,h,S,dh) -> (B,h,T,S)
inline Var attn_scores(const Var& q, const Var& k, float sc) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  if (qs.size() != 4 || ks.size() != 4 || qs[0] != ks[0] || qs[1] != ks[1] || qs[3] != ks[3])
    throw ShapeError("attn_scores: shape mismatch");
  const int B = qs[0], H = qs[1], T = qs[2], D = qs[3], S = ks[2];
  Tensor out({B, H, T, S});
  for (int bh = 0; bh < B * H; ++bh) {
    CMapM qm(q.val().data() + static_cast<std::int64_t>(bh) * T * D, T, D);
    CMapM km(k.val().data() + static_cast<std::int64_t>(bh) * S * D, S, D);
    MapM om(out.data() + static_cast<std::int64_t>(bh) * T * S, T, S);
    om.noalias() = sc * (qm * km.transpose());
  }
  return make_op(std::move(out), {q.node(), k.node()}, [B, H, T, D, S, sc](Node& n) {
    Node* qp = n.parents[0].get();
    Node* kp = n.parents[1].get();
    for (int bh = 0; bh < B * H; ++bh) {
      CMapM gm(n.grad.data() + static_cast<std::int64_t>(bh) * T * S, T, S);
      if (qp->requires_grad) {
        MapM dq(qp->ensure_grad().data() + static_cast<std::int64_t>(bh) * T * D, T, D);
        CMapM km(kp->value.data() + static_cast<std::int64_t>(bh) * S * D, S, D);
        dq.noalias() += sc * (gm * km);
      }
      if (kp->requires_grad) {
        MapM dk(kp->ensure_grad().data() + static_cast<std::int64_t>(bh) * S * D, S, D);
        CMapM qm(qp->value.data() + static_cast<std::int64_t>(bh) * T * D, T, D);
        dk.noalias() += sc * (gm.transpose() * qm);
      }
    }
  });
}

// A (B,h,T,S) @ V (B,h,S,dh) -> (B,h,T,dh)
inline Var attn_apply(const Var& a, const Var& v) {
  const Shape& as = a.shape();
  const Shape& vs = v.shape();
  if (as.size() != 4 || vs.size() != 4 || as[0] != vs[0] || as[1] != vs[1] || as[3] != vs[2])
    throw ShapeError("attn_apply: shape mismatch");
  const int B = as[0], H = as[1], T = as[2], S = as[3], D = vs[3];
  Tensor out({B, H, T, D});
  for (int bh = 0; bh < B * H; ++bh) {
    CMapM am(a.val().data() + static_cast<std::int64_t>(bh) * T * S, T, S);
    CMapM vm(v.val().data() + static_cast<std::int64_t>(bh) * S * D, S, D);
    MapM om(out.data() + static_cast<std::int64_t>(bh) * T * D, T, D);
    om.noalias() = am * vm;
  }
  return make_op(std::move(out), {a.node(), v.node()}, [B, H, T, S, D](Node& n) {
    Node* ap = n.parents[0].get();
    Node* vp = n.parents[1].get();
    for (int bh = 0; bh < B * H; ++bh) {
      CMapM gm(n.grad.data() + static_cast<std::int64_t>(bh) * T * D, T, D);
      if (ap->requires_grad) {
        MapM da(ap->ensure_grad().data() + static_cast<std::int64_t>(bh) * T * S, T, S);
        CMapM vm(vp->value.data() + static_cast<std::int64_t>(bh) * S * D, S, D);
        da.noalias() += gm * vm.transpose();
      }
      if (vp->requires_grad) {
        MapM dv(vp->ensure_grad().data() + static_cast<std::int64_t>(bh) * S * D, S, D);
        CMapM am(ap->value.data() + static_cast<std::int64_t>(bh) * T * S, T, S);
        dv.noalias() += am.transpose() * gm;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and softmax
// ---------------------------------------------------------------------------

inline Var softmax_lastdim(const Var& x) {
  const Shape& s = x.shape();
  const int D = s.back();
  const std::int64_t rows = x.val().numel() / D;
  Tensor out = x.val();
  for (std::int64_t r = 0; r < rows; ++r) {
    float* p = out.data() + r * D;
    float mx = p[0];
    for (int d = 1; d < D; ++d) mx = std::max(mx, p[d]);
    float sum = 0.0f;
    for (int d = 0; d < D; ++d) {
      p[d] = std::exp(p[d] - mx);
      sum += p[d];
    }
    const float inv = 1.0f / sum;
    for (int d = 0; d < D; ++d) p[d] *= inv;
  }
  return make_op(std::move(out), {x.node()}, [rows, D](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const float* y = n.value.data() + r * D;
      const float* g = n.grad.data() + r * D;
      float dot = 0.0f;
      for (int d = 0; d < D; ++d) dot += y[d] * g[d];
      float* dp = pg.data() + r * D;
      for (int d = 0; d < D; ++d) dp[d] += y[d] * (g[d] - dot);
    }
  });
}

inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f) {
  const Shape& s = x.shape();
  const int D = s.back();
  if (gamma.val().numel() != D || beta.val().numel() != D)
    throw ShapeError("layer_norm: parameter size mismatch");
  const std::int64_t rows = x.val().numel() / D;
  Tensor out(s);
  Tensor inv_std({static_cast<int>(rows)});
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* p = x.val().data() + r * D;
    float mean = 0.0f;
    for (int d = 0; d < D; ++d) mean += p[d];
    mean /= static_cast<float>(D);
    float var = 0.0f;
    for (int d = 0; d < D; ++d) {
      float c = p[d] - mean;
      var += c * c;
    }
    var /= static_cast<float>(D);
    const float inv = 1.0f / std::sqrt(var + eps);
    inv_std[r] = inv;
    float* o = out.data() + r * D;
    for (int d = 0; d < D; ++d) o[d] = (p[d] - mean) * inv * gamma.val()[d] + beta.val()[d];
  }
  return make_op(
      std::move(out), {x.node(), gamma.node(), beta.node()},
      [rows, D](Node& n) {
        const Tensor& inv_std = n.saved[0];
        const Tensor& xv = n.parents[0]->value;
        const Tensor& gv = n.parents[1]->value;
        std::vector<float> xhat(static_cast<size_t>(D));
        for (std::int64_t r = 0; r < rows; ++r) {
          const float* p = xv.data() + r * D;
          const float* g = n.grad.data() + r * D;
          float mean = 0.0f;
          for (int d = 0; d < D; ++d) mean += p[d];
          mean /= static_cast<float>(D);
          const float inv = inv_std[r];
          float gh_mean = 0.0f, ghx_mean = 0.0f;
          for (int d = 0; d < D; ++d) {
            xhat[static_cast<size_t>(d)] = (p[d] - mean) * inv;
            float gh = g[d] * gv[d];
            gh_mean += gh;
            ghx_mean += gh * xhat[static_cast<size_t>(d)];
          }
          gh_mean /= static_cast<float>(D);
          ghx_mean /= static_cast<float>(D);
          if (n.parents[0]->requires_grad) {
            float* dx = n.parents[0]->ensure_grad().data() + r * D;
            for (int d = 0; d < D; ++d)
              dx[d] += inv * (g[d] * gv[d] - gh_mean - xhat[static_cast<size_t>(d)] * ghx_mean);
          }
          if (n.parents[1]->requires_grad) {
            float* dg = n.parents[1]->ensure_grad().data();
            for (int d = 0; d < D; ++d) dg[d] += g[d] * xhat[static_cast<size_t>(d)];
          }
          if (n.parents[2]->requires_grad) {
            float* db = n.parents[2]->ensure_grad().data();
            for (int d = 0; d < D; ++d) db[d] += g[d];
          }
        }
      },
      {std::move(inv_std)});
}

// Row-wise L2 normalization of (N,D); rows come out unit length.
inline Var l2_normalize_rows(const Var& x, float eps = 1e-12f) {
  const Shape& s = x.shape();
  const int D = s.back();
  const std::int64_t rows = x.val().numel() / D;
  Tensor out(s);
  Tensor inv_norm({static_cast<int>(rows)});
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* p = x.val().data() + r * D;
    float sq = eps;
    for (int d = 0; d < D; ++d) sq += p[d] * p[d];
    const float inv = 1.0f / std::sqrt(sq);
    inv_norm[r] = inv;
    float* o = out.data() + r * D;
    for (int d = 0; d < D; ++d) o[d] = p[d] * inv;
  }
  return make_op(
      std::move(out), {x.node()},
      [rows, D](Node& n) {
        const Tensor& inv_norm = n.saved[0];
        const Tensor& xv = n.parents[0]->value;
        Tensor& pg = n.parents[0]->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          const float* p = xv.data() + r * D;
          const float* g = n.grad.data() + r * D;
          const float inv = inv_norm[r];
          float dot = 0.0f;
          for (int d = 0; d < D; ++d) dot += g[d] * p[d];
          dot *= inv * inv;
          float* dp = pg.data() + r * D;
          for (int d = 0; d < D; ++d) dp[d] += inv * (g[d] - p[d] * dot);
        }
      },
      {std::move(inv_norm)});
}

// ---------------------------------------------------------------------------
// Contrastive-loss building blocks
// ---------------------------------------------------------------------------

// Per row i: log sum over {m : mask[i,m] != 0} of exp(X[i,m]). Mask is fixed
// (not differentiated). Every row must have at least one unmasked entry.
inline Var row_logsumexp_masked(const Var& x, const std::vector<std::uint8_t>& mask) {
  const Shape& s = x.shape();
  if (s.size() != 2) throw ShapeError("row_logsumexp_masked expects rank 2");
  const int N = s[0], M = s[1];
  if (static_cast<std::int64_t>(mask.size()) != static_cast<std::int64_t>(N) * M)
    throw ShapeError("row_logsumexp_masked: mask size mismatch");
  Tensor out({N});
  for (int r = 0; r < N; ++r) {
    const float* p = x.val().data() + static_cast<std::int64_t>(r) * M;
    const std::uint8_t* mk = mask.data() + static_cast<std::int64_t>(r) * M;
    float mx = -std::numeric_limits<float>::infinity();
    for (int m = 0; m < M; ++m)
      if (mk[m] && p[m] > mx) mx = p[m];
    double sum = 0.0;
    for (int m = 0; m < M; ++m)
      if (mk[m]) sum += std::exp(p[m] - mx);
    out[r] = mx + static_cast<float>(std::log(sum));
  }
  return make_op(std::move(out), {x.node()}, [N, M, mask](Node& n) {
    const Tensor& xv = n.parents[0]->value;
    Tensor& pg = n.parents[0]->ensure_grad();
    for (int r = 0; r < N; ++r) {
      const float* p = xv.data() + static_cast<std::int64_t>(r) * M;
      const std::uint8_t* mk = mask.data() + static_cast<std::int64_t>(r) * M;
      float* dp = pg.data() + static_cast<std::int64_t>(r) * M;
      const float lse = n.value[r];
      const float g = n.grad[r];
      for (int m = 0; m < M; ++m)
        if (mk[m]) dp[m] += g * std::exp(p[m] - lse);
    }
  });
}

// out[i] = X[i, idx[i]]
inline Var select_cols(const Var& x, const std::vector<int>& idx) {
  const Shape& s = x.shape();
  if (s.size() != 2) throw ShapeError("select_cols expects rank 2");
  const int N = s[0], M = s[1];
  Tensor out({N});
  for (int r = 0; r < N; ++r) out[r] = x.val()[static_cast<std::int64_t>(r) * M + idx[r]];
  return make_op(std::move(out), {x.node()}, [N, M, idx](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    for (int r = 0; r < N; ++r) pg[static_cast<std::int64_t>(r) * M + idx[r]] += n.grad[r];
  });
}

// out[i] = sum_m X[i,m] * w[i,m], with w fixed.
inline Var weighted_row_sum(const Var& x, const std::vector<float>& w) {
  const Shape& s = x.shape();
  if (s.size() != 2) throw ShapeError("weighted_row_sum expects rank 2");
  const int N = s[0], M = s[1];
  if (static_cast<std::int64_t>(w.size()) != static_cast<std::int64_t>(N) * M)
    throw ShapeError("weighted_row_sum: weight size mismatch");
  Tensor out({N});
  for (int r = 0; r < N; ++r) {
    const float* p = x.val().data() + static_cast<std::int64_t>(r) * M;
    const float* wp = w.data() + static_cast<std::int64_t>(r) * M;
    double acc = 0.0;
    for (int m = 0; m < M; ++m) acc += static_cast<double>(p[m]) * wp[m];
    out[r] = static_cast<float>(acc);
  }
  return make_op(std::move(out), {x.node()}, [N, M, w](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    for (int r = 0; r < N; ++r) {
      const float* wp = w.data() + static_cast<std::int64_t>(r) * M;
      float* dp = pg.data() + static_cast<std::int64_t>(r) * M;
      for (int m = 0; m < M; ++m) dp[m] += n.grad[r] * wp[m];
    }
  });
}

// Weighted mean of a vector (fixed weights); used to average per-anchor losses.
inline Var weighted_mean(const Var& x, const std::vector<float>& w) {
  const std::int64_t n_el = x.val().numel();
  if (static_cast<std::int64_t>(w.size()) != n_el) throw ShapeError("weighted_mean: size mismatch");
  Tensor out({1});
  double acc = 0.0;
  for (std::int64_t i = 0; i < n_el; ++i) acc += static_cast<double>(x.val()[i]) * w[i];
  out[0] = static_cast<float>(acc);
  return make_op(std::move(out), {x.node()}, [w, n_el](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < n_el; ++i) pg[i] += n.grad[0] * w[i];
  });
}

// ---------------------------------------------------------------------------
// Prefix-generator ops: per-instance generated weights applied to a shared
// initial prefix. P (m,h,dh) is broadcast over the batch.
// ---------------------------------------------------------------------------

// out[i,m,h,b] = sum_dh W[i,b,dh] * P[m,h,dh] + bias[i,b]
inline Var prefix_down(const Var& p, const Var& w, const Var& bias) {
  const Shape& ps = p.shape();
  const Shape& ws = w.shape();
  if (ps.size() != 3 || ws.size() != 3 || ps[2] != ws[2])
    throw ShapeError("prefix_down: shape mismatch");
  const int M = ps[0], H = ps[1], DH = ps[2], B = ws[0], BT = ws[1];
  Tensor out({B, M, H, BT});
  CMapM pm(p.val().data(), M * H, DH);
  for (int i = 0; i < B; ++i) {
    CMapM wm(w.val().data() + static_cast<std::int64_t>(i) * BT * DH, BT, DH);
    MapM om(out.data() + static_cast<std::int64_t>(i) * M * H * BT, M * H, BT);
    om.noalias() = pm * wm.transpose();
    CMapM bm(bias.val().data() + static_cast<std::int64_t>(i) * BT, 1, BT);
    om.rowwise() += bm.row(0);
  }
  return make_op(std::move(out), {p.node(), w.node(), bias.node()}, [M, H, DH, B, BT](Node& n) {
    Node* pp = n.parents[0].get();
    Node* wp = n.parents[1].get();
    Node* bp = n.parents[2].get();
    for (int i = 0; i < B; ++i) {
      CMapM gm(n.grad.data() + static_cast<std::int64_t>(i) * M * H * BT, M * H, BT);
      if (wp->requires_grad) {
        MapM dw(wp->ensure_grad().data() + static_cast<std::int64_t>(i) * BT * DH, BT, DH);
        CMapM pm(pp->value.data(), M * H, DH);
        dw.noalias() += gm.transpose() * pm;
      }
      if (pp->requires_grad) {
        MapM dp(pp->ensure_grad().data(), M * H, DH);
        CMapM wm(wp->value.data() + static_cast<std::int64_t>(i) * BT * DH, BT, DH);
        dp.noalias() += gm * wm;
      }
      if (bp->requires_grad) {
        MapM db(bp->ensure_grad().data() + static_cast<std::int64_t>(i) * BT, 1, BT);
        db.row(0) += gm.colwise().sum();
      }
    }
  });
}

// out[i,m,h,dh] = sum_b U[i,dh,b] * X[i,m,h,b] + bias[i,dh]
inline Var prefix_up(const Var& u, const Var& x, const Var& bias) {
  const Shape& us = u.shape();
  const Shape& xs = x.shape();
  if (us.size() != 3 || xs.size() != 4 || us[2] != xs[3] || us[0] != xs[0])
    throw ShapeError("prefix_up: shape mismatch");
  const int B = us[0], DH = us[1], BT = us[2], M = xs[1], H = xs[2];
  Tensor out({B, M, H, DH});
  for (int i = 0; i < B; ++i) {
    CMapM xm(x.val().data() + static_cast<std::int64_t>(i) * M * H * BT, M * H, BT);
    CMapM um(u.val().data() + static_cast<std::int64_t>(i) * DH * BT, DH, BT);
    MapM om(out.data() + static_cast<std::int64_t>(i) * M * H * DH, M * H, DH);
    om.noalias() = xm * um.transpose();
    CMapM bm(bias.val().data() + static_cast<std::int64_t>(i) * DH, 1, DH);
    om.rowwise() += bm.row(0);
  }
  return make_op(std::move(out), {u.node(), x.node(), bias.node()}, [B, DH, BT, M, H](Node& n) {
    Node* up = n.parents[0].get();
    Node* xp = n.parents[1].get();
    Node* bp = n.parents[2].get();
    for (int i = 0; i < B; ++i) {
      CMapM gm(n.grad.data() + static_cast<std::int64_t>(i) * M * H * DH, M * H, DH);
      if (up->requires_grad) {
        MapM du(up->ensure_grad().data() + static_cast<std::int64_t>(i) * DH * BT, DH, BT);
        CMapM xm(xp->value.data() + static_cast<std::int64_t>(i) * M * H * BT, M * H, BT);
        du.noalias() += gm.transpose() * xm;
      }
      if (xp->requires_grad) {
        MapM dx(xp->ensure_grad().data() + static_cast<std::int64_t>(i) * M * H * BT, M * H, BT);
        CMapM um(up->value.data() + static_cast<std::int64_t>(i) * DH * BT, DH, BT);
        dx.noalias() += gm * um;
      }
      if (bp->requires_grad) {
        MapM db(bp->ensure_grad().data() + static_cast<std::int64_t>(i) * DH, 1, DH);
        db.row(0) += gm.colwise().sum();
      }
    }
  });
}

// Gathers pool entries per instance: pool (n,me,h,dh), idx (B,k) fixed ->
// (B, k*me, h, dh). Gradients scatter-add back into the selected entries.
inline Var pool_gather(const Var& pool, const std::vector<std::vector<int>>& idx) {
  const Shape& s = pool.shape();
  if (s.size() != 4) throw ShapeError("pool_gather expects rank 4 pool");
  const int ME = s[1], H = s[2], DH = s[3];
  const int B = static_cast<int>(idx.size());
  const int K = static_cast<int>(idx[0].size());
  const std::int64_t entry = static_cast<std::int64_t>(ME) * H * DH;
  Tensor out({B, K * ME, H, DH});
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < K; ++k)
      std::copy_n(pool.val().data() + idx[static_cast<size_t>(b)][static_cast<size_t>(k)] * entry,
                  entry, out.data() + (static_cast<std::int64_t>(b) * K + k) * entry);
  return make_op(std::move(out), {pool.node()}, [idx, entry](Node& n) {
    Tensor& pg = n.parents[0]->ensure_grad();
    const int B = static_cast<int>(idx.size());
    const int K = static_cast<int>(idx[0].size());
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < K; ++k) {
        const float* gp = n.grad.data() + (static_cast<std::int64_t>(b) * K + k) * entry;
        float* dp = pg.data() + idx[static_cast<size_t>(b)][static_cast<size_t>(k)] * entry;
        for (std::int64_t i = 0; i < entry; ++i) dp[i] += gp[i];
      }
  });
}

}  // namespace facegcd::ag
