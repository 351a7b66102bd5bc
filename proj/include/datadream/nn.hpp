// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "datadream/adapters.hpp"
#include "datadream/autodiff.hpp"
#include "datadream/rng.hpp"
#include "datadream/types.hpp"

#include <string>
#include <utility>
#include <vector>

namespace datadream {

template <class S>
using NamedParams = std::vector<std::pair<std::string, ag::Variable<S>>>;

template <class S>
MatX<S> glorot_uniform(Rng& rng, Index rows, Index cols) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return rng.uniform_matrix<S>(rows, cols, -bound, bound);
}

template <class S>
struct DenseT {
  ag::Variable<S> w;  // out x in
  ag::Variable<S> b;  // 1 x out

  static DenseT init(Rng& rng, Index in, Index out, bool zero = false) {
    DenseT d;
    d.w = ag::param<S>(zero ? MatX<S>::Zero(out, in).eval() : glorot_uniform<S>(rng, out, in));
    d.b = ag::param<S>(MatX<S>::Zero(1, out));
    return d;
  }

  ag::Variable<S> forward(const ag::Variable<S>& x) const {
    return ag::add_rowvec(ag::linear(x, w), b);
  }

  void named(NamedParams<S>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

template <class S>
struct LayerNormT {
  ag::Variable<S> gain;
  ag::Variable<S> bias;

  static LayerNormT init(Index d) {
    LayerNormT ln;
    ln.gain = ag::param<S>(MatX<S>::Ones(1, d));
    ln.bias = ag::param<S>(MatX<S>::Zero(1, d));
    return ln;
  }

  ag::Variable<S> forward(const ag::Variable<S>& x) const { return ag::layer_norm(x, gain, bias); }

  void named(NamedParams<S>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
  }
};

// Single-head attention. Query side has width `dim`; keys/values read a
// context of width `ctx_dim` (equal to `dim` for self-attention).
template <class S>
struct AttentionLayerT {
  AdaptedLinearT<S> q, k, v, o;
  Index dim = 0;

  static AttentionLayerT init(Rng& rng, Index dim, Index ctx_dim) {
    AttentionLayerT a;
    a.dim = dim;
    a.q.w = ag::param<S>(glorot_uniform<S>(rng, dim, dim));
    a.k.w = ag::param<S>(glorot_uniform<S>(rng, dim, ctx_dim));
    a.v.w = ag::param<S>(glorot_uniform<S>(rng, dim, ctx_dim));
    a.o.w = ag::param<S>(glorot_uniform<S>(rng, dim, dim));
    return a;
  }

  // x: (B*n) x dim, ctx: (B*m) x ctx_dim
  ag::Variable<S> forward(const ag::Variable<S>& x, const ag::Variable<S>& ctx, Index batch) const {
    auto qv = q.forward(x);
    auto kv = k.forward(ctx);
    auto vv = v.forward(ctx);
    auto scores = ag::scale(ag::batched_scores(qv, kv, batch), 1.0 / std::sqrt(double(dim)));
    auto probs = ag::row_softmax(scores);
    return o.forward(ag::batched_attend(probs, vv, batch));
  }

  void collect_slots(std::vector<ProjectionSlot<S>>& out, Host host, int layer) {
    out.push_back({TargetId{host, layer, Proj::q}, &q});
    out.push_back({TargetId{host, layer, Proj::k}, &k});
    out.push_back({TargetId{host, layer, Proj::v}, &v});
    out.push_back({TargetId{host, layer, Proj::o}, &o});
  }

  void named(NamedParams<S>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".q", q.w);
    out.emplace_back(prefix + ".k", k.w);
    out.emplace_back(prefix + ".v", v.w);
    out.emplace_back(prefix + ".o", o.w);
  }
};

// Pre-norm transformer block: self-attention, optional cross-attention
// over an encoded prompt, and a SiLU MLP, all with residuals.
template <class S>
struct TransformerBlockT {
  LayerNormT<S> ln1, ln2, ln3;
  AttentionLayerT<S> self_attn;
  AttentionLayerT<S> cross_attn;  // valid iff has_cross
  bool has_cross = false;
  DenseT<S> mlp_in, mlp_out;

  static TransformerBlockT init(Rng& rng, Index dim, Index ctx_dim, bool cross, Index mlp_hidden) {
    TransformerBlockT b;
    b.ln1 = LayerNormT<S>::init(dim);
    b.self_attn = AttentionLayerT<S>::init(rng, dim, dim);
    b.has_cross = cross;
    if (cross) {
      b.ln2 = LayerNormT<S>::init(dim);
      b.cross_attn = AttentionLayerT<S>::init(rng, dim, ctx_dim);
    }
    b.ln3 = LayerNormT<S>::init(dim);
    b.mlp_in = DenseT<S>::init(rng, dim, mlp_hidden);
    b.mlp_out = DenseT<S>::init(rng, mlp_hidden, dim);
    return b;
  }

  ag::Variable<S> forward(const ag::Variable<S>& x, const ag::Variable<S>& ctx, Index batch) const {
    auto n1 = ln1.forward(x);
    auto h = ag::add(x, self_attn.forward(n1, n1, batch));
    if (has_cross) h = ag::add(h, cross_attn.forward(ln2.forward(h), ctx, batch));
    return ag::add(h, mlp_out.forward(ag::silu(mlp_in.forward(ln3.forward(h)))));
  }

  // self and cross attention count as distinct attention layers
  int collect_slots(std::vector<ProjectionSlot<S>>& out, Host host, int next_layer) {
    self_attn.collect_slots(out, host, next_layer++);
    if (has_cross) cross_attn.collect_slots(out, host, next_layer++);
    return next_layer;
  }

  void named(NamedParams<S>& out, const std::string& prefix) const {
    ln1.named(out, prefix + ".ln1");
    self_attn.named(out, prefix + ".self");
    if (has_cross) {
      ln2.named(out, prefix + ".ln2");
      cross_attn.named(out, prefix + ".cross");
    }
    ln3.named(out, prefix + ".ln3");
    mlp_in.named(out, prefix + ".mlp_in");
    mlp_out.named(out, prefix + ".mlp_out");
  }
};

template <class S>
std::vector<ag::Variable<S>> values_of(const NamedParams<S>& named) {
  std::vector<ag::Variable<S>> out;
  out.reserve(named.size());
  for (const auto& [n, v] : named) out.push_back(v);
  return out;
}

template <class S>
void set_requires_grad(const NamedParams<S>& named, bool b) {
  for (auto& [n, v] : named) const_cast<ag::Variable<S>&>(v).set_requires_grad(b);
}

}  // namespace datadream
