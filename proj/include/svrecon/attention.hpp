// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "svrecon/ops.hpp"
#include "svrecon/optim.hpp"

namespace svrecon {

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // [C x C]
  Tensor ln1_g, ln1_b;    // [C]
  Tensor ff1_w, ff1_b;    // [C x 2C], [2C]
  Tensor ff2_w, ff2_b;    // [2C x C], [C]
  Tensor ln2_g, ln2_b;    // [C]

  std::size_t channels() const { return wq.shape[0]; }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".wq", wq);
    f(prefix + ".wk", wk);
    f(prefix + ".wv", wv);
    f(prefix + ".wo", wo);
    f(prefix + ".ln1_g", ln1_g);
    f(prefix + ".ln1_b", ln1_b);
    f(prefix + ".ff1_w", ff1_w);
    f(prefix + ".ff1_b", ff1_b);
    f(prefix + ".ff2_w", ff2_w);
    f(prefix + ".ff2_b", ff2_b);
    f(prefix + ".ln2_g", ln2_g);
    f(prefix + ".ln2_b", ln2_b);
  }
};

template <class Rng>
AttentionParams make_attention(std::size_t c, Rng& rng) {
  AttentionParams p;
  const double fc = static_cast<double>(c);
  p.wq = detail::uniform_init({c, c}, fc, rng);
  p.wk = detail::uniform_init({c, c}, fc, rng);
  p.wv = detail::uniform_init({c, c}, fc, rng);
  p.wo = detail::uniform_init({c, c}, fc, rng);
  p.ln1_g = Tensor({c}, 1.0);
  p.ln1_b = Tensor({c}, 0.0);
  p.ff1_w = detail::uniform_init({c, 2 * c}, fc, rng);
  p.ff1_b = detail::uniform_init({2 * c}, fc, rng);
  p.ff2_w = detail::uniform_init({2 * c, c}, 2 * fc, rng);
  p.ff2_b = detail::uniform_init({c}, 2 * fc, rng);
  p.ln2_g = Tensor({c}, 1.0);
  p.ln2_b = Tensor({c}, 0.0);
  return p;
}

enum class AttentionKind { self, cross };

/// Multi-head scaled dot-product attention followed by residual + layer norm
/// and a relu feed-forward (hidden 2C) with residual + layer norm.
///
/// Tokens are grouped: group g attends from its `query_len` query rows to its
/// `key_len` context rows. `key_mask` (one byte per context row, non-zero =
/// masked) removes padded tokens before the softmax. For `self`, query and
/// context must be the same tokens.
inline Var attention_block(AttentionKind kind, Var query, Var context, std::size_t groups, std::size_t heads,
                           const std::vector<std::uint8_t>& key_mask, const AttentionParams& p, ParamBinder& bind) {
  const std::size_t c = p.channels();
  if (query.cols() != c || context.cols() != c) throw DimensionError("attention_block: channel mismatch");
  if (groups == 0 || query.rows() % groups != 0 || context.rows() % groups != 0)
    throw DimensionError("attention_block: token count not divisible by group count");
  if (kind == AttentionKind::self && query.id != context.id) throw InputError("attention_block: self attention takes one token set");
  ops::AttentionLayout lay{groups, heads, query.rows() / groups, context.rows() / groups, c};
  if (key_mask.size() != context.rows()) throw DimensionError("attention_block: mask size mismatch");

  Var q = ops::matmul(query, bind(p.wq));
  Var k = ops::matmul(context, bind(p.wk));
  Var v = ops::matmul(context, bind(p.wv));
  Var scores = ops::grouped_scores(q, k, lay, 1.0 / std::sqrt(static_cast<double>(lay.head_dim())));
  std::vector<std::uint8_t> mask(scores.numel());
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t a = 0; a < lay.query_len; ++a)
        for (std::size_t b = 0; b < lay.key_len; ++b)
          mask[lay.score_row(g, h, a) * lay.key_len + b] = key_mask[g * lay.key_len + b];
  Var weights = ops::masked_softmax_lastdim(scores, mask);
  Var mixed = ops::matmul(ops::grouped_mix(weights, v, lay), bind(p.wo));
  Var x = ops::layer_norm(ops::add(query, mixed), bind(p.ln1_g), bind(p.ln1_b));
  Var hidden = ops::relu(ops::linear(x, bind(p.ff1_w), bind(p.ff1_b)));
  Var ff = ops::linear(hidden, bind(p.ff2_w), bind(p.ff2_b));
  return ops::layer_norm(ops::add(x, ff), bind(p.ln2_g), bind(p.ln2_b));
}

}  // namespace svrecon
