#pragma once

#include <vector>

#include "dualvd/autodiff.hpp"
#include "dualvd/model_config.hpp"
#include "dualvd/params.hpp"

namespace dualvd {

inline void declare_semantic_attention_params(std::vector<ParamSpec>& specs, const ModelConfig& c) {
  specs.push_back({"semantic.query.W", {c.d_att, c.d_hid}});
  specs.push_back({"semantic.query.b", {c.d_att}, InitKind::Zero});
  specs.push_back({"semantic.key.W", {c.d_att, c.d_hid}});
  specs.push_back({"semantic.key.b", {c.d_att}, InitKind::Zero});
}

inline void declare_caption_fusion_params(std::vector<ParamSpec>& specs, const ModelConfig& c) {
  const std::size_t two_h = 2 * c.d_hid;
  specs.push_back({"semantic.caption_gate.W", {two_h, two_h}});
  specs.push_back({"semantic.caption_gate.b", {two_h}, InitKind::Zero});
  specs.push_back({"semantic.text_proj.W", {c.d_hid, two_h}});
  specs.push_back({"semantic.text_proj.b", {c.d_hid}, InitKind::Zero});
}

namespace detail {

// Bilinear compatibility between the query and each row of `items`; returns
// softmax weights as a column.
inline Var caption_weights(Params& p, Var gated_question, Var items) {
  Var query = linear(gated_question, p("semantic.query.W"), p("semantic.query.b"));
  Var keys = linear(items, p("semantic.key.W"), p("semantic.key.b"));
  Var logits = matmul_nt(query, keys);  // 1 × items
  return transpose(softmax_rows(logits));
}

}  // namespace detail

struct SemanticAttention {
  Var delta;   // (k+1) × 1; row 0 is the global caption
  Var global;  // 1 × d_hid, δ_1 · C̃
  Var local;   // 1 × d_hid, Σ δ_{i+1} · z̃_i
};

// One softmax over the global caption and the k local captions together.
inline SemanticAttention semantic_attention(Params& p, Var gated_question, Var global_caption,
                                            Var local_captions) {
  if (local_captions.rows() == 0 || local_captions.value().size() == 0)
    throw ConfigError("semantic_attention: at least one local caption is required");
  if (global_caption.rows() != 1 || global_caption.cols() != local_captions.cols())
    throw DimensionError("semantic_attention: caption encodings disagree in width");
  const std::size_t k = local_captions.rows();
  Var items = concat_rows({global_caption, local_captions});
  Var delta = detail::caption_weights(p, gated_question, items);
  Var weighted = mul_col(items, delta);
  return {delta, slice_rows(weighted, 0, 1), sum_rows(slice_rows(weighted, 1, k + 1))};
}

// Attention restricted to the local captions (used by the local-caption ablation).
inline Var local_caption_attention(Params& p, Var gated_question, Var local_captions) {
  Var delta = detail::caption_weights(p, gated_question, local_captions);
  return matmul_tn(delta, local_captions);
}

struct GlobalLocalFusion {
  Var text;  // 1 × d_hid
  Var gate;  // 1 × 2·d_hid
};

inline GlobalLocalFusion global_local_fusion(Params& p, Var global, Var local) {
  if (global.value().size() != local.value().size())
    throw DimensionError("global_local_fusion: global and local encodings differ in width");
  Var both = concat_cols({global, local});
  Var gate = sigmoid(linear(both, p("semantic.caption_gate.W"), p("semantic.caption_gate.b")));
  Var text = linear(mul(gate, both), p("semantic.text_proj.W"), p("semantic.text_proj.b"));
  return {text, gate};
}

}  // namespace dualvd
