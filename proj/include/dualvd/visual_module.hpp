#pragma once

#include <string>
#include <vector>

#include "dualvd/autodiff.hpp"
#include "dualvd/model_config.hpp"
#include "dualvd/params.hpp"

namespace dualvd {

// Complete directed scene graph: every ordered pair (i, j), including i == j,
// carries a relation embedding. Row i·n + j of `relations` is r_ij.
struct SceneGraph {
  std::size_t n = 0;
  Tensor objects;    // n × d_obj
  Tensor relations;  // n² × d_rel

  std::size_t d_obj() const { return objects.cols(); }
  std::size_t d_rel() const { return relations.cols(); }

  void validate() const {
    if (n == 0) throw DimensionError("scene graph needs at least one object");
    if (objects.rank() != 2 || objects.rows() != n)
      throw DimensionError("scene graph: expected " + std::to_string(n) + " object rows");
    if (relations.rank() != 2 || relations.rows() != n * n)
      throw DimensionError("scene graph: expected " + std::to_string(n * n) + " relation rows");
    if (!objects.all_finite() || !relations.all_finite())
      throw DimensionError("scene graph: non-finite features");
  }

  static SceneGraph make(Tensor objects, Tensor relations) {
    SceneGraph g{objects.rows(), std::move(objects), std::move(relations)};
    g.validate();
    return g;
  }
};

// Parameter groups. Only the groups a variant touches are declared.
inline void declare_question_gate_params(std::vector<ParamSpec>& specs, const ModelConfig& c) {
  const std::size_t two_h = 2 * c.d_hid;
  specs.push_back({"visual.question_gate.W", {two_h, two_h}});
  specs.push_back({"visual.question_gate.b", {two_h}, InitKind::Zero});
  specs.push_back({"visual.question_proj.W", {c.d_hid, two_h}});
  specs.push_back({"visual.question_proj.b", {c.d_hid}, InitKind::Zero});
}

inline void declare_relation_params(std::vector<ParamSpec>& specs, const ModelConfig& c) {
  specs.push_back({"visual.relation_attention.W_question", {c.d_att, c.d_hid}});
  specs.push_back({"visual.relation_attention.W_relation", {c.d_att, c.d_rel}});
  specs.push_back({"visual.relation_attention.W_score", {1, c.d_att}});
  specs.push_back({"visual.relation_attention.b_score", {1}, InitKind::Zero});
  specs.push_back({"visual.graph_conv.W_message", {c.d_hid, c.d_obj + c.d_rel}});
  specs.push_back({"visual.graph_conv.W_score", {1, c.d_hid}});
  specs.push_back({"visual.graph_conv.b_score", {1}, InitKind::Zero});
}

inline void declare_object_attention_params(std::vector<ParamSpec>& specs, const ModelConfig& c) {
  specs.push_back({"object_attention.W_object", {c.d_hid, c.d_obj}});
  specs.push_back({"object_attention.W_score", {1, c.d_hid}});
  specs.push_back({"object_attention.b_score", {1}, InitKind::Zero});
}

inline void declare_object_fusion_params(std::vector<ParamSpec>& specs, const ModelConfig& c) {
  const std::size_t two_o = 2 * c.d_obj;
  specs.push_back({"visual.object_gate.W", {two_o, two_o}});
  specs.push_back({"visual.object_gate.b", {two_o}, InitKind::Zero});
  specs.push_back({"visual.object_proj.W", {c.d_obj, two_o}});
  specs.push_back({"visual.object_proj.b", {c.d_obj}, InitKind::Zero});
}

inline void declare_no_edge_params(std::vector<ParamSpec>& specs, const ModelConfig& c) {
  specs.push_back({"visual.no_edge", {c.d_rel}});
}

// ---------------------------------------------------------------------------

struct GatedQuestion {
  Var question;  // 1 × d_hid history-aware question
  Var gate;      // 1 × 2·d_hid
};

// Selects history content for the question through a sigmoid gate over [H, Q].
inline GatedQuestion history_gated_question(Params& p, Var history, Var question) {
  if (history.value().size() != question.value().size() || history.rows() != 1)
    throw DimensionError("history_gated_question: history and question must be 1×d_hid rows");
  Var hq = concat_cols({history, question});
  Var gate = sigmoid(linear(hq, p("visual.question_gate.W"), p("visual.question_gate.b")));
  Var out = linear(mul(gate, hq), p("visual.question_proj.W"), p("visual.question_proj.b"));
  return {out, gate};
}

struct RelationAttention {
  Var alpha;     // n × n, jointly normalised over all n² pairs
  Var weighted;  // n² × d_rel, α_ij · r_ij
};

inline RelationAttention relation_attention(Params& p, Var gated_question, Var relations, std::size_t n) {
  if (relations.rows() != n * n) throw DimensionError("relation_attention: expected n² relation rows");
  Var q = matmul_nt(gated_question, p("visual.relation_attention.W_question"));
  Var r = matmul_nt(relations, p("visual.relation_attention.W_relation"));
  Var logits = linear(mul_row(r, q), p("visual.relation_attention.W_score"),
                      p("visual.relation_attention.b_score"));
  Var alpha = softmax_rows(reshape(logits, 1, n * n));
  Var weighted = mul_col(relations, reshape(alpha, n * n, 1));
  return {reshape(alpha, n, n), weighted};
}

struct GraphConvolution {
  Var beta;      // n × n, row i normalised over neighbours j
  Var features;  // n × d_obj relation-aware object features
};

inline GraphConvolution graph_convolution(Params& p, Var gated_question, Var objects, Var weighted_relations) {
  const std::size_t n = objects.rows();
  if (weighted_relations.rows() != n * n)
    throw DimensionError("graph_convolution: relation rows do not match object count");
  std::vector<std::size_t> neighbour(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) neighbour[i * n + j] = j;
  Var pair_input = concat_cols({gather_rows(objects, std::move(neighbour)), weighted_relations});
  Var message = matmul_nt(pair_input, p("visual.graph_conv.W_message"));
  Var logits = linear(mul_row(message, gated_question), p("visual.graph_conv.W_score"),
                      p("visual.graph_conv.b_score"));
  Var beta = softmax_rows(reshape(logits, n, n));
  return {beta, matmul(beta, objects)};
}

// Question-guided attention over the raw object features; n × 1.
inline Var object_attention(Params& p, Var objects, Var question) {
  const std::size_t n = objects.rows();
  Var proj = matmul_nt(objects, p("object_attention.W_object"));
  Var logits = linear(mul_row(proj, question), p("object_attention.W_score"), p("object_attention.b_score"));
  return reshape(softmax_rows(reshape(logits, 1, n)), n, 1);
}

struct ObjectRelationFusion {
  Var image;          // 1 × d_obj
  Var gates;          // n × 2·d_obj
  Var gamma;          // n × 1
  Var fused_objects;  // n × d_obj
};

inline ObjectRelationFusion object_relation_fusion(Params& p, Var objects, Var relation_aware, Var question) {
  if (objects.rows() != relation_aware.rows() || objects.cols() != relation_aware.cols())
    throw DimensionError("object_relation_fusion: object and relation-aware features differ in shape");
  Var both = concat_cols({objects, relation_aware});
  Var gates = sigmoid(linear(both, p("visual.object_gate.W"), p("visual.object_gate.b")));
  Var fused = linear(mul(gates, both), p("visual.object_proj.W"), p("visual.object_proj.b"));
  Var gamma = object_attention(p, objects, question);
  return {matmul_tn(gamma, fused), gates, gamma, fused};
}

}  // namespace dualvd
