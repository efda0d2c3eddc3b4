#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dualvd/dialogue.hpp"
#include "dualvd/fusion_decoder.hpp"
#include "dualvd/gradcheck.hpp"

namespace dualvd {

// Tiny dimensions so that finite differences over every entry stay cheap.
struct MicroSetup {
  ModelConfig model;
  std::size_t objects = 4;
  std::size_t captions = 3;
  std::size_t candidates = 5;
  std::size_t rounds = 2;
};

inline MicroSetup micro_setup() {
  MicroSetup m;
  m.model.vocab_size = 12;
  m.model.d_word = 4;
  m.model.second_source = true;
  m.model.d_obj = 8;
  m.model.d_rel = 4;
  m.model.d_hid = 8;
  m.model.d_att = 8;
  m.model.d_fuse = 8;
  m.model.max_len = 6;
  m.model.history_len = 16;
  m.model.dropout = 0.0;
  return m;
}

inline Tensor gaussian_tensor(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> g(0.0, stddev);
  Tensor t(shape);
  for (double& v : t.values()) v = g(rng);
  return t;
}

// Random dialogue over the micro vocabulary; sentence lengths vary so padding
// paths are exercised.
inline Dialogue random_dialogue(const MicroSetup& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ModelConfig& c = m.model;
  auto sentence = [&](std::size_t min_len) {
    const std::size_t len = min_len + rng() % (c.max_len - min_len + 1);
    std::vector<std::uint32_t> ids(len);
    for (auto& id : ids) id = static_cast<std::uint32_t>(2 + rng() % (c.vocab_size - 2));
    return TokenSequence::make(std::move(ids), c.max_len);
  };
  Dialogue d;
  d.id = "micro-" + std::to_string(seed);
  d.graph = SceneGraph::make(gaussian_tensor({m.objects, c.d_obj}, rng),
                             gaussian_tensor({m.objects * m.objects, c.d_rel}, rng));
  d.caption = sentence(2);
  for (std::size_t i = 0; i < m.captions; ++i) d.dense_captions.push_back(sentence(1));
  for (std::size_t r = 0; r < m.rounds; ++r) {
    DialogueRound round;
    round.question = sentence(2);
    for (std::size_t a = 0; a < m.candidates; ++a) round.candidates.push_back(sentence(1));
    round.gt_index = rng() % m.candidates;
    round.relevance.assign(m.candidates, 0.0);
    round.relevance[round.gt_index] = 1.0;
    round.modality = static_cast<Modality>(rng() % 3);
    d.rounds.push_back(std::move(round));
  }
  return d;
}

struct GradCheckCase {
  std::string name;
  ParamStore point;
  ScalarFn fn;
};

struct GradCheckResult {
  std::string name;
  GradCheckReport report;
  bool passed = false;
};

namespace detail {

// Module inputs become parameters of the check so their gradients are verified too.
struct CaseBuilder {
  std::mt19937_64 rng;
  std::vector<ParamSpec> specs;
  std::vector<std::pair<std::string, Tensor>> inputs;

  void input(const std::string& name, const Shape& shape) { inputs.emplace_back(name, gaussian_tensor(shape, rng)); }

  ParamStore build(std::uint64_t seed) {
    ParamStore s = init_params(specs, seed);
    // Non-zero biases so that bias gradients are not checked only at zero.
    for (const auto& spec : specs)
      if (spec.init == InitKind::Zero) s.set(spec.name, gaussian_tensor(spec.shape, rng, 0.1));
    for (auto& [name, t] : inputs) s.set(name, t);
    return s;
  }
};

// Projects any output onto fixed random weights to obtain a scalar.
inline Var project(Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return weighted_sum(out, gaussian_tensor(out.value().shape(), rng));
}

inline Var row_input(Params& p, const std::string& name) {
  Var v = p(name);
  return v.value().rank() == 1 ? reshape(v, 1, v.value().size()) : v;
}

}  // namespace detail

inline std::vector<GradCheckCase> gradcheck_cases(std::uint64_t seed = 42) {
  const MicroSetup m = micro_setup();
  const ModelConfig& c = m.model;
  const std::size_t n = m.objects, k = m.captions;
  std::vector<GradCheckCase> cases;
  auto add_case = [&](const std::string& name, detail::CaseBuilder& b, ScalarFn fn) {
    cases.push_back({name, b.build(hash_string(name, seed)), std::move(fn)});
  };
  auto builder = [&](const std::string& name) { return detail::CaseBuilder{std::mt19937_64(hash_string(name, seed + 1)), {}, {}}; };

  {
    auto b = builder("primitives");
    b.input("x", {3, 4});
    b.input("y", {3, 4});
    b.input("W", {5, 4});
    b.input("bias", {5});
    add_case("primitives", b, [](Params& p) {
      Var x = p("x"), y = p("y");
      Var l = linear(x, p("W"), p("bias"));
      Var s = softmax_rows(l);
      Var mix = concat_cols({sigmoid(x), tanh(y), mul(x, y), sub(x, y)});
      Var t = matmul_tn(x, y);
      return add(add(detail::project(s, 1), detail::project(mix, 2)),
                 add(detail::project(t, 3), cross_entropy(slice_rows(l, 0, 1), 2)));
    });
  }
  {
    auto b = builder("embedding");
    declare_embedding_params(b.specs, c.embedding());
    add_case("embedding", b, [c](Params& p) { return detail::project(embed_ids(p, c.embedding(), {3, 0, 7, 3, 11}), 4); });
  }
  {
    auto b = builder("lstm");
    declare_embedding_params(b.specs, c.embedding());
    declare_lstm_params(b.specs, "lstm.test", c.embedding().output_dim(), c.d_hid);
    add_case("lstm", b, [c](Params& p) {
      std::vector<TokenSequence> seqs = {TokenSequence::make({2, 5, 9, 4}, c.max_len),
                                         TokenSequence::make({7}, c.max_len),
                                         TokenSequence::make({3, 3, 10, 6, 8, 2}, c.max_len)};
      return detail::project(encode_sentences(p, c.embedding(), "lstm.test", c.d_hid, seqs).encodings, 5);
    });
  }
  {
    auto b = builder("question_gate");
    declare_question_gate_params(b.specs, c);
    b.input("in.history", {1, c.d_hid});
    b.input("in.question", {1, c.d_hid});
    add_case("history_gated_question", b, [](Params& p) {
      return detail::project(history_gated_question(p, p("in.history"), p("in.question")).question, 6);
    });
  }
  {
    auto b = builder("relation_attention");
    declare_relation_params(b.specs, c);
    b.input("in.question", {1, c.d_hid});
    b.input("in.relations", {n * n, c.d_rel});
    add_case("relation_attention", b, [n](Params& p) {
      RelationAttention ra = relation_attention(p, p("in.question"), p("in.relations"), n);
      return add(detail::project(ra.weighted, 7), detail::project(ra.alpha, 8));
    });
  }
  {
    auto b = builder("graph_convolution");
    declare_relation_params(b.specs, c);
    b.input("in.question", {1, c.d_hid});
    b.input("in.objects", {n, c.d_obj});
    b.input("in.weighted", {n * n, c.d_rel});
    add_case("graph_convolution", b, [](Params& p) {
      GraphConvolution gc = graph_convolution(p, p("in.question"), p("in.objects"), p("in.weighted"));
      return add(detail::project(gc.features, 9), detail::project(gc.beta, 10));
    });
  }
  {
    auto b = builder("object_attention");
    declare_object_attention_params(b.specs, c);
    b.input("in.objects", {n, c.d_obj});
    b.input("in.question", {1, c.d_hid});
    add_case("object_attention", b,
             [](Params& p) { return detail::project(object_attention(p, p("in.objects"), p("in.question")), 11); });
  }
  {
    auto b = builder("object_relation_fusion");
    declare_object_attention_params(b.specs, c);
    declare_object_fusion_params(b.specs, c);
    b.input("in.objects", {n, c.d_obj});
    b.input("in.relation_aware", {n, c.d_obj});
    b.input("in.question", {1, c.d_hid});
    add_case("object_relation_fusion", b, [](Params& p) {
      return detail::project(object_relation_fusion(p, p("in.objects"), p("in.relation_aware"), p("in.question")).image, 12);
    });
  }
  {
    auto b = builder("semantic_attention");
    declare_semantic_attention_params(b.specs, c);
    b.input("in.question", {1, c.d_hid});
    b.input("in.global", {1, c.d_hid});
    b.input("in.locals", {k, c.d_hid});
    add_case("semantic_attention", b, [](Params& p) {
      SemanticAttention sa = semantic_attention(p, p("in.question"), p("in.global"), p("in.locals"));
      return add(detail::project(sa.global, 13), detail::project(sa.local, 14));
    });
  }
  {
    auto b = builder("local_caption_attention");
    declare_semantic_attention_params(b.specs, c);
    b.input("in.question", {1, c.d_hid});
    b.input("in.locals", {k, c.d_hid});
    add_case("local_caption_attention", b, [](Params& p) {
      return detail::project(local_caption_attention(p, p("in.question"), p("in.locals")), 15);
    });
  }
  {
    auto b = builder("global_local_fusion");
    declare_caption_fusion_params(b.specs, c);
    b.input("in.global", {1, c.d_hid});
    b.input("in.local", {1, c.d_hid});
    add_case("global_local_fusion", b,
             [](Params& p) { return detail::project(global_local_fusion(p, p("in.global"), p("in.local")).text, 16); });
  }
  {
    auto b = builder("visual_semantic_fusion");
    b.specs.push_back({"fusion_gate.W", {2 * c.d_fuse, 2 * c.d_fuse}});
    b.specs.push_back({"fusion_gate.b", {2 * c.d_fuse}, InitKind::Zero});
    b.input("in.image", {1, c.d_fuse});
    b.input("in.text", {1, c.d_fuse});
    add_case("visual_semantic_fusion", b,
             [](Params& p) { return detail::project(visual_semantic_fusion(p, p("in.image"), p("in.text")).fused, 17); });
  }
  {
    auto b = builder("decoder");
    b.specs.push_back({"decoder.joint.W", {c.d_hid, 2 * c.d_fuse + 2 * c.d_hid}});
    b.specs.push_back({"decoder.joint.b", {c.d_hid}, InitKind::Zero});
    b.input("in.fused", {1, 2 * c.d_fuse});
    b.input("in.history", {1, c.d_hid});
    b.input("in.question", {1, c.d_hid});
    b.input("in.candidates", {m.candidates, c.d_hid});
    add_case("decoder", b, [](Params& p) {
      CandidateScores cs = score_candidates(p, p("in.fused"), p("in.history"), p("in.question"), p("in.candidates"));
      return cross_entropy(cs.logits, 1);
    });
  }
  for (Variant v : kAllVariants) {
    const Dialogue d = random_dialogue(m, seed);
    ParamStore point = init_model(c, v, hash_string(variant_name(v), seed));
    std::mt19937_64 rng(hash_string("bias", seed));
    for (const auto& spec : model_param_specs(c, v))
      if (spec.init == InitKind::Zero) point.set(spec.name, gaussian_tensor(spec.shape, rng, 0.1));
    cases.push_back({"end_to_end." + std::string(variant_name(v)), std::move(point),
                     [c, d, v](Params& p) { return forward(p, c, d, v).total_loss; }});
  }
  return cases;
}

inline std::vector<GradCheckResult> run_gradcheck_suite(double tolerance = 1e-5, std::uint64_t seed = 42) {
  std::vector<GradCheckResult> out;
  for (const auto& gc : gradcheck_cases(seed)) {
    GradCheckReport rep = grad_check(gc.fn, gc.point);
    out.push_back({gc.name, rep, rep.max_rel_error <= tolerance});
  }
  return out;
}

}  // namespace dualvd
