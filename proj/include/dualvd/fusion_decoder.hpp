#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dualvd/autodiff.hpp"
#include "dualvd/dialogue.hpp"
#include "dualvd/model_config.hpp"
#include "dualvd/params.hpp"
#include "dualvd/semantic_module.hpp"
#include "dualvd/text_encoders.hpp"
#include "dualvd/visual_module.hpp"

namespace dualvd {

enum class Variant { ObjRep, RelRep, VisNoRel, VisMod, GlCap, LoCap, SemMod, DualVD };

inline constexpr std::array<Variant, 8> kAllVariants = {
    Variant::ObjRep, Variant::RelRep, Variant::VisNoRel, Variant::VisMod,
    Variant::GlCap,  Variant::LoCap,  Variant::SemMod,   Variant::DualVD};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::ObjRep: return "ObjRep";
    case Variant::RelRep: return "RelRep";
    case Variant::VisNoRel: return "VisNoRel";
    case Variant::VisMod: return "VisMod";
    case Variant::GlCap: return "GlCap";
    case Variant::LoCap: return "LoCap";
    case Variant::SemMod: return "SemMod";
    case Variant::DualVD: return "DualVD";
  }
  return "DualVD";
}

inline Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

inline bool uses_visual(Variant v) {
  return v == Variant::ObjRep || v == Variant::RelRep || v == Variant::VisNoRel || v == Variant::VisMod ||
         v == Variant::DualVD;
}
inline bool uses_semantic(Variant v) {
  return v == Variant::GlCap || v == Variant::LoCap || v == Variant::SemMod || v == Variant::DualVD;
}
inline bool uses_gated_question(Variant v) { return v != Variant::ObjRep && v != Variant::GlCap; }
inline bool uses_relations(Variant v) {
  return v == Variant::RelRep || v == Variant::VisNoRel || v == Variant::VisMod || v == Variant::DualVD;
}
inline bool uses_object_fusion(Variant v) {
  return v == Variant::VisNoRel || v == Variant::VisMod || v == Variant::DualVD;
}

// Width of the fused knowledge vector S.
inline std::size_t fused_width(const ModelConfig& c, Variant v) {
  return v == Variant::DualVD ? 2 * c.d_fuse : c.d_fuse;
}

inline std::vector<ParamSpec> model_param_specs(const ModelConfig& c, Variant v) {
  if (c.vocab_size < 2) throw ConfigError("model needs a vocabulary with at least pad and unknown tokens");
  std::vector<ParamSpec> specs;
  const EmbeddingConfig emb = c.embedding();
  const std::size_t d_in = emb.output_dim();
  declare_embedding_params(specs, emb);
  declare_lstm_params(specs, "lstm.question", d_in, c.d_hid);
  declare_lstm_params(specs, "lstm.history", d_in, c.d_hid);
  declare_lstm_params(specs, "lstm.answer", d_in, c.d_hid);
  if (v == Variant::GlCap || v == Variant::SemMod || v == Variant::DualVD)
    declare_lstm_params(specs, "lstm.caption", d_in, c.d_hid);
  if (v == Variant::LoCap || v == Variant::SemMod || v == Variant::DualVD)
    declare_lstm_params(specs, "lstm.dense", d_in, c.d_hid);
  if (uses_gated_question(v)) declare_question_gate_params(specs, c);
  if (uses_relations(v)) declare_relation_params(specs, c);
  if (v == Variant::VisNoRel) declare_no_edge_params(specs, c);
  if (v == Variant::ObjRep || uses_object_fusion(v)) declare_object_attention_params(specs, c);
  if (uses_object_fusion(v)) declare_object_fusion_params(specs, c);
  if (v == Variant::LoCap || v == Variant::SemMod || v == Variant::DualVD)
    declare_semantic_attention_params(specs, c);
  if (v == Variant::SemMod || v == Variant::DualVD) declare_caption_fusion_params(specs, c);
  if (uses_visual(v)) {
    specs.push_back({"fusion.visual_proj.W", {c.d_fuse, c.d_obj}});
    specs.push_back({"fusion.visual_proj.b", {c.d_fuse}, InitKind::Zero});
  }
  if (uses_semantic(v)) {
    specs.push_back({"fusion.semantic_proj.W", {c.d_fuse, c.d_hid}});
    specs.push_back({"fusion.semantic_proj.b", {c.d_fuse}, InitKind::Zero});
  }
  if (v == Variant::DualVD) {
    specs.push_back({"fusion_gate.W", {2 * c.d_fuse, 2 * c.d_fuse}});
    specs.push_back({"fusion_gate.b", {2 * c.d_fuse}, InitKind::Zero});
  }
  specs.push_back({"decoder.joint.W", {c.d_hid, fused_width(c, v) + 2 * c.d_hid}});
  specs.push_back({"decoder.joint.b", {c.d_hid}, InitKind::Zero});
  return specs;
}

inline ParamStore init_model(const ModelConfig& c, Variant v, std::uint64_t seed) {
  return init_params(model_param_specs(c, v), seed);
}

// ---------------------------------------------------------------------------
// Selective visual-semantic fusion

struct FusedKnowledge {
  Var fused;  // 1 × 2·d_fuse, gate ∘ [image, text]
  Var gate;   // 1 × 2·d_fuse
};

inline FusedKnowledge visual_semantic_fusion(Params& p, Var image, Var text) {
  if (image.value().size() != text.value().size())
    throw DimensionError("visual_semantic_fusion: image and text must share d_fuse");
  Var both = concat_cols({image, text});
  Var gate = sigmoid(linear(both, p("fusion_gate.W"), p("fusion_gate.b")));
  return {mul(gate, both), gate};
}

struct GateRatio {
  double visual = 0.5;
  double semantic = 0.5;
};

// Share of gate mass on the visual half versus the semantic half.
inline GateRatio gate_ratio(std::span<const double> gate) {
  if (gate.empty() || gate.size() % 2 != 0)
    throw DimensionError("gate_ratio: gate length must be even and non-zero");
  const std::size_t half = gate.size() / 2;
  double vis = 0.0, sem = 0.0;
  for (std::size_t i = 0; i < half; ++i) vis += gate[i];
  for (std::size_t i = half; i < gate.size(); ++i) sem += gate[i];
  vis /= static_cast<double>(half);
  sem /= static_cast<double>(half);
  const double total = vis + sem;
  if (!(total > 0.0)) throw DomainError("gate_ratio: gate mass is zero");
  return {vis / total, sem / total};
}

// ---------------------------------------------------------------------------
// Discriminative decoder

struct AnswerScores {
  std::vector<double> probs;
  std::vector<std::size_t> ranks;  // ranks[a] is the 1-based rank of candidate a
};

// Ranks by descending probability; equal probabilities rank the lower index first.
inline std::vector<std::size_t> rank_candidates(std::span<const double> probs) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<std::size_t> ranks(probs.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) ranks[order[pos]] = pos + 1;
  return ranks;
}

struct CandidateScores {
  Var joint;   // 1 × d_hid
  Var logits;  // 1 × n_cand
  Var probs;   // 1 × n_cand
  AnswerScores scores;
};

// Late fusion of [S, H̃, Q̃] into a joint embedding, dot product with every
// candidate encoding, then softmax.
inline CandidateScores score_candidates(Params& p, Var fused, Var history, Var question, Var candidates) {
  if (candidates.rows() < 2) throw ConfigError("score_candidates: at least two candidates are required");
  Var joint = linear(concat_cols({fused, history, question}), p("decoder.joint.W"), p("decoder.joint.b"));
  if (joint.cols() != candidates.cols())
    throw DimensionError("score_candidates: candidate width differs from joint embedding");
  Var logits = matmul_nt(joint, candidates);
  Var probs = softmax_rows(logits);
  AnswerScores scores;
  scores.probs = probs.value().values();
  scores.ranks = rank_candidates(scores.probs);
  return {joint, logits, probs, std::move(scores)};
}

// −log p(gt).
inline double loss(const AnswerScores& scores, std::size_t gt_index) {
  if (gt_index >= scores.probs.size())
    throw DomainError("loss: gt index " + std::to_string(gt_index) + " out of range");
  return -std::log(scores.probs[gt_index]);
}

// ---------------------------------------------------------------------------
// Full forward pass

// Per-question record of every attention and gate, for inspection tooling.
struct GateTrace {
  std::vector<double> question_gate;  // 2·d_hid
  std::vector<double> alpha;          // n×n row-major
  std::vector<double> beta;           // n×n row-major
  std::vector<double> object_gate_means;  // per object, mean over 2·d_obj entries
  std::vector<double> object_gates;       // n × 2·d_obj row-major
  std::vector<double> gamma;          // n
  std::vector<double> delta;          // k+1 (SemMod, DualVD) or k (LoCap)
  std::vector<double> caption_gate;   // 2·d_hid
  std::vector<double> fusion_gate;    // 2·d_fuse
  std::optional<GateRatio> ratio;
};

struct ForwardOptions {
  bool training = false;           // enables dropout
  std::uint64_t dropout_seed = 0;
  bool mask_visual = false;        // zero the image half of [Ĩ, T̃] before fusion
  bool mask_semantic = false;      // zero the text half of [Ĩ, T̃] before fusion
};

struct RoundOutput {
  Var logits;
  Var loss;
  AnswerScores scores;
  GateTrace trace;
};

struct DialogueOutput {
  std::vector<RoundOutput> rounds;
  Var total_loss;  // sum over rounds
  std::size_t degenerate_sentences = 0;
};

namespace detail {

inline std::vector<double> values_of(Var v) { return v.value().values(); }

class Dropout {
 public:
  Dropout(double rate, bool active, std::uint64_t seed) : rate_(rate), active_(active && rate > 0.0), rng_(seed) {}

  Var apply(Var x) {
    if (!active_) return x;
    Tensor mask(x.value().shape());
    const double keep = 1.0 / (1.0 - rate_);
    for (double& m : mask.values()) m = unit_uniform(rng_()) < rate_ ? 0.0 : keep;
    return mul(x, x.tape().constant(std::move(mask)));
  }

 private:
  double rate_;
  bool active_;
  std::mt19937_64 rng_;
};

inline void check_dims(const ModelConfig& c, const Dialogue& d) {
  d.graph.validate();
  if (d.graph.d_obj() != c.d_obj || d.graph.d_rel() != c.d_rel)
    throw DimensionError("dialogue " + d.id + ": feature widths (" + std::to_string(d.graph.d_obj()) + ", " +
                         std::to_string(d.graph.d_rel()) + ") do not match the model (" +
                         std::to_string(c.d_obj) + ", " + std::to_string(c.d_rel) + ")");
  if (d.rounds.empty()) throw DimensionError("dialogue " + d.id + " has no rounds");
}

}  // namespace detail

// Encodes one dialogue (all rounds share the image and captions) and scores
// every round's candidates. Only the submodules the variant prescribes run.
inline DialogueOutput forward(Params& p, const ModelConfig& c, const Dialogue& d, Variant v,
                              const ForwardOptions& opt = {}) {
  detail::check_dims(c, d);
  Tape& tape = p.tape();
  const EmbeddingConfig emb = c.embedding();
  const std::size_t rounds = d.rounds.size();
  const std::size_t n = d.graph.n;
  detail::Dropout dropout(c.dropout, opt.training, opt.dropout_seed);
  DialogueOutput out;

  auto encode = [&](const std::string& lstm, std::span<const TokenSequence> seqs) {
    SentenceEncoding enc = encode_sentences(p, emb, lstm, c.d_hid, seqs);
    out.degenerate_sentences +=
        static_cast<std::size_t>(std::count(enc.degenerate.begin(), enc.degenerate.end(), true));
    return dropout.apply(enc.encodings);
  };

  std::vector<TokenSequence> questions, histories, answers;
  for (std::size_t r = 0; r < rounds; ++r) {
    questions.push_back(d.rounds[r].question);
    histories.push_back(history_tokens(d, r, c.history_len));
    answers.insert(answers.end(), d.rounds[r].candidates.begin(), d.rounds[r].candidates.end());
  }
  Var q_all = encode("lstm.question", questions);
  Var h_all = encode("lstm.history", histories);
  Var a_all = encode("lstm.answer", answers);

  Var global_caption, local_captions;
  if (v == Variant::GlCap || v == Variant::SemMod || v == Variant::DualVD)
    global_caption = encode("lstm.caption", std::span<const TokenSequence>(&d.caption, 1));
  if (v == Variant::LoCap || v == Variant::SemMod || v == Variant::DualVD) {
    if (d.dense_captions.empty()) throw ConfigError("dialogue " + d.id + " has no dense captions");
    local_captions = encode("lstm.dense", d.dense_captions);
  }

  Var objects, relations;
  if (uses_visual(v)) {
    objects = tape.constant(d.graph.objects);
    if (v == Variant::VisNoRel) {
      relations = gather_rows(reshape(p("visual.no_edge"), 1, c.d_rel), std::vector<std::size_t>(n * n, 0));
    } else if (uses_relations(v)) {
      relations = tape.constant(d.graph.relations);
    }
  }

  std::size_t cand_offset = 0;
  Var total;
  for (std::size_t r = 0; r < rounds; ++r) {
    const DialogueRound& round = d.rounds[r];
    RoundOutput ro;
    GateTrace& tr = ro.trace;
    Var q = slice_rows(q_all, r, r + 1);
    Var h = slice_rows(h_all, r, r + 1);

    Var gq;
    if (uses_gated_question(v)) {
      GatedQuestion g = history_gated_question(p, h, q);
      gq = g.question;
      tr.question_gate = detail::values_of(g.gate);
    }

    Var image;
    if (v == Variant::ObjRep) {
      Var gamma = object_attention(p, objects, q);
      image = matmul_tn(gamma, objects);
      tr.gamma = detail::values_of(gamma);
    } else if (uses_relations(v)) {
      RelationAttention ra = relation_attention(p, gq, relations, n);
      GraphConvolution gc = graph_convolution(p, gq, objects, ra.weighted);
      tr.alpha = detail::values_of(ra.alpha);
      tr.beta = detail::values_of(gc.beta);
      if (v == Variant::RelRep) {
        image = mean_rows(gc.features);
      } else {
        ObjectRelationFusion of = object_relation_fusion(p, objects, gc.features, q);
        image = of.image;
        tr.gamma = detail::values_of(of.gamma);
        tr.object_gates = detail::values_of(of.gates);
        const std::size_t w = 2 * c.d_obj;
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (std::size_t k = 0; k < w; ++k) s += tr.object_gates[i * w + k];
          tr.object_gate_means.push_back(s / static_cast<double>(w));
        }
      }
    }

    Var text;
    if (v == Variant::GlCap) {
      text = global_caption;
    } else if (v == Variant::LoCap) {
      Var delta = detail::caption_weights(p, gq, local_captions);
      text = matmul_tn(delta, local_captions);
      tr.delta = detail::values_of(delta);
    } else if (v == Variant::SemMod || v == Variant::DualVD) {
      SemanticAttention sa = semantic_attention(p, gq, global_caption, local_captions);
      GlobalLocalFusion gl = global_local_fusion(p, sa.global, sa.local);
      text = gl.text;
      tr.delta = detail::values_of(sa.delta);
      tr.caption_gate = detail::values_of(gl.gate);
    }

    Var fused;
    if (v == Variant::DualVD) {
      Var image_p = linear(image, p("fusion.visual_proj.W"), p("fusion.visual_proj.b"));
      Var text_p = linear(text, p("fusion.semantic_proj.W"), p("fusion.semantic_proj.b"));
      if (opt.mask_visual) image_p = scale(image_p, 0.0);
      if (opt.mask_semantic) text_p = scale(text_p, 0.0);
      FusedKnowledge fk = visual_semantic_fusion(p, image_p, text_p);
      fused = fk.fused;
      tr.fusion_gate = detail::values_of(fk.gate);
      tr.ratio = gate_ratio(tr.fusion_gate);
    } else if (uses_visual(v)) {
      fused = linear(image, p("fusion.visual_proj.W"), p("fusion.visual_proj.b"));
    } else {
      fused = linear(text, p("fusion.semantic_proj.W"), p("fusion.semantic_proj.b"));
    }
    fused = dropout.apply(fused);

    const std::size_t n_cand = round.candidates.size();
    Var cands = slice_rows(a_all, cand_offset, cand_offset + n_cand);
    cand_offset += n_cand;
    CandidateScores cs = score_candidates(p, fused, h, q, cands);
    ro.logits = cs.logits;
    ro.scores = std::move(cs.scores);
    ro.loss = cross_entropy(cs.logits, round.gt_index);
    total = total.valid() ? add(total, ro.loss) : ro.loss;
    out.rounds.push_back(std::move(ro));
  }
  out.total_loss = total;
  return out;
}

}  // namespace dualvd
