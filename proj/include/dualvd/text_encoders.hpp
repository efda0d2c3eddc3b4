#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dualvd/autodiff.hpp"
#include "dualvd/params.hpp"

namespace dualvd {

inline constexpr std::uint32_t kPadId = 0;
inline constexpr std::uint32_t kUnknownId = 1;

// Token ids padded (with kPadId) or truncated to a fixed length.
struct TokenSequence {
  std::vector<std::uint32_t> ids;

  static TokenSequence make(std::vector<std::uint32_t> raw, std::size_t max_len) {
    if (max_len == 0) throw ConfigError("TokenSequence: max length must be positive");
    raw.resize(max_len, kPadId);
    return TokenSequence{std::move(raw)};
  }

  std::size_t length() const { return ids.size(); }

  // One past the last non-pad position; 0 for an all-pad sequence.
  std::size_t effective_length() const {
    for (std::size_t i = ids.size(); i > 0; --i)
      if (ids[i - 1] != kPadId) return i;
    return 0;
  }

  // Non-pad ids in order.
  std::vector<std::uint32_t> content() const {
    std::vector<std::uint32_t> out;
    for (auto id : ids)
      if (id != kPadId) out.push_back(id);
    return out;
  }
};

// Token string <-> id. Id 0 is the pad token and id 1 the unknown token.
class Vocabulary {
 public:
  Vocabulary() {
    add("<pad>");
    add("<unk>");
  }

  std::uint32_t add(const std::string& token) {
    auto [it, inserted] = ids_.try_emplace(token, static_cast<std::uint32_t>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  std::uint32_t id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnknownId : it->second;
  }

  const std::string& token_of(std::uint32_t id) const {
    if (id >= tokens_.size()) throw VocabularyError("token id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  std::size_t size() const { return tokens_.size(); }

  std::vector<std::uint32_t> encode(const std::vector<std::string>& words) const {
    std::vector<std::uint32_t> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(id_of(w));
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
    return j;
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("vocabulary must be a JSON object");
    std::vector<std::string> by_id(j.size());
    for (const auto& [token, id] : j.items()) {
      const auto i = id.get<std::size_t>();
      if (i >= by_id.size() || !by_id[i].empty())
        throw FormatError("vocabulary ids must be dense and unique");
      by_id[i] = token;
    }
    if (by_id.size() < 2 || by_id[kPadId] != "<pad>" || by_id[kUnknownId] != "<unk>")
      throw FormatError("vocabulary must reserve id 0 for <pad> and id 1 for <unk>");
    Vocabulary v;
    for (std::size_t i = 2; i < by_id.size(); ++i) v.add(by_id[i]);
    return v;
  }

 private:
  std::map<std::string, std::uint32_t> ids_;
  std::vector<std::string> tokens_;
};

// ---------------------------------------------------------------------------
// Embeddings

struct EmbeddingConfig {
  std::size_t vocab_size = 0;
  std::size_t d_word = 16;
  bool second_source = true;

  std::size_t output_dim() const { return second_source ? 2 * d_word : d_word; }
};

inline void declare_embedding_params(std::vector<ParamSpec>& specs, const EmbeddingConfig& cfg) {
  specs.push_back({"embed.primary", {cfg.vocab_size, cfg.d_word}, InitKind::HashedEmbedding});
  if (cfg.second_source)
    specs.push_back({"embed.secondary", {cfg.vocab_size, cfg.d_word}, InitKind::HashedEmbedding});
}

// Looks up one vector per id; rows for the pad id are zero and never receive gradient.
inline Var embed_ids(Params& params, const EmbeddingConfig& cfg, const std::vector<std::uint32_t>& ids) {
  std::vector<std::size_t> idx;
  idx.reserve(ids.size());
  for (auto id : ids) {
    if (id >= cfg.vocab_size)
      throw VocabularyError("token id " + std::to_string(id) + " >= vocabulary size " +
                            std::to_string(cfg.vocab_size));
    idx.push_back(id);
  }
  Var primary = gather_rows(params("embed.primary"), idx, kPadId);
  if (!cfg.second_source) return primary;
  Var secondary = gather_rows(params("embed.secondary"), std::move(idx), kPadId);
  return concat_cols({primary, secondary});
}

inline Var embed(Params& params, const EmbeddingConfig& cfg, const TokenSequence& tokens) {
  return embed_ids(params, cfg, tokens.ids);
}

// ---------------------------------------------------------------------------
// LSTM

inline void declare_lstm_params(std::vector<ParamSpec>& specs, const std::string& prefix,
                                std::size_t d_in, std::size_t d_hid) {
  for (const char* gate : {"i", "f", "g", "o"}) {
    specs.push_back({prefix + ".W_" + gate, {d_hid, d_in + d_hid}, InitKind::Xavier});
    specs.push_back({prefix + ".b_" + gate, {d_hid}, InitKind::Zero});
  }
}

struct LstmState {
  Var h;
  Var c;
};

// One step for a batch of rows: x is n×d_in, state rows n×d_hid.
inline LstmState lstm_step(Params& params, const std::string& prefix, Var x, const LstmState& prev) {
  Var xh = concat_cols({x, prev.h});
  Var i = sigmoid(linear(xh, params(prefix + ".W_i"), params(prefix + ".b_i")));
  Var f = sigmoid(linear(xh, params(prefix + ".W_f"), params(prefix + ".b_f")));
  Var g = tanh(linear(xh, params(prefix + ".W_g"), params(prefix + ".b_g")));
  Var o = sigmoid(linear(xh, params(prefix + ".W_o"), params(prefix + ".b_o")));
  Var c = add(mul(f, prev.c), mul(i, g));
  Var h = mul(o, tanh(c));
  return {h, c};
}

namespace detail {

// Rows whose mask is 0 keep their previous state.
inline Var masked_update(Var next, Var prev, const std::vector<double>& mask) {
  const bool all_on = std::all_of(mask.begin(), mask.end(), [](double m) { return m == 1.0; });
  if (all_on) return next;
  Var m = next.tape().constant(Tensor::column(mask));
  return add(prev, mul_col(sub(next, prev), m));
}

}  // namespace detail

// Runs the recurrence from a zero state. `step_input(t)` yields the n×d_in
// input at step t and masks[t][r] is 1 where row r has a real token at t.
template <typename StepInput>
Var run_lstm(Params& params, const std::string& prefix, std::size_t d_hid, std::size_t rows,
             std::size_t steps, StepInput&& step_input, const std::vector<std::vector<double>>& masks) {
  Tape& tape = params.tape();
  LstmState state{tape.constant(Tensor::zeros(rows, d_hid)), tape.constant(Tensor::zeros(rows, d_hid))};
  for (std::size_t t = 0; t < steps; ++t) {
    const auto& mask = masks[t];
    if (std::none_of(mask.begin(), mask.end(), [](double m) { return m != 0.0; })) continue;
    LstmState next = lstm_step(params, prefix, step_input(t), state);
    state.h = detail::masked_update(next.h, state.h, mask);
    state.c = detail::masked_update(next.c, state.c, mask);
  }
  return state.h;
}

// Final hidden state of one sequence of vectors (T×d_in). Positions with
// pad[t] set are skipped; an all-pad sequence yields the zero vector.
inline Var lstm_encode(Params& params, const std::string& prefix, std::size_t d_hid, Var vectors,
                       const std::vector<bool>& pad) {
  const std::size_t steps = vectors.rows();
  if (pad.size() != steps) throw DimensionError("lstm_encode: mask length mismatch");
  std::vector<std::vector<double>> masks(steps);
  for (std::size_t t = 0; t < steps; ++t) masks[t] = {pad[t] ? 0.0 : 1.0};
  return run_lstm(
      params, prefix, d_hid, 1, steps, [&](std::size_t t) { return slice_rows(vectors, t, t + 1); },
      masks);
}

struct SentenceEncoding {
  Var encodings;                 // n × d_hid, one row per sentence
  std::vector<bool> degenerate;  // sentence had no non-pad token
};

// Embeds and encodes a batch of sentences with one LSTM, all rows stepping together.
inline SentenceEncoding encode_sentences(Params& params, const EmbeddingConfig& emb,
                                         const std::string& lstm_prefix, std::size_t d_hid,
                                         std::span<const TokenSequence> sentences) {
  if (sentences.empty()) throw DimensionError("encode_sentences: empty batch");
  const std::size_t n = sentences.size();
  std::size_t steps = 0;
  SentenceEncoding out;
  out.degenerate.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t len = sentences[r].effective_length();
    out.degenerate[r] = len == 0;
    steps = std::max(steps, len);
  }
  std::vector<std::vector<double>> masks(steps, std::vector<double>(n, 0.0));
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t r = 0; r < n; ++r)
      masks[t][r] = (t < sentences[r].ids.size() && sentences[r].ids[t] != kPadId) ? 1.0 : 0.0;
  auto step_input = [&](std::size_t t) {
    std::vector<std::uint32_t> ids(n, kPadId);
    for (std::size_t r = 0; r < n; ++r)
      if (t < sentences[r].ids.size()) ids[r] = sentences[r].ids[t];
    return embed_ids(params, emb, ids);
  };
  out.encodings = run_lstm(params, lstm_prefix, d_hid, n, steps, step_input, masks);
  return out;
}

}  // namespace dualvd
