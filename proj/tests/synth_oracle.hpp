#pragma once

// Rule interpreter for generated dialogues. It reads only what a dialogue
// record exposes (features, relation embeddings, token ids) plus the
// prototype tables, and re-derives each answer from scratch.

#include <optional>
#include <string>
#include <vector>

#include "dualvd/synth_data.hpp"

namespace oracle {

using namespace dualvd;

inline std::size_t nearest(const Tensor& prototypes, std::span<const double> x) {
  std::size_t best = 0;
  double best_dot = -1e300;
  for (std::size_t r = 0; r < prototypes.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) dot += prototypes(r, k) * x[k];
    if (dot > best_dot) {
      best_dot = dot;
      best = r;
    }
  }
  return best;
}

struct Interpreter {
  const Vocabulary& vocab;
  const Prototypes& protos;
  std::size_t values;

  std::vector<std::string> words(const TokenSequence& t) const {
    std::vector<std::string> out;
    for (auto id : t.content()) out.push_back(vocab.token_of(id));
    return out;
  }

  std::string decode(Attribute a, const Dialogue& d, std::size_t obj) const {
    const Tensor& table = a == Attribute::Type ? protos.type : a == Attribute::Color ? protos.color : protos.shape;
    return attribute_words(a, values)[nearest(table, d.graph.objects.row_span(obj))];
  }

  std::string relation(const Dialogue& d, std::size_t i, std::size_t j) const {
    return relation_word(static_cast<RelationLabel>(nearest(protos.relation, d.graph.relations.row_span(i * d.graph.n + j))));
  }

  std::optional<std::size_t> object_of_type(const Dialogue& d, const std::string& type) const {
    for (std::size_t i = 0; i < d.graph.n; ++i)
      if (decode(Attribute::Type, d, i) == type) return i;
    return std::nullopt;
  }

  // Dense caption "the <color> <type> is <state>" about `type`.
  std::optional<std::vector<std::string>> caption_about(const Dialogue& d, const std::string& type) const {
    for (const auto& c : d.dense_captions) {
      auto w = words(c);
      if (w.size() == 5 && w[0] == "the" && w[2] == type && w[3] == "is") return w;
    }
    return std::nullopt;
  }

  std::optional<std::string> answer(const Dialogue& d, std::size_t round) const {
    const auto q = words(d.rounds.at(round).question);
    if (q.size() == 6 && q[0] == "what" && q[1] == "shape" && q[5] == "?") {
      auto i = object_of_type(d, q[4]);
      if (!i) return std::nullopt;
      return decode(Attribute::Shape, d, *i);
    }
    if (q.size() == 7 && q[1] == "state" && q[5] == "in") {
      auto c = caption_about(d, q[4]);
      if (!c) return std::nullopt;
      return (*c)[4];
    }
    if (q.size() == 6 && q[1] == "color") {
      auto c = caption_about(d, q[4]);
      if (!c) return std::nullopt;
      return (*c)[1];
    }
    if (q.size() == 6 && q[0] == "what" && q[1] == "is") {
      auto x = object_of_type(d, q[4]);
      if (!x) return std::nullopt;
      std::optional<std::size_t> subject;
      for (std::size_t j = 0; j < d.graph.n; ++j) {
        if (j == *x || relation(d, j, *x) != q[2]) continue;
        if (subject) return std::nullopt;  // ambiguous
        subject = j;
      }
      if (!subject) return std::nullopt;
      return decode(Attribute::Type, d, *subject);
    }
    return std::nullopt;
  }

  std::string stored_answer(const Dialogue& d, std::size_t round) const {
    const auto& r = d.rounds.at(round);
    const auto w = words(r.candidates.at(r.gt_index));
    return w.size() == 1 ? w[0] : std::string{};
  }
};

}  // namespace oracle
