#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dualvd/text_encoders.hpp"
#include "dualvd/visual_module.hpp"

namespace dualvd {

enum class Modality { Visual, Semantic, Both };

inline std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::Visual: return "visual";
    case Modality::Semantic: return "semantic";
    case Modality::Both: return "both";
  }
  return "both";
}

inline Modality parse_modality(std::string_view s) {
  if (s == "visual") return Modality::Visual;
  if (s == "semantic") return Modality::Semantic;
  if (s == "both") return Modality::Both;
  throw FormatError("unknown modality tag '" + std::string(s) + "'");
}

struct DialogueRound {
  TokenSequence question;
  std::vector<TokenSequence> candidates;
  std::size_t gt_index = 0;
  std::vector<double> relevance;
  Modality modality = Modality::Both;
  std::string template_id;
};

struct Dialogue {
  std::string id;
  SceneGraph graph;
  TokenSequence caption;
  std::vector<TokenSequence> dense_captions;
  std::vector<DialogueRound> rounds;
};

// Flattened history for round `round`: the caption followed by every earlier
// question and its ground-truth answer, keeping the most recent `cap` tokens.
inline TokenSequence history_tokens(const Dialogue& d, std::size_t round, std::size_t cap) {
  std::vector<std::uint32_t> ids = d.caption.content();
  for (std::size_t r = 0; r < round && r < d.rounds.size(); ++r) {
    const auto q = d.rounds[r].question.content();
    const auto a = d.rounds[r].candidates.at(d.rounds[r].gt_index).content();
    ids.insert(ids.end(), q.begin(), q.end());
    ids.insert(ids.end(), a.begin(), a.end());
  }
  if (ids.size() > cap) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(cap));
  if (ids.empty()) ids.push_back(kPadId);
  return TokenSequence::make(std::move(ids), std::max<std::size_t>(cap, 1));
}

// ---------------------------------------------------------------------------
// JSON Lines dataset records.

namespace detail {

inline nlohmann::json tokens_json(const TokenSequence& t) { return t.content(); }

inline TokenSequence tokens_from(const nlohmann::json& j, std::size_t max_len) {
  return TokenSequence::make(j.get<std::vector<std::uint32_t>>(), max_len);
}

inline nlohmann::json matrix_json(const Tensor& t, std::size_t row_begin, std::size_t row_end) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = row_begin; r < row_end; ++r) {
    auto s = t.row_span(r);
    rows.push_back(std::vector<double>(s.begin(), s.end()));
  }
  return rows;
}

inline void append_rows(const nlohmann::json& rows, std::vector<double>& out, std::size_t& width) {
  for (const auto& row : rows) {
    auto v = row.get<std::vector<double>>();
    if (width == 0) width = v.size();
    if (v.size() != width || width == 0) throw FormatError("ragged feature matrix");
    out.insert(out.end(), v.begin(), v.end());
  }
}

}  // namespace detail

inline nlohmann::json dialogue_to_json(const Dialogue& d) {
  nlohmann::json rel = nlohmann::json::array();
  for (std::size_t i = 0; i < d.graph.n; ++i)
    rel.push_back(detail::matrix_json(d.graph.relations, i * d.graph.n, (i + 1) * d.graph.n));
  nlohmann::json j;
  j["dialogue_id"] = d.id;
  j["world"] = {{"obj_feats", detail::matrix_json(d.graph.objects, 0, d.graph.n)}, {"rel_embeds", rel}};
  j["caption_tokens"] = detail::tokens_json(d.caption);
  j["dense_caption_tokens"] = nlohmann::json::array();
  for (const auto& c : d.dense_captions) j["dense_caption_tokens"].push_back(detail::tokens_json(c));
  j["rounds"] = nlohmann::json::array();
  for (const auto& r : d.rounds) {
    nlohmann::json jr;
    jr["question_tokens"] = detail::tokens_json(r.question);
    jr["candidate_tokens"] = nlohmann::json::array();
    for (const auto& c : r.candidates) jr["candidate_tokens"].push_back(detail::tokens_json(c));
    jr["gt_index"] = r.gt_index;
    jr["relevance"] = r.relevance;
    jr["modality_tag"] = modality_name(r.modality);
    jr["template"] = r.template_id;
    j["rounds"].push_back(std::move(jr));
  }
  return j;
}

inline Dialogue dialogue_from_json(const nlohmann::json& j, std::size_t max_len) {
  try {
    Dialogue d;
    d.id = j.at("dialogue_id").get<std::string>();
    const auto& world = j.at("world");
    std::vector<double> obj;
    std::size_t d_obj = 0;
    detail::append_rows(world.at("obj_feats"), obj, d_obj);
    const std::size_t n = world.at("obj_feats").size();
    const auto& rel_json = world.at("rel_embeds");
    if (rel_json.size() != n) throw FormatError("rel_embeds must be n × n");
    std::vector<double> rel;
    std::size_t d_rel = 0;
    for (const auto& row : rel_json) {
      if (row.size() != n) throw FormatError("rel_embeds must be n × n");
      detail::append_rows(row, rel, d_rel);
    }
    if (n == 0) throw FormatError("world has no objects");
    d.graph = SceneGraph::make(Tensor::matrix(n, d_obj, std::move(obj)),
                               Tensor::matrix(n * n, d_rel, std::move(rel)));
    d.caption = detail::tokens_from(j.at("caption_tokens"), max_len);
    for (const auto& c : j.at("dense_caption_tokens")) d.dense_captions.push_back(detail::tokens_from(c, max_len));
    for (const auto& jr : j.at("rounds")) {
      DialogueRound r;
      r.question = detail::tokens_from(jr.at("question_tokens"), max_len);
      for (const auto& c : jr.at("candidate_tokens")) r.candidates.push_back(detail::tokens_from(c, max_len));
      r.gt_index = jr.at("gt_index").get<std::size_t>();
      r.relevance = jr.at("relevance").get<std::vector<double>>();
      r.modality = parse_modality(jr.at("modality_tag").get<std::string>());
      r.template_id = jr.value("template", std::string{});
      if (r.candidates.size() < 2) throw FormatError("a round needs at least two candidates");
      if (r.gt_index >= r.candidates.size()) throw FormatError("gt_index out of range");
      if (r.relevance.size() != r.candidates.size()) throw FormatError("relevance length mismatch");
      d.rounds.push_back(std::move(r));
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dialogue record: ") + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(std::string("malformed dialogue record: ") + e.what());
  }
}

struct Dataset {
  std::vector<Dialogue> dialogues;

  std::size_t question_count() const {
    std::size_t n = 0;
    for (const auto& d : dialogues) n += d.rounds.size();
    return n;
  }
};

// Rejects datasets whose dialogues disagree on k, candidate count or feature widths.
inline void validate_dataset(const Dataset& ds) {
  if (ds.dialogues.empty()) throw FormatError("dataset has no dialogues");
  const Dialogue& first = ds.dialogues.front();
  for (const auto& d : ds.dialogues) {
    if (d.dense_captions.size() != first.dense_captions.size() || d.dense_captions.empty())
      throw FormatError("dialogue " + d.id + ": dense caption count differs from the dataset's k");
    if (d.graph.d_obj() != first.graph.d_obj() || d.graph.d_rel() != first.graph.d_rel())
      throw FormatError("dialogue " + d.id + ": feature widths differ");
    if (d.rounds.empty()) throw FormatError("dialogue " + d.id + " has no rounds");
    for (const auto& r : d.rounds)
      if (r.candidates.size() != first.rounds.front().candidates.size())
        throw FormatError("dialogue " + d.id + ": candidate count differs");
  }
}

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  for (const auto& d : ds.dialogues) os << dialogue_to_json(d).dump() << '\n';
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_dataset(os, ds);
}

inline Dataset read_dataset(std::istream& is, std::size_t max_len) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
    ds.dialogues.push_back(dialogue_from_json(j, max_len));
  }
  validate_dataset(ds);
  return ds;
}

inline Dataset read_dataset(const std::string& path, std::size_t max_len) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open dataset " + path);
  return read_dataset(is, max_len);
}

}  // namespace dualvd
