#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dualvd/dialogue.hpp"
#include "dualvd/fusion_decoder.hpp"
#include "dualvd/metrics.hpp"

namespace dualvd {

// Shortest representation that reads back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc{}) throw FormatError("format_double: conversion failed");
  return std::string(buf, end);
}

inline std::string question_id(const std::string& dialogue_id, std::size_t round) {
  return dialogue_id + "#" + std::to_string(round);
}

// ---------------------------------------------------------------------------
// Predictions

inline nlohmann::json prediction_json(const Dialogue& d, std::size_t round, const AnswerScores& s) {
  const DialogueRound& r = d.rounds.at(round);
  return {{"question_id", question_id(d.id, round)},
          {"dialogue_id", d.id},
          {"round", round},
          {"modality_tag", modality_name(r.modality)},
          {"gt_index", r.gt_index},
          {"rank_of_gt", s.ranks.at(r.gt_index)},
          {"probs", s.probs},
          {"ranks", s.ranks},
          {"relevance", r.relevance}};
}

inline EvalRecord record_from_prediction(const nlohmann::json& j) {
  try {
    EvalRecord rec;
    rec.rank_of_gt = j.at("rank_of_gt").get<std::size_t>();
    if (j.contains("relevance")) rec.relevance = j.at("relevance").get<std::vector<double>>();
    if (j.contains("ranks")) rec.ranks = j.at("ranks").get<std::vector<std::size_t>>();
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed prediction record: ") + e.what());
  }
}

inline std::vector<EvalRecord> read_predictions(std::istream& is) {
  std::vector<EvalRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(record_from_prediction(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("malformed prediction line: ") + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gate traces

inline nlohmann::json trace_json(const Dialogue& d, std::size_t round, const GateTrace& t) {
  nlohmann::json j = {{"question_id", question_id(d.id, round)},
                      {"modality_tag", modality_name(d.rounds.at(round).modality)},
                      {"question_gate", t.question_gate},
                      {"alpha", t.alpha},
                      {"beta", t.beta},
                      {"gamma", t.gamma},
                      {"object_gate_means", t.object_gate_means},
                      {"delta", t.delta},
                      {"caption_gate", t.caption_gate},
                      {"fusion_gate", t.fusion_gate}};
  if (t.ratio) j["gate_ratio"] = {{"visual", t.ratio->visual}, {"semantic", t.ratio->semantic}};
  return j;
}

inline std::size_t argmax_or_npos(const std::vector<double>& v) {
  if (v.empty()) return static_cast<std::size_t>(-1);
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline const char* kInspectHeader = "question_id,visual_fraction,semantic_fraction,top_object,top_caption";

// One CSV row per question; empty cells where the variant has no such signal.
// The caption index counts the global caption as 0 when it takes part in δ.
inline std::string inspect_row(const Dialogue& d, std::size_t round, const GateTrace& t) {
  std::string row = question_id(d.id, round) + ",";
  if (t.ratio) row += format_double(t.ratio->visual) + "," + format_double(t.ratio->semantic);
  else row += ",";
  row += ",";
  if (!t.gamma.empty()) row += std::to_string(argmax_or_npos(t.gamma));
  row += ",";
  if (!t.delta.empty()) row += std::to_string(argmax_or_npos(t.delta));
  return row;
}

// ---------------------------------------------------------------------------
// Metrics

inline nlohmann::json metrics_json(const MetricsReport& m) {
  nlohmann::json j = {{"count", m.count}, {"MRR", m.mrr}, {"Mean", m.mean_rank}};
  for (const auto& [k, v] : m.recall) j["R@" + std::to_string(k)] = v;
  if (m.ndcg) j["NDCG"] = *m.ndcg;
  nlohmann::json dirs = nlohmann::json::object();
  for (const auto& info : kMetricInfo) dirs[info.name] = info.higher_is_better ? "higher" : "lower";
  j["better"] = dirs;
  return j;
}

inline const char* kAblationHeader = "variant,MRR,R@1,R@5,R@10,Mean,NDCG";

inline std::string ablation_row(std::string_view variant, const MetricsReport& m) {
  auto recall = [&](std::size_t k) {
    auto it = m.recall.find(k);
    return it == m.recall.end() ? std::string{} : format_double(it->second);
  };
  return std::string(variant) + "," + format_double(m.mrr) + "," + recall(1) + "," + recall(5) + "," + recall(10) +
         "," + format_double(m.mean_rank) + "," + (m.ndcg ? format_double(*m.ndcg) : std::string{});
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << text;
  if (!os) throw FormatError("failed writing " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace dualvd
