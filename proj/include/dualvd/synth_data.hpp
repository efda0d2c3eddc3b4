#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dualvd/dialogue.hpp"
#include "dualvd/params.hpp"
#include "dualvd/text_encoders.hpp"

namespace dualvd {

// Shapes live only in the object features, states only in the dense captions,
// colours in both. Relations live in the relation embeddings.
struct GeneratorConfig {
  std::size_t train_dialogues = 64;
  std::size_t val_dialogues = 16;
  std::size_t rounds = 3;
  std::size_t objects = 8;
  std::size_t captions = 4;
  std::size_t candidates = 10;
  std::size_t values_per_attribute = 12;
  std::size_t d_obj = 64;
  std::size_t d_rel = 32;
  std::size_t max_len = 20;
  double noise_std = 0.1;

  static GeneratorConfig desk() { return {}; }

  static GeneratorConfig paper_scale() {
    GeneratorConfig c;
    c.rounds = 10;
    c.objects = 36;
    c.captions = 6;
    c.candidates = 100;
    c.values_per_attribute = 100;
    c.d_obj = 2048;
    c.d_rel = 512;
    c.max_len = 20;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"train_dialogues", c.train_dialogues}, {"val_dialogues", c.val_dialogues},
       {"rounds", c.rounds},                   {"objects", c.objects},
       {"captions", c.captions},               {"candidates", c.candidates},
       {"values_per_attribute", c.values_per_attribute},
       {"d_obj", c.d_obj},                     {"d_rel", c.d_rel},
       {"max_len", c.max_len},                 {"noise_std", c.noise_std}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c.train_dialogues = j.value("train_dialogues", c.train_dialogues);
  c.val_dialogues = j.value("val_dialogues", c.val_dialogues);
  c.rounds = j.value("rounds", c.rounds);
  c.objects = j.value("objects", c.objects);
  c.captions = j.value("captions", c.captions);
  c.candidates = j.value("candidates", c.candidates);
  c.values_per_attribute = j.value("values_per_attribute", c.values_per_attribute);
  c.d_obj = j.value("d_obj", c.d_obj);
  c.d_rel = j.value("d_rel", c.d_rel);
  c.max_len = j.value("max_len", c.max_len);
  c.noise_std = j.value("noise_std", c.noise_std);
}

// ---------------------------------------------------------------------------
// Word lists

enum class Attribute { Type, Color, Shape, State };

inline const std::vector<std::string>& attribute_base_words(Attribute a) {
  static const std::vector<std::string> types = {"dog", "cat",  "car",  "ball", "tree", "cup",
                                                 "bird", "chair", "lamp", "book", "boat", "kite"};
  static const std::vector<std::string> colors = {"red",    "blue",   "green", "yellow", "black", "white",
                                                  "orange", "purple", "pink",  "brown",  "gray",  "gold"};
  static const std::vector<std::string> shapes = {"round", "square", "flat",   "tall",  "long",   "thin",
                                                  "wide",  "curved", "pointy", "bumpy", "smooth", "boxy"};
  static const std::vector<std::string> states = {"new", "old",   "broken", "clean", "dirty", "wet",
                                                  "dry", "shiny", "dusty",  "warm",  "cold",  "empty"};
  switch (a) {
    case Attribute::Type: return types;
    case Attribute::Color: return colors;
    case Attribute::Shape: return shapes;
    case Attribute::State: return states;
  }
  return types;
}

// `count` distinct words for an attribute; lists beyond the base vocabulary
// continue with numbered variants ("dog2", "cat2", ...).
inline std::vector<std::string> attribute_words(Attribute a, std::size_t count) {
  const auto& base = attribute_base_words(a);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t round = i / base.size();
    out.push_back(round == 0 ? base[i] : base[i % base.size()] + std::to_string(round + 1));
  }
  return out;
}

enum class RelationLabel : std::uint8_t { Unknown, LeftOf, RightOf, Above, Below, Near };
inline constexpr std::size_t kRelationLabels = 6;

inline const char* relation_word(RelationLabel r) {
  switch (r) {
    case RelationLabel::Unknown: return "unknown";
    case RelationLabel::LeftOf: return "left_of";
    case RelationLabel::RightOf: return "right_of";
    case RelationLabel::Above: return "above";
    case RelationLabel::Below: return "below";
    case RelationLabel::Near: return "near";
  }
  return "unknown";
}

inline const std::vector<std::string>& function_words() {
  static const std::vector<std::string> words = {"what", "is",  "the", "?",  "shape", "color", "state",
                                                 "in",   "there", "a", "and", ","};
  return words;
}

// Fixed vocabulary for a generator configuration (independent of the seed).
inline Vocabulary synth_vocabulary(const GeneratorConfig& cfg) {
  Vocabulary v;
  for (const auto& w : function_words()) v.add(w);
  for (Attribute a : {Attribute::Type, Attribute::Color, Attribute::Shape, Attribute::State})
    for (const auto& w : attribute_words(a, cfg.values_per_attribute)) v.add(w);
  for (std::size_t r = 0; r < kRelationLabels; ++r) v.add(relation_word(static_cast<RelationLabel>(r)));
  return v;
}

// ---------------------------------------------------------------------------
// Prototypes: orthogonal directions, one per attribute value, scaled so
// feature entries are O(1).

struct Prototypes {
  Tensor type, color, shape;  // values × d_obj
  Tensor relation;            // kRelationLabels × d_rel
};

namespace detail {

inline Tensor orthogonal_rows(std::size_t rows, std::size_t dim, double norm, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor t = Tensor::zeros(rows, dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < dim; ++c) t(r, c) = gauss(rng);
    for (std::size_t q = 0; q < r; ++q) {
      double dot = 0.0;
      for (std::size_t c = 0; c < dim; ++c) dot += t(r, c) * t(q, c);
      for (std::size_t c = 0; c < dim; ++c) t(r, c) -= dot * t(q, c);
    }
    double len = 0.0;
    for (std::size_t c = 0; c < dim; ++c) len += t(r, c) * t(r, c);
    len = std::sqrt(len);
    for (std::size_t c = 0; c < dim; ++c) t(r, c) /= len;
  }
  for (double& v : t.values()) v *= norm;
  return t;
}

}  // namespace detail

inline void check_generator_config(const GeneratorConfig& c) {
  auto fail = [](const std::string& msg) { throw GenerationError("infeasible generator config: " + msg); };
  if (c.objects < 2) fail("need at least 2 objects");
  if (c.captions < 1) fail("need at least 1 dense caption");
  if (c.candidates < 2) fail("need at least 2 candidates");
  if (c.rounds < 1 || c.rounds > 10) fail("rounds must be in [1, 10]");
  if (c.captions > c.objects) fail("each dense caption describes a distinct object, so k <= N");
  if (c.candidates > c.values_per_attribute)
    fail("more distinct answers requested (" + std::to_string(c.candidates) + ") than the answer vocabulary holds (" +
         std::to_string(c.values_per_attribute) + ")");
  if (c.objects > c.values_per_attribute) fail("object types must be unique within a scene");
  if (c.d_obj < 3 * c.values_per_attribute) fail("d_obj too small for orthogonal attribute prototypes");
  if (c.d_rel < kRelationLabels) fail("d_rel too small for orthogonal relation prototypes");
  if (c.max_len < 8) fail("max_len must fit the longest template (8 tokens)");
  if (c.noise_std < 0.0) fail("noise_std must be non-negative");
}

inline Prototypes make_prototypes(const GeneratorConfig& c, std::uint64_t seed) {
  check_generator_config(c);
  std::mt19937_64 rng(hash_string("prototypes", seed));
  const std::size_t v = c.values_per_attribute;
  const double obj_norm = std::sqrt(static_cast<double>(c.d_obj) / 3.0);
  Tensor all = detail::orthogonal_rows(3 * v, c.d_obj, obj_norm, rng);
  auto block = [&](std::size_t b) {
    std::vector<double> data(all.values().begin() + b * v * c.d_obj, all.values().begin() + (b + 1) * v * c.d_obj);
    return Tensor::matrix(v, c.d_obj, std::move(data));
  };
  Prototypes p{block(0), block(1), block(2),
               detail::orthogonal_rows(kRelationLabels, c.d_rel, std::sqrt(static_cast<double>(c.d_rel)), rng)};
  return p;
}

// ---------------------------------------------------------------------------
// Worlds

struct SynthObject {
  std::size_t type = 0, color = 0, shape = 0, state = 0;
  double x = 0.0, y = 0.0;
};

struct SynthWorld {
  std::vector<SynthObject> objects;
  std::vector<RelationLabel> relations;  // n×n, entry i·n + j describes (i, j)
  std::vector<std::size_t> captioned;    // object index of each dense caption, in caption order

  RelationLabel relation(std::size_t i, std::size_t j) const { return relations[i * objects.size() + j]; }
};

// Spatial label of subject i relative to object j.
inline RelationLabel spatial_relation(const SynthObject& a, const SynthObject& b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  if (std::hypot(dx, dy) < 0.15) return RelationLabel::Near;
  if (std::abs(dx) >= std::abs(dy)) return dx < 0 ? RelationLabel::LeftOf : RelationLabel::RightOf;
  return dy < 0 ? RelationLabel::Below : RelationLabel::Above;
}

inline SynthWorld sample_world(const GeneratorConfig& c, std::mt19937_64& rng) {
  SynthWorld w;
  const std::size_t v = c.values_per_attribute;
  std::vector<std::size_t> types(v);
  std::iota(types.begin(), types.end(), std::size_t{0});
  std::shuffle(types.begin(), types.end(), rng);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  for (std::size_t i = 0; i < c.objects; ++i) {
    SynthObject o;
    o.type = types[i];
    o.color = pick(v);
    o.shape = pick(v);
    o.state = pick(v);
    o.x = unit_uniform(rng());
    o.y = unit_uniform(rng());
    w.objects.push_back(o);
  }
  const std::size_t n = c.objects;
  w.relations.resize(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      w.relations[i * n + j] = i == j ? RelationLabel::Unknown : spatial_relation(w.objects[i], w.objects[j]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  w.captioned.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(c.captions));
  return w;
}

inline SceneGraph render_graph(const GeneratorConfig& c, const Prototypes& p, const SynthWorld& w,
                               std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, c.noise_std);
  const std::size_t n = w.objects.size();
  Tensor obj = Tensor::zeros(n, c.d_obj);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = w.objects[i];
    for (std::size_t k = 0; k < c.d_obj; ++k)
      obj(i, k) = p.type(o.type, k) + p.color(o.color, k) + p.shape(o.shape, k) + (c.noise_std > 0 ? noise(rng) : 0.0);
  }
  Tensor rel = Tensor::zeros(n * n, c.d_rel);
  for (std::size_t e = 0; e < n * n; ++e) {
    const auto label = static_cast<std::size_t>(w.relations[e]);
    for (std::size_t k = 0; k < c.d_rel; ++k)
      rel(e, k) = p.relation(label, k) + (c.noise_std > 0 ? noise(rng) : 0.0);
  }
  return SceneGraph::make(std::move(obj), std::move(rel));
}

// ---------------------------------------------------------------------------
// Dialogues

struct SynthQuestion {
  std::string template_id;
  Modality modality;
  std::vector<std::string> words;
  Attribute answer_type;
  std::size_t answer = 0;  // index into the answer type's word list
};

namespace detail {

inline std::vector<SynthQuestion> question_pool(const GeneratorConfig& c, const SynthWorld& w) {
  const auto types = attribute_words(Attribute::Type, c.values_per_attribute);
  std::vector<SynthQuestion> pool;
  const std::size_t n = w.objects.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = w.objects[i];
    pool.push_back({"shape", Modality::Visual, {"what", "shape", "is", "the", types[o.type], "?"}, Attribute::Shape, o.shape});
  }
  for (std::size_t i : w.captioned) {
    const auto& o = w.objects[i];
    pool.push_back({"state", Modality::Semantic, {"what", "state", "is", "the", types[o.type], "in", "?"}, Attribute::State, o.state});
    pool.push_back({"color", Modality::Both, {"what", "color", "is", "the", types[o.type], "?"}, Attribute::Color, o.color});
  }
  // "what is <rel> the <x> ?" when exactly one object stands in that relation to x.
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t r = 1; r < kRelationLabels; ++r) {
      const auto label = static_cast<RelationLabel>(r);
      std::size_t hits = 0, subject = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != x && w.relation(j, x) == label) {
          ++hits;
          subject = j;
        }
      if (hits == 1)
        pool.push_back({"relation", Modality::Visual, {"what", "is", relation_word(label), "the", types[w.objects[x].type], "?"},
                        Attribute::Type, w.objects[subject].type});
    }
  return pool;
}

}  // namespace detail

// Samples `rounds` distinct questions; templates are drawn uniformly first so
// that the rarer semantic questions are not crowded out.
inline std::vector<SynthQuestion> sample_questions(const GeneratorConfig& c, const SynthWorld& w, std::mt19937_64& rng) {
  auto pool = detail::question_pool(c, w);
  if (pool.size() < c.rounds) throw GenerationError("world supports fewer questions than rounds requested");
  std::vector<SynthQuestion> chosen;
  std::vector<bool> used(pool.size(), false);
  const std::array<const char*, 4> templates = {"shape", "state", "color", "relation"};
  while (chosen.size() < c.rounds) {
    const std::string tmpl = templates[rng() % templates.size()];
    std::vector<std::size_t> options;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (!used[i] && pool[i].template_id == tmpl) options.push_back(i);
    if (options.empty()) continue;
    const std::size_t pick = options[rng() % options.size()];
    used[pick] = true;
    chosen.push_back(pool[pick]);
  }
  return chosen;
}

inline Dialogue make_dialogue(const GeneratorConfig& c, const Prototypes& p, const Vocabulary& vocab,
                              const std::string& id, std::mt19937_64& rng, SynthWorld* world_out = nullptr) {
  SynthWorld w = sample_world(c, rng);
  Dialogue d;
  d.id = id;
  d.graph = render_graph(c, p, w, rng);
  const auto types = attribute_words(Attribute::Type, c.values_per_attribute);
  const auto colors = attribute_words(Attribute::Color, c.values_per_attribute);
  const auto states = attribute_words(Attribute::State, c.values_per_attribute);

  // Global caption names three of the objects.
  std::vector<std::string> g = {"there", "is", "a", types[w.objects[0].type], ",", "a",
                                types[w.objects[1].type]};
  if (w.objects.size() > 2) g.insert(g.end(), {"and", "a", types[w.objects[2].type]});
  d.caption = TokenSequence::make(vocab.encode(g), c.max_len);
  for (std::size_t i : w.captioned) {
    const auto& o = w.objects[i];
    d.dense_captions.push_back(
        TokenSequence::make(vocab.encode({"the", colors[o.color], types[o.type], "is", states[o.state]}), c.max_len));
  }

  for (const SynthQuestion& q : sample_questions(c, w, rng)) {
    DialogueRound r;
    r.template_id = q.template_id;
    r.modality = q.modality;
    r.question = TokenSequence::make(vocab.encode(q.words), c.max_len);
    const auto words = attribute_words(q.answer_type, c.values_per_attribute);
    std::vector<std::size_t> distractors;
    for (std::size_t a = 0; a < words.size(); ++a)
      if (a != q.answer) distractors.push_back(a);
    std::shuffle(distractors.begin(), distractors.end(), rng);
    distractors.resize(c.candidates - 1);
    r.gt_index = static_cast<std::size_t>(rng() % c.candidates);
    distractors.insert(distractors.begin() + static_cast<std::ptrdiff_t>(r.gt_index), q.answer);
    for (std::size_t a : distractors) r.candidates.push_back(TokenSequence::make(vocab.encode({words[a]}), c.max_len));
    r.relevance.assign(c.candidates, 0.0);
    r.relevance[r.gt_index] = 1.0;
    d.rounds.push_back(std::move(r));
  }
  if (world_out) *world_out = std::move(w);
  return d;
}

struct SynthDataset {
  Vocabulary vocab;
  Prototypes prototypes;
  Dataset train;
  Dataset val;
  std::vector<SynthWorld> train_worlds;
  std::vector<SynthWorld> val_worlds;
};

// Deterministic in (config, seed): each dialogue draws from its own substream.
inline SynthDataset generate_dataset(const GeneratorConfig& c, std::uint64_t seed) {
  check_generator_config(c);
  SynthDataset out{synth_vocabulary(c), make_prototypes(c, seed), {}, {}, {}, {}};
  auto build = [&](const char* split, std::size_t count, Dataset& ds, std::vector<SynthWorld>& worlds) {
    for (std::size_t i = 0; i < count; ++i) {
      std::mt19937_64 rng(hash_combine(hash_string(split, seed), i));
      std::ostringstream id;
      id << split << '-' << std::setw(4) << std::setfill('0') << i;
      SynthWorld w;
      ds.dialogues.push_back(make_dialogue(c, out.prototypes, out.vocab, id.str(), rng, &w));
      worlds.push_back(std::move(w));
    }
  };
  build("train", c.train_dialogues, out.train, out.train_worlds);
  build("val", c.val_dialogues, out.val, out.val_worlds);
  return out;
}

}  // namespace dualvd
