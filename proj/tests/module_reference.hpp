#pragma once

// Loop-level reference implementations of the encoder equations, written
// against raw parameter tensors and independent of the tape.

#include <cmath>
#include <vector>

#include "dualvd/params.hpp"

namespace reference {

using dualvd::ParamStore;
using dualvd::Tensor;
using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat rows_of(const Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  return m;
}

inline Vec matvec(const Tensor& W, const Vec& x) {
  Vec y(W.rows(), 0.0);
  for (std::size_t r = 0; r < W.rows(); ++r)
    for (std::size_t c = 0; c < W.cols(); ++c) y[r] += W(r, c) * x[c];
  return y;
}

inline Vec affine(const Tensor& W, const Tensor& b, const Vec& x) {
  Vec y = matvec(W, x);
  for (std::size_t r = 0; r < y.size(); ++r) y[r] += b[r];
  return y;
}

inline Vec cat(const Vec& a, const Vec& b) {
  Vec out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline Vec hadamard(const Vec& a, const Vec& b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec softmax(const Vec& z) {
  double mx = z[0];
  for (double x : z) mx = std::max(mx, x);
  Vec e(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += e[i] = std::exp(z[i] - mx);
  for (double& x : e) x /= s;
  return e;
}

inline Vec sigmoid(const Vec& z) {
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-z[i]));
  return out;
}

// Scalar score w·x + b with w stored as 1×d.
inline double score(const ParamStore& p, const std::string& w, const std::string& b, const Vec& x) {
  return dot(rows_of(p.at(w))[0], x) + p.at(b)[0];
}

struct Visual {
  Vec gq;
  Mat alpha;     // n×n
  Mat weighted;  // n² rows
  Mat beta;
  Mat relation_aware;
  Vec gamma;
  Mat gates;
  Vec image;
};

inline Vec gated_question(const ParamStore& p, const Vec& h, const Vec& q) {
  Vec hq = cat(h, q);
  Vec gate = sigmoid(affine(p.at("visual.question_gate.W"), p.at("visual.question_gate.b"), hq));
  return affine(p.at("visual.question_proj.W"), p.at("visual.question_proj.b"), hadamard(gate, hq));
}

inline Vec attention_over_objects(const ParamStore& p, const Mat& objects, const Vec& q) {
  Vec logits;
  for (const auto& h : objects)
    logits.push_back(score(p, "object_attention.W_score", "object_attention.b_score",
                           hadamard(matvec(p.at("object_attention.W_object"), h), q)));
  return softmax(logits);
}

inline Visual visual(const ParamStore& p, const Mat& objects, const Mat& relations, const Vec& h, const Vec& q) {
  const std::size_t n = objects.size();
  Visual v;
  v.gq = gated_question(p, h, q);
  const Vec qa = matvec(p.at("visual.relation_attention.W_question"), v.gq);
  Vec logits;
  for (std::size_t e = 0; e < n * n; ++e)
    logits.push_back(score(p, "visual.relation_attention.W_score", "visual.relation_attention.b_score",
                           hadamard(matvec(p.at("visual.relation_attention.W_relation"), relations[e]), qa)));
  const Vec a = softmax(logits);
  v.alpha.assign(n, Vec(n));
  for (std::size_t e = 0; e < n * n; ++e) {
    v.alpha[e / n][e % n] = a[e];
    Vec r = relations[e];
    for (double& x : r) x *= a[e];
    v.weighted.push_back(r);
  }
  for (std::size_t i = 0; i < n; ++i) {
    Vec l;
    for (std::size_t j = 0; j < n; ++j) {
      Vec m = matvec(p.at("visual.graph_conv.W_message"), cat(objects[j], v.weighted[i * n + j]));
      l.push_back(score(p, "visual.graph_conv.W_score", "visual.graph_conv.b_score", hadamard(m, v.gq)));
    }
    v.beta.push_back(softmax(l));
    Vec agg(objects[0].size(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < agg.size(); ++k) agg[k] += v.beta[i][j] * objects[j][k];
    v.relation_aware.push_back(agg);
  }
  v.gamma = attention_over_objects(p, objects, q);
  v.image.assign(objects[0].size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    Vec both = cat(objects[i], v.relation_aware[i]);
    Vec gate = sigmoid(affine(p.at("visual.object_gate.W"), p.at("visual.object_gate.b"), both));
    v.gates.push_back(gate);
    Vec fused = affine(p.at("visual.object_proj.W"), p.at("visual.object_proj.b"), hadamard(gate, both));
    for (std::size_t k = 0; k < fused.size(); ++k) v.image[k] += v.gamma[i] * fused[k];
  }
  return v;
}

struct Semantic {
  Vec delta;
  Vec global, local, gate, text;
};

inline Semantic semantic(const ParamStore& p, const Vec& gq, const Vec& caption, const Mat& locals) {
  Semantic s;
  const Vec query = affine(p.at("semantic.query.W"), p.at("semantic.query.b"), gq);
  Mat items = {caption};
  items.insert(items.end(), locals.begin(), locals.end());
  Vec logits;
  for (const auto& it : items) logits.push_back(dot(query, affine(p.at("semantic.key.W"), p.at("semantic.key.b"), it)));
  s.delta = softmax(logits);
  s.global = caption;
  for (double& x : s.global) x *= s.delta[0];
  s.local.assign(caption.size(), 0.0);
  for (std::size_t i = 0; i < locals.size(); ++i)
    for (std::size_t k = 0; k < caption.size(); ++k) s.local[k] += s.delta[i + 1] * locals[i][k];
  Vec both = cat(s.global, s.local);
  s.gate = sigmoid(affine(p.at("semantic.caption_gate.W"), p.at("semantic.caption_gate.b"), both));
  s.text = affine(p.at("semantic.text_proj.W"), p.at("semantic.text_proj.b"), hadamard(s.gate, both));
  return s;
}

}  // namespace reference
