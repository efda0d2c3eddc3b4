#pragma once

#include <cstddef>

#include "dualvd/text_encoders.hpp"

namespace dualvd {

// Dimensions and regularisation shared by every module of the encoder.
struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_word = 16;
  bool second_source = true;  // concatenate a second embedding table
  std::size_t d_obj = 64;
  std::size_t d_rel = 32;
  std::size_t d_hid = 32;
  std::size_t d_att = 32;   // common space for attention products
  std::size_t d_fuse = 32;  // common space for image/text before fusion
  std::size_t max_len = 20;
  std::size_t history_len = 200;  // cap for the flattened history sequence
  double dropout = 0.0;

  EmbeddingConfig embedding() const { return {vocab_size, d_word, second_source}; }

  static ModelConfig desk() { return ModelConfig{}; }

  static ModelConfig paper_scale() {
    ModelConfig c;
    c.d_word = 300;
    c.d_obj = 2048;
    c.d_rel = 512;
    c.d_hid = 512;
    c.d_att = 512;
    c.d_fuse = 512;
    c.max_len = 20;
    c.history_len = 200;
    c.dropout = 0.5;
    return c;
  }
};

}  // namespace dualvd
