#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spst/config.hpp"

namespace spst {

// One layer of the closed-form plan. Shapes are [C,T,F]; per-channel trunks
// report the single-trunk shape with copies = audio_channels (weights shared,
// so params are counted once).
struct LayerShape {
  std::string name;
  std::array<int64_t, 3> in;
  std::array<int64_t, 3> out;
  int64_t params;
  int copies;
};

struct ShapePlan {
  std::vector<LayerShape> enc;  // stages then head
  std::vector<LayerShape> dec;  // head then mirrored stages
  int64_t gen_params;           // every trainable scalar (v, g, bias)
  int64_t codebook_values;      // levels * vocab * dim (EMA state, not gradient-trained)
  double embedding_rate;        // embeddings per second
  int latency_embeddings;       // encoder aggregation + decoder look-ahead
  double latency_ms;
  int64_t n_samples;            // input length the time chain was computed for
  int64_t embeddings;           // T_emb for that input
  int64_t out_samples;          // samples decode() returns for those embeddings
};

struct DiscShapePlan {
  int window_len;
  std::vector<LayerShape> stages;  // conv+LN per stage
  LayerShape head;
  int64_t params;
};

// Closed-form plan for an input of n_samples (default: one second). The
// decoder chain is reported for the internally fed T_emb+1 embeddings (the
// look-ahead slot), matching the tensors the real network produces.
ShapePlan plan(const ModelConfig& cfg, int64_t n_samples = 0);

DiscShapePlan plan_disc(const DiscConfig& cfg, int audio_channels, int window_len,
                        int64_t n_samples);

int64_t total_disc_params(const DiscConfig& cfg, int audio_channels);

std::string format_plan(const ShapePlan& p);

}  // namespace spst
