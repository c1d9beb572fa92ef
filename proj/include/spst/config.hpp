#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "spst/dsp.hpp"
#include "spst/kernels.hpp"

namespace spst {

struct RvqConfig {
  int levels = 64;  // R
  int vocab = 1024;
  int dim = 256;
  double ema_decay = 0.99;
  double bypass_rate = 0.5;
};

struct StageSpec {
  int kt, kf;  // kernel
  int st, sf;  // stride
  int mult;    // channel multiplier on the base depth
};

struct ModelConfig {
  int sample_rate = 48000;
  int audio_channels = 2;
  StftConfig stft;  // {960, 480}
  int embed_dim = 256;
  int frames_per_embedding = 4;
  int enc_base_depth = 32;  // C_e
  int dec_base_depth = 64;  // C_d
  std::vector<StageSpec> stages;
  int fusion_stage_index = 3;  // stages <= index run per audio channel
  int head_kf = 15;            // frequency-collapsing head kernel
  int decoder_lookahead_embeddings = 1;
  RvqConfig rvq;

  double embedding_rate() const {
    return (double)sample_rate / (stft.hop * frames_per_embedding);
  }
  int64_t samples_per_embedding() const {
    return (int64_t)stft.hop * frames_per_embedding;
  }
};

struct DiscConfig {
  std::vector<int> window_lengths{128, 256, 512, 1024, 2048, 4096};
  int base_depth = 32;  // C_0
  std::vector<StageSpec> stages;
  int fusion_stage_index = 1;
  double leaky_slope = 0.2;
};

struct LossWeights {
  double adv = 1.0;
  double feat = 100.0;
  double rec = 1.0;
  double com = 1.0;
};

struct TrainConfig {
  int64_t steps = 20000;
  int batch_size = 8;
  double example_len_s = 1.28;
  double lr = 1e-4;
  uint64_t seed = 1;
  std::string dataset_dir;
  int64_t checkpoint_every = 2000;
  std::string out_dir = ".";
  ModelConfig model;
  DiscConfig disc;
  LossWeights weights;

  int64_t example_samples() const {
    return (int64_t)std::llround(example_len_s * model.sample_rate);
  }
};

// One conv layer with resolved channel counts.
struct LayerSpec {
  int kt, kf, st, sf;
  int in_ch, out_ch;
  PadSpec pad;
  bool transposed;
  bool preact;  // ELU before the conv
};

// Full per-layer view of the generator. enc runs stage 0..S-1 then head;
// dec runs head first then the stages mirrored in reverse. Stages with
// index <= fusion_index (encoder) process each audio channel separately
// with shared weights; the decoder splits at the mirrored position.
struct ResolvedGen {
  std::vector<LayerSpec> enc;  // size S+1, head last
  std::vector<LayerSpec> dec;  // size S+1, head first
  int fusion_index;
  // dec layer indices > dec_split_after run per audio channel
  int dec_split_after;
  std::vector<int64_t> f_chain;  // encoder freq dims f_0..f_S (f_S == head_kf)
};

struct ResolvedDisc {
  std::vector<LayerSpec> stages;  // conv part of each stage (LN+act follow)
  LayerSpec head;
  int fusion_index;
};

ResolvedGen resolve_generator(const ModelConfig& cfg);
ResolvedDisc resolve_discriminator(const DiscConfig& cfg, int audio_channels);

void validate(const ModelConfig& cfg);
void validate(const TrainConfig& cfg);

ModelConfig full_scale_model();
DiscConfig full_scale_disc();
ModelConfig desk_model();
DiscConfig desk_disc();
TrainConfig desk_train();

// Flat "key = value" text, '#' comments. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& path);
TrainConfig parse_train_config_text(const std::string& text);
// Emits every key in the parse format; parse(render(t)) == t.
std::string render_train_config(const TrainConfig& cfg);

// FNV-1a over a canonical rendering of everything that affects training.
uint64_t config_hash(const TrainConfig& cfg);

std::vector<int> mel_windows();  // {64,...,2048}

}  // namespace spst
