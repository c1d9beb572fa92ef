#include "spst/shapes.hpp"

#include <sstream>

#include "spst/errors.hpp"

namespace spst {

// Deliberately re-derived here instead of calling the conv kernels: the plan
// is the oracle the built networks are checked against.
static int64_t chain_same(int64_t n, int stride) { return (n - 1) / stride + 1; }
static int64_t chain_valid(int64_t n, int k, int stride) {
  if (n < k) throw ConfigError("shape chain underflow: extent " + std::to_string(n) +
                               " smaller than kernel " + std::to_string(k));
  return (n - k) / stride + 1;
}

ShapePlan plan(const ModelConfig& cfg, int64_t n_samples) {
  validate(cfg);
  if (n_samples <= 0) n_samples = cfg.sample_rate;
  const int S = (int)cfg.stages.size();
  const int A = cfg.audio_channels;
  const int fuse = cfg.fusion_stage_index;
  const int Ce = cfg.enc_base_depth;
  const int Cd = cfg.dec_base_depth;

  ShapePlan p;
  p.n_samples = n_samples;
  p.embeddings = n_samples / ((int64_t)cfg.stft.hop * cfg.frames_per_embedding);
  if (p.embeddings < 1) throw ConfigError("input shorter than one embedding");
  p.out_samples = p.embeddings * cfg.stft.hop * cfg.frames_per_embedding;
  p.embedding_rate = cfg.embedding_rate();
  p.latency_embeddings = 1 + cfg.decoder_lookahead_embeddings;
  p.latency_ms = p.latency_embeddings * 1000.0 / p.embedding_rate;

  auto conv_params = [](int64_t ci, int64_t co, int kt, int kf, bool transposed) {
    // weight-norm direction v has the full kernel extent, gain g one value per
    // dim-0 slice (out channels, or in channels when transposed), bias per out
    return ci * co * kt * kf + (transposed ? ci : co) + co;
  };

  int64_t enc_t = (int64_t)cfg.frames_per_embedding * p.embeddings;
  int64_t f = cfg.stft.bins();
  p.gen_params = 0;
  for (int i = 0; i < S; ++i) {
    const auto& st = cfg.stages[i];
    const int64_t ci = i == 0 ? 2 : (int64_t)cfg.stages[i - 1].mult * Ce * (i == fuse + 1 ? A : 1);
    const int64_t co = (int64_t)st.mult * Ce;
    LayerShape L;
    L.name = "enc" + std::to_string(i);
    L.copies = i <= fuse ? A : 1;
    L.in = {ci, enc_t, f};
    enc_t = chain_same(enc_t, st.st);
    f = chain_same(f, st.sf);
    L.out = {co, enc_t, f};
    L.params = conv_params(ci, co, st.kt, st.kf, false);
    p.gen_params += L.params;
    p.enc.push_back(L);
  }
  {
    const int64_t ci = (int64_t)cfg.stages[S - 1].mult * Ce * (fuse == S - 1 ? A : 1);
    LayerShape L;
    L.name = "enc_head";
    L.copies = 1;
    L.in = {ci, enc_t, f};
    L.out = {cfg.embed_dim, enc_t, chain_valid(f, cfg.head_kf, 1)};
    if (L.out[2] != 1) throw ConfigError("head kernel does not collapse the frequency axis");
    L.params = conv_params(ci, cfg.embed_dim, 1, cfg.head_kf, false);
    p.gen_params += L.params;
    p.enc.push_back(L);
  }

  // Decoder: head first, then stages S-1..0 transposed. Fed one extra
  // embedding (the look-ahead slot).
  const int64_t t_dec0 = p.embeddings + 1;
  std::vector<int64_t> fc{cfg.stft.bins()};
  for (const auto& st : cfg.stages) fc.push_back(chain_same(fc.back(), st.sf));
  {
    const int64_t co = (int64_t)cfg.stages[S - 1].mult * Cd * (fuse == S - 1 ? A : 1);
    LayerShape L;
    L.name = "dec_head";
    L.copies = 1;
    L.in = {cfg.embed_dim, t_dec0, 1};
    L.out = {co, t_dec0, cfg.head_kf};
    L.params = conv_params(cfg.embed_dim, co, 1, cfg.head_kf, true);
    p.gen_params += L.params;
    p.dec.push_back(L);
  }
  int64_t dec_t = t_dec0;
  for (int i = S - 1; i >= 0; --i) {
    const auto& st = cfg.stages[i];
    const int64_t ci = (int64_t)st.mult * Cd;
    const int64_t co = i == 0 ? 2 : (int64_t)cfg.stages[i - 1].mult * Cd * (i == fuse + 1 ? A : 1);
    LayerShape L;
    L.name = "dec" + std::to_string(i);
    L.copies = i <= fuse ? A : 1;
    L.in = {ci, dec_t, fc[i + 1]};
    dec_t *= st.st;
    L.out = {co, dec_t, fc[i]};
    L.params = conv_params(ci, co, st.kt, st.kf, true);
    p.gen_params += L.params;
    p.dec.push_back(L);
  }
  p.codebook_values = (int64_t)cfg.rvq.levels * cfg.rvq.vocab * cfg.rvq.dim;
  return p;
}

DiscShapePlan plan_disc(const DiscConfig& cfg, int audio_channels, int window_len,
                        int64_t n_samples) {
  ResolvedDisc rd = resolve_discriminator(cfg, audio_channels);  // validates
  const int hop = window_len / 2;
  if (n_samples < window_len) throw ConfigError("input shorter than the discriminator window");
  DiscShapePlan p;
  p.window_len = window_len;
  p.params = 0;
  int64_t t = (n_samples - window_len) / hop + 1;
  int64_t f = window_len / 2;
  const int S = (int)cfg.stages.size();
  for (int i = 0; i < S; ++i) {
    const auto& st = cfg.stages[i];
    const int64_t ci =
        i == 0 ? 3
               : (int64_t)cfg.stages[i - 1].mult * cfg.base_depth *
                     (i == cfg.fusion_stage_index + 1 ? audio_channels : 1);
    const int64_t co = (int64_t)st.mult * cfg.base_depth;
    LayerShape L;
    L.name = "d" + std::to_string(i);
    L.copies = i <= cfg.fusion_stage_index ? audio_channels : 1;
    L.in = {ci, t, f};
    t = (t - 1) / st.st + 1;
    f = (f - 1) / st.sf + 1;
    L.out = {co, t, f};
    L.params = ci * co * st.kt * st.kf + co + 2 * co;  // conv w+b, LayerNorm gamma+beta
    p.params += L.params;
    p.stages.push_back(L);
  }
  const int64_t ci = (int64_t)cfg.stages[S - 1].mult * cfg.base_depth *
                     (cfg.fusion_stage_index == S - 1 ? audio_channels : 1);
  p.head = {"d_head", {ci, t, f}, {1, t, f}, ci * 1 * 3 * 3 + 1, 1};
  p.params += p.head.params;
  return p;
}

int64_t total_disc_params(const DiscConfig& cfg, int audio_channels) {
  int64_t total = 0;
  for (int w : cfg.window_lengths)
    total += plan_disc(cfg, audio_channels, w, 4 * w).params;
  return total;
}

std::string format_plan(const ShapePlan& p) {
  std::ostringstream s;
  auto row = [&](const LayerShape& L) {
    s << "  " << L.name << (L.copies > 1 ? " (x" + std::to_string(L.copies) + " shared)" : "")
      << ": [" << L.in[0] << ',' << L.in[1] << ',' << L.in[2] << "] -> [" << L.out[0] << ','
      << L.out[1] << ',' << L.out[2] << "]  params " << L.params << '\n';
  };
  s << "input: " << p.n_samples << " samples -> " << p.embeddings << " embeddings ("
    << p.embedding_rate << "/s)\n";
  s << "encoder:\n";
  for (const auto& L : p.enc) row(L);
  s << "decoder (fed " << p.embeddings + 1 << " embeddings incl. look-ahead):\n";
  for (const auto& L : p.dec) row(L);
  s << "generator params: " << p.gen_params << "\n";
  s << "codebook values: " << p.codebook_values << "\n";
  s << "latency: " << p.latency_embeddings << " embeddings = " << p.latency_ms << " ms\n";
  return s.str();
}

}  // namespace spst
