#include <cmath>
#include <vector>

#include "doctest.h"
#include "spst/codec_net.hpp"
#include "test_util.hpp"

using namespace spst;
using namespace spst::testutil;

namespace {

TensorT<double> rand_audio(const ModelConfig& cfg, int64_t n, Rng& rng) {
  TensorT<double> a({cfg.audio_channels, n});
  for (auto& x : a.data) x = rng.uniform() - 0.5;
  return a;
}

}  // namespace

TEST_CASE("init_model: deterministic, weight-norm gains make w equal v") {
  const ModelConfig cfg = tiny_model();
  const ResolvedGen rg = resolve_generator(cfg);
  GenParams a = init_model(cfg, 7);
  GenParams b = init_model(cfg, 7);
  GenParams c = init_model(cfg, 8);

  REQUIRE(a.enc.size() == rg.enc.size());
  REQUIRE(a.dec.size() == rg.dec.size());
  bool same = true, differs = false;
  int64_t counted = 0;
  for (size_t i = 0; i < a.enc.size(); ++i) {
    same = same && a.enc[i].v.data == b.enc[i].v.data && a.enc[i].g.data == b.enc[i].g.data;
    differs = differs || a.enc[i].v.data != c.enc[i].v.data;
    const LayerSpec& L = rg.enc[i];
    const int64_t d0 = L.transposed ? L.in_ch : L.out_ch;
    const int64_t d1 = L.transposed ? L.out_ch : L.in_ch;
    CHECK(a.enc[i].v.shape == std::vector<int64_t>{d0, d1, L.kt, L.kf});
    CHECK(a.enc[i].g.numel() == d0);
    CHECK(a.enc[i].b.numel() == L.out_ch);
    counted += a.enc[i].v.numel() + a.enc[i].g.numel() + a.enc[i].b.numel();
  }
  for (const auto& cp : a.dec) counted += cp.v.numel() + cp.g.numel() + cp.b.numel();
  CHECK(same);
  CHECK(differs);
  CHECK(param_count(a) == counted);

  // g is seeded with each slice's norm under the same eps, so w == v at init
  NormalizedParams<double> P = materialize<double>(a);
  for (size_t i = 0; i < a.enc.size(); ++i)
    CHECK(max_abs_diff(P.enc_w[i].data, a.enc[i].v.data) == 0.0);
  for (size_t i = 0; i < a.dec.size(); ++i)
    CHECK(max_abs_diff(P.dec_w[i].data, a.dec[i].v.data) == 0.0);

  // scaling g scales the materialized slice; ||w_slice|| == |g|
  a.enc[0].g.data[0] *= 2.5;
  NormalizedParams<double> Q = materialize<double>(a);
  const int64_t per = a.enc[0].v.numel() / a.enc[0].v.dim(0);
  double ss = 0;
  for (int64_t i = 0; i < per; ++i) ss += Q.enc_w[0].data[i] * Q.enc_w[0].data[i];
  CHECK(std::sqrt(ss) == doctest::Approx(std::abs(a.enc[0].g.data[0])).epsilon(1e-9));
}

TEST_CASE("frame_align floors to whole embeddings and pads one hop") {
  const ModelConfig cfg = tiny_model();
  const int64_t spe = cfg.samples_per_embedding();
  REQUIRE(spe == 128);

  FrameAlign fa = frame_align(cfg, 5 * spe);
  CHECK(fa.t_emb == 5);
  CHECK(fa.n_use == 5 * spe);
  CHECK(fa.n_pad == 5 * spe + cfg.stft.hop);

  fa = frame_align(cfg, 5 * spe + 127);  // partial embedding dropped
  CHECK(fa.t_emb == 5);
  CHECK(fa.n_use == 5 * spe);

  CHECK_THROWS_AS(frame_align(cfg, spe - 1), DimError);

  // padded_channel keeps real samples where the clip has them, zeros the rest
  std::vector<double> x(5 * spe + 20, 1.0);
  fa = frame_align(cfg, (int64_t)x.size());
  auto padded = padded_channel(x.data(), (int64_t)x.size(), fa);
  REQUIRE((int64_t)padded.size() == fa.n_pad);
  CHECK(padded[5 * spe + 19] == 1.0);
  CHECK(padded[5 * spe + 20] == 0.0);
  CHECK(padded.back() == 0.0);
}

TEST_CASE("graph builders and value-path inference agree") {
  const ModelConfig cfg = tiny_model();
  const ResolvedGen rg = resolve_generator(cfg);
  GenParams params = init_model(cfg, 21);
  NormalizedParams<double> P = materialize<double>(params);
  Rng rng(22);
  const int64_t n = 6 * cfg.samples_per_embedding();
  TensorT<double> audio = rand_audio(cfg, n, rng);

  TensorT<double> emb = encode_batch(cfg, rg, P, audio);
  REQUIRE(emb.shape == std::vector<int64_t>{cfg.embed_dim, 6});

  Graph g;
  GenLeaves leaves = param_leaves(g, params, false);
  FrameAlign fa = frame_align(cfg, n);
  std::vector<Val> waves;
  for (int c = 0; c < cfg.audio_channels; ++c) {
    Tensor w({fa.n_pad});
    w.data = padded_channel(audio.data.data() + c * n, n, fa);
    waves.push_back(g.constant(std::move(w)));
  }
  Val gemb = build_encoder(g, cfg, rg, leaves, waves);
  REQUIRE(g.value(gemb).shape == std::vector<int64_t>{cfg.embed_dim, 6, 1});
  CHECK(max_abs_diff(g.value(gemb).data, emb.data) < 1e-12);

  TensorT<double> out = decode_batch(cfg, rg, P, emb);
  REQUIRE(out.shape == std::vector<int64_t>{cfg.audio_channels, n});
  std::vector<Val> gout = build_decoder(g, cfg, rg, leaves, gemb);
  REQUIRE((int)gout.size() == cfg.audio_channels);
  for (int c = 0; c < cfg.audio_channels; ++c)
    CHECK(max_abs_diff(g.value(gout[c]).data,
                       std::span(out.data).subspan(c * n, n)) < 1e-12);
}

TEST_CASE("float path tracks the double path") {
  const ModelConfig cfg = tiny_model();
  const ResolvedGen rg = resolve_generator(cfg);
  GenParams params = init_model(cfg, 31);
  NormalizedParams<double> Pd = materialize<double>(params);
  NormalizedParams<float> Pf = materialize<float>(params);
  Rng rng(32);
  const int64_t n = 4 * cfg.samples_per_embedding();
  TensorT<double> audio = rand_audio(cfg, n, rng);
  TensorT<float> audiof({cfg.audio_channels, n});
  for (int64_t i = 0; i < audio.numel(); ++i) audiof.data[i] = (float)audio.data[i];

  TensorT<double> ed = encode_batch(cfg, rg, Pd, audio);
  TensorT<float> ef = encode_batch(cfg, rg, Pf, audiof);
  REQUIRE(ed.shape == ef.shape);
  double worst = 0;
  for (int64_t i = 0; i < ed.numel(); ++i)
    worst = std::max(worst, std::abs(ed.data[i] - (double)ef.data[i]));
  CHECK(worst < 1e-4);
}

TEST_CASE("encoder embeddings depend only on samples up to one hop past their span") {
  const ModelConfig cfg = tiny_model();
  const ResolvedGen rg = resolve_generator(cfg);
  NormalizedParams<double> P = materialize<double>(init_model(cfg, 41));
  Rng rng(42);
  const int64_t spe = cfg.samples_per_embedding();
  const int64_t t_emb = 8, n = t_emb * spe;
  TensorT<double> a = rand_audio(cfg, n, rng);

  // embedding t reads frames 4t..4t+3; the last frame ends hop past (t+1)*spe
  for (int64_t t0 : {2, 5}) {
    const int64_t m = (t0 + 1) * spe + cfg.stft.hop;
    TensorT<double> b = a;
    for (int64_t i = m; i < n; ++i) b.data[i] += 0.1;
    TensorT<double> ea = encode_batch(cfg, rg, P, a);
    TensorT<double> eb = encode_batch(cfg, rg, P, b);
    for (int64_t t = 0; t <= t0; ++t)
      for (int64_t d = 0; d < cfg.embed_dim; ++d)
        CHECK(ea.data[d * t_emb + t] == eb.data[d * t_emb + t]);
    double delta = 0;
    for (int64_t d = 0; d < cfg.embed_dim; ++d)
      delta = std::max(delta, std::abs(ea.data[d * t_emb + t0 + 1] - eb.data[d * t_emb + t0 + 1]));
    CHECK(delta > 0.0);
  }
}

TEST_CASE("decoder output slots depend on embeddings up to one step ahead") {
  const ModelConfig cfg = tiny_model();
  const ResolvedGen rg = resolve_generator(cfg);
  NormalizedParams<double> P = materialize<double>(init_model(cfg, 45));
  Rng rng(46);
  const int64_t spe = cfg.samples_per_embedding();
  const int64_t t_emb = 8;
  TensorT<double> e({cfg.embed_dim, t_emb});
  for (auto& x : e.data) x = rng.uniform() - 0.5;

  for (int64_t te : {3, 6}) {
    TensorT<double> e2 = e;
    for (int64_t d = 0; d < cfg.embed_dim; ++d) e2.data[d * t_emb + te] += 0.1;
    TensorT<double> ya = decode_batch(cfg, rg, P, e);
    TensorT<double> yb = decode_batch(cfg, rg, P, e2);
    const int64_t safe = (te - 1) * spe;  // lookahead of one embedding
    int64_t first_diff = -1;
    for (int64_t i = 0; i < ya.numel() && first_diff < 0; ++i)
      if (ya.data[i] != yb.data[i]) first_diff = i % (t_emb * spe);
    REQUIRE(first_diff >= 0);
    CHECK(first_diff >= safe);
    CHECK(first_diff < te * spe);
  }
}

TEST_CASE("identical stereo channels give identical pre-fusion trunk copies") {
  const ModelConfig cfg = tiny_model(2);
  const ResolvedGen rg = resolve_generator(cfg);
  NormalizedParams<double> P = materialize<double>(init_model(cfg, 51));
  Rng rng(52);
  const int64_t n = 4 * cfg.samples_per_embedding();
  TensorT<double> audio({2, n});
  for (int64_t i = 0; i < n; ++i)
    audio.data[i] = audio.data[n + i] = rng.uniform() - 0.5;

  Trace<double> tr;
  TensorT<double> emb = encode_batch(cfg, rg, P, audio, &tr);
  int twin_layers = 0;
  for (const auto& item : tr.items) {
    if (item.dec || item.trunk != 0) continue;
    for (const auto& twin : tr.items)
      if (!twin.dec && twin.layer == item.layer && twin.trunk == 1) {
        CHECK(max_abs_diff(item.out.data, twin.out.data) == 0.0);
        ++twin_layers;
      }
  }
  CHECK(twin_layers >= 1);

  // the decoder split promises shape, not channel symmetry: the fused tensor's
  // halves differ, so identical inputs still decode to distinct channels
  TensorT<double> out = decode_batch(cfg, rg, P, emb);
  REQUIRE(out.shape == std::vector<int64_t>{2, n});
  CHECK(max_abs_diff(std::span(out.data).subspan(0, n),
                     std::span(out.data).subspan(n, n)) > 0.0);
}

TEST_CASE("reconstruct_batch wires encode, quantize and decode together") {
  const ModelConfig cfg = tiny_model();
  const ResolvedGen rg = resolve_generator(cfg);
  NormalizedParams<double> P = materialize<double>(init_model(cfg, 61));
  Rng rng(62);
  const int64_t n = 6 * cfg.samples_per_embedding();
  TensorT<double> audio = rand_audio(cfg, n, rng);

  TensorT<double> emb = encode_batch(cfg, rg, P, audio);
  // books fitted to a different clip so quantizing this one is lossy
  TensorT<double> other = encode_batch(cfg, rg, P, rand_audio(cfg, n, rng));
  Codebooks books(cfg.rvq);
  std::vector<const double*> cols;
  std::vector<std::vector<double>> store(other.dim(1));
  for (int64_t t = 0; t < other.dim(1); ++t) {
    store[t].resize(cfg.embed_dim);
    for (int64_t d = 0; d < cfg.embed_dim; ++d) store[t][d] = other.data[d * other.dim(1) + t];
    cols.push_back(store[t].data());
  }
  init_codebooks(books, cols, rng);

  // r == 0 bypasses quantization entirely
  TensorT<double> direct = reconstruct_batch(cfg, rg, P, books, audio, 0);
  TensorT<double> want = decode_batch(cfg, rg, P, emb);
  CHECK(max_abs_diff(direct.data, want.data) == 0.0);

  const int r = 2;
  TensorT<double> viaq = reconstruct_batch(cfg, rg, P, books, audio, r);
  Tensor vq = dequantize_map(quantize_map(emb, books, r), books);
  TensorT<double> want_q = decode_batch(cfg, rg, P, vq);
  CHECK(max_abs_diff(viaq.data, want_q.data) == 0.0);
  CHECK(max_abs_diff(viaq.data, direct.data) > 0.0);  // quantization is lossy here
}
