#include "spst/codec_net.hpp"

#include <cmath>
#include <cstring>

#include "spst/dsp.hpp"
#include "spst/errors.hpp"
#include "spst/kernels.hpp"

namespace spst {

GenParams init_model(const ModelConfig& cfg, uint64_t seed) {
  const ResolvedGen rg = resolve_generator(cfg);
  Rng rng(seed);
  GenParams p;
  auto make = [&](const LayerSpec& L) {
    const int64_t d0 = L.transposed ? L.in_ch : L.out_ch;
    const int64_t d1 = L.transposed ? L.out_ch : L.in_ch;
    ConvParams cp{Tensor({d0, d1, L.kt, L.kf}), Tensor({d0}), Tensor({L.out_ch})};
    const double a = 1.0 / std::sqrt((double)L.in_ch * L.kt * L.kf);
    for (auto& x : cp.v.data) x = a * (2.0 * rng.uniform() - 1.0);
    const int64_t per = d1 * L.kt * L.kf;
    for (int64_t c = 0; c < d0; ++c) {
      double ss = 1e-12;  // matches the weight-norm eps, so w == v at init
      const double* vp = cp.v.data.data() + c * per;
      for (int64_t i = 0; i < per; ++i) ss += vp[i] * vp[i];
      cp.g.data[c] = std::sqrt(ss);
    }
    return cp;
  };
  for (const auto& L : rg.enc) p.enc.push_back(make(L));
  for (const auto& L : rg.dec) p.dec.push_back(make(L));
  return p;
}

int64_t param_count(const GenParams& p) {
  int64_t n = 0;
  for_each_param(p, [&](const Tensor& t) { n += t.numel(); });
  return n;
}

FrameAlign frame_align(const ModelConfig& cfg, int64_t n) {
  const int64_t spe = cfg.samples_per_embedding();
  FrameAlign fa;
  fa.t_emb = n / spe;
  SPST_CHECK(fa.t_emb >= 1, "input shorter than one embedding");
  fa.n_use = fa.t_emb * spe;
  fa.n_pad = fa.n_use + cfg.stft.hop;  // final frame's look-back deficit
  return fa;
}

template <typename T>
std::vector<T> padded_channel(const T* x, int64_t n, const FrameAlign& fa) {
  std::vector<T> out((size_t)fa.n_pad, T(0));
  std::memcpy(out.data(), x, sizeof(T) * (size_t)std::min(n, fa.n_pad));
  return out;
}
template std::vector<float> padded_channel<float>(const float*, int64_t, const FrameAlign&);
template std::vector<double> padded_channel<double>(const double*, int64_t, const FrameAlign&);

template <typename T>
NormalizedParams<T> materialize(const GenParams& p, double eps) {
  NormalizedParams<T> out;
  auto norm = [&](const ConvParams& cp, std::vector<TensorT<T>>& ws,
                  std::vector<TensorT<T>>& bs) {
    Tensor w(cp.v.shape);
    const int64_t d0 = cp.v.dim(0), per = cp.v.numel() / d0;
    for (int64_t c = 0; c < d0; ++c) {
      const double* vp = cp.v.data.data() + c * per;
      double ss = eps;
      for (int64_t i = 0; i < per; ++i) ss += vp[i] * vp[i];
      const double scale = cp.g.data[c] / std::sqrt(ss);
      double* wp = w.data.data() + c * per;
      for (int64_t i = 0; i < per; ++i) wp[i] = scale * vp[i];
    }
    ws.push_back(w.template cast<T>());
    bs.push_back(cp.b.template cast<T>());
  };
  for (const auto& cp : p.enc) norm(cp, out.enc_w, out.enc_b);
  for (const auto& cp : p.dec) norm(cp, out.dec_w, out.dec_b);
  return out;
}
template NormalizedParams<float> materialize<float>(const GenParams&, double);
template NormalizedParams<double> materialize<double>(const GenParams&, double);

namespace {

// Decoder transposed convs state their output size; the head (valid, kt=1,
// st=1) keeps the time extent, stage mirrors multiply it by the stride and
// restore the encoder-side frequency extent.
int64_t dec_out_f(const ResolvedGen& rg, int j) {
  const int S = (int)rg.dec.size() - 1;
  return j == 0 ? rg.dec[0].kf : rg.f_chain[S - j];
}

struct GraphBackend {
  Graph& g;
  const ModelConfig& cfg;
  const ResolvedGen& rg;
  const GenLeaves& P;
  std::vector<Val>* taps;
  using V = Val;

  void tap(V x) {
    if (taps) taps->push_back(x);
  }
  int64_t tdim(V x) const { return g.value(x).dim(1); }
  V stft_op(V wave) {
    return g.stft(wave, cfg.stft.window_len, cfg.stft.hop, cfg.stft.bins());
  }
  V istft_op(V spec) { return g.istft(spec, cfg.stft.window_len, cfg.stft.hop); }
  V layer(bool dec, int j, V x) {
    const LayerSpec& L = dec ? rg.dec[j] : rg.enc[j];
    const auto& pp = dec ? P.dec[j] : P.enc[j];
    if (L.preact) x = g.elu(x);
    const Val w = g.weight_norm(pp.v, pp.g);
    if (!L.transposed) return g.conv2d(x, w, pp.b, L.pad, L.st, L.sf);
    const int64_t in_t = g.value(x).dim(1);
    const int64_t out_t = j == 0 ? in_t : in_t * L.st;
    return g.conv2d_transpose(x, w, pp.b, L.pad, L.st, L.sf, out_t, dec_out_f(rg, j));
  }
  V concat_ch(std::span<const V> xs) { return g.concat(xs, 0); }
  std::vector<V> split_ch(V x, int a) {
    const int64_t per = g.value(x).dim(0) / a;
    std::vector<V> out;
    for (int c = 0; c < a; ++c) out.push_back(g.slice(x, 0, c * per, per));
    return out;
  }
  V append_zero_time(V x) {
    const Tensor& t = g.value(x);
    const Val z = g.constant(Tensor({t.dim(0), 1, t.dim(2)}));
    const Val parts[2] = {x, z};
    return g.concat(parts, 1);
  }
  V slice_wave(V w, int64_t start, int64_t len) { return g.slice(w, 0, start, len); }
};

template <typename T>
struct EvalBackend {
  const ModelConfig& cfg;
  const ResolvedGen& rg;
  const NormalizedParams<T>& P;
  Trace<T>* trace;
  bool dec_side = false;
  int cur_layer = 0, cur_trunk = 0;
  using V = TensorT<T>;

  void tap(const V& x) {
    if (trace) trace->items.push_back({dec_side, cur_layer, cur_trunk, x});
  }
  int64_t tdim(const V& x) const { return x.dim(1); }
  V stft_op(const V& wave) {
    std::vector<double> w(wave.data.begin(), wave.data.end());
    Tensor sp = stft(w.data(), (int64_t)w.size(), cfg.stft.window_len, cfg.stft.hop,
                     cfg.stft.bins());
    return sp.template cast<T>();
  }
  V istft_op(const V& spec) {
    Tensor sp(spec.shape);
    for (int64_t i = 0; i < sp.numel(); ++i) sp.data[i] = (double)spec.data[i];
    return istft(sp, cfg.stft.window_len, cfg.stft.hop).template cast<T>();
  }
  V layer(bool dec, int j, V x) {
    const LayerSpec& L = dec ? rg.dec[j] : rg.enc[j];
    const auto& w = dec ? P.dec_w[j] : P.enc_w[j];
    const auto& b = dec ? P.dec_b[j] : P.enc_b[j];
    if (L.preact)
      for (auto& v : x.data) v = v > T(0) ? v : T(std::expm1((double)v));
    TensorT<T> out;
    if (!L.transposed) {
      conv2d_forward<T>(x, w, b.data.data(), L.pad, L.st, L.sf, out);
    } else {
      const int64_t out_t = j == 0 ? x.dim(1) : x.dim(1) * L.st;
      conv2d_transpose_forward<T>(x, w, b.data.data(), L.pad, L.st, L.sf, out_t,
                                  dec_out_f(rg, j), out);
    }
    return out;
  }
  V concat_ch(std::span<const V> xs) {
    int64_t c = 0;
    for (const auto& x : xs) c += x.dim(0);
    V out({c, xs[0].dim(1), xs[0].dim(2)});
    T* dst = out.data.data();
    for (const auto& x : xs) {
      std::memcpy(dst, x.data.data(), sizeof(T) * (size_t)x.numel());
      dst += x.numel();
    }
    return out;
  }
  std::vector<V> split_ch(const V& x, int a) {
    const int64_t per = x.dim(0) / a, block = per * x.dim(1) * x.dim(2);
    std::vector<V> out;
    for (int c = 0; c < a; ++c) {
      V y({per, x.dim(1), x.dim(2)});
      std::memcpy(y.data.data(), x.data.data() + c * block, sizeof(T) * (size_t)block);
      out.push_back(std::move(y));
    }
    return out;
  }
  V append_zero_time(const V& x) {
    const int64_t d = x.dim(0), t = x.dim(1), f = x.dim(2);
    V out({d, t + 1, f});
    for (int64_t c = 0; c < d; ++c)
      std::memcpy(out.data.data() + c * (t + 1) * f, x.data.data() + c * t * f,
                  sizeof(T) * (size_t)(t * f));
    return out;
  }
  V slice_wave(const V& w, int64_t start, int64_t len) {
    V out({len});
    std::memcpy(out.data.data(), w.data.data() + start, sizeof(T) * (size_t)len);
    return out;
  }
};

template <class B>
auto encode_net(B& b, const ModelConfig& cfg, const ResolvedGen& rg,
                std::span<const typename B::V> waves) {
  using V = typename B::V;
  const int S = (int)rg.enc.size() - 1;
  std::vector<V> xs;
  for (const auto& w : waves) xs.push_back(b.stft_op(w));
  for (int i = 0; i <= rg.fusion_index; ++i) {
    if constexpr (requires { b.cur_layer; }) b.cur_layer = i;
    for (int c = 0; c < (int)xs.size(); ++c) {
      if constexpr (requires { b.cur_trunk; }) b.cur_trunk = c;
      xs[c] = b.layer(false, i, xs[c]);
      b.tap(xs[c]);
    }
  }
  V x = xs.size() == 1 ? xs[0] : b.concat_ch(std::span<const V>(xs));
  for (int i = rg.fusion_index + 1; i <= S; ++i) {
    if constexpr (requires { b.cur_layer; }) {
      b.cur_layer = i;
      b.cur_trunk = 0;
    }
    x = b.layer(false, i, x);
    b.tap(x);
  }
  return x;  // [dim, t_emb, 1]
}

template <class B>
auto decode_net(B& b, const ModelConfig& cfg, const ResolvedGen& rg, typename B::V emb) {
  using V = typename B::V;
  const int A = cfg.audio_channels;
  const int64_t t_emb = b.tdim(emb);
  if constexpr (requires { b.dec_side; }) b.dec_side = true;
  std::vector<V> xs{b.append_zero_time(emb)};
  for (int j = 0; j < (int)rg.dec.size(); ++j) {
    if constexpr (requires { b.cur_layer; }) b.cur_layer = j;
    for (int c = 0; c < (int)xs.size(); ++c) {
      if constexpr (requires { b.cur_trunk; }) b.cur_trunk = c;
      xs[c] = b.layer(true, j, xs[c]);
      b.tap(xs[c]);
    }
    if (j == rg.dec_split_after && A > 1) xs = b.split_ch(xs[0], A);
  }
  // the first embedding's worth of output frames belongs to the look-ahead
  // shift; the synthesis beyond it is fully overlapped interior
  const int64_t spe = cfg.samples_per_embedding();
  std::vector<V> out;
  for (auto& y : xs) out.push_back(b.slice_wave(b.istft_op(y), spe, t_emb * spe));
  return out;
}

}  // namespace

template <typename T>
TensorT<T> encode_batch(const ModelConfig& cfg, const ResolvedGen& rg,
                        const NormalizedParams<T>& P, const TensorT<T>& audio,
                        Trace<T>* trace) {
  SPST_CHECK(audio.rank() == 2 && audio.dim(0) == cfg.audio_channels,
             "encode_batch wants audio [channels, samples]");
  const FrameAlign fa = frame_align(cfg, audio.dim(1));
  EvalBackend<T> b{cfg, rg, P, trace};
  std::vector<TensorT<T>> waves;
  for (int c = 0; c < cfg.audio_channels; ++c) {
    TensorT<T> w({fa.n_pad});
    w.data = padded_channel(audio.data.data() + c * audio.dim(1), audio.dim(1), fa);
    waves.push_back(std::move(w));
  }
  TensorT<T> e3 = encode_net(b, cfg, rg, std::span<const TensorT<T>>(waves));
  SPST_CHECK(e3.dim(2) == 1 && e3.dim(1) == fa.t_emb, "encoder produced unexpected extent");
  TensorT<T> e({e3.dim(0), e3.dim(1)});
  e.data = std::move(e3.data);
  return e;
}

template <typename T>
TensorT<T> decode_batch(const ModelConfig& cfg, const ResolvedGen& rg,
                        const NormalizedParams<T>& P, const TensorT<T>& emb,
                        Trace<T>* trace) {
  SPST_CHECK(emb.rank() == 2 && emb.dim(0) == cfg.embed_dim,
             "decode_batch wants embeddings [dim, t]");
  EvalBackend<T> b{cfg, rg, P, trace};
  TensorT<T> e3({emb.dim(0), emb.dim(1), 1});
  e3.data = emb.data;
  std::vector<TensorT<T>> waves = decode_net(b, cfg, rg, std::move(e3));
  const int64_t n = waves[0].numel();
  TensorT<T> out({(int64_t)waves.size(), n});
  for (size_t c = 0; c < waves.size(); ++c)
    std::memcpy(out.data.data() + c * n, waves[c].data.data(), sizeof(T) * (size_t)n);
  return out;
}

template <typename T>
TensorT<T> reconstruct_batch(const ModelConfig& cfg, const ResolvedGen& rg,
                             const NormalizedParams<T>& P, const Codebooks& books,
                             const TensorT<T>& audio, int r) {
  TensorT<T> e = encode_batch(cfg, rg, P, audio);
  if (r > 0) {
    Tensor ed({e.dim(0), e.dim(1)});
    for (int64_t i = 0; i < ed.numel(); ++i) ed.data[i] = (double)e.data[i];
    e = dequantize_map(quantize_map(ed, books, r), books).template cast<T>();
  }
  return decode_batch(cfg, rg, P, e);
}

template TensorT<float> encode_batch<float>(const ModelConfig&, const ResolvedGen&,
                                            const NormalizedParams<float>&,
                                            const TensorT<float>&, Trace<float>*);
template TensorT<double> encode_batch<double>(const ModelConfig&, const ResolvedGen&,
                                              const NormalizedParams<double>&,
                                              const TensorT<double>&, Trace<double>*);
template TensorT<float> decode_batch<float>(const ModelConfig&, const ResolvedGen&,
                                            const NormalizedParams<float>&,
                                            const TensorT<float>&, Trace<float>*);
template TensorT<double> decode_batch<double>(const ModelConfig&, const ResolvedGen&,
                                              const NormalizedParams<double>&,
                                              const TensorT<double>&, Trace<double>*);
template TensorT<float> reconstruct_batch<float>(const ModelConfig&, const ResolvedGen&,
                                                 const NormalizedParams<float>&,
                                                 const Codebooks&, const TensorT<float>&, int);
template TensorT<double> reconstruct_batch<double>(const ModelConfig&, const ResolvedGen&,
                                                   const NormalizedParams<double>&,
                                                   const Codebooks&, const TensorT<double>&, int);

GenLeaves param_leaves(Graph& g, const GenParams& p, bool requires_grad) {
  GenLeaves out;
  for (const auto& cp : p.enc)
    out.enc.push_back({g.leaf(cp.v, requires_grad), g.leaf(cp.g, requires_grad),
                       g.leaf(cp.b, requires_grad)});
  for (const auto& cp : p.dec)
    out.dec.push_back({g.leaf(cp.v, requires_grad), g.leaf(cp.g, requires_grad),
                       g.leaf(cp.b, requires_grad)});
  return out;
}

Val build_encoder(Graph& g, const ModelConfig& cfg, const ResolvedGen& rg, const GenLeaves& P,
                  std::span<const Val> waves, std::vector<Val>* taps) {
  SPST_CHECK((int)waves.size() == cfg.audio_channels, "one wave per audio channel");
  GraphBackend b{g, cfg, rg, P, taps};
  return encode_net(b, cfg, rg, waves);
}

std::vector<Val> build_decoder(Graph& g, const ModelConfig& cfg, const ResolvedGen& rg,
                               const GenLeaves& P, Val emb, std::vector<Val>* taps) {
  GraphBackend b{g, cfg, rg, P, taps};
  return decode_net(b, cfg, rg, emb);
}

}  // namespace spst
