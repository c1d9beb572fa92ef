#include "spst/streaming.hpp"

#include <cmath>
#include <cstring>

#include "spst/fft.hpp"
#include "spst/kernels.hpp"

namespace spst {

namespace {

template <typename T>
void elu_inplace(TensorT<T>& x) {
  for (auto& v : x.data) v = v > T(0) ? v : T(std::expm1((double)v));
}

// Causal conv over an unbounded time axis. Keeps the last kt-1 input slices
// (frequency already same-padded) so each step's valid conv continues the
// batch conv exactly; block lengths must be multiples of the stride so the
// output anchors stay aligned across steps.
template <typename T>
struct ConvStream {
  const TensorT<T>* w = nullptr;
  const TensorT<T>* b = nullptr;
  int kt = 1, kf = 1, st = 1, sf = 1;
  bool preact = false;
  int64_t ci = 0, f_in = 0, fp = 0, pad_f_lo = 0;
  std::vector<T> ring;  // [ci, kt-1, fp]

  void init(const LayerSpec& L, const TensorT<T>& wt, const TensorT<T>& bt,
            int64_t in_f) {
    w = &wt;
    b = &bt;
    kt = L.kt;
    kf = L.kf;
    st = L.st;
    sf = L.sf;
    preact = L.preact;
    ci = L.in_ch;
    f_in = in_f;
    if (L.pad == PadSpec::kValid) {
      fp = in_f;
      pad_f_lo = 0;
    } else {
      const int64_t out_f = (in_f - 1) / sf + 1;
      const int64_t need = std::max<int64_t>(0, (out_f - 1) * sf + kf - in_f);
      fp = in_f + need;
      pad_f_lo = need / 2;
    }
    reset();
  }
  void reset() { ring.assign((size_t)(ci * (kt - 1) * fp), T(0)); }

  TensorT<T> step(const TensorT<T>& x) {
    SPST_CHECK(x.dim(0) == ci && x.dim(2) == f_in && x.dim(1) % st == 0,
               "conv stream block mismatch");
    TensorT<T> xin = x;
    if (preact) elu_inplace(xin);
    const int64_t m = xin.dim(1), hist = kt - 1, rows = hist + m;
    TensorT<T> cat({ci, rows, fp});
    std::fill(cat.data.begin(), cat.data.end(), T(0));
    for (int64_t c = 0; c < ci; ++c) {
      T* dst = cat.data.data() + c * rows * fp;
      std::memcpy(dst, ring.data() + c * hist * fp, sizeof(T) * (size_t)(hist * fp));
      const T* src = xin.data.data() + c * m * f_in;
      for (int64_t t = 0; t < m; ++t)
        std::memcpy(dst + (hist + t) * fp + pad_f_lo, src + t * f_in,
                    sizeof(T) * (size_t)f_in);
    }
    for (int64_t c = 0; c < ci; ++c)
      std::memcpy(ring.data() + c * hist * fp,
                  cat.data.data() + c * rows * fp + m * fp,
                  sizeof(T) * (size_t)(hist * fp));
    TensorT<T> out;
    conv2d_forward<T>(cat, *w, b->data.data(), PadSpec::kValid, st, sf, out);
    return out;
  }
};

// Streaming transposed conv: valid-transpose each block alone, fold in the
// carry from earlier blocks, emit the first m*st columns (bias applied once
// here) and keep the kt-st column tail as the next carry. The frequency crop
// at pad_f_lo reproduces the batch scatter's out-of-range drop.
template <typename T>
struct ConvTStream {
  const TensorT<T>* w = nullptr;
  const TensorT<T>* b = nullptr;
  int kt = 1, kf = 1, st = 1, sf = 1;
  bool preact = false;
  int64_t ci = 0, co = 0, f_in = 0, f_out = 0, pad_f_lo = 0;
  std::vector<T> carry;  // [co, kt-st, f_out]

  void init(const LayerSpec& L, const TensorT<T>& wt, const TensorT<T>& bt,
            int64_t in_f, int64_t out_f) {
    w = &wt;
    b = &bt;
    kt = L.kt;
    kf = L.kf;
    st = L.st;
    sf = L.sf;
    preact = L.preact;
    ci = L.in_ch;
    co = L.out_ch;
    f_in = in_f;
    f_out = out_f;
    if (L.pad == PadSpec::kValid) {
      pad_f_lo = 0;
    } else {
      const int64_t need = std::max<int64_t>(0, (in_f - 1) * sf + kf - out_f);
      pad_f_lo = need / 2;
    }
    reset();
  }
  void reset() { carry.assign((size_t)(co * (kt - st) * f_out), T(0)); }

  TensorT<T> step(const TensorT<T>& y) {
    SPST_CHECK(y.dim(0) == ci && y.dim(2) == f_in, "transposed stream block mismatch");
    TensorT<T> yin = y;
    if (preact) elu_inplace(yin);
    const int64_t m = yin.dim(1);
    const int64_t lt = (m - 1) * st + kt, lf = (f_in - 1) * sf + kf;
    TensorT<T> local;
    conv2d_transpose_forward<T>(yin, *w, nullptr, PadSpec::kValid, st, sf, lt, lf,
                                local);
    const int64_t emit_t = m * st, tail = kt - st;
    TensorT<T> out({co, emit_t, f_out});
    std::vector<T> next((size_t)(co * tail * f_out), T(0));
    for (int64_t c = 0; c < co; ++c) {
      const T* lc = local.data.data() + c * lt * lf + pad_f_lo;
      const T* cr = carry.data() + c * tail * f_out;
      T* oc = out.data.data() + c * emit_t * f_out;
      T* nx = next.data() + c * tail * f_out;
      const T bias = b->data[(size_t)c];
      for (int64_t t = 0; t < emit_t; ++t) {
        const T* l = lc + t * lf;
        T* o = oc + t * f_out;
        if (t < tail) {
          const T* cv = cr + t * f_out;
          for (int64_t f = 0; f < f_out; ++f) o[f] = l[f] + cv[f] + bias;
        } else {
          for (int64_t f = 0; f < f_out; ++f) o[f] = l[f] + bias;
        }
      }
      for (int64_t t = 0; t < tail; ++t) {
        const T* l = lc + (emit_t + t) * lf;
        T* n = nx + t * f_out;
        std::memcpy(n, l, sizeof(T) * (size_t)f_out);
        const int64_t ct = emit_t + t;  // leftover carry past this emit window
        if (ct < tail) {
          const T* cv = cr + ct * f_out;
          for (int64_t f = 0; f < f_out; ++f) n[f] += cv[f];
        }
      }
    }
    carry = std::move(next);
    return out;
  }
};

// Overlap-add synthesis with the same per-frame inverse transform and scale
// as the batch istft; samples are finalized (and safe to emit) once every
// frame overlapping them has been fed.
template <typename T>
struct OlaStream {
  int window = 0, hop = 0;
  double scale = 0;
  std::vector<double> acc;  // acc[0] is absolute sample index `base`
  int64_t base = 0, fed = 0;  // frames fed so far

  void init(int window_len, int hop_len) {
    window = window_len;
    hop = hop_len;
    auto taps = hann_taps(window);
    double wsum = 0;
    for (double w : *taps) wsum += w;
    scale = 1.0 / (window * (wsum / hop));
    reset();
  }
  void reset() {
    acc.clear();
    base = 0;
    fed = 0;
  }

  // frames [2, m, nbins]; emits finalized samples at absolute indices >= skip
  void feed(const TensorT<T>& frames, int64_t skip, std::vector<T>& out) {
    const int64_t m = frames.dim(1), nbins = frames.dim(2);
    RealFft& fft = fft_for(window);
    std::vector<double> sp(window + 2), fr(window);
    const T* re = frames.data.data();
    const T* im = re + m * nbins;
    for (int64_t k = 0; k < m; ++k) {
      const int64_t t = fed + k;
      const int64_t need = t * hop + window - base;
      if ((int64_t)acc.size() < need) acc.resize((size_t)need, 0.0);
      std::fill(sp.begin(), sp.end(), 0.0);
      for (int64_t bb = 0; bb < nbins; ++bb) {
        sp[2 * bb] = (double)re[k * nbins + bb];
        sp[2 * bb + 1] = (double)im[k * nbins + bb];
      }
      sp[1] = 0.0;
      if (nbins == window / 2 + 1) sp[window + 1] = 0.0;
      fft.inverse(sp.data(), fr.data());
      double* o = acc.data() + (t * hop - base);
      for (int i = 0; i < window; ++i) o[i] += fr[i] * scale;
    }
    fed += m;
    const int64_t final_upto = fed * hop;
    int64_t from = std::max(base, skip);
    for (int64_t s = from; s < final_upto; ++s) out.push_back((T)acc[s - base]);
    if (final_upto > base) {
      const int64_t drop = final_upto - base;
      acc.erase(acc.begin(), acc.begin() + drop);
      base = final_upto;
    }
  }
};

int64_t enc_in_f(const ResolvedGen& rg, int i) { return rg.f_chain[(size_t)i]; }

int64_t dec_out_f(const ResolvedGen& rg, int j) {
  const int S = (int)rg.dec.size() - 1;
  return j == 0 ? rg.dec[0].kf : rg.f_chain[(size_t)(S - j)];
}

}  // namespace

// ---------------------------------------------------------------- encoder

template <typename T>
struct StreamEncoder<T>::Impl {
  ModelConfig cfg;
  ResolvedGen rg;
  const NormalizedParams<T>* P;
  // layers x trunks (audio channels through fusion_index, one after)
  std::vector<std::vector<ConvStream<T>>> layers;
  std::vector<std::vector<T>> buf;  // per channel, buf[c][0] at sample `base`
  std::vector<TensorT<T>> group;    // per channel [2, fpe, bins]
  int64_t base = 0, total = 0, next_frame = 0;
  bool flushed = false;

  explicit Impl(const ModelConfig& c, const NormalizedParams<T>* params)
      : cfg(c), P(params) {
    validate(cfg);
    rg = resolve_generator(cfg);
    const int S = (int)rg.enc.size() - 1;
    layers.resize((size_t)(S + 1));
    for (int i = 0; i <= S; ++i) {
      const int trunks = i <= rg.fusion_index ? cfg.audio_channels : 1;
      layers[(size_t)i].resize((size_t)trunks);
      for (auto& cs : layers[(size_t)i])
        cs.init(rg.enc[(size_t)i], P->enc_w[(size_t)i], P->enc_b[(size_t)i],
                enc_in_f(rg, i));
    }
    reset();
  }

  void reset() {
    for (auto& lv : layers)
      for (auto& cs : lv) cs.reset();
    buf.assign((size_t)cfg.audio_channels, {});
    group.assign((size_t)cfg.audio_channels,
                 TensorT<T>({2, cfg.frames_per_embedding, cfg.stft.bins()}));
    base = 0;
    total = 0;
    next_frame = 0;
    flushed = false;
  }

  // frame `next_frame` of channel c into group row `row`; the sample window
  // may run past the real tail only during flush (zeros there)
  void load_frame(int c, int64_t row) {
    const int window = cfg.stft.window_len, hop = cfg.stft.hop;
    const int64_t nbins = cfg.stft.bins();
    auto taps = hann_taps(window);
    RealFft& fft = fft_for(window);
    std::vector<double> fr(window), sp(window + 2);
    const int64_t off = next_frame * hop - base;
    const auto& bc = buf[(size_t)c];
    for (int i = 0; i < window; ++i) {
      const int64_t s = off + i;
      const double v = s < (int64_t)bc.size() ? (double)bc[(size_t)s] : 0.0;
      fr[i] = v * (*taps)[i];
    }
    fft.forward(fr.data(), sp.data());
    auto& gt = group[(size_t)c];
    T* re = gt.data.data() + row * nbins;
    T* im = gt.data.data() + (cfg.frames_per_embedding + row) * nbins;
    for (int64_t bb = 0; bb < nbins; ++bb) {
      re[bb] = (T)sp[2 * bb];
      im[bb] = (T)sp[2 * bb + 1];
    }
  }

  std::vector<T> net_step() {
    const int A = cfg.audio_channels;
    const int S = (int)rg.enc.size() - 1;
    std::vector<TensorT<T>> xs(group.begin(), group.end());
    for (int i = 0; i <= rg.fusion_index; ++i)
      for (int c = 0; c < A; ++c) xs[(size_t)c] = layers[(size_t)i][(size_t)c].step(xs[(size_t)c]);
    TensorT<T> x;
    if (A > 1) {
      int64_t ch = 0;
      for (const auto& v : xs) ch += v.dim(0);
      x = TensorT<T>({ch, xs[0].dim(1), xs[0].dim(2)});
      T* dst = x.data.data();
      for (const auto& v : xs) {
        std::memcpy(dst, v.data.data(), sizeof(T) * (size_t)v.numel());
        dst += v.numel();
      }
    } else {
      x = std::move(xs[0]);
    }
    for (int i = rg.fusion_index + 1; i <= S; ++i) x = layers[(size_t)i][0].step(x);
    SPST_CHECK(x.dim(1) == 1 && x.dim(2) == 1, "encoder step extent");
    return std::vector<T>(x.data.begin(), x.data.end());
  }

  // extract frames while their windows fit below `limit` samples, stepping
  // the net on each completed group; cap < 0 means no frame-index cap
  int drain(int64_t limit, int64_t cap, std::vector<std::vector<T>>& embs) {
    const int window = cfg.stft.window_len, hop = cfg.stft.hop;
    const int fpe = cfg.frames_per_embedding;
    int emitted = 0;
    while (next_frame * hop + window <= limit && (cap < 0 || next_frame < cap)) {
      const int64_t row = next_frame % fpe;
      for (int c = 0; c < cfg.audio_channels; ++c) load_frame(c, row);
      ++next_frame;
      if (row == fpe - 1) {
        embs.push_back(net_step());
        ++emitted;
      }
      const int64_t keep_from = next_frame * hop;
      if (keep_from > base) {
        const int64_t drop = std::min<int64_t>(keep_from - base, (int64_t)buf[0].size());
        for (auto& bc : buf) bc.erase(bc.begin(), bc.begin() + drop);
        base += drop;
      }
    }
    return emitted;
  }

  int push(std::span<const std::span<const T>> samples, std::vector<std::vector<T>>& embs) {
    SPST_CHECK(!flushed, "push after flush (reset first)");
    SPST_CHECK((int)samples.size() == cfg.audio_channels, "channel count mismatch");
    for (int c = 1; c < cfg.audio_channels; ++c)
      SPST_CHECK(samples[(size_t)c].size() == samples[0].size(), "ragged channel push");
    for (int c = 0; c < cfg.audio_channels; ++c)
      buf[(size_t)c].insert(buf[(size_t)c].end(), samples[(size_t)c].begin(),
                            samples[(size_t)c].end());
    total += (int64_t)samples[0].size();
    return drain(total, -1, embs);
  }

  int flush(std::vector<std::vector<T>>& embs) {
    SPST_CHECK(!flushed, "double flush");
    flushed = true;
    const int64_t spe = cfg.samples_per_embedding();
    const int64_t t_emb = total / spe;
    if (t_emb == 0) return 0;
    const int64_t cap = t_emb * cfg.frames_per_embedding;
    // batch pads the analysis wave to n_use + hop; real samples past n_use
    // are kept, the remainder is zero (load_frame reads past-tail as zero)
    const int64_t n_pad = t_emb * spe + cfg.stft.hop;
    for (auto& bc : buf) {
      const int64_t want = n_pad - base;
      if ((int64_t)bc.size() > want) bc.resize((size_t)want);
    }
    return drain(n_pad, cap, embs);
  }
};

template <typename T>
StreamEncoder<T>::StreamEncoder(const ModelConfig& cfg, const NormalizedParams<T>* params)
    : impl_(std::make_unique<Impl>(cfg, params)) {}
template <typename T>
StreamEncoder<T>::~StreamEncoder() = default;
template <typename T>
StreamEncoder<T>::StreamEncoder(StreamEncoder&&) noexcept = default;
template <typename T>
StreamEncoder<T>& StreamEncoder<T>::operator=(StreamEncoder&&) noexcept = default;

template <typename T>
int StreamEncoder<T>::push(std::span<const std::span<const T>> samples,
                           std::vector<std::vector<T>>& embs) {
  return impl_->push(samples, embs);
}
template <typename T>
int StreamEncoder<T>::push(const std::vector<std::vector<T>>& samples,
                           std::vector<std::vector<T>>& embs) {
  std::vector<std::span<const T>> spans;
  for (const auto& s : samples) spans.emplace_back(s.data(), s.size());
  return impl_->push(std::span<const std::span<const T>>(spans), embs);
}
template <typename T>
int StreamEncoder<T>::flush(std::vector<std::vector<T>>& embs) {
  return impl_->flush(embs);
}
template <typename T>
void StreamEncoder<T>::reset() {
  impl_->reset();
}
template <typename T>
const ModelConfig& StreamEncoder<T>::config() const {
  return impl_->cfg;
}

// ---------------------------------------------------------------- decoder

template <typename T>
struct StreamDecoder<T>::Impl {
  ModelConfig cfg;
  ResolvedGen rg;
  const NormalizedParams<T>* P;
  std::vector<std::vector<ConvTStream<T>>> layers;  // layers x trunks
  std::vector<OlaStream<T>> ola;                    // per audio channel
  int64_t steps = 0, emitted = 0;
  bool flushed = false;

  explicit Impl(const ModelConfig& c, const NormalizedParams<T>* params)
      : cfg(c), P(params) {
    validate(cfg);
    rg = resolve_generator(cfg);
    const int S = (int)rg.dec.size() - 1;
    layers.resize((size_t)(S + 1));
    for (int j = 0; j <= S; ++j) {
      const int trunks =
          (j > rg.dec_split_after && cfg.audio_channels > 1) ? cfg.audio_channels : 1;
      const int64_t in_f = j == 0 ? 1 : dec_out_f(rg, j - 1);
      layers[(size_t)j].resize((size_t)trunks);
      for (auto& cs : layers[(size_t)j])
        cs.init(rg.dec[(size_t)j], P->dec_w[(size_t)j], P->dec_b[(size_t)j], in_f,
                dec_out_f(rg, j));
    }
    ola.resize((size_t)cfg.audio_channels);
    for (auto& o : ola) o.init(cfg.stft.window_len, cfg.stft.hop);
    reset();
  }

  void reset() {
    for (auto& lv : layers)
      for (auto& cs : lv) cs.reset();
    for (auto& o : ola) o.reset();
    steps = 0;
    emitted = 0;
    flushed = false;
  }

  int64_t step(const T* emb, std::vector<std::vector<T>>& out) {
    const int A = cfg.audio_channels;
    const int S = (int)rg.dec.size() - 1;
    if ((int)out.size() < A) out.resize((size_t)A);
    TensorT<T> e({cfg.embed_dim, 1, 1});
    std::memcpy(e.data.data(), emb, sizeof(T) * (size_t)cfg.embed_dim);
    std::vector<TensorT<T>> xs{std::move(e)};
    for (int j = 0; j <= S; ++j) {
      for (int c = 0; c < (int)xs.size(); ++c)
        xs[(size_t)c] = layers[(size_t)j][(size_t)c].step(xs[(size_t)c]);
      if (j == rg.dec_split_after && A > 1) {
        TensorT<T> x = std::move(xs[0]);
        const int64_t per = x.dim(0) / A, block = per * x.dim(1) * x.dim(2);
        xs.clear();
        for (int c = 0; c < A; ++c) {
          TensorT<T> y({per, x.dim(1), x.dim(2)});
          std::memcpy(y.data.data(), x.data.data() + c * block,
                      sizeof(T) * (size_t)block);
          xs.push_back(std::move(y));
        }
      }
    }
    const int64_t spe = cfg.samples_per_embedding();
    const size_t before = out[0].size();
    for (int c = 0; c < A; ++c) ola[(size_t)c].feed(xs[(size_t)c], spe, out[(size_t)c]);
    ++steps;
    const int64_t got = (int64_t)(out[0].size() - before);
    emitted += got;
    return got;
  }

  int64_t push(std::span<const T> emb, std::vector<std::vector<T>>& out) {
    SPST_CHECK(!flushed, "push after flush (reset first)");
    SPST_CHECK((int64_t)emb.size() == cfg.embed_dim, "embedding size mismatch");
    return step(emb.data(), out);
  }

  // the batch path appends one zero embedding as the look-ahead slot; feeding
  // it here drains the final embedding's samples
  int64_t flush(std::vector<std::vector<T>>& out) {
    SPST_CHECK(!flushed, "double flush");
    flushed = true;
    if (steps == 0) return 0;
    std::vector<T> zero((size_t)cfg.embed_dim, T(0));
    return step(zero.data(), out);
  }
};

template <typename T>
StreamDecoder<T>::StreamDecoder(const ModelConfig& cfg, const NormalizedParams<T>* params)
    : impl_(std::make_unique<Impl>(cfg, params)) {}
template <typename T>
StreamDecoder<T>::~StreamDecoder() = default;
template <typename T>
StreamDecoder<T>::StreamDecoder(StreamDecoder&&) noexcept = default;
template <typename T>
StreamDecoder<T>& StreamDecoder<T>::operator=(StreamDecoder&&) noexcept = default;

template <typename T>
int64_t StreamDecoder<T>::push(std::span<const T> emb, std::vector<std::vector<T>>& out) {
  return impl_->push(emb, out);
}
template <typename T>
int64_t StreamDecoder<T>::flush(std::vector<std::vector<T>>& out) {
  return impl_->flush(out);
}
template <typename T>
void StreamDecoder<T>::reset() {
  impl_->reset();
}
template <typename T>
const ModelConfig& StreamDecoder<T>::config() const {
  return impl_->cfg;
}

template class StreamEncoder<float>;
template class StreamEncoder<double>;
template class StreamDecoder<float>;
template class StreamDecoder<double>;

}  // namespace spst
