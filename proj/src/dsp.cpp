#include "spst/dsp.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <map>
#include <mutex>

#include "spst/errors.hpp"
#include "spst/kernels.hpp"

namespace spst {

namespace {
std::mutex g_plan_mutex;  // FFTW planning is not thread-safe; execution is
}

RealFft::RealFft(int n) : n_(n) {
  SPST_CHECK(n >= 2 && n % 2 == 0, "FFT size must be even and >= 2");
  buf_r_ = fftw_alloc_real(n);
  buf_c_ = fftw_alloc_complex(n / 2 + 1);
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  plan_fwd_ = fftw_plan_dft_r2c_1d(n, buf_r_, (fftw_complex*)buf_c_, FFTW_ESTIMATE);
  plan_inv_ = fftw_plan_dft_c2r_1d(n, (fftw_complex*)buf_c_, buf_r_, FFTW_ESTIMATE);
  SPST_CHECK(plan_fwd_ && plan_inv_, "FFTW planning failed");
}

RealFft::~RealFft() {
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  fftw_destroy_plan((fftw_plan)plan_fwd_);
  fftw_destroy_plan((fftw_plan)plan_inv_);
  fftw_free(buf_r_);
  fftw_free(buf_c_);
}

void RealFft::forward(const double* in, double* out_ri) {
  std::memcpy(buf_r_, in, sizeof(double) * size_t(n_));
  fftw_execute((fftw_plan)plan_fwd_);
  std::memcpy(out_ri, buf_c_, sizeof(double) * size_t(n_ + 2));
}

void RealFft::inverse(const double* in_ri, double* out) {
  std::memcpy(buf_c_, in_ri, sizeof(double) * size_t(n_ + 2));
  fftw_execute((fftw_plan)plan_inv_);
  std::memcpy(out, buf_r_, sizeof(double) * size_t(n_));
}

RealFft& fft_for(int n) {
  thread_local std::map<int, std::unique_ptr<RealFft>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

std::shared_ptr<const std::vector<double>> hann_taps(int n) {
  thread_local std::map<int, std::shared_ptr<const std::vector<double>>> cache;
  auto& slot = cache[n];
  if (!slot) {
    auto taps = std::make_shared<std::vector<double>>(n);
    for (int i = 0; i < n; ++i)
      (*taps)[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n));
    slot = std::move(taps);
  }
  return slot;
}

MelConfig make_mel_config(int s, int sample_rate) {
  MelConfig cfg;
  cfg.s = s;
  cfg.alpha = std::sqrt(s / 2.0);
  cfg.fmax = sample_rate / 2.0;
  return cfg;
}

int64_t stft_frame_count(int64_t n, int window, int hop) {
  SPST_CHECK(n >= window, "signal shorter than the analysis window");
  return (n - window) / hop + 1;
}

Tensor stft(const double* wave, int64_t n, int window, int hop, int nbins) {
  SPST_CHECK(nbins >= 1 && nbins <= window / 2 + 1, "bad bin count");
  const int64_t frames = stft_frame_count(n, window, hop);
  auto taps = hann_taps(window);
  RealFft& fft = fft_for(window);
  std::vector<double> fr(window), sp(window + 2);
  Tensor out({2, frames, nbins});
  double* re = out.data.data();
  double* im = re + frames * nbins;
  for (int64_t t = 0; t < frames; ++t) {
    const double* s = wave + t * hop;
    for (int i = 0; i < window; ++i) fr[i] = s[i] * (*taps)[i];
    fft.forward(fr.data(), sp.data());
    for (int b = 0; b < nbins; ++b) {
      re[t * nbins + b] = sp[2 * b];
      im[t * nbins + b] = sp[2 * b + 1];
    }
  }
  return out;
}

Tensor istft(const Tensor& spec, int window, int hop) {
  SPST_CHECK(spec.rank() == 3 && spec.dim(0) == 2, "istft wants [2,T,F]");
  const int64_t frames = spec.dim(1), nbins = spec.dim(2);
  SPST_CHECK(nbins <= window / 2 + 1, "istft bin count exceeds window");
  const int64_t n = (frames - 1) * hop + window;
  auto taps = hann_taps(window);
  double wsum = 0;
  for (double w : *taps) wsum += w;
  const double scale = 1.0 / (window * (wsum / hop));
  RealFft& fft = fft_for(window);
  std::vector<double> sp(window + 2), fr(window);
  Tensor out({n});
  const double* re = spec.data.data();
  const double* im = re + frames * nbins;
  for (int64_t t = 0; t < frames; ++t) {
    std::fill(sp.begin(), sp.end(), 0.0);
    for (int64_t b = 0; b < nbins; ++b) {
      sp[2 * b] = re[t * nbins + b];
      sp[2 * b + 1] = im[t * nbins + b];
    }
    sp[1] = 0.0;
    if (nbins == window / 2 + 1) sp[window + 1] = 0.0;
    fft.inverse(sp.data(), fr.data());
    double* o = out.data.data() + t * hop;
    for (int i = 0; i < window; ++i) o[i] += fr[i] * scale;
  }
  return out;
}

Spectrogram stft(const std::vector<double>& wave, const StftConfig& cfg) {
  SPST_CHECK(cfg.hop == cfg.window_len / 2, "hop must be half the window");
  Spectrogram s;
  s.cfg = cfg;
  s.planes = stft(wave.data(), (int64_t)wave.size(), cfg.window_len, cfg.hop,
                  cfg.bins());
  return s;
}

std::vector<double> istft(const Spectrogram& spec) {
  SPST_CHECK(spec.planes.dim(2) == spec.cfg.bins(), "spectrogram/config mismatch");
  Tensor t = istft(spec.planes, spec.cfg.window_len, spec.cfg.hop);
  return t.data;
}

std::shared_ptr<const Tensor> mel_filterbank(const MelConfig& cfg) {
  const int nbins = cfg.s / 2 + 1;
  const double bin_hz = 2.0 * cfg.fmax / cfg.s;  // fmax == sr/2
  auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_to_hz = [](double m) {
    return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
  };
  const double mlo = hz_to_mel(cfg.fmin), mhi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[i] = mel_to_hz(mlo + (mhi - mlo) * i / (cfg.n_mels + 1));
  auto fb = std::make_shared<Tensor>(std::vector<int64_t>{nbins, cfg.n_mels});
  for (int b = 0; b < nbins; ++b) {
    const double f = b * bin_hz;
    for (int m = 0; m < cfg.n_mels; ++m) {
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      double w = 0;
      if (f > lo && f < hi)
        w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      fb->data[b * cfg.n_mels + m] = w;
    }
  }
  return fb;
}

Tensor mel_spectrogram(const double* wave, int64_t n, const MelConfig& cfg) {
  const int hop = cfg.s / 4;
  const int nbins = cfg.s / 2 + 1;
  Tensor spec = stft(wave, n, cfg.s, hop, nbins);
  const int64_t frames = spec.dim(1);
  Tensor mag({frames, nbins});
  const double* re = spec.data.data();
  const double* im = re + frames * nbins;
  for (int64_t i = 0; i < frames * nbins; ++i)
    mag.data[i] = std::hypot(re[i], im[i]);
  auto fb = mel_filterbank(cfg);
  Tensor out({frames, (int64_t)cfg.n_mels});
  gemm(CblasNoTrans, CblasNoTrans, frames, cfg.n_mels, nbins, 1.0,
       mag.data.data(), nbins, fb->data.data(), cfg.n_mels, 0.0, out.data.data(),
       cfg.n_mels);
  return out;
}

Tensor disc_input(const Spectrogram& spec) {
  const int64_t n = spec.planes.dim(1) * spec.planes.dim(2);
  Tensor out({3, spec.planes.dim(1), spec.planes.dim(2)});
  const double* re = spec.planes.data.data();
  const double* im = re + n;
  std::memcpy(out.data.data(), re, sizeof(double) * size_t(2 * n));
  double* mg = out.data.data() + 2 * n;
  for (int64_t i = 0; i < n; ++i) mg[i] = std::hypot(re[i], im[i]);
  return out;
}

}  // namespace spst
