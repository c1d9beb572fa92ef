#include <cmath>
#include <complex>
#include <vector>

#include "doctest.h"
#include "spst/config.hpp"
#include "spst/dsp.hpp"
#include "spst/fft.hpp"
#include "test_util.hpp"

using namespace spst;
using namespace spst::testutil;

namespace {

// Textbook O(n^2) DFT, the oracle for everything FFT-backed.
std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<std::complex<double>> out(n / 2 + 1);
  for (size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double a = -2.0 * M_PI * (double)k * (double)i / (double)n;
      acc += x[i] * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[k] = acc;
  }
  return out;
}

double hann(int i, int n) { return 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n)); }

}  // namespace

TEST_CASE("real fft matches the naive dft") {
  Rng rng(21);
  for (int n : {8, 16, 64, 96}) {
    auto x = rand_wave(n, rng, 1.0);
    RealFft& fft = fft_for(n);
    std::vector<double> out(2 * (n / 2 + 1));
    fft.forward(x.data(), out.data());
    auto want = naive_dft(x);
    for (size_t k = 0; k < want.size(); ++k) {
      CHECK(out[2 * k] == doctest::Approx(want[k].real()).epsilon(1e-9).scale(1.0));
      CHECK(out[2 * k + 1] == doctest::Approx(want[k].imag()).epsilon(1e-9).scale(1.0));
    }
    std::vector<double> back(n);
    fft.inverse(out.data(), back.data());
    for (int i = 0; i < n; ++i)
      CHECK(back[i] / n == doctest::Approx(x[i]).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("hann taps overlap-add to one") {
  for (int n : {8, 64, 320, 960}) {
    auto taps = hann_taps(n);
    REQUIRE((int)taps->size() == n);
    for (int i = 0; i < n; ++i)
      CHECK((*taps)[i] == doctest::Approx(hann(i, n)).epsilon(1e-14));
    const int hop = n / 2;
    for (int i = 0; i < hop; ++i)
      CHECK((*taps)[i] + (*taps)[i + hop] == doctest::Approx(1.0).epsilon(1e-13));
    CHECK((*taps)[0] == 0.0);
  }
}

TEST_CASE("stft frames match a naive windowed dft") {
  Rng rng(22);
  const int window = 32, hop = 16;
  const int64_t n = 96;
  auto wave = rand_wave(n, rng, 1.0);
  for (int nbins : {window / 2, window / 2 + 1}) {
    Tensor sp = stft(wave.data(), n, window, hop, nbins);
    const int64_t frames = stft_frame_count(n, window, hop);
    REQUIRE(sp.shape == std::vector<int64_t>{2, frames, nbins});
    for (int64_t t = 0; t < frames; ++t) {
      std::vector<double> fr(window);
      for (int i = 0; i < window; ++i) fr[i] = wave[t * hop + i] * hann(i, window);
      auto want = naive_dft(fr);
      for (int b = 0; b < nbins; ++b) {
        CHECK(sp.data[t * nbins + b] ==
              doctest::Approx(want[b].real()).epsilon(1e-9).scale(1.0));
        CHECK(sp.data[frames * nbins + t * nbins + b] ==
              doctest::Approx(want[b].imag()).epsilon(1e-9).scale(1.0));
      }
    }
  }
  CHECK_THROWS_AS(stft(wave.data(), 16, 32, 16, 16), DimError);
}

TEST_CASE("stft frame count") {
  CHECK(stft_frame_count(64, 64, 32) == 1);
  CHECK(stft_frame_count(95, 64, 32) == 1);
  CHECK(stft_frame_count(96, 64, 32) == 2);
  CHECK_THROWS_AS(stft_frame_count(63, 64, 32), DimError);
}

// Full half-spectrum analysis (Nyquist kept) round-trips any signal exactly
// on the interior, because shifted hann windows at 2x overlap sum to one.
// The codec band (window/2 bins) is only exact for signals without Nyquist
// content; the multisine case below covers that.
TEST_CASE("istft(stft(x)) is exact on the interior") {
  Rng rng(23);
  for (int window : {32, 64, 320, 960}) {
    const int hop = window / 2;
    const int64_t n = 6 * window;
    auto wave = rand_wave(n, rng, 1.0);
    Tensor sp = stft(wave.data(), n, window, hop, window / 2 + 1);
    Tensor back = istft(sp, window, hop);
    REQUIRE(back.numel() == n);
    // first and last frame windows are only half-covered; skip them
    double worst = 0;
    for (int64_t i = window; i < n - window; ++i)
      worst = std::max(worst, std::abs(back.data[i] - wave[i]));
    CHECK(worst < 1e-6);
    CHECK(worst < 1e-10);  // double OLA is exact, not merely close
  }
}

TEST_CASE("multisine below the dropped bin survives end to end") {
  const int window = 64, hop = 32;
  const int64_t n = 8 * window;
  std::vector<double> wave(n);
  // bins map to frequencies k/window cycles per sample; keep k <= window/2 - 2
  for (int64_t i = 0; i < n; ++i)
    for (int k : {3, 7, 30})
      wave[i] += 0.3 * std::sin(2.0 * M_PI * k * (double)i / window + 0.1 * k);
  Spectrogram sp = stft(wave, StftConfig{window, hop});
  auto back = istft(sp);
  for (int64_t i = window; i < n - window; ++i)
    CHECK(back[i] == doctest::Approx(wave[i]).epsilon(1e-9).scale(1.0));
}

TEST_CASE("istft synthesizes missing high bins as zero") {
  // spectrum of a pure Nyquist-adjacent bin is dropped by the codec band,
  // so reconstructing from the truncated planes must not blow up
  const int window = 16, hop = 8;
  Tensor full({2, 3, 9});
  Tensor cut({2, 3, 8});
  Rng rng(31);
  for (int64_t t = 0; t < 3; ++t)
    for (int b = 0; b < 8; ++b) {
      double re = rng.normal(), im = (b == 0) ? 0.0 : rng.normal();
      full.data[t * 9 + b] = re;
      full.data[3 * 9 + t * 9 + b] = im;
      cut.data[t * 8 + b] = re;
      cut.data[3 * 8 + t * 8 + b] = im;
    }
  Tensor a = istft(full, window, hop);
  Tensor b = istft(cut, window, hop);
  CHECK(max_abs_diff(a.data, b.data) < 1e-12);
}

TEST_CASE("mel filterbank geometry") {
  const int sr = 16000;
  for (int s : mel_windows()) {
    MelConfig mc = make_mel_config(s, sr);
    auto fb = mel_filterbank(mc);
    REQUIRE(fb->shape == std::vector<int64_t>{s / 2 + 1, mc.n_mels});
    CHECK(mc.alpha == doctest::Approx(std::sqrt(s / 2.0)));

    // nonnegative triangles; narrow low bands may miss every coarse bin of a
    // short window, but from 512 on each of the 64 filters catches a bin
    std::vector<double> peak(mc.n_mels, 0.0);
    bool neg = false;
    for (int64_t i = 0; i < fb->numel(); ++i) {
      neg = neg || fb->data[i] < 0.0;
      peak[i % mc.n_mels] = std::max(peak[i % mc.n_mels], fb->data[i]);
    }
    CHECK_FALSE(neg);
    if (s >= 512)
      for (int m = 0; m < mc.n_mels; ++m) CHECK(peak[m] > 0.0);

    // each filter's response against the HTK triangle evaluated directly
    auto to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    const double mlo = to_mel(mc.fmin), mhi = to_mel(mc.fmax);
    auto edge = [&](int m) {
      const double mel = mlo + (mhi - mlo) * m / (mc.n_mels + 1);
      return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
    };
    for (int m = 0; m < mc.n_mels; ++m) {
      const double lo = edge(m), mid = edge(m + 1), hi = edge(m + 2);
      for (int b = 0; b <= s / 2; b += std::max(1, s / 64)) {
        const double f = (double)b * sr / s;
        double want = 0.0;
        if (f > lo && f <= mid)
          want = (f - lo) / (mid - lo);
        else if (f > mid && f < hi)
          want = (hi - f) / (hi - mid);
        CHECK(fb->data[(int64_t)b * mc.n_mels + m] ==
              doctest::Approx(want).epsilon(1e-9).scale(1.0));
      }
    }
  }
}

TEST_CASE("mel spectrogram matches a naive computation") {
  Rng rng(24);
  const int s = 64, sr = 8000;
  const int64_t n = 160;
  auto wave = rand_wave(n, rng, 1.0);
  MelConfig mc = make_mel_config(s, sr);
  Tensor got = mel_spectrogram(wave.data(), n, mc);
  const int hop = s / 4;
  const int64_t frames = stft_frame_count(n, s, hop);
  REQUIRE(got.shape == std::vector<int64_t>{frames, mc.n_mels});
  auto fb = mel_filterbank(mc);
  for (int64_t t = 0; t < frames; ++t) {
    std::vector<double> fr(s);
    for (int i = 0; i < s; ++i) fr[i] = wave[t * hop + i] * hann(i, s);
    auto spec = naive_dft(fr);
    for (int m = 0; m < mc.n_mels; ++m) {
      double acc = 0.0;
      for (int b = 0; b <= s / 2; ++b)
        acc += std::abs(spec[b]) * fb->data[(int64_t)b * mc.n_mels + m];
      CHECK(got.data[t * mc.n_mels + m] ==
            doctest::Approx(acc).epsilon(1e-9).scale(1.0));
    }
  }
}

TEST_CASE("disc input stacks re, im, modulus") {
  Rng rng(25);
  const int window = 32;
  auto wave = rand_wave(96, rng, 1.0);
  Spectrogram sp = stft(wave, StftConfig{window, window / 2});
  Tensor di = disc_input(sp);
  const int64_t tf = sp.planes.dim(1) * sp.planes.dim(2);
  REQUIRE(di.shape == std::vector<int64_t>{3, sp.planes.dim(1), sp.planes.dim(2)});
  for (int64_t i = 0; i < tf; ++i) {
    CHECK(di.data[i] == sp.planes.data[i]);
    CHECK(di.data[tf + i] == sp.planes.data[tf + i]);
    CHECK(di.data[2 * tf + i] ==
          doctest::Approx(std::hypot(sp.planes.data[i], sp.planes.data[tf + i])));
  }
}
