#pragma once

#include <memory>
#include <vector>

#include "spst/fft.hpp"
#include "spst/tensor.hpp"

namespace spst {

// Analysis framing: Hann window, 2x overlap, frame t covers samples
// [t*hop, t*hop + window). Bins keep DC and drop Nyquist (F = window/2), the
// codec's band simply excludes the top bin. No FFT scaling, no window
// normalization; the inverse carries the 1/N.
struct StftConfig {
  int window_len = 960;
  int hop = 480;
  int bins() const { return window_len / 2; }
};

struct MelConfig {
  int s;           // window length, hop is s/4
  int n_mels = 64;
  double alpha;    // sqrt(s/2)
  double fmin = 0.0;
  double fmax;     // sample_rate / 2
};

MelConfig make_mel_config(int s, int sample_rate);

// One audio channel's complex STFT as stacked (real, imag) planes.
struct Spectrogram {
  Tensor planes;  // [2, T, F]
  StftConfig cfg;
};

int64_t stft_frame_count(int64_t n, int window, int hop);

// wave[n] -> [2,T,nbins]; nbins <= window/2 + 1 (codec uses window/2,
// mel analysis keeps the full half spectrum).
Tensor stft(const double* wave, int64_t n, int window, int hop, int nbins);
// [2,T,F] -> [(T-1)*hop + window] samples via plain overlap-add divided by
// the constant window sum. Missing high bins synthesize as zero.
Tensor istft(const Tensor& spec, int window, int hop);

Spectrogram stft(const std::vector<double>& wave, const StftConfig& cfg);
std::vector<double> istft(const Spectrogram& spec);

// Magnitude STFT (window s, hop s/4, all s/2+1 bins) through the triangular
// mel filterbank: [T_s, 64], entries >= 0.
Tensor mel_spectrogram(const double* wave, int64_t n, const MelConfig& cfg);

// (real, imag, modulus) planes for the discriminators.
Tensor disc_input(const Spectrogram& spec);

// Triangular filters, HTK mel scale 2595*log10(1+f/700), band edges uniform
// in mel between fmin and fmax, not area-normalized. Rows: FFT bins 0..s/2.
// Shared so graph nodes can hold it without copies.
std::shared_ptr<const Tensor> mel_filterbank(const MelConfig& cfg);

}  // namespace spst
