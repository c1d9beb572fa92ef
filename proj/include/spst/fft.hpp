#pragma once

#include <memory>
#include <vector>

namespace spst {

// Size-n real<->half-complex FFT, double precision. Plans use FFTW_ESTIMATE
// only: FFTW_MEASURE can choose different algorithms between runs, which
// would break bit-exact reproducibility of training.
class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int n() const { return n_; }
  // in: n reals; out: (n/2+1) interleaved (re,im) pairs
  void forward(const double* in, double* out_ri);
  // in: (n/2+1) interleaved pairs; out: n reals, unscaled (caller divides by n)
  void inverse(const double* in_ri, double* out);

 private:
  int n_;
  void* plan_fwd_;
  void* plan_inv_;
  double* buf_r_;
  void* buf_c_;
};

// Per-thread plan cache keyed by size.
RealFft& fft_for(int n);

// Periodic Hann taps, 0.5*(1 - cos(2*pi*m/n)); cached per size. Shifted
// copies at hop n/2 sum to exactly 1, which is what makes plain overlap-add
// synthesis an exact inverse.
std::shared_ptr<const std::vector<double>> hann_taps(int n);

}  // namespace spst
