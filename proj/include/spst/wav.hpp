#pragma once

#include <string>
#include <vector>

namespace spst {

// Planar samples in [-1, 1); channels all the same length.
struct WavData {
  int sample_rate = 0;
  std::vector<std::vector<float>> samples;
  int channels() const { return (int)samples.size(); }
  int64_t frames() const { return samples.empty() ? 0 : (int64_t)samples[0].size(); }
};

// RIFF/WAVE, 16-bit PCM or 32-bit IEEE float.
WavData read_wav(const std::string& path);
void write_wav(const std::string& path, const WavData& w, int bits_per_sample = 16);

}  // namespace spst
