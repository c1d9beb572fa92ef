#include "spst/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "spst/errors.hpp"

namespace spst {

namespace {

uint32_t rd_u32(const uint8_t* p) {
  return (uint32_t)p[0] | ((uint32_t)p[1] << 8) | ((uint32_t)p[2] << 16) |
         ((uint32_t)p[3] << 24);
}
uint16_t rd_u16(const uint8_t* p) { return (uint16_t)(p[0] | (p[1] << 8)); }

void wr_u32(std::vector<uint8_t>& o, uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back((uint8_t)((v >> (8 * i)) & 0xff));
}
void wr_u16(std::vector<uint8_t>& o, uint16_t v) {
  o.push_back((uint8_t)(v & 0xff));
  o.push_back((uint8_t)(v >> 8));
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open wav file: " + path);
  std::vector<uint8_t> b((std::istreambuf_iterator<char>(f)),
                         std::istreambuf_iterator<char>());
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 ||
      std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw DataError("not a RIFF/WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const uint8_t* data = nullptr;
  uint32_t data_len = 0;
  size_t p = 12;
  while (p + 8 <= b.size()) {
    const uint32_t len = rd_u32(b.data() + p + 4);
    const uint8_t* body = b.data() + p + 8;
    if (p + 8 + len > b.size()) throw DataError("wav chunk overruns the file: " + path);
    if (std::memcmp(b.data() + p, "fmt ", 4) == 0) {
      if (len < 16) throw DataError("short fmt chunk: " + path);
      format = rd_u16(body);
      channels = rd_u16(body + 2);
      rate = rd_u32(body + 4);
      bits = rd_u16(body + 14);
    } else if (std::memcmp(b.data() + p, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    p += 8 + len + (len & 1);
  }
  if (!channels || !rate) throw DataError("wav has no fmt chunk: " + path);
  if (!data) throw DataError("wav has no data chunk: " + path);

  WavData w;
  w.sample_rate = (int)rate;
  w.samples.assign(channels, {});
  if (format == 1 && bits == 16) {
    const int64_t n = data_len / (2 * channels);
    for (auto& ch : w.samples) ch.resize((size_t)n);
    for (int64_t i = 0; i < n; ++i)
      for (int c = 0; c < channels; ++c) {
        const int16_t s = (int16_t)rd_u16(data + (i * channels + c) * 2);
        w.samples[(size_t)c][(size_t)i] = (float)(s / 32768.0);
      }
  } else if (format == 3 && bits == 32) {
    const int64_t n = data_len / (4 * channels);
    for (auto& ch : w.samples) ch.resize((size_t)n);
    for (int64_t i = 0; i < n; ++i)
      for (int c = 0; c < channels; ++c) {
        float v;
        std::memcpy(&v, data + (i * channels + c) * 4, 4);
        w.samples[(size_t)c][(size_t)i] = v;
      }
  } else {
    throw DataError("unsupported wav encoding (want 16-bit PCM or 32-bit float): " + path);
  }
  return w;
}

void write_wav(const std::string& path, const WavData& w, int bits_per_sample) {
  SPST_CHECK(bits_per_sample == 16 || bits_per_sample == 32, "wav bits must be 16 or 32");
  SPST_CHECK(w.channels() >= 1 && w.sample_rate >= 1, "empty wav");
  for (const auto& ch : w.samples)
    SPST_CHECK((int64_t)ch.size() == w.frames(), "ragged wav channels");

  const int ch_n = w.channels();
  const int64_t n = w.frames();
  const int bytes = bits_per_sample / 8;
  const uint32_t data_len = (uint32_t)(n * ch_n * bytes);
  std::vector<uint8_t> o;
  o.reserve(44 + data_len);
  o.insert(o.end(), {'R', 'I', 'F', 'F'});
  wr_u32(o, 36 + data_len);
  o.insert(o.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  wr_u32(o, 16);
  wr_u16(o, bits_per_sample == 16 ? 1 : 3);
  wr_u16(o, (uint16_t)ch_n);
  wr_u32(o, (uint32_t)w.sample_rate);
  wr_u32(o, (uint32_t)(w.sample_rate * ch_n * bytes));
  wr_u16(o, (uint16_t)(ch_n * bytes));
  wr_u16(o, (uint16_t)bits_per_sample);
  o.insert(o.end(), {'d', 'a', 't', 'a'});
  wr_u32(o, data_len);
  if (bits_per_sample == 16) {
    for (int64_t i = 0; i < n; ++i)
      for (int c = 0; c < ch_n; ++c) {
        const double v = std::clamp((double)w.samples[(size_t)c][(size_t)i], -1.0,
                                    32767.0 / 32768.0);
        wr_u16(o, (uint16_t)(int16_t)std::lrint(v * 32768.0));
      }
  } else {
    for (int64_t i = 0; i < n; ++i)
      for (int c = 0; c < ch_n; ++c) {
        const float v = w.samples[(size_t)c][(size_t)i];
        uint8_t raw[4];
        std::memcpy(raw, &v, 4);
        o.insert(o.end(), raw, raw + 4);
      }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write wav file: " + path);
  f.write((const char*)o.data(), (std::streamsize)o.size());
  if (!f) throw DataError("wav write failed: " + path);
}

}  // namespace spst
