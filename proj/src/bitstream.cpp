#include "spst/bitstream.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "spst/hash.hpp"

namespace spst {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'S', 'T'};

void put_u16(std::vector<uint8_t>& o, uint16_t v) {
  o.push_back((uint8_t)(v & 0xff));
  o.push_back((uint8_t)(v >> 8));
}
void put_u32(std::vector<uint8_t>& o, uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back((uint8_t)((v >> (8 * i)) & 0xff));
}

struct Reader {
  std::span<const uint8_t> b;
  size_t p = 0;
  uint8_t u8() { return b[p++]; }
  uint16_t u16() {
    uint16_t v = (uint16_t)(b[p] | (b[p + 1] << 8));
    p += 2;
    return v;
  }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= (uint32_t)b[p + i] << (8 * i);
    p += 4;
    return v;
  }
};

std::vector<CodeFrame> unpack(const StreamHeader& h, const uint8_t* payload,
                              int64_t n_frames) {
  std::vector<CodeFrame> frames((size_t)n_frames);
  uint64_t acc = 0;
  int nbits = 0;
  size_t byte = 0;
  const uint32_t mask = (1u << h.vocab_bits) - 1;
  for (auto& f : frames) {
    f.codes.resize(h.depth);
    for (int l = 0; l < h.depth; ++l) {
      while (nbits < h.vocab_bits) {
        acc |= (uint64_t)payload[byte++] << nbits;
        nbits += 8;
      }
      f.codes[(size_t)l] = (int32_t)(acc & mask);
      acc >>= h.vocab_bits;
      nbits -= h.vocab_bits;
    }
  }
  return frames;
}

StreamHeader parse_header(std::span<const uint8_t> bytes) {
  if (bytes.size() < StreamHeader::kBytes)
    throw TruncationError("stream shorter than the 38-byte header: " +
                          std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic, want SPST");
  Reader r{bytes, 4};
  const uint8_t version = r.u8();
  if (version != StreamHeader::kVersion)
    throw FormatError("unsupported stream version " + std::to_string(version));
  StreamHeader h;
  h.sample_rate = r.u32();
  h.audio_channels = r.u8();
  h.window_len = r.u16();
  h.hop = r.u16();
  h.embedding_rate = r.u16();
  h.depth = r.u8();
  h.vocab_bits = r.u8();
  h.frame_count = r.u32();
  std::memcpy(h.model_id.data(), bytes.data() + r.p, 16);
  if (h.vocab_bits < 1 || h.vocab_bits > 24)
    throw FormatError("vocab_bits " + std::to_string(h.vocab_bits) + " out of range");
  if (h.depth < 1) throw FormatError("zero stream depth");
  return h;
}

}  // namespace

StreamHeader make_header(const ModelConfig& cfg, const std::array<uint8_t, 16>& id,
                         int depth, int64_t frame_count) {
  SPST_CHECK(depth >= 1 && depth <= cfg.rvq.levels && depth <= 255, "bad stream depth");
  SPST_CHECK(frame_count >= 0 && frame_count <= (int64_t)UINT32_MAX, "bad frame count");
  const double er = cfg.embedding_rate();
  SPST_CHECK(er == std::floor(er) && er >= 1 && er <= 65535,
             "embedding rate must be a small integer");
  int bits = 0;
  while ((1 << bits) < cfg.rvq.vocab) ++bits;
  SPST_CHECK((1 << bits) == cfg.rvq.vocab, "vocab must be a power of two to pack");
  StreamHeader h;
  h.sample_rate = (uint32_t)cfg.sample_rate;
  h.audio_channels = (uint8_t)cfg.audio_channels;
  h.window_len = (uint16_t)cfg.stft.window_len;
  h.hop = (uint16_t)cfg.stft.hop;
  h.embedding_rate = (uint16_t)er;
  h.depth = (uint8_t)depth;
  h.vocab_bits = (uint8_t)bits;
  h.frame_count = (uint32_t)frame_count;
  h.model_id = id;
  return h;
}

std::array<uint8_t, 16> model_id_hash(const ModelConfig& cfg, const Codebooks& books) {
  std::ostringstream os;
  os << cfg.sample_rate << ' ' << cfg.audio_channels << ' ' << cfg.stft.window_len
     << ' ' << cfg.stft.hop << ' ' << cfg.embed_dim << ' ' << cfg.rvq.levels << ' '
     << cfg.rvq.vocab;
  const std::string head = os.str();
  std::vector<uint8_t> blob(head.begin(), head.end());
  const size_t off = blob.size();
  blob.resize(off + books.centroids.data.size() * sizeof(double));
  std::memcpy(blob.data() + off, books.centroids.data.data(),
              books.centroids.data.size() * sizeof(double));
  return fnv128(blob.data(), blob.size());
}

int64_t payload_bytes(const StreamHeader& h) {
  const int64_t bits = (int64_t)h.frame_count * h.depth * h.vocab_bits;
  return (bits + 7) / 8;
}

std::vector<uint8_t> write_stream(const StreamHeader& h, std::span<const CodeFrame> frames) {
  SPST_CHECK(h.vocab_bits >= 1 && h.vocab_bits <= 24, "vocab_bits out of range");
  SPST_CHECK((int64_t)frames.size() == (int64_t)h.frame_count,
             "frame_count does not match the frame list");
  std::vector<uint8_t> out;
  out.reserve(StreamHeader::kBytes + (size_t)payload_bytes(h));
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(StreamHeader::kVersion);
  put_u32(out, h.sample_rate);
  out.push_back(h.audio_channels);
  put_u16(out, h.window_len);
  put_u16(out, h.hop);
  put_u16(out, h.embedding_rate);
  out.push_back(h.depth);
  out.push_back(h.vocab_bits);
  put_u32(out, h.frame_count);
  out.insert(out.end(), h.model_id.begin(), h.model_id.end());
  uint64_t acc = 0;
  int nbits = 0;
  const uint32_t limit = 1u << h.vocab_bits;
  for (const auto& f : frames) {
    SPST_CHECK((int)f.codes.size() == h.depth, "frame depth does not match the header");
    for (int32_t c : f.codes) {
      SPST_CHECK(c >= 0 && (uint32_t)c < limit, "code exceeds vocab_bits");
      acc |= (uint64_t)(uint32_t)c << nbits;
      nbits += h.vocab_bits;
      while (nbits >= 8) {
        out.push_back((uint8_t)(acc & 0xff));
        acc >>= 8;
        nbits -= 8;
      }
    }
  }
  if (nbits > 0) out.push_back((uint8_t)(acc & 0xff));
  return out;
}

std::pair<StreamHeader, std::vector<CodeFrame>> read_stream(std::span<const uint8_t> bytes) {
  StreamHeader h = parse_header(bytes);
  const int64_t want = payload_bytes(h);
  const int64_t got = (int64_t)bytes.size() - (int64_t)StreamHeader::kBytes;
  if (got < want)
    throw TruncationError("payload truncated: want " +
                          std::to_string((int64_t)h.frame_count * h.depth * h.vocab_bits) +
                          " bits (" + std::to_string(want) + " bytes), have " +
                          std::to_string(got * 8) + " bits");
  if (got > want)
    throw TrailingDataError("stream has " + std::to_string(got - want) +
                            " bytes of trailing garbage");
  return {h, unpack(h, bytes.data() + StreamHeader::kBytes, h.frame_count)};
}

std::pair<StreamHeader, std::vector<CodeFrame>> read_stream_prefix(
    std::span<const uint8_t> bytes) {
  StreamHeader h = parse_header(bytes);
  const int64_t got = (int64_t)bytes.size() - (int64_t)StreamHeader::kBytes;
  const int64_t frame_bits = (int64_t)h.depth * h.vocab_bits;
  int64_t n = got * 8 / frame_bits;
  if (n > (int64_t)h.frame_count) n = h.frame_count;
  return {h, unpack(h, bytes.data() + StreamHeader::kBytes, n)};
}

}  // namespace spst
