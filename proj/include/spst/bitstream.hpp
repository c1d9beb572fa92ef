#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "spst/config.hpp"
#include "spst/errors.hpp"
#include "spst/rvq.hpp"

namespace spst {

// Wrong magic, wrong version, or nonsense header fields.
class FormatError : public DataError {
 public:
  explicit FormatError(const std::string& msg) : DataError(msg) {}
};
// Payload shorter than the header promises.
class TruncationError : public DataError {
 public:
  explicit TruncationError(const std::string& msg) : DataError(msg) {}
};
// Bytes left over after the promised payload.
class TrailingDataError : public DataError {
 public:
  explicit TrailingDataError(const std::string& msg) : DataError(msg) {}
};

// On-disk/wire header; all multi-byte fields little-endian. 38 bytes total.
struct StreamHeader {
  static constexpr uint8_t kVersion = 1;
  static constexpr size_t kBytes = 38;
  uint32_t sample_rate = 0;
  uint8_t audio_channels = 0;
  uint16_t window_len = 0, hop = 0, embedding_rate = 0;
  uint8_t depth = 0;       // active RVQ depth r of this stream
  uint8_t vocab_bits = 0;  // log2(vocab)
  uint32_t frame_count = 0;
  std::array<uint8_t, 16> model_id{};
};

StreamHeader make_header(const ModelConfig& cfg, const std::array<uint8_t, 16>& id,
                         int depth, int64_t frame_count);

// Binds a stream to the codebooks that can decode it.
std::array<uint8_t, 16> model_id_hash(const ModelConfig& cfg, const Codebooks& books);

// ceil(frame_count * depth * vocab_bits / 8)
int64_t payload_bytes(const StreamHeader& h);

// Codes packed frame-major then level-major, vocab_bits per code, LSB-first
// within the little-endian bit stream, final byte zero-padded.
std::vector<uint8_t> write_stream(const StreamHeader& h, std::span<const CodeFrame> frames);

// Strict inverse of write_stream: wrong magic/version -> FormatError, short
// payload -> TruncationError (expected vs actual bits), extra bytes ->
// TrailingDataError.
std::pair<StreamHeader, std::vector<CodeFrame>> read_stream(std::span<const uint8_t> bytes);

// Lenient reader: decodes as many whole frames as the payload holds and
// ignores trailing bytes; a frame-aligned truncation decodes to the full
// stream's prefix.
std::pair<StreamHeader, std::vector<CodeFrame>> read_stream_prefix(std::span<const uint8_t> bytes);

}  // namespace spst
