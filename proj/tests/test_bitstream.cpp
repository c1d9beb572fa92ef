#include <vector>

#include "doctest.h"
#include "spst/bitstream.hpp"
#include "test_util.hpp"

using namespace spst;
using namespace spst::testutil;

namespace {

std::vector<CodeFrame> rand_frames(int64_t n, int depth, int vocab, Rng& rng) {
  std::vector<CodeFrame> fr((size_t)n);
  for (auto& f : fr) {
    f.codes.resize(depth);
    for (auto& c : f.codes) c = (int32_t)rng.below((uint64_t)vocab);
  }
  return fr;
}

std::array<uint8_t, 16> some_id(uint8_t fill) {
  std::array<uint8_t, 16> id{};
  id.fill(fill);
  return id;
}

}  // namespace

TEST_CASE("header writes 38 bytes and round trips every field") {
  const ModelConfig cfg = desk_model();
  StreamHeader h = make_header(cfg, some_id(7), 3, 0);
  std::vector<uint8_t> bytes = write_stream(h, {});
  CHECK(bytes.size() == StreamHeader::kBytes);

  auto [back, frames] = read_stream(bytes);
  CHECK(frames.empty());
  CHECK(back.sample_rate == (uint32_t)cfg.sample_rate);
  CHECK(back.audio_channels == cfg.audio_channels);
  CHECK(back.window_len == cfg.stft.window_len);
  CHECK(back.hop == cfg.stft.hop);
  CHECK(back.embedding_rate == (uint16_t)cfg.embedding_rate());
  CHECK(back.depth == 3);
  CHECK(back.vocab_bits == 6);  // vocab 64
  CHECK(back.frame_count == 0);
  CHECK(back.model_id == some_id(7));
}

TEST_CASE("codes pack LSB-first, frame-major") {
  const ModelConfig cfg = desk_model();  // vocab 64 -> 6 bits
  StreamHeader h = make_header(cfg, some_id(0), 1, 2);
  std::vector<CodeFrame> fr(2);
  fr[0].codes = {5};  // 000101
  fr[1].codes = {2};  // 000010
  std::vector<uint8_t> bytes = write_stream(h, fr);
  REQUIRE(bytes.size() == StreamHeader::kBytes + 2);
  CHECK(bytes[StreamHeader::kBytes] == 0x85);  // low 6 bits 000101, then 10
  CHECK(bytes[StreamHeader::kBytes + 1] == 0x00);  // remaining 0000, zero padded
}

TEST_CASE("byte count is the header plus ceil of the code bits") {
  const ModelConfig cfg = desk_model();
  Rng rng(401);
  for (auto [fc, depth] : std::vector<std::pair<int64_t, int>>{
           {1, 1}, {3, 2}, {8, 3}, {100, 4}, {1000, 2}}) {
    StreamHeader h = make_header(cfg, some_id(1), depth, fc);
    CHECK(payload_bytes(h) == (fc * depth * 6 + 7) / 8);
    auto bytes = write_stream(h, rand_frames(fc, depth, cfg.rvq.vocab, rng));
    CHECK((int64_t)bytes.size() == (int64_t)StreamHeader::kBytes + payload_bytes(h));
  }
}

TEST_CASE("read inverts write over fuzzed frames") {
  const ModelConfig cfg = desk_model();
  Rng rng(402);
  for (int it = 0; it < 2000; ++it) {
    const int depth = 1 + (int)rng.below((uint64_t)cfg.rvq.levels);
    const int64_t fc = (int64_t)rng.below(40);
    auto frames = rand_frames(fc, depth, cfg.rvq.vocab, rng);
    StreamHeader h = make_header(cfg, some_id((uint8_t)it), depth, fc);
    auto bytes = write_stream(h, frames);
    auto [back, got] = read_stream(bytes);
    REQUIRE(got.size() == frames.size());
    for (size_t i = 0; i < got.size(); ++i) REQUIRE(got[i].codes == frames[i].codes);
    CHECK(back.depth == h.depth);
    CHECK(back.frame_count == h.frame_count);
    CHECK(back.model_id == h.model_id);
  }
}

TEST_CASE("each corruption maps to its own error") {
  const ModelConfig cfg = desk_model();
  Rng rng(403);
  StreamHeader h = make_header(cfg, some_id(9), 2, 5);
  auto frames = rand_frames(5, 2, cfg.rvq.vocab, rng);
  const std::vector<uint8_t> good = write_stream(h, frames);
  CHECK_NOTHROW(read_stream(good));

  auto bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(read_stream(bad), FormatError);

  bad = good;
  bad[4] = StreamHeader::kVersion + 1;
  CHECK_THROWS_AS(read_stream(bad), FormatError);

  bad = good;
  bad[16] = 0;  // depth byte
  CHECK_THROWS_AS(read_stream(bad), FormatError);
  bad = good;
  bad[17] = 25;  // vocab_bits byte
  CHECK_THROWS_AS(read_stream(bad), FormatError);

  bad = good;
  bad.pop_back();
  CHECK_THROWS_AS(read_stream(bad), TruncationError);
  CHECK_THROWS_AS(read_stream(std::span<const uint8_t>(good.data(), 20)), TruncationError);

  bad = good;
  bad.push_back(0xee);
  CHECK_THROWS_AS(read_stream(bad), TrailingDataError);

  // write-side misuse
  StreamHeader wrong = h;
  wrong.frame_count = 4;
  CHECK_THROWS_AS(write_stream(wrong, frames), DimError);
  auto deep = frames;
  deep[0].codes.push_back(1);
  CHECK_THROWS_AS(write_stream(h, deep), DimError);
  auto big = frames;
  big[1].codes[0] = cfg.rvq.vocab;
  CHECK_THROWS_AS(write_stream(h, big), DimError);
}

TEST_CASE("prefix reader decodes whole frames and shrugs off tails") {
  const ModelConfig cfg = desk_model();
  Rng rng(404);
  StreamHeader h = make_header(cfg, some_id(3), 2, 12);  // 12 bits per frame
  auto frames = rand_frames(12, 2, cfg.rvq.vocab, rng);
  const auto good = write_stream(h, frames);

  auto padded = good;
  padded.insert(padded.end(), {1, 2, 3});
  auto [hp, fp] = read_stream_prefix(padded);
  REQUIRE(fp.size() == 12);
  for (size_t i = 0; i < fp.size(); ++i) CHECK(fp[i].codes == frames[i].codes);
  CHECK(hp.frame_count == 12);

  // drop payload bytes: 12 bits/frame, 3 bytes = 2 whole frames
  std::span<const uint8_t> cut(good.data(), StreamHeader::kBytes + 3);
  auto [hc, fc] = read_stream_prefix(cut);
  REQUIRE(fc.size() == 2);
  for (size_t i = 0; i < fc.size(); ++i) CHECK(fc[i].codes == frames[i].codes);

  // mid-frame cut floors to whole frames
  std::span<const uint8_t> ragged(good.data(), StreamHeader::kBytes + 2);  // 16 bits
  CHECK(read_stream_prefix(ragged).second.size() == 1);

  // header corruption still refuses
  auto bad = good;
  bad[1] = '?';
  CHECK_THROWS_AS(read_stream_prefix(bad), FormatError);
}

TEST_CASE("model id binds config and codebook contents") {
  const ModelConfig cfg = desk_model();
  Codebooks books(cfg.rvq);
  Rng rng(405);
  for (auto& x : books.centroids.data) x = rng.normal();
  books.initialized = true;

  auto id1 = model_id_hash(cfg, books);
  auto id2 = model_id_hash(cfg, books);
  CHECK(id1 == id2);

  Codebooks other = books;
  other.centroids.data[5] += 1e-9;
  CHECK(model_id_hash(cfg, other) != id1);

  ModelConfig cfg2 = cfg;
  cfg2.sample_rate = 16000;
  CHECK(model_id_hash(cfg2, books) != id1);

  // ema state does not affect identity, only centroids do
  Codebooks trained = books;
  trained.ema_counts.data[0] += 3.0;
  CHECK(model_id_hash(cfg, trained) == id1);
}
