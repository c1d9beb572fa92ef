#pragma once

#include <memory>
#include <span>
#include <vector>

#include "spst/codec_net.hpp"
#include "spst/config.hpp"

namespace spst {

// Sample-in, embedding-out encoder. Feed any number of samples; each
// completed group of frames_per_embedding STFT frames yields one embedding
// column, identical to the matching column of encode_batch on the whole
// signal. flush() completes the final whole embedding, zero-filling the last
// frame's look-ahead beyond the real tail exactly like the batch path,
// and drops any trailing partial embedding.
template <typename T>
class StreamEncoder {
 public:
  StreamEncoder(const ModelConfig& cfg, const NormalizedParams<T>* params);
  ~StreamEncoder();
  StreamEncoder(StreamEncoder&&) noexcept;
  StreamEncoder& operator=(StreamEncoder&&) noexcept;

  // samples: one span per audio channel, equal lengths. Appends finished
  // embedding columns (each embed_dim long) to embs; returns how many.
  int push(std::span<const std::span<const T>> samples, std::vector<std::vector<T>>& embs);
  int push(const std::vector<std::vector<T>>& samples, std::vector<std::vector<T>>& embs);
  int flush(std::vector<std::vector<T>>& embs);
  void reset();
  const ModelConfig& config() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Embedding-in, sample-out decoder with the one-embedding look-ahead: the
// first push primes the pipeline and emits nothing, each later push emits
// samples_per_embedding samples per channel for the previous embedding, and
// flush() emits the final embedding's samples (it feeds the zero look-ahead
// slot, exactly like the batch path).
template <typename T>
class StreamDecoder {
 public:
  StreamDecoder(const ModelConfig& cfg, const NormalizedParams<T>* params);
  ~StreamDecoder();
  StreamDecoder(StreamDecoder&&) noexcept;
  StreamDecoder& operator=(StreamDecoder&&) noexcept;

  // emb: embed_dim values. Appends emitted samples per channel to out[c];
  // returns samples emitted per channel (0 on the priming call).
  int64_t push(std::span<const T> emb, std::vector<std::vector<T>>& out);
  int64_t flush(std::vector<std::vector<T>>& out);
  void reset();
  const ModelConfig& config() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace spst
