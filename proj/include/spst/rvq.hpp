#pragma once

#include <cstdint>
#include <vector>

#include "spst/config.hpp"
#include "spst/rng.hpp"
#include "spst/tensor.hpp"

namespace spst {

// Per-level codebooks with EMA training state. Centroids are per level, never
// shared. unused_updates counts consecutive exercised updates in which a code
// received no assignment; at kDeadAfter it is reseeded from a live residual.
struct Codebooks {
  int levels = 0, vocab = 0, dim = 0;
  Tensor centroids;  // [R, vocab, dim]
  Tensor ema_counts; // [R, vocab]
  Tensor ema_sums;   // [R, vocab, dim]
  std::vector<int32_t> unused_updates;  // R*vocab
  bool initialized = false;

  static constexpr int kDeadAfter = 200;

  Codebooks() = default;
  explicit Codebooks(const RvqConfig& cfg);

  const double* centroid(int level, int code) const {
    return centroids.data.data() + ((int64_t)level * vocab + code) * dim;
  }
  double* centroid(int level, int code) {
    return centroids.data.data() + ((int64_t)level * vocab + code) * dim;
  }
};

struct CodeFrame {
  std::vector<int32_t> codes;  // length == active depth r
};

// Greedy residual walk; ties broken toward the lowest code index.
CodeFrame quantize(const double* v, const Codebooks& books, int r);
void dequantize(const CodeFrame& frame, const Codebooks& books, double* out);
std::vector<double> dequantize(const CodeFrame& frame, const Codebooks& books);

// Columns of an embedding map [dim, T] quantized independently.
std::vector<CodeFrame> quantize_map(const Tensor& e, const Codebooks& books, int r);
Tensor dequantize_map(const std::vector<CodeFrame>& frames, const Codebooks& books);

// Depth r in {1..R} with per-level weight 4:2:1 over the ranges
// {1..R/4}, {R/4+1..R/2}, {R/2+1..R}.
int sample_dropout_level(const RvqConfig& cfg, Rng& rng);

// Exact per-level probability of the law above (tests and documentation).
double dropout_level_probability(const RvqConfig& cfg, int r);

double bitrate_bps(const RvqConfig& cfg, double embedding_rate, int active_r);

struct ForwardTrain {
  bool bypassed = false;
  int r = 0;                      // 0 when bypassed
  Tensor v_out;                   // [dim, T]; equals v_q, or v when bypassed
  std::vector<CodeFrame> frames;  // empty when bypassed
  double commit_loss = 0.0;       // sum of squares over the whole map
};

// Value-level training forward: bypass coin, dropout draw, quantize,
// straight-through output. The trainer drives the pieces itself so the coin
// can cover a whole batch; this wrapper is the single-call form.
ForwardTrain forward_train(const Tensor& e, const Codebooks& books, const RvqConfig& cfg,
                           Rng& rng);

// Level-sequential init from encoder-output columns: level 0 samples distinct
// columns, deeper levels sample the residuals those leave behind.
void init_codebooks(Codebooks& books, const std::vector<const double*>& columns, Rng& rng);

// One EMA step over all assignments of a batch. Each entry pairs a column with
// the code frame produced for it. Codes unused in an exercised level age
// toward reseeding; levels with no data are skipped entirely.
void ema_update(Codebooks& books, const RvqConfig& cfg,
                const std::vector<const double*>& columns,
                const std::vector<const CodeFrame*>& frames, Rng& rng);

}  // namespace spst
