#pragma once

#include <span>
#include <string>
#include <vector>

#include "spst/config.hpp"
#include "spst/graph.hpp"
#include "spst/rng.hpp"
#include "spst/rvq.hpp"
#include "spst/tensor.hpp"

namespace spst {

// One conv layer's trainables: weight-norm direction v, gain g (one per dim-0
// slice of v), bias b (one per output channel).
struct ConvParams {
  Tensor v, g, b;
};

struct GenParams {
  std::vector<ConvParams> enc, dec;  // aligned with ResolvedGen::enc / ::dec
};

// Fixed traversal order: serialization and optimizer state both follow it.
template <class P, class F>
void for_each_param(P& p, F&& f) {
  for (auto& cp : p.enc) {
    f(cp.v);
    f(cp.g);
    f(cp.b);
  }
  for (auto& cp : p.dec) {
    f(cp.v);
    f(cp.g);
    f(cp.b);
  }
}

GenParams init_model(const ModelConfig& cfg, uint64_t seed);
int64_t param_count(const GenParams& p);

// Whole-embedding alignment for an n-sample input: t_emb embeddings consume
// n_use samples; the analysis wave is padded to n_pad so the last frame's
// look-back window is complete (real samples when the clip has them).
struct FrameAlign {
  int64_t t_emb, n_use, n_pad;
};
FrameAlign frame_align(const ModelConfig& cfg, int64_t n);

template <typename T>
std::vector<T> padded_channel(const T* x, int64_t n, const FrameAlign& fa);

// Weight-norm weights materialized once for inference.
template <typename T>
struct NormalizedParams {
  std::vector<TensorT<T>> enc_w, enc_b, dec_w, dec_b;
};
template <typename T>
NormalizedParams<T> materialize(const GenParams& p, double eps = 1e-12);

// Optional capture of every layer output (tests: shapes, causality, fusion
// symmetry). trunk indexes the per-channel copies before fusion/after split.
template <typename T>
struct Trace {
  struct Item {
    bool dec;
    int layer;
    int trunk;
    TensorT<T> out;
  };
  std::vector<Item> items;
};

// Batch inference on values. audio [A, n] -> embeddings [dim, t_emb];
// embeddings [dim, t_emb] -> audio [A, t_emb * hop * frames_per_embedding].
template <typename T>
TensorT<T> encode_batch(const ModelConfig& cfg, const ResolvedGen& rg,
                        const NormalizedParams<T>& P, const TensorT<T>& audio,
                        Trace<T>* trace = nullptr);
template <typename T>
TensorT<T> decode_batch(const ModelConfig& cfg, const ResolvedGen& rg,
                        const NormalizedParams<T>& P, const TensorT<T>& emb,
                        Trace<T>* trace = nullptr);

// encode -> quantize at depth r -> decode (r == 0 skips quantization).
template <typename T>
TensorT<T> reconstruct_batch(const ModelConfig& cfg, const ResolvedGen& rg,
                             const NormalizedParams<T>& P, const Codebooks& books,
                             const TensorT<T>& audio, int r);

// Training-graph builders over the same topology walk. Param leaves are
// created with gradients enabled, in for_each_param order.
struct GenLeaves {
  struct L3 {
    Val v, g, b;
  };
  std::vector<L3> enc, dec;
};
GenLeaves param_leaves(Graph& g, const GenParams& p, bool requires_grad = true);

// waves: one padded [n_pad] leaf per audio channel -> embeddings [dim, t_emb, 1]
Val build_encoder(Graph& g, const ModelConfig& cfg, const ResolvedGen& rg, const GenLeaves& P,
                  std::span<const Val> waves, std::vector<Val>* taps = nullptr);
// emb [dim, t, 1] -> per-channel waves [t * hop * frames_per_embedding]
std::vector<Val> build_decoder(Graph& g, const ModelConfig& cfg, const ResolvedGen& rg,
                               const GenLeaves& P, Val emb, std::vector<Val>* taps = nullptr);

}  // namespace spst
