#pragma once

#include <span>
#include <vector>

#include "spst/config.hpp"
#include "spst/graph.hpp"
#include "spst/rng.hpp"
#include "spst/tensor.hpp"

namespace spst {

// One stage: conv, then per-channel LayerNorm affine, then LeakyReLU.
struct DiscStageParams {
  Tensor w, b, ln_g, ln_b;
};

// One STFT scale; scales do not share parameters.
struct DiscScaleParams {
  std::vector<DiscStageParams> stages;
  Tensor head_w, head_b;
};

struct DiscParams {
  std::vector<DiscScaleParams> scales;  // aligned with DiscConfig::window_lengths
};

template <class P, class F>
void for_each_disc_param(P& p, F&& f) {
  for (auto& sc : p.scales) {
    for (auto& st : sc.stages) {
      f(st.w);
      f(st.b);
      f(st.ln_g);
      f(st.ln_b);
    }
    f(sc.head_w);
    f(sc.head_b);
  }
}

DiscParams init_disc(const DiscConfig& cfg, int audio_channels, uint64_t seed);
int64_t disc_param_count(const DiscParams& p);

struct DiscLeaves {
  struct Stage {
    Val w, b, ln_g, ln_b;
  };
  struct Scale {
    std::vector<Stage> stages;
    Val head_w, head_b;
  };
  std::vector<Scale> scales;
};

DiscLeaves disc_leaves(Graph& g, const DiscParams& p, bool requires_grad);

// Per scale: the logit grid [1,T',F'] and the post-activation stage outputs
// (per-channel trunks listed per stage, trunk-major within the stage).
struct DiscOut {
  std::vector<Val> logits;
  std::vector<std::vector<Val>> features;
};

// waves: one [n] audio Val per channel. Every scale needs n >= its window.
DiscOut build_discriminator(Graph& g, const DiscConfig& cfg, const ResolvedDisc& rd,
                            const DiscLeaves& P, std::span<const Val> waves);

}  // namespace spst
