#include "spst/adversary.hpp"

#include <cmath>
#include <string>

#include "spst/errors.hpp"

namespace spst {

DiscParams init_disc(const DiscConfig& cfg, int audio_channels, uint64_t seed) {
  const ResolvedDisc rd = resolve_discriminator(cfg, audio_channels);
  Rng rng(seed);
  DiscParams p;
  auto conv = [&](const LayerSpec& L, Tensor& w, Tensor& b) {
    w = Tensor({L.out_ch, L.in_ch, L.kt, L.kf});
    b = Tensor({L.out_ch});
    const double a = 1.0 / std::sqrt((double)L.in_ch * L.kt * L.kf);
    for (auto& x : w.data) x = a * (2.0 * rng.uniform() - 1.0);
  };
  for (size_t k = 0; k < cfg.window_lengths.size(); ++k) {
    DiscScaleParams sc;
    for (const auto& L : rd.stages) {
      DiscStageParams st;
      conv(L, st.w, st.b);
      st.ln_g = Tensor({L.out_ch});
      st.ln_g.fill(1.0);
      st.ln_b = Tensor({L.out_ch});
      sc.stages.push_back(std::move(st));
    }
    conv(rd.head, sc.head_w, sc.head_b);
    p.scales.push_back(std::move(sc));
  }
  return p;
}

int64_t disc_param_count(const DiscParams& p) {
  int64_t n = 0;
  for_each_disc_param(p, [&](const Tensor& t) { n += t.numel(); });
  return n;
}

DiscLeaves disc_leaves(Graph& g, const DiscParams& p, bool requires_grad) {
  DiscLeaves out;
  for (const auto& sc : p.scales) {
    DiscLeaves::Scale s;
    for (const auto& st : sc.stages)
      s.stages.push_back({g.leaf(st.w, requires_grad), g.leaf(st.b, requires_grad),
                          g.leaf(st.ln_g, requires_grad), g.leaf(st.ln_b, requires_grad)});
    s.head_w = g.leaf(sc.head_w, requires_grad);
    s.head_b = g.leaf(sc.head_b, requires_grad);
    out.scales.push_back(std::move(s));
  }
  return out;
}

DiscOut build_discriminator(Graph& g, const DiscConfig& cfg, const ResolvedDisc& rd,
                            const DiscLeaves& P, std::span<const Val> waves) {
  SPST_CHECK(!waves.empty(), "discriminator needs at least one audio channel");
  SPST_CHECK(P.scales.size() == cfg.window_lengths.size(), "scale/param count mismatch");
  const int S = (int)rd.stages.size();
  DiscOut out;
  for (size_t k = 0; k < cfg.window_lengths.size(); ++k) {
    const int win = cfg.window_lengths[k];
    const int64_t n = g.value(waves[0]).numel();
    if (n < win)
      throw DimError("audio too short for discriminator scale with window " +
                     std::to_string(win));
    const auto& sp = P.scales[k];
    std::vector<Val> feats;
    auto stage = [&](Val x, int i) {
      const LayerSpec& L = rd.stages[i];
      x = g.conv2d(x, sp.stages[i].w, sp.stages[i].b, L.pad, L.st, L.sf);
      x = g.layer_norm(x, sp.stages[i].ln_g, sp.stages[i].ln_b);
      x = g.leaky_relu(x, cfg.leaky_slope);
      feats.push_back(x);
      return x;
    };
    std::vector<Val> xs;
    for (const Val& w : waves)
      xs.push_back(g.disc_input(g.stft(w, win, win / 2, win / 2)));
    for (int i = 0; i <= rd.fusion_index; ++i)
      for (auto& x : xs) x = stage(x, i);
    Val x = xs.size() == 1 ? xs[0] : g.concat(xs, 0);
    for (int i = rd.fusion_index + 1; i < S; ++i) x = stage(x, i);
    x = g.conv2d(x, sp.head_w, sp.head_b, rd.head.pad, rd.head.st, rd.head.sf);
    out.logits.push_back(x);
    out.features.push_back(std::move(feats));
  }
  return out;
}

}  // namespace spst
