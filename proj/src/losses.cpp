#include "spst/losses.hpp"

#include <cmath>

#include "spst/dsp.hpp"
#include "spst/errors.hpp"

namespace spst {

static Val scale_sum(Graph& g, const std::vector<Val>& terms) {
  SPST_CHECK(!terms.empty(), "no terms to sum");
  Val acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
  return g.affine(acc, 1.0 / (double)terms.size(), 0.0);
}

// mean over the grid of max(0, 1 - sign*logit)
static Val hinge_mean(Graph& g, Val logits, double sign) {
  return g.mean(g.relu(g.affine(logits, -sign, 1.0)));
}

Val disc_hinge_loss(Graph& g, const DiscOut& real, const DiscOut& fake) {
  SPST_CHECK(real.logits.size() == fake.logits.size(), "scale count mismatch");
  std::vector<Val> terms;
  for (size_t k = 0; k < real.logits.size(); ++k)
    terms.push_back(g.add(hinge_mean(g, real.logits[k], 1.0),
                          hinge_mean(g, fake.logits[k], -1.0)));
  return scale_sum(g, terms);
}

Val gen_adv_loss(Graph& g, const DiscOut& fake) {
  std::vector<Val> terms;
  for (const Val& l : fake.logits) terms.push_back(hinge_mean(g, l, 1.0));
  return scale_sum(g, terms);
}

Val feature_loss(Graph& g, const DiscOut& real, const DiscOut& fake) {
  SPST_CHECK(real.features.size() == fake.features.size(), "scale count mismatch");
  std::vector<Val> per_scale;
  for (size_t k = 0; k < real.features.size(); ++k) {
    const auto& rf = real.features[k];
    const auto& ff = fake.features[k];
    SPST_CHECK(rf.size() == ff.size(), "feature count mismatch at a scale");
    std::vector<Val> terms;
    for (size_t l = 0; l < rf.size(); ++l) {
      SPST_CHECK(g.value(rf[l]).shape == g.value(ff[l]).shape, "feature shape mismatch");
      terms.push_back(g.mean(g.abs(g.sub(rf[l], ff[l]))));
    }
    per_scale.push_back(scale_sum(g, terms));
  }
  return scale_sum(g, per_scale);
}

Val reconstruction_loss(Graph& g, std::span<const Val> x, std::span<const Val> gen,
                        int sample_rate) {
  SPST_CHECK(x.size() == gen.size() && !x.empty(), "channel count mismatch");
  constexpr double kLogFloor = 1e-5;
  Val total{-1};
  for (size_t c = 0; c < x.size(); ++c) {
    SPST_CHECK(g.value(x[c]).numel() == g.value(gen[c]).numel(), "waveform length mismatch");
    for (int s : mel_windows()) {
      const MelConfig mc = make_mel_config(s, sample_rate);
      auto mel = [&](Val wave) {
        Val sp = g.stft(wave, s, s / 4, s / 2 + 1);
        return g.filterbank(g.magnitude(sp), mel_filterbank(mc));
      };
      const Val sx = mel(x[c]);
      const Val sg = mel(gen[c]);
      const double bs = (double)g.value(sx).numel();
      const Val l1 = g.affine(g.sum(g.abs(g.sub(sx, sg))), 1.0 / bs, 0.0);
      const Val dlog = g.sub(g.log_clamp(sx, kLogFloor), g.log_clamp(sg, kLogFloor));
      const Val l2 = g.affine(g.sum(g.square(dlog)), mc.alpha / bs, 0.0);
      const Val term = g.add(l1, l2);
      total = total.ok() ? g.add(total, term) : term;
    }
  }
  return g.affine(total, 1.0 / (double)x.size(), 0.0);
}

Val commit_loss(Graph& g, Val enc_out, const Tensor& v_q) {
  const Tensor& e = g.value(enc_out);
  SPST_CHECK(e.numel() == v_q.numel(), "quantized map size mismatch");
  Tensor vq(e.shape);
  vq.data = v_q.data;
  return g.sum(g.square(g.sub(enc_out, g.constant(std::move(vq)))));
}

Val total_generator_loss(Graph& g, Val adv, Val feat, Val rec, Val com, const LossWeights& w) {
  Val t = g.add(g.affine(adv, w.adv, 0.0), g.affine(feat, w.feat, 0.0));
  t = g.add(t, g.affine(rec, w.rec, 0.0));
  return g.add(t, g.affine(com, w.com, 0.0));
}

}  // namespace spst
