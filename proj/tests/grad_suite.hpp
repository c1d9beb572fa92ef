#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "spst/adversary.hpp"
#include "spst/codec_net.hpp"
#include "spst/losses.hpp"
#include "test_util.hpp"

namespace spst::testutil {

struct SuiteResult {
  double worst_rel = 0.0;
  int64_t checked = 0;
  std::string worst_case;

  void fold(const std::string& name, const FdReport& r) {
    checked += r.checked;
    if (r.worst_rel > worst_rel) {
      worst_rel = r.worst_rel;
      worst_case = name;
    }
  }
};

// Central-difference check of every graph op. Inputs are drawn per seed;
// kinked ops get inputs bounded away from their corners.
inline SuiteResult run_op_gradient_suite(uint64_t seed) {
  Rng rng(seed);
  SuiteResult out;
  auto scalarize = [](Graph& g, Val x) {  // weighted sum, non-uniform on purpose
    return g.sum(g.mul(x, g.affine(x, 0.25, 0.75)));
  };

  {
    auto a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 3}, rng),
         c = rand_tensor({2, 3}, rng);
    out.fold("add/sub/mul", fd_check({a, b, c}, [&](Graph& g, std::span<const Val> v) {
               return g.sum(g.mul(g.add(v[0], v[1]), g.sub(v[0], v[2])));
             }));
  }
  {
    auto x = rand_tensor({3, 4}, rng);
    out.fold("affine", fd_check({x}, [&](Graph& g, std::span<const Val> v) {
               return g.sum(g.affine(v[0], -1.7, 0.3));
             }));
  }
  {
    auto x = rand_away({4, 5}, rng);
    out.fold("relu", fd_check({x}, [&](Graph& g, std::span<const Val> v) {
               return scalarize(g, g.relu(v[0]));
             }));
    out.fold("leaky_relu", fd_check({x}, [&](Graph& g, std::span<const Val> v) {
               return scalarize(g, g.leaky_relu(v[0], 0.2));
             }));
    out.fold("abs", fd_check({x}, [&](Graph& g, std::span<const Val> v) {
               return scalarize(g, g.abs(v[0]));
             }));
  }
  {
    auto x = rand_tensor({4, 5}, rng, -2.0, 2.0);
    out.fold("elu", fd_check({x}, [&](Graph& g, std::span<const Val> v) {
               return scalarize(g, g.elu(v[0]));
             }));
    out.fold("square", fd_check({x}, [&](Graph& g, std::span<const Val> v) {
               return g.sum(g.square(v[0]));
             }));
    out.fold("mean", fd_check({x}, [&](Graph& g, std::span<const Val> v) {
               return g.mean(g.mul(v[0], v[0]));
             }));
  }
  {
    auto hi = rand_tensor({6}, rng, 0.5, 1.5);   // active branch
    auto lo = rand_tensor({6}, rng, 0.01, 0.05); // clamped branch, grad 0
    for (auto* t : {&hi, &lo})
      out.fold("log_clamp", fd_check({*t}, [&](Graph& g, std::span<const Val> v) {
                 return g.sum(g.log_clamp(v[0], 0.1));
               }));
  }
  {
    auto v = rand_away({3, 2, 2, 2}, rng), gn = rand_away({3}, rng);
    out.fold("weight_norm", fd_check({v, gn}, [&](Graph& g, std::span<const Val> vs) {
               return scalarize(g, g.weight_norm(vs[0], vs[1]));
             }));
  }
  {
    auto x = rand_tensor({3, 2, 4}, rng), ga = rand_away({3}, rng),
         be = rand_tensor({3}, rng);
    out.fold("layer_norm", fd_check({x, ga, be}, [&](Graph& g, std::span<const Val> v) {
               return scalarize(g, g.layer_norm(v[0], v[1], v[2]));
             }));
  }
  {
    auto sp = rand_away({2, 3, 4}, rng);  // modulus bounded away from 0
    out.fold("magnitude", fd_check({sp}, [&](Graph& g, std::span<const Val> v) {
               return scalarize(g, g.magnitude(v[0]));
             }));
    out.fold("disc_input", fd_check({sp}, [&](Graph& g, std::span<const Val> v) {
               return scalarize(g, g.disc_input(v[0]));
             }));
  }
  {
    auto mag = rand_tensor({3, 5}, rng, 0.1, 1.0);
    auto m = std::make_shared<Tensor>(rand_tensor({5, 4}, rng, 0.0, 1.0));
    out.fold("filterbank", fd_check({mag}, [&](Graph& g, std::span<const Val> v) {
               return scalarize(g, g.filterbank(v[0], m));
             }));
  }
  {
    auto a = rand_tensor({2, 2, 3}, rng), b = rand_tensor({2, 1, 3}, rng);
    for (int axis : {0, 1})
      out.fold("concat", fd_check({a, axis == 0 ? a : b},
                                  [&](Graph& g, std::span<const Val> v) {
                                    Val parts[] = {v[0], v[1]};
                                    return scalarize(g, g.concat(parts, axis));
                                  }));
    out.fold("slice", fd_check({a}, [&](Graph& g, std::span<const Val> v) {
               return scalarize(g, g.slice(v[0], 1, 0, 1));
             }));
  }
  for (PadSpec pad : {PadSpec::kCausalSame, PadSpec::kAnticausalSame,
                      PadSpec::kSymmetric, PadSpec::kValid}) {
    for (auto [st, sf] : {std::pair{1, 1}, {2, 2}, {2, 3}}) {
      auto x = rand_tensor({2, 5, 7}, rng);
      auto w = rand_tensor({3, 2, 2, 3}, rng);
      auto b = rand_tensor({3}, rng);
      out.fold("conv2d", fd_check({x, w, b}, [&](Graph& g, std::span<const Val> v) {
                 return scalarize(g, g.conv2d(v[0], v[1], v[2], pad, st, sf));
               }));
      // transpose over the same geometry: y has the forward's output shape
      ConvGeom geo = conv_geometry(pad, 5, 7, 2, 3, st, sf);
      auto y = rand_tensor({3, geo.out_t, geo.out_f}, rng);
      auto wb = rand_tensor({2}, rng);
      out.fold("conv2d_transpose",
               fd_check({y, w, wb}, [&](Graph& g, std::span<const Val> v) {
                 return scalarize(
                     g, g.conv2d_transpose(v[0], v[1], v[2], pad, st, sf, 5, 7));
               }));
    }
  }
  for (int nbins : {4, 5}) {  // without and with the Nyquist bin
    Tensor wave({16}, rand_wave(16, rng, 1.0));
    out.fold("stft", fd_check({wave}, [&](Graph& g, std::span<const Val> v) {
               return scalarize(g, g.stft(v[0], 8, 4, nbins));
             }));
    auto sp = rand_tensor({2, 3, nbins}, rng);
    out.fold("istft", fd_check({sp}, [&](Graph& g, std::span<const Val> v) {
               return scalarize(g, g.istft(v[0], 8, 4));
             }));
  }
  {
    // stage-shaped composite: conv -> layer norm -> leaky -> conv -> sum
    auto x = rand_tensor({2, 6, 8}, rng);
    auto w1 = rand_tensor({3, 2, 3, 3}, rng), b1 = rand_tensor({3}, rng);
    auto lg = rand_away({3}, rng), lb = rand_tensor({3}, rng);
    auto w2 = rand_tensor({1, 3, 2, 2}, rng), b2 = rand_tensor({1}, rng);
    out.fold("stage_chain",
             fd_check({x, w1, b1, lg, lb, w2, b2},
                      [&](Graph& g, std::span<const Val> v) {
                        Val h = g.conv2d(v[0], v[1], v[2], PadSpec::kSymmetric, 1, 2);
                        h = g.layer_norm(h, v[3], v[4]);
                        h = g.leaky_relu(h, 0.2);
                        h = g.conv2d(h, v[5], v[6], PadSpec::kSymmetric, 2, 1);
                        return g.sum(h);
                      }));
  }
  return out;
}

// FD probing of a random element subset: composites with big leaves would be
// quadratic otherwise. Analytic gradients still come from one full backward.
// Losses with |.| or clamped logs are only piecewise smooth and the log's
// curvature blows up near its clamp, so a fixed step can straddle a kink or
// eat truncation error; probes that miss at h retry at h/10 and h/100, which
// lands both evaluations on one smooth branch. A wrong gradient keeps missing
// at every step size.
inline FdReport fd_check_sampled(const std::vector<Tensor>& leaves, const BuildFn& build,
                                 Rng& rng, int probes_per_leaf, double h = 1e-5,
                                 double floor = 1e-3) {
  auto eval = [&](const std::vector<Tensor>& ts) {
    Graph g;
    std::vector<Val> vs;
    for (const auto& t : ts) vs.push_back(g.constant(t));
    return g.value(build(g, vs)).data[0];
  };
  Graph g;
  std::vector<Val> vs;
  for (const auto& t : leaves) vs.push_back(g.leaf(t, true));
  g.backward(build(g, vs));

  FdReport rep;
  std::vector<Tensor> probe = leaves;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor an = g.grad_or_zero(vs[li]);
    const int64_t n = probe[li].numel();
    for (int k = 0; k < probes_per_leaf && k < n; ++k) {
      const int64_t i = (int64_t)rng.below((uint64_t)n);
      const double keep = probe[li].data[i];
      const double a = an.data[i];
      double best_rel = 1e300, best_fd = 0;
      for (double step : {h, h / 10, h / 100}) {
        probe[li].data[i] = keep + step;
        const double fp = eval(probe);
        probe[li].data[i] = keep - step;
        const double fm = eval(probe);
        const double fd = (fp - fm) / (2.0 * step);
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
        if (rel < best_rel) {
          best_rel = rel;
          best_fd = fd;
        }
        if (best_rel < 1e-5) break;
      }
      probe[li].data[i] = keep;
      if (best_rel > rep.worst_rel) {
        rep.worst_rel = best_rel;
        rep.worst_an = a;
        rep.worst_fd = best_fd;
      }
      ++rep.checked;
    }
  }
  return rep;
}

// Every loss, plus full encoder/decoder/discriminator chains, against FD.
inline SuiteResult run_loss_gradient_suite(uint64_t seed) {
  Rng rng(seed);
  SuiteResult out;
  const ModelConfig mc = tiny_model();
  const DiscConfig dc = tiny_disc();
  const ResolvedGen rg = resolve_generator(mc);
  const ResolvedDisc rd = resolve_discriminator(dc, 1);

  // keep logits away from the hinge corners at +-1
  {
    DiscOut real, fake;
    auto build = [&](Graph& g, std::span<const Val> v) {
      real.logits = {v[0], v[1]};
      fake.logits = {v[2], v[3]};
      real.features = fake.features = {};
      return g.mul(disc_hinge_loss(g, real, fake), gen_adv_loss(g, fake));
    };
    std::vector<Tensor> ls;
    for (int i = 0; i < 4; ++i) {
      Tensor t = rand_tensor({1, 3, 2}, rng, -0.6, 0.6);
      for (auto& x : t.data) x += (x > 0 ? 1.6 : -1.6) * (i % 2);  // mix of regimes
      ls.push_back(t);
    }
    out.fold("hinge_losses", fd_check(ls, build));
  }
  {
    auto build = [&](Graph& g, std::span<const Val> v) {
      DiscOut real, fake;
      real.logits = fake.logits = {};
      real.features = {{v[0], v[1]}};
      fake.features = {{v[2], v[3]}};
      return feature_loss(g, real, fake);
    };
    std::vector<Tensor> ls;
    for (int i = 0; i < 4; ++i) ls.push_back(rand_away({2, 3, 2}, rng, 0.3));
    out.fold("feature_loss", fd_check(ls, build));
  }
  {
    const int64_t n = 2560;
    Tensor xa({n}, rand_wave(n, rng)), xb({n}, rand_wave(n, rng));
    out.fold("reconstruction_loss",
             fd_check_sampled({xa, xb},
                              [&](Graph& g, std::span<const Val> v) {
                                Val x[] = {v[0]};
                                Val y[] = {v[1]};
                                return reconstruction_loss(g, x, y, mc.sample_rate);
                              },
                              rng, 24));
  }
  {
    auto e = rand_tensor({4, 3, 1}, rng);
    Tensor vq = rand_tensor({4, 3}, rng);
    out.fold("commit_loss", fd_check({e}, [&](Graph& g, std::span<const Val> v) {
               return commit_loss(g, v[0], vq);
             }));
  }
  {
    auto parts = rand_tensor({4}, rng);
    LossWeights w{0.7, 31.0, 2.5, 0.1};
    out.fold("total_generator_loss",
             fd_check({parts}, [&](Graph& g, std::span<const Val> v) {
               Val a = g.slice(v[0], 0, 0, 1), f = g.slice(v[0], 0, 1, 1);
               Val r = g.slice(v[0], 0, 2, 1), c = g.slice(v[0], 0, 3, 1);
               return g.sum(total_generator_loss(g, a, f, r, c, w));
             }));
  }

  // whole-network chains at tiny scale, probing a parameter subset
  const int64_t n = 2 * mc.samples_per_embedding();
  const FrameAlign fa = frame_align(mc, n);
  GenParams gp = init_model(mc, seed ^ 0x9e3779b9ULL);
  DiscParams dp = init_disc(dc, 1, seed ^ 0x7f4a7c15ULL);
  std::vector<double> wave = rand_wave(fa.n_pad, rng);

  {
    std::vector<Tensor> leaves;
    for_each_param(gp, [&](Tensor& t) { leaves.push_back(t); });
    leaves.push_back(Tensor({fa.n_pad}, wave));
    auto build = [&](Graph& g, std::span<const Val> v) {
      GenLeaves L;
      size_t k = 0;
      for (size_t i = 0; i < gp.enc.size(); ++i, k += 3)
        L.enc.push_back({v[k], v[k + 1], v[k + 2]});
      for (size_t i = 0; i < gp.dec.size(); ++i, k += 3)
        L.dec.push_back({v[k], v[k + 1], v[k + 2]});
      Val waves[] = {v[k]};
      Val e = build_encoder(g, mc, rg, L, waves);
      auto outs = build_decoder(g, mc, rg, L, e);
      return g.sum(g.square(outs[0]));
    };
    out.fold("encoder_decoder_chain", fd_check_sampled(leaves, build, rng, 6));
  }
  {
    std::vector<Tensor> leaves;
    for_each_disc_param(dp, [&](Tensor& t) { leaves.push_back(t); });
    leaves.push_back(Tensor({n}, rand_wave(n, rng)));
    leaves.push_back(Tensor({n}, rand_wave(n, rng)));
    auto build = [&](Graph& g, std::span<const Val> v) {
      DiscLeaves L;
      size_t k = 0;
      for (size_t s = 0; s < dp.scales.size(); ++s) {
        DiscLeaves::Scale sc;
        for (size_t st = 0; st < dp.scales[s].stages.size(); ++st, k += 4)
          sc.stages.push_back({v[k], v[k + 1], v[k + 2], v[k + 3]});
        sc.head_w = v[k];
        sc.head_b = v[k + 1];
        k += 2;
        L.scales.push_back(std::move(sc));
      }
      Val rw[] = {v[k]};
      Val fw[] = {v[k + 1]};
      DiscOut real = build_discriminator(g, dc, rd, L, rw);
      DiscOut fake = build_discriminator(g, dc, rd, L, fw);
      Val loss = g.add(disc_hinge_loss(g, real, fake), feature_loss(g, real, fake));
      return g.add(loss, gen_adv_loss(g, fake));
    };
    out.fold("discriminator_chain", fd_check_sampled(leaves, build, rng, 5));
  }
  return out;
}

}  // namespace spst::testutil
