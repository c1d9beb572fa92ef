#include <map>

#include "doctest.h"
#include "spst/adversary.hpp"
#include "spst/codec_net.hpp"
#include "spst/shapes.hpp"
#include "test_util.hpp"

using namespace spst;
using namespace spst::testutil;

namespace {

// Runs the real network and checks every traced layer output against the
// closed-form plan, including how many per-channel trunk copies exist.
void check_plan_against_network(const ModelConfig& cfg) {
  const int64_t n = cfg.sample_rate;  // one second, the plan default
  ShapePlan p = plan(cfg);
  CHECK(p.n_samples == n);

  const ResolvedGen rg = resolve_generator(cfg);
  GenParams gp = init_model(cfg, 99);
  CHECK(p.gen_params == param_count(gp));
  CHECK(p.codebook_values ==
        (int64_t)cfg.rvq.levels * cfg.rvq.vocab * cfg.rvq.dim);
  CHECK(p.embedding_rate == doctest::Approx(cfg.embedding_rate()));
  CHECK(p.latency_embeddings == 2);
  CHECK(p.latency_ms ==
        doctest::Approx(2000.0 * cfg.samples_per_embedding() / cfg.sample_rate));

  auto P = materialize<double>(gp);
  Rng rng(5);
  Tensor audio({cfg.audio_channels, n});
  for (auto& v : audio.data) v = 0.25 * (2.0 * rng.uniform() - 1.0);

  Trace<double> enc_tr;
  Tensor e = encode_batch(cfg, rg, P, audio, &enc_tr);
  const FrameAlign fa = frame_align(cfg, n);
  CHECK(p.embeddings == fa.t_emb);
  CHECK(e.shape == std::vector<int64_t>{cfg.embed_dim, fa.t_emb});

  Trace<double> dec_tr;
  Tensor y = decode_batch(cfg, rg, P, e, &dec_tr);
  CHECK(y.dim(0) == cfg.audio_channels);
  CHECK(y.dim(1) == p.out_samples);
  CHECK(p.out_samples == fa.t_emb * cfg.samples_per_embedding());

  auto group = [](const Trace<double>& tr, bool dec) {
    std::map<int, std::vector<const TensorT<double>*>> by_layer;
    for (const auto& it : tr.items)
      if (it.dec == dec) by_layer[it.layer].push_back(&it.out);
    return by_layer;
  };

  auto enc_by_layer = group(enc_tr, false);
  REQUIRE(enc_by_layer.size() == p.enc.size());
  for (size_t i = 0; i < p.enc.size(); ++i) {
    const auto& items = enc_by_layer[(int)i];
    INFO("encoder layer ", i, " (", p.enc[i].name, ")");
    CHECK((int)items.size() == p.enc[i].copies);
    for (const auto* t : items) {
      REQUIRE(t->rank() == 3);
      CHECK(t->dim(0) == p.enc[i].out[0]);
      CHECK(t->dim(1) == p.enc[i].out[1]);
      CHECK(t->dim(2) == p.enc[i].out[2]);
    }
  }

  auto dec_by_layer = group(dec_tr, true);
  REQUIRE(dec_by_layer.size() == p.dec.size());
  for (size_t i = 0; i < p.dec.size(); ++i) {
    const auto& items = dec_by_layer[(int)i];
    INFO("decoder layer ", i, " (", p.dec[i].name, ")");
    CHECK((int)items.size() == p.dec[i].copies);
    for (const auto* t : items) {
      CHECK(t->dim(0) == p.dec[i].out[0]);
      CHECK(t->dim(1) == p.dec[i].out[1]);
      CHECK(t->dim(2) == p.dec[i].out[2]);
    }
  }

  // the plan's own bookkeeping: per-layer params sum to the total
  int64_t acc = 0;
  for (const auto& l : p.enc) acc += l.params;
  for (const auto& l : p.dec) acc += l.params;
  CHECK(acc == p.gen_params);
}

void check_disc_plan(const DiscConfig& dc, int channels, int64_t n) {
  DiscParams dp = init_disc(dc, channels, 7);
  CHECK(total_disc_params(dc, channels) == disc_param_count(dp));

  const ResolvedDisc rd = resolve_discriminator(dc, channels);
  Graph g;
  DiscLeaves L = disc_leaves(g, dp, false);
  Rng rng(8);
  std::vector<Val> waves;
  for (int c = 0; c < channels; ++c)
    waves.push_back(g.constant(Tensor({n}, rand_wave(n, rng))));

  DiscOut out = build_discriminator(g, dc, rd, L, waves);
  REQUIRE(out.logits.size() == dc.window_lengths.size());
  REQUIRE(out.features.size() == dc.window_lengths.size());

  for (size_t k = 0; k < dc.window_lengths.size(); ++k) {
    DiscShapePlan sp = plan_disc(dc, channels, dc.window_lengths[k], n);
    CHECK(sp.window_len == dc.window_lengths[k]);
    const Tensor& lg = g.value(out.logits[k]);
    CHECK(lg.dim(0) == sp.head.out[0]);
    CHECK(lg.dim(1) == sp.head.out[1]);
    CHECK(lg.dim(2) == sp.head.out[2]);

    size_t expect = 0;
    for (const auto& s : sp.stages) expect += (size_t)s.copies;
    REQUIRE(out.features[k].size() == expect);
    // features are trunk-major per stage: stage i has copies_i entries
    size_t fi = 0;
    for (size_t i = 0; i < sp.stages.size(); ++i) {
      for (int c = 0; c < sp.stages[i].copies; ++c, ++fi) {
        const Tensor& ft = g.value(out.features[k][fi]);
        INFO("disc window ", sp.window_len, " stage ", i, " trunk ", c);
        CHECK(ft.dim(0) == sp.stages[i].out[0]);
        CHECK(ft.dim(1) == sp.stages[i].out[1]);
        CHECK(ft.dim(2) == sp.stages[i].out[2]);
      }
    }
    CHECK(fi == out.features[k].size());

    int64_t acc = 0;
    for (const auto& s : sp.stages) acc += s.params;
    acc += sp.head.params;
    CHECK(acc == sp.params);
  }
}

}  // namespace

TEST_CASE("plan matches the constructed network: tiny") {
  check_plan_against_network(tiny_model());
  check_plan_against_network(tiny_model(2));
}

TEST_CASE("plan matches the constructed network: desk") {
  check_plan_against_network(desk_model());
}

TEST_CASE("plan matches the constructed network: full scale") {
  check_plan_against_network(full_scale_model());
}

TEST_CASE("disc plan matches the constructed discriminators") {
  check_disc_plan(tiny_disc(), 1, 256);
  check_disc_plan(tiny_disc(), 2, 256);
  check_disc_plan(desk_disc(), 1, 4096);
}

TEST_CASE("known parameter counts") {
  // desk encoder stage 0: per-trunk conv over (re, im) planes
  ShapePlan p = plan(desk_model());
  CHECK(p.enc[0].params == 8 * 2 * 3 * 3 + 8 + 8);
  CHECK(p.enc[0].copies == 1);  // mono

  ShapePlan f = plan(full_scale_model());
  CHECK(f.enc[0].params == 32 * 2 * 3 * 3 + 32 + 32);
  // full-scale stage 4 sits above the fusion point: both channels fused
  CHECK(f.enc[4].in[0] == 2 * 128);

  // a changed multiplier must change the count
  ModelConfig m = desk_model();
  m.stages[2].mult = 8;
  CHECK(plan(m).gen_params > p.gen_params);
}

TEST_CASE("format_plan lists every layer") {
  ShapePlan p = plan(desk_model());
  std::string s = format_plan(p);
  for (const auto& l : p.enc) CHECK(s.find(l.name) != std::string::npos);
  for (const auto& l : p.dec) CHECK(s.find(l.name) != std::string::npos);
  CHECK(s.find(std::to_string(p.gen_params)) != std::string::npos);
}
