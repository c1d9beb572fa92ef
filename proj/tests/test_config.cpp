#include <fstream>

#include "doctest.h"
#include "spst/config.hpp"
#include "test_util.hpp"

using namespace spst;
using namespace spst::testutil;

TEST_CASE("presets validate") {
  validate(desk_model());
  validate(full_scale_model());
  TrainConfig t = desk_train();
  t.dataset_dir = "unused";
  validate(t);

  TrainConfig f;
  f.model = full_scale_model();
  f.disc = full_scale_disc();
  validate(f);
}

TEST_CASE("full-scale preset matches the published architecture") {
  ModelConfig m = full_scale_model();
  CHECK(m.sample_rate == 48000);
  CHECK(m.audio_channels == 2);
  CHECK(m.stft.window_len == 960);
  CHECK(m.stft.hop == 480);
  CHECK(m.embed_dim == 256);
  CHECK(m.frames_per_embedding == 4);
  CHECK(m.rvq.levels == 64);
  CHECK(m.rvq.vocab == 1024);
  CHECK(m.embedding_rate() == doctest::Approx(25.0));
  CHECK(m.samples_per_embedding() == 1920);
  // 25 embeddings/s * 64 levels * 10 bits = 16 kbps at full depth
  CHECK(m.embedding_rate() * m.rvq.levels * 10 == doctest::Approx(16000.0));
}

TEST_CASE("model validation rejects bad settings") {
  auto m = tiny_model();
  validate(m);

  auto bad = m;
  bad.stft.hop = 30;
  CHECK_THROWS_AS(validate(bad), ConfigError);

  bad = m;
  bad.embed_dim = 12;  // != rvq.dim
  CHECK_THROWS_AS(validate(bad), ConfigError);

  bad = m;
  bad.frames_per_embedding = 8;  // stride product is 4
  CHECK_THROWS_AS(validate(bad), ConfigError);

  bad = m;
  bad.head_kf = 5;  // frequency chain ends at 4
  CHECK_THROWS_AS(validate(bad), ConfigError);

  bad = m;
  bad.fusion_stage_index = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad.fusion_stage_index = 2;
  CHECK_THROWS_AS(validate(bad), ConfigError);

  bad = m;
  bad.rvq.levels = 6;  // not a multiple of 4
  CHECK_THROWS_AS(validate(bad), ConfigError);

  bad = m;
  bad.stages[0].st = 3;  // stride > kernel
  CHECK_THROWS_AS(validate(bad), ConfigError);

  bad = m;
  bad.decoder_lookahead_embeddings = 2;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("train validation rejects bad settings") {
  TrainConfig t;
  t.model = tiny_model();
  t.disc = tiny_disc();
  t.example_len_s = 1.024;  // 8192 samples, 64 embedding groups
  validate(t);

  auto bad = t;
  bad.example_len_s = 0.99;  // 7920 samples, not a multiple of 128
  CHECK_THROWS_AS(validate(bad), ConfigError);

  bad = t;
  bad.example_len_s = 0.256;  // 2048 samples: shorter than 2x the largest mel window
  CHECK_THROWS_AS(validate(bad), ConfigError);

  bad = t;
  bad.batch_size = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);

  bad = t;
  bad.lr = 0.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);

  bad = t;
  bad.disc.stages.resize(1);
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("render and parse round trip") {
  TrainConfig t = desk_train();
  t.steps = 777;
  t.batch_size = 3;
  t.example_len_s = 0.64;
  t.lr = 3.25e-4;
  t.seed = 987654321;
  t.dataset_dir = "/some/where";
  t.out_dir = "/else/where";
  t.checkpoint_every = 123;
  t.weights = {0.5, 17.0, 2.0, 0.25};
  t.model.stages[1].kf = 5;  // kernel only; the frequency chain is stride-driven
  validate(t);

  const std::string text = render_train_config(t);
  TrainConfig u = parse_train_config_text(text);
  CHECK(render_train_config(u) == text);
  CHECK(config_hash(u) == config_hash(t));
  CHECK(u.steps == 777);
  CHECK(u.lr == 3.25e-4);
  CHECK(u.seed == 987654321);
  CHECK(u.dataset_dir == "/some/where");
  CHECK(u.model.stages[1].kf == 5);
  CHECK(u.weights.feat == 17.0);
}

TEST_CASE("parse applies presets then overrides") {
  TrainConfig t = parse_train_config_text(
      "# comment line\n"
      "preset = desk\n"
      "train.steps = 42\n"
      "model.embed_dim = 32\n"
      "loss.feat = 5.5\n");
  CHECK(t.steps == 42);
  CHECK(t.model.embed_dim == 32);
  CHECK(t.model.rvq.dim == 32);  // quantizer dim follows the embedding
  CHECK(t.model.sample_rate == desk_model().sample_rate);
  CHECK(t.weights.feat == 5.5);

  TrainConfig f = parse_train_config_text("preset = full\n");
  CHECK(f.model.stft.window_len == 960);
  CHECK(f.disc.window_lengths == full_scale_disc().window_lengths);
}

TEST_CASE("parse rejects junk") {
  CHECK_THROWS_AS(parse_train_config_text("no_such_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config_text("train.steps 42\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config_text("train.steps = twelve\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config_text("preset = biggest\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config_text("model.stages = 3x3:1x1\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config(std::string("/nonexistent/path.cfg")), ConfigError);
}

TEST_CASE("config file parsing") {
  TempDir td;
  std::ofstream(td.file("a.cfg")) << "preset = desk\ntrain.steps = 5\n";
  TrainConfig t = parse_train_config(td.file("a.cfg"));
  CHECK(t.steps == 5);
}

TEST_CASE("hash covers the model but not run bookkeeping") {
  TrainConfig a = desk_train();
  a.dataset_dir = "x";
  const uint64_t h = config_hash(a);

  auto b = a;
  b.steps += 1000;
  CHECK(config_hash(b) == h);  // run length may change on resume
  b.out_dir = "/tmp/elsewhere";
  b.dataset_dir = "/moved";
  b.checkpoint_every = 9999;
  CHECK(config_hash(b) == h);  // paths and cadence are not part of the model

  b = a;
  b.lr = 2e-4;
  CHECK(config_hash(b) != h);
  b = a;
  b.batch_size = 4;
  CHECK(config_hash(b) != h);
  b = a;
  b.seed = 2;
  CHECK(config_hash(b) != h);
  b = a;
  b.model.embed_dim = 128;
  CHECK(config_hash(b) != h);
  b = a;
  b.disc.base_depth = 8;
  CHECK(config_hash(b) != h);
  b = a;
  b.weights.rec = 2.0;
  CHECK(config_hash(b) != h);
  b = a;
  b.model.stages[0].kt = 4;
  CHECK(config_hash(b) != h);
}
