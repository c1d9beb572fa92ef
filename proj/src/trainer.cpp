#include "spst/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "spst/graph.hpp"
#include "spst/hash.hpp"
#include "spst/losses.hpp"
#include "spst/wav.hpp"

namespace fs = std::filesystem;

namespace spst {

std::string report_json_line(const LossReport& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["l_d"] = r.l_d;
  j["l_adv"] = r.l_adv;
  j["l_feat"] = r.l_feat;
  j["l_rec"] = r.l_rec;
  j["l_com"] = r.l_com;
  j["l_total"] = r.l_total;
  j["bypassed"] = r.bypassed;
  j["ms"] = r.ms;
  return j.dump();
}

// ---------------------------------------------------------------- dataset

Dataset::Dataset(const std::string& dir, const ModelConfig& cfg, int64_t example_samples)
    : n_(example_samples), channels_(cfg.audio_channels) {
  std::vector<std::string> paths;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(dir, ec)) {
    if (e.is_regular_file() && e.path().extension() == ".wav")
      paths.push_back(e.path().string());
  }
  if (ec) throw DataError("cannot read dataset dir: " + dir);
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    WavData w;
    try {
      w = read_wav(p);
    } catch (const DataError& err) {
      std::cerr << "warning: skipping " << p << ": " << err.what() << "\n";
      continue;
    }
    if (w.sample_rate != cfg.sample_rate)
      throw DataError(p + ": sample rate " + std::to_string(w.sample_rate) +
                      ", config wants " + std::to_string(cfg.sample_rate));
    if (w.channels() != channels_)
      throw DataError(p + ": " + std::to_string(w.channels()) +
                      " channels, config wants " + std::to_string(channels_));
    if (w.frames() < n_) {
      std::cerr << "warning: skipping " << p << ": shorter than one example\n";
      continue;
    }
    clips_.push_back(std::move(w.samples));
  }
  if (clips_.empty()) throw DataError("no usable training wavs in " + dir);
}

Tensor Dataset::crop(size_t file, int64_t offset) const {
  const auto& clip = clips_[file];
  Tensor out({(int64_t)channels_, n_});
  for (int c = 0; c < channels_; ++c)
    for (int64_t i = 0; i < n_; ++i)
      out.data[(size_t)(c * n_ + i)] = (double)clip[(size_t)c][(size_t)(offset + i)];
  return out;
}

Tensor Dataset::sample(Rng& rng) const {
  const size_t file = (size_t)rng.below(clips_.size());
  const int64_t range = (int64_t)clips_[file][0].size() - n_ + 1;
  const int64_t offset = (int64_t)rng.below((uint64_t)range);
  return crop(file, offset);
}

std::vector<Tensor> Dataset::sample_batch(int batch, Rng& rng) const {
  std::vector<Tensor> out;
  out.reserve((size_t)batch);
  for (int i = 0; i < batch; ++i) out.push_back(sample(rng));
  return out;
}

// ---------------------------------------------------------------- trainer

namespace {

std::vector<Tensor*> flat_gen(GenParams& p) {
  std::vector<Tensor*> out;
  for_each_param(p, [&](Tensor& t) { out.push_back(&t); });
  return out;
}
std::vector<Tensor*> flat_disc(DiscParams& p) {
  std::vector<Tensor*> out;
  for_each_disc_param(p, [&](Tensor& t) { out.push_back(&t); });
  return out;
}
std::vector<Val> flat_gen_leaves(const GenLeaves& l) {
  std::vector<Val> out;
  for (const auto& e : l.enc) {
    out.push_back(e.v);
    out.push_back(e.g);
    out.push_back(e.b);
  }
  for (const auto& d : l.dec) {
    out.push_back(d.v);
    out.push_back(d.g);
    out.push_back(d.b);
  }
  return out;
}
std::vector<Val> flat_disc_leaves(const DiscLeaves& l) {
  std::vector<Val> out;
  for (const auto& sc : l.scales) {
    for (const auto& st : sc.stages) {
      out.push_back(st.w);
      out.push_back(st.b);
      out.push_back(st.ln_g);
      out.push_back(st.ln_b);
    }
    out.push_back(sc.head_w);
    out.push_back(sc.head_b);
  }
  return out;
}

void check_finite(double v, const char* term, int64_t step) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite ") + term + " at step " +
                       std::to_string(step) + ": " + std::to_string(v));
}

Val mean_of(Graph& g, const std::vector<Val>& terms) {
  Val acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
  return g.affine(acc, 1.0 / (double)terms.size(), 0.0);
}

}  // namespace

struct Trainer::Forward {
  Tensor e;      // [dim, T] encoder output
  Tensor cols;   // [T, dim] transposed copy for codebook bookkeeping
  Tensor gx;     // [A, n] decoded audio fed to the discriminator step
  Tensor v_q;    // [dim, T]; empty on bypassed steps
  std::vector<CodeFrame> frames;
  int r = 0;
};

Trainer::Trainer(const TrainConfig& tc) : tc_(tc), books_(tc.model.rvq) {
  validate(tc_);
  rg_ = resolve_generator(tc_.model);
  rd_ = resolve_discriminator(tc_.disc, tc_.model.audio_channels);
  gp_ = init_model(tc_.model, tc_.seed);
  dp_ = init_disc(tc_.disc, tc_.model.audio_channels, tc_.seed + 1);
  data_rng_.reseed(tc_.seed + 2);
  rvq_rng_.reseed(tc_.seed + 3);
  size_t ng = 0, nd = 0;
  for_each_param(gp_, [&](Tensor&) { ++ng; });
  for_each_disc_param(dp_, [&](Tensor&) { ++nd; });
  adam_g_.assign(ng, AdamState{});
  adam_d_.assign(nd, AdamState{});
  for (auto& a : adam_g_) a.lr = tc_.lr;
  for (auto& a : adam_d_) a.lr = tc_.lr;
}

LossReport Trainer::train_step(std::span<const Tensor> batch) {
  const auto t0 = std::chrono::steady_clock::now();
  SPST_CHECK((int)batch.size() == tc_.batch_size, "batch size mismatch");
  const int64_t n = tc_.example_samples();
  for (const auto& x : batch)
    SPST_CHECK(x.rank() == 2 && x.dim(0) == tc_.model.audio_channels && x.dim(1) == n,
               "bad example shape");

  LossReport rep;
  rep.step = step_ + 1;

  // value-level forward: embeddings, quantization draws, detached fakes
  const RvqConfig& rq = tc_.model.rvq;
  rep.bypassed = rvq_rng_.coin(rq.bypass_rate);
  NormalizedParams<double> P = materialize<double>(gp_);
  std::vector<Forward> fwd((size_t)batch.size());
  for (size_t b = 0; b < batch.size(); ++b) {
    fwd[b].e = encode_batch<double>(tc_.model, rg_, P, batch[b]);
    const int64_t T = fwd[b].e.dim(1), D = fwd[b].e.dim(0);
    fwd[b].cols = Tensor({T, D});
    for (int64_t d = 0; d < D; ++d)
      for (int64_t t = 0; t < T; ++t)
        fwd[b].cols.data[(size_t)(t * D + d)] = fwd[b].e.data[(size_t)(d * T + t)];
  }
  if (!rep.bypassed) {
    if (!books_.initialized) {
      std::vector<const double*> cols;
      for (const auto& f : fwd)
        for (int64_t t = 0; t < f.cols.dim(0); ++t)
          cols.push_back(f.cols.data.data() + t * f.cols.dim(1));
      init_codebooks(books_, cols, rvq_rng_);
    }
    for (auto& f : fwd) {
      f.r = sample_dropout_level(rq, rvq_rng_);
      f.frames = quantize_map(f.e, books_, f.r);
      f.v_q = dequantize_map(f.frames, books_);
    }
  }
  for (auto& f : fwd)
    f.gx = decode_batch<double>(tc_.model, rg_, P, rep.bypassed ? f.e : f.v_q);

  disc_phase(batch, fwd, rep);
  gen_phase(batch, fwd, rep);

  if (!rep.bypassed) {
    std::vector<const double*> cols;
    std::vector<const CodeFrame*> frames;
    for (const auto& f : fwd)
      for (int64_t t = 0; t < f.cols.dim(0); ++t) {
        cols.push_back(f.cols.data.data() + t * f.cols.dim(1));
        frames.push_back(&f.frames[(size_t)t]);
      }
    ema_update(books_, rq, cols, frames, rvq_rng_);
  }

  ++step_;
  rep.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
               .count();
  return rep;
}

void Trainer::disc_phase(std::span<const Tensor> batch, const std::vector<Forward>& fwd,
                         LossReport& rep) {
  Graph g;
  DiscLeaves L = disc_leaves(g, dp_, true);
  const int A = tc_.model.audio_channels;
  const int64_t n = tc_.example_samples();
  std::vector<Val> terms;
  for (size_t b = 0; b < batch.size(); ++b) {
    std::vector<Val> real, fake;
    for (int c = 0; c < A; ++c) {
      Tensor xr({n}), xf({n});
      std::memcpy(xr.data.data(), batch[b].data.data() + c * n, sizeof(double) * (size_t)n);
      std::memcpy(xf.data.data(), fwd[b].gx.data.data() + c * n, sizeof(double) * (size_t)n);
      real.push_back(g.constant(std::move(xr)));
      fake.push_back(g.constant(std::move(xf)));
    }
    DiscOut ro = build_discriminator(g, tc_.disc, rd_, L, real);
    DiscOut fo = build_discriminator(g, tc_.disc, rd_, L, fake);
    terms.push_back(disc_hinge_loss(g, ro, fo));
  }
  Val l_d = mean_of(g, terms);
  rep.l_d = g.value(l_d).data[0];
  check_finite(rep.l_d, "l_d", rep.step);
  g.backward(l_d);
  std::vector<Tensor*> params = flat_disc(dp_);
  std::vector<Val> leaves = flat_disc_leaves(L);
  for (size_t i = 0; i < params.size(); ++i)
    adam_step(*params[i], g.grad_or_zero(leaves[i]).data, adam_d_[i]);
}

void Trainer::gen_phase(std::span<const Tensor> batch, const std::vector<Forward>& fwd,
                        LossReport& rep) {
  Graph g;
  GenLeaves L = param_leaves(g, gp_, true);
  DiscLeaves D = disc_leaves(g, dp_, false);
  const int A = tc_.model.audio_channels;
  const int64_t n = tc_.example_samples();
  const FrameAlign fa = frame_align(tc_.model, n);
  std::vector<Val> advs, feats, recs, coms;
  for (size_t b = 0; b < batch.size(); ++b) {
    std::vector<Val> enc_waves, x_waves;
    for (int c = 0; c < A; ++c) {
      Tensor xp({fa.n_pad});
      xp.data = padded_channel(batch[b].data.data() + c * n, n, fa);
      enc_waves.push_back(g.constant(std::move(xp)));
      Tensor x({n});
      std::memcpy(x.data.data(), batch[b].data.data() + c * n, sizeof(double) * (size_t)n);
      x_waves.push_back(g.constant(std::move(x)));
    }
    Val e3 = build_encoder(g, tc_.model, rg_, L, enc_waves);
    Val dec_in = e3;
    if (!rep.bypassed) {
      // straight-through: value jumps to v_q, gradient passes to the encoder
      Tensor delta(g.value(e3).shape);
      const Tensor& ev = g.value(e3);
      for (size_t i = 0; i < delta.data.size(); ++i)
        delta.data[i] = fwd[b].v_q.data[i] - ev.data[i];
      dec_in = g.add(e3, g.constant(std::move(delta)));
    }
    std::vector<Val> gen_waves = build_decoder(g, tc_.model, rg_, L, dec_in);
    DiscOut ro = build_discriminator(g, tc_.disc, rd_, D, x_waves);
    DiscOut fo = build_discriminator(g, tc_.disc, rd_, D, gen_waves);
    advs.push_back(gen_adv_loss(g, fo));
    feats.push_back(feature_loss(g, ro, fo));
    recs.push_back(reconstruction_loss(g, x_waves, gen_waves, tc_.model.sample_rate));
    if (!rep.bypassed)
      coms.push_back(commit_loss(g, e3, fwd[b].v_q));
    else
      coms.push_back(g.constant(Tensor(std::vector<int64_t>{})));
  }
  Val adv = mean_of(g, advs), feat = mean_of(g, feats), rec = mean_of(g, recs),
      com = mean_of(g, coms);
  Val total = total_generator_loss(g, adv, feat, rec, com, tc_.weights);
  rep.l_adv = g.value(adv).data[0];
  rep.l_feat = g.value(feat).data[0];
  rep.l_rec = g.value(rec).data[0];
  rep.l_com = g.value(com).data[0];
  rep.l_total = g.value(total).data[0];
  check_finite(rep.l_adv, "l_adv", rep.step);
  check_finite(rep.l_feat, "l_feat", rep.step);
  check_finite(rep.l_rec, "l_rec", rep.step);
  check_finite(rep.l_com, "l_com", rep.step);
  check_finite(rep.l_total, "l_total", rep.step);
  g.backward(total);
  std::vector<Tensor*> params = flat_gen(gp_);
  std::vector<Val> leaves = flat_gen_leaves(L);
  for (size_t i = 0; i < params.size(); ++i)
    adam_step(*params[i], g.grad_or_zero(leaves[i]).data, adam_g_[i]);
}

// ------------------------------------------------------------- checkpoint

namespace {

constexpr char kCkptMagic[4] = {'S', 'P', 'C', 'K'};
constexpr uint8_t kCkptVersion = 1;

struct Sink {
  std::vector<uint8_t> b;
  void u8(uint8_t v) { b.push_back(v); }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back((uint8_t)((v >> (8 * i)) & 0xff));
  }
  void raw(const void* p, size_t nbytes) {
    const uint8_t* s = (const uint8_t*)p;
    b.insert(b.end(), s, s + nbytes);
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void i32s(const std::vector<int32_t>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(int32_t));
  }
};

struct Source {
  const uint8_t* p;
  const uint8_t* end;
  uint8_t u8() {
    SPST_CHECK(p < end, "checkpoint underrun");
    return *p++;
  }
  uint64_t u64() {
    SPST_CHECK(p + 8 <= end, "checkpoint underrun");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= (uint64_t)p[i] << (8 * i);
    p += 8;
    return v;
  }
  void raw(void* dst, size_t nbytes) {
    SPST_CHECK(p + nbytes <= end, "checkpoint underrun");
    std::memcpy(dst, p, nbytes);
    p += nbytes;
  }
  std::vector<double> doubles() {
    const uint64_t n = u64();
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }
  std::vector<int32_t> i32s() {
    const uint64_t n = u64();
    std::vector<int32_t> v(n);
    raw(v.data(), n * sizeof(int32_t));
    return v;
  }
};

void put_rng(Sink& s, const Rng& r) {
  const Rng::State st = r.state();
  for (uint64_t w : st.s) s.u64(w);
  s.u64(st.cached_bits);
  s.u8(st.have_cached);
}
void get_rng(Source& s, Rng& r) {
  Rng::State st;
  for (auto& w : st.s) w = s.u64();
  st.cached_bits = s.u64();
  st.have_cached = s.u8();
  r.restore(st);
}

void put_adam(Sink& s, const AdamState& a) {
  s.u64((uint64_t)a.step);
  s.doubles(a.m);
  s.doubles(a.v);
}
void get_adam(Source& s, AdamState& a) {
  a.step = (int64_t)s.u64();
  a.m = s.doubles();
  a.v = s.doubles();
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  Sink s;
  s.raw(kCkptMagic, 4);
  s.u8(kCkptVersion);
  s.u64(config_hash(tc_));
  const std::string cfg_text = render_train_config(tc_);
  s.u64(cfg_text.size());
  s.raw(cfg_text.data(), cfg_text.size());
  s.u64((uint64_t)step_);
  auto& self = const_cast<Trainer&>(*this);
  for_each_param(self.gp_, [&](Tensor& t) { s.doubles(t.data); });
  for_each_disc_param(self.dp_, [&](Tensor& t) { s.doubles(t.data); });
  s.u8(books_.initialized ? 1 : 0);
  s.doubles(books_.centroids.data);
  s.doubles(books_.ema_counts.data);
  s.doubles(books_.ema_sums.data);
  s.i32s(books_.unused_updates);
  s.u64(adam_g_.size());
  for (const auto& a : adam_g_) put_adam(s, a);
  s.u64(adam_d_.size());
  for (const auto& a : adam_d_) put_adam(s, a);
  put_rng(s, data_rng_);
  put_rng(s, rvq_rng_);
  const uint64_t sum = fnv1a64(s.b.data(), s.b.size());
  s.u64(sum);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write((const char*)s.b.data(), (std::streamsize)s.b.size());
  if (!f) throw DataError("checkpoint write failed: " + path);
}

namespace {

// Verified bytes plus a cursor positioned after magic/version.
struct CkptBlob {
  std::vector<uint8_t> bytes;
  uint64_t hash = 0;
  std::string cfg_text;
  size_t body_off = 0;  // offset of the step counter
};

CkptBlob open_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  CkptBlob cb;
  cb.bytes.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (cb.bytes.size() < 29 || std::memcmp(cb.bytes.data(), kCkptMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  uint64_t stored = 0;
  std::memcpy(&stored, cb.bytes.data() + cb.bytes.size() - 8, 8);
  if (fnv1a64(cb.bytes.data(), cb.bytes.size() - 8) != stored)
    throw DataError("checkpoint integrity check failed: " + path);
  Source s{cb.bytes.data() + 4, cb.bytes.data() + cb.bytes.size() - 8};
  if (s.u8() != kCkptVersion) throw DataError("unsupported checkpoint version");
  cb.hash = s.u64();
  const uint64_t len = s.u64();
  cb.cfg_text.resize(len);
  s.raw(cb.cfg_text.data(), len);
  cb.body_off = (size_t)(s.p - cb.bytes.data());
  return cb;
}

}  // namespace

Trainer Trainer::load_checkpoint(const std::string& path) {
  CkptBlob cb = open_checkpoint(path);
  TrainConfig tc = parse_train_config_text(cb.cfg_text);
  return load_checkpoint(path, tc);
}

Trainer Trainer::load_checkpoint(const std::string& path, const TrainConfig& tc) {
  CkptBlob cb = open_checkpoint(path);
  if (cb.hash != config_hash(tc))
    throw ConfigError("checkpoint was written under a different config, refusing to resume");
  Source s{cb.bytes.data() + cb.body_off, cb.bytes.data() + cb.bytes.size() - 8};
  Trainer tr(tc);
  tr.step_ = (int64_t)s.u64();
  auto load_tensor = [&](Tensor& t) {
    std::vector<double> d = s.doubles();
    SPST_CHECK(d.size() == t.data.size(), "checkpoint tensor size mismatch");
    t.data = std::move(d);
  };
  for_each_param(tr.gp_, load_tensor);
  for_each_disc_param(tr.dp_, load_tensor);
  tr.books_.initialized = s.u8() != 0;
  load_tensor(tr.books_.centroids);
  load_tensor(tr.books_.ema_counts);
  load_tensor(tr.books_.ema_sums);
  tr.books_.unused_updates = s.i32s();
  SPST_CHECK((int)tr.books_.unused_updates.size() ==
                 tr.books_.levels * tr.books_.vocab,
             "checkpoint codebook state size mismatch");
  SPST_CHECK(s.u64() == tr.adam_g_.size(), "checkpoint optimizer count mismatch");
  for (auto& a : tr.adam_g_) get_adam(s, a);
  SPST_CHECK(s.u64() == tr.adam_d_.size(), "checkpoint optimizer count mismatch");
  for (auto& a : tr.adam_d_) get_adam(s, a);
  get_rng(s, tr.data_rng_);
  get_rng(s, tr.rvq_rng_);
  SPST_CHECK(s.p == s.end, "checkpoint has trailing bytes");
  return tr;
}

// ------------------------------------------------------------------- loop

LossReport run_training(const TrainConfig& tc, const std::string& resume,
                        const std::function<void(const LossReport&)>& on_step) {
  Dataset ds(tc.dataset_dir, tc.model, tc.example_samples());
  Trainer tr = resume.empty() ? Trainer(tc) : Trainer::load_checkpoint(resume, tc);
  fs::create_directories(tc.out_dir);
  const std::string log_path = tc.out_dir + "/train_log.jsonl";
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw DataError("cannot write " + log_path);
  auto ckpt_path = [&](int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_%08lld.spck", (long long)step);
    return tc.out_dir + "/" + buf;
  };
  LossReport last;
  last.step = tr.step();
  while (tr.step() < tc.steps) {
    std::vector<Tensor> batch = ds.sample_batch(tc.batch_size, tr.data_rng());
    last = tr.train_step(batch);
    log << report_json_line(last) << "\n";
    log.flush();
    if (on_step) on_step(last);
    if (tc.checkpoint_every > 0 && tr.step() % tc.checkpoint_every == 0)
      tr.save_checkpoint(ckpt_path(tr.step()));
  }
  if (tc.checkpoint_every <= 0 || tr.step() % tc.checkpoint_every != 0)
    tr.save_checkpoint(ckpt_path(tr.step()));
  return last;
}

// ------------------------------------------------------------------ eval

double reconstruction_distance(const Tensor& x, const Tensor& y, int sample_rate) {
  SPST_CHECK(x.shape == y.shape && x.rank() == 2, "metric wants equal [channels, n]");
  Graph g;
  std::vector<Val> xs, ys;
  const int64_t n = x.dim(1);
  for (int64_t c = 0; c < x.dim(0); ++c) {
    Tensor xc({n}), yc({n});
    std::memcpy(xc.data.data(), x.data.data() + c * n, sizeof(double) * (size_t)n);
    std::memcpy(yc.data.data(), y.data.data() + c * n, sizeof(double) * (size_t)n);
    xs.push_back(g.constant(std::move(xc)));
    ys.push_back(g.constant(std::move(yc)));
  }
  return g.value(reconstruction_loss(g, xs, ys, sample_rate)).data[0];
}

double snr_db(const Tensor& x, const Tensor& y) {
  SPST_CHECK(x.shape == y.shape && x.rank() == 2, "metric wants equal [channels, n]");
  const int64_t A = x.dim(0), n = x.dim(1);
  double acc = 0;
  for (int64_t c = 0; c < A; ++c) {
    double sig = 0, err = 0;
    for (int64_t i = 0; i < n; ++i) {
      const double xv = x.data[(size_t)(c * n + i)];
      const double d = xv - y.data[(size_t)(c * n + i)];
      sig += xv * xv;
      err += d * d;
    }
    if (err == 0) return HUGE_VAL;
    acc += 10.0 * std::log10(sig / err);
  }
  return acc / (double)A;
}

}  // namespace spst
