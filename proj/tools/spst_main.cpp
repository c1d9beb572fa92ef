#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spst/bitstream.hpp"
#include "spst/codec_net.hpp"
#include "spst/config.hpp"
#include "spst/shapes.hpp"
#include "spst/streaming.hpp"
#include "spst/trainer.hpp"
#include "spst/wav.hpp"

namespace {

using namespace spst;

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write: " + path);
  f.write((const char*)bytes.data(), (std::streamsize)bytes.size());
  if (!f) throw DataError("write failed: " + path);
}

Tensor wav_to_tensor(const WavData& w) {
  Tensor x({(int64_t)w.channels(), w.frames()});
  for (int c = 0; c < w.channels(); ++c)
    for (int64_t i = 0; i < w.frames(); ++i)
      x.data[(size_t)(c * w.frames() + i)] = (double)w.samples[(size_t)c][(size_t)i];
  return x;
}

void check_wav_matches(const WavData& w, const ModelConfig& m, const std::string& path) {
  if (w.sample_rate != m.sample_rate)
    throw DataError(path + " is " + std::to_string(w.sample_rate) + " Hz, the model wants " +
                    std::to_string(m.sample_rate) + " Hz; resample first");
  if (w.channels() != m.audio_channels)
    throw DataError(path + " has " + std::to_string(w.channels()) +
                    " channels, the model wants " + std::to_string(m.audio_channels));
}

int depth_from_flags(const ModelConfig& m, int depth, double kbps) {
  int bits = 0;
  while ((1 << bits) < m.rvq.vocab) ++bits;
  if (depth > 0 && kbps > 0)
    throw ConfigError("--depth and --bitrate-kbps are mutually exclusive");
  if (kbps > 0) {
    const double per_level = bits * m.embedding_rate();  // bits/s of one level
    const double r = kbps * 1000.0 / per_level;
    const int ri = (int)std::llround(r);
    if (std::abs(r - ri) > 1e-9 || ri < 1 || ri > m.rvq.levels) {
      std::string valid;
      for (int k = 1; k <= m.rvq.levels; ++k) {
        const double v = k * per_level / 1000.0;
        if (v == std::floor(v)) valid += (valid.empty() ? "" : ", ") + std::to_string((int)v);
      }
      throw ConfigError("--bitrate-kbps " + std::to_string(kbps) +
                        " does not map to a whole depth; integer choices: " + valid);
    }
    return ri;
  }
  if (depth == 0) return m.rvq.levels;
  if (depth < 1 || depth > m.rvq.levels)
    throw ConfigError("--depth " + std::to_string(depth) + " out of range; valid: 1.." +
                      std::to_string(m.rvq.levels));
  return depth;
}

std::string hex(const std::array<uint8_t, 16>& id) {
  char buf[33];
  for (int i = 0; i < 16; ++i) std::snprintf(buf + 2 * i, 3, "%02x", id[i]);
  return std::string(buf, 32);
}

int cmd_train(const std::string& config_path, const std::string& resume) {
  TrainConfig tc = parse_train_config(config_path);
  LossReport last = run_training(tc, resume, [](const LossReport& r) {
    if (r.step % 50 == 0 || r.step <= 5)
      std::cerr << "step " << r.step << "  l_total " << r.l_total << "  l_rec " << r.l_rec
                << "  (" << r.ms << " ms)\n";
  });
  std::cout << report_json_line(last) << "\n";
  return 0;
}

int cmd_encode(const std::string& ckpt, const std::string& wav_in,
               const std::string& stream_out, int depth, double kbps, bool streaming) {
  Trainer tr = Trainer::load_checkpoint(ckpt);
  const ModelConfig& m = tr.config().model;
  const int r = depth_from_flags(m, depth, kbps);
  if (!tr.books().initialized)
    throw DataError("checkpoint has uninitialized codebooks; train first");
  WavData w = read_wav(wav_in);
  check_wav_matches(w, m, wav_in);
  const ResolvedGen rg = resolve_generator(m);
  NormalizedParams<double> P = materialize<double>(tr.gen());
  std::vector<CodeFrame> frames;
  if (streaming) {
    StreamEncoder<double> enc(m, &P);
    std::vector<std::vector<double>> chans;
    for (const auto& ch : w.samples) chans.emplace_back(ch.begin(), ch.end());
    std::vector<std::vector<double>> embs;
    enc.push(chans, embs);
    enc.flush(embs);
    for (const auto& e : embs) frames.push_back(quantize(e.data(), tr.books(), r));
  } else {
    Tensor x = wav_to_tensor(w);
    if (x.dim(1) < m.samples_per_embedding())
      throw DataError(wav_in + " is shorter than one embedding (" +
                      std::to_string(m.samples_per_embedding()) + " samples)");
    Tensor e = encode_batch<double>(m, rg, P, x);
    frames = quantize_map(e, tr.books(), r);
  }
  StreamHeader h =
      make_header(m, model_id_hash(m, tr.books()), r, (int64_t)frames.size());
  write_file(stream_out, write_stream(h, frames));
  std::cout << stream_out << ": " << frames.size() << " frames, depth " << (int)h.depth
            << ", " << bitrate_bps(m.rvq, m.embedding_rate(), r) / 1000.0 << " kbps\n";
  return 0;
}

int cmd_decode(const std::string& ckpt, const std::string& stream_in,
               const std::string& wav_out, bool streaming) {
  Trainer tr = Trainer::load_checkpoint(ckpt);
  const ModelConfig& m = tr.config().model;
  auto [h, frames] = read_stream(read_file(stream_in));
  if (h.model_id != model_id_hash(m, tr.books()))
    throw DataError(stream_in + " was encoded with a different model (model_id " +
                    hex(h.model_id) + "), refusing to decode");
  if ((int)h.sample_rate != m.sample_rate || h.audio_channels != m.audio_channels ||
      h.window_len != m.stft.window_len || h.hop != m.stft.hop)
    throw DataError(stream_in + " header does not match the checkpoint's model");
  const int64_t T = (int64_t)frames.size();
  if (T == 0) throw DataError(stream_in + " holds zero frames");
  WavData out;
  out.sample_rate = m.sample_rate;
  out.samples.assign((size_t)m.audio_channels, {});
  if (streaming) {
    const ResolvedGen rg = resolve_generator(m);
    NormalizedParams<double> P = materialize<double>(tr.gen());
    StreamDecoder<double> dec(m, &P);
    std::vector<std::vector<double>> chans;
    std::vector<double> emb((size_t)m.embed_dim);
    for (const auto& f : frames) {
      dequantize(f, tr.books(), emb.data());
      dec.push(emb, chans);
    }
    dec.flush(chans);
    for (int c = 0; c < m.audio_channels; ++c)
      out.samples[(size_t)c].assign(chans[(size_t)c].begin(), chans[(size_t)c].end());
  } else {
    const ResolvedGen rg = resolve_generator(m);
    NormalizedParams<double> P = materialize<double>(tr.gen());
    Tensor e({m.embed_dim, T});
    std::vector<double> col((size_t)m.embed_dim);
    for (int64_t t = 0; t < T; ++t) {
      dequantize(frames[(size_t)t], tr.books(), col.data());
      for (int64_t d = 0; d < m.embed_dim; ++d)
        e.data[(size_t)(d * T + t)] = col[(size_t)d];
    }
    Tensor y = decode_batch<double>(m, rg, P, e);
    for (int c = 0; c < m.audio_channels; ++c) {
      out.samples[(size_t)c].resize((size_t)y.dim(1));
      for (int64_t i = 0; i < y.dim(1); ++i)
        out.samples[(size_t)c][(size_t)i] = (float)y.data[(size_t)(c * y.dim(1) + i)];
    }
  }
  write_wav(wav_out, out, 16);
  std::cout << wav_out << ": " << out.frames() << " samples x " << out.channels()
            << " channels\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& wav_in, std::vector<int> depths) {
  Trainer tr = Trainer::load_checkpoint(ckpt);
  const ModelConfig& m = tr.config().model;
  if (!tr.books().initialized)
    throw DataError("checkpoint has uninitialized codebooks; train first");
  WavData w = read_wav(wav_in);
  check_wav_matches(w, m, wav_in);
  Tensor x = wav_to_tensor(w);
  const FrameAlign fa = frame_align(m, x.dim(1));
  Tensor x_use({x.dim(0), fa.n_use});
  for (int64_t c = 0; c < x.dim(0); ++c)
    std::memcpy(x_use.data.data() + c * fa.n_use, x.data.data() + c * x.dim(1),
                sizeof(double) * (size_t)fa.n_use);
  if (depths.empty())
    for (int r = 1; r <= m.rvq.levels; r *= 2) depths.push_back(r);
  const ResolvedGen rg = resolve_generator(m);
  NormalizedParams<double> P = materialize<double>(tr.gen());
  for (int r : depths) {
    if (r < 1 || r > m.rvq.levels)
      throw ConfigError("depth " + std::to_string(r) + " out of range; valid: 1.." +
                        std::to_string(m.rvq.levels));
    Tensor y = reconstruct_batch<double>(m, rg, P, tr.books(), x, r);
    nlohmann::ordered_json j;
    j["depth"] = r;
    j["kbps"] = bitrate_bps(m.rvq, m.embedding_rate(), r) / 1000.0;
    j["mel_distance"] = reconstruction_distance(x_use, y, m.sample_rate);
    std::vector<double> per;
    for (int64_t c = 0; c < x_use.dim(0); ++c) {
      Tensor xc({1, fa.n_use}), yc({1, fa.n_use});
      std::memcpy(xc.data.data(), x_use.data.data() + c * fa.n_use,
                  sizeof(double) * (size_t)fa.n_use);
      std::memcpy(yc.data.data(), y.data.data() + c * fa.n_use,
                  sizeof(double) * (size_t)fa.n_use);
      per.push_back(snr_db(xc, yc));
    }
    j["snr_db_per_channel"] = per;
    j["snr_db"] = snr_db(x_use, y);
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int cmd_info(const std::string& stream_in, const std::string& model_config) {
  if (!model_config.empty()) {
    TrainConfig tc = parse_train_config(model_config);
    std::cout << format_plan(plan(tc.model));
    return 0;
  }
  auto [h, frames] = read_stream_prefix(read_file(stream_in));
  std::cout << "sample_rate: " << h.sample_rate << "\n"
            << "channels: " << (int)h.audio_channels << "\n"
            << "window: " << h.window_len << "\n"
            << "hop: " << h.hop << "\n"
            << "embedding_rate: " << h.embedding_rate << "\n"
            << "depth: " << (int)h.depth << "\n"
            << "vocab_bits: " << (int)h.vocab_bits << "\n"
            << "frame_count: " << h.frame_count << "\n"
            << "model_id: " << hex(h.model_id) << "\n"
            << "duration_s: " << (double)h.frame_count / h.embedding_rate << "\n"
            << "kbps: " << (double)h.depth * h.vocab_bits * h.embedding_rate / 1000.0
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SpectroStream-style neural audio codec"};
  app.require_subcommand(1);

  std::string config_path, resume;
  auto* train = app.add_subcommand("train", "run the training loop");
  train->add_option("config", config_path, "key=value config file")->required();
  train->add_option("--resume", resume, "checkpoint to continue from");

  std::string ckpt, wav_in, stream_out, stream_in, wav_out;
  int depth = 0;
  double kbps = 0;
  bool streaming = false;
  auto* enc = app.add_subcommand("encode", "wav -> bitstream");
  enc->add_option("ckpt", ckpt, "checkpoint")->required();
  enc->add_option("wav_in", wav_in, "input wav")->required();
  enc->add_option("stream_out", stream_out, "output bitstream")->required();
  enc->add_option("--depth", depth, "RVQ depth r");
  enc->add_option("--bitrate-kbps", kbps, "target bitrate (must map to a whole depth)");
  enc->add_flag("--streaming", streaming, "use the streaming engine");

  auto* dec = app.add_subcommand("decode", "bitstream -> wav");
  dec->add_option("ckpt", ckpt, "checkpoint")->required();
  dec->add_option("stream_in", stream_in, "input bitstream")->required();
  dec->add_option("wav_out", wav_out, "output wav")->required();
  dec->add_flag("--streaming", streaming, "use the streaming engine");

  std::vector<int> depths;
  auto* ev = app.add_subcommand("eval", "reconstruction metrics per depth");
  ev->add_option("ckpt", ckpt, "checkpoint")->required();
  ev->add_option("wav_in", wav_in, "reference wav")->required();
  ev->add_option("--depths", depths, "depths to sweep")->delimiter(',');

  std::string model_config;
  auto* info = app.add_subcommand("info", "print a stream header or a model plan");
  info->add_option("stream_in", stream_in, "bitstream to describe");
  info->add_option("--model", model_config, "config file: print the shape plan instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp")
      return app.exit(e);
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, resume);
    if (enc->parsed()) return cmd_encode(ckpt, wav_in, stream_out, depth, kbps, streaming);
    if (dec->parsed()) return cmd_decode(ckpt, stream_in, wav_out, streaming);
    if (ev->parsed()) return cmd_eval(ckpt, wav_in, depths);
    if (info->parsed()) {
      if (stream_in.empty() && model_config.empty())
        throw spst::ConfigError("info needs a stream file or --model <config>");
      return cmd_info(stream_in, model_config);
    }
  } catch (const spst::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const spst::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const spst::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
