#include "spst/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "spst/errors.hpp"
#include "spst/hash.hpp"

namespace spst {

static int64_t same_pad_out(int64_t n, int stride) { return (n - 1) / stride + 1; }

void validate(const ModelConfig& cfg) {
  if (cfg.sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (cfg.audio_channels < 1) throw ConfigError("audio_channels must be >= 1");
  if (cfg.stft.window_len <= 0 || cfg.stft.hop <= 0)
    throw ConfigError("stft window and hop must be positive");
  if (cfg.stft.window_len != 2 * cfg.stft.hop)
    throw ConfigError("stft hop must be half the window length");
  if (cfg.stft.window_len % 2 != 0) throw ConfigError("stft window length must be even");
  if (cfg.embed_dim <= 0) throw ConfigError("embed_dim must be positive");
  if (cfg.embed_dim != cfg.rvq.dim)
    throw ConfigError("embed_dim must equal the quantizer dimension");
  if (cfg.stages.empty()) throw ConfigError("model needs at least one stage");
  const int S = (int)cfg.stages.size();
  if (cfg.fusion_stage_index <= 0 || cfg.fusion_stage_index >= S)
    throw ConfigError("fusion_stage_index must lie strictly inside the stage list");
  int64_t t_prod = 1;
  for (const auto& s : cfg.stages) {
    if (s.kt < 1 || s.kf < 1 || s.st < 1 || s.sf < 1 || s.mult < 1)
      throw ConfigError("stage kernel/stride/mult entries must be >= 1");
    if (s.st > s.kt || s.sf > s.kf)
      throw ConfigError("stage stride must not exceed its kernel");
    t_prod *= s.st;
  }
  if (t_prod != cfg.frames_per_embedding)
    throw ConfigError("product of time strides (" + std::to_string(t_prod) +
                      ") must equal frames_per_embedding (" +
                      std::to_string(cfg.frames_per_embedding) + ")");
  int64_t f = cfg.stft.bins();
  for (const auto& s : cfg.stages) f = same_pad_out(f, s.sf);
  if (f != cfg.head_kf)
    throw ConfigError("encoder frequency chain ends at " + std::to_string(f) +
                      " but head_kf is " + std::to_string(cfg.head_kf));
  if (cfg.decoder_lookahead_embeddings != 1)
    throw ConfigError("decoder_lookahead_embeddings must be 1");
  if (cfg.rvq.levels < 4 || cfg.rvq.levels % 4 != 0)
    throw ConfigError("rvq levels must be a positive multiple of 4");
  if (cfg.rvq.vocab < 2) throw ConfigError("rvq vocab must be >= 2");
  if (cfg.rvq.ema_decay <= 0.0 || cfg.rvq.ema_decay >= 1.0)
    throw ConfigError("rvq ema_decay must lie in (0,1)");
  if (cfg.rvq.bypass_rate < 0.0 || cfg.rvq.bypass_rate > 1.0)
    throw ConfigError("rvq bypass_rate must lie in [0,1]");
}

ResolvedGen resolve_generator(const ModelConfig& cfg) {
  validate(cfg);
  const int S = (int)cfg.stages.size();
  const int A = cfg.audio_channels;
  const int fuse = cfg.fusion_stage_index;

  ResolvedGen r;
  r.fusion_index = fuse;
  r.dec_split_after = S - 1 - fuse;

  r.f_chain.push_back(cfg.stft.bins());
  for (const auto& s : cfg.stages) r.f_chain.push_back(same_pad_out(r.f_chain.back(), s.sf));

  // Encoder stage i consumes m_{i-1}*C_e channels, times A right after the
  // fusion concat. Stage 0 sees the raw [re,im] planes.
  auto enc_in = [&](int i) {
    if (i == 0) return 2;
    return cfg.stages[i - 1].mult * cfg.enc_base_depth * (i == fuse + 1 ? A : 1);
  };
  for (int i = 0; i < S; ++i) {
    const auto& s = cfg.stages[i];
    r.enc.push_back({s.kt, s.kf, s.st, s.sf, enc_in(i), s.mult * cfg.enc_base_depth,
                     PadSpec::kCausalSame, false, i > 0});
  }
  r.enc.push_back({1, cfg.head_kf, 1, 1, enc_in(S), cfg.embed_dim, PadSpec::kValid, false, true});

  // Decoder mirrors the encoder with transposed convs at the same strides,
  // swapping C_e for C_d. The head comes first and is not pre-activated.
  auto dec_out = [&](int i) {  // mirror of enc_in, on the decoder depth
    if (i == 0) return 2;
    return cfg.stages[i - 1].mult * cfg.dec_base_depth * (i == fuse + 1 ? A : 1);
  };
  r.dec.push_back({1, cfg.head_kf, 1, 1, cfg.embed_dim, dec_out(S), PadSpec::kValid, true, false});
  for (int i = S - 1; i >= 0; --i) {
    const auto& s = cfg.stages[i];
    r.dec.push_back({s.kt, s.kf, s.st, s.sf, s.mult * cfg.dec_base_depth, dec_out(i),
                     PadSpec::kAnticausalSame, true, true});
  }
  return r;
}

ResolvedDisc resolve_discriminator(const DiscConfig& cfg, int audio_channels) {
  if (cfg.window_lengths.empty()) throw ConfigError("discriminator needs window lengths");
  for (int w : cfg.window_lengths)
    if (w < 4 || w % 2 != 0) throw ConfigError("discriminator windows must be even and >= 4");
  if (cfg.stages.size() < 2) throw ConfigError("discriminator needs at least two stages");
  const int S = (int)cfg.stages.size();
  if (cfg.fusion_stage_index <= 0 || cfg.fusion_stage_index >= S)
    throw ConfigError("discriminator fusion_stage_index must lie strictly inside the stage list");
  if (cfg.base_depth < 1) throw ConfigError("discriminator base_depth must be >= 1");
  if (cfg.leaky_slope <= 0.0 || cfg.leaky_slope >= 1.0)
    throw ConfigError("discriminator leaky_slope must lie in (0,1)");
  if (audio_channels < 1) throw ConfigError("audio_channels must be >= 1");

  ResolvedDisc r;
  r.fusion_index = cfg.fusion_stage_index;
  auto in_ch = [&](int i) {
    if (i == 0) return 3;  // re, im, modulus planes
    return cfg.stages[i - 1].mult * cfg.base_depth *
           (i == cfg.fusion_stage_index + 1 ? audio_channels : 1);
  };
  for (int i = 0; i < S; ++i) {
    const auto& s = cfg.stages[i];
    if (s.kt < 1 || s.kf < 1 || s.st < 1 || s.sf < 1 || s.mult < 1)
      throw ConfigError("discriminator stage entries must be >= 1");
    r.stages.push_back({s.kt, s.kf, s.st, s.sf, in_ch(i), s.mult * cfg.base_depth,
                        PadSpec::kSymmetric, false, false});
  }
  r.head = {3, 3, 1, 1, in_ch(S), 1, PadSpec::kSymmetric, false, false};
  return r;
}

void validate(const TrainConfig& cfg) {
  validate(cfg.model);
  resolve_discriminator(cfg.disc, cfg.model.audio_channels);
  if (cfg.steps < 1) throw ConfigError("train steps must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.lr <= 0.0) throw ConfigError("lr must be positive");
  if (cfg.checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (cfg.example_len_s <= 0.0) throw ConfigError("example_len_s must be positive");
  const int64_t n = cfg.example_samples();
  const int64_t spe = cfg.model.samples_per_embedding();
  if (n % spe != 0)
    throw ConfigError("example length (" + std::to_string(n) +
                      " samples) must be a multiple of hop*frames_per_embedding (" +
                      std::to_string(spe) + ")");
  for (int w : cfg.disc.window_lengths)
    if (n < 2 * w)
      throw ConfigError("example too short for discriminator window " + std::to_string(w));
  for (int w : mel_windows())
    if (n < 2 * w) throw ConfigError("example too short for mel window " + std::to_string(w));
}

ModelConfig full_scale_model() {
  ModelConfig m;
  m.sample_rate = 48000;
  m.audio_channels = 2;
  m.stft = {960, 480};
  m.embed_dim = 256;
  m.frames_per_embedding = 4;
  m.enc_base_depth = 32;
  m.dec_base_depth = 64;
  m.stages = {{3, 3, 1, 1, 1}, {3, 4, 1, 2, 1}, {3, 4, 1, 2, 2},
              {4, 4, 2, 2, 4}, {4, 4, 2, 2, 8}, {3, 4, 1, 2, 8}};
  m.fusion_stage_index = 3;
  m.head_kf = 15;
  m.rvq = {64, 1024, 256, 0.99, 0.5};
  return m;
}

DiscConfig full_scale_disc() {
  DiscConfig d;
  d.window_lengths = {128, 256, 512, 1024, 2048, 4096};
  d.base_depth = 32;
  d.stages = {{3, 3, 1, 1, 1}, {3, 4, 2, 2, 1}, {3, 4, 2, 2, 2}, {3, 4, 2, 2, 4}, {3, 3, 1, 1, 4}};
  d.fusion_stage_index = 1;
  return d;
}

ModelConfig desk_model() {
  ModelConfig m;
  m.sample_rate = 16000;
  m.audio_channels = 1;
  m.stft = {320, 160};
  m.embed_dim = 64;
  m.frames_per_embedding = 4;
  m.enc_base_depth = 8;
  m.dec_base_depth = 16;
  m.stages = {{3, 3, 1, 2, 1}, {3, 4, 2, 4, 2}, {4, 4, 2, 4, 4}};
  m.fusion_stage_index = 1;
  m.head_kf = 5;
  m.rvq = {8, 64, 64, 0.99, 0.5};
  return m;
}

DiscConfig desk_disc() {
  DiscConfig d;
  d.window_lengths = {64, 256, 1024};
  d.base_depth = 4;
  d.stages = {{3, 4, 1, 2, 1}, {3, 4, 2, 2, 2}, {3, 4, 2, 2, 4}, {3, 3, 1, 1, 4}};
  d.fusion_stage_index = 1;
  return d;
}

TrainConfig desk_train() {
  TrainConfig t;
  t.model = desk_model();
  t.disc = desk_disc();
  t.example_len_s = 0.48;
  return t;
}

std::vector<int> mel_windows() { return {64, 128, 256, 512, 1024, 2048}; }

// --- key = value parsing ---

static std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

static int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
}

static double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

static std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

// "kTxkF:sTxsF:mult" entries separated by commas.
static std::vector<StageSpec> parse_stages(const std::string& key, const std::string& v) {
  std::vector<StageSpec> out;
  for (const auto& entry : split(v, ',')) {
    auto parts = split(entry, ':');
    if (parts.size() != 3) throw ConfigError("bad stage entry for " + key + ": '" + entry + "'");
    auto k = split(parts[0], 'x');
    auto s = split(parts[1], 'x');
    if (k.size() != 2 || s.size() != 2)
      throw ConfigError("bad stage entry for " + key + ": '" + entry + "'");
    out.push_back({(int)parse_int(key, k[0]), (int)parse_int(key, k[1]), (int)parse_int(key, s[0]),
                   (int)parse_int(key, s[1]), (int)parse_int(key, parts[2])});
  }
  return out;
}

TrainConfig parse_train_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  TrainConfig t = desk_train();
  for (const auto& [k, v] : kv) {  // preset picks the baseline, so apply it first
    if (k == "preset") {
      if (v == "desk") {
        t = desk_train();
      } else if (v == "full") {
        t = TrainConfig{};
        t.model = full_scale_model();
        t.disc = full_scale_disc();
      } else {
        throw ConfigError("unknown preset '" + v + "' (desk|full)");
      }
    }
  }

  for (const auto& [k, v] : kv) {
    if (k == "preset") continue;
    if (k == "train.steps") t.steps = parse_int(k, v);
    else if (k == "train.batch_size") t.batch_size = (int)parse_int(k, v);
    else if (k == "train.example_len_s") t.example_len_s = parse_double(k, v);
    else if (k == "train.lr") t.lr = parse_double(k, v);
    else if (k == "train.seed") t.seed = (uint64_t)parse_int(k, v);
    else if (k == "train.dataset_dir") t.dataset_dir = v;
    else if (k == "train.checkpoint_every") t.checkpoint_every = parse_int(k, v);
    else if (k == "train.out_dir") t.out_dir = v;
    else if (k == "model.sample_rate") t.model.sample_rate = (int)parse_int(k, v);
    else if (k == "model.audio_channels") t.model.audio_channels = (int)parse_int(k, v);
    else if (k == "model.window") t.model.stft.window_len = (int)parse_int(k, v);
    else if (k == "model.hop") t.model.stft.hop = (int)parse_int(k, v);
    else if (k == "model.embed_dim") t.model.embed_dim = t.model.rvq.dim = (int)parse_int(k, v);
    else if (k == "model.frames_per_embedding") t.model.frames_per_embedding = (int)parse_int(k, v);
    else if (k == "model.enc_base") t.model.enc_base_depth = (int)parse_int(k, v);
    else if (k == "model.dec_base") t.model.dec_base_depth = (int)parse_int(k, v);
    else if (k == "model.stages") t.model.stages = parse_stages(k, v);
    else if (k == "model.fusion_stage") t.model.fusion_stage_index = (int)parse_int(k, v);
    else if (k == "model.head_kf") t.model.head_kf = (int)parse_int(k, v);
    else if (k == "rvq.levels") t.model.rvq.levels = (int)parse_int(k, v);
    else if (k == "rvq.vocab") t.model.rvq.vocab = (int)parse_int(k, v);
    else if (k == "rvq.ema_decay") t.model.rvq.ema_decay = parse_double(k, v);
    else if (k == "rvq.bypass_rate") t.model.rvq.bypass_rate = parse_double(k, v);
    else if (k == "disc.windows") {
      t.disc.window_lengths.clear();
      for (const auto& w : split(v, ',')) t.disc.window_lengths.push_back((int)parse_int(k, w));
    }
    else if (k == "disc.base") t.disc.base_depth = (int)parse_int(k, v);
    else if (k == "disc.stages") t.disc.stages = parse_stages(k, v);
    else if (k == "disc.fusion_stage") t.disc.fusion_stage_index = (int)parse_int(k, v);
    else if (k == "disc.leaky_slope") t.disc.leaky_slope = parse_double(k, v);
    else if (k == "loss.adv") t.weights.adv = parse_double(k, v);
    else if (k == "loss.feat") t.weights.feat = parse_double(k, v);
    else if (k == "loss.rec") t.weights.rec = parse_double(k, v);
    else if (k == "loss.com") t.weights.com = parse_double(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  validate(t);
  return t;
}

TrainConfig parse_train_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_train_config_text(ss.str());
}

std::string render_train_config(const TrainConfig& cfg) {
  std::ostringstream s;
  auto d = [&](double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
  };
  auto stages = [&](const std::vector<StageSpec>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(v[i].kt) + 'x' + std::to_string(v[i].kf) + ':' +
             std::to_string(v[i].st) + 'x' + std::to_string(v[i].sf) + ':' +
             std::to_string(v[i].mult);
    }
    return out;
  };
  const ModelConfig& m = cfg.model;
  s << "train.steps = " << cfg.steps << '\n'
    << "train.batch_size = " << cfg.batch_size << '\n'
    << "train.example_len_s = " << d(cfg.example_len_s) << '\n'
    << "train.lr = " << d(cfg.lr) << '\n'
    << "train.seed = " << cfg.seed << '\n'
    << "train.dataset_dir = " << cfg.dataset_dir << '\n'
    << "train.checkpoint_every = " << cfg.checkpoint_every << '\n'
    << "train.out_dir = " << cfg.out_dir << '\n'
    << "model.sample_rate = " << m.sample_rate << '\n'
    << "model.audio_channels = " << m.audio_channels << '\n'
    << "model.window = " << m.stft.window_len << '\n'
    << "model.hop = " << m.stft.hop << '\n'
    << "model.embed_dim = " << m.embed_dim << '\n'
    << "model.frames_per_embedding = " << m.frames_per_embedding << '\n'
    << "model.enc_base = " << m.enc_base_depth << '\n'
    << "model.dec_base = " << m.dec_base_depth << '\n'
    << "model.stages = " << stages(m.stages) << '\n'
    << "model.fusion_stage = " << m.fusion_stage_index << '\n'
    << "model.head_kf = " << m.head_kf << '\n'
    << "rvq.levels = " << m.rvq.levels << '\n'
    << "rvq.vocab = " << m.rvq.vocab << '\n'
    << "rvq.ema_decay = " << d(m.rvq.ema_decay) << '\n'
    << "rvq.bypass_rate = " << d(m.rvq.bypass_rate) << '\n'
    << "disc.windows = ";
  for (size_t i = 0; i < cfg.disc.window_lengths.size(); ++i)
    s << (i ? "," : "") << cfg.disc.window_lengths[i];
  s << '\n'
    << "disc.base = " << cfg.disc.base_depth << '\n'
    << "disc.stages = " << stages(cfg.disc.stages) << '\n'
    << "disc.fusion_stage = " << cfg.disc.fusion_stage_index << '\n'
    << "disc.leaky_slope = " << d(cfg.disc.leaky_slope) << '\n'
    << "loss.adv = " << d(cfg.weights.adv) << '\n'
    << "loss.feat = " << d(cfg.weights.feat) << '\n'
    << "loss.rec = " << d(cfg.weights.rec) << '\n'
    << "loss.com = " << d(cfg.weights.com) << '\n';
  return s.str();
}

// Canonical rendering of everything the optimization depends on. Step count,
// checkpoint cadence and paths stay out so a run can be extended or moved.
uint64_t config_hash(const TrainConfig& cfg) {
  std::ostringstream s;
  auto d = [&](double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    s << buf << ';';
  };
  const ModelConfig& m = cfg.model;
  s << "sr=" << m.sample_rate << ";ch=" << m.audio_channels << ";win=" << m.stft.window_len
    << ";hop=" << m.stft.hop << ";emb=" << m.embed_dim << ";fpe=" << m.frames_per_embedding
    << ";ce=" << m.enc_base_depth << ";cd=" << m.dec_base_depth << ";fuse="
    << m.fusion_stage_index << ";hkf=" << m.head_kf << ";la=" << m.decoder_lookahead_embeddings
    << ";stages=";
  for (const auto& st : m.stages)
    s << st.kt << 'x' << st.kf << ':' << st.st << 'x' << st.sf << ':' << st.mult << ',';
  s << ";rvq=" << m.rvq.levels << ':' << m.rvq.vocab << ':' << m.rvq.dim << ':';
  d(m.rvq.ema_decay);
  d(m.rvq.bypass_rate);
  s << "disc=";
  for (int w : cfg.disc.window_lengths) s << w << ',';
  s << ':' << cfg.disc.base_depth << ':' << cfg.disc.fusion_stage_index << ':';
  d(cfg.disc.leaky_slope);
  s << "dstages=";
  for (const auto& st : cfg.disc.stages)
    s << st.kt << 'x' << st.kf << ':' << st.st << 'x' << st.sf << ':' << st.mult << ',';
  s << ";w=";
  d(cfg.weights.adv);
  d(cfg.weights.feat);
  d(cfg.weights.rec);
  d(cfg.weights.com);
  s << "opt=";
  d(cfg.lr);
  s << cfg.batch_size << ';';
  d(cfg.example_len_s);
  s << "seed=" << cfg.seed << ';';
  return fnv1a64(s.str());
}

}  // namespace spst
