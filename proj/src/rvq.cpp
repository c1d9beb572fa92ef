#include "spst/rvq.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "spst/errors.hpp"

namespace spst {

Codebooks::Codebooks(const RvqConfig& cfg)
    : levels(cfg.levels),
      vocab(cfg.vocab),
      dim(cfg.dim),
      centroids({cfg.levels, cfg.vocab, cfg.dim}),
      ema_counts({cfg.levels, cfg.vocab}),
      ema_sums({cfg.levels, cfg.vocab, cfg.dim}),
      unused_updates((size_t)cfg.levels * cfg.vocab, 0) {}

static int nearest_code(const double* res, const Codebooks& b, int level) {
  int best = 0;
  double best_d = 0.0;
  for (int c = 0; c < b.vocab; ++c) {
    const double* cent = b.centroid(level, c);
    double d = 0.0;
    for (int i = 0; i < b.dim; ++i) {
      const double t = res[i] - cent[i];
      d += t * t;
    }
    if (c == 0 || d < best_d) {  // strict < keeps the lowest index on ties
      best = c;
      best_d = d;
    }
  }
  return best;
}

CodeFrame quantize(const double* v, const Codebooks& books, int r) {
  SPST_CHECK(r >= 1 && r <= books.levels, "quantize depth out of range");
  CodeFrame f;
  f.codes.reserve(r);
  std::vector<double> res(v, v + books.dim);
  for (int level = 0; level < r; ++level) {
    const int c = nearest_code(res.data(), books, level);
    f.codes.push_back(c);
    const double* cent = books.centroid(level, c);
    for (int i = 0; i < books.dim; ++i) res[i] -= cent[i];
  }
  return f;
}

void dequantize(const CodeFrame& frame, const Codebooks& books, double* out) {
  if ((int)frame.codes.size() > books.levels) throw DataError("code frame deeper than codebooks");
  std::fill(out, out + books.dim, 0.0);
  for (size_t level = 0; level < frame.codes.size(); ++level) {
    const int32_t c = frame.codes[level];
    if (c < 0 || c >= books.vocab) throw DataError("code out of vocabulary range");
    const double* cent = books.centroid((int)level, c);
    for (int i = 0; i < books.dim; ++i) out[i] += cent[i];
  }
}

std::vector<double> dequantize(const CodeFrame& frame, const Codebooks& books) {
  std::vector<double> out(books.dim);
  dequantize(frame, books, out.data());
  return out;
}

std::vector<CodeFrame> quantize_map(const Tensor& e, const Codebooks& books, int r) {
  SPST_CHECK(e.rank() == 2 && e.dim(0) == books.dim, "embedding map must be [dim, T]");
  const int64_t T = e.dim(1);
  std::vector<double> col(books.dim);
  std::vector<CodeFrame> frames;
  frames.reserve(T);
  for (int64_t t = 0; t < T; ++t) {
    for (int i = 0; i < books.dim; ++i) col[i] = e.data[(int64_t)i * T + t];
    frames.push_back(quantize(col.data(), books, r));
  }
  return frames;
}

Tensor dequantize_map(const std::vector<CodeFrame>& frames, const Codebooks& books) {
  const int64_t T = (int64_t)frames.size();
  Tensor out({books.dim, T});
  std::vector<double> col(books.dim);
  for (int64_t t = 0; t < T; ++t) {
    dequantize(frames[t], books, col.data());
    for (int i = 0; i < books.dim; ++i) out.data[(int64_t)i * T + t] = col[i];
  }
  return out;
}

double dropout_level_probability(const RvqConfig& cfg, int r) {
  SPST_CHECK(r >= 1 && r <= cfg.levels, "depth out of range");
  const double q = 1.0 / (2.0 * cfg.levels);  // 4:2:1 over R/4, R/4, R/2 levels
  if (r <= cfg.levels / 4) return 4.0 * q;
  if (r <= cfg.levels / 2) return 2.0 * q;
  return q;
}

int sample_dropout_level(const RvqConfig& cfg, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int r = 1; r <= cfg.levels; ++r) {
    acc += dropout_level_probability(cfg, r);
    if (u < acc) return r;
  }
  return cfg.levels;  // guards the accumulated-rounding edge at u ~ 1
}

double bitrate_bps(const RvqConfig& cfg, double embedding_rate, int active_r) {
  SPST_CHECK(active_r >= 0 && active_r <= cfg.levels, "active depth out of range");
  if (cfg.vocab < 2 || (cfg.vocab & (cfg.vocab - 1)) != 0)
    throw ConfigError("bit packing needs a power-of-two vocab");
  int bits = 0;
  for (int v = cfg.vocab; v > 1; v >>= 1) ++bits;
  return (double)active_r * bits * embedding_rate;
}

ForwardTrain forward_train(const Tensor& e, const Codebooks& books, const RvqConfig& cfg,
                           Rng& rng) {
  ForwardTrain out;
  if (rng.coin(cfg.bypass_rate)) {
    out.bypassed = true;
    out.v_out = e;
    return out;
  }
  out.r = sample_dropout_level(cfg, rng);
  out.frames = quantize_map(e, books, out.r);
  out.v_out = dequantize_map(out.frames, books);
  for (int64_t i = 0; i < e.numel(); ++i) {
    const double d = e.data[i] - out.v_out.data[i];
    out.commit_loss += d * d;
  }
  return out;
}

void init_codebooks(Codebooks& books, const std::vector<const double*>& columns, Rng& rng) {
  SPST_CHECK(!columns.empty(), "codebook init needs at least one column");
  const int D = books.dim;
  const int V = books.vocab;
  // residuals carried level to level; starts as the raw columns
  std::vector<std::vector<double>> res(columns.size());
  for (size_t i = 0; i < columns.size(); ++i) res[i].assign(columns[i], columns[i] + D);

  for (int level = 0; level < books.levels; ++level) {
    // sample V distinct residuals; with a short supply, reuse plus jitter
    std::vector<int64_t> order(res.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = (int64_t)i;
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (int c = 0; c < V; ++c) {
      const auto& src = res[order[c % order.size()]];
      double* cent = books.centroid(level, c);
      const bool fresh = c < (int)order.size();
      for (int i = 0; i < D; ++i) cent[i] = src[i] + (fresh ? 0.0 : 1e-4 * rng.normal());
      books.ema_counts.data[(int64_t)level * V + c] = 1.0;
      std::memcpy(books.ema_sums.data.data() + ((int64_t)level * V + c) * D, cent,
                  sizeof(double) * D);
    }
    for (auto& r : res) {
      const int c = nearest_code(r.data(), books, level);
      const double* cent = books.centroid(level, c);
      for (int i = 0; i < D; ++i) r[i] -= cent[i];
    }
  }
  std::fill(books.unused_updates.begin(), books.unused_updates.end(), 0);
  books.initialized = true;
}

void ema_update(Codebooks& books, const RvqConfig& cfg,
                const std::vector<const double*>& columns,
                const std::vector<const CodeFrame*>& frames, Rng& rng) {
  SPST_CHECK(columns.size() == frames.size(), "columns/frames size mismatch");
  if (columns.empty()) return;
  const int D = books.dim;
  const int V = books.vocab;
  const int R = books.levels;
  const double d = cfg.ema_decay;

  // Pass 1: walk every column with the pre-update centroids, gathering batch
  // counts/sums per (level, code) and the residual pool per level.
  Tensor counts({R, V});
  Tensor sums({R, V, D});
  std::vector<std::vector<double>> pool(R);  // per level, concatenated residuals
  std::vector<double> res(D);
  for (size_t n = 0; n < columns.size(); ++n) {
    res.assign(columns[n], columns[n] + D);
    const auto& codes = frames[n]->codes;
    for (size_t level = 0; level < codes.size(); ++level) {
      const int32_t c = codes[level];
      if (c < 0 || c >= V) throw DataError("code out of vocabulary range");
      pool[level].insert(pool[level].end(), res.begin(), res.end());
      counts.data[level * V + c] += 1.0;
      double* s = sums.data.data() + ((int64_t)level * V + c) * D;
      const double* cent = books.centroid((int)level, c);
      for (int i = 0; i < D; ++i) {
        s[i] += res[i];
        res[i] -= cent[i];
      }
    }
  }

  // Pass 2: EMA on assigned codes, aging and reseeding on the rest.
  constexpr double kEps = 1e-9;
  for (int level = 0; level < R; ++level) {
    const int64_t n_level = (int64_t)(pool[level].size() / D);
    if (n_level == 0) continue;  // level saw no data: nothing ages
    for (int c = 0; c < V; ++c) {
      const int64_t idx = (int64_t)level * V + c;
      const double bc = counts.data[idx];
      if (bc == 0.0) {
        if (++books.unused_updates[idx] >= Codebooks::kDeadAfter) {
          const double* r = pool[level].data() + (int64_t)rng.below((uint64_t)n_level) * D;
          std::memcpy(books.centroid(level, c), r, sizeof(double) * D);
          books.ema_counts.data[idx] = 1.0;
          std::memcpy(books.ema_sums.data.data() + idx * D, r, sizeof(double) * D);
          books.unused_updates[idx] = 0;
        }
        continue;
      }
      books.unused_updates[idx] = 0;
      books.ema_counts.data[idx] = d * books.ema_counts.data[idx] + (1.0 - d) * bc;
      double* es = books.ema_sums.data.data() + idx * D;
      const double* bs = sums.data.data() + idx * D;
      double* cent = books.centroid(level, c);
      const double denom = std::max(books.ema_counts.data[idx], kEps);
      for (int i = 0; i < D; ++i) {
        es[i] = d * es[i] + (1.0 - d) * bs[i];
        cent[i] = es[i] / denom;
      }
    }
  }
}

}  // namespace spst
