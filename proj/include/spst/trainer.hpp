#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spst/adversary.hpp"
#include "spst/codec_net.hpp"
#include "spst/config.hpp"
#include "spst/optim.hpp"
#include "spst/rng.hpp"
#include "spst/rvq.hpp"

namespace spst {

struct LossReport {
  int64_t step = 0;
  double l_d = 0, l_adv = 0, l_feat = 0, l_rec = 0, l_com = 0, l_total = 0;
  bool bypassed = false;
  double ms = 0;
};
std::string report_json_line(const LossReport& r);

// Uniform random crops from the WAV files of a directory. Unreadable files
// and files shorter than one example are skipped with a warning on stderr;
// rate or channel-count mismatches are hard errors.
class Dataset {
 public:
  Dataset(const std::string& dir, const ModelConfig& cfg, int64_t example_samples);
  size_t files() const { return clips_.size(); }
  int64_t example_samples() const { return n_; }
  // [channels, example_samples] crop at a uniform offset of a uniform file
  Tensor sample(Rng& rng) const;
  std::vector<Tensor> sample_batch(int batch, Rng& rng) const;
  Tensor crop(size_t file, int64_t offset) const;
  int64_t file_frames(size_t file) const { return (int64_t)clips_[file][0].size(); }

 private:
  int64_t n_;
  int channels_;
  std::vector<std::vector<std::vector<float>>> clips_;  // file -> channel -> samples
};

// All mutable training state: parameters, optimizer moments, codebooks, and
// the two RNG streams (data order, quantizer randomness).
class Trainer {
 public:
  explicit Trainer(const TrainConfig& tc);

  // One joint step: discriminator update on detached fakes, then generator
  // update against the refreshed discriminator, then EMA codebook update
  // (skipped on bypassed steps). batch: batch_size tensors [channels, n].
  LossReport train_step(std::span<const Tensor> batch);

  const TrainConfig& config() const { return tc_; }
  int64_t step() const { return step_; }
  Rng& data_rng() { return data_rng_; }
  const GenParams& gen() const { return gp_; }
  const DiscParams& disc() const { return dp_; }
  const Codebooks& books() const { return books_; }

  void save_checkpoint(const std::string& path) const;
  // Refuses checkpoints written under a different config (hash mismatch) or
  // with a broken integrity trailer.
  static Trainer load_checkpoint(const std::string& path, const TrainConfig& tc);
  // Self-describing load: reconstructs the config from the embedded text.
  static Trainer load_checkpoint(const std::string& path);

 private:
  struct Forward;  // one example's value-level forward record
  void disc_phase(std::span<const Tensor> batch, const std::vector<Forward>& fwd,
                  LossReport& rep);
  void gen_phase(std::span<const Tensor> batch, const std::vector<Forward>& fwd,
                 LossReport& rep);

  TrainConfig tc_;
  ResolvedGen rg_;
  ResolvedDisc rd_;
  GenParams gp_;
  DiscParams dp_;
  Codebooks books_;
  std::vector<AdamState> adam_g_, adam_d_;
  Rng data_rng_, rvq_rng_;
  int64_t step_ = 0;
};

// Scripted loop shared by the CLI and the long-run tests: samples batches,
// appends one JSON line per step to <out_dir>/train_log.jsonl, writes
// <out_dir>/ckpt_<step>.spck every checkpoint_every steps and at the end.
// Returns the final report. resume: checkpoint path to continue from.
LossReport run_training(const TrainConfig& tc, const std::string& resume = "",
                        const std::function<void(const LossReport&)>& on_step = {});

// Value-level metrics for eval: the reconstruction loss of the losses module
// evaluated on given waves, and time-domain SNR in dB averaged over channels.
double reconstruction_distance(const Tensor& x, const Tensor& y, int sample_rate);
double snr_db(const Tensor& x, const Tensor& y);

}  // namespace spst
