#pragma once

#include <array>
#include <filesystem>

#include "coseg/episodes.hpp"
#include "coseg/model.hpp"
#include "coseg/optimizer.hpp"

namespace coseg {

struct TrainConfig {
  long iterations = 2000;
  // Default tuned for the summed episode loss at 64px (gradients reach the
  // thousands, so rates such as 1e-2 diverge). The 1e-5/0.9 full-scale
  // setting remains selectable.
  float learning_rate = 3e-6f;
  float momentum = 0.9f;
  EpisodeConfig episode;
  float beta_proto = 1.0f;
  float beta_latent = 1.0f;
  bool no_cham = false;  // replace channel attention with the identity
  bool no_spam = false;  // replace spatial attention with the identity
  std::uint64_t seed = 0;
  long checkpoint_interval = 0;        // 0: only the final checkpoint
  std::filesystem::path out_dir;       // empty: no interval checkpoints on disk
  bool fixed_episode = false;          // overfit mode: one episode, no augmentation
  bool strict_deterministic = false;   // episode prep runs strictly in-line
  BackboneConfig backbone;

  void validate() const;
};

struct LossLogEntry {
  long iteration = 0;
  double loss = 0.0;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t iteration = 0;
  ParamStore params;
  std::vector<std::vector<float>> velocities;  // aligned with params order
  std::array<std::uint8_t, 16> rng_state{};
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossLogEntry> loss_log;
};

// Episodic loop: sample -> augment -> forward (train mode) -> loss ->
// backward -> SGD step. With resume, continues the checkpointed trajectory
// (parameters, velocities, RNG stream, iteration counter) bitwise.
TrainResult train(const Dataset& dataset, std::span<const std::string> classes,
                  const TrainConfig& cfg, const Checkpoint* resume = nullptr);

// Same loop, but adopting only the checkpoint's parameters: fresh optimizer
// state and RNG, iteration counter restarting at zero.
TrainResult fine_tune(const Checkpoint& start, const Dataset& dataset,
                      std::span<const std::string> classes, const TrainConfig& cfg);

// Binary checkpoint file, little-endian. Layout: magic "DVICE001", version
// u32, iteration u64, parameter count u32, then per parameter (name length
// u16, name bytes, rank u8, extents u32 each, f32 values), then velocities in
// the same order, then RNG state blob length (u32) + bytes.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Text log, one "iteration<TAB>loss" line per entry.
void write_loss_log(std::span<const LossLogEntry> log, const std::filesystem::path& path);
std::vector<LossLogEntry> read_loss_log(const std::filesystem::path& path);

// Deep copy (fresh buffers, detached from any graph or consumer).
ParamStore clone_params(const ParamStore& params);

// Builds the model described by cfg on top of the checkpoint's parameters.
DviceModel model_from_checkpoint(const Checkpoint& ckpt, const TrainConfig& cfg);

}  // namespace coseg
