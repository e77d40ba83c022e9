#include "coseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace coseg {

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
  if (!(learning_rate > 0.0f)) throw ConfigError("train: learning rate must be positive");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("train: momentum must be in [0,1)");
  if (checkpoint_interval < 0) throw ConfigError("train: checkpoint interval must be >= 0");
  episode.validate();
  backbone.validate();
}

ParamStore clone_params(const ParamStore& params) {
  ParamStore out;
  for (const auto& [name, t] : params.entries()) {
    std::vector<float> data(t.values().begin(), t.values().end());
    out.add(name, Tensor::from_data(t.shape(), std::move(data), true));
  }
  return out;
}

DviceModel model_from_checkpoint(const Checkpoint& ckpt, const TrainConfig& cfg) {
  BackboneConfig backbone = cfg.backbone;
  backbone.use_cham = !cfg.no_cham;
  backbone.use_spam = !cfg.no_spam;
  return DviceModel(backbone, clone_params(ckpt.params));
}

namespace {

Checkpoint snapshot(const DviceModel& model, const SgdMomentum& optimizer, const Pcg32& rng,
                    std::uint64_t iteration) {
  Checkpoint ckpt;
  ckpt.iteration = iteration;
  ckpt.params = clone_params(model.params());
  ckpt.velocities = optimizer.velocities();
  ckpt.rng_state = rng.state_bytes();
  return ckpt;
}

struct LoopState {
  DviceModel model;
  SgdMomentum optimizer;
  Pcg32 rng;
  std::uint64_t start_iteration = 0;
};

TrainResult run_episodic_loop(LoopState state, const Dataset& dataset,
                              std::span<const std::string> classes, const TrainConfig& cfg) {
  TrainResult result;
  auto& [model, optimizer, rng, start_iteration] = state;

  Episode fixed;
  std::vector<Tensor> fixed_targets;
  if (cfg.fixed_episode) {
    fixed = sample_episode(dataset, classes, cfg.episode, rng);
    for (const Sample& s : fixed.coseg) fixed_targets.push_back(mask_to_tensor(s.mask));
  }

  NoiseFn<float> noise = gaussian_noise<float>(rng);
  for (long it = static_cast<long>(start_iteration); it < cfg.iterations; ++it) {
    ModelEpisode view;
    std::vector<Tensor> targets;
    if (cfg.fixed_episode) {
      view = strip_labels(fixed);
      targets = fixed_targets;
    } else {
      Episode episode = sample_episode(dataset, classes, cfg.episode, rng);
      for (Sample& s : episode.guide) s = augment(s, rng);
      for (Sample& s : episode.coseg) s = augment(s, rng);
      view = strip_labels(episode);
      for (const Sample& s : episode.coseg) targets.push_back(mask_to_tensor(s.mask));
    }

    EpisodeOutput out =
        model.forward_episode(view.guide_images, view.coseg_images, RunMode::kTrain, noise);
    Tensor loss =
        dvice_loss<float>(out.masks, targets, out.latents, out.prototype, cfg.beta_proto,
                          cfg.beta_latent);
    double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      throw ValueError("non-finite training loss at iteration " + std::to_string(it));
    }

    model.params().zero_grads();
    backward(loss);
    optimizer.step(model.params());
    result.loss_log.push_back({it, loss_value});

    if (cfg.checkpoint_interval > 0 && !cfg.out_dir.empty() &&
        (it + 1) % cfg.checkpoint_interval == 0 && (it + 1) < cfg.iterations) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06ld.ckpt", it + 1);
      save_checkpoint(snapshot(model, optimizer, rng, static_cast<std::uint64_t>(it + 1)),
                      cfg.out_dir / name);
    }
  }

  result.checkpoint = snapshot(model, optimizer, rng,
                               static_cast<std::uint64_t>(
                                   std::max<long>(cfg.iterations,
                                                  static_cast<long>(start_iteration))));
  return result;
}

}  // namespace

TrainResult train(const Dataset& dataset, std::span<const std::string> classes,
                  const TrainConfig& cfg, const Checkpoint* resume) {
  cfg.validate();
  BackboneConfig backbone = cfg.backbone;
  backbone.use_cham = !cfg.no_cham;
  backbone.use_spam = !cfg.no_spam;

  LoopState state{
      resume ? DviceModel(backbone, clone_params(resume->params))
             : DviceModel(backbone, cfg.seed),
      SgdMomentum(cfg.learning_rate, cfg.momentum),
      Pcg32(cfg.seed, 1),
      resume ? resume->iteration : 0,
  };
  state.optimizer.attach(state.model.params());
  if (resume) {
    if (resume->velocities.size() != state.model.params().size()) {
      throw FormatError("checkpoint velocities do not match parameter count");
    }
    state.optimizer.velocities() = resume->velocities;
    state.rng.set_state_bytes(resume->rng_state);
  }
  return run_episodic_loop(std::move(state), dataset, classes, cfg);
}

TrainResult fine_tune(const Checkpoint& start, const Dataset& dataset,
                      std::span<const std::string> classes, const TrainConfig& cfg) {
  cfg.validate();
  BackboneConfig backbone = cfg.backbone;
  backbone.use_cham = !cfg.no_cham;
  backbone.use_spam = !cfg.no_spam;

  LoopState state{
      DviceModel(backbone, clone_params(start.params)),
      SgdMomentum(cfg.learning_rate, cfg.momentum),
      Pcg32(cfg.seed, 1),
      0,
  };
  state.optimizer.attach(state.model.params());
  return run_episodic_loop(std::move(state), dataset, classes, cfg);
}

// ---------------------------------------------------------------------------
// checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'V', 'I', 'C', 'E', '0', '0', '1'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Cursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > size) throw FormatError("checkpoint truncated");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(data[pos] | (data[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | data[pos + i];
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | data[pos + i];
    pos += 8;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (ckpt.velocities.size() != ckpt.params.size()) {
    throw ConfigError("checkpoint velocities do not match parameters");
  }
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u32(out, ckpt.version);
  put_u64(out, ckpt.iteration);
  put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params.entries()) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (int e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : t.values()) put_f32(out, v);
  }
  for (std::size_t p = 0; p < ckpt.params.size(); ++p) {
    const auto& v = ckpt.velocities[p];
    if (v.size() != static_cast<std::size_t>(ckpt.params.entries()[p].second.size())) {
      throw ConfigError("velocity size mismatch for " + ckpt.params.entries()[p].first);
    }
    for (float x : v) put_f32(out, x);
  }
  put_u32(out, 16);
  out.insert(out.end(), ckpt.rng_state.begin(), ckpt.rng_state.end());

  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write checkpoint " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                  std::istreambuf_iterator<char>());
  Cursor c{bytes.data(), bytes.size()};

  c.need(8);
  if (std::memcmp(c.data, kMagic, 8) != 0) {
    throw FormatError(path.string() + ": bad magic, not a checkpoint");
  }
  c.pos += 8;

  Checkpoint ckpt;
  ckpt.version = c.u32();
  if (ckpt.version != 1) {
    throw FormatError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(ckpt.version));
  }
  ckpt.iteration = c.u64();
  std::uint32_t count = c.u32();
  for (std::uint32_t p = 0; p < count; ++p) {
    std::uint16_t name_len = c.u16();
    c.need(name_len);
    std::string name(reinterpret_cast<const char*>(c.data + c.pos), name_len);
    c.pos += name_len;
    c.need(1);
    int rank = c.data[c.pos++];
    if (rank < 1 || rank > 4) throw FormatError(path.string() + ": bad tensor rank");
    Shape shape(rank);
    for (int i = 0; i < rank; ++i) {
      std::uint32_t e = c.u32();
      if (e == 0 || e > (1u << 24)) throw FormatError(path.string() + ": bad extent");
      shape[i] = static_cast<int>(e);
    }
    std::int64_t n = shape_count(shape);
    std::vector<float> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = c.f32();
    ckpt.params.add(name, Tensor::from_data(std::move(shape), std::move(data), true));
  }
  for (std::uint32_t p = 0; p < count; ++p) {
    std::size_t n = static_cast<std::size_t>(ckpt.params.entries()[p].second.size());
    std::vector<float> v(n);
    for (auto& x : v) x = c.f32();
    ckpt.velocities.push_back(std::move(v));
  }
  std::uint32_t blob_len = c.u32();
  if (blob_len != 16) throw FormatError(path.string() + ": unexpected RNG state size");
  c.need(16);
  std::copy(c.data + c.pos, c.data + c.pos + 16, ckpt.rng_state.begin());
  c.pos += 16;
  if (c.pos != c.size) throw FormatError(path.string() + ": trailing data");
  return ckpt;
}

void write_loss_log(std::span<const LossLogEntry> log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  char line[64];
  for (const LossLogEntry& e : log) {
    std::snprintf(line, sizeof(line), "%ld\t%.6f\n", e.iteration, e.loss);
    out << line;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<LossLogEntry> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<LossLogEntry> log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    LossLogEntry e;
    if (!(row >> e.iteration >> e.loss)) throw FormatError(path.string() + ": bad loss log line");
    log.push_back(e);
  }
  return log;
}

}  // namespace coseg
