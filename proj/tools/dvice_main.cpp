// dvice: synthetic-corpus generation, episodic training, evaluation, and
// guided segmentation from the command line.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "coseg/episodes.hpp"
#include "coseg/image_io.hpp"
#include "coseg/metrics.hpp"
#include "coseg/synthdata.hpp"
#include "coseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace coseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

class ManifestWriter {
 public:
  explicit ManifestWriter(std::string command) {
    add("command", std::move(command));
    start_ = std::chrono::steady_clock::now();
  }
  void add(const std::string& key, std::string value) {
    entries_.emplace_back(key, std::move(value));
  }
  void add(const std::string& key, const fs::path& value) { add(key, value.string()); }
  void add(const std::string& key, long long value) { add(key, std::to_string(value)); }
  void add(const std::string& key, double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", value);
    add(key, std::string(buf));
  }
  void add(const std::string& key, bool value) { add(key, std::string(value ? "1" : "0")); }

  void write(const fs::path& dir) {
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", seconds);
    entries_.emplace_back("duration_seconds", buf);
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream out(dir / "run_manifest.txt", std::ios::binary);
    if (!out) throw IoError("cannot write run manifest in " + dir.string());
    for (const auto& [k, v] : entries_) out << k << "=" << v << "\n";
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::chrono::steady_clock::time_point start_;
};

fs::path resolve_manifest(const fs::path& data) {
  if (fs::is_directory(data)) return data / "manifest.tsv";
  return data;
}

std::vector<std::string> parse_class_filter(const std::string& csv) {
  std::vector<std::string> classes;
  std::string current;
  for (char c : csv) {
    if (c == ',') {
      if (!current.empty()) classes.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) classes.push_back(current);
  return classes;
}

std::vector<std::string> select_classes(const Dataset& ds, const std::string& filter_csv) {
  if (filter_csv.empty()) return ds.classes;
  std::vector<std::string> classes = parse_class_filter(filter_csv);
  if (classes.empty()) throw ConfigError("--classes: empty class list");
  for (const std::string& c : classes) {
    if (!ds.by_class.count(c)) throw ConfigError("--classes: unknown class '" + c + "'");
  }
  return classes;
}

std::vector<fs::path> list_ppm(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .ppm images in " + dir.string());
  return files;
}

struct TrainFlags {
  std::string data;
  long iters = 2000;
  float lr = 3e-6f;
  float momentum = 0.9f;
  int k = 8, n = 6, m = 4;
  float beta_proto = 1.0f, beta_latent = 1.0f;
  bool no_cham = false, no_spam = false;
  std::uint64_t seed = 0;
  std::string ckpt_out;
  std::string ckpt_in;
  std::string classes_csv;
  long checkpoint_interval = 0;
  std::string out_dir;
  bool fixed_episode = false;
  bool strict_deterministic = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool finetune) {
  cmd->fallthrough();
  cmd->add_option("--data", f.data, "corpus directory or manifest path")->required();
  cmd->add_option("--iters", f.iters, "training iterations (episodes)");
  cmd->add_option("--lr", f.lr, "learning rate");
  cmd->add_option("--momentum", f.momentum, "SGD momentum");
  cmd->add_option("--k", f.k, "guide set size");
  cmd->add_option("--n", f.n, "positive samples in the guide set");
  cmd->add_option("--m", f.m, "co-seg set size");
  cmd->add_option("--beta-proto", f.beta_proto, "prototype KL weight");
  cmd->add_option("--beta-latent", f.beta_latent, "per-image KL weight");
  cmd->add_flag("--no-cham", f.no_cham, "replace channel attention with identity");
  cmd->add_flag("--no-spam", f.no_spam, "replace spatial attention with identity");
  cmd->add_option("--seed", f.seed, "seed for init, sampling, and noise");
  cmd->add_option("--ckpt-out", f.ckpt_out, "final checkpoint path")->required();
  auto* in = cmd->add_option("--ckpt-in", f.ckpt_in,
                             finetune ? "checkpoint to fine-tune from"
                                      : "checkpoint to resume from");
  if (finetune) in->required();
  cmd->add_option("--classes", f.classes_csv, "comma-separated class filter");
  cmd->add_option("--checkpoint-interval", f.checkpoint_interval,
                  "write a checkpoint every N iterations");
  cmd->add_option("--out-dir", f.out_dir, "directory for logs and interval checkpoints");
  cmd->add_flag("--fixed-episode", f.fixed_episode,
                "sample one episode up front and train on it only");
  cmd->add_flag("--strict-deterministic", f.strict_deterministic,
                "force fully sequential episode preparation");
}

TrainConfig to_train_config(const TrainFlags& f, const fs::path& out_dir) {
  TrainConfig cfg;
  cfg.iterations = f.iters;
  cfg.learning_rate = f.lr;
  cfg.momentum = f.momentum;
  cfg.episode = EpisodeConfig{f.k, f.n, f.m};
  cfg.beta_proto = f.beta_proto;
  cfg.beta_latent = f.beta_latent;
  cfg.no_cham = f.no_cham;
  cfg.no_spam = f.no_spam;
  cfg.seed = f.seed;
  cfg.checkpoint_interval = f.checkpoint_interval;
  cfg.out_dir = out_dir;
  cfg.fixed_episode = f.fixed_episode;
  cfg.strict_deterministic = f.strict_deterministic;
  return cfg;
}

void echo_train_flags(ManifestWriter& manifest, const TrainFlags& f) {
  manifest.add("data", f.data);
  manifest.add("iters", static_cast<long long>(f.iters));
  manifest.add("lr", static_cast<double>(f.lr));
  manifest.add("momentum", static_cast<double>(f.momentum));
  manifest.add("k", static_cast<long long>(f.k));
  manifest.add("n", static_cast<long long>(f.n));
  manifest.add("m", static_cast<long long>(f.m));
  manifest.add("beta_proto", static_cast<double>(f.beta_proto));
  manifest.add("beta_latent", static_cast<double>(f.beta_latent));
  manifest.add("no_cham", f.no_cham);
  manifest.add("no_spam", f.no_spam);
  manifest.add("seed", static_cast<long long>(f.seed));
  manifest.add("classes", f.classes_csv.empty() ? "all" : f.classes_csv);
  manifest.add("fixed_episode", f.fixed_episode);
  manifest.add("strict_deterministic", f.strict_deterministic);
}

int run_train(const TrainFlags& f, bool finetune) {
  ManifestWriter manifest(finetune ? "finetune" : "train");
  echo_train_flags(manifest, f);

  Dataset ds = Dataset::load(resolve_manifest(f.data));
  std::vector<std::string> classes = select_classes(ds, f.classes_csv);

  fs::path ckpt_out(f.ckpt_out);
  fs::path out_dir = f.out_dir.empty() ? (ckpt_out.has_parent_path() ? ckpt_out.parent_path()
                                                                     : fs::path("."))
                                       : fs::path(f.out_dir);
  std::error_code ec;
  fs::create_directories(out_dir, ec);

  TrainConfig cfg = to_train_config(f, out_dir);
  TrainResult result;
  if (finetune) {
    Checkpoint start = load_checkpoint(f.ckpt_in);
    result = fine_tune(start, ds, classes, cfg);
  } else if (!f.ckpt_in.empty()) {
    Checkpoint resume = load_checkpoint(f.ckpt_in);
    result = train(ds, classes, cfg, &resume);
  } else {
    result = train(ds, classes, cfg);
  }

  save_checkpoint(result.checkpoint, ckpt_out);
  fs::path log_path = out_dir / "loss_log.tsv";
  write_loss_log(result.loss_log, log_path);

  manifest.add("checkpoint", ckpt_out);
  manifest.add("loss_log", log_path);
  manifest.add("final_iteration", static_cast<long long>(result.checkpoint.iteration));
  if (!result.loss_log.empty()) manifest.add("final_loss", result.loss_log.back().loss);
  manifest.write(out_dir);
  std::printf("%s finished at iteration %llu, checkpoint %s\n",
              finetune ? "finetune" : "train",
              static_cast<unsigned long long>(result.checkpoint.iteration),
              ckpt_out.string().c_str());
  return kExitOk;
}

int run_generate(const CorpusConfig& cfg, const fs::path& out) {
  ManifestWriter manifest("generate");
  manifest.add("out", out);
  manifest.add("seed", static_cast<long long>(cfg.seed));
  manifest.add("samples_per_class", static_cast<long long>(cfg.samples_per_class));
  manifest.add("image_size", static_cast<long long>(cfg.image_size));
  manifest.add("clutter_min", static_cast<long long>(cfg.clutter_min));
  manifest.add("clutter_max", static_cast<long long>(cfg.clutter_max));
  manifest.add("noise_amplitude", static_cast<double>(cfg.noise_amplitude));
  manifest.add("dual_object", cfg.dual_object);
  manifest.add("classes", static_cast<long long>(cfg.class_names().size()));

  fs::path written = generate_corpus(cfg, out);
  manifest.add("manifest", written);
  manifest.write(out);
  std::printf("generate wrote %s\n", written.string().c_str());
  return kExitOk;
}

int run_eval(const std::string& data, const std::string& ckpt_path, int episodes, int k, int n,
             int m, std::uint64_t seed, const std::string& report, const std::string& classes_csv,
             float tau_b, float tau_nf, bool no_cham, bool no_spam) {
  ManifestWriter manifest("eval");
  manifest.add("data", data);
  manifest.add("ckpt", ckpt_path);
  manifest.add("episodes", static_cast<long long>(episodes));
  manifest.add("k", static_cast<long long>(k));
  manifest.add("n", static_cast<long long>(n));
  manifest.add("m", static_cast<long long>(m));
  manifest.add("seed", static_cast<long long>(seed));
  manifest.add("tau_b", static_cast<double>(tau_b));
  manifest.add("tau_nf", static_cast<double>(tau_nf));
  manifest.add("no_cham", no_cham);
  manifest.add("no_spam", no_spam);
  manifest.add("classes", classes_csv.empty() ? "all" : classes_csv);

  Dataset ds = Dataset::load(resolve_manifest(data));
  std::vector<std::string> classes = select_classes(ds, classes_csv);

  TrainConfig model_cfg;
  model_cfg.no_cham = no_cham;
  model_cfg.no_spam = no_spam;
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  DviceModel model = model_from_checkpoint(ckpt, model_cfg);

  Pcg32 rng(seed, 7);
  EvalOptions options{tau_b, tau_nf};
  EvalReport result = evaluate(model, ds, classes, EpisodeConfig{k, n, m}, episodes, rng, options);
  write_report_csv(result, report);

  manifest.add("report", report);
  manifest.add("mean_precision", result.mean_precision);
  manifest.add("mean_jaccard", result.mean_jaccard);
  fs::path report_dir = fs::path(report).has_parent_path() ? fs::path(report).parent_path()
                                                           : fs::path(".");
  manifest.write(report_dir);
  std::printf("eval over %d episodes: precision %.3f, jaccard %.4f\n", episodes,
              result.mean_precision, result.mean_jaccard);
  return kExitOk;
}

int run_segment(const std::string& ckpt_path, const std::string& guide_dir,
                const std::string& coseg_dir, const std::string& out_dir, float tau_b,
                float tau_nf, bool no_cham, bool no_spam) {
  ManifestWriter manifest("segment");
  manifest.add("ckpt", ckpt_path);
  manifest.add("guide", guide_dir);
  manifest.add("coseg", coseg_dir);
  manifest.add("out", out_dir);
  manifest.add("tau_b", static_cast<double>(tau_b));
  manifest.add("tau_nf", static_cast<double>(tau_nf));
  manifest.add("no_cham", no_cham);
  manifest.add("no_spam", no_spam);

  std::vector<Tensor> guide_images;
  for (const fs::path& p : list_ppm(guide_dir)) guide_images.push_back(read_ppm(p));
  std::vector<fs::path> coseg_files = list_ppm(coseg_dir);
  std::vector<Tensor> coseg_images;
  for (const fs::path& p : coseg_files) coseg_images.push_back(read_ppm(p));

  TrainConfig model_cfg;
  model_cfg.no_cham = no_cham;
  model_cfg.no_spam = no_spam;
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  DviceModel model = model_from_checkpoint(ckpt, model_cfg);

  NoiseFn<float> no_noise = [](const Shape&) -> Tensor {
    throw ValueError("noise requested during eval");
  };
  std::vector<Tensor> probs =
      model.segment_episode(guide_images, coseg_images, RunMode::kEval, no_noise);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::string blank_list;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    BinarizeResult bin = binarize(probs[i], tau_b, tau_nf);
    fs::path out_path = fs::path(out_dir) / (coseg_files[i].stem().string() + ".pgm");
    write_pgm(out_path, bin.mask);
    if (bin.no_foreground) {
      if (!blank_list.empty()) blank_list += ",";
      blank_list += out_path.filename().string();
    }
  }
  manifest.add("masks", static_cast<long long>(probs.size()));
  manifest.add("blank", blank_list.empty() ? "none" : blank_list);
  manifest.write(out_dir);
  std::printf("segment wrote %zu masks to %s\n", probs.size(), out_dir.c_str());
  return kExitOk;
}

int run_export(const std::string& ckpt_path, const std::string& data, const std::string& out) {
  ManifestWriter manifest("export-embeddings");
  manifest.add("ckpt", ckpt_path);
  manifest.add("data", data);
  manifest.add("out", out);

  Dataset ds = Dataset::load(resolve_manifest(data));
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  DviceModel model = model_from_checkpoint(ckpt, TrainConfig{});
  export_embeddings(model, ds, out);

  fs::path out_dir = fs::path(out).has_parent_path() ? fs::path(out).parent_path() : fs::path(".");
  manifest.write(out_dir);
  std::printf("export-embeddings wrote %s (%zu rows)\n", out.c_str(), ds.samples.size());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DVICE few-shot co-segmentation toolkit"};
  app.require_subcommand(1);
  // key=value config files under a [subcommand] section; flags override
  app.set_config("--config", "", "config file with a [subcommand] section");

  // generate
  auto* generate = app.add_subcommand("generate", "write a synthetic shape corpus");
  CorpusConfig corpus;
  std::string generate_out;
  generate->fallthrough();
  generate->add_option("--out", generate_out, "output directory")->required();
  generate->add_option("--seed", corpus.seed, "corpus seed");
  generate->add_option("--samples-per-class", corpus.samples_per_class, "images per class");
  generate->add_option("--image-size", corpus.image_size, "square image size");
  generate->add_option("--clutter-min", corpus.clutter_min, "minimum clutter shapes");
  generate->add_option("--clutter-max", corpus.clutter_max, "maximum clutter shapes");
  generate->add_option("--noise-amplitude", corpus.noise_amplitude, "background noise amplitude");
  generate->add_flag("--dual", corpus.dual_object, "two full-scale objects per image");

  // train / finetune
  auto* train_cmd = app.add_subcommand("train", "episodic training on a corpus");
  TrainFlags train_flags;
  add_train_flags(train_cmd, train_flags, false);
  auto* finetune_cmd = app.add_subcommand("finetune", "continue training from a checkpoint");
  TrainFlags finetune_flags;
  add_train_flags(finetune_cmd, finetune_flags, true);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "episodic evaluation of a checkpoint");
  std::string eval_data, eval_ckpt, eval_report, eval_classes;
  int eval_episodes = 100, eval_k = 8, eval_n = 8, eval_m = 4;
  std::uint64_t eval_seed = 0;
  float eval_tau_b = 0.5f, eval_tau_nf = 0.1f;
  bool eval_no_cham = false, eval_no_spam = false;
  eval_cmd->fallthrough();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--ckpt", eval_ckpt)->required();
  eval_cmd->add_option("--episodes", eval_episodes);
  eval_cmd->add_option("--k", eval_k);
  eval_cmd->add_option("--n", eval_n);
  eval_cmd->add_option("--m", eval_m);
  eval_cmd->add_option("--seed", eval_seed);
  eval_cmd->add_option("--report", eval_report, "CSV output path")->required();
  eval_cmd->add_option("--classes", eval_classes, "comma-separated class filter");
  eval_cmd->add_option("--tau-b", eval_tau_b, "binarization threshold");
  eval_cmd->add_option("--tau-nf", eval_tau_nf, "no-foreground threshold");
  eval_cmd->add_flag("--no-cham", eval_no_cham);
  eval_cmd->add_flag("--no-spam", eval_no_spam);

  // segment
  auto* segment_cmd = app.add_subcommand("segment", "segment a co-seg directory with a guide");
  std::string seg_ckpt, seg_guide, seg_coseg, seg_out;
  float seg_tau_b = 0.5f, seg_tau_nf = 0.1f;
  bool seg_no_cham = false, seg_no_spam = false;
  segment_cmd->fallthrough();
  segment_cmd->add_option("--ckpt", seg_ckpt)->required();
  segment_cmd->add_option("--guide", seg_guide, "directory of guide .ppm images")->required();
  segment_cmd->add_option("--coseg", seg_coseg, "directory of co-seg .ppm images")->required();
  segment_cmd->add_option("--out", seg_out, "output mask directory")->required();
  segment_cmd->add_option("--tau-b", seg_tau_b);
  segment_cmd->add_option("--tau-nf", seg_tau_nf);
  segment_cmd->add_flag("--no-cham", seg_no_cham);
  segment_cmd->add_flag("--no-spam", seg_no_spam);

  // export-embeddings
  auto* export_cmd = app.add_subcommand("export-embeddings", "latent mean vectors as CSV");
  export_cmd->fallthrough();
  std::string exp_ckpt, exp_data, exp_out;
  export_cmd->add_option("--ckpt", exp_ckpt)->required();
  export_cmd->add_option("--data", exp_data)->required();
  export_cmd->add_option("--out", exp_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (generate->parsed()) return run_generate(corpus, generate_out);
    if (train_cmd->parsed()) return run_train(train_flags, false);
    if (finetune_cmd->parsed()) return run_train(finetune_flags, true);
    if (eval_cmd->parsed()) {
      return run_eval(eval_data, eval_ckpt, eval_episodes, eval_k, eval_n, eval_m, eval_seed,
                      eval_report, eval_classes, eval_tau_b, eval_tau_nf, eval_no_cham,
                      eval_no_spam);
    }
    if (segment_cmd->parsed()) {
      return run_segment(seg_ckpt, seg_guide, seg_coseg, seg_out, seg_tau_b, seg_tau_nf,
                         seg_no_cham, seg_no_spam);
    }
    if (export_cmd->parsed()) return run_export(exp_ckpt, exp_data, exp_out);
    std::fprintf(stderr, "no subcommand given\n");
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitConfig;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "malformed input: %s\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const ValueError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  }
}
