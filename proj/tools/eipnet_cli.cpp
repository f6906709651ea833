#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eipnet.hpp"

namespace fs = std::filesystem;
using namespace eipnet;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 1;
constexpr int kNumericAbort = 2;

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string read_text(const fs::path& p) {
  if (!fs::exists(p)) throw Error("file not found: " + p.string());
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_relative() ? base / path : path;
}

ImageU8 edge_logits_to_image(const Tensor<float>& e) {
  const Shape s = e.shape();
  ImageU8 out(s.h, s.w);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      const auto v = to_byte(std::clamp(static_cast<double>(e.at(0, 0, y, x)), 0.0, 1.0));
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = v;
    }
  return out;
}

template <class T>
int run_training(const TrainConfig& cfg, const HrDataset& data) {
  std::optional<FrozenEmbedder<T>> embedder;
  if (cfg.weights.alpha > 0) {
    if (cfg.embedder_checkpoint.empty()) throw ValueError("alpha > 0 needs embedder_checkpoint in the config");
    auto [spec, params] = load_embedder<T>(load_checkpoint(cfg.embedder_checkpoint));
    embedder = FrozenEmbedder<T>{spec, std::move(params)};
  }
  const TrainOutcome out = train<T>(cfg, data.hr, embedder ? &*embedder : nullptr, stdout);
  if (out.exit_code != 0) {
    std::fprintf(stderr, "error: %s\n", out.message.c_str());
    return kNumericAbort;
  }
  std::printf("%s; last checkpoint %s\n", out.message.c_str(), out.last_checkpoint.c_str());
  return kOk;
}

int cmd_train(const std::string& config_path, int threads) {
  const fs::path cfg_file(config_path);
  TrainConfig cfg = load_config(cfg_file);
  // Paths inside a config are relative to the config file.
  const fs::path base = cfg_file.parent_path();
  if (cfg.manifest.empty()) throw ValueError("config has no manifest");
  cfg.manifest = resolve(base, cfg.manifest).string();
  cfg.embedder_checkpoint = resolve(base, cfg.embedder_checkpoint).string();
  cfg.out_dir = resolve(base, cfg.out_dir).string();
  if (threads > 0) cfg.threads = threads;

  const HrDataset data = load_hr_dataset(load_manifest(cfg.manifest, cfg.crop_policy));
  for (const auto& s : data.skipped) std::fprintf(stderr, "warning: skipped %s\n", s.c_str());
  if (data.hr.empty()) throw ValueError("no usable training images in " + cfg.manifest);
  std::printf("training on %zu images, output in %s\n", data.hr.size(), cfg.out_dir.c_str());
  return cfg.element_type == ElementType::float64 ? run_training<double>(cfg, data) : run_training<float>(cfg, data);
}

int cmd_sr(const std::string& model, const std::string& input, const std::string& output, bool emit_edges) {
  const auto [spec, params] = load_generator<float>(load_checkpoint(model));
  const auto files = list_images(input);
  if (files.empty()) throw Error("no images in " + input);
  fs::create_directories(output);
  std::size_t done = 0, failed = 0;
  for (const auto& f : files) {
    ImageU8 img;
    try {
      img = read_image(f);
    } catch (const Error& e) {
      std::fprintf(stderr, "warning: skipping %s\n", e.what());
      ++failed;
      continue;
    }
    if (img.height < kLrSize || img.width < kLrSize) {
      std::fprintf(stderr, "warning: skipping %s: smaller than 16x16\n", f.string().c_str());
      ++failed;
      continue;
    }
    const auto res = super_resolve(spec, params, to_tensor<float>(to_float(img)));
    const std::string stem = f.stem().string();
    write_image(fs::path(output) / (stem + "_sr.png"), to_u8(from_tensor(res.sr)));
    if (emit_edges)
      for (int i = 0; i < 3; ++i)
        if (!res.edges[i].empty())
          write_image(fs::path(output) / (stem + "_edge" + std::to_string(2 << i) + ".png"),
                      edge_logits_to_image(res.edges[i]));
    ++done;
  }
  std::printf("super-resolved %zu image(s), %zu skipped\n", done, failed);
  return done == 0 ? kInputError : kOk;
}

int cmd_edges(const std::string& input, const std::string& out, const std::vector<double>& fixed,
              std::optional<double> adaptive) {
  if (!fixed.empty() && adaptive) throw ValueError("--fixed and --adaptive are exclusive");
  const ThresholdPolicy policy =
      fixed.empty() ? ThresholdPolicy::adaptive(adaptive.value_or(1.6)) : ThresholdPolicy::fixed(fixed[0], fixed[1]);
  write_image(out, edges_to_image(canny(read_image(input), policy)));
  return kOk;
}

// SR files written by `sr` carry a _sr suffix; it is removed before pairing.
std::string pair_name(const fs::path& p) {
  std::string stem = p.stem().string();
  if (stem.size() > 3 && stem.ends_with("_sr")) stem.resize(stem.size() - 3);
  return stem;
}

// Edge maps written next to SR outputs by `sr --emit-edges`.
bool is_edge_map(const fs::path& p) {
  const std::string stem = p.stem().string();
  return stem.ends_with("_edge2") || stem.ends_with("_edge4") || stem.ends_with("_edge8");
}

int cmd_eval(const std::string& sr_dir, const std::string& hr_dir, const std::string& bboxes,
             const std::string& csv_out) {
  std::map<std::string, fs::path> sr, hr;
  for (const auto& p : list_images(sr_dir))
    if (!is_edge_map(p)) sr[pair_name(p)] = p;
  for (const auto& p : list_images(hr_dir)) hr[p.stem().string()] = p;
  std::vector<std::string> unmatched;
  for (const auto& [name, p] : sr)
    if (!hr.contains(name)) unmatched.push_back(p.string());
  for (const auto& [name, p] : hr)
    if (!sr.contains(name)) unmatched.push_back(p.string());
  if (!unmatched.empty()) {
    std::string msg = "unmatched files:";
    for (const auto& u : unmatched) msg += "\n  " + u;
    throw Error(msg);
  }
  if (hr.empty()) throw Error("no images in " + hr_dir);
  const BBoxSidecar boxes = bboxes.empty() ? BBoxSidecar{} : parse_bbox_sidecar(read_text(bboxes));
  MetricsReport report;
  for (const auto& [name, hr_path] : hr) {
    std::optional<BBox> box;
    if (auto it = boxes.find(name); it != boxes.end()) box = it->second;
    report.add(name, read_image(sr.at(name)), read_image(hr_path), box);
  }
  if (csv_out.empty()) {
    std::cout << report.csv();
  } else {
    std::ofstream f(csv_out, std::ios::binary);
    if (!(f << report.csv())) throw Error("cannot write " + csv_out);
  }
  std::cout << report.summary() << "\n";
  return kOk;
}

int cmd_tar(const std::string& a, const std::string& b, double d, bool squared) {
  const double t = tar(read_embeddings(a), read_embeddings(b), d, squared ? TarMode::squared : TarMode::euclidean);
  std::printf("TAR %.1f\n", t);
  return kOk;
}

int cmd_stats(const std::string& model) {
  const Checkpoint ck = load_checkpoint(model);
  const GeneratorSpec spec = generator_spec(parse_config(ck.config));
  const auto layers = spec.layers();
  std::printf("generator parameters %zu (%.2fM)\n", param_count(layers), param_count(layers) / 1e6);
  std::printf("generator MACs at %dx%d input %.3f G\n", spec.input_size, spec.input_size, mac_count(layers) / 1e9);
  return kOk;
}

int cmd_init(const std::string& out, std::uint64_t seed, int width_divisor) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.width_divisor = width_divisor;
  cfg.disc_width_divisor = width_divisor;
  Checkpoint ck;
  ck.config = format_config(cfg, false);
  put_params(ck, "generator", init_params<float>(generator_spec(cfg).layers(), seed));
  put_params(ck, "discriminator", init_params<float>(discriminator_spec(cfg).layers(), discriminator_seed(seed)));
  save_checkpoint(out, ck);
  std::printf("wrote %s\n", out.c_str());
  return kOk;
}

int cmd_train_embedder(const std::string& manifest, const std::string& crop, const std::string& out,
                       const EmbedderTrainConfig& cfg, int width_divisor) {
  const Manifest m = load_manifest(manifest, parse_crop_policy(crop));
  const HrDataset data = load_hr_dataset(m);
  for (const auto& s : data.skipped) std::fprintf(stderr, "warning: skipped %s\n", s.c_str());
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  for (std::size_t i = 0; i < data.hr.size(); ++i) {
    if (data.identity[i] < 0) continue;
    images.push_back(to_tensor<float>(data.hr[i]));
    labels.push_back(data.identity[i]);
  }
  EmbedderSpec spec;
  spec.width_divisor = width_divisor;
  ParamSet<float> params = init_params<float>(spec.layers(), cfg.seed);
  const auto res = train_embedder(spec, params, images, labels, cfg);
  save_checkpoint(out, embedder_checkpoint(spec, params));
  std::printf("trained on %zu images: final loss %.6f, train accuracy %.1f%%\n", images.size(), res.final_loss,
              100 * res.train_accuracy);
  return kOk;
}

int cmd_embed(const std::string& model, const std::string& input, const std::string& out) {
  const auto [spec, params] = load_embedder<float>(load_checkpoint(model));
  const auto files = list_images(input);
  if (files.empty()) throw Error("no images in " + input);
  Embeddings e;
  for (const auto& f : files) {
    ImageF img = to_float(read_image(f));
    if (img.height != spec.input_size || img.width != spec.input_size)
      img = resize(img, spec.input_size, spec.input_size);
    const auto z = embed_values(spec, params, to_tensor<float>(img));
    e.add(pair_name(f), std::vector<double>(z.data().begin(), z.data().end()));
  }
  write_embeddings(out, e);
  std::printf("wrote %zu embeddings to %s\n", e.size(), out.c_str());
  return kOk;
}

int cmd_synth(const std::string& out, int identities, int per_identity, std::uint64_t seed) {
  write_synth_dataset(out, synth_faces(seed, identities, per_identity));
  std::printf("wrote %d images, manifest.tsv and bboxes.tsv to %s\n", identities * per_identity, out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face super-resolution (16x16 -> 128x128) with edge and identity losses"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker thread cap")->check(CLI::PositiveNumber);

  std::string config;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", config, "key = value config file")->required();

  std::string model, input, output;
  bool emit_edges = false;
  auto* sr_cmd = app.add_subcommand("sr", "Super-resolve every image in a directory");
  sr_cmd->add_option("--model", model, "Checkpoint")->required();
  sr_cmd->add_option("--input", input, "Directory of LR images")->required();
  sr_cmd->add_option("--output", output, "Output directory")->required();
  sr_cmd->add_flag("--emit-edges", emit_edges, "Also write the 2x/4x/8x edge maps");

  std::string edge_out;
  std::vector<double> fixed;
  std::optional<double> adaptive;
  auto* edges_cmd = app.add_subcommand("edges", "Canny edge map of one image");
  edges_cmd->add_option("--input", input, "Image")->required();
  edges_cmd->add_option("--out", edge_out, "Output PNG")->required();
  edges_cmd->add_option("--fixed", fixed, "Fixed thresholds LOW HIGH")->expected(2);
  edges_cmd->add_option("--adaptive", adaptive, "Adaptive thresholds with this k (default 1.6)");

  std::string sr_dir, hr_dir, bboxes, csv_out;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM and face-region metrics");
  eval_cmd->add_option("--sr", sr_dir, "Directory of SR images")->required();
  eval_cmd->add_option("--hr", hr_dir, "Directory of HR images")->required();
  eval_cmd->add_option("--bboxes", bboxes, "Face box sidecar (name<TAB>top,right,bottom,left)");
  eval_cmd->add_option("--csv", csv_out, "Write the per-image CSV here instead of stdout");

  std::string emb_a, emb_b;
  double d = 0;
  bool squared = false;
  auto* tar_cmd = app.add_subcommand("tar", "True acceptance rate between two embedding files");
  tar_cmd->add_option("--a", emb_a, "Embedding file")->required();
  tar_cmd->add_option("--b", emb_b, "Embedding file")->required();
  tar_cmd->add_option("--d", d, "Distance threshold")->required();
  tar_cmd->add_flag("--squared", squared, "Squared distance on unit-normalized vectors");

  auto* stats_cmd = app.add_subcommand("stats", "Generator parameter and MAC counts");
  stats_cmd->add_option("--model", model, "Checkpoint")->required();

  std::string out;
  std::uint64_t seed = 1;
  int width_divisor = 1;
  auto* init_cmd = app.add_subcommand("init", "Write a freshly initialized checkpoint");
  init_cmd->add_option("--out", out, "Checkpoint path")->required();
  init_cmd->add_option("--seed", seed, "Seed");
  init_cmd->add_option("--width-divisor", width_divisor, "Divide every channel count by this");

  std::string manifest, crop = "celeba_178";
  EmbedderTrainConfig ecfg;
  auto* te_cmd = app.add_subcommand("train-embedder", "Train the identity embedder on labelled images");
  te_cmd->add_option("--manifest", manifest, "Manifest with identity labels")->required();
  te_cmd->add_option("--out", out, "Checkpoint path")->required();
  te_cmd->add_option("--crop", crop, "celeba_178 or fraction_0.7_min_side");
  te_cmd->add_option("--epochs", ecfg.epochs, "Epochs");
  te_cmd->add_option("--seed", ecfg.seed, "Seed");
  te_cmd->add_option("--width-divisor", width_divisor, "Divide every channel count by this");

  auto* embed_cmd = app.add_subcommand("embed", "Embedding file for a directory of images");
  embed_cmd->add_option("--model", model, "Embedder checkpoint")->required();
  embed_cmd->add_option("--input", input, "Image directory")->required();
  embed_cmd->add_option("--out", out, "Embedding file")->required();

  int identities = 20, per_identity = 10;
  auto* synth_cmd = app.add_subcommand("synth", "Write a procedural face dataset");
  synth_cmd->add_option("--out", out, "Output directory")->required();
  synth_cmd->add_option("--identities", identities, "Number of identities");
  synth_cmd->add_option("--per-identity", per_identity, "Images per identity");
  synth_cmd->add_option("--seed", seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (threads > 0) set_threads(threads);
    if (*train_cmd) return cmd_train(config, threads);
    if (*sr_cmd) return cmd_sr(model, input, output, emit_edges);
    if (*edges_cmd) return cmd_edges(input, edge_out, fixed, adaptive);
    if (*eval_cmd) return cmd_eval(sr_dir, hr_dir, bboxes, csv_out);
    if (*tar_cmd) return cmd_tar(emb_a, emb_b, d, squared);
    if (*stats_cmd) return cmd_stats(model);
    if (*init_cmd) return cmd_init(out, seed, width_divisor);
    if (*te_cmd) return cmd_train_embedder(manifest, crop, out, ecfg, width_divisor);
    if (*embed_cmd) return cmd_embed(model, input, out);
    if (*synth_cmd) return cmd_synth(out, identities, per_identity, seed);
  } catch (const NonFiniteError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumericAbort;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInputError;
  }
  return kInputError;
}
