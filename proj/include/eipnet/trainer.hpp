#pragma once

#include <Eigen/Core>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "eipnet/adam.hpp"
#include "eipnet/checkpoint.hpp"
#include "eipnet/config.hpp"
#include "eipnet/data.hpp"
#include "eipnet/embedder.hpp"
#include "eipnet/losses.hpp"
#include "eipnet/model.hpp"

namespace eipnet {

inline void set_threads(int n) { Eigen::setNbThreads(n); }

inline GeneratorSpec generator_spec(const TrainConfig& c) {
  GeneratorSpec s;
  s.width_divisor = c.width_divisor;
  s.edge_blocks = c.edge_blocks;
  return s;
}

inline DiscriminatorSpec discriminator_spec(const TrainConfig& c) {
  DiscriminatorSpec s;
  s.width_divisor = c.disc_width_divisor;
  return s;
}

/// Discriminator init draws from a seed distinct from the generator's.
inline std::uint64_t discriminator_seed(std::uint64_t seed) { return stream_id(seed, 0x64697363); }

inline std::string checkpoint_name(long iteration) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "checkpoint_%08ld.eipn", iteration);
  return buf;
}

struct TrainLogRow {
  long iteration = 0;
  LossReport report;
};

inline std::string train_log_header() { return std::string("iteration,") + LossReport::csv_header + "\n"; }

inline std::string format_log_row(const TrainLogRow& r) {
  std::string s = std::to_string(r.iteration);
  char buf[32];
  for (double v : r.report.fields()) {
    std::snprintf(buf, sizeof buf, ",%.9g", v);
    s += buf;
  }
  return s + "\n";
}

/// Frozen identity network for the identity loss.
template <class T>
struct FrozenEmbedder {
  EmbedderSpec spec;
  ParamSet<T> params;
};

struct TrainOutcome {
  int exit_code = 0;      ///< 0 completed, 2 non-finite loss
  long iterations = 0;    ///< completed steps
  std::string message;
  std::string last_checkpoint;
  std::vector<TrainLogRow> log;
};

/// Two-phase training. Steps with index < phase1_iters train the generator
/// alone with beta = 0; later steps run one discriminator update and then one
/// generator update on each batch. Writes checkpoints, train_log.csv and
/// timing.csv under cfg.out_dir (nothing when out_dir is empty).
template <class T>
TrainOutcome train(const TrainConfig& cfg, const std::vector<ImageF>& hr_train,
                   const FrozenEmbedder<T>* embedder = nullptr, std::FILE* progress = nullptr) {
  cfg.validate();
  if (hr_train.empty()) throw ValueError("train: no training images");
  for (const auto& im : hr_train)
    if (im.height != kHrSize || im.width != kHrSize) throw ShapeError("train: HR images must be 128x128");
  if (cfg.weights.alpha > 0 && !embedder) throw ValueError("train: alpha > 0 needs an embedder checkpoint");
  set_threads(cfg.threads);

  const GeneratorSpec gspec = generator_spec(cfg);
  const DiscriminatorSpec dspec = discriminator_spec(cfg);
  ParamSet<T> g = init_params<T>(gspec.layers(), cfg.seed);
  ParamSet<T> d = init_params<T>(dspec.layers(), discriminator_seed(cfg.seed));
  AdamState<T> gstate(g), dstate(d);
  const AdamConfig gadam{cfg.lr, cfg.g_beta1, cfg.g_beta2, cfg.adam_eps};
  const AdamConfig dadam{cfg.lr, cfg.d_beta1, cfg.d_beta2, cfg.adam_eps};
  const bool need_edges =
      cfg.weights.gamma > 0 && (cfg.edge_blocks[0] || cfg.edge_blocks[1] || cfg.edge_blocks[2]);
  const std::string config_text = format_config(cfg, false);

  namespace fs = std::filesystem;
  const bool write = !cfg.out_dir.empty();
  const fs::path dir(cfg.out_dir);
  std::ofstream log_file, timing_file;
  if (write) {
    fs::create_directories(dir);
    log_file.open(dir / "train_log.csv", std::ios::binary | std::ios::trunc);
    timing_file.open(dir / "timing.csv", std::ios::binary | std::ios::trunc);
    if (!log_file || !timing_file) throw Error("cannot write training logs under " + dir.string());
    log_file << train_log_header();
    timing_file << "iteration,wall_seconds\n";
  }

  TrainOutcome out;
  auto save = [&](long iteration) {
    if (!write) return;
    Checkpoint ck;
    ck.iteration = static_cast<std::uint64_t>(iteration);
    ck.config = config_text;
    put_params(ck, "generator", g);
    put_params(ck, "discriminator", d);
    const fs::path p = dir / checkpoint_name(iteration);
    save_checkpoint(p, ck);
    out.last_checkpoint = p.string();
  };

  BatchStream stream(hr_train.size(), cfg.batch_size, cfg.seed);
  EdgeCache cache(cfg.canny);
  const auto start = std::chrono::steady_clock::now();
  save(0);

  for (long it = 0; it < cfg.phase2_iters; ++it) {
    const bool adversarial = it >= cfg.phase1_iters;
    const auto batch = stream.next();
    const int n = static_cast<int>(batch.items.size());
    Tensor<T> lr({n, 3, kLrSize, kLrSize}), hr({n, 3, kHrSize, kHrSize});
    std::array<Tensor<T>, 3> targets;
    for (int i = 0; i < 3; ++i) targets[i] = Tensor<T>({n, 1, kLrSize << (i + 1), kLrSize << (i + 1)});
    for (int i = 0; i < n; ++i) {
      Philox rng = stream.example_rng(batch, static_cast<std::size_t>(i));
      const TrainExample ex = make_example_from_hr(hr_train[batch.items[i]], rng, need_edges, &cache, cfg.canny);
      store(ex.lr, lr, i);
      store(ex.hr, hr, i);
      if (need_edges)
        for (int s = 0; s < 3; ++s) {
          T* dst = targets[s].item(i);
          for (std::size_t p = 0; p < ex.edges[s].values.size(); ++p) dst[p] = ex.edges[s].values[p] ? T(1) : T(0);
        }
    }

    LossReport report;
    std::string failure;
    try {
      if (adversarial) {
        Tensor<T> sr;
        {
          Tape<T> t;
          sr = t.value(generator_forward(t, gspec, bind(t, g, false), t.constant(lr)).sr);
        }
        Tape<T> t;
        const Bound<T> dp = bind(t, d, true);
        const Var real = discriminator_forward(t, dspec, dp, t.constant(hr)).prob;
        const Var fake = discriminator_forward(t, dspec, dp, t.constant(sr)).prob;
        const Var loss = l_ad_d(t, real, fake);
        report.l_ad_d = static_cast<double>(t.item(loss));
        if (std::isfinite(report.l_ad_d)) {
          t.backward(loss);
          adam_step(d, gradients(t, dp), dstate, dadam);
        }
      }
      {
        Tape<T> t;
        const Bound<T> gp = bind(t, g, true);
        const Var hr_c = t.constant(hr);
        const auto fwd = generator_forward(t, gspec, gp, t.constant(lr));
        LossTerms terms;
        terms.l_rgb = l_rgb(t, fwd.sr, hr_c);
        if (need_edges) terms.l_e = l_e(t, fwd.edge_logits, targets);
        if (cfg.use_lc) terms.l_lc = l_lc(t, fwd.sr, hr_c);
        if (cfg.weights.alpha > 0) {
          const Bound<T> ep = bind(t, embedder->params, false);
          terms.l_id = l_id(t, embed(t, embedder->spec, ep, fwd.sr), embed(t, embedder->spec, ep, hr_c));
        }
        if (adversarial) {
          const Bound<T> dp = bind(t, d, false);
          terms.l_ad_g = l_ad_g(t, discriminator_forward(t, dspec, dp, fwd.sr).prob);
        }
        const Var total = total_loss(t, terms, cfg.weights, adversarial, report);
        if (std::isfinite(report.total) && std::isfinite(report.l_ad_d)) {
          t.backward(total);
          adam_step(g, gradients(t, gp), gstate, gadam);
        }
      }
    } catch (const NonFiniteError& e) {
      failure = e.what();
      report.total = std::numeric_limits<double>::quiet_NaN();
    }

    const TrainLogRow row{it, report};
    out.log.push_back(row);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (write) {
      log_file << format_log_row(row);
      log_file.flush();
      timing_file << it << "," << wall << "\n";
    }
    if (!failure.empty() || !std::isfinite(report.total) || !std::isfinite(report.l_ad_d)) {
      out.exit_code = 2;
      out.iterations = it;
      out.message = "non-finite loss at iteration " + std::to_string(it) +
                    (failure.empty() ? std::string() : " (" + failure + ")") +
                    (out.last_checkpoint.empty() ? std::string() : "; last checkpoint " + out.last_checkpoint);
      return out;
    }
    const long done = it + 1;
    if (progress && (done % 100 == 0 || done == cfg.phase2_iters)) {
      std::fprintf(progress, "iter %ld/%ld  total %.6f  l_rgb %.6f  %.1fs\n", done, cfg.phase2_iters, report.total,
                   report.l_rgb, wall);
      std::fflush(progress);
    }
    if (done % cfg.checkpoint_interval == 0 || done == cfg.phase1_iters || done == cfg.phase2_iters) save(done);
  }
  out.iterations = cfg.phase2_iters;
  out.message = "completed " + std::to_string(cfg.phase2_iters) + " iterations";
  return out;
}

/// Generator spec and parameters stored in a checkpoint, with the spec taken
/// from the embedded config snapshot.
template <class T>
std::pair<GeneratorSpec, ParamSet<T>> load_generator(const Checkpoint& ck) {
  const TrainConfig cfg = parse_config(ck.config);
  const GeneratorSpec spec = generator_spec(cfg);
  return {spec, take_params<T>(ck, "generator", spec.layers())};
}

}  // namespace eipnet
