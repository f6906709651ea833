// Trains a narrow generator for a few hundred steps on procedural faces and
// compares it with bilinear upsampling on held-out faces.
//
//   quickstart [iterations] [output_dir]

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "eipnet.hpp"

using namespace eipnet;

int main(int argc, char** argv) {
  const long iters = argc > 1 ? std::atol(argv[1]) : 300;
  const std::string out = argc > 2 ? argv[2] : "quickstart_out";

  const SynthDataset faces = synth_faces(2024, 8, 6);
  std::vector<ImageF> train_hr;
  std::vector<TestExample> held_out;
  for (std::size_t i = 0; i < faces.images.size(); ++i) {
    const ImageF raw = to_float(faces.images[i]);
    if (i % 6 == 5)
      held_out.push_back(test_example(raw, CropPolicy::celeba_178));
    else
      train_hr.push_back(prepare_hr(raw, CropPolicy::celeba_178));
  }

  TrainConfig cfg;
  cfg.width_divisor = 8;
  cfg.disc_width_divisor = 16;
  cfg.batch_size = 8;
  cfg.lr = 1e-3;
  cfg.weights.alpha = 0;  // no identity embedder here
  cfg.phase1_iters = iters;
  cfg.phase2_iters = iters;
  cfg.checkpoint_interval = iters;
  cfg.out_dir = out;
  std::printf("training %ld iterations on %zu faces\n", iters, train_hr.size());
  const TrainOutcome run = train<float>(cfg, train_hr, nullptr, stdout);
  if (run.exit_code != 0) {
    std::fprintf(stderr, "%s\n", run.message.c_str());
    return run.exit_code;
  }

  const auto [spec, params] = load_generator<float>(load_checkpoint(run.last_checkpoint));
  double model = 0, bilinear = 0;
  for (std::size_t i = 0; i < held_out.size(); ++i) {
    const auto& ex = held_out[i];
    const ImageU8 sr = to_u8(from_tensor(super_resolve(spec, params, to_tensor<float>(ex.lr)).sr));
    const ImageU8 hr = to_u8(ex.hr);
    model += psnr(sr, hr);
    bilinear += psnr(to_u8(bilinear_baseline(ex.lr)), hr);
    if (i == 0) {
      write_image(std::filesystem::path(out) / "lr.png", to_u8(ex.lr));
      write_image(std::filesystem::path(out) / "sr.png", sr);
      write_image(std::filesystem::path(out) / "hr.png", hr);
    }
  }
  const double n = static_cast<double>(held_out.size());
  std::printf("held-out PSNR: model %.2f dB, bilinear %.2f dB\n", model / n, bilinear / n);
  std::printf("sample images in %s\n", out.c_str());
}
