// Trains two small networks on synthetic scenes and super-resolves a
// held-out scene with its ground truth as the only corpus image.
//
//   refsr_quickstart [work_dir]
#include <filesystem>
#include <iostream>
#include <random>

#include "refsr/refsr.hpp"

namespace fs = std::filesystem;
using namespace refsr;

namespace {

// Rectangles over a horizontal ramp.
ImagePlane synth_scene(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImagePlane img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img(x, y) = static_cast<float>(0.3 + 0.3 * x / w);
  for (int s = 0; s < 16; ++s) {
    const int x0 = static_cast<int>(u(rng) * w), y0 = static_cast<int>(u(rng) * h);
    const int rw = 4 + static_cast<int>(u(rng) * w / 4), rh = 4 + static_cast<int>(u(rng) * h / 4);
    const float v = static_cast<float>(u(rng));
    for (int y = y0; y < std::min(h, y0 + rh); ++y)
      for (int x = x0; x < std::min(w, x0 + rw); ++x) img(x, y) = v;
  }
  return img;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "refsr_quickstart";
  fs::create_directories(work / "corpus");
  const ScaleFactor s(3);

  std::vector<ImagePlane> train;
  for (int i = 0; i < 6; ++i) train.push_back(synth_scene(96, 96, 100 + i));
  TrainConfig tc;
  tc.iterations = 300;
  tc.batch_size = 8;
  tc.learning_rate = 1e-3;
  tc.architecture.channels = 16;
  std::cout << "training IHN..." << std::endl;
  auto ihn = train_ihn(train, s, tc);
  std::cout << "training EHN..." << std::endl;
  auto ehn = train_ehn(train, s, tc, ihn.params);

  const ImagePlane gt = synth_scene(96, 96, 999);
  write_plane(work / "corpus" / "gt.png", gt);
  std::vector<Descriptor144> descs;
  const auto feats = extract_features(gt, 500);
  for (const auto& f : feats) descs.push_back(f.descriptor);
  InvertedIndex index(build_vocabulary(descs, std::min<int>(64, static_cast<int>(descs.size())), 20, 0));
  std::vector<WordId> words;
  for (const auto& f : feats) words.push_back(quantize(f.descriptor, index.vocabulary()));
  index.add_words(0, "gt.png", words);
  index.commit();

  Models models{ihn.params, ehn.params, std::move(index)};
  RunConfig cfg;
  cfg.corpus_dir = work / "corpus";
  const auto r = super_resolve(models, cfg, degrade(gt, s), "held-out");
  write_plane(work / "output.png", r.output);
  std::cout << "references kept: " << r.manifest.survivors << "/" << r.manifest.references.size() << '\n'
            << "matches accepted: " << r.matches.accepted() << "/" << r.matches.matches.size() << '\n'
            << "PSNR bicubic      " << format_db(psnr(upsample_bicubic(degrade(gt, s), s), gt)) << " dB\n"
            << "PSNR intermediate " << format_db(psnr(clamp01(r.intermediate), gt)) << " dB\n"
            << "PSNR output       " << format_db(psnr(r.output, gt)) << " dB\n"
            << "wrote " << (work / "output.png").string() << '\n';
}
