#ifndef REFSR_CLI_HPP_
#define REFSR_CLI_HPP_

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "refsr/error.hpp"
#include "refsr/image.hpp"
#include "refsr/image_io.hpp"
#include "refsr/match_fuse.hpp"
#include "refsr/metrics.hpp"
#include "refsr/network.hpp"
#include "refsr/parallel.hpp"
#include "refsr/pipeline.hpp"
#include "refsr/retrieval.hpp"
#include "refsr/training.hpp"

namespace refsr {

namespace fs = std::filesystem;

inline bool is_image_file(const fs::path& p) {
  const std::string e = detail::lower_extension(p);
  return e == ".png" || e == ".pgm" || e == ".ppm" || e == ".pnm";
}

// Expands directories to their image files (sorted by name).
inline std::vector<fs::path> collect_images(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && is_image_file(e.path())) found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw IoError("no such file or directory: " + a);
    }
  }
  return out;
}

namespace cli {

inline int cmd_degrade(const std::string& input, const std::string& output, int scale, double sigma) {
  const ScaleFactor s(scale);
  const double sg = sigma >= 0.0 ? sigma : default_blur_sigma(s);
  const Image8 img = read_image8(input);
  if (img.channels == 1) {
    write_plane(output, degrade(crop_to_multiple(plane_from8(img, 0), s), s, sg));
  } else {
    ColorImage c = color_from8(img);
    for (auto& p : c.planes) p = degrade(crop_to_multiple(p, s), s, sg);
    write_color(output, c);
  }
  return 0;
}

struct TrainArgs {
  std::string net = "ihn";
  std::vector<std::string> images;
  std::string ihn;
  std::string out;
  int scale = 3;
  TrainConfig cfg{};
  std::string optimizer = "adam";
  int log_every = 0;
};

inline int cmd_train(TrainArgs a, std::ostream& out) {
  const ScaleFactor s(a.scale);
  if (a.optimizer == "adam")
    a.cfg.optimizer = Optimizer::adam;
  else if (a.optimizer == "sgd")
    a.cfg.optimizer = Optimizer::sgd;
  else
    throw InvalidArgument("unknown optimizer '" + a.optimizer + "'");
  std::vector<ImagePlane> imgs;
  for (const auto& p : collect_images(a.images)) imgs.push_back(read_luma(p));
  if (imgs.empty()) throw InvalidArgument("no training images");
  if (a.log_every > 0)
    a.cfg.on_iteration = [&out, every = a.log_every](int it, double loss) {
      if ((it + 1) % every == 0) out << "iteration " << (it + 1) << " loss " << loss << '\n';
    };
  TrainResult<float> r;
  if (a.net == "ihn") {
    r = train_ihn(imgs, s, a.cfg);
  } else if (a.net == "ehn") {
    if (a.ihn.empty()) throw InvalidArgument("--ihn is required to train the EHN");
    r = train_ehn(imgs, s, a.cfg, load_params(a.ihn));
  } else {
    throw InvalidArgument("--net must be ihn or ehn");
  }
  save_params(a.out, r.params);
  out << "trained " << a.net << " on " << imgs.size() << " images, " << r.loss_trace.size() << " iterations";
  if (!r.loss_trace.empty()) out << ", final loss " << r.loss_trace.back();
  out << '\n';
  return 0;
}

inline int cmd_index_build(const std::string& corpus, const std::string& out_path, int words, int iters,
                           std::uint64_t seed, const IndexParams& params, std::ostream& out) {
  const auto files = collect_images({corpus});
  if (files.empty()) throw InvalidArgument("corpus has no images");
  std::vector<std::vector<Feature>> feats(files.size());
  std::vector<Descriptor144> all;
  for (std::size_t i = 0; i < files.size(); ++i) {
    feats[i] = extract_features(read_luma(files[i]), params.max_keypoints, params.detector);
    for (const auto& f : feats[i]) all.push_back(f.descriptor);
  }
  if (all.size() < 2) throw InvalidArgument("corpus yields fewer than 2 descriptors");
  const int k = std::min<int>(words, static_cast<int>(all.size()));
  InvertedIndex index(build_vocabulary(all, k, iters, seed));
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::vector<WordId> w;
    for (const auto& f : feats[i]) w.push_back(quantize(f.descriptor, index.vocabulary()));
    index.add_words(static_cast<ImageId>(i), fs::relative(files[i], corpus).generic_string(), w);
  }
  index.commit();
  index.save(fs::path(out_path));
  out << "indexed " << files.size() << " images with " << k << " words\n";
  return 0;
}

inline int cmd_index_query(const std::string& index_path, const std::string& image, int top_k,
                           const IndexParams& params, std::ostream& out) {
  const auto index = InvertedIndex::load(fs::path(index_path));
  const auto hits = index.query_topk(read_luma(image), top_k, params);
  int rank = 1;
  for (const auto& h : hits) out << rank++ << ' ' << h.id << ' ' << h.score << ' ' << index.path_of(h.id) << '\n';
  return 0;
}

struct SrArgs {
  std::string config;
  std::vector<std::string> inputs;
  std::string output;
  std::string output_dir;
  std::string dump_matches;
  std::string manifest;
  std::vector<std::string> ground_truth;
  std::vector<std::string> settings;  // key=value overrides
  std::optional<std::uint64_t> seed;
  std::optional<int> top_k;
  std::optional<int> scale;
  std::string ihn, ehn, index, corpus;
};

inline int cmd_sr(const SrArgs& a, std::ostream& out) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
  if (!a.ihn.empty()) cfg.ihn_path = a.ihn;
  if (!a.ehn.empty()) cfg.ehn_path = a.ehn;
  if (!a.index.empty()) cfg.index_path = a.index;
  if (!a.corpus.empty()) cfg.corpus_dir = a.corpus;
  for (const auto& kv : a.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got " + kv);
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.top_k) cfg.top_k = *a.top_k;
  if (a.scale) cfg.scale = *a.scale;
  if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
  validate(cfg);
  if (cfg.threads) set_thread_count(cfg.threads);

  const auto inputs = collect_images(a.inputs);
  if (inputs.empty()) throw InvalidArgument("no input images");
  if (inputs.size() > 1 && cfg.output_dir.empty()) throw InvalidArgument("several inputs need --output-dir");
  if (inputs.size() == 1 && a.output.empty() && cfg.output_dir.empty())
    throw InvalidArgument("--output or --output-dir is required");
  if (!a.ground_truth.empty() && a.ground_truth.size() != inputs.size())
    throw InvalidArgument("--ground-truth must be given once per input");
  if (!cfg.output_dir.empty()) fs::create_directories(cfg.output_dir);

  const Models models = load_models(cfg);
  std::vector<ManifestEntry> entries;
  std::ofstream dump;
  if (!a.dump_matches.empty()) {
    dump.open(a.dump_matches);
    if (!dump) throw IoError("cannot write " + a.dump_matches);
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const fs::path dst = inputs.size() == 1 && !a.output.empty() ? fs::path(a.output)
                                                                  : cfg.output_dir / inputs[i].filename().replace_extension(".png");
    const Image8 img = read_image8(inputs[i]);
    const std::string name = inputs[i].filename().string();
    SrResult r;
    if (img.channels == 1) {
      r = super_resolve(models, cfg, plane_from8(img, 0), name);
      write_plane(dst, r.output);
    } else {
      auto [color, res] = super_resolve_color(models, cfg, color_from8(img), name);
      write_color(dst, color);
      r = std::move(res);
    }
    if (!a.ground_truth.empty()) record_metrics(r.manifest, r, read_luma(a.ground_truth[i]));
    if (dump.is_open()) {
      dump << "# image " << name << '\n';
      dump_matches(dump, r.matches);
    }
    out << name << ": " << r.manifest.survivors << "/" << r.manifest.references.size() << " references, "
        << r.manifest.accepted << " accepted / " << r.manifest.rejected << " rejected matches";
    if (r.manifest.psnr_output)
      out << ", PSNR " << format_db(*r.manifest.psnr_intermediate) << " -> " << format_db(*r.manifest.psnr_output)
          << " dB";
    out << '\n';
    entries.push_back(std::move(r.manifest));
  }
  if (!a.manifest.empty()) write_manifest(a.manifest, entries, cfg.seed);
  return 0;
}

// Luma metrics of each method directory against the ground truth, matched
// by file stem.
inline int cmd_eval(const std::vector<std::string>& ground_truth, const std::vector<std::string>& methods, int scale,
                    const std::string& csv, const std::string& proposed, std::ostream& out) {
  const ScaleFactor s(scale);
  const auto gts = collect_images(ground_truth);
  if (gts.empty()) throw InvalidArgument("no ground-truth images");
  std::vector<EvalRecord> records;
  for (const auto& m : methods) {
    const auto eq = m.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--method expects label=directory, got " + m);
    const std::string label = m.substr(0, eq);
    const fs::path dir = m.substr(eq + 1);
    std::map<std::string, fs::path> by_stem;
    for (const auto& p : collect_images({dir.string()})) by_stem.emplace(p.stem().string(), p);
    for (const auto& gt_path : gts) {
      auto it = by_stem.find(gt_path.stem().string());
      if (it == by_stem.end()) throw IoError("method '" + label + "' has no output for " + gt_path.filename().string());
      const ImagePlane gt = crop_to_multiple(read_luma(gt_path), s);
      const ImagePlane est = read_luma(it->second);
      records.push_back({gt_path.stem().string(), scale, label, psnr(est, gt), ssim(est, gt)});
    }
  }
  write_table(out, records, proposed);
  if (!csv.empty()) {
    std::ofstream os(csv);
    if (!os) throw IoError("cannot write " + csv);
    write_csv(os, records);
  }
  return 0;
}

}  // namespace cli

// Parses argv and dispatches. Exit codes: 0 success, 1 runtime error, 2
// usage error.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Reference-based single-image super-resolution"};
  app.require_subcommand(1);
  std::uint64_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = all cores)");

  // degrade
  std::string d_in, d_out;
  int d_scale = 3;
  double d_sigma = -1.0;
  auto* deg = app.add_subcommand("degrade", "Blur and down-sample an image");
  deg->add_option("--input,-i", d_in)->required();
  deg->add_option("--output,-o", d_out)->required();
  deg->add_option("--scale,-s", d_scale);
  deg->add_option("--sigma", d_sigma, "Gaussian sigma (default 0.4 * scale)");

  // train
  cli::TrainArgs t;
  auto* train = app.add_subcommand("train", "Train the IHN or EHN");
  train->add_option("--net", t.net)->check(CLI::IsMember({"ihn", "ehn"}));
  train->add_option("--images", t.images, "Training images or directories")->required();
  train->add_option("--out,-o", t.out)->required();
  train->add_option("--ihn", t.ihn, "Trained IHN (for --net ehn)");
  train->add_option("--scale,-s", t.scale);
  train->add_option("--iterations", t.cfg.iterations);
  train->add_option("--batch", t.cfg.batch_size);
  train->add_option("--lr", t.cfg.learning_rate);
  train->add_option("--seed", t.cfg.seed);
  train->add_option("--optimizer", t.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
  train->add_option("--layers", t.cfg.architecture.layers);
  train->add_option("--channels", t.cfg.architecture.channels);
  train->add_option("--variants", t.cfg.perturb_variants, "Perturbed references per image (EHN)");
  train->add_option("--log-every", t.log_every);

  // index
  auto* index = app.add_subcommand("index", "Build or query the retrieval index");
  index->require_subcommand(1);
  std::string ib_corpus, ib_out;
  int ib_words = 256, ib_iters = 20;
  std::uint64_t ib_seed = 0;
  IndexParams iparams;
  auto* build = index->add_subcommand("build", "Index a corpus directory");
  build->add_option("--corpus", ib_corpus)->required();
  build->add_option("--out,-o", ib_out)->required();
  build->add_option("--words", ib_words);
  build->add_option("--kmeans-iterations", ib_iters);
  build->add_option("--seed", ib_seed);
  build->add_option("--max-keypoints", iparams.max_keypoints);
  std::string iq_index, iq_image;
  int iq_k = 4;
  auto* query = index->add_subcommand("query", "Rank corpus images for a query image");
  query->add_option("--index", iq_index)->required();
  query->add_option("--image", iq_image)->required();
  query->add_option("--top-k,-k", iq_k);
  query->add_option("--max-keypoints", iparams.max_keypoints);

  // sr
  cli::SrArgs sa;
  auto* sr = app.add_subcommand("sr", "Super-resolve images");
  sr->add_option("--config,-c", sa.config, "key=value configuration file");
  sr->add_option("--input,-i", sa.inputs)->required();
  sr->add_option("--output,-o", sa.output);
  sr->add_option("--output-dir", sa.output_dir);
  sr->add_option("--dump-matches", sa.dump_matches, "Write one line per patch match");
  sr->add_option("--manifest", sa.manifest, "Write the run manifest (JSON)");
  sr->add_option("--ground-truth", sa.ground_truth, "HR images for metrics, one per input");
  sr->add_option("--set", sa.settings, "Override a configuration key (key=value)");
  sr->add_option("--seed", sa.seed);
  sr->add_option("--top-k,-k", sa.top_k);
  sr->add_option("--scale,-s", sa.scale);
  sr->add_option("--ihn", sa.ihn);
  sr->add_option("--ehn", sa.ehn);
  sr->add_option("--index", sa.index);
  sr->add_option("--corpus", sa.corpus);

  // eval
  std::vector<std::string> e_gt, e_methods;
  int e_scale = 3;
  std::string e_csv, e_proposed = "proposed";
  auto* ev = app.add_subcommand("eval", "PSNR/SSIM table of saved outputs");
  ev->add_option("--ground-truth", e_gt)->required();
  ev->add_option("--method", e_methods, "label=directory")->required();
  ev->add_option("--scale,-s", e_scale);
  ev->add_option("--csv", e_csv);
  ev->add_option("--proposed", e_proposed, "Method the gain rows are measured from");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (threads) set_thread_count(static_cast<unsigned>(threads));
    if (deg->parsed()) return cli::cmd_degrade(d_in, d_out, d_scale, d_sigma);
    if (train->parsed()) return cli::cmd_train(t, out);
    if (build->parsed()) return cli::cmd_index_build(ib_corpus, ib_out, ib_words, ib_iters, ib_seed, iparams, out);
    if (query->parsed()) return cli::cmd_index_query(iq_index, iq_image, iq_k, iparams, out);
    if (sr->parsed()) return cli::cmd_sr(sa, out);
    if (ev->parsed()) return cli::cmd_eval(e_gt, e_methods, e_scale, e_csv, e_proposed, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace refsr

#endif  // REFSR_CLI_HPP_
