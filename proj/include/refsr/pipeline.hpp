#ifndef REFSR_PIPELINE_HPP_
#define REFSR_PIPELINE_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "refsr/error.hpp"
#include "refsr/features.hpp"
#include "refsr/homography.hpp"
#include "refsr/image.hpp"
#include "refsr/image_io.hpp"
#include "refsr/match_fuse.hpp"
#include "refsr/metrics.hpp"
#include "refsr/network.hpp"
#include "refsr/parallel.hpp"
#include "refsr/retrieval.hpp"
#include "refsr/seed.hpp"
#include "refsr/training.hpp"

namespace refsr {

struct RegistrationParams {
  int max_keypoints = 500;
  double ratio = 0.8;
  int min_inliers = 10;
  double min_valid_fraction = 0.25;
  DetectorParams detector{};
};

struct RunConfig {
  int scale = 3;
  std::filesystem::path ihn_path;
  std::filesystem::path ehn_path;
  std::filesystem::path index_path;
  std::filesystem::path corpus_dir;  // resolves relative index paths
  std::filesystem::path output_dir;
  int top_k = 4;
  MatchParams match{};
  RansacParams ransac{};
  RegistrationParams registration{};
  IndexParams index{};
  double blur_sigma = -1.0;  // < 0 selects the scale-dependent default
  std::uint64_t seed = 0;
  unsigned threads = 0;

  double sigma() const { return blur_sigma >= 0.0 ? blur_sigma : default_blur_sigma(ScaleFactor(scale)); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (!is || !(is >> std::ws).eof()) throw InvalidArgument("config: bad value for '" + key + "': " + v);
  return out;
}

}  // namespace detail

// Applies one key=value setting. Unknown keys are errors.
inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_number;
  if (key == "scale") cfg.scale = parse_number<int>(key, value);
  else if (key == "ihn") cfg.ihn_path = value;
  else if (key == "ehn") cfg.ehn_path = value;
  else if (key == "index") cfg.index_path = value;
  else if (key == "corpus") cfg.corpus_dir = value;
  else if (key == "output") cfg.output_dir = value;
  else if (key == "top_k") cfg.top_k = parse_number<int>(key, value);
  else if (key == "rho") cfg.match.rho = parse_number<double>(key, value);
  else if (key == "reject_gmse") cfg.match.reject_gmse = parse_number<double>(key, value);
  else if (key == "query_stride") cfg.match.query_stride = parse_number<int>(key, value);
  else if (key == "weight_scale") cfg.match.weight_scale = parse_number<double>(key, value);
  else if (key == "ransac_inlier_px") cfg.ransac.inlier_px = parse_number<double>(key, value);
  else if (key == "ransac_iterations") cfg.ransac.iterations = parse_number<int>(key, value);
  else if (key == "min_inliers") cfg.registration.min_inliers = parse_number<int>(key, value);
  else if (key == "match_ratio") cfg.registration.ratio = parse_number<double>(key, value);
  else if (key == "max_keypoints") {
    cfg.registration.max_keypoints = parse_number<int>(key, value);
    cfg.index.max_keypoints = cfg.registration.max_keypoints;
  } else if (key == "min_valid_fraction") cfg.registration.min_valid_fraction = parse_number<double>(key, value);
  else if (key == "blur_sigma") cfg.blur_sigma = parse_number<double>(key, value);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "threads") cfg.threads = parse_number<unsigned>(key, value);
  else throw InvalidArgument("config: unknown key '" + key + "'");
}

inline void validate(const RunConfig& cfg) {
  (void)ScaleFactor(cfg.scale);
  if (cfg.top_k < 0) throw InvalidArgument("top_k must be >= 0");
  validate(cfg.match);
  if (cfg.registration.min_inliers < 4) throw InvalidArgument("min_inliers must be >= 4");
}

// Flat key=value text; '#' starts a comment. Relative paths are taken
// relative to the file's directory.
inline RunConfig parse_config(std::istream& is, const std::filesystem::path& base = {}) {
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key=value");
    apply_setting(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  if (!base.empty())
    for (auto* p : {&cfg.ihn_path, &cfg.ehn_path, &cfg.index_path, &cfg.corpus_dir, &cfg.output_dir})
      if (!p->empty() && p->is_relative()) *p = base / *p;
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  return parse_config(is, path.parent_path());
}

// ---------------------------------------------------------------------------

struct Models {
  NetworkParams<float> ihn;
  std::optional<NetworkParams<float>> ehn;
  std::optional<InvertedIndex> index;
};

inline Models load_models(const RunConfig& cfg) {
  Models m;
  if (cfg.ihn_path.empty()) throw InvalidArgument("no IHN weights configured");
  m.ihn = load_params(cfg.ihn_path);
  require_tag(m.ihn, NetworkTag::ihn, 2);
  if (cfg.top_k > 0) {
    if (cfg.ehn_path.empty() || cfg.index_path.empty())
      throw InvalidArgument("top_k > 0 needs EHN weights and an index");
    m.ehn = load_params(cfg.ehn_path);
    require_tag(*m.ehn, NetworkTag::ehn, 1);
    m.index = InvertedIndex::load(cfg.index_path);
  }
  return m;
}

struct ReferenceRecord {
  RefId id = 0;
  std::string path;
  double score = 0.0;
  bool survived = false;
  std::string reason;  // why it was dropped
  int descriptor_matches = 0;
  int inliers = 0;
  std::optional<Homography> homography;
  double valid_fraction = 0.0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

struct ManifestEntry {
  std::string image;
  int scale = 0;
  std::vector<ReferenceRecord> references;
  std::size_t survivors = 0;
  std::size_t dropped = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t no_match = 0;
  double empty_fraction = 1.0;
  std::optional<double> psnr_intermediate, psnr_output, ssim_intermediate, ssim_output;
};

// A reference resampled onto the target grid.
struct AlignedReference {
  RefId id = 0;
  ImagePlane image;
  std::vector<bool> valid;
};

struct SrResult {
  ImagePlane output;        // I^h
  ImagePlane intermediate;  // I_t
  MatchSet matches;
  ManifestEntry manifest;
};

inline std::filesystem::path resolve_reference(const RunConfig& cfg, const std::string& stored) {
  std::filesystem::path p(stored);
  if (p.is_relative() && !cfg.corpus_dir.empty()) return cfg.corpus_dir / p;
  return p;
}

// Registers `ref_hr` to the intermediate image: features of the bicubic
// re-upsampled reference against the intermediate, RANSAC, then an inverse
// warp of the full-resolution reference. Throws on failure.
inline AlignedReference align_reference(const RunConfig& cfg, const ImagePlane& intermediate,
                                        const std::vector<Feature>& target_features, const ImagePlane& ref_hr,
                                        RefId id, ReferenceRecord& rec) {
  const ScaleFactor s(cfg.scale);
  const ImagePlane ref = crop_to_multiple(ref_hr, s);
  const ImagePlane ref_up = upsample_bicubic(degrade(ref, s, cfg.sigma()), s);
  const auto& reg = cfg.registration;
  const auto ref_features = extract_features(ref_up, reg.max_keypoints, reg.detector);
  const auto matches = match_descriptors(descriptors_of(ref_features), descriptors_of(target_features), reg.ratio);
  rec.descriptor_matches = static_cast<int>(matches.size());
  if (static_cast<int>(matches.size()) < reg.min_inliers)
    throw EstimationError("too few descriptor matches (" + std::to_string(matches.size()) + ")");
  const auto corrs = to_correspondences(ref_features, target_features, matches);
  RansacParams rp = cfg.ransac;
  rp.seed = derive_seed(cfg.seed ^ cfg.ransac.seed, id);
  const auto fit = ransac_homography(corrs, rp);
  rec.inliers = fit.inlier_count;
  if (fit.inlier_count < reg.min_inliers)
    throw EstimationError("too few RANSAC inliers (" + std::to_string(fit.inlier_count) + ")");
  rec.homography = fit.h;
  auto warped = warp_to(ref, fit.h, intermediate.width(), intermediate.height());
  const auto n_valid = std::count(warped.valid.begin(), warped.valid.end(), true);
  rec.valid_fraction = static_cast<double>(n_valid) / static_cast<double>(warped.valid.size());
  if (rec.valid_fraction < reg.min_valid_fraction) throw EstimationError("aligned reference barely overlaps the target");
  return {id, std::move(warped.image), std::move(warped.valid)};
}

struct PreparedReference {
  RefId id = 0;
  ImagePlane transferred;  // photometrically matched reference intermediate
  ImagePlane ehf;          // external HF map
  ValidityMask mask;
};

inline PreparedReference prepare_reference(const Models& models, const RunConfig& cfg, const ImagePlane& intermediate,
                                           const AlignedReference& aligned) {
  require_same_size(intermediate, aligned.image, "prepare_reference");
  if (!models.ehn) throw InvalidArgument("no EHN loaded");
  const ScaleFactor s(cfg.scale);
  const ImagePlane ref_int = reference_intermediate(models.ihn, aligned.image, s, cfg.sigma());
  const std::vector<bool>* mask = aligned.valid.empty() ? nullptr : &aligned.valid;
  PreparedReference p;
  p.id = aligned.id;
  p.transferred = photometric_transfer(ref_int, intermediate, mask);
  p.ehf = ehn_extract(*models.ehn, aligned.image, ref_int);
  if (mask) p.mask = ValidityMask(aligned.image.width(), aligned.image.height(), aligned.valid);
  return p;
}

// Matching, fusion and compensation against already aligned references.
// References that fail preparation are dropped and recorded.
inline SrResult compensate_with(const Models& models, const RunConfig& cfg, ImagePlane intermediate,
                                std::span<const AlignedReference> aligned, ManifestEntry manifest) {
  std::vector<PreparedReference> prepared;
  for (const auto& a : aligned) {
    auto rec = std::find_if(manifest.references.begin(), manifest.references.end(),
                            [&](const auto& r) { return r.id == a.id; });
    if (rec == manifest.references.end()) {
      manifest.references.push_back({});
      rec = std::prev(manifest.references.end());
      rec->id = a.id;
    }
    try {
      prepared.push_back(prepare_reference(models, cfg, intermediate, a));
      rec->survived = true;
    } catch (const Error& e) {
      rec->survived = false;
      rec->reason = e.what();
    }
  }
  SrResult r;
  manifest.survivors = static_cast<std::size_t>(
      std::count_if(manifest.references.begin(), manifest.references.end(), [](const auto& x) { return x.survived; }));
  manifest.dropped = manifest.references.size() - manifest.survivors;
  if (prepared.empty()) {
    manifest.empty_fraction = 1.0;
    r.output = intermediate;
    r.intermediate = std::move(intermediate);
    r.manifest = std::move(manifest);
    return r;
  }
  std::vector<MatchReference> mrefs;
  std::vector<FuseSource> sources;
  for (const auto& p : prepared) {
    mrefs.push_back({p.id, &p.transferred, p.mask.empty() ? nullptr : &p.mask});
    sources.push_back({p.id, &p.ehf});
  }
  r.matches = match_image(intermediate, mrefs, cfg.match);
  const auto fused = fuse_detailed(r.matches, sources, intermediate.width(), intermediate.height(), cfg.match.weight_scale);
  r.output = compensate(intermediate, fused.fused);
  manifest.accepted = r.matches.accepted();
  manifest.rejected = r.matches.rejected();
  manifest.no_match = r.matches.no_match;
  manifest.empty_fraction = fused.empty_fraction();
  for (auto& rec : manifest.references) {
    if (!rec.survived) continue;
    for (const auto& m : r.matches.matches)
      if (m.ref_id == rec.id) ++(m.accepted ? rec.accepted : rec.rejected);
  }
  r.intermediate = std::move(intermediate);
  r.manifest = std::move(manifest);
  return r;
}

// Full luma pipeline: intermediate, retrieval, registration, transfer,
// matching, extraction, fusion, compensation. Failed references are
// dropped; with none left (or top_k = 0) the output is the intermediate.
inline SrResult super_resolve(const Models& models, const RunConfig& cfg, const ImagePlane& lr,
                              const std::string& name = {}) {
  validate(cfg);
  const ScaleFactor s(cfg.scale);
  ManifestEntry manifest;
  manifest.image = name;
  manifest.scale = cfg.scale;
  ImagePlane it = intermediate_image(models.ihn, lr, s);
  if (cfg.top_k == 0) {
    SrResult r;
    r.output = it;
    r.intermediate = std::move(it);
    r.manifest = std::move(manifest);
    return r;
  }
  if (!models.index) throw InvalidArgument("top_k > 0 needs a loaded index");
  const auto hits = models.index->query_topk(it, cfg.top_k, cfg.index);
  std::vector<AlignedReference> aligned;
  std::vector<Feature> target_features;
  bool have_target_features = false;
  for (const auto& hit : hits) {
    ReferenceRecord rec;
    rec.id = hit.id;
    rec.path = models.index->path_of(hit.id);
    rec.score = hit.score;
    try {
      if (!have_target_features) {
        target_features = extract_features(it, cfg.registration.max_keypoints, cfg.registration.detector);
        have_target_features = true;
      }
      const ImagePlane ref = read_luma(resolve_reference(cfg, rec.path));
      aligned.push_back(align_reference(cfg, it, target_features, ref, hit.id, rec));
      rec.survived = true;
    } catch (const Error& e) {
      rec.reason = e.what();
    }
    manifest.references.push_back(std::move(rec));
  }
  return compensate_with(models, cfg, std::move(it), aligned, std::move(manifest));
}

// Luma through the pipeline, chroma upsampled bicubically.
inline std::pair<ColorImage, SrResult> super_resolve_color(const Models& models, const RunConfig& cfg,
                                                           const ColorImage& lr_rgb, const std::string& name = {}) {
  const ColorImage ycc = lr_rgb.space == ColorSpace::ycbcr ? lr_rgb : to_luma_chroma(lr_rgb);
  SrResult r = super_resolve(models, cfg, ycc.planes[0], name);
  ColorImage out;
  out.space = ColorSpace::ycbcr;
  out.planes[0] = clamp01(r.output);
  for (int c = 1; c < 3; ++c) out.planes[c] = upsample_bicubic(ycc.planes[c], ScaleFactor(cfg.scale));
  return {to_rgb(out), std::move(r)};
}

inline void record_metrics(ManifestEntry& m, const SrResult& r, const ImagePlane& ground_truth) {
  const ImagePlane gt = crop_to_multiple(ground_truth, ScaleFactor(m.scale ? m.scale : 2));
  if (!gt.same_size(r.output)) throw DimensionError("ground truth does not match the output size");
  m.psnr_intermediate = psnr(clamp01(r.intermediate), gt);
  m.psnr_output = psnr(clamp01(r.output), gt);
  m.ssim_intermediate = ssim(clamp01(r.intermediate), gt);
  m.ssim_output = ssim(clamp01(r.output), gt);
}

// ---------------------------------------------------------------------------
// Manifest

inline nlohmann::ordered_json to_json(const ManifestEntry& m) {
  nlohmann::ordered_json j;
  j["image"] = m.image;
  j["scale"] = m.scale;
  j["retrieved"] = m.references.size();
  j["survivors"] = m.survivors;
  j["dropped"] = m.dropped;
  auto refs = nlohmann::ordered_json::array();
  for (const auto& r : m.references) {
    nlohmann::ordered_json e;
    e["id"] = r.id;
    e["path"] = r.path;
    e["score"] = r.score;
    e["aligned"] = r.survived;
    if (!r.reason.empty()) e["reason"] = r.reason;
    e["descriptor_matches"] = r.descriptor_matches;
    e["inliers"] = r.inliers;
    if (r.homography) e["homography"] = r.homography->values();
    e["valid_fraction"] = r.valid_fraction;
    e["accepted_matches"] = r.accepted;
    e["rejected_matches"] = r.rejected;
    refs.push_back(std::move(e));
  }
  j["references"] = std::move(refs);
  j["matches"] = {{"accepted", m.accepted}, {"rejected", m.rejected}, {"no_match", m.no_match}};
  j["uncompensated_fraction"] = m.empty_fraction;
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) metrics[k] = std::isinf(*v) ? nlohmann::ordered_json("inf") : nlohmann::ordered_json(*v);
  };
  put("psnr_intermediate", m.psnr_intermediate);
  put("psnr_output", m.psnr_output);
  put("ssim_intermediate", m.ssim_intermediate);
  put("ssim_output", m.ssim_output);
  if (!metrics.empty()) j["metrics"] = std::move(metrics);
  return j;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries,
                           std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["images"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) j["images"].push_back(to_json(e));
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace refsr

#endif  // REFSR_PIPELINE_HPP_
