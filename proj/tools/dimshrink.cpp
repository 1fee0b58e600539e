// Command-line front end: preprocess, train, predict, evaluate, visualize,
// plus a phantom generator for desk-scale runs.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "dimshrink/checkpoint.hpp"
#include "dimshrink/ensemble.hpp"
#include "dimshrink/metrics.hpp"
#include "dimshrink/nifti.hpp"
#include "dimshrink/png_writer.hpp"
#include "dimshrink/synthetic.hpp"
#include "dimshrink/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dimshrink;

namespace {

constexpr const char* kManifestName = "manifest.json";

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Dims to_dims(const std::vector<int64_t>& v, const std::string& what) {
  if (v.size() != 3) throw CliError(what + " needs three comma-separated extents W,H,D");
  return {v[0], v[1], v[2]};
}

// Case file layout: <dir>/<pattern with {id} and {tag}>.nii[.gz].
struct CaseLayout {
  std::string pattern = "{id}_{tag}";

  std::string stem(const std::string& id, const std::string& tag) const {
    std::string s = pattern;
    for (auto [key, value] : {std::pair<std::string, std::string>{"{id}", id}, {"{tag}", tag}}) {
      for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key)) s.replace(pos, key.size(), value);
    }
    return s;
  }

  std::optional<fs::path> find(const fs::path& dir, const std::string& id, const std::string& tag) const {
    for (const char* ext : {".nii.gz", ".nii"}) {
      fs::path p = dir / (stem(id, tag) + ext);
      if (fs::exists(p)) return p;
    }
    return std::nullopt;
  }

  fs::path require(const fs::path& dir, const std::string& id, const std::string& tag) const {
    auto p = find(dir, id, tag);
    if (!p) throw FileMissingError("case " + id + ": no " + stem(id, tag) + ".nii[.gz] in " + dir.string());
    return *p;
  }
};

std::vector<std::string> case_ids(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CliError("not a directory: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CliError("cannot read " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw CliError(path.string() + " is not valid JSON");
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw CliError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------- preprocess

struct PreprocessArgs {
  fs::path in_dir, out_dir;
  std::vector<int64_t> crop{192, 160, 108};
  bool nonzero_norm = false;
};

int cmd_preprocess(const PreprocessArgs& a, const CaseLayout& layout) {
  const Dims target = to_dims(a.crop, "--crop");
  fs::create_directories(a.out_dir);
  // A previous manifest in the input lets a re-run keep the original grid.
  json upstream;
  if (fs::exists(a.in_dir / kManifestName)) upstream = read_json(a.in_dir / kManifestName).value("cases", json::object());

  json manifest = {{"crop", target}, {"cases", json::object()}};
  std::vector<std::string> failures;
  for (const auto& id : case_ids(a.in_dir)) {
    const fs::path src = a.in_dir / id, dst = a.out_dir / id;
    try {
      std::vector<Volume> vols;
      for (Modality m : kAllModalities) {
        Volume v = load_volume(layout.require(src, id, std::string(modality_tag(m))));
        v.modality = m;
        vols.push_back(std::move(v));
      }
      for (const auto& v : vols) {
        if (v.dims != vols.front().dims) {
          throw GeometryError("case " + id + ": modalities disagree on dims " + to_string(v.dims) + " vs " +
                              to_string(vols.front().dims));
        }
      }
      std::optional<LabelMap> labels;
      if (auto seg = layout.find(src, id, "seg")) {
        labels = load_labels(*seg);
        if (labels->dims != vols.front().dims) throw GeometryError("case " + id + ": labels do not match volumes");
      }
      Dims origin = vols.front().dims, base{0, 0, 0};
      if (upstream.contains(id)) {
        origin = upstream[id].at("origin_dims").get<Dims>();
        base = upstream[id].at("crop_offset").get<Dims>();
      }
      const Dims offset = center_crop_offset(vols.front().dims, target);
      fs::create_directories(dst);
      for (const auto& v : vols) {
        Volume out = zscore_normalize(center_crop(v, target), ZScoreOptions{a.nonzero_norm});
        save_volume(dst / (layout.stem(id, std::string(modality_tag(*v.modality))) + ".nii.gz"), out);
      }
      if (labels) save_labels(dst / (layout.stem(id, "seg") + ".nii.gz"), center_crop(*labels, target));
      Dims total{};
      for (int k = 0; k < 3; ++k) total[k] = base[k] + offset[k];
      manifest["cases"][id] = {{"origin_dims", origin}, {"crop_offset", total}, {"has_labels", labels.has_value()}};
      spdlog::info("{}: {} -> {}", id, to_string(vols.front().dims), to_string(target));
    } catch (const std::exception& e) {
      failures.push_back(id + ": " + e.what());
    }
  }
  write_text(a.out_dir / kManifestName, manifest.dump(2) + "\n");
  if (!failures.empty()) {
    std::cerr << failures.size() << " case(s) failed:\n";
    for (const auto& f : failures) std::cerr << "  " << f << "\n";
    return 1;
  }
  return 0;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
  fs::path config, data_dir, out;
  std::optional<fs::path> log, resume;
  std::vector<std::string> overrides;
};

std::vector<TrainingCase> load_training_cases(const fs::path& dir, const TrainConfig& cfg,
                                              const CaseLayout& layout) {
  std::vector<TrainingCase> cases;
  const std::string tag(modality_tag(cfg.modality));
  for (const auto& id : case_ids(dir)) {
    const fs::path cdir = dir / id;
    auto seg = layout.find(cdir, id, "seg");
    if (!seg) {
      spdlog::warn("{}: no labels, skipped for training", id);
      continue;
    }
    TrainingCase c;
    c.id = id;
    c.volume = load_volume(layout.require(cdir, id, tag));
    c.volume.modality = cfg.modality;
    c.truth = labels_to_nested(load_labels(*seg));
    cases.push_back(std::move(c));
  }
  return cases;
}

fs::path last_path(const fs::path& out) {
  fs::path p = out;
  p.replace_extension(".last" + out.extension().string());
  return p;
}

int cmd_train(const TrainArgs& a, const CaseLayout& layout, std::optional<uint64_t> seed,
              std::optional<std::string> modality) {
  std::optional<Checkpoint> resume;
  TrainConfig cfg;
  if (a.resume) {
    resume = load_checkpoint(*a.resume);
    cfg = resume->config;
  }
  if (!a.config.empty()) cfg = TrainConfig::load(a.config);
  for (const auto& o : a.overrides) cfg.apply_override(o);
  if (seed) cfg.seed = *seed;
  if (modality) cfg.modality = parse_modality(*modality);
  cfg.validate();

  const auto cases = load_training_cases(a.data_dir, cfg, layout);
  TrainOptions options;
  options.resume = std::move(resume);
  fs::path log = a.log.value_or(fs::path(a.out).replace_extension(".csv"));
  options.log_csv = log;
  options.on_epoch = [](const EpochLog& e) {
    spdlog::info("epoch {} lr {:.3g} loss {:.5f} dice wt/tc/et {:.3f}/{:.3f}/{:.3f}", e.epoch, e.lr,
                 e.loss_total, e.dice_wt, e.dice_tc, e.dice_et);
  };
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  TrainResult result = train(cfg, cases, options);
  save_checkpoint(result.best, a.out);
  save_checkpoint(result.last, last_path(a.out));
  spdlog::info("wrote {} (best) and {} (last), log {}", a.out.string(), last_path(a.out).string(), log.string());
  return 0;
}

// ------------------------------------------------------------------- predict

struct PredictArgs {
  std::vector<fs::path> checkpoints;
  fs::path case_dir, out;
  std::optional<fs::path> manifest;
};

int cmd_predict(const PredictArgs& a, const CaseLayout& layout, double threshold, bool allow_partial) {
  if (a.checkpoints.size() < kAllModalities.size() && !allow_partial) {
    throw CliError("predict needs one checkpoint per modality (4); pass --allow-partial to use " +
                   std::to_string(a.checkpoints.size()));
  }
  const std::string id = fs::path(a.case_dir).lexically_normal().filename().string().empty()
                             ? fs::path(a.case_dir).lexically_normal().parent_path().filename().string()
                             : fs::path(a.case_dir).lexically_normal().filename().string();
  const fs::path manifest_path = a.manifest.value_or(a.case_dir.parent_path() / kManifestName);
  if (!fs::exists(manifest_path)) throw CliError("missing manifest " + manifest_path.string());
  const json manifest = read_json(manifest_path);
  if (!manifest.contains("cases") || !manifest["cases"].contains(id)) {
    throw CliError("manifest " + manifest_path.string() + " has no entry for case " + id);
  }
  const Dims origin = manifest["cases"][id].at("origin_dims").get<Dims>();
  const Dims offset = manifest["cases"][id].at("crop_offset").get<Dims>();

  std::vector<std::unique_ptr<SegmentationNetwork>> nets;
  std::vector<ModalityModel> models;
  std::map<Modality, Volume> volumes;
  for (const auto& path : a.checkpoints) {
    Checkpoint ckpt = load_checkpoint(path);
    const Modality m = ckpt.config.modality;
    nets.push_back(build_network(ckpt));
    models.push_back({m, nets.back().get()});
    Volume v = load_volume(layout.require(a.case_dir, id, std::string(modality_tag(m))));
    if (v.dims != ckpt.config.crop) {
      throw CliError("checkpoint " + path.string() + " expects " + to_string(ckpt.config.crop) + " inputs, case is " +
                     to_string(v.dims));
    }
    volumes[m] = std::move(v);
  }
  const ProbabilityMap probs = ensemble_predict(models, volumes, allow_partial);
  LabelMap cropped = nested_to_labels(probs, threshold);
  cropped.geometry = volumes.begin()->second.geometry;
  const LabelMap full = uncrop(cropped, offset, origin);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  save_labels(a.out, full);
  spdlog::info("wrote {} on the {} grid", a.out.string(), to_string(origin));
  return 0;
}

// ------------------------------------------------------------------ evaluate

struct EvaluateArgs {
  fs::path pred_dir, truth_dir;
  std::optional<fs::path> csv, cases_csv, table;
};

std::string strip_nifti(const std::string& name) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    const std::string e(ext);
    if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
      return name.substr(0, name.size() - e.size());
    }
  }
  return {};
}

// Maps case id to file. Files named <id>.nii[.gz] or <id>_seg.nii[.gz],
// either directly in `dir` or one level down.
std::map<std::string, fs::path> label_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CliError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string stem = strip_nifti(e.path().filename().string());
    if (stem.empty()) continue;
    const bool seg = stem.size() > 4 && stem.compare(stem.size() - 4, 4, "_seg") == 0;
    const bool nested = e.path().parent_path() != dir;
    if (nested && !seg) continue;
    if (seg) stem.resize(stem.size() - 4);
    out[stem] = e.path();
  }
  return out;
}

int cmd_evaluate(const EvaluateArgs& a) {
  const auto preds = label_files(a.pred_dir), truths = label_files(a.truth_dir);
  std::vector<std::string> unmatched;
  for (const auto& [id, p] : preds) {
    if (!truths.count(id)) unmatched.push_back(id + " (prediction without truth)");
  }
  for (const auto& [id, p] : truths) {
    if (!preds.count(id)) unmatched.push_back(id + " (truth without prediction)");
  }
  if (!unmatched.empty()) {
    std::cerr << "unmatched case ids:\n";
    for (const auto& u : unmatched) std::cerr << "  " << u << "\n";
    return 1;
  }
  if (preds.empty()) throw CliError("no label files in " + a.pred_dir.string());
  std::vector<CaseMetrics> cases;
  for (const auto& [id, p] : preds) cases.push_back(evaluate_case(id, load_labels(p), load_labels(truths.at(id))));
  const MetricsSummary summary = aggregate(cases);
  const std::string table = render_table(summary);
  std::cout << table;
  if (a.table) write_text(*a.table, table);
  if (a.csv) write_text(*a.csv, render_summary_csv(summary));
  if (a.cases_csv) write_text(*a.cases_csv, render_cases_csv(cases));
  return 0;
}

// ----------------------------------------------------------------- visualize

struct VisualizeArgs {
  fs::path volume, out_dir;
  std::optional<fs::path> labels, checkpoint;
  std::optional<int64_t> slice;
};

int cmd_visualize(const VisualizeArgs& a) {
  const Volume vol = load_volume(a.volume);
  std::optional<LabelMap> labels;
  if (a.labels) labels = load_labels(*a.labels);
  fs::create_directories(a.out_dir);
  const std::pair<Plane, const char*> planes[] = {
      {Plane::kAxial, "axial"}, {Plane::kCoronal, "coronal"}, {Plane::kSagittal, "sagittal"}};
  for (const auto& [plane, name] : planes) {
    Image img = labels ? overlay_image(vol, *labels, plane, a.slice) : slice_image(vol, plane, a.slice);
    write_png(a.out_dir / (std::string(name) + ".png"), img);
  }
  if (a.checkpoint) {
    Checkpoint ckpt = load_checkpoint(*a.checkpoint);
    auto net = build_network(ckpt);
    Volume input = vol;
    if (input.dims != ckpt.config.crop) input = zscore_normalize(center_crop(vol, ckpt.config.crop));
    const nn::Tensor image = net->compressed_image(input);
    const int64_t h = image.dim(2), w = image.dim(3);
    const auto values = image.values();
    for (int c = 0; c < 3; ++c) {
      auto plane = values.subspan(static_cast<std::size_t>(c * h * w), static_cast<std::size_t>(h * w));
      write_png(a.out_dir / ("compressed_" + std::to_string(c) + ".png"), scaled_gray(plane, h, w));
    }
  }
  spdlog::info("images written to {}", a.out_dir.string());
  return 0;
}

// ------------------------------------------------------------------- phantom

struct PhantomArgs {
  fs::path out_dir;
  int count = 1;
  std::vector<int64_t> dims{32, 32, 12};
  bool no_labels = false;
};

int cmd_phantom(const PhantomArgs& a, uint64_t seed) {
  const Dims dims = to_dims(a.dims, "--dims");
  for (int i = 0; i < a.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "phantom_%03d", i);
    write_phantom_case(a.out_dir, id, make_phantom(seed + static_cast<uint64_t>(i), dims), !a.no_labels);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-shrinking volumetric segmentation toolkit"};
  app.require_subcommand(1);

  std::optional<uint64_t> seed;
  std::optional<std::string> modality;
  double threshold = 0.5;
  bool allow_partial = false, verbose = false;
  CaseLayout layout;
  fs::path config_path;
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--modality", modality, "Modality: t1, t1ce, t2 or flair")
      ->check(CLI::IsMember({"t1", "t1ce", "t2", "flair"}));
  app.add_option("--threshold", threshold, "Probability threshold for the label map")->check(CLI::Range(0.0, 1.0));
  app.add_flag("--allow-partial", allow_partial, "Ensemble over fewer than four modality models");
  app.add_option("--pattern", layout.pattern, "Case file stem with {id} and {tag} placeholders");
  app.add_option("--config", config_path, "JSON training config");
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  PreprocessArgs pre;
  auto* sub_pre = app.add_subcommand("preprocess", "Crop and normalize a directory of cases");
  sub_pre->add_option("--in", pre.in_dir, "Directory of case directories")->required();
  sub_pre->add_option("--out", pre.out_dir, "Output directory")->required();
  sub_pre->add_option("--crop", pre.crop, "Crop W,H,D")->delimiter(',')->expected(3);
  sub_pre->add_flag("--nonzero-norm", pre.nonzero_norm, "Normalize over nonzero voxels only");

  TrainArgs tr;
  auto* sub_train = app.add_subcommand("train", "Train one modality network");
  sub_train->add_option("--data", tr.data_dir, "Preprocessed dataset directory")->required();
  sub_train->add_option("--out", tr.out, "Checkpoint path")->required();
  sub_train->add_option("--log", tr.log, "Per-epoch CSV log (default: checkpoint path with .csv)");
  sub_train->add_option("--resume", tr.resume, "Continue from a checkpoint");
  sub_train->add_option("--set", tr.overrides, "Config override key=value (repeatable)");

  PredictArgs pr;
  auto* sub_pred = app.add_subcommand("predict", "Ensemble prediction for one preprocessed case");
  sub_pred->add_option("--checkpoint", pr.checkpoints, "Modality checkpoint (repeatable)")->required();
  sub_pred->add_option("--case", pr.case_dir, "Preprocessed case directory")->required();
  sub_pred->add_option("--manifest", pr.manifest, "Dataset manifest (default: next to the case)");
  sub_pred->add_option("--out", pr.out, "Output label file")->required();

  EvaluateArgs ev;
  auto* sub_eval = app.add_subcommand("evaluate", "Dice report over matched cases");
  sub_eval->add_option("--pred", ev.pred_dir, "Directory of predicted label files")->required();
  sub_eval->add_option("--truth", ev.truth_dir, "Directory of ground-truth label files")->required();
  sub_eval->add_option("--csv", ev.csv, "Summary CSV");
  sub_eval->add_option("--cases-csv", ev.cases_csv, "Per-case CSV");
  sub_eval->add_option("--table", ev.table, "Copy of the text table");

  VisualizeArgs vi;
  auto* sub_vis = app.add_subcommand("visualize", "Tri-planar views and compressed channels");
  sub_vis->add_option("--volume", vi.volume, "Volume file")->required();
  sub_vis->add_option("--labels", vi.labels, "Label file to overlay");
  sub_vis->add_option("--checkpoint", vi.checkpoint, "Checkpoint whose encoder output to show");
  sub_vis->add_option("--slice", vi.slice, "Slice index (default: center)");
  sub_vis->add_option("--out", vi.out_dir, "Output directory")->required();

  PhantomArgs ph;
  auto* sub_ph = app.add_subcommand("phantom", "Write synthetic cases");
  sub_ph->add_option("--out", ph.out_dir, "Output directory")->required();
  sub_ph->add_option("--count", ph.count, "Number of cases")->check(CLI::PositiveNumber);
  sub_ph->add_option("--dims", ph.dims, "Extents W,H,D")->delimiter(',')->expected(3);
  sub_ph->add_flag("--no-labels", ph.no_labels, "Omit the label file");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_pattern("[%l] %v");

  try {
    if (*sub_pre) {
      if (!config_path.empty()) {
        const Dims c = TrainConfig::load(config_path).crop;
        pre.crop = {c[0], c[1], c[2]};
      }
      return cmd_preprocess(pre, layout);
    }
    if (*sub_train) {
      tr.config = config_path;
      return cmd_train(tr, layout, seed, modality);
    }
    if (*sub_pred) return cmd_predict(pr, layout, threshold, allow_partial);
    if (*sub_eval) return cmd_evaluate(ev);
    if (*sub_vis) return cmd_visualize(vi);
    if (*sub_ph) return cmd_phantom(ph, seed.value_or(0));
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
