// Command-line front end: file-based, deterministic runs of the synthetic
// lacune pipeline. Subcommands: synth | preprocess | train | infer | eval |
// crossval | gradcheck. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 numerical failure.
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lacuna/nifti.hpp"
#include "lacuna/phantom.hpp"
#include "lacuna/pipeline.hpp"
#include "lacuna/refcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lacuna;

namespace {

constexpr const char* kToolVersion = "1.0.0";

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
      return 2;
    case ErrorCode::DivergedLoss:
    case ErrorCode::IllConditionedFit:
    case ErrorCode::DegenerateIntensities:
    case ErrorCode::ZeroMedian:
    case ErrorCode::ZeroVariance:
      return 4;
    default:
      return 3;
  }
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, path + ": " + e.what());
  }
}

void atomic_write(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

struct Timer {
  std::vector<std::pair<std::string, double>> steps;

  template <class F>
  auto run(const std::string& name, F&& fn) {
    auto start = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      steps.push_back({name, std::chrono::duration<double>(
                                 std::chrono::steady_clock::now() - start)
                                 .count()});
    } else {
      auto out = fn();
      steps.push_back({name, std::chrono::duration<double>(
                                 std::chrono::steady_clock::now() - start)
                                 .count()});
      return out;
    }
  }
};

struct RunContext {
  std::string command;
  json config;  // effective, after overrides
  fs::path out_dir;
  uint64_t seed = 0;
  int threads = 1;
  Timer timer;
  std::vector<std::string> outputs;

  void add_output(const fs::path& p) { outputs.push_back(p.string()); }

  void write_manifest() {
    json m;
    m["tool_version"] = kToolVersion;
    m["command"] = command;
    m["config"] = config;
    m["config_hash"] = hex64(fnv1a(config.dump()));
    m["seed"] = seed;
    m["out_dir"] = out_dir.string();
    m["threads"] = threads;
    json timings = json::object();
    for (auto& [name, sec] : timer.steps) timings[name] = sec;
    m["timings"] = timings;
    m["outputs"] = outputs;
    atomic_write(out_dir / "manifest.json", m.dump(2) + "\n");
  }
};

// --- config decoding -------------------------------------------------------

template <class T>
T field(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, "config field " + key + ": " + e.what());
  }
}

PhantomConfig phantom_from_json(const json& cfg) {
  json p = field(cfg, "phantom", json::object());
  PhantomConfig out;
  out.dims = field(p, "dims", std::array<int, 3>{32, 32, 32});
  out.spacing = field(p, "spacing", std::array<double, 3>{1.0, 1.0, 1.0});
  out.lacune_count_range = field(p, "lacune_count_range", std::array<int, 2>{0, 4});
  out.lacune_diameter_range_mm =
      field(p, "lacune_diameter_range_mm", std::array<double, 2>{3.0, 6.5});
  out.mimic_count_range = field(p, "mimic_count_range", std::array<int, 2>{0, 2});
  out.mimic_diameter_range_mm =
      field(p, "mimic_diameter_range_mm", std::array<double, 2>{1.0, 2.5});
  out.noise_sigma = field(p, "noise_sigma", 0.05);
  out.bias_amplitude = field(p, "bias_amplitude", 0.3);
  out.validate();
  return out;
}

TrainRun train_from_json(const json& cfg) {
  json t = field(cfg, "train", json::object());
  TrainRun run;
  run.patch_size = field(t, "patch_size", 32);
  run.stage1_patch_size = field(t, "stage1_patch_size", 0);
  run.stage1_epochs = field(t, "stage1_epochs", 0);
  run.patches_per_epoch = field(t, "patches_per_epoch", 32);
  run.epochs = field(t, "epochs", 8);
  run.pos_fraction = field(t, "pos_fraction", 0.5);
  run.augment = field(t, "augment", true);
  run.adam.lr = field(t, "lr", 1e-3);
  run.loss.w_fn = field(t, "w_fn", 10.0);
  run.loss.lambda_burden = field(t, "lambda_burden", 1.0);
  run.stage1_loss = field(t, "stage1_loss", std::string("fnw"));
  run.unet_depth = field(t, "unet_depth", 3);
  run.unet_base_channels = field(t, "unet_base_channels", 4);
  run.loss.validate();
  return run;
}

PostprocessConfig post_from_json(const json& cfg) {
  json p = field(cfg, "postprocess", json::object());
  PostprocessConfig out;
  out.threshold = field(p, "threshold", 0.5);
  out.min_component_voxels = field(p, "min_component_voxels", static_cast<size_t>(5));
  out.connectivity = field(p, "connectivity", 26);
  return out;
}

struct CohortPlanEntry {
  std::string id;
  uint64_t seed = 0;
  PhantomConfig phantom;
};

std::vector<CohortPlanEntry> cohort_plan(const json& cfg, uint64_t master_seed) {
  json c = field(cfg, "cohort", json::object());
  auto counts = field(c, "counts_per_category", std::array<int, 3>{20, 20, 20});
  auto ranges = field(c, "category_count_ranges",
                      std::array<std::array<int, 2>, 3>{{{0, 0}, {1, 3}, {4, 6}}});
  PhantomConfig base = phantom_from_json(cfg);

  std::vector<CohortPlanEntry> plan;
  int index = 0;
  for (int cat = 0; cat < 3; ++cat)
    for (int i = 0; i < counts[static_cast<size_t>(cat)]; ++i, ++index) {
      CohortPlanEntry e;
      char buf[16];
      std::snprintf(buf, sizeof(buf), "s%03d", index);
      e.id = buf;
      e.seed = Rng::split(master_seed, static_cast<uint64_t>(index));
      e.phantom = base;
      e.phantom.lacune_count_range = ranges[static_cast<size_t>(cat)];
      e.phantom.seed = e.seed;
      plan.push_back(std::move(e));
    }
  if (plan.empty()) throw Error(ErrorCode::ConfigError, "cohort is empty");
  return plan;
}

// --- phantom directory I/O -------------------------------------------------

void save_sample(const PhantomSample& s, const CohortPlanEntry& e, const fs::path& dir,
                 RunContext& ctx) {
  auto put = [&](const Volume3D& v, const std::string& suffix) {
    fs::path p = dir / (e.id + "_" + suffix + ".nii");
    write_nifti_file(v, p.string());
    ctx.add_output(p);
  };
  put(s.t1, "t1");
  put(s.flair, "flair");
  put(s.lacune_mask, "lacunes");
  put(s.region_atlas, "atlas");
  put(s.masks.brain, "brain_mask");
  put(s.masks.csf, "csf_mask");

  json side;
  side["id"] = e.id;
  side["seed"] = e.seed;
  side["true_count"] = s.true_count;
  side["true_category"] = burden_name(s.true_category);
  fs::path sp = dir / (e.id + ".json");
  atomic_write(sp, side.dump(2) + "\n");
  ctx.add_output(sp);
}

struct LoadedSample {
  PhantomSample sample;
  std::string id;
};

LoadedSample load_sample(const fs::path& dir, const std::string& id) {
  auto get = [&](const std::string& suffix) {
    return read_nifti_file((dir / (id + "_" + suffix + ".nii")).string());
  };
  LoadedSample out;
  out.id = id;
  out.sample.t1 = get("t1");
  out.sample.flair = get("flair");
  out.sample.lacune_mask = get("lacunes");
  out.sample.region_atlas = get("atlas");
  out.sample.masks.brain = get("brain_mask");
  out.sample.masks.csf = get("csf_mask");
  json side = load_json((dir / (id + ".json")).string());
  out.sample.true_count = side.at("true_count").get<int>();
  out.sample.true_category = burden_from_name(side.at("true_category").get<std::string>());
  return out;
}

std::vector<std::string> cohort_ids(const fs::path& dir) {
  json c = load_json((dir / "cohort.json").string());
  std::vector<std::string> ids;
  for (const auto& s : c.at("samples")) ids.push_back(s.at("id").get<std::string>());
  if (ids.empty()) throw Error(ErrorCode::ConfigError, "cohort.json lists no samples");
  return ids;
}

// --- PGM montage -----------------------------------------------------------

void write_montage(const fs::path& path, const Volume3D& base, const Volume3D& pred,
                   const Volume3D* gt) {
  const int nx = base.dims[0], ny = base.dims[1], nz = base.dims[2];
  const Volume3D& rank_src = gt ? *gt : pred;
  std::vector<std::pair<long, int>> by_count;  // (-voxels, z) for stable top-3
  for (int z = 0; z < nz; ++z) {
    long count = 0;
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x)
        if (rank_src.at(x, y, z) != 0.0f) count++;
    by_count.push_back({-count, z});
  }
  std::sort(by_count.begin(), by_count.end());
  std::vector<int> slices = {by_count[0].second,
                             nz > 1 ? by_count[1].second : by_count[0].second,
                             nz > 2 ? by_count[2].second : by_count[0].second};
  std::sort(slices.begin(), slices.end());

  const int width = 3 * nx + 2;  // 1-pixel separators
  std::vector<uint8_t> pixels(static_cast<size_t>(width) * ny, 255);
  for (int s = 0; s < 3; ++s) {
    int z = slices[static_cast<size_t>(s)];
    int x_off = s * (nx + 1);
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        // z-scored background compressed to [0,120]; overlays above it
        double v = (base.at(x, y, z) + 2.5) / 5.0;
        uint8_t g = static_cast<uint8_t>(std::clamp(v, 0.0, 1.0) * 120.0);
        bool p = pred.at(x, y, z) != 0.0f;
        bool t = gt && gt->at(x, y, z) != 0.0f;
        if (p && t)
          g = 230;
        else if (p)
          g = 200;
        else if (t)
          g = 255;
        pixels[static_cast<size_t>(y) * width + x_off + x] = g;
      }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "P5\n" << width << " " << ny << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

// --- shared crossval plumbing ----------------------------------------------

json outcome_to_json(const ScanOutcome& o) {
  json j;
  j["id"] = o.id;
  j["fold"] = o.fold;
  j["detected"] = o.detected;
  j["total"] = o.total;
  j["fp_count"] = o.fp_count;
  if (o.sensitivity)
    j["sensitivity"] = *o.sensitivity;
  else
    j["sensitivity"] = nullptr;
  j["true_category"] = burden_name(o.true_category);
  j["predicted_category"] = burden_name(o.predicted_category);
  return j;
}

json crossval_to_json(const CrossvalResult& r) {
  json j;
  j["scans"] = json::array();
  for (const auto& o : r.scans) j["scans"].push_back(outcome_to_json(o));
  j["sensitivity_mean"] = r.sensitivity_mean;
  j["sensitivity_sd"] = r.sensitivity_sd;
  j["fold_mean_sensitivity"] = r.fold_mean_sensitivity;
  j["confusion"] = r.confusion;
  j["bca"] = r.bca_value;
  j["accuracy"] = r.accuracy;
  return j;
}

void write_confusion_csv(const fs::path& path, const Confusion3& m) {
  std::string csv = "true\\pred,0,1-3,>3\n";
  const char* names[3] = {"0", "1-3", ">3"};
  for (int r = 0; r < 3; ++r) {
    csv += names[r];
    for (int c = 0; c < 3; ++c) csv += "," + std::to_string(m[r][c]);
    csv += "\n";
  }
  atomic_write(path, csv);
}

// --- subcommands -----------------------------------------------------------

void cmd_synth(RunContext& ctx) {
  auto plan = cohort_plan(ctx.config, ctx.seed);
  json cohort;
  cohort["samples"] = json::array();
  ctx.timer.run("synth", [&] {
    for (const auto& e : plan) {
      PhantomSample s = generate_phantom(e.phantom);
      save_sample(s, e, ctx.out_dir, ctx);
      cohort["samples"].push_back({{"id", e.id},
                                   {"seed", e.seed},
                                   {"true_count", s.true_count},
                                   {"true_category", burden_name(s.true_category)}});
    }
  });
  fs::path cp = ctx.out_dir / "cohort.json";
  atomic_write(cp, cohort.dump(2) + "\n");
  ctx.add_output(cp);
}

void cmd_preprocess(RunContext& ctx) {
  fs::path in_dir = field(ctx.config, "in_dir", std::string());
  if (in_dir.empty()) throw Error(ErrorCode::ConfigError, "preprocess requires in_dir");
  PreprocessConfig pp;
  pp.bias_order = field(field(ctx.config, "preprocess", json::object()), "bias_order", 2);

  for (const auto& id : cohort_ids(in_dir)) {
    ctx.timer.run(id, [&] {
      LoadedSample loaded = load_sample(in_dir, id);
      PreparedScan scan = prepare_scan(loaded.sample, pp);
      const char* suffix[3] = {"t1n", "flairn", "diff"};
      for (int c = 0; c < 3; ++c) {
        fs::path p = ctx.out_dir / (id + "_" + suffix[c] + ".nii");
        write_nifti_file(scan.stage1_channels[static_cast<size_t>(c)], p.string());
        ctx.add_output(p);
      }
    });
  }
}

void cmd_train(RunContext& ctx) {
  fs::path in_dir = field(ctx.config, "in_dir", std::string());
  if (in_dir.empty()) throw Error(ErrorCode::ConfigError, "train requires in_dir");
  PreprocessConfig pp;
  pp.bias_order = field(field(ctx.config, "preprocess", json::object()), "bias_order", 2);
  TrainRun run = train_from_json(ctx.config);
  run.seed = ctx.seed;

  std::vector<PreparedScan> cohort;
  LabelVolume atlas;
  ctx.timer.run("load", [&] {
    for (const auto& id : cohort_ids(in_dir)) {
      LoadedSample loaded = load_sample(in_dir, id);
      if (cohort.empty()) atlas = loaded.sample.region_atlas;
      PreparedScan scan = prepare_scan(loaded.sample, pp);
      scan.id = id;
      cohort.push_back(std::move(scan));
    }
  });

  std::vector<const Volume3D*> annotations;
  for (const auto& s : cohort) annotations.push_back(&s.lacune_mask);
  LocationPrior prior = build_location_prior(atlas, annotations);

  TrainResult s1 = ctx.timer.run("train_stage1", [&] { return train_stage(1, cohort, run); });
  ctx.timer.run("stage1_inference", [&] {
    for (auto& s : cohort) {
      s.prior_channel = prior.channel;
      s.stage1_prob = infer_dense(s1.unet, s1.params, stage1_channels(s), s1.patch_size);
    }
  });
  TrainResult s2 = ctx.timer.run("train_stage2", [&] { return train_stage(2, cohort, run); });

  nn::save_checkpoint(s1.params, run.epochs * run.patches_per_epoch,
                      (ctx.out_dir / "stage1").string());
  nn::save_checkpoint(s2.params, run.epochs * run.patches_per_epoch,
                      (ctx.out_dir / "stage2").string());
  for (const char* n : {"stage1.json", "stage1.bin", "stage2.json", "stage2.bin"})
    ctx.add_output(ctx.out_dir / n);

  json model;
  model["patch_size"] = s2.patch_size;
  model["stage1_patch_size"] = s1.patch_size;
  model["unet_depth"] = run.unet_depth;
  model["unet_base_channels"] = run.unet_base_channels;
  model["stage1_loss"] = run.stage1_loss;
  model["w_fn"] = run.loss.w_fn;
  model["lambda_burden"] = run.loss.lambda_burden;
  json rp = json::object();
  for (auto& [region, p] : prior.region_prior) rp[std::to_string(region)] = p;
  model["region_prior"] = rp;
  model["epoch_loss_stage1"] = s1.epoch_loss;
  model["epoch_loss_stage2"] = s2.epoch_loss;
  fs::path mp = ctx.out_dir / "model.json";
  atomic_write(mp, model.dump(2) + "\n");
  ctx.add_output(mp);
}

struct InferInputs {
  std::string t1, flair, brain_mask, csf_mask, atlas, gt;
  std::string model_dir, phantom_dir, id;
};

TrainResult load_model_stage(const json& model, const fs::path& dir, int stage) {
  TrainResult r;
  r.unet.depth = model.at("unet_depth").get<int>();
  r.unet.base_channels = model.at("unet_base_channels").get<int>();
  r.unet.in_channels = stage == 1 ? 3 : 4;
  r.unet.classifier_head = stage == 2;
  r.patch_size = stage == 1 && model.contains("stage1_patch_size")
                     ? model.at("stage1_patch_size").get<int>()
                     : model.at("patch_size").get<int>();
  Rng rng(0);
  r.params = nn::unet_init(r.unet, rng);
  nn::load_checkpoint(r.params, (dir / ("stage" + std::to_string(stage))).string());
  return r;
}

void cmd_infer(RunContext& ctx, const InferInputs& in) {
  std::string model_dir = !in.model_dir.empty()
                              ? in.model_dir
                              : field(ctx.config, "model_dir", std::string());
  if (model_dir.empty()) throw Error(ErrorCode::ConfigError, "infer requires --model-dir");
  json model = load_json((fs::path(model_dir) / "model.json").string());

  PhantomSample sample;
  std::string id = in.id.empty() ? "scan" : in.id;
  bool have_gt = false;
  if (!in.phantom_dir.empty()) {
    if (in.id.empty()) throw Error(ErrorCode::ConfigError, "--phantom-dir requires --id");
    LoadedSample loaded = load_sample(in.phantom_dir, in.id);
    sample = std::move(loaded.sample);
    have_gt = true;
  } else {
    if (in.t1.empty() || in.flair.empty() || in.brain_mask.empty() || in.csf_mask.empty() ||
        in.atlas.empty())
      throw Error(ErrorCode::ConfigError,
                  "infer requires --t1 --flair --brain-mask --csf-mask --atlas or --phantom-dir");
    sample.t1 = read_nifti_file(in.t1);
    sample.flair = read_nifti_file(in.flair);
    sample.masks.brain = read_nifti_file(in.brain_mask);
    sample.masks.csf = read_nifti_file(in.csf_mask);
    sample.region_atlas = read_nifti_file(in.atlas);
    if (!in.gt.empty()) {
      sample.lacune_mask = read_nifti_file(in.gt);
      have_gt = true;
    } else {
      sample.lacune_mask = sample.masks.brain;
      std::fill(sample.lacune_mask.data.begin(), sample.lacune_mask.data.end(), 0.0f);
    }
  }

  PreprocessConfig pp;
  pp.bias_order = field(field(ctx.config, "preprocess", json::object()), "bias_order", 2);
  PreparedScan scan = ctx.timer.run("preprocess", [&] { return prepare_scan(sample, pp); });
  scan.id = id;

  scan.prior_channel = sample.region_atlas;
  const json& rp = model.at("region_prior");
  for (size_t i = 0; i < scan.prior_channel.data.size(); ++i) {
    int r = static_cast<int>(sample.region_atlas.data[i]);
    scan.prior_channel.data[i] =
        r == 0 ? 0.0f : rp.at(std::to_string(r)).get<float>();
  }

  TrainResult s1 = load_model_stage(model, model_dir, 1);
  TrainResult s2 = load_model_stage(model, model_dir, 2);

  InferenceResult result =
      ctx.timer.run("inference", [&] { return infer_volume(s1, s2, scan); });
  auto [mask, comps] = postprocess(result.prob, post_from_json(ctx.config));

  write_nifti_file(result.prob, (ctx.out_dir / (id + "_prob.nii")).string());
  write_nifti_file(result.stage1_prob, (ctx.out_dir / (id + "_stage1_prob.nii")).string());
  write_nifti_file(mask, (ctx.out_dir / (id + "_mask.nii")).string());
  for (const char* s : {"_prob.nii", "_stage1_prob.nii", "_mask.nii"})
    ctx.add_output(ctx.out_dir / (id + s));

  json summary;
  summary["id"] = id;
  summary["burden"] = burden_name(result.burden);
  summary["class_probs"] = result.class_probs;
  summary["component_count"] = comps.count();
  summary["components"] = json::array();
  for (const auto& c : comps.components)
    summary["components"].push_back(
        {{"voxel_count", c.voxel_count},
         {"centroid_mm", c.centroid_mm},
         {"equivalent_diameter_mm", c.equivalent_diameter_mm(result.prob.spacing)}});
  if (have_gt) {
    ComponentSet gt = connected_components(sample.lacune_mask);
    SensitivityResult sens = instance_sensitivity(comps, gt);
    json js;
    js["detected"] = sens.detected;
    js["total"] = sens.total;
    js["fp_count"] = sens.fp_count;
    if (sens.sensitivity)
      js["sensitivity"] = *sens.sensitivity;
    else
      js["sensitivity"] = nullptr;
    summary["instance_metrics"] = js;
  }
  fs::path sp = ctx.out_dir / (id + "_summary.json");
  atomic_write(sp, summary.dump(2) + "\n");
  ctx.add_output(sp);

  fs::path mp = ctx.out_dir / (id + "_montage.pgm");
  write_montage(mp, scan.stage1_channels[0], mask, have_gt ? &sample.lacune_mask : nullptr);
  ctx.add_output(mp);
}

void cmd_eval(RunContext& ctx, const std::string& pred_path, const std::string& gt_path,
              int connectivity) {
  if (pred_path.empty() || gt_path.empty())
    throw Error(ErrorCode::ConfigError, "eval requires --pred and --gt");
  Volume3D pred = read_nifti_file(pred_path);
  Volume3D gt = read_nifti_file(gt_path);
  ComponentSet pc = connected_components(pred, connectivity);
  ComponentSet gc = connected_components(gt, connectivity);
  SensitivityResult sens = instance_sensitivity(pc, gc);

  json out;
  out["detected"] = sens.detected;
  out["total"] = sens.total;
  out["fp_count"] = sens.fp_count;
  if (sens.sensitivity)
    out["sensitivity"] = *sens.sensitivity;
  else
    out["sensitivity"] = nullptr;
  out["pred_components"] = pc.count();
  fs::path mp = ctx.out_dir / "metrics.json";
  atomic_write(mp, out.dump(2) + "\n");
  ctx.add_output(mp);
  std::cout << out.dump(2) << "\n";
}

void cmd_crossval(RunContext& ctx) {
  json cv = field(ctx.config, "crossval", json::object());
  int k = field(cv, "k", 5);
  bool compare = field(cv, "compare_losses", true);

  auto plan = cohort_plan(ctx.config, ctx.seed);
  PreprocessConfig pp;
  pp.bias_order = field(field(ctx.config, "preprocess", json::object()), "bias_order", 2);

  std::vector<PreparedScan> cohort;
  LabelVolume atlas;
  ctx.timer.run("cohort", [&] {
    for (const auto& e : plan) {
      PhantomSample s = generate_phantom(e.phantom);
      if (cohort.empty()) atlas = s.region_atlas;
      PreparedScan scan = prepare_scan(s, pp);
      scan.id = e.id;
      cohort.push_back(std::move(scan));
    }
  });

  CrossvalConfig base;
  base.k = k;
  base.seed = ctx.seed;
  base.train = train_from_json(ctx.config);
  base.post = post_from_json(ctx.config);

  std::vector<std::string> variants =
      compare ? std::vector<std::string>{"fnw", "voxel_ratio"}
              : std::vector<std::string>{base.train.stage1_loss};

  json metrics;
  metrics["variants"] = json::object();
  std::map<std::string, CrossvalResult> results;
  for (const auto& variant : variants) {
    CrossvalConfig cfg = base;
    cfg.train.stage1_loss = variant;
    results[variant] =
        ctx.timer.run("crossval_" + variant, [&] { return run_crossval(cohort, atlas, cfg); });
    metrics["variants"][variant] = crossval_to_json(results[variant]);
    fs::path cp = ctx.out_dir / ("confusion_" + variant + ".csv");
    write_confusion_csv(cp, results[variant].confusion);
    ctx.add_output(cp);
  }

  if (compare) {
    const auto& fnw = results.at("fnw");
    const auto& vr = results.at("voxel_ratio");
    std::vector<double> a, b;
    for (size_t i = 0; i < fnw.scans.size(); ++i)
      if (fnw.scans[i].sensitivity && vr.scans[i].sensitivity) {
        a.push_back(*fnw.scans[i].sensitivity);
        b.push_back(*vr.scans[i].sensitivity);
      }
    json cmp;
    cmp["paired_scans"] = a.size();
    cmp["mean_fnw"] = fnw.sensitivity_mean;
    cmp["mean_voxel_ratio"] = vr.sensitivity_mean;
    int higher = 0;
    for (int f = 0; f < k; ++f)
      if (fnw.fold_mean_sensitivity[static_cast<size_t>(f)] >
          vr.fold_mean_sensitivity[static_cast<size_t>(f)])
        higher++;
    cmp["folds_fnw_higher"] = higher;
    cmp["folds_total"] = k;
    try {
      TTestResult tt = paired_ttest(a, b);
      cmp["t"] = tt.t;
      cmp["dof"] = tt.dof;
      cmp["p_two_sided"] = tt.p_two_sided;
    } catch (const Error& e) {
      cmp["p_two_sided"] = nullptr;
      cmp["note"] = e.what();
    }
    metrics["comparison"] = cmp;
  }

  json folds = json::object();
  for (const auto& o : results.begin()->second.scans) folds[o.id] = o.fold;
  metrics["folds"] = folds;

  fs::path mp = ctx.out_dir / "metrics.json";
  atomic_write(mp, metrics.dump(2) + "\n");
  ctx.add_output(mp);
  fs::path fp = ctx.out_dir / "folds.json";
  atomic_write(fp, folds.dump(2) + "\n");
  ctx.add_output(fp);
}

int cmd_gradcheck(RunContext& ctx) {
  json g = field(ctx.config, "gradcheck", json::object());
  int trials = field(g, "trials", 20);
  refcheck::GradcheckReport report =
      ctx.timer.run("gradcheck", [&] { return refcheck::run_gradcheck_suite(ctx.seed, trials); });

  json out;
  out["checks"] = json::array();
  for (const auto& e : report.entries) {
    std::printf("%-22s max_rel %.3e tol %.0e %s\n", e.op.c_str(), e.max_rel_error, e.tolerance,
                e.pass() ? "ok" : "FAIL");
    out["checks"].push_back({{"op", e.op},
                             {"max_rel_error", e.max_rel_error},
                             {"tolerance", e.tolerance},
                             {"pass", e.pass()}});
  }
  out["all_pass"] = report.all_pass();
  fs::path rp = ctx.out_dir / "gradcheck.json";
  atomic_write(rp, out.dump(2) + "\n");
  ctx.add_output(rp);
  return report.all_pass() ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic lacune detection and burden quantification pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir_flag;
  long long seed_flag = -1;
  InferInputs infer_in;
  std::string eval_pred, eval_gt;
  int eval_connectivity = 26;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config (or a manifest from a previous run)");
    sub->add_option("--seed", seed_flag, "master seed override");
    sub->add_option("--out-dir", out_dir_flag, "output directory override");
  };

  for (const char* name :
       {"synth", "preprocess", "train", "infer", "eval", "crossval", "gradcheck"})
    add_common(app.add_subcommand(name));

  CLI::App* infer_sub = app.get_subcommand("infer");
  infer_sub->add_option("--t1", infer_in.t1);
  infer_sub->add_option("--flair", infer_in.flair);
  infer_sub->add_option("--brain-mask", infer_in.brain_mask);
  infer_sub->add_option("--csf-mask", infer_in.csf_mask);
  infer_sub->add_option("--atlas", infer_in.atlas);
  infer_sub->add_option("--gt", infer_in.gt);
  infer_sub->add_option("--model-dir", infer_in.model_dir);
  infer_sub->add_option("--phantom-dir", infer_in.phantom_dir);
  infer_sub->add_option("--id", infer_in.id);

  CLI::App* eval_sub = app.get_subcommand("eval");
  eval_sub->add_option("--pred", eval_pred);
  eval_sub->add_option("--gt", eval_gt);
  eval_sub->add_option("--connectivity", eval_connectivity);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  RunContext ctx;
  ctx.command = app.get_subcommands()[0]->get_name();
  try {
    json cfg = config_path.empty() ? json::object() : load_json(config_path);
    // a manifest from a previous run embeds the effective config
    if (cfg.contains("tool_version") && cfg.contains("config")) cfg = cfg.at("config");
    if (seed_flag >= 0) cfg["seed"] = static_cast<uint64_t>(seed_flag);
    if (!out_dir_flag.empty()) cfg["out_dir"] = out_dir_flag;

    ctx.config = cfg;
    ctx.seed = field(cfg, "seed", static_cast<uint64_t>(0));
    ctx.out_dir = field(cfg, "out_dir", std::string("out"));
    if (const char* env = std::getenv("LACUNA_THREADS")) {
      int requested = std::atoi(env);
      if (requested < 1) throw Error(ErrorCode::ConfigError, "LACUNA_THREADS must be >= 1");
      ctx.threads = 1;  // all stages run sequentially; the cap is honored trivially
    }
    fs::create_directories(ctx.out_dir);

    int code = 0;
    if (ctx.command == "synth")
      cmd_synth(ctx);
    else if (ctx.command == "preprocess")
      cmd_preprocess(ctx);
    else if (ctx.command == "train")
      cmd_train(ctx);
    else if (ctx.command == "infer")
      cmd_infer(ctx, infer_in);
    else if (ctx.command == "eval")
      cmd_eval(ctx, eval_pred, eval_gt, eval_connectivity);
    else if (ctx.command == "crossval")
      cmd_crossval(ctx);
    else
      code = cmd_gradcheck(ctx);

    ctx.write_manifest();
    return code;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
