#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "mdl/analysis.hpp"
#include "mdl/csv.hpp"
#include "mdl/dataset.hpp"
#include "mdl/metrics.hpp"
#include "mdl/nifti.hpp"
#include "mdl/phantom.hpp"
#include "mdl/train.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mdl;
using mdl::cli::Field;
using mdl::cli::RunConfig;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

json u(std::uint64_t v) { return json(v); }

void log(const std::string& msg) { std::cerr << msg << std::endl; }

fs::path required_path(const RunConfig& c, const std::string& key) {
  const std::string p = c.text(key);
  if (p.empty()) throw std::invalid_argument("--" + key + " is required");
  return p;
}

std::vector<DatasetItem> load_manifest(const fs::path& path) {
  auto items = read_manifest(path);
  for (auto& it : items) it = resolve(it, path.parent_path());
  return items;
}

/// "" -> no filter; otherwise comma-separated indices or a-b ranges.
std::optional<std::set<std::size_t>> parse_slices(const std::string& spec) {
  if (spec.empty()) return std::nullopt;
  std::set<std::size_t> out;
  std::stringstream ss(spec);
  std::string part;
  try {
    while (std::getline(ss, part, ',')) {
      const auto dash = part.find('-');
      if (dash == std::string::npos) {
        out.insert(std::stoul(part));
      } else {
        const std::size_t lo = std::stoul(part.substr(0, dash)), hi = std::stoul(part.substr(dash + 1));
        if (hi < lo) throw std::invalid_argument("descending range");
        for (std::size_t z = lo; z <= hi; ++z) out.insert(z);
      }
    }
  } catch (const std::logic_error&) {
    throw std::invalid_argument("--slices: cannot parse '" + spec + "'");
  }
  return out;
}

/// Ground-truth and prediction items matched by id, in ground-truth order.
std::vector<std::pair<DatasetItem, DatasetItem>> align(const std::vector<DatasetItem>& gt,
                                                       const std::vector<DatasetItem>& pred) {
  std::map<std::string, DatasetItem> by_id;
  for (const auto& p : pred) by_id[p.id] = p;
  std::vector<std::pair<DatasetItem, DatasetItem>> out;
  std::vector<std::string> missing;
  for (const auto& g : gt) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) {
      missing.push_back(g.id);
      continue;
    }
    out.emplace_back(g, it->second);
    by_id.erase(it);
  }
  if (!missing.empty() || !by_id.empty()) {
    std::string msg = "prediction and ground-truth manifests do not match:";
    for (const auto& id : missing) msg += " missing prediction for " + id + ";";
    for (const auto& [id, item] : by_id) msg += " no ground truth for " + id + ";";
    throw DataError(msg);
  }
  return out;
}

Extents extents_of(const RunConfig& c) { return {c.count("depth"), c.count("height"), c.count("width")}; }

// phantom

std::vector<Field> phantom_fields() {
  const PhantomParams d;
  return {{"out", "", "output directory"},
          {"n", u(4), "number of phantoms"},
          {"seed", u(0), "seed of the first phantom; phantom k uses seed + k"},
          {"group", "phantom", "group tag written to the manifest"},
          {"depth", u(d.extents.d), "extent along D"},
          {"height", u(d.extents.h), "extent along H"},
          {"width", u(d.extents.w), "extent along W"},
          {"spacing_d", d.spacing.d, "voxel size along D in mm"},
          {"spacing_h", d.spacing.h, "voxel size along H in mm"},
          {"spacing_w", d.spacing.w, "voxel size along W in mm"},
          {"ipsilateral_mean", d.ipsilateral_mean, "ipsilateral intensity"},
          {"contralateral_mean", d.contralateral_mean, "contralateral intensity"},
          {"hemisphere_sigma", d.hemisphere_sigma, "per-phantom jitter of hemisphere means"},
          {"noise_sigma", d.noise_sigma, "additive Gaussian noise"},
          {"lesion_probability", d.lesion_probability, "chance of a lesion"},
          {"lesion_radius_min", d.lesion_radius_min, "smallest in-plane lesion radius (voxels)"},
          {"lesion_radius_max", d.lesion_radius_max, "largest in-plane lesion radius (voxels)"},
          {"lesion_shift", d.lesion_shift, "lesion intensity offset"}};
}

int cmd_phantom(const RunConfig& c) {
  const fs::path out = required_path(c, "out");
  c.echo(out);
  fs::create_directories(out / "volumes");
  fs::create_directories(out / "labels");
  PhantomParams p;
  p.extents = extents_of(c);
  p.spacing = {c.number("spacing_d"), c.number("spacing_h"), c.number("spacing_w")};
  p.ipsilateral_mean = c.number("ipsilateral_mean");
  p.contralateral_mean = c.number("contralateral_mean");
  p.hemisphere_sigma = c.number("hemisphere_sigma");
  p.noise_sigma = c.number("noise_sigma");
  p.lesion_probability = c.number("lesion_probability");
  p.lesion_radius_min = c.number("lesion_radius_min");
  p.lesion_radius_max = c.number("lesion_radius_max");
  p.lesion_shift = c.number("lesion_shift");
  std::vector<DatasetItem> items;
  for (std::size_t k = 0; k < c.count("n"); ++k) {
    p.seed = c.u64("seed") + k;
    const Phantom ph = generate_phantom(p);
    char id[32];
    std::snprintf(id, sizeof id, "phantom_%03zu", k);
    const DatasetItem item{id, c.text("group"), fs::path("volumes") / (std::string(id) + ".nii"),
                           fs::path("labels") / (std::string(id) + ".nii")};
    write_volume(ph.volume, out / item.volume_path);
    write_labels(ph.labels, out / item.labels_path);
    items.push_back(item);
  }
  write_manifest(items, out / "manifest.csv");
  log("wrote " + std::to_string(items.size()) + " phantoms to " + out.string());
  return kOk;
}

// train

std::vector<Field> train_fields() {
  const TrainConfig t;
  const NetworkConfig n;
  return {{"manifest", "", "dataset manifest CSV"},
          {"out", "", "output directory"},
          {"train_per_group", u(3), "training volumes per group"},
          {"val_per_group", u(1), "validation volumes per group"},
          {"split_seed", u(0), "seed of the train/val/test split"},
          {"learning_rate", t.learning_rate, "Adam learning rate"},
          {"beta1", t.beta1, "Adam beta1"},
          {"beta2", t.beta2, "Adam beta2"},
          {"epsilon", t.epsilon, "Adam epsilon"},
          {"epochs", u(t.epochs), "training epochs"},
          {"seed", u(t.seed), "shuffle seed; member k uses seed + k"},
          {"ensemble_size", u(t.ensemble_size), "number of ensemble members"},
          {"clamp_floor", t.clamp_floor, "log clamp in the cross-entropy"},
          {"selection", "best_validation", "best_validation or last_epoch"},
          {"filter_rate", n.filter_rate, "channel width multiplier"},
          {"base_filters", u(n.base_filters), "first encoder stage width at rate 1"},
          {"deep_supervision", n.deep_supervision, "train the auxiliary heads"},
          {"init_seed", u(n.seed), "initialization seed; member k uses init_seed + k"}};
}

std::vector<Sample> load_samples(const std::vector<DatasetItem>& items) {
  std::vector<Sample> out;
  for (const auto& it : items) out.push_back(make_sample(it.id, read_volume(it.volume_path), read_labels(it.labels_path)));
  return out;
}

std::vector<DatasetItem> relative_to(const std::vector<DatasetItem>& items, const fs::path& base) {
  std::vector<DatasetItem> out = items;
  for (auto& it : out) {
    it.volume_path = fs::relative(it.volume_path, base);
    it.labels_path = fs::relative(it.labels_path, base);
  }
  return out;
}

int cmd_train(const RunConfig& c) {
  const fs::path out = required_path(c, "out");
  c.echo(out);
  NetworkConfig net;
  net.filter_rate = c.number("filter_rate");
  net.base_filters = c.count("base_filters");
  net.deep_supervision = c.flag("deep_supervision");
  net.seed = c.u64("init_seed");
  net.validate();
  TrainConfig t;
  t.learning_rate = c.number("learning_rate");
  t.beta1 = c.number("beta1");
  t.beta2 = c.number("beta2");
  t.epsilon = c.number("epsilon");
  t.epochs = c.count("epochs");
  t.seed = c.u64("seed");
  t.ensemble_size = c.count("ensemble_size");
  t.clamp_floor = c.number("clamp_floor");
  const std::string sel = c.text("selection");
  if (sel == "best_validation") t.selection = Selection::best_validation;
  else if (sel == "last_epoch") t.selection = Selection::last_epoch;
  else throw std::invalid_argument("--selection must be best_validation or last_epoch");
  t.validate();

  const fs::path manifest = required_path(c, "manifest");
  const auto split =
      split_dataset(load_manifest(manifest), c.count("train_per_group"), c.count("val_per_group"), c.u64("split_seed"));
  const fs::path abs_out = fs::absolute(out);
  write_manifest(relative_to(split.train, abs_out), out / "train_manifest.csv");
  write_manifest(relative_to(split.val, abs_out), out / "val_manifest.csv");
  write_manifest(relative_to(split.test, abs_out), out / "test_manifest.csv");
  log("parameters: " + std::to_string(count_parameters(net)) + " at filter_rate " + csv::format(net.filter_rate));
  log("split: " + std::to_string(split.train.size()) + " train, " + std::to_string(split.val.size()) + " val, " +
      std::to_string(split.test.size()) + " test");

  const auto train_set = load_samples(split.train), val_set = load_samples(split.val);
  for (std::size_t k = 0; k < t.ensemble_size; ++k) {
    NetworkConfig member = net;
    member.seed = net.seed + k;
    TrainConfig mt = t;
    mt.seed = t.seed + k;
    const auto start = std::chrono::steady_clock::now();
    const auto result = train(member, train_set, val_set, mt, [&](const EpochRecord& r) {
      if (r.epoch % 10 == 0 || r.epoch + 1 == mt.epochs) {
        log("member " + std::to_string(k) + " epoch " + std::to_string(r.epoch) + " train " +
            csv::format(r.train_loss) + " val " + csv::format(r.val_loss));
      }
    });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    save_checkpoint(result.model, out / ("member" + std::to_string(k) + ".ckpt"));
    write_history_csv(result.history, out / ("history_member" + std::to_string(k) + ".csv"));
    log("member " + std::to_string(k) + " kept epoch " + std::to_string(result.selected_epoch) + " (" +
        std::to_string(static_cast<long>(secs)) + " s)");
  }
  return kOk;
}

// segment

std::vector<Field> segment_fields() {
  return {{"manifest", "", "manifest of volumes to segment"},
          {"checkpoints", "", "comma-separated checkpoint files, or a directory of *.ckpt"},
          {"out", "", "output directory"}};
}

std::vector<fs::path> checkpoint_list(const std::string& spec) {
  std::vector<fs::path> out;
  if (fs::is_directory(spec)) {
    for (const auto& e : fs::directory_iterator(spec))
      if (e.path().extension() == ".ckpt") out.push_back(e.path());
    std::sort(out.begin(), out.end());
  } else {
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ','))
      if (!part.empty()) out.push_back(part);
  }
  if (out.empty()) throw std::invalid_argument("--checkpoints names no checkpoint");
  return out;
}

int cmd_segment(const RunConfig& c) {
  const fs::path out = required_path(c, "out");
  c.echo(out);
  fs::create_directories(out / "labels");
  std::vector<Model> models;
  for (const auto& p : checkpoint_list(required_path(c, "checkpoints"))) models.push_back(load_checkpoint(p));
  std::vector<const Model*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  const fs::path abs_out = fs::absolute(out);
  std::vector<DatasetItem> preds;
  for (const auto& it : load_manifest(required_path(c, "manifest"))) {
    const VolumeGrid vol = read_volume(it.volume_path);
    const LabelVolume seg = ptrs.size() == 1 ? segment(*ptrs[0], vol) : ensemble_predict(ptrs, vol);
    DatasetItem p = it;
    p.labels_path = fs::path("labels") / (it.id + ".nii");
    write_labels(seg, out / p.labels_path);
    p.volume_path = fs::relative(it.volume_path, abs_out);
    preds.push_back(p);
  }
  write_manifest(preds, out / "predictions.csv");
  log("segmented " + std::to_string(preds.size()) + " volumes with " + std::to_string(models.size()) + " model(s)");
  return kOk;
}

// evaluate / midline / biomarker

std::vector<Field> paired_fields(std::vector<Field> extra) {
  std::vector<Field> f{{"pred", "", "prediction manifest"},
                       {"gt", "", "ground-truth manifest"},
                       {"out", "", "output directory"}};
  f.insert(f.end(), extra.begin(), extra.end());
  return f;
}

struct Pair {
  std::string id;
  LabelVolume gt, pred;
};

std::vector<Pair> load_pairs(const RunConfig& c) {
  std::vector<Pair> out;
  for (const auto& [g, p] : align(load_manifest(required_path(c, "gt")), load_manifest(required_path(c, "pred")))) {
    out.push_back({g.id, read_labels(g.labels_path), read_labels(p.labels_path)});
  }
  if (out.empty()) throw DataError("no volumes to evaluate");
  return out;
}

int cmd_evaluate(const RunConfig& c) {
  const fs::path out = required_path(c, "out");
  c.echo(out);
  const auto slices = parse_slices(c.text("slices"));
  std::vector<VolumeMetrics> results;
  for (const auto& p : load_pairs(c)) results.push_back({p.id, evaluate_volume(p.pred, p.gt, slices)});
  write_metrics_csv(results, out / "metrics.csv");
  log("evaluated " + std::to_string(results.size()) + " volumes");
  return kOk;
}

int cmd_midline(const RunConfig& c) {
  const fs::path out = required_path(c, "out");
  c.echo(out);
  const auto slices = parse_slices(c.text("slices"));
  const auto pairs = load_pairs(c);
  std::vector<MidlineRow> rows;
  for (std::size_t n = 1; n <= 10; ++n) {
    std::vector<double> ipsi, contra;
    for (const auto& p : pairs) {
      const auto d = midline_dice(p.pred, p.gt, n, slices);
      ipsi.push_back(d.ipsilateral);
      contra.push_back(d.contralateral);
    }
    const auto mi = mean_sd(ipsi), mc = mean_sd(contra);
    rows.push_back({n, mi.first, mc.first, mi.second, mc.second});
  }
  write_midline_csv(rows, out / "midline.csv");
  log("midline bands n=1..10 over " + std::to_string(pairs.size()) + " volumes");
  return kOk;
}

int cmd_biomarker(const RunConfig& c) {
  const fs::path out = required_path(c, "out");
  c.echo(out);
  BootstrapOptions o;
  o.resamples = c.count("resamples");
  o.alpha = c.number("alpha");
  o.seed = c.u64("seed");
  const std::string v = c.text("variant");
  CohensVariant variant;
  if (v == "pooled") variant = CohensVariant::pooled;
  else if (v == "paired") variant = CohensVariant::paired;
  else throw std::invalid_argument("--variant must be pooled or paired");
  const auto pairs = load_pairs(c);
  std::vector<LabelVolume> gts, preds;
  std::vector<std::string> ids;
  for (const auto& p : pairs) {
    ids.push_back(p.id);
    gts.push_back(p.gt);
    preds.push_back(p.pred);
  }
  const auto r = biomarker(gts, preds, o, variant);
  write_biomarker_csv(r, out / "biomarker.csv");
  write_ratio_csv(ids, r, out / "ratios.csv");
  log("cohen's d " + csv::format(r.cohens_d) + " CI [" + csv::format(r.ci.low) + ", " + csv::format(r.ci.high) + "]" +
      (r.ci.degenerate ? " (degenerate bootstrap distribution)" : ""));
  return kOk;
}

// gridsearch

std::vector<Field> gridsearch_fields() {
  return {{"manifest", "", "manifest of volumes with ground-truth labels"}, {"out", "", "output directory"}};
}

int cmd_gridsearch(const RunConfig& c) {
  const fs::path out = required_path(c, "out");
  c.echo(out);
  std::vector<VolumeGrid> vols;
  std::vector<LabelVolume> gts;
  for (const auto& it : load_manifest(required_path(c, "manifest"))) {
    vols.push_back(read_volume(it.volume_path));
    gts.push_back(read_labels(it.labels_path));
  }
  const auto r = gridsearch(vols, gts);
  write_gridsearch_csv(r, out / "gridsearch.csv");
  csv::Table best;
  best.header = {"i", "alpha", "mean_dice"};
  best.rows.push_back({std::to_string(r.best_percentile_index), std::to_string(r.best_alpha),
                       csv::format(r.best_mean_dice)});
  csv::write(best, out / "gridsearch_best.csv");
  log("best cell i=" + std::to_string(r.best_percentile_index) + " alpha=" + std::to_string(r.best_alpha) +
      " mean Dice " + csv::format(r.best_mean_dice));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D hemisphere segmentation pipeline"};
  app.require_subcommand(1);

  struct Command {
    CLI::App* sub;
    std::unique_ptr<RunConfig> config;
    int (*run)(const RunConfig&);
  };
  std::vector<Command> commands;
  auto add = [&](const char* name, const char* help, std::vector<Field> fields, int (*run)(const RunConfig&)) {
    CLI::App* sub = app.add_subcommand(name, help);
    commands.push_back({sub, std::make_unique<RunConfig>(sub, std::move(fields)), run});
  };
  add("phantom", "generate synthetic phantoms and a manifest", phantom_fields(), cmd_phantom);
  add("train", "train an ensemble from a manifest", train_fields(), cmd_train);
  add("segment", "segment volumes with one or more checkpoints", segment_fields(), cmd_segment);
  add("evaluate", "Dice, Hausdorff, precision and recall per volume",
      paired_fields({{"slices", "", "restrict to D-indices, e.g. 3-20,25"}}), cmd_evaluate);
  add("midline", "hemisphere Dice around the brain midline for n=1..10",
      paired_fields({{"slices", "", "restrict to D-indices, e.g. 3-20,25"}}), cmd_midline);
  add("biomarker", "hemispheric ratio effect size with a BCa interval",
      paired_fields({{"resamples", u(10000), "bootstrap resamples"},
                     {"alpha", 0.05, "two-sided level"},
                     {"seed", u(0), "bootstrap seed"},
                     {"variant", "pooled", "pooled or paired Cohen's d"}}),
      cmd_biomarker);
  add("gridsearch", "percentile threshold and closing grid search", gridsearch_fields(), cmd_gridsearch);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  for (auto& cmd : commands) {
    if (!cmd.sub->parsed()) continue;
    try {
      cmd.config->resolve();
      return cmd.run(*cmd.config);
    } catch (const DivergenceError& e) {
      std::cerr << "error: " << e.what() << std::endl;
      return kNumerical;
    } catch (const std::invalid_argument& e) {
      std::cerr << "error: " << e.what() << std::endl;
      return kUsage;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << std::endl;
      return kData;
    }
  }
  return kUsage;
}
