// Command-line front end: data generation, training, inference, planning,
// uncertainty, explainability, arm calibration and experiment sweeps.

#include "softocc/dhcalib.hpp"
#include "softocc/experiments.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

using namespace softocc;

// JSON config files: top-level keys are global options, nested objects hold
// subcommand options, e.g. {"seed": 3, "train": {"epochs": 100}}.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    nlohmann::json j;
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames().front();
      if (opt->count() > 0) {
        const auto& res = opt->results();
        j[name] = res.size() == 1 ? nlohmann::json(res.front()) : nlohmann::json(res);
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    for (const CLI::App* sub : app->get_subcommands({})) {
      nlohmann::json s = nlohmann::json::parse(to_config(sub, default_also, false, ""));
      if (!s.empty()) j[sub->get_name()] = s;
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw CLI::ConversionError(std::string("config file: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError("config file: unsupported value " + v.dump());
  }

  static void flatten(const nlohmann::json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        flatten(*it, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array()) {
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(*it));
      }
      out.push_back(std::move(item));
    }
  }
};

struct Globals {
  std::uint64_t seed = 1;
  int threads = 0;
  std::string out;
};

std::string require_out(const Globals& g, const char* what) {
  if (g.out.empty()) throw Error(std::string(what) + ": --out is required");
  return g.out;
}

ObservationCloud load_cloud(const std::string& path) { return normalize_cloud(read_points(path)); }

void write_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

void add_phantom(CLI::App& app, Globals& g) {
  auto* cmd = app.add_subcommand("phantom", "Export a built-in phantom as a prior directory");
  auto name = std::make_shared<std::string>("cylinder-phantom");
  cmd->add_option("--name", *name, "sphere-phantom, cylinder-phantom or slab-phantom")->capture_default_str();
  cmd->callback([&g, name] {
    const Prior p = builtin_phantom(*name);
    save_prior(p, require_out(g, "phantom"));
    std::cout << "wrote " << p.name << " with " << p.object.num_segments() << " segments to " << g.out << '\n';
  });
}

void add_gen_data(CLI::App& app, Globals& g) {
  struct Opts {
    std::string prior = "cylinder-phantom";
    DatasetSpec spec;
    double noise = -1, drop = -1;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("gen-data", "Generate a training dataset from a prior");
  cmd->add_option("--prior", o->prior, "Prior directory or built-in phantom name")->capture_default_str();
  cmd->add_option("--n", o->spec.n_samples, "Number of samples")->capture_default_str();
  cmd->add_option("--t", o->spec.t, "Candidates per side before sorting")->capture_default_str();
  cmd->add_option("--k", o->spec.k, "Kept points per side")->capture_default_str();
  cmd->add_option("--far-field", o->spec.far_field, "Extra uniform samples per scene over the inference cube")->capture_default_str();
  cmd->add_option("--noise", o->noise, "Camera depth noise sigma in meters (default: prior's)");
  cmd->add_option("--drop", o->drop, "Camera pixel drop fraction (default: prior's)");
  cmd->callback([&g, o] {
    Prior p = resolve_prior(o->prior);
    if (o->noise >= 0) p.camera.noise_sigma = o->noise;
    if (o->drop >= 0) p.camera.drop = o->drop;
    o->spec.seed = g.seed;
    generate_dataset(p, o->spec, require_out(g, "gen-data"), g.threads);
    std::cout << "wrote " << o->spec.n_samples << " samples to " << g.out << '\n';
  });
}

void add_train(CLI::App& app, Globals& g) {
  struct Opts {
    std::string data;
    TrainConfig cfg;
    int width = 512;
    int layers = 3;
    std::size_t limit = 0;
    std::string loss_csv;
    bool quiet = false;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("train", "Train an occupancy network on a dataset");
  cmd->add_option("--data", o->data, "Dataset directory")->required();
  cmd->add_option("--epochs", o->cfg.epochs)->capture_default_str();
  cmd->add_option("--batch", o->cfg.batch)->capture_default_str();
  cmd->add_option("--lr", o->cfg.lr)->capture_default_str();
  cmd->add_option("--lr-final", o->cfg.lr_final, "Decay exponentially to this rate by the last epoch (0 = constant)")
      ->capture_default_str();
  cmd->add_option("--lr-hold", o->cfg.lr_hold, "Epochs at the initial rate before decaying")->capture_default_str();
  cmd->add_option("--lambda", o->cfg.lambda, "Signed-distance loss weight")->capture_default_str();
  cmd->add_option("--latent", o->cfg.net.latent)->capture_default_str();
  cmd->add_option("--width", o->width, "Decoder hidden width")->capture_default_str();
  cmd->add_option("--layers", o->layers, "Decoder hidden layers")->capture_default_str();
  cmd->add_option("--dropout", o->cfg.net.dropout, "Decoder dropout rate")->capture_default_str();
  cmd->add_option("--point-drop", o->cfg.point_drop, "Input point drop fraction during training")->capture_default_str();
  cmd->add_option("--queries-per-sample", o->cfg.queries_per_sample, "Ground-truth points drawn per sample and epoch (0 = all)")
      ->capture_default_str();
  cmd->add_option("--checkpoint-every", o->cfg.checkpoint_every, "Epochs between checkpoints (0 = final only)")->capture_default_str();
  cmd->add_option("--limit", o->limit, "Use only the first N samples (0 = all)")->capture_default_str();
  cmd->add_option("--loss-csv", o->loss_csv, "Loss curve path (default: <out>.loss.csv)");
  cmd->add_flag("--quiet", o->quiet);
  cmd->callback([&g, o] {
    const std::string out = require_out(g, "train");
    TrainConfig cfg = o->cfg;
    if (o->width < 1 || o->layers < 1) throw Error("train: width and layers must be positive");
    cfg.net.decoder_hidden.assign(static_cast<std::size_t>(o->layers), o->width);
    cfg.seed = g.seed;
    cfg.net.init_seed = g.seed;
    cfg.checkpoint_path = out;
    cfg.loss_csv = o->loss_csv.empty() ? out + ".loss.csv" : o->loss_csv;
    const Dataset ds = load_dataset(o->data, o->limit, g.threads);
    std::cout << "training on " << ds.samples.size() << " samples: " << to_json(cfg).dump() << std::endl;
    const TrainResult r = train(cfg, ds, [&](const EpochLoss& e) {
      if (!o->quiet) std::cout << "epoch " << e.epoch << " ce " << e.ce << " l1 " << e.l1 << " total " << e.total << std::endl;
    });
    save_checkpoint(r.model, out, {{"train", to_json(cfg)}, {"dataset_seed", ds.seed}, {"samples", ds.samples.size()}});
    std::cout << "wrote " << out << '\n';
  });
}

void dense_opts(CLI::App* cmd, DenseInferConfig& c) {
  cmd->add_option("--dense", c.n_dense, "Stage-2 query points")->capture_default_str();
  cmd->add_option("--coarse", c.n_coarse, "Stage-1 query points")->capture_default_str();
}

void add_infer(CLI::App& app, Globals& g) {
  struct Opts {
    std::string model, cloud;
    DenseInferConfig dense;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("infer", "Dense two-stage reconstruction from a point cloud");
  cmd->add_option("--model", o->model)->required();
  cmd->add_option("--cloud", o->cloud, "Point file in meters")->required();
  dense_opts(cmd, o->dense);
  cmd->callback([&g, o] {
    const OccModel m = load_checkpoint(o->model);
    o->dense.seed = g.seed;
    const DenseReconstruction rec = dense_infer(m, load_cloud(o->cloud), o->dense);
    write_reconstruction(require_out(g, "infer"), rec);
    if (rec.empty) std::cerr << "warning: no occupied region found; reconstruction is empty\n";
    std::cout << "wrote " << rec.size() << " points to " << g.out << '\n';
  });
}

void add_plan(CLI::App& app, Globals& g) {
  struct Opts {
    std::string recon;
    int segment = 2;
    std::string centroid = "geo";
    double standoff = kDefaultStandoff;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("plan", "Plan a puncture toward an ROI centroid");
  cmd->add_option("--recon", o->recon, "Reconstruction file from infer or uncertainty")->required();
  cmd->add_option("--segment", o->segment)->capture_default_str();
  cmd->add_option("--centroid", o->centroid, "geo or uwc")->capture_default_str();
  cmd->add_option("--standoff", o->standoff, "Approach distance in meters")->capture_default_str();
  cmd->callback([&g, o] {
    const DenseReconstruction rec = read_reconstruction(o->recon);
    const Vec3 target = centroid(rec, o->segment, parse_centroid_method(o->centroid));
    write_json(to_json(plan_puncture(rec, target, o->standoff)), g.out);
  });
}

void add_uncertainty(CLI::App& app, Globals& g) {
  struct Opts {
    std::string model, cloud, method = "mcd";
    int m = kDefaultMcPasses;
    DenseInferConfig dense;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("uncertainty", "Reconstruction with per-point entropy");
  cmd->add_option("--model", o->model)->required();
  cmd->add_option("--cloud", o->cloud, "Point file in meters")->required();
  cmd->add_option("--method", o->method, "activation or mcd")->capture_default_str();
  cmd->add_option("--m", o->m, "Monte-Carlo passes")->capture_default_str();
  dense_opts(cmd, o->dense);
  cmd->callback([&g, o] {
    const OccModel model = load_checkpoint(o->model);
    o->dense.seed = g.seed;
    const DenseReconstruction rec =
        uncertainty_reconstruction(model, load_cloud(o->cloud), parse_uncertainty_method(o->method), o->dense, o->m);
    write_reconstruction(require_out(g, "uncertainty"), rec);
    if (rec.empty) throw Error("uncertainty: no occupied region found");
    std::cout << "H_global " << fmt(global_uncertainty(*rec.uncertainties)) << '\n';
  });
}

void add_explain(CLI::App& app, Globals& g) {
  struct Opts {
    std::string model, cloud;
    ExplainConfig cfg;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("explain", "Masking-based explainability scores per input point");
  cmd->add_option("--model", o->model)->required();
  cmd->add_option("--cloud", o->cloud, "Point file in meters")->required();
  cmd->add_option("--radius-frac", o->cfg.radius_frac, "Mask radius as a fraction of the longest bbox side")->capture_default_str();
  cmd->add_option("--queries", o->cfg.n_queries)->capture_default_str();
  cmd->add_option("--stride", o->cfg.stride, "Evaluate every k-th input point")->capture_default_str();
  cmd->callback([&g, o] {
    const OccModel model = load_checkpoint(o->model);
    const ObservationCloud cloud = load_cloud(o->cloud);
    o->cfg.seed = g.seed;
    const ExplainabilityMap map = explain(model, to_points_f(cloud.normalized_points()), o->cfg, g.threads);
    PointTable t;
    t.comments.push_back(" radius " + fmt(map.radius / cloud.normalization.scale) + " m");
    t.comments.push_back(" columns x y z score evaluated emptied");
    for (std::size_t i = 0; i < map.scores.size(); ++i) {
      const Vec3& p = cloud.points[i];
      t.rows.push_back({p.x(), p.y(), p.z(), map.scores[i], map.evaluated[i] ? 1.0 : 0.0, map.emptied[i] ? 1.0 : 0.0});
    }
    write_point_table(require_out(g, "explain"), t, 9);
    std::cout << "wrote " << map.scores.size() << " scores to " << g.out << '\n';
  });
}

void add_gen_tracker(CLI::App& app, Globals& g) {
  struct Opts {
    std::string dh;
    dh::TrackerDataConfig cfg;
    std::string mode = "static";
    double noise_mm = 0.4;
    double rot_noise = 0.001;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("gen-tracker", "Synthesize tracked arm poses from a perturbed chain");
  cmd->add_option("--dh", o->dh, "Nominal DH file (default: built-in 7-joint arm)");
  cmd->add_option("--n", o->cfg.samples)->capture_default_str();
  cmd->add_option("--mode", o->mode, "static, dynamic or single-joint")->capture_default_str();
  cmd->add_option("--noise-mm", o->noise_mm, "Tracker position noise per axis")->capture_default_str();
  cmd->add_option("--rot-noise", o->rot_noise, "Tracker rotation noise in radians")->capture_default_str();
  cmd->callback([&g, o] {
    const std::filesystem::path dir = require_out(g, "gen-tracker");
    std::filesystem::create_directories(dir);
    const dh::DHChain nominal = o->dh.empty() ? dh::reference_arm() : dh::load_chain(o->dh);
    const dh::DHChain truth = dh::perturbed_chain(nominal, {}, g.seed);
    o->cfg.mode = dh::parse_data_mode(o->mode);
    o->cfg.noise = {o->noise_mm * 1e-3, o->rot_noise};
    o->cfg.seed = g.seed;
    dh::save_chain(nominal, dir / "manufacturer.json");
    dh::save_chain(truth, dir / "truth.json");
    dh::write_samples_csv(dir / "samples.csv", dh::generate_tracker_data(truth, o->cfg));
    std::cout << "wrote manufacturer.json, truth.json and samples.csv to " << dir.string() << '\n';
  });
}

void add_calibrate(CLI::App& app, Globals& g) {
  struct Opts {
    std::string dh, data, mode = "full", base_from;
    dh::CalibConfig cfg;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("calibrate", "Calibrate DH offsets and base pose from tracked poses");
  cmd->add_option("--dh", o->dh, "Manufacturer DH file")->required();
  cmd->add_option("--data", o->data, "Samples CSV: px,py,pz,qw,qx,qy,qz,xi1..xin")->required();
  cmd->add_option("--mode", o->mode, "full, delta-theta or fixed-base")->capture_default_str();
  cmd->add_option("--base-from", o->base_from, "DH file whose base pose is used (fixed-base mode)");
  cmd->add_option("--epochs", o->cfg.epochs)->capture_default_str();
  cmd->add_option("--lr", o->cfg.lr)->capture_default_str();
  cmd->add_option("--lr-final", o->cfg.lr_final)->capture_default_str();
  cmd->add_option("--batch", o->cfg.batch)->capture_default_str();
  cmd->add_option("--lambda", o->cfg.lambda, "Rotation loss weight")->capture_default_str();
  cmd->callback([&g, o] {
    dh::DHChain chain = dh::load_chain(o->dh);
    const auto mode = dh::parse_calib_mode(o->mode);
    if (!o->base_from.empty()) {
      const dh::DHChain b = dh::load_chain(o->base_from);
      chain.base_position = b.base_position;
      chain.base_euler = b.base_euler;
    }
    const auto samples = dh::read_samples_csv(o->data);
    o->cfg.seed = g.seed;
    const auto r = dh::calibrate(chain, samples, o->cfg, mode);
    const nlohmann::json report = dh::to_json(r.report);
    dh::save_chain(r.chain, require_out(g, "calibrate"), report);
    std::cout << report.dump(2) << '\n';
  });
}

void add_sweep(CLI::App& app, Globals& g) {
  struct Opts {
    std::string model;
    ExperimentConfig cfg;
    bool no_timing = false, no_uncertainty = false;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("sweep", "Centroid accuracy, timing and uncertainty sweeps");
  cmd->add_option("--model", o->model)->required();
  cmd->add_option("--prior", o->cfg.object, "Prior directory or built-in phantom name")->capture_default_str();
  cmd->add_option("--queries", o->cfg.query_points, "Stage-2 query counts")->capture_default_str()->delimiter(',');
  cmd->add_option("--noise", o->cfg.noise, "Normalized input noise levels")->capture_default_str()->delimiter(',');
  cmd->add_option("--drop", o->cfg.drop, "Input point drop fractions")->capture_default_str()->delimiter(',');
  cmd->add_option("--methods", o->cfg.methods, "activation, mcd")->capture_default_str()->delimiter(',');
  cmd->add_option("--n", o->cfg.repetitions, "Deformations per cell")->capture_default_str();
  cmd->add_option("--m", o->cfg.mc_passes, "Monte-Carlo passes")->capture_default_str();
  cmd->add_option("--uncertainty-queries", o->cfg.uncertainty_queries)->capture_default_str();
  cmd->add_flag("--no-timing", o->no_timing);
  cmd->add_flag("--no-uncertainty", o->no_uncertainty);
  cmd->callback([&g, o] {
    const std::string out = require_out(g, "sweep");
    if (!std::filesystem::exists(o->model))
      throw Error("sweep: model " + o->model + " not found (train one with `softocc train`)");
    const OccModel model = load_checkpoint(o->model);
    const Prior prior = resolve_prior(o->cfg.object);
    o->cfg.seed = g.seed;
    o->cfg.timing = !o->no_timing;
    o->cfg.uncertainty = !o->no_uncertainty;
    const SweepResult r = run_sweep(model, prior, o->cfg, g.threads);
    for (const auto& p : write_sweep(r, o->cfg, out)) std::cout << "wrote " << p.string() << '\n';
  });
}

void add_eval_puncture(CLI::App& app, Globals& g) {
  struct Opts {
    std::string model, prior = "cylinder-phantom", centroid = "geo";
    PunctureConfig cfg;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("eval-puncture", "Synthetic end-to-end puncture success rate");
  cmd->add_option("--model", o->model, "Checkpoint (not needed with --oracle)");
  cmd->add_option("--prior", o->prior, "Prior directory or built-in phantom name")->capture_default_str();
  cmd->add_option("--n", o->cfg.repetitions, "Deformations")->capture_default_str();
  cmd->add_option("--dense", o->cfg.n_dense)->capture_default_str();
  cmd->add_option("--centroid", o->centroid, "geo or uwc")->capture_default_str();
  cmd->add_flag("--oracle", o->cfg.oracle, "Use ground-truth occupancy instead of a model");
  cmd->callback([&g, o] {
    const std::string out = require_out(g, "eval-puncture");
    const Prior prior = resolve_prior(o->prior);
    o->cfg.seed = g.seed;
    o->cfg.centroid = parse_centroid_method(o->centroid);
    std::optional<OccModel> model;
    if (!o->cfg.oracle) {
      if (o->model.empty() || !std::filesystem::exists(o->model))
        throw Error("eval-puncture: model '" + o->model + "' not found (train one with `softocc train`, or pass --oracle)");
      model = load_checkpoint(o->model);
    }
    const PunctureSummary s = end_to_end_puncture_eval(model ? &*model : nullptr, prior, o->cfg, g.threads);
    const auto path = write_puncture(s, out);
    std::cout << "hit rate " << fmt(s.hit_rate(), 4) << " over " << s.rows.size() << " punctures; wrote " << path.string() << '\n';
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable-object occupancy reconstruction and puncture planning"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; command-line flags override it");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = hardware concurrency)")->capture_default_str();
  app.add_option("--out", g.out, "Output path");

  add_phantom(app, g);
  add_gen_data(app, g);
  add_train(app, g);
  add_infer(app, g);
  add_plan(app, g);
  add_uncertainty(app, g);
  add_explain(app, g);
  add_gen_tracker(app, g);
  add_calibrate(app, g);
  add_sweep(app, g);
  add_eval_puncture(app, g);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
