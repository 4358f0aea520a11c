// vaedist: distance analysis and disentanglement experiments on ground-truth
// factor datasets.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vaedist/distances.hpp"
#include "vaedist/experiments.hpp"
#include "vaedist/random.hpp"
#include "vaedist/report_io.hpp"

namespace fs = std::filesystem;
using namespace vaedist;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetOptions {
  std::string dataset = "xysquares";
  std::string manifest;
  XYSquaresParams xy;
  bool standardised = false;
};

void add_dataset_options(CLI::App *cmd, DatasetOptions &o) {
  cmd->add_option("--dataset", o.dataset, "xysquares, or a name for --manifest data");
  cmd->add_option("--manifest", o.manifest,
                  "Dataset manifest (key=value file naming an .npy array; "
                  "extract arrays from .npz archives first)");
  cmd->add_option("--spacing", o.xy.spacing, "XYSquares grid spacing in pixels");
  cmd->add_option("--grid", o.xy.grid_points, "XYSquares grid points per axis");
  cmd->add_option("--square", o.xy.square_size, "XYSquares square side in pixels");
  cmd->add_option("--image", o.xy.image_size, "XYSquares image side in pixels");
  cmd->add_option("--squares", o.xy.num_squares, "XYSquares square count (1-3)");
}

struct OpenedDataset {
  std::unique_ptr<GroundTruthDataset> raw;
  std::unique_ptr<PreprocessedDataset> standardised;

  const GroundTruthDataset &get() const {
    return standardised ? *standardised : *raw;
  }
};

DatasetSpec to_spec(const DatasetOptions &o) {
  DatasetSpec spec;
  spec.name = o.dataset;
  spec.xysquares = o.xy;
  if (!o.manifest.empty()) {
    spec.manifest = o.manifest;
    if (spec.name == "xysquares")
      spec.name = fs::path(o.manifest).stem().string();
  }
  return spec;
}

OpenedDataset open_dataset(const DatasetOptions &o) {
  OpenedDataset d;
  try {
    if (o.manifest.empty() && o.dataset != "xysquares")
      throw std::invalid_argument("dataset '" + o.dataset +
                                  "' needs --manifest");
    d.raw = to_spec(o).open();
    if (o.standardised) {
      auto stats = d.raw->known_stats();
      if (!stats) {
        auto rng = make_rng(0x57a75, 0);
        stats = channel_stats(*d.raw, 10000, rng);
      }
      d.standardised = std::make_unique<PreprocessedDataset>(
          *d.raw, d.raw->height(), d.raw->width(), stats);
    }
  } catch (const std::exception &e) {
    throw UsageError(e.what());
  }
  return d;
}

fs::path output_root(const std::string &flag) {
  if (!flag.empty())
    return flag;
  if (const char *env = std::getenv("VAEDIST_OUT"); env && *env)
    return env;
  return "vaedist_out";
}

std::ofstream open_out(const fs::path &path) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string kind_tag(const DistanceKind &k, bool standardised) {
  std::string s = k.type == DistanceKind::VisualBlurMSE
                      ? "blur-mse-r" + std::to_string(k.blur.radius) +
                            (k.blur.padding == BlurPadding::Circular ? "-circular" : "")
                      : k.to_string();
  return standardised ? s + "-standardised" : s;
}

void warn_noncanonical(bool standardised) {
  if (standardised)
    std::cerr << "note: distances on standardised data are non-canonical\n";
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Ground-truth vs. visual distance analysis and VAE "
               "disentanglement experiments"};
  app.require_subcommand(1);
  std::string out_flag;
  app.add_option("--out", out_flag, "Output directory (default: $VAEDIST_OUT)");
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = all cores)");

  DatasetOptions ds;
  std::string kind_name = "mse";
  int radius = 31;
  double alpha = 3969.0;
  std::string padding = "zero";
  std::uint64_t seed = 0;
  auto add_kind = [&](CLI::App *cmd) {
    cmd->add_option("--kind", kind_name, "mse, bce, blur-mse or gt-l1");
    cmd->add_option("--radius", radius, "Box blur radius for blur-mse");
    cmd->add_option("--alpha", alpha, "Blur term weight for blur-mse");
    cmd->add_option("--padding", padding, "Blur padding: zero or circular");
    cmd->add_option("--seed", seed, "Master seed");
    cmd->add_flag("--standardised", ds.standardised,
                  "Compute on standardised data (non-canonical)");
  };

  // gen
  auto *gen = app.add_subcommand("gen", "Write a dataset to an .npy array plus manifest");
  add_dataset_options(gen, ds);
  std::int64_t gen_limit = 1 << 16;
  gen->add_option("--limit", gen_limit, "Refuse datasets with more observations");

  // dist
  auto *dist = app.add_subcommand("dist", "Average traversal distance matrices (CSV + PGM)");
  add_dataset_options(dist, ds);
  add_kind(dist);
  std::int64_t anchors = 1000;
  dist->add_option("--anchors", anchors, "Anchors per factor");

  // importance
  auto *imp = app.add_subcommand("importance", "Factor importance table");
  add_dataset_options(imp, ds);
  add_kind(imp);
  std::int64_t pairs = 50000;
  imp->add_option("--pairs", pairs, "Pairs per factor");

  // cdf
  auto *cdf = app.add_subcommand("cdf", "Distance samples per factor and for random pairs");
  add_dataset_options(cdf, ds);
  add_kind(cdf);
  std::int64_t samples = 10000;
  cdf->add_option("--samples", samples, "Samples per series");

  // train
  auto *train_cmd = app.add_subcommand("train", "Train and evaluate one model");
  std::string config_path;
  std::vector<std::string> overrides;
  bool paper_scale = false;
  std::string run_id = "run";
  train_cmd->add_option("--config", config_path, "key=value config file");
  train_cmd->add_option("--set", overrides, "key=value override (repeatable)");
  train_cmd->add_flag("--paper-scale", paper_scale,
                      "Start from full-size batch, steps and evaluation");
  train_cmd->add_option("--run-id", run_id, "Run directory name");
  // Typed shortcuts for config keys; applied after --config, before --set.
  std::vector<std::pair<std::string, std::string>> train_keys = {
      {"framework", "beta-vae or ada-gvae"}, {"loss", "mse or blur-mse"},
      {"radius", "Box blur radius for blur-mse"}, {"alpha", "Blur term weight"},
      {"padding", "Blur padding: zero or circular"},
      {"beta", "KL weight"}, {"latents", "Latent units"},
      {"steps", "Training steps"}, {"batch", "Batch size"},
      {"seed", "Run seed"}, {"dataset", "xysquares or a manifest dataset name"},
      {"manifest", "Dataset manifest"}, {"spacing", "XYSquares grid spacing"}};
  std::map<std::string, std::string> train_values;
  for (const auto &[key, help] : train_keys)
    train_cmd->add_option_function<std::string>(
        "--" + key, [&train_values, key](const std::string &v) { train_values[key] = v; },
        help);

  // sweep
  auto *sweep = app.add_subcommand("sweep", "Run a grid of training configs");
  std::string grid_path;
  sweep->add_option("grid", grid_path, "Grid file")->required();
  int workers = 0;
  sweep->add_option("--workers", workers, "Override the grid's worker count");

  // eval
  auto *eval = app.add_subcommand("eval", "Score a saved checkpoint");
  std::string ckpt_path;
  eval->add_option("--checkpoint", ckpt_path, "Model checkpoint")->required();
  eval->add_option("--config", config_path, "Config the model was trained with")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const fs::path root = output_root(out_flag);
    auto kind = [&] {
      try {
        return DistanceKind::parse(kind_name, radius, alpha, parse_padding(padding));
      } catch (const std::exception &e) {
        throw UsageError(e.what());
      }
    };

    if (*gen) {
      auto d = open_dataset(ds);
      const auto &data = d.get();
      const auto n = data.space().total();
      if (n > gen_limit)
        throw UsageError("dataset has " + std::to_string(n) +
                         " observations; raise --limit to write it");
      fs::create_directories(root);
      std::vector<float> values;
      values.reserve(static_cast<std::size_t>(n) * data.observation_size());
      for (std::int64_t i = 0; i < n; ++i)
        for (double v : data.observation(i).data)
          values.push_back(static_cast<float>(v));
      const std::string stem = data.name();
      save_npy<float>(root / (stem + ".npy"),
                      {static_cast<std::size_t>(n),
                       static_cast<std::size_t>(data.channels()),
                       static_cast<std::size_t>(data.height()),
                       static_cast<std::size_t>(data.width())},
                      values);
      auto m = open_out(root / (stem + ".manifest"));
      m << "name=" << stem << "\nnpy=" << stem << ".npy\nlayout=NCHW\nfactors=";
      const auto &space = data.space();
      for (std::size_t i = 0; i < space.num_factors(); ++i)
        m << (i ? "," : "") << space.size(i);
      m << "\nfactor_names=";
      for (std::size_t i = 0; i < space.num_factors(); ++i)
        m << (i ? "," : "") << space.name(i);
      m << '\n';
      std::cout << (root / (stem + ".manifest")).string() << '\n';
    } else if (*dist) {
      auto k = kind();
      auto d = open_dataset(ds);
      warn_noncanonical(ds.standardised);
      const auto &data = d.get();
      fs::create_directories(root);
      std::vector<DistanceKind> kinds{DistanceKind::gt_l1()};
      if (k.type != DistanceKind::GtL1)
        kinds.push_back(k);
      for (const auto &kk : kinds)
        for (std::size_t f = 0; f < data.space().num_factors(); ++f) {
          auto m = mean_factor_distance_matrix(data, static_cast<int>(f), kk,
                                               anchors, derive_seed(seed, f),
                                               Exhaustive::Auto, threads);
          std::string stem = "dist_" + kind_tag(kk, ds.standardised) + "_" +
                             data.space().name(f);
          auto csv = open_out(root / (stem + ".csv"));
          write_matrix_csv(csv, m.mean);
          emit_pgm(m.mean, root / (stem + ".pgm"));
          std::cout << stem << ": anchors=" << m.anchors
                    << (m.exhaustive ? " (exhaustive)" : "") << '\n';
        }
    } else if (*imp) {
      auto k = kind();
      auto d = open_dataset(ds);
      warn_noncanonical(ds.standardised);
      const auto &data = d.get();
      if (pairs < 1)
        throw UsageError("--pairs must be >= 1");
      auto report = factor_importance(data, k, pairs, seed, Exhaustive::Auto, threads);
      auto gt = factor_importance(data, DistanceKind::gt_l1(), pairs, seed,
                                  Exhaustive::Auto, threads);
      for (const auto &w : report.warnings)
        std::cerr << "warning: " << w << '\n';
      fs::create_directories(root);
      auto path = root / ("importance_" + kind_tag(k, ds.standardised) + ".csv");
      auto out = open_out(path);
      write_importance_csv(out, report, true);
      if (k.type != DistanceKind::GtL1)
        write_importance_csv(out, gt, false);
      write_importance_csv(std::cout, report, true);
    } else if (*cdf) {
      auto k = kind();
      auto d = open_dataset(ds);
      warn_noncanonical(ds.standardised);
      const auto &data = d.get();
      if (samples < 1)
        throw UsageError("--samples must be >= 1");
      fs::create_directories(root);
      auto out = open_out(root / ("cdf_" + kind_tag(k, ds.standardised) + ".csv"));
      out << "dataset,kind,series,rank,value,cdf\n";
      auto emit = [&](const std::string &series, const std::vector<double> &v) {
        for (std::size_t i = 0; i < v.size(); ++i)
          out << data.name() << ',' << k.to_string() << ',' << series << ','
              << i << ',' << format_number(v[i]) << ','
              << format_number(static_cast<double>(i + 1) / v.size()) << '\n';
      };
      for (std::size_t f = 0; f < data.space().num_factors(); ++f) {
        if (data.space().size(f) < 2) {
          std::cerr << "warning: factor " << data.space().name(f)
                    << " has one value; skipped\n";
          continue;
        }
        emit(data.space().name(f),
             distance_cdf(data, k, static_cast<int>(f), samples, seed,
                          Exhaustive::Auto, threads));
      }
      if (data.space().total() > 1)
        emit("random", distance_cdf(data, k, std::nullopt, samples, seed,
                                    Exhaustive::Auto, threads));
    } else if (*train_cmd || *eval) {
      ExperimentConfig cfg;
      try {
        cfg = paper_scale ? ExperimentConfig::paper_scale()
                          : ExperimentConfig::defaults();
        if (!config_path.empty()) {
          std::ifstream in(config_path);
          if (!in)
            throw std::invalid_argument("cannot open config " + config_path);
          std::string text((std::istreambuf_iterator<char>(in)), {});
          for (const auto &[key, v] : parse_key_values(text))
            cfg.set(key, v);
        }
        const std::map<std::string, std::string> renamed = {
            {"radius", "blur_radius"}, {"alpha", "blur_alpha"},
            {"padding", "blur_padding"}};
        for (const auto &[key, v] : train_values)
          cfg.set(renamed.count(key) ? renamed.at(key) : key, v);
        for (const auto &o : overrides) {
          auto kv = parse_key_values(o);
          if (kv.size() != 1)
            throw std::invalid_argument("--set expects key=value, got '" + o + "'");
          cfg.set(kv[0].first, kv[0].second);
        }
        cfg.validate();
        if (!cfg.dataset.manifest.empty() && !fs::exists(cfg.dataset.manifest))
          throw std::invalid_argument("manifest not found: " +
                                      cfg.dataset.manifest.string());
      } catch (const std::exception &e) {
        throw UsageError(e.what());
      }

      if (*eval) {
        auto model = load_checkpoint(ckpt_path);
        auto mv = make_model_view(cfg);
        if (model.input_dim() != static_cast<int>(mv.view->observation_size()))
          throw UsageError("checkpoint does not match the config's model view");
        auto ev = evaluate(model, *mv.view, cfg);
        RunRecord r;
        r.run_id = fs::path(ckpt_path).parent_path().filename().string();
        r.config = cfg;
        r.mig = ev.mig.score;
        r.dci = ev.dci_score;
        write_scores_csv(std::cout, r);
        if (ev.dci.low_informativeness)
          std::cerr << "note: latents predict the factors poorly (mean R^2 < "
                    << cfg.dci.low_r2 << ")\n";
        return kExitOk;
      }

      auto rec = run_experiment(cfg, run_id, root / run_id);
      if (!rec.ok) {
        std::cerr << "run failed: " << rec.error << '\n';
        return kExitFailure;
      }
      auto out = open_out(root / run_id / "run.csv");
      write_runs_csv(out, {rec});
      write_runs_csv(std::cout, {rec});
    } else if (*sweep) {
      SweepSpec spec;
      try {
        spec = SweepSpec::load(grid_path);
        if (workers > 0)
          spec.workers = workers;
        spec.expand();
      } catch (const std::exception &e) {
        throw UsageError(e.what());
      }
      auto res = run_sweep(spec, root);
      std::cout << res.records.size() << " runs ok, " << res.failures.size()
                << " failed; table: " << (root / "runs.csv").string() << '\n';
      for (const auto &f : res.failures)
        std::cerr << f.run_id << ": " << f.error << '\n';
      return res.failures.empty() ? kExitOk : kExitFailure;
    }
  } catch (const UsageError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
