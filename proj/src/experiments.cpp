#include "vaedist/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "vaedist/parallel.hpp"
#include "vaedist/random.hpp"
#include "vaedist/report_io.hpp"

namespace vaedist {

namespace {

constexpr const char *kVersion = "1.0.0";

std::string trim(const std::string &s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos)
    return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty())
      out.push_back(t);
  return out;
}

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T> T parse_number(const std::string &key, const std::string &v) {
  try {
    std::size_t used = 0;
    T out;
    if constexpr (std::is_same_v<T, double>)
      out = std::stod(v, &used);
    else if constexpr (std::is_same_v<T, std::uint64_t>)
      out = std::stoull(v, &used);
    else
      out = static_cast<T>(std::stol(v, &used));
    if (used != v.size())
      throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception &) {
    throw std::invalid_argument("bad value '" + v + "' for key '" + key + "'");
  }
}

std::uint64_t fnv1a(const std::string &s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

} // namespace

// ---------------------------------------------------------------------------
// Config

std::unique_ptr<GroundTruthDataset> DatasetSpec::open() const {
  if (!manifest.empty())
    return open_manifest(DatasetManifest::load(manifest));
  if (name != "xysquares")
    throw std::invalid_argument("unknown dataset '" + name +
                                "'; use xysquares or a manifest");
  return std::make_unique<XYSquares>(xysquares);
}

std::string DatasetSpec::label() const {
  if (!manifest.empty())
    return name;
  const auto &p = xysquares;
  return "xysquares(n=" + std::to_string(p.num_squares) +
         ";img=" + std::to_string(p.image_size) +
         ";sq=" + std::to_string(p.square_size) +
         ";grid=" + std::to_string(p.grid_points) +
         ";s=" + std::to_string(p.spacing) + ")";
}

ExperimentConfig ExperimentConfig::defaults() { return {}; }

ExperimentConfig ExperimentConfig::paper_scale() {
  ExperimentConfig c;
  c.train.batch = 256;
  c.train.steps = 115200;
  c.eval_samples = 10000;
  c.model_size = 64;
  return c;
}

std::vector<std::pair<std::string, std::string>>
parse_key_values(const std::string &text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#')
      continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("line " + std::to_string(lineno) +
                                  ": expected key=value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

void ExperimentConfig::set(const std::string &key, const std::string &v) {
  auto &p = dataset.xysquares;
  auto &t = train;
  if (key == "dataset") {
    dataset.name = v;
  } else if (key == "manifest") {
    dataset.manifest = v;
    if (!v.empty() && dataset.name == "xysquares")
      dataset.name = std::filesystem::path(v).stem().string();
  } else if (key == "image_size") {
    p.image_size = parse_number<int>(key, v);
  } else if (key == "square_size") {
    p.square_size = parse_number<int>(key, v);
  } else if (key == "grid_points") {
    p.grid_points = parse_number<int>(key, v);
  } else if (key == "spacing") {
    p.spacing = parse_number<int>(key, v);
  } else if (key == "num_squares") {
    p.num_squares = parse_number<int>(key, v);
  } else if (key == "framework") {
    t.framework = parse_framework(v);
  } else if (key == "loss") {
    if (v == "mse")
      t.blur_loss = false;
    else if (v == "blur-mse")
      t.blur_loss = true;
    else
      throw std::invalid_argument("loss must be mse or blur-mse");
  } else if (key == "blur_radius") {
    t.overlap.radius = parse_number<int>(key, v);
  } else if (key == "blur_alpha") {
    t.overlap.alpha = parse_number<double>(key, v);
  } else if (key == "blur_padding") {
    t.overlap.padding = parse_padding(v);
  } else if (key == "beta") {
    t.beta = parse_number<double>(key, v);
  } else if (key == "latents") {
    t.latents = parse_number<int>(key, v);
  } else if (key == "hidden") {
    t.hidden = parse_number<int>(key, v);
  } else if (key == "lr") {
    t.lr = parse_number<double>(key, v);
  } else if (key == "batch") {
    t.batch = parse_number<int>(key, v);
  } else if (key == "steps") {
    t.steps = parse_number<int>(key, v);
  } else if (key == "seed") {
    t.seed = parse_number<std::uint64_t>(key, v);
  } else if (key == "log_every") {
    t.log_every = parse_number<int>(key, v);
  } else if (key == "model_size") {
    model_size = parse_number<int>(key, v);
  } else if (key == "eval_samples") {
    eval_samples = parse_number<int>(key, v);
  } else if (key == "mig_bins") {
    mig_bins = parse_number<int>(key, v);
  } else if (key == "dci_trees") {
    dci.trees = parse_number<int>(key, v);
  } else if (key == "dci_depth") {
    dci.max_depth = parse_number<int>(key, v);
  } else {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

std::map<std::string, std::string> ExperimentConfig::to_map() const {
  const auto &p = dataset.xysquares;
  const auto &t = train;
  std::map<std::string, std::string> m{
      {"dataset", dataset.name},
      {"framework", to_string(t.framework)},
      {"loss", t.blur_loss ? "blur-mse" : "mse"},
      {"beta", exact(t.beta)},
      {"latents", std::to_string(t.latents)},
      {"hidden", std::to_string(t.hidden)},
      {"lr", exact(t.lr)},
      {"batch", std::to_string(t.batch)},
      {"steps", std::to_string(t.steps)},
      {"seed", std::to_string(t.seed)},
      {"log_every", std::to_string(t.log_every)},
      {"model_size", std::to_string(model_size)},
      {"eval_samples", std::to_string(eval_samples)},
      {"mig_bins", std::to_string(mig_bins)},
      {"dci_trees", std::to_string(dci.trees)},
      {"dci_depth", std::to_string(dci.max_depth)},
  };
  if (dataset.manifest.empty()) {
    m["image_size"] = std::to_string(p.image_size);
    m["square_size"] = std::to_string(p.square_size);
    m["grid_points"] = std::to_string(p.grid_points);
    m["spacing"] = std::to_string(p.spacing);
    m["num_squares"] = std::to_string(p.num_squares);
  } else {
    m["manifest"] = dataset.manifest.string();
  }
  if (t.blur_loss) {
    m["blur_radius"] = std::to_string(t.overlap.radius);
    m["blur_alpha"] = exact(t.overlap.alpha);
    m["blur_padding"] = to_string(t.overlap.padding);
  }
  return m;
}

std::string ExperimentConfig::serialise() const {
  std::string s;
  for (const auto &[k, v] : to_map())
    s += k + "=" + v + "\n";
  return s;
}

ExperimentConfig ExperimentConfig::parse(const std::string &text) {
  ExperimentConfig c;
  for (const auto &[k, v] : parse_key_values(text))
    c.set(k, v);
  c.validate();
  return c;
}

static std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path &path) {
  return parse(read_file(path));
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(serialise()); }

void ExperimentConfig::validate() const {
  train.validate();
  if (train.steps < 1)
    throw std::invalid_argument("steps must be >= 1");
  if (dataset.manifest.empty())
    dataset.xysquares.validate();
  if (model_size < 0)
    throw std::invalid_argument("model_size must be >= 0");
  if (eval_samples < 50)
    throw std::invalid_argument("eval_samples must be >= 50");
  if (mig_bins < 2)
    throw std::invalid_argument("mig_bins must be >= 2");
  if (dci.trees < 1 || dci.max_depth < 1)
    throw std::invalid_argument("dci_trees and dci_depth must be >= 1");
  if (train.latents < 2)
    throw std::invalid_argument("MIG evaluation needs latents >= 2");
}

int ExperimentConfig::resolved_model_size(const GroundTruthDataset &ds) const {
  if (model_size > 0)
    return model_size;
  int side = std::max(ds.height(), ds.width());
  return side <= 32 ? side : 24;
}

// ---------------------------------------------------------------------------
// Running

ModelView make_model_view(const ExperimentConfig &cfg) {
  ModelView mv;
  mv.base = cfg.dataset.open();
  const int size = cfg.resolved_model_size(*mv.base);
  std::optional<ChannelStats> stats;
  if (size == mv.base->height() && size == mv.base->width())
    stats = mv.base->known_stats();
  if (!stats) {
    // Statistics of the resized observations, from a fixed stream so every
    // run on the same dataset standardises identically.
    PreprocessedDataset resized(*mv.base, size, size, std::nullopt);
    auto rng = make_rng(0x57a75, 0);
    std::int64_t n = resized.space().total() <= 4096 ? 0 : 10000;
    stats = channel_stats(resized, n, rng);
  }
  mv.view = std::make_unique<PreprocessedDataset>(*mv.base, size, size, stats);
  return mv;
}

RepresentationTable encode_table(const MlpVae &model,
                                 const GroundTruthDataset &view, int samples,
                                 std::uint64_t seed) {
  const auto &space = view.space();
  auto rng = make_rng(seed, 2);
  RepresentationTable t;
  t.codes.resize(samples, model.latents());
  t.factors.resize(samples, static_cast<Eigen::Index>(space.num_factors()));
  TrainingData data(view, 0);
  constexpr int kBlock = 1024;
  for (int start = 0; start < samples; start += kBlock) {
    int n = std::min(kBlock, samples - start);
    std::vector<FactorPos> pos(n);
    for (int i = 0; i < n; ++i) {
      pos[i] = space.sample_pos(rng);
      for (std::size_t k = 0; k < space.num_factors(); ++k)
        t.factors(start + i, static_cast<Eigen::Index>(k)) = pos[i][k];
    }
    auto dist = model.encode(data.batch(pos));
    t.codes.middleRows(start, n) = dist.mu.transpose();
  }
  return t;
}

Evaluation evaluate(const MlpVae &model, const GroundTruthDataset &view,
                    const ExperimentConfig &cfg) {
  auto table = encode_table(model, view, cfg.eval_samples, cfg.train.seed);
  Evaluation e;
  e.mig = mig_score(table, cfg.mig_bins);
  DciParams dp = cfg.dci;
  dp.seed = derive_seed(cfg.train.seed, 3);
  e.dci = dci_importance(table, dp);
  e.dci_score = e.dci.importance.sum() > 0.0 ? dci_disentanglement(e.dci.importance)
                                             : 0.0;
  return e;
}

std::string provenance_string(std::uint64_t config_hash) {
  return std::string("vaedist-") + kVersion + "+cfg." + hex(config_hash);
}

void write_scores_csv(std::ostream &out, const RunRecord &r) {
  out << "run_id,metric,value,bins,dci_trees,dci_depth\n";
  const auto &c = r.config;
  auto row = [&](const char *metric, double v) {
    out << r.run_id << ',' << metric << ',' << format_number(v) << ','
        << c.mig_bins << ',' << c.dci.trees << ',' << c.dci.max_depth << '\n';
  };
  row("mig", r.mig);
  row("dci_disentanglement", r.dci);
}

RunRecord run_experiment(const ExperimentConfig &cfg, const std::string &run_id,
                         const std::optional<std::filesystem::path> &out_dir) {
  auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.run_id = run_id;
  rec.config = cfg;
  rec.config_hash = cfg.hash();
  rec.provenance = provenance_string(rec.config_hash);
  try {
    cfg.validate();
    if (out_dir) {
      std::filesystem::create_directories(*out_dir);
      std::ofstream(*out_dir / "config.txt") << cfg.serialise();
    }
    auto mv = make_model_view(cfg);
    TrainingData data(*mv.view);
    auto result = train(data, cfg.train);
    const auto &last = result.trace.back();
    rec.recon = last.recon;
    rec.kl = last.kl;
    rec.total = last.total;
    auto ev = evaluate(result.model, *mv.view, cfg);
    rec.mig = ev.mig.score;
    rec.dci = ev.dci_score;
    rec.ok = true;
    if (out_dir) {
      std::ofstream trace(*out_dir / "trace.csv");
      write_trace_csv(trace, result.trace,
                      cfg.train.framework == Framework::AdaGVae);
      std::ofstream scores(*out_dir / "scores.csv");
      write_scores_csv(scores, rec);
      save_checkpoint(result.model, *out_dir / "model.ckpt");
    }
  } catch (const std::exception &e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Sweeps

SweepSpec SweepSpec::parse(const std::string &text) {
  SweepSpec s;
  for (const auto &[k, v] : parse_key_values(text)) {
    if (k == "repeats") {
      s.repeats = parse_number<int>(k, v);
    } else if (k == "workers") {
      s.workers = parse_number<int>(k, v);
    } else if (v.find(',') != std::string::npos) {
      auto values = split_list(v);
      for (const auto &x : values) {
        ExperimentConfig probe = s.base;
        probe.set(k, x);
      }
      s.axes.emplace_back(k, std::move(values));
    } else {
      s.base.set(k, v);
    }
  }
  if (s.repeats < 1 || s.workers < 1)
    throw std::invalid_argument("repeats and workers must be >= 1");
  return s;
}

SweepSpec SweepSpec::load(const std::filesystem::path &path) {
  return parse(read_file(path));
}

std::vector<ExperimentConfig> SweepSpec::expand() const {
  std::vector<ExperimentConfig> points{base};
  for (const auto &[key, values] : axes) {
    std::vector<ExperimentConfig> next;
    for (const auto &p : points)
      for (const auto &v : values) {
        ExperimentConfig c = p;
        c.set(key, v);
        next.push_back(std::move(c));
      }
    points = std::move(next);
  }
  std::vector<ExperimentConfig> runs;
  for (const auto &p : points) {
    p.validate();
    const std::uint64_t point_hash = p.hash();
    for (int r = 0; r < repeats; ++r) {
      ExperimentConfig c = p;
      c.train.seed = derive_seed(p.train.seed, point_hash ^ mix64(static_cast<std::uint64_t>(r)));
      runs.push_back(std::move(c));
    }
  }
  return runs;
}

static bool record_order(const RunRecord &a, const RunRecord &b) {
  auto key = [](const RunRecord &r) {
    return std::make_tuple(r.config.dataset.label(),
                           to_string(r.config.train.framework),
                           r.config.train.beta, std::cref(r.run_id));
  };
  return key(a) < key(b);
}

SweepResult run_sweep(const SweepSpec &spec,
                      const std::optional<std::filesystem::path> &out_dir) {
  auto runs = spec.expand();
  std::vector<RunRecord> records(runs.size());
  parallel_for(runs.size(), static_cast<unsigned>(spec.workers), [&](std::size_t i) {
    char id[32];
    std::snprintf(id, sizeof id, "run-%04zu", i);
    std::optional<std::filesystem::path> dir;
    if (out_dir)
      dir = *out_dir / id;
    records[i] = run_experiment(runs[i], id, dir);
  });

  SweepResult res;
  for (auto &r : records)
    (r.ok ? res.records : res.failures).push_back(std::move(r));
  std::sort(res.records.begin(), res.records.end(), record_order);
  std::sort(res.failures.begin(), res.failures.end(), record_order);

  if (out_dir) {
    std::ofstream runs_csv(*out_dir / "runs.csv");
    write_runs_csv(runs_csv, res.records);
    std::ofstream timing(*out_dir / "timings.csv");
    write_timings_csv(timing, res.records);
    std::ofstream failed(*out_dir / "failures.csv");
    failed << "run_id,config_hash,error\n";
    for (const auto &f : res.failures) {
      std::string msg = f.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      failed << f.run_id << ',' << hex(f.config_hash) << ',' << msg << '\n';
    }
  }
  return res;
}

void write_runs_csv(std::ostream &out, const std::vector<RunRecord> &records) {
  out << "run_id,config_hash,dataset,framework,loss,beta,latents,steps,seed,"
         "recon,kl,total,mig,dci,provenance\n";
  std::vector<const RunRecord *> sorted;
  for (const auto &r : records)
    sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](auto *a, auto *b) { return record_order(*a, *b); });
  for (const auto *r : sorted) {
    const auto &t = r->config.train;
    out << r->run_id << ',' << hex(r->config_hash) << ','
        << r->config.dataset.label() << ',' << to_string(t.framework) << ','
        << (t.blur_loss ? "blur-mse" : "mse") << ',' << format_number(t.beta)
        << ',' << t.latents << ',' << t.steps << ',' << t.seed << ','
        << format_number(r->recon) << ',' << format_number(r->kl) << ','
        << format_number(r->total) << ',' << format_number(r->mig) << ','
        << format_number(r->dci) << ',' << r->provenance << '\n';
  }
}

void write_timings_csv(std::ostream &out, const std::vector<RunRecord> &records) {
  out << "run_id,wall_seconds\n";
  for (const auto &r : records)
    out << r.run_id << ',' << format_number(r.wall_seconds) << '\n';
}

} // namespace vaedist
