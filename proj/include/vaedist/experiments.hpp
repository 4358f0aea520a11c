#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vaedist/adagvae.hpp"
#include "vaedist/datasets.hpp"
#include "vaedist/metrics.hpp"

namespace vaedist {

/// Which ground-truth dataset to build. `manifest` empty selects XYSquares.
struct DatasetSpec {
  std::string name = "xysquares";
  XYSquaresParams xysquares{};
  std::filesystem::path manifest;

  std::unique_ptr<GroundTruthDataset> open() const;
  std::string label() const;
};

/// One training run. Serialises to flat key=value text; `hash()` is computed
/// over the canonical serialisation so equivalent configs hash equally.
struct ExperimentConfig {
  DatasetSpec dataset;
  TrainConfig train;
  int model_size = 0; // observation side length fed to the model; 0 = auto
  int eval_samples = 5000;
  int mig_bins = 20;
  DciParams dci{};

  static ExperimentConfig defaults();
  static ExperimentConfig paper_scale();

  /// Applies one key=value setting; throws std::invalid_argument on bad input.
  void set(const std::string &key, const std::string &value);
  std::map<std::string, std::string> to_map() const;
  std::string serialise() const;
  static ExperimentConfig parse(const std::string &text);
  static ExperimentConfig load(const std::filesystem::path &path);

  std::uint64_t hash() const;
  void validate() const;
  int resolved_model_size(const GroundTruthDataset &ds) const;
};

/// Reads key=value lines (blank lines and '#' comments ignored).
std::vector<std::pair<std::string, std::string>>
parse_key_values(const std::string &text);

struct Evaluation {
  MigResult mig;
  DciImportance dci;
  double dci_score = 0.0;
};

RepresentationTable encode_table(const MlpVae &model,
                                 const GroundTruthDataset &model_view,
                                 int samples, std::uint64_t seed);
Evaluation evaluate(const MlpVae &model, const GroundTruthDataset &model_view,
                    const ExperimentConfig &cfg);

struct RunRecord {
  std::string run_id;
  std::uint64_t config_hash = 0;
  ExperimentConfig config;
  bool ok = false;
  std::string error;
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double mig = 0.0;
  double dci = 0.0;
  double wall_seconds = 0.0;
  std::string provenance;
};

/// Dataset view the model trains on: resized to model_size and standardised.
struct ModelView {
  std::unique_ptr<GroundTruthDataset> base;
  std::unique_ptr<PreprocessedDataset> view;
};
ModelView make_model_view(const ExperimentConfig &cfg);

/// Trains and evaluates one config. When `out_dir` is set, writes config.txt,
/// trace.csv, scores.csv and model.ckpt there. Divergence yields ok = false.
RunRecord run_experiment(const ExperimentConfig &cfg, const std::string &run_id,
                         const std::optional<std::filesystem::path> &out_dir);

/// Grid file: keys as in ExperimentConfig, any value may be a comma list
/// (Cartesian product), plus `repeats` and `workers`.
struct SweepSpec {
  ExperimentConfig base;
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  int repeats = 1;
  int workers = 1;

  static SweepSpec parse(const std::string &text);
  static SweepSpec load(const std::filesystem::path &path);
  /// Expanded runs. Each run's seed is derived from the master seed, its
  /// grid point and its repeat index, so growing the grid never reseeds
  /// existing runs.
  std::vector<ExperimentConfig> expand() const;
};

struct SweepResult {
  std::vector<RunRecord> records; // successful runs, sorted
  std::vector<RunRecord> failures;
};

SweepResult run_sweep(const SweepSpec &spec,
                      const std::optional<std::filesystem::path> &out_dir);

/// Aggregate table sorted by (dataset, framework, beta, run_id). Excludes
/// wall time so reruns are byte-identical.
void write_runs_csv(std::ostream &out, const std::vector<RunRecord> &records);
void write_timings_csv(std::ostream &out, const std::vector<RunRecord> &records);
void write_scores_csv(std::ostream &out, const RunRecord &record);

std::string provenance_string(std::uint64_t config_hash);

} // namespace vaedist
