#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "smc/datagen.hpp"
#include "smc/expandable.hpp"
#include "smc/model.hpp"

namespace smc {

/// Buffered CSV: "# key=value" provenance lines, a header, then rows.
struct CsvTable {
  std::vector<std::pair<std::string, std::string>> provenance;
  std::string header;
  std::vector<std::string> rows;

  std::string render() const;
};

/// Data rows of a rendered CSV, split into fields; comment lines and the
/// header are skipped.
std::vector<std::vector<std::string>> parse_csv_rows(std::string_view text);

/// Fixed six-decimal formatting used in every CSV; infinities print as "inf".
std::string csv_number(double v);

/// Hyperparameters of one run: defaults overlaid with overrides. Keys the
/// experiment does not know are rejected.
class Settings {
 public:
  Settings(std::map<std::string, std::string> defaults, const std::map<std::string, std::string>& overrides);

  const std::string& text(const std::string& key) const;
  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::vector<int> ints(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;
  std::vector<std::string> words(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct ExperimentSpec {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::map<std::string, std::string> overrides;
  std::string output;
};

std::vector<std::string> experiment_names();

/// Default hyperparameters of an experiment (InvalidInput for unknown names).
std::map<std::string, std::string> experiment_defaults(const std::string& name);

/// Parses "key=value" lines ('#' comments allowed). The keys name, seeds and
/// out fill the spec; everything else becomes an override.
ExperimentSpec parse_spec_text(std::string_view text);

/// Throws InvalidInput for an unknown name, empty seeds or unknown keys.
CsvTable run_experiment(const ExperimentSpec& spec);

CsvTable run_incremental(const ExperimentSpec& spec);
CsvTable run_split_sweep(const ExperimentSpec& spec);
CsvTable run_cross_task(const ExperimentSpec& spec);
CsvTable run_cross_domain(const ExperimentSpec& spec);
CsvTable run_snr_sweep(const ExperimentSpec& spec);
CsvTable run_distribution_demo(const ExperimentSpec& spec);

// Shared pipeline pieces (also used by the CLI).

/// Stable per-purpose seed derived from a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

struct BaseTraining {
  std::size_t epochs = 15;
  double lr = 0.05;
  std::size_t batch = 32;
};

/// Toy classifier trained on a dataset whose classes give the logit order;
/// parameters are rounded to 32-bit afterwards so the model survives the
/// wire unchanged.
ModelGraph train_base_model(const ShapeDataset& train_set, const BaseTraining& cfg, std::uint64_t seed);

}  // namespace smc
