#include "smc/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <sstream>

#include "smc/channel.hpp"
#include "smc/distribution.hpp"
#include "smc/error.hpp"
#include "smc/package_io.hpp"
#include "smc/svcca.hpp"
#include "smc/transport.hpp"

namespace smc {
namespace {

using Defaults = std::map<std::string, std::string>;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_number(const std::string& key, const std::string& v) {
  if (v == "inf" || v == "+inf") return HUGE_VAL;
  if (v == "-inf") return -HUGE_VAL;
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && ptr == v.data() + v.size(), ErrorCode::InvalidInput,
          fmt::format("{}: '{}' is not a number", key, v));
  return out;
}

const Defaults& common_defaults() {
  static const Defaults d = {
      {"train_per_class", "200"}, {"test_per_class", "100"}, {"base_epochs", "15"}, {"base_lr", "0.05"},
      {"batch", "32"},           {"old_classes", "0,1,2,3,4"}, {"new_classes", "5,6,7,8,9"},
      {"memory_per_class", "20"}, {"smc_epochs", "20"},     {"smc_lr", "0.05"},  {"lambda", "0.01"},
      {"beta", "0"},             {"split", "block3"},
  };
  return d;
}

Defaults with(Defaults extra) {
  Defaults d = common_defaults();
  for (auto& [k, v] : extra) d[k] = std::move(v);
  return d;
}

// Everything an experiment seed shares: data, the trained base and its memory.
struct World {
  std::uint64_t seed = 0;
  std::vector<int> old_classes, new_classes, all_classes;
  ShapeDataset base_train;
  ModelGraph base;
  RehearsalMemory memory;
};

BaseTraining base_training(const Settings& s) {
  return {s.count("base_epochs"), s.number("base_lr"), s.count("batch")};
}

World make_world(const Settings& s, std::uint64_t seed) {
  World w;
  w.seed = seed;
  w.old_classes = s.ints("old_classes");
  w.new_classes = s.ints("new_classes");
  w.all_classes = w.old_classes;
  w.all_classes.insert(w.all_classes.end(), w.new_classes.begin(), w.new_classes.end());
  w.base_train = generate(w.old_classes, s.count("train_per_class"), Domain::A, derive_seed(seed, "train"));
  w.base = train_base_model(w.base_train, base_training(s), derive_seed(seed, "base"));
  w.memory = split_rehearsal(w.base_train, s.count("memory_per_class") * w.old_classes.size(), derive_seed(seed, "memory"));
  return w;
}

ShapeDataset test_set(const Settings& s, const std::vector<int>& classes, Domain domain, std::uint64_t seed) {
  return generate(classes, s.count("test_per_class"), domain, derive_seed(seed, "test"));
}

TrainConfig smc_config(const Settings& s, std::uint64_t seed) {
  TrainConfig tc;
  tc.lambda = s.number("lambda");
  tc.beta = s.number("beta");
  tc.lr = s.number("smc_lr");
  tc.epochs = s.count("smc_epochs");
  tc.batch = s.count("batch");
  tc.seed = derive_seed(seed, "smc");
  return tc;
}

ExpandedModel train_component(const World& w, const std::string& split, const SmcKind& kind, const ShapeDataset& data,
                              const TrainConfig& tc) {
  ExpandedModel em = build_expanded(w.base, split_after(w.base, split), kind, RngStream{w.seed, 0}.derive("smc-init"));
  train_smc(em, data, w.memory, tc);
  return em;
}

SmcKind incremental_kind(const World& w) { return {SmcVariant::incremental, w.old_classes, w.new_classes}; }

ModelGraph train_full_model(const Settings& s, const World& w) {
  const ShapeDataset all = generate(w.all_classes, s.count("train_per_class"), Domain::A, derive_seed(w.seed, "train"));
  return train_base_model(all, base_training(s), derive_seed(w.seed, "full"));
}

std::size_t package_bytes(const ExpandedModel& em) { return encode_package(extract_smc(em)).size(); }

std::string join(const std::vector<std::uint64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

CsvTable start_table(const ExperimentSpec& spec, const Settings& s, std::string header) {
  CsvTable t;
  t.provenance.emplace_back("experiment", spec.name);
  t.provenance.emplace_back("seeds", join(spec.seeds));
  for (const auto& [k, v] : s.values()) t.provenance.emplace_back(k, v);
  t.header = std::move(header);
  return t;
}

std::vector<std::uint64_t> sorted_seeds(const ExperimentSpec& spec) {
  require(!spec.seeds.empty(), ErrorCode::InvalidInput, "experiment needs at least one seed");
  auto seeds = spec.seeds;
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  return seeds;
}

}  // namespace

Settings::Settings(std::map<std::string, std::string> defaults, const std::map<std::string, std::string>& overrides)
    : values_(std::move(defaults)) {
  for (const auto& [k, v] : overrides) {
    auto it = values_.find(k);
    require(it != values_.end(), ErrorCode::InvalidInput, fmt::format("unknown setting '{}'", k));
    it->second = v;
  }
}

const std::string& Settings::text(const std::string& key) const {
  auto it = values_.find(key);
  require(it != values_.end(), ErrorCode::InvalidInput, fmt::format("missing setting '{}'", key));
  return it->second;
}

double Settings::number(const std::string& key) const { return parse_number(key, text(key)); }

std::size_t Settings::count(const std::string& key) const {
  const double v = number(key);
  require(v >= 0 && std::floor(v) == v && std::isfinite(v), ErrorCode::InvalidInput,
          fmt::format("{} must be a non-negative integer", key));
  return static_cast<std::size_t>(v);
}

std::vector<int> Settings::ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& w : split_list(text(key))) {
    const double v = parse_number(key, w);
    require(std::floor(v) == v, ErrorCode::InvalidInput, fmt::format("{}: '{}' is not an integer", key, w));
    out.push_back(static_cast<int>(v));
  }
  require(!out.empty(), ErrorCode::InvalidInput, fmt::format("{} is empty", key));
  return out;
}

std::vector<double> Settings::numbers(const std::string& key) const {
  std::vector<double> out;
  for (const auto& w : split_list(text(key))) out.push_back(parse_number(key, w));
  require(!out.empty(), ErrorCode::InvalidInput, fmt::format("{} is empty", key));
  return out;
}

std::vector<std::string> Settings::words(const std::string& key) const {
  auto out = split_list(text(key));
  require(!out.empty(), ErrorCode::InvalidInput, fmt::format("{} is empty", key));
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  return fnv1a64(purpose) ^ (seed * 0x9E3779B97F4A7C15ULL);
}

ModelGraph train_base_model(const ShapeDataset& train_set, const BaseTraining& cfg, std::uint64_t seed) {
  ModelGraph model = make_toy_classifier(train_set.classes.size(), RngStream{seed, 0}.derive("init"));
  SgdConfig sgd;
  sgd.lr = cfg.lr;
  sgd.epochs = cfg.epochs;
  sgd.batch = cfg.batch;
  sgd.shuffle = RngStream{seed, 0}.derive("shuffle");
  train(model, train_set.batch(), classification_loss(map_labels(train_set.labels, train_set.classes)), sgd);
  round_params_to_f32(model.params);
  return model;
}

std::vector<std::string> experiment_names() {
  return {"incremental", "split_sweep", "cross_task", "cross_domain", "snr_sweep", "distribution_demo"};
}

std::map<std::string, std::string> experiment_defaults(const std::string& name) {
  if (name == "incremental") return with({{"lambda_list", "0,0.01"}});
  if (name == "split_sweep") return with({{"rho_t", "0.6"}, {"probe_per_class", "52"}, {"variance_keep", "0.99"}});
  if (name == "cross_task")
    return with({{"tasks", "segmentation,detection"},
                 {"split", "block1"},
                 {"smc_epochs", "40"},
                 {"segmentation_lr", "0.5"},
                 {"detection_lr", "0.05"}});
  if (name == "cross_domain") return with({{"split", "block1"}, {"smc_epochs", "40"}});
  if (name == "snr_sweep")
    return with({{"snr_list", "-2,-1,0,2,5,10,inf"},
                 {"beta_list", "0,0.2"},
                 {"train_seed", "1"},
                 {"power_mode", "per_tensor"},
                 {"finetune_epochs", "6"},
                 {"local_per_class", "20"}});
  if (name == "distribution_demo")
    return with({{"snr_db", "inf"}, {"link_rate", fmt::format("{}", kDefaultLinkRate)}, {"host", "127.0.0.1"}});
  fail(ErrorCode::InvalidInput, fmt::format("unknown experiment '{}'", name));
}

ExperimentSpec parse_spec_text(std::string_view text) {
  ExperimentSpec spec;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    require(eq != std::string::npos, ErrorCode::InvalidInput, fmt::format("line {}: expected key=value", lineno));
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key == "name") {
      spec.name = value;
    } else if (key == "seeds") {
      spec.seeds.clear();
      for (const auto& w : split_list(value)) {
        const double v = parse_number("seeds", w);
        require(v >= 0 && std::floor(v) == v, ErrorCode::InvalidInput, fmt::format("bad seed '{}'", w));
        spec.seeds.push_back(static_cast<std::uint64_t>(v));
      }
    } else if (key == "out") {
      spec.output = value;
    } else {
      spec.overrides[key] = value;
    }
  }
  return spec;
}

CsvTable run_experiment(const ExperimentSpec& spec) {
  if (spec.name == "incremental") return run_incremental(spec);
  if (spec.name == "split_sweep") return run_split_sweep(spec);
  if (spec.name == "cross_task") return run_cross_task(spec);
  if (spec.name == "cross_domain") return run_cross_domain(spec);
  if (spec.name == "snr_sweep") return run_snr_sweep(spec);
  if (spec.name == "distribution_demo") return run_distribution_demo(spec);
  fail(ErrorCode::InvalidInput, fmt::format("unknown experiment '{}'", spec.name));
}

CsvTable run_incremental(const ExperimentSpec& spec) {
  const Settings s(experiment_defaults("incremental"), spec.overrides);
  const auto seeds = sorted_seeds(spec);
  CsvTable t = start_table(spec, s, "seed,lambda,split_point,combined_acc,old_acc,new_acc,component_bytes");
  const std::string split = s.text("split");
  for (auto seed : seeds) {
    const World w = make_world(s, seed);
    const ShapeDataset new_train = generate(w.new_classes, s.count("train_per_class"), Domain::A, derive_seed(seed, "train"));
    const ShapeDataset test_all = test_set(s, w.all_classes, Domain::A, seed);
    const ShapeDataset test_old = test_set(s, w.old_classes, Domain::A, seed);
    const ShapeDataset test_new = test_set(s, w.new_classes, Domain::A, seed);
    for (double lambda : s.numbers("lambda_list")) {
      TrainConfig tc = smc_config(s, seed);
      tc.lambda = lambda;
      const ExpandedModel em = train_component(w, split, incremental_kind(w), new_train, tc);
      t.rows.push_back(fmt::format("{},{},{},{},{},{},{}", seed, csv_number(lambda), split, csv_number(evaluate(em, test_all)),
                                   csv_number(evaluate(em, test_old)), csv_number(evaluate(em, test_new)),
                                   package_bytes(em)));
    }
  }
  return t;
}

CsvTable run_split_sweep(const ExperimentSpec& spec) {
  const Settings s(experiment_defaults("split_sweep"), spec.overrides);
  const auto seeds = sorted_seeds(spec);
  CsvTable t = start_table(spec, s, "split_point,seed,rho1,component_bytes,metric");
  const auto candidates = toy_blocks();
  // rows[depth][seed]; reference rows come first and last.
  std::vector<std::string> base_rows, full_rows;
  std::vector<std::vector<std::string>> sweep_rows(candidates.size());
  for (auto seed : seeds) {
    const World w = make_world(s, seed);
    const ModelGraph full = train_full_model(s, w);
    const ShapeDataset new_train = generate(w.new_classes, s.count("train_per_class"), Domain::A, derive_seed(seed, "train"));
    const ShapeDataset test_all = test_set(s, w.all_classes, Domain::A, seed);
    const ShapeDataset test_old = test_set(s, w.old_classes, Domain::A, seed);
    const ShapeDataset probe = generate(w.all_classes, s.count("probe_per_class"), Domain::A, derive_seed(seed, "probe"));
    const CcaProfile profile = layer_profile(w.base, full, probe.batch(), candidates, s.number("variance_keep"));

    base_rows.push_back(fmt::format("base,{},,{},{}", seed, encode_model({w.base, w.old_classes, Domain::A}).size(),
                                    csv_number(evaluate_classifier(w.base, w.old_classes, test_old))));
    full_rows.push_back(fmt::format("full,{},,{},{}", seed, encode_model({full, w.all_classes, Domain::A}).size(),
                                    csv_number(evaluate_classifier(full, w.all_classes, test_all))));
    std::vector<std::size_t> sizes;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const ExpandedModel em = train_component(w, candidates[c], incremental_kind(w), new_train, smc_config(s, seed));
      sizes.push_back(package_bytes(em));
      sweep_rows[c].push_back(fmt::format("{},{},{},{},{}", candidates[c], seed, csv_number(profile.rho1[c]), sizes.back(),
                                          csv_number(evaluate(em, test_all))));
    }
    const SplitPlan plan = select_split(w.base, profile, s.number("rho_t"), sizes);
    t.provenance.emplace_back(fmt::format("threshold_split.seed{}", seed),
                              plan.split_candidate.empty() ? "none" : plan.split_candidate);
  }
  t.rows = base_rows;
  for (auto& r : sweep_rows) t.rows.insert(t.rows.end(), r.begin(), r.end());
  t.rows.insert(t.rows.end(), full_rows.begin(), full_rows.end());
  return t;
}

CsvTable run_cross_task(const ExperimentSpec& spec) {
  const Settings s(experiment_defaults("cross_task"), spec.overrides);
  const auto seeds = sorted_seeds(spec);
  CsvTable t = start_table(spec, s, "seed,task,split_point,baseline,metric,component_bytes");
  const std::string split = s.text("split");
  std::vector<TaskKind> tasks;
  for (const auto& w : s.words("tasks")) {
    tasks.push_back(task_kind_from_string(w));
    require(tasks.back() != TaskKind::classification, ErrorCode::InvalidInput, "cross_task needs a non-classification task");
  }
  for (auto seed : seeds) {
    const World w = make_world(s, seed);
    const ShapeDataset test = test_set(s, w.old_classes, Domain::A, seed);
    for (TaskKind task : tasks) {
      SmcKind kind{SmcVariant::cross_task, w.old_classes, {}, task};
      // Baseline: untrained head on the frozen base features.
      const ExpandedModel untrained =
          build_expanded(w.base, split_after(w.base, split), kind, RngStream{seed, 0}.derive("smc-init"));
      TrainConfig tc = smc_config(s, seed);
      tc.lr = s.number(fmt::format("{}_lr", to_string(task)));
      const ExpandedModel em = train_component(w, split, kind, w.base_train, tc);
      t.rows.push_back(fmt::format("{},{},{},{},{},{}", seed, to_string(task), split, csv_number(evaluate(untrained, test)),
                                   csv_number(evaluate(em, test)), package_bytes(em)));
    }
  }
  return t;
}

CsvTable run_cross_domain(const ExperimentSpec& spec) {
  const Settings s(experiment_defaults("cross_domain"), spec.overrides);
  const auto seeds = sorted_seeds(spec);
  CsvTable t = start_table(spec, s, "seed,split_point,base_acc_a,base_acc_b,smc_acc_b,component_bytes");
  const std::string split = s.text("split");
  for (auto seed : seeds) {
    const World w = make_world(s, seed);
    const ShapeDataset train_b = generate(w.old_classes, s.count("train_per_class"), Domain::B, derive_seed(seed, "train"));
    const ShapeDataset test_a = test_set(s, w.old_classes, Domain::A, seed);
    const ShapeDataset test_b = test_set(s, w.old_classes, Domain::B, seed);
    SmcKind kind{SmcVariant::cross_domain, w.old_classes, {}, TaskKind::classification, Domain::B};
    const ExpandedModel em = train_component(w, split, kind, train_b, smc_config(s, seed));
    t.rows.push_back(fmt::format("{},{},{},{},{},{}", seed, split, csv_number(evaluate_classifier(w.base, w.old_classes, test_a)),
                                 csv_number(evaluate_classifier(w.base, w.old_classes, test_b)),
                                 csv_number(evaluate(em, test_b)), package_bytes(em)));
  }
  return t;
}

CsvTable run_snr_sweep(const ExperimentSpec& spec) {
  const Settings s(experiment_defaults("snr_sweep"), spec.overrides);
  const auto seeds = sorted_seeds(spec);
  CsvTable t = start_table(spec, s, "snr_db,beta,seed,accuracy");
  const auto snrs = s.numbers("snr_list");
  const auto betas = s.numbers("beta_list");
  const PowerMode power = power_mode_from_string(s.text("power_mode"));

  // One trained component per β, shared by every SNR and noise seed.
  const std::uint64_t train_seed = s.count("train_seed");
  const World w = make_world(s, train_seed);
  const ShapeDataset new_train = generate(w.new_classes, s.count("train_per_class"), Domain::A, derive_seed(train_seed, "train"));
  const ShapeDataset local = generate(w.new_classes, s.count("local_per_class"), Domain::A, derive_seed(train_seed, "edge-local"));
  const ShapeDataset test_all = test_set(s, w.all_classes, Domain::A, train_seed);
  std::vector<ExpandedModel> trained;
  for (double beta : betas) {
    TrainConfig tc = smc_config(s, train_seed);
    tc.beta = beta;
    trained.push_back(train_component(w, s.text("split"), incremental_kind(w), new_train, tc));
  }

  // The edge adapts the received component on its own few new-class samples.
  std::optional<TrainConfig> finetune;
  if (s.count("finetune_epochs") > 0) {
    TrainConfig ft = smc_config(s, train_seed);
    ft.beta = 0.0;
    ft.epochs = s.count("finetune_epochs");
    ft.seed = derive_seed(train_seed, "edge-finetune");
    finetune = ft;
  }

  for (double snr : snrs) {
    for (std::size_t b = 0; b < betas.size(); ++b) {
      for (auto seed : seeds) {
        ExpandedModel rx = transmit_component(trained[b], ChannelConfig{snr, derive_seed(seed, "noise"), power});
        if (finetune) train_smc(rx, local, w.memory, *finetune);
        t.rows.push_back(fmt::format("{},{},{},{}", csv_number(snr), csv_number(betas[b]), seed, csv_number(evaluate(rx, test_all))));
      }
    }
  }
  return t;
}

CsvTable run_distribution_demo(const ExperimentSpec& spec) {
  const Settings s(experiment_defaults("distribution_demo"), spec.overrides);
  const auto seeds = sorted_seeds(spec);
  CsvTable t = start_table(spec, s, "mode,bytes,seconds,snr_db,seed,accuracy");
  const std::string host = s.text("host");
  for (auto seed : seeds) {
    const World w = make_world(s, seed);
    const ModelGraph full = train_full_model(s, w);
    const ShapeDataset new_train = generate(w.new_classes, s.count("train_per_class"), Domain::A, derive_seed(seed, "train"));
    const ShapeDataset test_all = test_set(s, w.all_classes, Domain::A, seed);
    const ExpandedModel em = train_component(w, s.text("split"), incremental_kind(w), new_train, smc_config(s, seed));

    Registry registry;
    registry.add_component(encode_package(extract_smc(em)));
    registry.add_full_model(encode_model({full, w.all_classes, Domain::A}));
    FrameServer server(host, 0, make_handler(registry));
    server.start();

    EdgeConfig edge;
    edge.channel = ChannelConfig{s.number("snr_db"), derive_seed(seed, "noise")};
    edge.link_rate = s.number("link_rate");
    UpdateRequest req;
    req.base_checksum = model_checksum(w.base);
    req.classes = w.new_classes;
    req.edge_id = fmt::format("edge-{}", seed);
    for (bool want_full : {true, false}) {
      req.full_model = want_full;
      const Bytes payload = request_over_socket(host, server.port(), req);
      const EdgeResult r = edge_integrate(w.base, payload, w.memory, edge);
      t.rows.push_back(fmt::format("{},{},{}", r.report.csv_row(), seed, csv_number(r.evaluate(test_all))));
    }
    server.stop();
  }
  return t;
}

}  // namespace smc
