// smc: command-line front end of the toolkit.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "smc/channel.hpp"
#include "smc/datagen.hpp"
#include "smc/distribution.hpp"
#include "smc/error.hpp"
#include "smc/expandable.hpp"
#include "smc/experiments.hpp"
#include "smc/package_io.hpp"
#include "smc/svcca.hpp"
#include "smc/transport.hpp"

using namespace smc;

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitTransport = 4;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::NumericalError:
    case ErrorCode::DegenerateRepresentation:
    case ErrorCode::ZeroSignalPower:
      return kExitNumerical;
    case ErrorCode::TransportError:
    case ErrorCode::ProtocolError:
    case ErrorCode::NotAvailable:
      return kExitTransport;
    default:
      return kExitInvalid;
  }
}

struct Global {
  std::uint64_t seed = 1;
  std::string out;
  std::string config;
};

// Text results go to --out when given, stdout otherwise.
void emit(const Global& g, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(g.out, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::InvalidInput, fmt::format("cannot write '{}'", g.out));
  f << text;
}

void emit_bytes(const std::string& path, const Bytes& bytes) {
  require(!path.empty(), ErrorCode::InvalidInput, "--out is required for binary output");
  write_file(path, bytes);
}

std::string read_text(const std::string& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorCode::NotFound, fmt::format("cannot read '{}'", path));
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ModelFile load_model(const std::string& path) { return decode_model(read_file(path)); }

std::vector<int> resolve_classes(const std::vector<std::string>& names) {
  std::vector<int> out;
  for (const auto& n : names) {
    if (!n.empty() && std::all_of(n.begin(), n.end(), [](char c) { return c >= '0' && c <= '9'; }))
      out.push_back(std::stoi(n));
    else
      out.push_back(shape_class_id(n));
  }
  require(!out.empty(), ErrorCode::InvalidInput, "no classes given");
  return out;
}

double parse_snr(const std::string& s) {
  if (s == "inf" || s == "+inf") return HUGE_VAL;
  return std::stod(s);
}

std::vector<double> parse_snrs(const std::vector<std::string>& v) {
  std::vector<double> out;
  for (const auto& s : v) out.push_back(parse_snr(s));
  return out;
}

// Options shared by the commands that train a component.
struct ComponentOptions {
  std::string base;
  std::string kind = "incremental";
  std::vector<std::string> new_classes{"5", "6", "7", "8", "9"};
  std::string task = "segmentation";
  std::string domain = "B";
  std::string split = "block3";
  double lambda = 0.01;
  double beta = 0.0;
  double lr = 0.05;
  std::size_t epochs = 20;
  std::size_t n = 200;
  std::size_t memory_per_class = 20;
  std::string penalty = "analytic";

  void add_to(CLI::App* cmd) {
    cmd->add_option("--base", base, "base model file")->required();
    cmd->add_option("--kind", kind, "incremental, cross_task or cross_domain");
    cmd->add_option("--new-classes", new_classes, "classes added by an incremental component")->delimiter(',');
    cmd->add_option("--task", task, "segmentation or detection (cross_task)");
    cmd->add_option("--domain", domain, "target domain (cross_domain)");
    cmd->add_option("--split", split, "split candidate (block1..block4 or a layer)");
    cmd->add_option("--lambda", lambda, "semantic-distance weight");
    cmd->add_option("--beta", beta, "gradient-norm penalty weight");
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--n", n, "training samples per class");
    cmd->add_option("--memory-per-class", memory_per_class, "rehearsal samples per old class");
    cmd->add_option("--penalty-mode", penalty, "analytic or finite_diff");
  }

  SmcKind smc_kind(const ModelFile& base_file) const {
    SmcKind k;
    k.variant = smc_variant_from_string(kind);
    k.old_classes = base_file.classes;
    if (k.variant == SmcVariant::incremental) k.new_classes = resolve_classes(new_classes);
    if (k.variant == SmcVariant::cross_task) k.task = task_kind_from_string(task);
    if (k.variant == SmcVariant::cross_domain) k.domain = domain_from_string(domain);
    return k;
  }

  TrainConfig train_config(std::uint64_t seed) const {
    TrainConfig tc;
    tc.lambda = lambda;
    tc.beta = beta;
    tc.lr = lr;
    tc.epochs = epochs;
    tc.seed = derive_seed(seed, "smc");
    tc.penalty_mode = penalty_mode_from_string(penalty);
    return tc;
  }
};

// Training data of a component and the rehearsal memory drawn from the base
// model's classes, both regenerated from the seed.
struct ComponentData {
  ShapeDataset train;
  RehearsalMemory memory;
};

ComponentData component_data(const ComponentOptions& o, const ModelFile& base, const SmcKind& kind, std::uint64_t seed) {
  const auto train_seed = derive_seed(seed, "train");
  ComponentData d;
  const ShapeDataset old = generate(base.classes, o.n, base.domain, train_seed);
  d.memory = split_rehearsal(old, o.memory_per_class * base.classes.size(), derive_seed(seed, "memory"));
  switch (kind.variant) {
    case SmcVariant::incremental:
      d.train = generate(kind.new_classes, o.n, Domain::A, train_seed);
      break;
    case SmcVariant::cross_task:
      d.train = old;
      break;
    case SmcVariant::cross_domain:
      d.train = generate(base.classes, o.n, kind.domain, train_seed);
      break;
  }
  return d;
}

// Evaluation set matching a component's kind.
ShapeDataset eval_set(const SmcKind& kind, std::size_t n, std::uint64_t seed) {
  const auto test_seed = derive_seed(seed, "test");
  switch (kind.variant) {
    case SmcVariant::incremental:
      return generate(kind.class_order(), n, Domain::A, test_seed);
    case SmcVariant::cross_task:
      return generate(kind.old_classes, n, Domain::A, test_seed);
    case SmcVariant::cross_domain:
      return generate(kind.old_classes, n, kind.domain, test_seed);
  }
  return {};
}

ExpandedModel build_component(const ModelFile& base, const ComponentOptions& o, std::uint64_t seed) {
  return build_expanded(base.model, split_after(base.model, o.split), o.smc_kind(base), RngStream{seed, 0}.derive("smc-init"));
}

// Prepends "--key=value" tokens from a key=value file right after the
// subcommand name so explicit flags (parsed later) win.
std::vector<std::string> with_config(std::vector<std::string> args, const std::string& config_path,
                                     const std::vector<std::string>& subcommands) {
  if (config_path.empty()) return args;
  auto it = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
    return std::find(subcommands.begin(), subcommands.end(), a) != subcommands.end();
  });
  if (it == args.end() || *it == "experiment") return args;
  std::vector<std::string> extra;
  std::istringstream in(read_text(config_path));
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::InvalidInput, fmt::format("config line '{}' is not key=value", line));
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    extra.push_back(fmt::format("--{}={}", trim(line.substr(0, eq)), trim(line.substr(eq + 1))));
  }
  args.insert(it + 1, extra.begin(), extra.end());
  return args;
}

int run(int argc, char** argv) {
  CLI::App app{"Semantic model component toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  Global g;
  app.add_option("--seed", g.seed, "run seed")->capture_default_str();
  app.add_option("--out", g.out, "output file (stdout for CSV when omitted)");
  app.add_option("--config", g.config, "key=value file supplying options (for 'experiment': name, seeds, out and overrides)");

  // gen
  auto* gen = app.add_subcommand("gen", "render a synthetic shape dataset");
  std::vector<std::string> gen_classes{"0", "1", "2", "3", "4"};
  std::size_t gen_n = 100;
  std::string gen_domain = "A";
  gen->add_option("--classes", gen_classes, "class ids or names")->delimiter(',');
  gen->add_option("--n", gen_n, "samples per class");
  gen->add_option("--domain", gen_domain, "A or B");

  // train-base
  auto* tb = app.add_subcommand("train-base", "train a toy classifier");
  std::vector<std::string> tb_classes{"0", "1", "2", "3", "4"};
  std::size_t tb_n = 200;
  std::string tb_data, tb_tag = "base";
  BaseTraining tb_cfg;
  tb->add_option("--classes", tb_classes, "class ids or names")->delimiter(',');
  tb->add_option("--n", tb_n, "samples per class");
  tb->add_option("--data", tb_data, "train on a dataset file instead of generating one");
  tb->add_option("--epochs", tb_cfg.epochs, "epochs");
  tb->add_option("--lr", tb_cfg.lr, "learning rate");
  tb->add_option("--tag", tb_tag, "label mixed into the model's init seed (base, full, ...)");

  // analyze-cca
  auto* cca = app.add_subcommand("analyze-cca", "per-block similarity of two models");
  std::string cca_a, cca_b;
  std::size_t cca_probe = 52;
  double cca_keep = kDefaultVarianceKeep, cca_rho_t = 0.6;
  cca->add_option("--model-a", cca_a, "model the split applies to")->required();
  cca->add_option("--model-b", cca_b, "reference model")->required();
  cca->add_option("--probe-per-class", cca_probe, "probe samples per class");
  cca->add_option("--variance-keep", cca_keep, "SVD variance kept");
  cca->add_option("--rho-t", cca_rho_t, "similarity threshold for the suggested split");

  // train-smc
  auto* ts = app.add_subcommand("train-smc", "train a component on a base model");
  ComponentOptions ts_opt;
  std::string ts_package;
  ts_opt.add_to(ts);
  ts->add_option("--package", ts_package, "where to write the component")->required();

  // apply-smc
  auto* ap = app.add_subcommand("apply-smc", "attach a component to a base model and check it");
  std::string ap_base, ap_package;
  bool ap_force = false;
  ap->add_option("--base", ap_base, "base model file")->required();
  ap->add_option("--package", ap_package, "component file")->required();
  ap->add_flag("--force", ap_force, "skip the base checksum check");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a base model or base+component");
  std::string ev_base, ev_package;
  std::size_t ev_n = 100;
  std::vector<std::string> ev_classes;
  std::string ev_domain = "A";
  ev->add_option("--base", ev_base, "base model file")->required();
  ev->add_option("--package", ev_package, "component file");
  ev->add_option("--n", ev_n, "test samples per class");
  ev->add_option("--classes", ev_classes, "test classes for a plain model")->delimiter(',');
  ev->add_option("--domain", ev_domain, "test domain for a plain model");

  // channel-sweep
  auto* cs = app.add_subcommand("channel-sweep", "accuracy and output disturbance after a noisy channel");
  ComponentOptions cs_opt;
  std::vector<std::string> cs_snrs{"-2", "0", "5", "10", "inf"};
  std::vector<double> cs_betas{0.0, 0.2};
  std::size_t cs_trials = 5, cs_probe = 64, cs_test = 100;
  std::string cs_power = "per_tensor";
  cs_opt.add_to(cs);
  cs->add_option("--snr-list", cs_snrs, "SNRs in dB")->delimiter(',');
  cs->add_option("--beta-list", cs_betas, "penalty weights")->delimiter(',');
  cs->add_option("--trials", cs_trials, "noise draws per cell");
  cs->add_option("--probe", cs_probe, "samples used for the disturbance bound");
  cs->add_option("--test-n", cs_test, "test samples per class");
  cs->add_option("--power-mode", cs_power, "per_tensor or global");

  // serve
  auto* sv = app.add_subcommand("serve", "answer update requests from a registry directory");
  std::string sv_registry, sv_host = "127.0.0.1";
  std::uint16_t sv_port = 0;
  std::size_t sv_max = 0;
  sv->add_option("--registry", sv_registry, "directory of .smcpkg and .smcmdl files")->required();
  sv->add_option("--host", sv_host, "listen address");
  sv->add_option("--port", sv_port, "listen port (0 picks one)");
  sv->add_option("--max-requests", sv_max, "exit after this many requests (0 = never)");

  // request
  auto* rq = app.add_subcommand("request", "ask a base station for an update");
  std::string rq_addr = "127.0.0.1:7070", rq_base, rq_kind = "incremental", rq_task = "segmentation", rq_domain = "B";
  std::string rq_edge = "edge-0";
  std::vector<std::string> rq_classes;
  bool rq_full = false;
  std::string rq_snr = "inf";
  double rq_rate = kDefaultLinkRate;
  rq->add_option("--addr", rq_addr, "host:port");
  rq->add_option("--base", rq_base, "local base model (for its checksum)")->required();
  rq->add_option("--kind", rq_kind, "incremental, cross_task or cross_domain");
  rq->add_option("--classes", rq_classes, "wanted new classes")->delimiter(',');
  rq->add_option("--task", rq_task, "wanted task (cross_task)");
  rq->add_option("--domain", rq_domain, "wanted domain (cross_domain)");
  rq->add_option("--edge-id", rq_edge, "name reported to the server");
  rq->add_flag("--full", rq_full, "ask for the full model");
  rq->add_option("--snr", rq_snr, "channel SNR in dB recorded in the report");
  rq->add_option("--link-rate", rq_rate, "modelled link throughput in bytes/s");

  // experiment
  auto* ex = app.add_subcommand("experiment", "run an experiment and write its CSV");
  std::string ex_name;
  std::vector<std::uint64_t> ex_seeds;
  std::vector<std::string> ex_set;
  ex->add_option("name", ex_name, "incremental, split_sweep, cross_task, cross_domain, snr_sweep, distribution_demo");
  ex->add_option("--seeds", ex_seeds, "experiment seeds")->delimiter(',');
  ex->add_option("--set", ex_set, "key=value override (repeatable)")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::string> names;
  for (const auto* sub : app.get_subcommands([](CLI::App*) { return true; })) names.push_back(sub->get_name());
  {
    // --config has to be known before the real parse.
    for (std::size_t i = 0; i + 1 < args.size(); ++i)
      if (args[i] == "--config") g.config = args[i + 1];
    for (const auto& a : args)
      if (a.rfind("--config=", 0) == 0) g.config = a.substr(9);
  }
  args = with_config(args, g.config, names);
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInvalid;
  }

  if (*gen) {
    const ShapeDataset ds = generate(resolve_classes(gen_classes), gen_n, domain_from_string(gen_domain), g.seed);
    emit_bytes(g.out, encode_dataset(ds));
  } else if (*tb) {
    ShapeDataset ds = tb_data.empty()
                          ? generate(resolve_classes(tb_classes), tb_n, Domain::A, derive_seed(g.seed, "train"))
                          : decode_dataset(read_file(tb_data));
    const ModelGraph model = train_base_model(ds, tb_cfg, derive_seed(g.seed, tb_tag));
    emit_bytes(g.out, encode_model({model, ds.classes, ds.domain}));
    std::cerr << fmt::format("train-base: {} classes, checksum {}, train accuracy {:.4f}\n", ds.classes.size(),
                             model_checksum(model), evaluate_classifier(model, ds.classes, ds));
  } else if (*cca) {
    const ModelFile a = load_model(cca_a);
    const ModelFile b = load_model(cca_b);
    std::vector<int> classes = a.classes;
    for (int c : b.classes)
      if (std::find(classes.begin(), classes.end(), c) == classes.end()) classes.push_back(c);
    const ShapeDataset probe = generate(classes, cca_probe, a.domain, derive_seed(g.seed, "probe"));
    const auto candidates = toy_blocks();
    const CcaProfile profile = layer_profile(a.model, b.model, probe.batch(), candidates, cca_keep);
    std::vector<int> extra;
    for (int c : b.classes)
      if (std::find(a.classes.begin(), a.classes.end(), c) == a.classes.end()) extra.push_back(c);
    SmcKind kind{extra.empty() ? SmcVariant::cross_domain : SmcVariant::incremental, a.classes, extra,
                 TaskKind::classification, Domain::B};
    std::string csv = "candidate,rho1,k_ori,k_tar,component_bytes\n";
    std::vector<std::size_t> sizes;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const ExpandedModel em = build_expanded(a.model, split_after(a.model, candidates[c]), kind, RngStream{g.seed, 0});
      sizes.push_back(encode_package(extract_smc(em)).size());
      csv += fmt::format("{},{},{},{},{}\n", candidates[c], csv_number(profile.rho1[c]), profile.retained_dims[c].first,
                         profile.retained_dims[c].second, sizes.back());
    }
    const SplitPlan plan = select_split(a.model, profile, cca_rho_t, sizes);
    std::cerr << fmt::format("analyze-cca: split at rho_t={} -> {}\n", cca_rho_t,
                             plan.split_candidate.empty() ? "(input)" : plan.split_candidate);
    emit(g, csv);
  } else if (*ts) {
    const ModelFile base = load_model(ts_opt.base);
    ExpandedModel em = build_component(base, ts_opt, g.seed);
    const ComponentData data = component_data(ts_opt, base, em.kind, g.seed);
    const auto stats = train_smc(em, data.train, data.memory, ts_opt.train_config(g.seed));
    std::string csv = "epoch,loss,ce,semdist,acc\n";
    for (const auto& s : stats)
      csv += fmt::format("{},{},{},{},{}\n", s.epoch, csv_number(s.loss), csv_number(s.ce), csv_number(s.semdist),
                         csv_number(s.metric));
    write_file(ts_package, encode_package(extract_smc(em)));
    emit(g, csv);
  } else if (*ap) {
    const ModelFile base = load_model(ap_base);
    const SmcPackage pkg = decode_package(read_file(ap_package));
    const ExpandedModel em = apply_smc(base.model, pkg, ap_force);
    emit(g, fmt::format("kind,split_point,base_checksum,parameters,outputs\n{},{},{},{},{}\n", to_string(pkg.kind.variant),
                        pkg.split_candidate, pkg.base_checksum, em.trainable_parameter_count(), em.output_width()));
  } else if (*ev) {
    const ModelFile base = load_model(ev_base);
    std::string csv = "metric,value\n";
    if (ev_package.empty()) {
      const auto classes = ev_classes.empty() ? base.classes : resolve_classes(ev_classes);
      const ShapeDataset test = generate(classes, ev_n, domain_from_string(ev_domain), derive_seed(g.seed, "test"));
      csv += fmt::format("accuracy,{}\n", csv_number(evaluate_classifier(base.model, base.classes, test)));
    } else {
      const ExpandedModel em = apply_smc(base.model, decode_package(read_file(ev_package)));
      const ShapeDataset test = eval_set(em.kind, ev_n, g.seed);
      const char* metric = em.kind.task == TaskKind::segmentation ? "miou"
                           : em.kind.task == TaskKind::detection  ? "ap50"
                                                                  : "accuracy";
      csv += fmt::format("{},{}\n", metric, csv_number(evaluate(em, test)));
    }
    emit(g, csv);
  } else if (*cs) {
    const ModelFile base = load_model(cs_opt.base);
    const auto snrs = parse_snrs(cs_snrs);
    const PowerMode power = power_mode_from_string(cs_power);
    std::string csv = "snr_db,beta,trial,accuracy,epsilon,bound\n";
    for (double beta : cs_betas) {
      ComponentOptions o = cs_opt;
      o.beta = beta;
      ExpandedModel em = build_component(base, o, g.seed);
      const ComponentData data = component_data(o, base, em.kind, g.seed);
      train_smc(em, data.train, data.memory, o.train_config(g.seed));
      const ShapeDataset test = eval_set(em.kind, cs_test, g.seed);
      const ShapeDataset probe = eval_set(em.kind, std::max<std::size_t>(1, cs_probe / test.classes.size()), g.seed + 1);
      for (double snr : snrs) {
        for (std::size_t t = 0; t < cs_trials; ++t) {
          const ChannelConfig cc{snr, derive_seed(g.seed + t, "noise"), power};
          const ExpandedModel rx = transmit_component(em, cc);
          const DisturbanceResult d = disturbance(em, probe.batch(), cc, 1);
          csv += fmt::format("{},{},{},{},{},{}\n", csv_number(snr), csv_number(beta), t, csv_number(evaluate(rx, test)),
                             csv_number(d.epsilon), csv_number(d.bound));
        }
      }
    }
    emit(g, csv);
  } else if (*sv) {
    const Registry registry = Registry::load_dir(sv_registry);
    FrameServer server(sv_host, sv_port, make_handler(registry));
    std::cerr << fmt::format("serve: {} components, full model {}, listening on {}:{}\n", registry.components().size(),
                             registry.full_model() ? "yes" : "no", sv_host, server.port());
    server.serve(sv_max);
  } else if (*rq) {
    const auto colon = rq_addr.rfind(':');
    require(colon != std::string::npos, ErrorCode::InvalidInput, "--addr must be host:port");
    const std::string host = rq_addr.substr(0, colon);
    const auto port = static_cast<std::uint16_t>(std::stoul(rq_addr.substr(colon + 1)));
    const ModelFile base = load_model(rq_base);
    UpdateRequest req;
    req.base_checksum = model_checksum(base.model);
    req.kind = smc_variant_from_string(rq_kind);
    if (!rq_classes.empty()) req.classes = resolve_classes(rq_classes);
    req.task = task_kind_from_string(rq_task);
    req.domain = domain_from_string(rq_domain);
    req.edge_id = rq_edge;
    req.full_model = rq_full;
    const Bytes payload = request_over_socket(host, port, req);
    emit_bytes(g.out, payload);
    TransferReport report;
    report.mode = detect_format(payload) == kPackageMagic ? DeliveryMode::smc : DeliveryMode::full_model;
    report.bytes_sent = payload.size() + kFrameHeader;
    report.seconds = static_cast<double>(report.bytes_sent) / rq_rate;
    report.snr_db = parse_snr(rq_snr);
    std::cout << "mode,bytes,seconds,snr_db\n" << report.csv_row() << "\n";
  } else if (*ex) {
    ExperimentSpec spec = g.config.empty() ? ExperimentSpec{} : parse_spec_text(read_text(g.config));
    if (!ex_name.empty()) spec.name = ex_name;
    if (!ex_seeds.empty()) spec.seeds = ex_seeds;
    if (spec.seeds.empty()) spec.seeds = {g.seed};
    for (const auto& kv : ex_set) {
      const auto eq = kv.find('=');
      require(eq != std::string::npos, ErrorCode::InvalidInput, fmt::format("--set '{}' is not key=value", kv));
      spec.overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    if (!g.out.empty()) spec.output = g.out;
    require(!spec.name.empty(), ErrorCode::InvalidInput, "experiment name missing");
    const std::string csv = run_experiment(spec).render();
    Global sink = g;
    sink.out = spec.output;
    emit(sink, csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << fmt::format("error [{}]: {}\n", to_string(e.code()), e.message());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << fmt::format("error: {}\n", e.what());
    return kExitInvalid;
  }
}
