#include "smc/distribution.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fmt/format.h>
#include <json.hpp>

#include "smc/error.hpp"

namespace smc {
namespace {

using json = nlohmann::json;

std::optional<ErrorCode> code_from_string(std::string_view name) {
  for (int c = 0; c <= static_cast<int>(ErrorCode::ProtocolError); ++c)
    if (to_string(static_cast<ErrorCode>(c)) == name) return static_cast<ErrorCode>(c);
  return std::nullopt;
}

bool same_set(std::vector<int> a, std::vector<int> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

bool matches(const SmcPackage& pkg, const UpdateRequest& req) {
  if (pkg.base_checksum != req.base_checksum || pkg.kind.variant != req.kind) return false;
  switch (req.kind) {
    case SmcVariant::incremental:
      return req.classes.empty() || same_set(pkg.kind.new_classes, req.classes);
    case SmcVariant::cross_task:
      return pkg.kind.task == req.task;
    case SmcVariant::cross_domain:
      return pkg.kind.domain == req.domain;
  }
  return false;
}

}  // namespace

std::string_view to_string(DeliveryMode m) { return m == DeliveryMode::smc ? "smc" : "full"; }

Bytes encode_request(const UpdateRequest& req) {
  json j;
  j["base_checksum"] = req.base_checksum;
  j["kind"] = std::string(to_string(req.kind));
  j["classes"] = req.classes;
  j["task"] = std::string(to_string(req.task));
  j["domain"] = std::string(to_string(req.domain));
  j["edge_id"] = req.edge_id;
  j["full_model"] = req.full_model;
  const std::string text = j.dump();
  return {text.begin(), text.end()};
}

UpdateRequest decode_request(std::span<const std::uint8_t> bytes) {
  try {
    const json j = json::parse(bytes.begin(), bytes.end());
    UpdateRequest req;
    req.base_checksum = j.at("base_checksum").get<std::string>();
    req.kind = smc_variant_from_string(j.at("kind").get<std::string>());
    req.classes = j.at("classes").get<std::vector<int>>();
    req.task = task_kind_from_string(j.at("task").get<std::string>());
    req.domain = domain_from_string(j.at("domain").get<std::string>());
    req.edge_id = j.at("edge_id").get<std::string>();
    req.full_model = j.at("full_model").get<bool>();
    return req;
  } catch (const json::exception& e) {
    fail(ErrorCode::ProtocolError, fmt::format("malformed update request: {}", e.what()));
  } catch (const Error& e) {
    fail(ErrorCode::ProtocolError, fmt::format("malformed update request: {}", e.what()));
  }
}

void Registry::add_component(Bytes encoded) {
  SmcPackage header = decode_package(encoded);
  add_known_base(header.base_checksum);
  components_.push_back({std::move(header), std::move(encoded)});
}

void Registry::add_full_model(Bytes encoded) {
  decode_model(encoded);  // validates
  full_model_ = std::move(encoded);
}

void Registry::add_known_base(std::string checksum) {
  if (!knows_base(checksum)) known_bases_.push_back(std::move(checksum));
}

bool Registry::knows_base(const std::string& checksum) const {
  return std::find(known_bases_.begin(), known_bases_.end(), checksum) != known_bases_.end();
}

Registry Registry::load_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  require(fs::is_directory(dir), ErrorCode::NotFound, fmt::format("registry directory '{}' not found", dir));
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  Registry reg;
  for (const auto& p : files) {
    if (p.extension() == ".smcpkg") reg.add_component(read_file(p.string()));
    else if (p.extension() == ".smcmdl") reg.add_full_model(read_file(p.string()));
  }
  return reg;
}

Delivery handle_request(const Registry& registry, const UpdateRequest& req) {
  require(registry.knows_base(req.base_checksum), ErrorCode::NotAvailable,
          fmt::format("no update for base model {}", req.base_checksum));
  if (!req.full_model) {
    for (const auto& c : registry.components())
      if (matches(c.header, req)) return {DeliveryMode::smc, c.bytes};
  }
  require(registry.full_model().has_value(), ErrorCode::NotAvailable,
          fmt::format("no {} component and no full model for {}", to_string(req.kind), req.edge_id));
  return {DeliveryMode::full_model, *registry.full_model()};
}

Bytes encode_error(const Error& e) {
  const std::string text = fmt::format("{}{}:{}", kErrorMagic, to_string(e.code()), e.message());
  return {text.begin(), text.end()};
}

FrameServer::Handler make_handler(const Registry& registry) {
  return [&registry](const std::vector<std::uint8_t>& frame) -> std::vector<std::uint8_t> {
    try {
      return handle_request(registry, decode_request(frame)).payload;
    } catch (const Error& e) {
      return encode_error(e);
    }
  };
}

Bytes request_over_socket(const std::string& host, std::uint16_t port, const UpdateRequest& req) {
  Bytes reply = request_once(host, port, encode_request(req));
  const std::string_view head(reinterpret_cast<const char*>(reply.data()), std::min(reply.size(), kErrorMagic.size()));
  if (head != kErrorMagic) return reply;
  const std::string body(reply.begin() + static_cast<std::ptrdiff_t>(kErrorMagic.size()), reply.end());
  const auto colon = body.find(':');
  const auto code = code_from_string(std::string_view(body).substr(0, colon));
  if (!code || colon == std::string::npos) fail(ErrorCode::ProtocolError, "unreadable error reply");
  fail(*code, body.substr(colon + 1));
}

std::string TransferReport::csv_row() const {
  return fmt::format("{},{},{:.6f},{}", to_string(mode), bytes_sent, seconds,
                     std::isinf(snr_db) ? std::string(snr_db > 0 ? "inf" : "-inf") : fmt::format("{:.6f}", snr_db));
}

double EdgeResult::evaluate(const ShapeDataset& ds) const {
  if (expanded) return smc::evaluate(*expanded, ds);
  require(full.has_value(), ErrorCode::InvalidInput, "nothing was integrated");
  return evaluate_classifier(full->model, full->classes, ds);
}

EdgeResult edge_integrate(const ModelGraph& base, std::span<const std::uint8_t> received, const RehearsalMemory& memory,
                          const EdgeConfig& cfg) {
  require(cfg.link_rate > 0.0, ErrorCode::InvalidInput, "link rate must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  EdgeResult r;
  const std::string_view magic = detect_format(received);
  if (magic == kPackageMagic) {
    r.mode = DeliveryMode::smc;
    ExpandedModel em = apply_smc(base, decode_package(received));
    em = transmit_component(em, cfg.channel);
    if (cfg.finetune && cfg.finetune->epochs > 0) train_smc(em, cfg.local_data, memory, *cfg.finetune);
    r.expanded = std::move(em);
  } else if (magic == kModelMagic) {
    r.mode = DeliveryMode::full_model;
    ModelFile file = decode_model(received);
    const auto names = trainable_layers(file.model);
    FlatParams flat = flatten_params(file.model, names);
    flat.values = transmit(flat.values, flat.layout, cfg.channel);
    unflatten_params(file.model.params, flat.layout, flat.values);
    r.full = std::move(file);
  } else {
    fail(ErrorCode::UnknownFormat, "received payload is neither a component nor a model");
  }
  r.report.mode = r.mode;
  r.report.bytes_sent = received.size() + kFrameHeader;
  r.report.seconds = static_cast<double>(r.report.bytes_sent) / cfg.link_rate;
  r.report.snr_db = cfg.channel.snr_db;
  r.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace smc
