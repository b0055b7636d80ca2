#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "smc/channel.hpp"
#include "smc/error.hpp"
#include "smc/expandable.hpp"
#include "smc/package_io.hpp"
#include "smc/transport.hpp"

namespace smc {

enum class DeliveryMode { full_model, smc };

std::string_view to_string(DeliveryMode m);

/// What an edge node asks the base station for.
struct UpdateRequest {
  std::string base_checksum;
  SmcVariant kind = SmcVariant::incremental;
  std::vector<int> classes;  // requested new classes (incremental)
  TaskKind task = TaskKind::classification;
  Domain domain = Domain::A;
  std::string edge_id = "edge-0";
  bool full_model = false;  // ask for the full model even if a component exists

  friend bool operator==(const UpdateRequest&, const UpdateRequest&) = default;
};

/// Canonical JSON (sorted keys). Decoding throws ProtocolError.
Bytes encode_request(const UpdateRequest& req);
UpdateRequest decode_request(std::span<const std::uint8_t> bytes);

/// Read-only store of what the base station can hand out.
class Registry {
 public:
  void add_component(Bytes encoded);
  void add_full_model(Bytes encoded);
  /// Base checksums the station knows (components target them).
  void add_known_base(std::string checksum);

  /// Loads every *.smcpkg and *.smcmdl file in a directory, in name order.
  static Registry load_dir(const std::string& dir);

  struct Component {
    SmcPackage header;
    Bytes bytes;
  };
  const std::vector<Component>& components() const { return components_; }
  const std::optional<Bytes>& full_model() const { return full_model_; }
  bool knows_base(const std::string& checksum) const;

 private:
  std::vector<Component> components_;
  std::optional<Bytes> full_model_;
  std::vector<std::string> known_bases_;
};

struct Delivery {
  DeliveryMode mode = DeliveryMode::smc;
  Bytes payload;
};

/// The matching component, else the full model for a known base. Throws
/// NotAvailable when the base is unknown or nothing fits.
Delivery handle_request(const Registry& registry, const UpdateRequest& req);

/// Server-side handler: request bytes in, package/model bytes or an error
/// payload out.
FrameServer::Handler make_handler(const Registry& registry);

inline constexpr std::string_view kErrorMagic = "SMCERR1";

/// Error payload understood by request_over_socket.
Bytes encode_error(const Error& e);

/// Sends the request and returns the payload; error payloads are rethrown
/// with their original code.
Bytes request_over_socket(const std::string& host, std::uint16_t port, const UpdateRequest& req);

/// Default modelled link throughput in bytes per second.
inline constexpr double kDefaultLinkRate = 850000.0;

struct TransferReport {
  DeliveryMode mode = DeliveryMode::smc;
  std::size_t bytes_sent = 0;  // framed response size
  double seconds = 0.0;        // bytes_sent / link rate
  double wall_seconds = 0.0;   // measured, not written to CSVs
  double snr_db = 0.0;

  /// "mode,bytes,seconds,snr_db"
  std::string csv_row() const;
};

struct EdgeConfig {
  ChannelConfig channel;
  std::optional<TrainConfig> finetune;
  ShapeDataset local_data;  // new-task samples held at the edge (fine-tuning)
  double link_rate = kDefaultLinkRate;
};

struct EdgeResult {
  DeliveryMode mode = DeliveryMode::smc;
  std::optional<ExpandedModel> expanded;
  std::optional<ModelFile> full;
  TransferReport report;

  /// Accuracy / mIoU / AP50 of whichever model arrived.
  double evaluate(const ShapeDataset& ds) const;
};

/// Decode → channel noise on tensor values → apply → optional fine-tune.
EdgeResult edge_integrate(const ModelGraph& base, std::span<const std::uint8_t> received, const RehearsalMemory& memory,
                          const EdgeConfig& cfg);

}  // namespace smc
