#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/socket.h>

#include <chrono>
#include <thread>

#include "smc/distribution.hpp"
#include "smc/error.hpp"
#include "smc/experiments.hpp"
#include "smc/transport.hpp"

using namespace smc;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no smc::Error thrown");
  return ErrorCode::InvalidInput;
}

std::pair<Socket, Socket> socket_pair() {
  int fds[2];
  REQUIRE(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) == 0);
  return {Socket(fds[0]), Socket(fds[1])};
}

struct Fixture {
  ModelGraph base;
  ExpandedModel em;
  Bytes component;
  Bytes full;
  RehearsalMemory memory;
};

const Fixture& fixture() {
  static const Fixture fx = [] {
    Fixture f;
    const ShapeDataset old_train = generate({0, 1, 2}, 30, Domain::A, 3);
    f.base = train_base_model(old_train, {3, 0.05, 32}, 3);
    f.em = build_expanded(f.base, split_after(f.base, "block3"), SmcKind{SmcVariant::incremental, {0, 1, 2}, {5, 6}},
                          RngStream{1, 0});
    f.memory = split_rehearsal(old_train, 15, 1);
    TrainConfig tc;
    tc.epochs = 2;
    train_smc(f.em, generate({5, 6}, 30, Domain::A, 5), f.memory, tc);
    f.component = encode_package(extract_smc(f.em));
    f.full = encode_model({make_toy_classifier(5, RngStream{2, 0}), {0, 1, 2, 5, 6}, Domain::A});
    return f;
  }();
  return fx;
}

Registry registry_of(const Fixture& f) {
  Registry r;
  r.add_component(f.component);
  r.add_full_model(f.full);
  return r;
}

UpdateRequest request_for(const Fixture& f) {
  UpdateRequest req;
  req.base_checksum = model_checksum(f.base);
  req.kind = SmcVariant::incremental;
  req.classes = {6, 5};
  return req;
}

}  // namespace

TEST_CASE("frames") {
  const Bytes payload{1, 2, 3};
  CHECK(encode_frame(payload) == Bytes{0, 0, 0, 3, 1, 2, 3});
  CHECK(encode_frame(Bytes{}) == Bytes{0, 0, 0, 0});

  auto [a, b] = socket_pair();
  send_frame(a, payload);
  send_frame(a, Bytes{});
  CHECK(recv_frame(b) == payload);
  CHECK(recv_frame(b).empty());

  send_raw(a, Bytes{0, 0, 1, 0});
  CHECK(code_of([&] { recv_frame(b, 100); }) == ErrorCode::ProtocolError);

  send_raw(a, Bytes{0, 0, 0, 9, 1, 2});
  a = Socket();
  CHECK(code_of([&] { recv_frame(b); }) == ErrorCode::ProtocolError);
}

TEST_CASE("request encoding") {
  UpdateRequest req = request_for(fixture());
  req.task = TaskKind::detection;
  req.full_model = true;
  const UpdateRequest back = decode_request(encode_request(req));
  CHECK(back.base_checksum == req.base_checksum);
  CHECK(back.classes == req.classes);
  CHECK(back.task == TaskKind::detection);
  CHECK(back.full_model);
  const std::string junk = "{\"kind\":1}";
  CHECK(code_of([&] { decode_request(Bytes(junk.begin(), junk.end())); }) == ErrorCode::ProtocolError);
}

TEST_CASE("registry decisions") {
  const Fixture& f = fixture();
  const Registry reg = registry_of(f);
  UpdateRequest req = request_for(f);
  const Delivery d = handle_request(reg, req);
  CHECK(d.mode == DeliveryMode::smc);
  CHECK(d.payload == f.component);

  req.full_model = true;
  CHECK(handle_request(reg, req).mode == DeliveryMode::full_model);
  req.full_model = false;
  req.classes = {7};
  CHECK(handle_request(reg, req).payload == f.full);

  req.base_checksum = "0000";
  CHECK(code_of([&] { handle_request(reg, req); }) == ErrorCode::NotAvailable);

  Registry only_component;
  only_component.add_component(f.component);
  UpdateRequest other = request_for(f);
  other.kind = SmcVariant::cross_task;
  CHECK(code_of([&] { handle_request(only_component, other); }) == ErrorCode::NotAvailable);
}

TEST_CASE("socket delivery matches the in-process path") {
  const Fixture& f = fixture();
  const Registry reg = registry_of(f);
  FrameServer server("127.0.0.1", 0, make_handler(reg));
  REQUIRE(server.port() != 0);
  server.start();
  const UpdateRequest req = request_for(f);
  const Bytes in_process = handle_request(reg, req).payload;
  const Bytes first = request_over_socket("127.0.0.1", server.port(), req);
  const Bytes second = request_over_socket("127.0.0.1", server.port(), req);
  CHECK(first == in_process);
  CHECK(second == first);

  UpdateRequest unknown = req;
  unknown.base_checksum = "ffff";
  CHECK(code_of([&] { request_over_socket("127.0.0.1", server.port(), unknown); }) == ErrorCode::NotAvailable);

  // A client that lies about its frame length is dropped; the server keeps going.
  {
    Socket raw = connect_to("127.0.0.1", server.port());
    send_raw(raw, Bytes{0, 0, 0, 50, 1});
  }
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
  while (server.protocol_errors() == 0 && std::chrono::steady_clock::now() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  CHECK(server.protocol_errors() == 1);
  CHECK(request_over_socket("127.0.0.1", server.port(), req) == in_process);
  server.stop();
  CHECK(server.handled() == 4);

  CHECK(code_of([&] { request_over_socket("127.0.0.1", server.port(), req); }) == ErrorCode::TransportError);
}

TEST_CASE("edge integration") {
  const Fixture& f = fixture();
  EdgeConfig cfg;
  const EdgeResult r = edge_integrate(f.base, f.component, f.memory, cfg);
  REQUIRE(r.expanded.has_value());
  const Batch b = generate({0, 5, 6}, 4, Domain::A, 40).batch();
  CHECK(expanded_forward(*r.expanded, b).data == expanded_forward(f.em, b).data);
  CHECK(r.report.bytes_sent == f.component.size() + kFrameHeader);
  CHECK(r.report.bytes_sent == encode_frame(f.component).size());
  CHECK(r.report.seconds == doctest::Approx(static_cast<double>(r.report.bytes_sent) / kDefaultLinkRate));
  CHECK(r.report.csv_row().starts_with("smc," + std::to_string(r.report.bytes_sent) + ","));
  CHECK(r.report.csv_row().ends_with(",inf"));

  const EdgeResult full = edge_integrate(f.base, f.full, f.memory, cfg);
  CHECK(full.mode == DeliveryMode::full_model);
  CHECK(full.report.bytes_sent > r.report.bytes_sent);
  const ShapeDataset test = generate({0, 1, 2, 5, 6}, 5, Domain::A, 41);
  CHECK(r.evaluate(test) == evaluate(f.em, test));

  cfg.channel.snr_db = 10.0;
  cfg.channel.seed = 4;
  const EdgeResult noisy = edge_integrate(f.base, f.component, f.memory, cfg);
  CHECK(noisy.expanded->params != f.em.params);
  CHECK(noisy.expanded->params == edge_integrate(f.base, f.component, f.memory, cfg).expanded->params);

  CHECK(code_of([&] { edge_integrate(f.base, Bytes{'n', 'o', 'p', 'e'}, f.memory, cfg); }) == ErrorCode::UnknownFormat);
}

TEST_CASE("error payloads") {
  const Bytes e = encode_error(Error(ErrorCode::NotAvailable, "nothing here"));
  CHECK(std::string(e.begin(), e.end()) == "SMCERR1NotAvailable:nothing here");
}
