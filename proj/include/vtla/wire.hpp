#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "vtla/episode.hpp"
#include "vtla/image.hpp"

namespace vtla::wire {

/// A protocol violation; `id` is set when the offending request carried one.
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(const std::string& what, std::optional<std::uint64_t> id = std::nullopt)
      : std::runtime_error(what), id_(id) {}
  std::optional<std::uint64_t> id() const { return id_; }

 private:
  std::optional<std::uint64_t> id_;
};

struct Request {
  std::uint64_t id = 0;
  RgbImage tactile_left;
  RgbImage tactile_right;
  RgbImage vision;
  std::string instruction;
  ShapeKind shape = ShapeKind::kSquare;
};

/// One NDJSON line (without the trailing newline). Keys are emitted sorted.
std::string encode_request(std::uint64_t id, const Observation& obs, ShapeKind shape);
Request decode_request(const std::string& line);
std::string encode_response(std::uint64_t id, const Action& action);
/// Throws ProtocolError on an error frame or an id mismatch.
Action decode_response(const std::string& line, std::uint64_t expected_id);
std::string encode_error(std::optional<std::uint64_t> id, const std::string& message);

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};
/// "host:port"; throws std::invalid_argument.
Endpoint parse_endpoint(const std::string& addr);

using Handler = std::function<Action(const Request&)>;

/// TCP server, one thread per connection, one request in flight per
/// connection. A malformed request gets an error frame and the connection
/// is closed; the server keeps accepting.
class Server {
 public:
  Server(const std::string& listen_addr, Handler handler);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// The bound port (useful when listening on port 0).
  std::uint16_t port() const;
  /// Blocks until stop() is called from another thread.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Client side of the protocol; one connection per instance.
class RemotePolicy final : public Policy {
 public:
  explicit RemotePolicy(const std::string& addr);
  ~RemotePolicy() override;
  Action act(const PolicyQuery& query) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vtla::wire
