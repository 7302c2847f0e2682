#include "vtla/wire.hpp"

#include <atomic>
#include <boost/asio.hpp>
#include <iostream>
#include <list>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "vtla/dataset.hpp"

namespace vtla::wire {

namespace asio = boost::asio;
using asio::ip::tcp;
using nlohmann::json;

namespace {

std::string png_b64(const RgbImage& img) { return base64_encode(encode_png(img)); }

RgbImage image_field(const json& images, const char* key, std::optional<std::uint64_t> id) {
  if (!images.contains(key) || !images[key].is_string()) {
    throw ProtocolError(std::string("missing image '") + key + "'", id);
  }
  try {
    return decode_png(base64_decode(images[key].get<std::string>()));
  } catch (const std::exception& e) {
    throw ProtocolError(std::string("bad image '") + key + "': " + e.what(), id);
  }
}

}  // namespace

std::string encode_request(std::uint64_t id, const Observation& obs, ShapeKind shape) {
  json j{{"id", id},
         {"images",
          {{"tactile_left", png_b64(obs.tactile_left.image)},
           {"tactile_right", png_b64(obs.tactile_right.image)},
           {"vision", png_b64(obs.vision)}}},
         {"instruction", instruction_text(shape)},
         {"shape", std::string(shape_name(shape))}};
  return j.dump();
}

Request decode_request(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("request is not an object");
  std::optional<std::uint64_t> id;
  if (j.contains("id") && j["id"].is_number_unsigned()) id = j["id"].get<std::uint64_t>();
  if (!id) throw ProtocolError("missing or invalid id");
  Request r;
  r.id = *id;
  if (!j.contains("images") || !j["images"].is_object()) throw ProtocolError("missing images", id);
  r.tactile_left = image_field(j["images"], "tactile_left", id);
  r.tactile_right = image_field(j["images"], "tactile_right", id);
  r.vision = image_field(j["images"], "vision", id);
  if (!j.contains("instruction") || !j["instruction"].is_string()) {
    throw ProtocolError("missing instruction", id);
  }
  r.instruction = j["instruction"].get<std::string>();
  if (!j.contains("shape") || !j["shape"].is_string()) throw ProtocolError("missing shape", id);
  try {
    r.shape = parse_shape(j["shape"].get<std::string>());
  } catch (const std::exception& e) {
    throw ProtocolError(e.what(), id);
  }
  return r;
}

std::string encode_response(std::uint64_t id, const Action& a) {
  return json{{"id", id}, {"action", {{"x", a.dx}, {"y", a.dy}, {"rz", a.drz}}}}.dump();
}

Action decode_response(const std::string& line, std::uint64_t expected_id) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed response: ") + e.what());
  }
  if (j.contains("error")) {
    throw ProtocolError("server error: " + j["error"].get<std::string>(),
                        j.contains("id") ? std::optional(j["id"].get<std::uint64_t>()) : std::nullopt);
  }
  if (j.at("id").get<std::uint64_t>() != expected_id) throw ProtocolError("response id mismatch");
  const auto& a = j.at("action");
  return {a.at("x").get<double>(), a.at("y").get<double>(), a.at("rz").get<double>()};
}

std::string encode_error(std::optional<std::uint64_t> id, const std::string& message) {
  json j{{"error", message}};
  if (id) j["id"] = *id;
  return j.dump();
}

Endpoint parse_endpoint(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == addr.size()) {
    throw std::invalid_argument("address must be host:port, got '" + addr + "'");
  }
  Endpoint e;
  e.host = addr.substr(0, colon);
  const std::string port = addr.substr(colon + 1);
  unsigned long p = 0;
  try {
    std::size_t used = 0;
    p = std::stoul(port, &used);
    if (used != port.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw std::invalid_argument("bad port in '" + addr + "'");
  }
  if (p > 65535) throw std::invalid_argument("port out of range in '" + addr + "'");
  e.port = static_cast<std::uint16_t>(p);
  return e;
}

// ---------------------------------------------------------------- server

struct Server::Impl {
  asio::io_context io;
  tcp::acceptor acceptor{io};
  Handler handler;
  std::mutex mu;
  struct Session {
    std::shared_ptr<tcp::socket> sock;
    std::shared_ptr<std::atomic<bool>> done;
    std::thread thread;
  };
  std::list<Session> sessions;
  std::atomic<bool> stopping{false};

  void accept_next() {
    auto sock = std::make_shared<tcp::socket>(io);
    acceptor.async_accept(*sock, [this, sock](const boost::system::error_code& ec) {
      if (ec || stopping) return;
      std::lock_guard lock(mu);
      reap();
      auto done = std::make_shared<std::atomic<bool>>(false);
      sessions.push_back({sock, done, std::thread([this, sock, done] {
                            session(*sock);
                            *done = true;
                          })});
      accept_next();
    });
  }

  // Joins sessions whose sockets are already closed. Caller holds mu.
  void reap() {
    for (auto it = sessions.begin(); it != sessions.end();) {
      if (*it->done) {
        it->thread.join();
        it = sessions.erase(it);
      } else {
        ++it;
      }
    }
  }

  void session(tcp::socket& sock) {
    asio::streambuf buf;
    boost::system::error_code ec;
    while (!stopping) {
      asio::read_until(sock, buf, '\n', ec);
      if (ec) break;
      std::istream is(&buf);
      std::string line;
      std::getline(is, line);
      std::string reply;
      bool close_after = false;
      std::optional<std::uint64_t> id;
      try {
        const Request req = decode_request(line);
        id = req.id;
        reply = encode_response(req.id, clamp_action(handler(req)));
      } catch (const ProtocolError& e) {
        reply = encode_error(e.id(), e.what());
        close_after = true;
      } catch (const std::exception& e) {
        reply = encode_error(id, e.what());
        close_after = true;
      }
      reply.push_back('\n');
      asio::write(sock, asio::buffer(reply), ec);
      if (ec || close_after) break;
    }
    if (ec && ec != asio::error::eof && !stopping) {
      std::cerr << "serve-policy: connection error: " << ec.message() << '\n';
    }
    boost::system::error_code ignore;
    sock.shutdown(tcp::socket::shutdown_both, ignore);
  }
};

Server::Server(const std::string& listen_addr, Handler handler) : impl_(std::make_unique<Impl>()) {
  const Endpoint ep = parse_endpoint(listen_addr);
  impl_->handler = std::move(handler);
  tcp::resolver resolver(impl_->io);
  const auto results = resolver.resolve(ep.host, std::to_string(ep.port));
  const tcp::endpoint bind_ep = results.begin()->endpoint();
  impl_->acceptor.open(bind_ep.protocol());
  impl_->acceptor.set_option(tcp::acceptor::reuse_address(true));
  impl_->acceptor.bind(bind_ep);
  impl_->acceptor.listen();
  impl_->accept_next();
}

Server::~Server() {
  stop();
  std::lock_guard lock(impl_->mu);
  for (auto& s : impl_->sessions) {
    boost::system::error_code ignore;
    s.sock->shutdown(tcp::socket::shutdown_both, ignore);
    if (s.thread.joinable()) s.thread.join();
  }
}

std::uint16_t Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::run() { impl_->io.run(); }

void Server::stop() {
  impl_->stopping = true;
  asio::post(impl_->io, [this] {
    boost::system::error_code ignore;
    impl_->acceptor.close(ignore);
  });
  impl_->io.stop();
}

// ---------------------------------------------------------------- client

struct RemotePolicy::Impl {
  asio::io_context io;
  tcp::socket sock{io};
  asio::streambuf buf;
  std::uint64_t next_id = 0;
};

RemotePolicy::RemotePolicy(const std::string& addr) : impl_(std::make_unique<Impl>()) {
  const Endpoint ep = parse_endpoint(addr);
  tcp::resolver resolver(impl_->io);
  asio::connect(impl_->sock, resolver.resolve(ep.host, std::to_string(ep.port)));
  impl_->sock.set_option(tcp::no_delay(true));
}

RemotePolicy::~RemotePolicy() {
  boost::system::error_code ignore;
  impl_->sock.shutdown(tcp::socket::shutdown_both, ignore);
  impl_->sock.close(ignore);
}

Action RemotePolicy::act(const PolicyQuery& query) {
  const std::uint64_t id = impl_->next_id++;
  std::string line = encode_request(id, query.observation, query.shape);
  line.push_back('\n');
  asio::write(impl_->sock, asio::buffer(line));
  asio::read_until(impl_->sock, impl_->buf, '\n');
  std::istream is(&impl_->buf);
  std::string reply;
  std::getline(is, reply);
  return decode_response(reply, id);
}

}  // namespace vtla::wire
