#pragma once

// Loss-and-gradient oracle over TCP.
//
// Frame:  u32 BE frame_len | u32 BE header_len | JSON header | payload bytes
// frame_len counts everything after itself. The header lists the payloads in
// order as {"name", "shape"}; each payload is prod(shape) little-endian f64.
// See docs/protocol.md for the op table and hex dumps.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mofit/diffusion.hpp"
#include "mofit/errors.hpp"
#include "mofit/io.hpp"

namespace mofit {

/// Connection-level failure (refused, reset, EOF). Retried by the client;
/// other ProtocolErrors are not.
class TransportError : public ProtocolError {
public:
  using ProtocolError::ProtocolError;
};

namespace wire {

inline constexpr std::uint32_t kMaxFrame = 64u << 20;

enum class Op {
  hello,
  uncond_loss_grad_wrt_image,
  cond_loss_grad_wrt_image,
  cond_loss_grad_wrt_condition,
  cond_loss_only,
  uncond_loss_only,
};

inline const char* to_string(Op op) {
  switch (op) {
    case Op::hello: return "hello";
    case Op::uncond_loss_grad_wrt_image: return "uncond_loss_grad_wrt_image";
    case Op::cond_loss_grad_wrt_image: return "cond_loss_grad_wrt_image";
    case Op::cond_loss_grad_wrt_condition: return "cond_loss_grad_wrt_condition";
    case Op::cond_loss_only: return "cond_loss_only";
    case Op::uncond_loss_only: return "uncond_loss_only";
  }
  return "?";
}

inline Op op_from_string(const std::string& s) {
  for (Op op : {Op::hello, Op::uncond_loss_grad_wrt_image, Op::cond_loss_grad_wrt_image,
                Op::cond_loss_grad_wrt_condition, Op::cond_loss_only, Op::uncond_loss_only})
    if (s == to_string(op)) return op;
  throw ProtocolError("unknown op '" + s + "'");
}

inline bool has_cond(Op op) {
  return op == Op::cond_loss_grad_wrt_image || op == Op::cond_loss_grad_wrt_condition || op == Op::cond_loss_only;
}
inline bool has_grad(Op op) {
  return op == Op::uncond_loss_grad_wrt_image || op == Op::cond_loss_grad_wrt_image ||
         op == Op::cond_loss_grad_wrt_condition;
}

struct Payload {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

struct Message {
  Json header = Json::object();  // everything except "payloads"
  std::vector<Payload> payloads;

  const Payload* find(const std::string& name) const {
    for (const auto& p : payloads)
      if (p.name == name) return &p;
    return nullptr;
  }
};

inline std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ProtocolError("negative payload dimension");
    n *= d;
  }
  return n;
}

inline void put_u32_be(std::string& out, std::uint32_t v) {
  for (int b = 3; b >= 0; --b) out.push_back(char((v >> (8 * b)) & 0xFF));
}

inline std::uint32_t get_u32_be(const char* p) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v = (v << 8) | static_cast<unsigned char>(p[b]);
  return v;
}

/// Complete frame bytes, including the leading length.
inline std::string encode(const Message& m) {
  Json h = m.header;
  Json list = Json::array();
  std::string body;
  for (const auto& p : m.payloads) {
    if (element_count(p.shape) != std::int64_t(p.data.size()))
      throw ProtocolError("payload '" + p.name + "' data does not match its shape");
    list.push_back({{"name", p.name}, {"shape", p.shape}});
    for (double v : p.data) append_f64_le(body, v);
  }
  h["payloads"] = list;
  const std::string hj = h.dump();
  std::string out;
  put_u32_be(out, std::uint32_t(4 + hj.size() + body.size()));
  put_u32_be(out, std::uint32_t(hj.size()));
  out += hj;
  out += body;
  return out;
}

/// Parses the bytes after the frame length. Every structural problem is a
/// ProtocolError.
inline Message decode_body(const std::string& body) {
  if (body.size() < 4) throw ProtocolError("frame shorter than its header length field");
  const std::uint32_t hlen = get_u32_be(body.data());
  if (hlen > body.size() - 4) throw ProtocolError("header length exceeds frame");
  Message m;
  try {
    m.header = Json::parse(body.substr(4, hlen));
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("header is not valid JSON: ") + e.what());
  }
  if (!m.header.is_object()) throw ProtocolError("header is not a JSON object");
  std::size_t pos = 4 + hlen;
  try {
    for (const auto& pj : m.header.value("payloads", Json::array())) {
      Payload p;
      p.name = pj.at("name").get<std::string>();
      p.shape = pj.at("shape").get<std::vector<std::int64_t>>();
      const auto n = std::size_t(element_count(p.shape));
      if (n > (body.size() - pos) / 8) throw ProtocolError("payload '" + p.name + "' overruns the frame");
      p.data.resize(n);
      for (std::size_t i = 0; i < n; ++i, pos += 8) p.data[i] = read_f64_le(body.data() + pos);
      m.payloads.push_back(std::move(p));
    }
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("bad payload descriptor: ") + e.what());
  }
  if (pos != body.size()) throw ProtocolError("trailing bytes after the last payload");
  m.header.erase("payloads");
  return m;
}

inline Message decode(const std::string& frame) {
  if (frame.size() < 4) throw ProtocolError("truncated frame");
  const std::uint32_t len = get_u32_be(frame.data());
  if (len != frame.size() - 4) throw ProtocolError("frame length field disagrees with frame size");
  return decode_body(frame.substr(4));
}

inline Payload vector_payload(std::string name, const Vector& v, std::vector<std::int64_t> shape) {
  Payload p{std::move(name), std::move(shape), std::vector<double>(v.data(), v.data() + v.size())};
  return p;
}

inline std::vector<std::int64_t> image_dims(const Shape& s) { return {s.height, s.width, s.channels}; }

// --------------------------------------------------------------------------
// sockets

inline void send_all(int fd, const std::string& bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw TransportError(std::string("send failed: ") + std::strerror(errno));
    sent += std::size_t(n);
  }
}

/// False on clean EOF before the first byte; throws on EOF mid-read.
inline bool recv_exact(int fd, char* buf, std::size_t len) {
  std::size_t got = 0;
  while (got < len) {
    const ssize_t n = ::recv(fd, buf + got, len - got, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) throw TransportError(std::string("recv failed: ") + std::strerror(errno));
    if (n == 0) {
      if (got == 0) return false;
      throw TransportError("connection closed mid-frame");
    }
    got += std::size_t(n);
  }
  return true;
}

/// Reads one frame; returns the whole frame (length prefix included), or an
/// empty string on clean EOF.
inline std::string read_frame(int fd) {
  char lenbuf[4];
  if (!recv_exact(fd, lenbuf, 4)) return {};
  const std::uint32_t len = get_u32_be(lenbuf);
  if (len < 4 || len > kMaxFrame) throw ProtocolError("frame length " + std::to_string(len) + " out of range");
  std::string frame(lenbuf, 4);
  frame.resize(4 + len);
  if (!recv_exact(fd, frame.data() + 4, len)) throw TransportError("connection closed mid-frame");
  return frame;
}

struct Endpoint {
  std::string host = "127.0.0.1";
  int port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
};

inline Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0) throw ConfigError("endpoint must be host:port, got '" + s + "'");
  Endpoint e;
  e.host = s.substr(0, colon);
  try {
    e.port = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("endpoint port is not a number in '" + s + "'");
  }
  if (e.port <= 0 || e.port > 65535) throw ConfigError("endpoint port out of range in '" + s + "'");
  return e;
}

inline void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

inline int connect_to(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res) != 0 || !res)
    throw TransportError("cannot resolve " + ep.str());
  int fd = -1;
  for (addrinfo* a = res; a; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw TransportError("cannot connect to " + ep.str());
  set_nodelay(fd);
  return fd;
}

}  // namespace wire

// ---------------------------------------------------------------------------
// server side

/// Answers one decoded request against an in-process oracle. Failures become
/// error frames carrying the request id.
inline wire::Message handle_request(const LocalOracle& oracle, const wire::Message& req) {
  using namespace wire;
  Message resp;
  const Json id = req.header.value("id", Json());
  resp.header["id"] = id;
  const std::string op_name = req.header.value("op", std::string());
  resp.header["op"] = op_name;
  try {
    const Op op = op_from_string(op_name);
    const OracleInfo& info = oracle.info();
    if (op == Op::hello) {
      const int v = req.header.value("version", -1);
      resp.header["version"] = info.version;
      if (v != info.version) {
        resp.header["status"] = "error";
        resp.header["message"] = "protocol version mismatch: server speaks " + std::to_string(info.version);
        return resp;
      }
      resp.header["status"] = "ok";
      resp.header["info"] = {{"shape", image_dims(info.shape)}, {"cond_dim", info.cond_dim}, {"T", info.schedule.steps()}};
      resp.payloads.push_back({"alpha_bars", {info.schedule.steps()}, info.schedule.alpha_bars});
      resp.payloads.push_back({"betas", {info.schedule.steps()}, info.schedule.betas});
      return resp;
    }
    const auto want_img = image_dims(info.shape);
    auto take = [&](const char* name, const std::vector<std::int64_t>& shape) {
      const Payload* p = req.find(name);
      if (!p) throw ProtocolError(std::string("request lacks payload '") + name + "'");
      if (p->shape != shape) throw ProtocolError(std::string("payload '") + name + "' has the wrong shape");
      return Vector(Eigen::Map<const Vector>(p->data.data(), Eigen::Index(p->data.size())));
    };
    if (!req.header.contains("t") || !req.header["t"].is_number_integer())
      throw ProtocolError("request lacks integer field 't'");
    const int t = req.header["t"].get<int>();
    if (t < 1 || t > info.schedule.steps()) throw ProtocolError("t out of range");
    const Vector x = take("x", want_img);
    const Vector eps = take("eps", want_img);
    Condition c = Condition::null();
    if (has_cond(op)) {
      c.embedding = take("cond", {info.cond_dim});
      c.provenance = Provenance::approximate;
    } else if (req.find("cond")) {
      throw ProtocolError("unconditional op carries a cond payload");
    }
    if (has_grad(op)) {
      const Wrt wrt = op == Op::cond_loss_grad_wrt_condition ? Wrt::condition : Wrt::image;
      const LossGrad lg = oracle.loss_grad(x, c, t, eps, wrt);
      resp.payloads.push_back(vector_payload("loss", Vector::Constant(1, lg.loss), {1}));
      resp.payloads.push_back(vector_payload(
          "grad", lg.grad, wrt == Wrt::condition ? std::vector<std::int64_t>{info.cond_dim} : want_img));
    } else {
      resp.payloads.push_back(vector_payload("loss", Vector::Constant(1, oracle.loss(x, c, t, eps)), {1}));
    }
    resp.header["status"] = "ok";
  } catch (const std::exception& e) {
    resp.payloads.clear();
    resp.header["status"] = "error";
    resp.header["message"] = e.what();
  }
  return resp;
}

/// One recorded request/response pair, as raw frames.
struct TranscriptEntry {
  std::string request;
  std::string response;
};

/// In-process stub server on 127.0.0.1. Port 0 picks a free port.
class LoopbackServer {
public:
  LoopbackServer(const DenoiserModel& model, NoiseSchedule schedule, int port = 0, bool record = false)
      : model_(model), oracle_(model_, std::move(schedule)), record_(record) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw TransportError("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(std::uint16_t(port));
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 16) != 0) {
      ::close(listen_fd_);
      throw TransportError("cannot listen on 127.0.0.1:" + std::to_string(port));
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  LoopbackServer(const LoopbackServer&) = delete;
  LoopbackServer& operator=(const LoopbackServer&) = delete;

  ~LoopbackServer() { stop(); }

  void stop() {
    if (stopping_.exchange(true)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    std::lock_guard lock(mu_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
    for (auto& th : workers_)
      if (th.joinable()) th.join();
  }

  wire::Endpoint endpoint() const { return {"127.0.0.1", port_}; }
  int port() const { return port_; }
  std::size_t requests_served() const { return served_.load(); }

  std::vector<TranscriptEntry> transcript() const {
    std::lock_guard lock(mu_);
    return transcript_;
  }

private:
  void accept_loop() {
    while (!stopping_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;
      }
      wire::set_nodelay(fd);
      std::lock_guard lock(mu_);
      if (stopping_) {
        ::close(fd);
        return;
      }
      client_fds_.push_back(fd);
      workers_.emplace_back([this, fd] { serve(fd); });
    }
  }

  void serve(int fd) {
    try {
      for (;;) {
        const std::string frame = wire::read_frame(fd);
        if (frame.empty()) break;
        wire::Message resp;
        try {
          resp = handle_request(oracle_, wire::decode(frame));
        } catch (const ProtocolError& e) {
          resp.header = {{"id", nullptr}, {"status", "error"}, {"message", e.what()}};
        }
        const std::string out = wire::encode(resp);
        if (record_) {
          std::lock_guard lock(mu_);
          transcript_.push_back({frame, out});
        }
        ++served_;  // counted before sending so a client never sees an unrecorded reply
        wire::send_all(fd, out);
      }
    } catch (const std::exception&) {
      // connection dropped; nothing to answer
    }
    ::close(fd);
  }

  DenoiserModel model_;
  LocalOracle oracle_;
  bool record_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> served_{0};
  std::thread acceptor_;
  mutable std::mutex mu_;
  std::vector<int> client_fds_;
  std::vector<std::thread> workers_;
  std::vector<TranscriptEntry> transcript_;
};

/// Transcript file: the recorded frames back to back (request, response,
/// request, ...). Frames are self-delimiting.
inline std::string serialize_transcript(const std::vector<TranscriptEntry>& t) {
  std::string out;
  for (const auto& e : t) out += e.request + e.response;
  return out;
}

inline std::vector<TranscriptEntry> parse_transcript(const std::string& bytes) {
  std::vector<std::string> frames;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) throw ProtocolError("transcript ends inside a frame length");
    const std::uint32_t len = wire::get_u32_be(bytes.data() + pos);
    if (len > bytes.size() - pos - 4) throw ProtocolError("transcript ends inside a frame");
    frames.push_back(bytes.substr(pos, 4 + len));
    pos += 4 + len;
  }
  if (frames.size() % 2 != 0) throw ProtocolError("transcript has an unpaired request");
  std::vector<TranscriptEntry> out;
  for (std::size_t i = 0; i < frames.size(); i += 2) out.push_back({frames[i], frames[i + 1]});
  return out;
}

struct ReplayResult {
  std::size_t pairs = 0;
  std::size_t mismatches = 0;
};

/// Sends every recorded request again and compares the responses bytewise.
inline ReplayResult replay_transcript(const wire::Endpoint& ep, const std::vector<TranscriptEntry>& t) {
  const int fd = wire::connect_to(ep);
  ReplayResult r;
  try {
    for (const auto& e : t) {
      wire::send_all(fd, e.request);
      const std::string got = wire::read_frame(fd);
      ++r.pairs;
      if (got != e.response) ++r.mismatches;
    }
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  return r;
}

// ---------------------------------------------------------------------------
// client side

struct RemoteOptions {
  int retries = 3;        // reconnect attempts per request after a transport failure
  int max_in_flight = 4;  // pipelining window of call_many
  std::chrono::milliseconds retry_backoff{50};
};

/// Oracle handle over the wire. Satisfies LossOracle, so every attack runs
/// against it unchanged. Calls are serialized on one connection.
class RemoteOracle {
public:
  explicit RemoteOracle(wire::Endpoint ep, RemoteOptions opt = {}) : ep_(std::move(ep)), opt_(opt) {
    if (opt_.max_in_flight < 1) throw ConfigError("oracle.max_in_flight must be >= 1");
    if (opt_.retries < 0) throw ConfigError("oracle.retries must be >= 0");
    handshake();
  }

  RemoteOracle(const RemoteOracle&) = delete;
  RemoteOracle& operator=(const RemoteOracle&) = delete;
  ~RemoteOracle() { disconnect(); }

  const OracleInfo& info() const { return info_; }

  double loss(const Vector& x, const Condition& c, int t, const Vector& eps) const {
    const wire::Op op = c.is_null() ? wire::Op::uncond_loss_only : wire::Op::cond_loss_only;
    return call_many({request(op, x, c, t, eps)}).front().loss;
  }

  LossGrad loss_grad(const Vector& x, const Condition& c, int t, const Vector& eps, Wrt wrt) const {
    wire::Op op;
    switch (wrt) {
      case Wrt::image:
        op = c.is_null() ? wire::Op::uncond_loss_grad_wrt_image : wire::Op::cond_loss_grad_wrt_image;
        break;
      case Wrt::condition:
        if (c.is_null()) throw ContractViolation("gradient w.r.t. the null condition requested; it is a constant");
        op = wire::Op::cond_loss_grad_wrt_condition;
        break;
      default:
        throw ContractViolation("remote oracle does not expose parameter gradients");
    }
    return call_many({request(op, x, c, t, eps)}).front();
  }

  struct Request {
    wire::Op op;
    Vector x, eps;
    Vector cond;  // empty for unconditional ops
    int t = 1;
  };

  Request request(wire::Op op, const Vector& x, const Condition& c, int t, const Vector& eps) const {
    detail::require(x.size() == info_.shape.size() && eps.size() == info_.shape.size(),
                    "remote oracle: image shape mismatch");
    Request r{op, x, eps, {}, t};
    if (wire::has_cond(op)) {
      detail::require(c.embedding.size() == info_.cond_dim, "remote oracle: condition dimension mismatch");
      r.cond = c.embedding;
    }
    return r;
  }

  /// Sends the requests with at most max_in_flight outstanding, matches
  /// responses by id, and returns results in request order.
  std::vector<LossGrad> call_many(const std::vector<Request>& reqs) const {
    std::lock_guard lock(mu_);
    for (int attempt = 0;; ++attempt) {
      try {
        ensure_connected();
        return pipeline(reqs);
      } catch (const TransportError&) {
        disconnect();
        if (attempt >= opt_.retries) throw;
        std::this_thread::sleep_for(opt_.retry_backoff);
      }
    }
  }

private:
  void ensure_connected() const {
    if (fd_ < 0) fd_ = wire::connect_to(ep_);
  }

  void disconnect() const {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void handshake() {
    std::lock_guard lock(mu_);
    wire::Message resp;
    for (int attempt = 0;; ++attempt) {
      try {
        ensure_connected();
        wire::Message hello;
        hello.header = {{"op", "hello"}, {"id", next_id_++}, {"version", kProtocolVersion}};
        wire::send_all(fd_, wire::encode(hello));
        const std::string frame = wire::read_frame(fd_);
        if (frame.empty()) throw TransportError("server closed the connection during handshake");
        resp = wire::decode(frame);
        break;
      } catch (const TransportError&) {
        disconnect();
        if (attempt >= opt_.retries) throw;
        std::this_thread::sleep_for(opt_.retry_backoff);
      }
    }
    const int v = resp.header.value("version", -1);
    if (v != kProtocolVersion)
      throw ConfigError("oracle protocol version mismatch: client " + std::to_string(kProtocolVersion) + ", server " +
                        std::to_string(v));
    if (resp.header.value("status", std::string()) != "ok")
      throw ProtocolError("handshake refused: " + resp.header.value("message", std::string("no message")));
    try {
      const Json& inf = resp.header.at("info");
      info_.shape = {inf.at("shape").at(0).get<int>(), inf.at("shape").at(1).get<int>(),
                     inf.at("shape").at(2).get<int>()};
      info_.cond_dim = inf.at("cond_dim").get<int>();
      const int T = inf.at("T").get<int>();
      const wire::Payload* ab = resp.find("alpha_bars");
      const wire::Payload* be = resp.find("betas");
      if (!ab || !be || ab->shape != std::vector<std::int64_t>{T} || be->shape != std::vector<std::int64_t>{T})
        throw ProtocolError("handshake schedule payloads missing or misshapen");
      info_.schedule.betas = be->data;
      info_.schedule.alpha_bars = ab->data;
      info_.version = v;
    } catch (const Json::exception& e) {
      throw ProtocolError(std::string("malformed handshake info: ") + e.what());
    }
  }

  wire::Message encode_request(const Request& r, std::int64_t id) const {
    wire::Message m;
    m.header = {{"op", wire::to_string(r.op)}, {"id", id}, {"t", r.t}};
    const auto dims = wire::image_dims(info_.shape);
    m.payloads.push_back(wire::vector_payload("x", r.x, dims));
    m.payloads.push_back(wire::vector_payload("eps", r.eps, dims));
    if (wire::has_cond(r.op)) m.payloads.push_back(wire::vector_payload("cond", r.cond, {info_.cond_dim}));
    return m;
  }

  LossGrad validate_response(const wire::Message& m, wire::Op op) const {
    if (m.header.value("op", std::string()) != wire::to_string(op)) throw ProtocolError("response op does not echo the request");
    if (m.header.value("status", std::string()) != "ok")
      throw ProtocolError("oracle error: " + m.header.value("message", std::string("no message")));
    const std::size_t want = wire::has_grad(op) ? 2 : 1;
    if (m.payloads.size() != want) throw ProtocolError("response carries the wrong number of payloads");
    const wire::Payload* loss = m.find("loss");
    if (!loss || loss->shape != std::vector<std::int64_t>{1}) throw ProtocolError("response loss payload misshapen");
    LossGrad out{loss->data[0], {}};
    if (wire::has_grad(op)) {
      const auto want_shape = op == wire::Op::cond_loss_grad_wrt_condition ? std::vector<std::int64_t>{info_.cond_dim}
                                                                           : wire::image_dims(info_.shape);
      const wire::Payload* g = m.find("grad");
      if (!g || g->shape != want_shape) throw ProtocolError("response grad payload has the wrong shape");
      out.grad = Eigen::Map<const Vector>(g->data.data(), Eigen::Index(g->data.size()));
    }
    return out;
  }

  std::vector<LossGrad> pipeline(const std::vector<Request>& reqs) const {
    std::vector<LossGrad> out(reqs.size());
    std::map<std::int64_t, std::size_t> pending;  // id -> request index
    std::size_t next = 0, done = 0;
    while (done < reqs.size()) {
      while (next < reqs.size() && pending.size() < std::size_t(opt_.max_in_flight)) {
        const std::int64_t id = next_id_++;
        wire::send_all(fd_, wire::encode(encode_request(reqs[next], id)));
        pending[id] = next++;
      }
      const std::string frame = wire::read_frame(fd_);
      if (frame.empty()) throw TransportError("server closed the connection");
      const wire::Message m = wire::decode(frame);
      const Json& idj = m.header.contains("id") ? m.header["id"] : Json();
      if (!idj.is_number_integer()) {
        disconnect();  // the stream can no longer be trusted
        throw ProtocolError("response without a usable id: " + m.header.value("message", std::string()));
      }
      auto it = pending.find(idj.get<std::int64_t>());
      if (it == pending.end()) {
        disconnect();
        throw ProtocolError("response id matches no outstanding request");
      }
      const std::size_t idx = it->second;
      pending.erase(it);
      try {
        out[idx] = validate_response(m, reqs[idx].op);
      } catch (const ProtocolError&) {
        // drain the rest of the window so the connection stays in sync
        while (!pending.empty()) {
          const std::string f = wire::read_frame(fd_);
          if (f.empty()) break;
          const auto mm = wire::decode(f);
          if (mm.header.contains("id") && mm.header["id"].is_number_integer())
            pending.erase(mm.header["id"].get<std::int64_t>());
          else
            break;
        }
        if (!pending.empty()) disconnect();
        throw;
      }
      ++done;
    }
    return out;
  }

  wire::Endpoint ep_;
  RemoteOptions opt_;
  OracleInfo info_;
  mutable std::mutex mu_;
  mutable int fd_ = -1;
  mutable std::int64_t next_id_ = 1;
};

static_assert(LossOracle<RemoteOracle>);

}  // namespace mofit
