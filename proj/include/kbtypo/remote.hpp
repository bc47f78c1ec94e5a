#pragma once

// Client side of the victim wire protocol (v1): newline-delimited JSON, one
// object per line, exactly one request in flight per connection.
//
//   {"id":1,"op":"handshake"}
//   {"id":2,"op":"predict","text":"..."}
//   {"id":3,"op":"grad_norms","text":"...","gold":1}
//
// Responses carry the request id and "ok". word_index in a grad_norms
// response is the index of the whitespace-delimited word of the request text
// that the token belongs to, or -1 for tokens that must never be edited.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "kbtypo/common.hpp"
#include "kbtypo/victim.hpp"

namespace kbtypo {

inline constexpr int kProtocolVersion = 1;

struct VictimEndpoint {
  enum class Transport { Stdio, Tcp };
  Transport transport = Transport::Stdio;
  std::string command;  // stdio: shell command line of the server
  std::string host;     // tcp
  int port = 0;         // tcp
  int timeout_ms = 30000;
  int protocol_version = kProtocolVersion;

  /// "stdio:<command>" or "tcp:<host>:<port>".
  static VictimEndpoint parse(std::string_view spec, int timeout_ms = 30000) {
    VictimEndpoint e;
    e.timeout_ms = timeout_ms;
    if (timeout_ms <= 0) throw DataError("victim timeout must be positive");
    if (spec.starts_with("stdio:")) {
      e.transport = Transport::Stdio;
      e.command = std::string(trim(spec.substr(6)));
      if (e.command.empty()) throw DataError("stdio victim needs a command");
      return e;
    }
    if (spec.starts_with("tcp:")) {
      auto rest = spec.substr(4);
      auto colon = rest.rfind(':');
      if (colon == std::string_view::npos || colon == 0) throw DataError("tcp victim must be tcp:<host>:<port>");
      e.transport = Transport::Tcp;
      e.host = std::string(rest.substr(0, colon));
      try {
        e.port = std::stoi(std::string(rest.substr(colon + 1)));
      } catch (const std::exception&) {
        throw DataError("bad tcp port in '" + std::string(spec) + "'");
      }
      if (e.port <= 0 || e.port > 65535) throw DataError("bad tcp port in '" + std::string(spec) + "'");
      return e;
    }
    throw DataError("victim endpoint must start with stdio: or tcp:");
  }
};

/// A bidirectional line stream.
class LineTransport {
 public:
  virtual ~LineTransport() = default;
  virtual void send_line(std::string_view line) = 0;
  /// Next line without its terminator. Throws VictimError on timeout and
  /// RemoteError when the peer is gone.
  virtual std::string recv_line(std::chrono::milliseconds timeout) = 0;
};

namespace detail {

class FdLineReader {
 public:
  std::string read_line(int fd, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw VictimError("victim timed out after " + std::to_string(timeout.count()) + " ms");
      pollfd p{fd, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(left.count()));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw RemoteError(std::string("poll: ") + std::strerror(errno));
      }
      if (r == 0) continue;
      char buf[4096];
      const auto n = ::read(fd, buf, sizeof buf);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw RemoteError(std::string("read: ") + std::strerror(errno));
      }
      if (n == 0) throw RemoteError("victim closed the connection");
      buffer_.append(buf, static_cast<std::size_t>(n));
    }
  }

 private:
  std::string buffer_;
};

inline void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const auto n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw RemoteError(std::string("write to victim: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

}  // namespace detail

/// Runs `/bin/sh -c command` with its stdin/stdout connected to us.
class StdioSubprocessTransport : public LineTransport {
 public:
  explicit StdioSubprocessTransport(const std::string& command) {
    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0) throw RemoteError(std::string("pipe: ") + std::strerror(errno));
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw RemoteError(std::string("pipe: ") + std::strerror(errno));
    }
    pid_ = ::fork();
    if (pid_ < 0) throw RemoteError(std::string("fork: ") + std::strerror(errno));
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    in_ = to_child[1];
    out_ = from_child[0];
    ::fcntl(in_, F_SETFD, FD_CLOEXEC);
    ::fcntl(out_, F_SETFD, FD_CLOEXEC);
  }

  StdioSubprocessTransport(const StdioSubprocessTransport&) = delete;
  StdioSubprocessTransport& operator=(const StdioSubprocessTransport&) = delete;

  ~StdioSubprocessTransport() override {
    if (in_ >= 0) ::close(in_);
    if (out_ >= 0) ::close(out_);
    if (pid_ > 0) {
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) != 0) return;
        ::usleep(10000);
      }
      ::kill(pid_, SIGTERM);
      ::waitpid(pid_, &status, 0);
    }
  }

  void send_line(std::string_view line) override {
    std::string buf(line);
    buf += '\n';
    detail::write_all(in_, buf);
  }

  std::string recv_line(std::chrono::milliseconds timeout) override { return reader_.read_line(out_, timeout); }

 private:
  pid_t pid_ = -1;
  int in_ = -1;
  int out_ = -1;
  detail::FdLineReader reader_;
};

class TcpTransport : public LineTransport {
 public:
  TcpTransport(const std::string& host, int port, std::chrono::milliseconds timeout) {
    ::signal(SIGPIPE, SIG_IGN);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0)
      throw RemoteError("resolve " + host + ": " + ::gai_strerror(rc));
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
    std::string last_error = "no address";
    for (auto* ai = res; ai; ai = ai->ai_next) {
      int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
      if (fd < 0) continue;
      const int flags = ::fcntl(fd, F_GETFL, 0);
      ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
      int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
      if (rc != 0 && errno == EINPROGRESS) {
        pollfd p{fd, POLLOUT, 0};
        rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
        int err = 0;
        socklen_t len = sizeof err;
        if (rc == 1 && ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) == 0 && err == 0) {
          rc = 0;
        } else {
          last_error = rc == 0 ? "connect timed out" : std::strerror(err ? err : errno);
          rc = -1;
        }
      } else if (rc != 0) {
        last_error = std::strerror(errno);
      }
      if (rc == 0) {
        ::fcntl(fd, F_SETFL, flags);
        fd_ = fd;
        return;
      }
      ::close(fd);
    }
    throw RemoteError("connect " + host + ":" + std::to_string(port) + ": " + last_error);
  }

  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;
  ~TcpTransport() override {
    if (fd_ >= 0) ::close(fd_);
  }

  void send_line(std::string_view line) override {
    std::string buf(line);
    buf += '\n';
    detail::write_all(fd_, buf);
  }

  std::string recv_line(std::chrono::milliseconds timeout) override { return reader_.read_line(fd_, timeout); }

 private:
  int fd_ = -1;
  detail::FdLineReader reader_;
};

inline std::unique_ptr<LineTransport> open_transport(const VictimEndpoint& e) {
  if (e.transport == VictimEndpoint::Transport::Tcp)
    return std::make_unique<TcpTransport>(e.host, e.port, std::chrono::milliseconds(e.timeout_ms));
  return std::make_unique<StdioSubprocessTransport>(e.command);
}

struct Capabilities {
  int version = 0;
  int num_classes = 0;
  std::string tokenizer_id;
  bool supports_gradients = false;
};

/// Request/response pairing over one transport. Not thread-safe.
class ProtocolClient {
 public:
  ProtocolClient(std::unique_ptr<LineTransport> transport, std::chrono::milliseconds timeout)
      : transport_(std::move(transport)), timeout_(timeout) {
    if (timeout.count() <= 0) throw ContractViolation("protocol timeout must be positive");
  }

  /// Failures here are connection failures (RemoteError), never per-example.
  Capabilities handshake(int expected_version = kProtocolVersion) {
    nlohmann::json r;
    try {
      r = call({{"id", 0}, {"op", "handshake"}});
    } catch (const VictimError& e) {
      throw RemoteError(std::string("handshake failed: ") + e.what());
    }
    Capabilities caps;
    try {
      caps.version = r.at("version").get<int>();
      caps.num_classes = r.at("num_classes").get<int>();
      caps.tokenizer_id = r.at("tokenizer_id").get<std::string>();
      caps.supports_gradients = r.at("supports_gradients").get<bool>();
    } catch (const nlohmann::json::exception& e) {
      throw RemoteError(std::string("handshake: malformed reply: ") + e.what());
    }
    if (caps.version != expected_version)
      throw RemoteError("protocol version mismatch: server speaks " + std::to_string(caps.version) + ", client " +
                        std::to_string(expected_version));
    if (caps.num_classes < 2) throw RemoteError("handshake: num_classes must be at least 2");
    return caps;
  }

  Prediction predict(std::string_view text) {
    const auto r = call({{"id", 0}, {"op", "predict"}, {"text", text}});
    try {
      return {r.at("label").get<int>(), r.at("probs").get<std::vector<double>>()};
    } catch (const nlohmann::json::exception& e) {
      throw VictimError(std::string("predict: malformed reply: ") + e.what());
    }
  }

  GradientReport grad_norms(std::string_view text, int gold) {
    const auto r = call({{"id", 0}, {"op", "grad_norms"}, {"text", text}, {"gold", gold}});
    GradientReport g;
    try {
      g.tokens = r.at("tokens").get<std::vector<std::string>>();
      g.chunk_index = r.at("word_index").get<std::vector<int>>();
      g.component_norms = r.at("norms").get<std::vector<double>>();
      g.loss = r.at("loss").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw VictimError(std::string("grad_norms: malformed reply: ") + e.what());
    }
    if (g.component_norms.size() != g.tokens.size())
      throw VictimError("grad_norms: " + std::to_string(g.component_norms.size()) + " norms for " +
                        std::to_string(g.tokens.size()) + " tokens");
    validate_report(g);
    return g;
  }

  std::int64_t last_id() const { return next_id_ - 1; }

 private:
  nlohmann::json call(nlohmann::ordered_json request) {
    const std::int64_t id = next_id_++;
    request["id"] = id;
    transport_->send_line(request.dump());
    for (;;) {
      const std::string line = transport_->recv_line(timeout_);
      nlohmann::json reply;
      try {
        reply = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw VictimError("protocol error: malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
      }
      if (!reply.is_object() || !reply.contains("id") || !reply["id"].is_number_integer())
        throw VictimError("protocol error: reply without an integer id");
      const auto rid = reply["id"].get<std::int64_t>();
      if (rid < id) continue;  // late answer to a request that already timed out
      if (rid != id) throw VictimError("protocol error: reply id " + std::to_string(rid) + " for request " + std::to_string(id));
      if (!reply.contains("ok") || !reply["ok"].is_boolean()) throw VictimError("protocol error: reply without ok flag");
      if (!reply["ok"].get<bool>())
        throw VictimError("victim error: " + reply.value("error", std::string("(no message)")));
      return reply;
    }
  }

  std::unique_ptr<LineTransport> transport_;
  std::chrono::milliseconds timeout_;
  std::int64_t next_id_ = 1;
};

/// Victim served over the wire protocol. Calls are serialized on one
/// connection.
class RemoteVictim : public Victim {
 public:
  RemoteVictim(std::unique_ptr<LineTransport> transport, std::chrono::milliseconds timeout)
      : client_(std::move(transport), timeout) {
    caps_ = client_.handshake();
  }

  explicit RemoteVictim(const VictimEndpoint& endpoint)
      : RemoteVictim(open_transport(endpoint), std::chrono::milliseconds(endpoint.timeout_ms)) {}

  const Capabilities& capabilities() const { return caps_; }
  int num_classes() const override { return caps_.num_classes; }
  bool supports_gradients() const override { return caps_.supports_gradients; }
  bool concurrent() const override { return false; }

  Prediction predict(std::string_view text) const override {
    std::lock_guard lock(mu_);
    auto p = client_.predict(text);
    validate_prediction(p, caps_.num_classes);
    return p;
  }

  GradientReport grad_norms(std::string_view text, int gold) const override {
    if (!caps_.supports_gradients) throw ContractViolation("victim does not provide gradients");
    std::lock_guard lock(mu_);
    return client_.grad_norms(text, gold);
  }

 private:
  mutable std::mutex mu_;
  mutable ProtocolClient client_;
  Capabilities caps_;
};

/// Server half of the protocol around any local victim: one request line in,
/// one response line out.
class ProtocolServer {
 public:
  ProtocolServer(const Victim& victim, std::string tokenizer_id) : victim_(victim), tokenizer_id_(std::move(tokenizer_id)) {}

  std::string handle_line(std::string_view line) const {
    using ordered_json = nlohmann::ordered_json;
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      return ordered_json{{"id", -1}, {"ok", false}, {"error", std::string("malformed request: ") + e.what()}}.dump();
    }
    const auto id = req.is_object() && req.contains("id") && req["id"].is_number_integer() ? req["id"].get<std::int64_t>() : -1;
    try {
      const auto op = req.at("op").get<std::string>();
      if (op == "handshake")
        return ordered_json{{"id", id},
                            {"ok", true},
                            {"version", kProtocolVersion},
                            {"num_classes", victim_.num_classes()},
                            {"tokenizer_id", tokenizer_id_},
                            {"supports_gradients", victim_.supports_gradients()}}
            .dump();
      if (op == "predict") {
        const auto p = victim_.predict(req.at("text").get<std::string>());
        return ordered_json{{"id", id}, {"ok", true}, {"probs", p.probs}, {"label", p.label}}.dump();
      }
      if (op == "grad_norms") {
        const auto g = victim_.grad_norms(req.at("text").get<std::string>(), req.at("gold").get<int>());
        return ordered_json{{"id", id},
                            {"ok", true},
                            {"tokens", g.tokens},
                            {"word_index", g.chunk_index},
                            {"norms", g.component_norms},
                            {"loss", g.loss}}
            .dump();
      }
      return ordered_json{{"id", id}, {"ok", false}, {"error", "unknown op '" + op + "'"}}.dump();
    } catch (const std::exception& e) {
      return ordered_json{{"id", id}, {"ok", false}, {"error", e.what()}}.dump();
    }
  }

  /// Serves until `in` is exhausted.
  template <class In, class Out>
  void run(In& in, Out& out) const {
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      out << handle_line(line) << '\n' << std::flush;
    }
  }

 private:
  const Victim& victim_;
  std::string tokenizer_id_;
};

/// In-process transport: each sent line is answered by `respond`.
class LoopbackTransport : public LineTransport {
 public:
  explicit LoopbackTransport(std::function<std::string(std::string_view)> respond) : respond_(std::move(respond)) {}

  void send_line(std::string_view line) override {
    sent_.emplace_back(line);
    pending_.push_back(respond_(line));
  }
  std::string recv_line(std::chrono::milliseconds timeout) override {
    if (pending_.empty()) throw VictimError("victim timed out after " + std::to_string(timeout.count()) + " ms");
    std::string r = std::move(pending_.front());
    pending_.erase(pending_.begin());
    return r;
  }
  const std::vector<std::string>& sent() const { return sent_; }

 private:
  std::function<std::string(std::string_view)> respond_;
  std::vector<std::string> sent_;
  std::vector<std::string> pending_;
};

}  // namespace kbtypo
