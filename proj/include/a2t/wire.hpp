#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "a2t/backend.hpp"
#include "a2t/errors.hpp"

namespace a2t::wire {

using nlohmann::json;

inline constexpr const char* kDefaultAddress = "127.0.0.1:8741";
inline constexpr std::chrono::milliseconds kDefaultTimeout{120'000};

/// Every client-side failure names the method that was being called.
class RpcError : public Error {
 public:
  RpcError(std::string method, const std::string& what) : Error(method + ": " + what), method_(std::move(method)) {}
  const std::string& method() const { return method_; }

 private:
  std::string method_;
};

class TimeoutError : public RpcError {
 public:
  using RpcError::RpcError;
};

/// The peer broke the protocol: unparseable line, unknown response id, ...
class ProtocolError : public RpcError {
 public:
  using RpcError::RpcError;
};

/// The peer answered with an error object.
class RemoteError : public RpcError {
 public:
  RemoteError(std::string method, std::string code, const std::string& message)
      : RpcError(std::move(method), "remote error " + code + ": " + message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

/// Could not connect, or the connection went away.
class ConnectionError : public RpcError {
 public:
  using RpcError::RpcError;
};

/// Line-oriented byte stream.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void write_line(std::string_view line) = 0;
  /// Blocks for the next line (without '\n'); nullopt on end of stream or close().
  virtual std::optional<std::string> read_line() = 0;
  /// Unblocks a pending read_line from another thread.
  virtual void close() = 0;
};

/// Transport over a pair of file descriptors (a socket passes the same fd twice).
class FdTransport final : public Transport {
 public:
  FdTransport(int read_fd, int write_fd, int child_pid = -1);
  ~FdTransport() override;
  FdTransport(const FdTransport&) = delete;
  FdTransport& operator=(const FdTransport&) = delete;

  void write_line(std::string_view line) override;
  std::optional<std::string> read_line() override;
  void close() override;

 private:
  int read_fd_;
  int write_fd_;
  int child_pid_;
  int wake_[2] = {-1, -1};
  std::string buffer_;
  std::mutex write_mu_;
};

std::unique_ptr<Transport> connect_tcp(const std::string& host, int port);
/// Runs `command` through /bin/sh and talks to its stdin/stdout.
std::unique_ptr<Transport> spawn_stdio(const std::string& command);
/// "host:port" or "exec:<command>".
std::unique_ptr<Transport> connect(const std::string& address);
/// A2T_BACKEND_ADDR if set, else 127.0.0.1:8741.
std::string default_address();
/// Two connected in-process endpoints.
std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> transport_pair();

/// Newline-delimited JSON client. Calls may come from many threads at once;
/// responses are routed to callers by id, in whatever order they arrive.
class RpcClient {
 public:
  explicit RpcClient(std::unique_ptr<Transport> transport, std::chrono::milliseconds timeout = kDefaultTimeout);
  ~RpcClient();
  RpcClient(const RpcClient&) = delete;
  RpcClient& operator=(const RpcClient&) = delete;

  json call(const std::string& method, json params);
  void set_timeout(std::chrono::milliseconds t) { timeout_ = t; }

 private:
  enum class Failure { none, connection, protocol };
  struct Pending {
    std::string method;
    std::promise<json> response;
  };

  void read_loop();
  void fail_all(Failure kind, const std::string& message);
  std::exception_ptr make_failure(const std::string& method) const;

  std::unique_ptr<Transport> transport_;
  std::atomic<std::chrono::milliseconds> timeout_;
  std::mutex mu_;
  std::map<std::int64_t, std::shared_ptr<Pending>> pending_;
  std::set<std::int64_t> abandoned_;
  std::int64_t next_id_ = 1;
  Failure failure_ = Failure::none;
  std::string failure_message_;
  std::thread reader_;
};

/// Request handler: takes a request document, returns the response document.
using Handler = std::function<json(const json&)>;

/// Serves requests from one transport until end of stream, in arrival order.
void serve(Transport& transport, const Handler& handler);

/// Accepts TCP connections and serves each on its own thread.
class TcpServer {
 public:
  TcpServer(const std::string& host, int port, Handler handler);
  ~TcpServer();
  int port() const { return port_; }
  /// Blocks until stop().
  void run();
  void stop();

 private:
  int listen_fd_ = -1;
  int port_ = 0;
  Handler handler_;
  std::atomic<bool> stopping_{false};
  std::mutex mu_;
  std::vector<std::shared_ptr<Transport>> connections_;
  std::vector<std::thread> workers_;
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

json image_to_json(const Image& img);
Image image_from_json(const json& doc);

/// Implements the protocol methods on top of local backends.
class BackendServer {
 public:
  BackendServer(const LanguageModelBackend& lm, const MatcherBackend& matcher, const VqaBackend& vqa)
      : lm_(lm), matcher_(matcher), vqa_(vqa) {}
  json handle(const json& request) const;
  Handler handler() const {
    return [this](const json& r) { return handle(r); };
  }

 private:
  json dispatch(const std::string& method, const json& params) const;
  const LanguageModelBackend& lm_;
  const MatcherBackend& matcher_;
  const VqaBackend& vqa_;
};

class WireLanguageModel final : public LanguageModelBackend {
 public:
  /// Queries lm.info once, so an unreachable backend fails here.
  explicit WireLanguageModel(RpcClient& client);
  Tokens tokenize(const std::string& text) const override;
  std::string detokenize(const Tokens& tokens) const override;
  TokenDist next_dist(const Tokens& context, int top_k) const override;
  Tokens continue_sentence(const Tokens& context, double top_p, int max_len, std::uint64_t seed) const override;
  int eos_id() const override { return eos_id_; }

 private:
  RpcClient& client_;
  int eos_id_ = -1;
};

class WireMatcher final : public MatcherBackend {
 public:
  explicit WireMatcher(RpcClient& client) : client_(client) {}
  std::vector<double> cosine_scores(const Image& image, const std::vector<std::string>& sentences) const override;

 private:
  RpcClient& client_;
};

class WireVqa final : public VqaBackend {
 public:
  explicit WireVqa(RpcClient& client) : client_(client) {}
  VqaOutput infer(const Image& image, const std::string& question) const override;

 private:
  RpcClient& client_;
};

}  // namespace a2t::wire
