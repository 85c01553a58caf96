#include <cerrno>
#include <cstring>

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include "a2t/wire.hpp"

namespace a2t::wire {

namespace {

std::string errno_text() { return std::strerror(errno); }

void ignore_sigpipe() {
  static const bool once = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)once;
}

}  // namespace

FdTransport::FdTransport(int read_fd, int write_fd, int child_pid)
    : read_fd_(read_fd), write_fd_(write_fd), child_pid_(child_pid) {
  ignore_sigpipe();
  if (::pipe(wake_) != 0) throw Error("pipe: " + errno_text());
}

FdTransport::~FdTransport() {
  close();
  ::close(read_fd_);
  if (write_fd_ != read_fd_) ::close(write_fd_);
  ::close(wake_[0]);
  ::close(wake_[1]);
  if (child_pid_ > 0) {
    int status = 0;
    ::waitpid(child_pid_, &status, 0);
  }
}

void FdTransport::write_line(std::string_view line) {
  std::string data(line);
  data += '\n';
  std::lock_guard lock(write_mu_);
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error("write: " + errno_text());
    }
    off += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> FdTransport::read_line() {
  for (;;) {
    const std::size_t nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    pollfd fds[2] = {{read_fd_, POLLIN, 0}, {wake_[0], POLLIN, 0}};
    if (::poll(fds, 2, -1) < 0) {
      if (errno == EINTR) continue;
      return std::nullopt;
    }
    if (fds[1].revents) return std::nullopt;
    char chunk[65536];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return std::nullopt;
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void FdTransport::close() {
  const char byte = 1;
  [[maybe_unused]] ssize_t n = ::write(wake_[1], &byte, 1);
  ::shutdown(read_fd_, SHUT_RDWR);
  if (child_pid_ > 0 && write_fd_ != read_fd_) {
    std::lock_guard lock(write_mu_);
    // EOF on the child's stdin asks it to exit.
    ::close(write_fd_);
    write_fd_ = ::open("/dev/null", O_WRONLY);
  }
}

std::unique_ptr<Transport> connect_tcp(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw ConnectionError("connect", host + ":" + service + ": " + ::gai_strerror(rc));
  int fd = -1;
  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    last_error = errno_text();
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw ConnectionError("connect", host + ":" + service + ": " + last_error);
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return std::make_unique<FdTransport>(fd, fd);
}

std::unique_ptr<Transport> spawn_stdio(const std::string& command) {
  int to_child[2], from_child[2];
  if (::pipe(to_child) != 0) throw ConnectionError("spawn", errno_text());
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw ConnectionError("spawn", errno_text());
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw ConnectionError("spawn", errno_text());
  if (pid == 0) {
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
  return std::make_unique<FdTransport>(from_child[0], to_child[1], pid);
}

std::unique_ptr<Transport> connect(const std::string& address) {
  if (address.rfind("exec:", 0) == 0) return spawn_stdio(address.substr(5));
  const std::size_t colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0)
    throw ConnectionError("connect", "address '" + address + "' is not host:port or exec:<command>");
  int port = 0;
  try {
    port = std::stoi(address.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConnectionError("connect", "bad port in '" + address + "'");
  }
  return connect_tcp(address.substr(0, colon), port);
}

std::string default_address() {
  const char* env = std::getenv("A2T_BACKEND_ADDR");
  return env && *env ? env : kDefaultAddress;
}

std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> transport_pair() {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) throw Error("socketpair: " + errno_text());
  return {std::make_unique<FdTransport>(fds[0], fds[0]), std::make_unique<FdTransport>(fds[1], fds[1])};
}

// ---------------------------------------------------------------------------

RpcClient::RpcClient(std::unique_ptr<Transport> transport, std::chrono::milliseconds timeout)
    : transport_(std::move(transport)), timeout_(timeout) {
  reader_ = std::thread([this] { read_loop(); });
}

RpcClient::~RpcClient() {
  transport_->close();
  if (reader_.joinable()) reader_.join();
}

std::exception_ptr RpcClient::make_failure(const std::string& method) const {
  if (failure_ == Failure::protocol) return std::make_exception_ptr(ProtocolError(method, failure_message_));
  return std::make_exception_ptr(ConnectionError(method, failure_message_));
}

void RpcClient::fail_all(Failure kind, const std::string& message) {
  std::lock_guard lock(mu_);
  if (failure_ == Failure::none) {
    failure_ = kind;
    failure_message_ = message;
  }
  for (auto& [id, p] : pending_) p->response.set_exception(make_failure(p->method));
  pending_.clear();
}

void RpcClient::read_loop() {
  for (;;) {
    std::optional<std::string> line = transport_->read_line();
    if (!line) {
      fail_all(Failure::connection, "connection closed");
      return;
    }
    if (line->empty()) continue;
    json doc = json::parse(*line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("id") || !doc["id"].is_number_integer()) {
      fail_all(Failure::protocol, "malformed response line");
      return;
    }
    const std::int64_t id = doc["id"].get<std::int64_t>();
    std::shared_ptr<Pending> p;
    {
      std::lock_guard lock(mu_);
      auto it = pending_.find(id);
      if (it != pending_.end()) {
        p = it->second;
        pending_.erase(it);
      } else if (abandoned_.erase(id)) {
        continue;  // late answer to a call that already timed out
      }
    }
    if (!p) {
      fail_all(Failure::protocol, "response id " + std::to_string(id) + " matches no outstanding request");
      return;
    }
    p->response.set_value(std::move(doc));
  }
}

json RpcClient::call(const std::string& method, json params) {
  auto p = std::make_shared<Pending>();
  p->method = method;
  std::future<json> fut = p->response.get_future();
  std::int64_t id = 0;
  {
    std::lock_guard lock(mu_);
    if (failure_ != Failure::none) std::rethrow_exception(make_failure(method));
    id = next_id_++;
    pending_.emplace(id, p);
  }
  const json request = {{"id", id}, {"method", method}, {"params", std::move(params)}};
  try {
    transport_->write_line(request.dump());
  } catch (const std::exception& e) {
    std::lock_guard lock(mu_);
    pending_.erase(id);
    throw ConnectionError(method, e.what());
  }

  if (fut.wait_for(timeout_.load()) != std::future_status::ready) {
    std::lock_guard lock(mu_);
    if (pending_.erase(id)) {
      abandoned_.insert(id);
      throw TimeoutError(method, "no response within " + std::to_string(timeout_.load().count()) + " ms");
    }
  }
  json response = fut.get();
  if (auto err = response.find("error"); err != response.end() && !err->is_null()) {
    if (!err->is_object()) throw ProtocolError(method, "error member is not an object");
    throw RemoteError(method, err->value("code", std::string("unknown")), err->value("message", std::string()));
  }
  auto result = response.find("result");
  if (result == response.end()) throw ProtocolError(method, "response has neither result nor error");
  return std::move(*result);
}

// ---------------------------------------------------------------------------

void serve(Transport& transport, const Handler& handler) {
  while (std::optional<std::string> line = transport.read_line()) {
    if (line->empty()) continue;
    json request = json::parse(*line, nullptr, false);
    json response;
    if (request.is_discarded() || !request.is_object()) {
      response = {{"id", nullptr}, {"error", {{"code", "parse_error"}, {"message", "request is not a JSON object"}}}};
    } else {
      response = handler(request);
    }
    try {
      transport.write_line(response.dump());
    } catch (const std::exception&) {
      return;
    }
  }
}

TcpServer::TcpServer(const std::string& host, int port, Handler handler) : handler_(std::move(handler)) {
  ignore_sigpipe();
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0)
    throw Error("listen " + host + ": " + ::gai_strerror(rc));
  listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (listen_fd_ < 0 || ::bind(listen_fd_, res->ai_addr, res->ai_addrlen) != 0 || ::listen(listen_fd_, 16) != 0) {
    const std::string err = errno_text();
    ::freeaddrinfo(res);
    if (listen_fd_ >= 0) ::close(listen_fd_);
    throw Error("listen " + host + ":" + std::to_string(port) + ": " + err);
  }
  ::freeaddrinfo(res);
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

TcpServer::~TcpServer() {
  stop();
  {
    std::lock_guard lock(mu_);
    for (auto& c : connections_) c->close();
  }
  for (std::thread& t : workers_)
    if (t.joinable()) t.join();
  ::close(listen_fd_);
}

void TcpServer::run() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    auto conn = std::shared_ptr<Transport>(std::make_unique<FdTransport>(fd, fd));
    std::lock_guard lock(mu_);
    connections_.push_back(conn);
    workers_.emplace_back([this, conn] { serve(*conn, handler_); });
  }
}

void TcpServer::stop() {
  stopping_ = true;
  ::shutdown(listen_fd_, SHUT_RDWR);
}

}  // namespace a2t::wire
