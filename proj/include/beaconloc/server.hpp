#pragma once

// Location server: ingests OBS records from anchors and targets over TCP and answers QUERY
// requests with the fix of a completed window.
//
// Protocol, one message per '\n'-terminated line:
//   client: OBS <anchor|target> <receiverId> src <anchorId> seq <n> ts <seconds>   (no reply)
//   client: QUERY target <id> [window <start>]
//   server: FIX ... | NOFIX target <id> [window <start>] | ERR <message>
//
// A window is complete once the target has reported a timestamp at or past the window's end.
// Windows are aligned to a fixed origin, so the set of observations in a window, and hence its
// fix, does not depend on the order in which observations arrived.

#include "beaconloc/formats.hpp"
#include "beaconloc/pipeline.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <tuple>
#include <vector>

namespace beaconloc {

struct ServerOptions {
  double window_length = kDefaultWindowSeconds;
  double window_origin = 0.0;  // target-clock time at which window 0 starts
  double retention = 0.0;      // seconds of target time to keep; 0 keeps everything
  std::string bind_address = "127.0.0.1";
};

/// Deduplicated observation store shared by all connections.
class WindowStore {
 public:
  explicit WindowStore(ServerOptions options) : options_(std::move(options)) {}

  // Returns false when the record was a duplicate or falls in an evicted window.
  bool add(const BeaconObservation& obs) {
    std::lock_guard lock(mutex_);
    if (obs.receiver_kind == ReceiverKind::target && window_index(obs.timestamp) < first_live_window(obs.receiver_id)) {
      return false;
    }
    if (evicted_beacons_.contains({obs.source_anchor_id, obs.seqno})) return false;
    auto [it, inserted] = records_.emplace(obs.key(), obs);
    if (!inserted) {
      if (obs.timestamp >= it->second.timestamp) return false;
      it->second.timestamp = obs.timestamp;
    }
    if (obs.receiver_kind == ReceiverKind::target) {
      auto& latest = latest_target_[obs.receiver_id];
      latest = std::max(latest, obs.timestamp);
      evict(obs.receiver_id);
    }
    ++version_;
    return true;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
  }

  std::uint64_t version() const {
    std::lock_guard lock(mutex_);
    return version_;
  }

  // All anchor-side records plus the given target's records, in canonical key order.
  std::vector<BeaconObservation> snapshot(int target, std::optional<double>* latest = nullptr,
                                          std::uint64_t* version = nullptr) const {
    std::lock_guard lock(mutex_);
    std::vector<BeaconObservation> out;
    for (const auto& [key, obs] : records_) {
      if (obs.receiver_kind == ReceiverKind::anchor || obs.receiver_id == target) out.push_back(obs);
    }
    if (latest != nullptr) {
      auto it = latest_target_.find(target);
      *latest = it == latest_target_.end() ? std::nullopt : std::optional<double>(it->second);
    }
    if (version != nullptr) *version = version_;
    return out;
  }

  const ServerOptions& options() const { return options_; }

  std::int64_t window_index(double t) const {
    return static_cast<std::int64_t>(std::floor((t - options_.window_origin) / options_.window_length));
  }

 private:
  std::int64_t first_live_window(int target) const {
    auto it = first_live_.find(target);
    return it == first_live_.end() ? std::numeric_limits<std::int64_t>::min() : it->second;
  }

  // Drops windows that ended more than `retention` seconds before the target's latest timestamp.
  void evict(int target) {
    if (options_.retention <= 0.0) return;
    const double cutoff = latest_target_[target] - options_.retention;
    const auto live = window_index(cutoff);
    if (live <= first_live_window(target)) return;
    first_live_[target] = live;
    std::set<std::pair<int, std::uint64_t>> dropped;
    std::set<std::pair<int, std::uint64_t>> kept;
    for (auto it = records_.begin(); it != records_.end();) {
      const auto& obs = it->second;
      if (obs.receiver_kind == ReceiverKind::target && obs.receiver_id == target && window_index(obs.timestamp) < live) {
        dropped.insert({obs.source_anchor_id, obs.seqno});
        it = records_.erase(it);
      } else {
        if (obs.receiver_kind == ReceiverKind::target) kept.insert({obs.source_anchor_id, obs.seqno});
        ++it;
      }
    }
    for (const auto& beacon : dropped) {
      if (kept.contains(beacon)) continue;
      evicted_beacons_.insert(beacon);
    }
    std::erase_if(records_, [&](const auto& kv) {
      const auto& obs = kv.second;
      return obs.receiver_kind == ReceiverKind::anchor && evicted_beacons_.contains({obs.source_anchor_id, obs.seqno});
    });
  }

  using Key = decltype(BeaconObservation{}.key());

  ServerOptions options_;
  mutable std::mutex mutex_;
  std::map<Key, BeaconObservation> records_;
  std::map<int, double> latest_target_;
  std::map<int, std::int64_t> first_live_;
  std::set<std::pair<int, std::uint64_t>> evicted_beacons_;
  std::uint64_t version_ = 0;
};

class LocationServer {
 public:
  LocationServer(TestbedConfig config, SolverParams params, ServerOptions options = {})
      : config_(std::move(config)), params_(params), store_(std::move(options)) {
    config_.validate();
    params_.validate();
  }

  LocationServer(const LocationServer&) = delete;
  LocationServer& operator=(const LocationServer&) = delete;

  ~LocationServer() { stop(); }

  bool ingest(const BeaconObservation& obs) { return store_.add(obs); }

  std::size_t observation_count() const { return store_.size(); }

  /// Fix of a completed window for `target`: the latest one, or the one starting at `window_start`.
  /// Empty when the window is not complete or does not support a fix.
  FixRecord query(int target, std::optional<double> window_start = std::nullopt) const {
    std::optional<double> latest;
    std::uint64_t version = 0;
    const auto stream = store_.snapshot(target, &latest, &version);
    if (!latest) return NoFix{target, window_start};

    const auto& opt = store_.options();
    std::vector<ObservationWindow> windows = window_observations(stream, opt.window_length, opt.window_origin);
    std::erase_if(windows, [&](const ObservationWindow& w) { return w.start_time + w.length > *latest; });
    const ObservationWindow* chosen = nullptr;
    if (window_start) {
      for (const auto& w : windows) {
        if (w.start_time == *window_start) chosen = &w;
      }
    } else if (!windows.empty()) {
      chosen = &windows.back();
    }
    if (chosen == nullptr) return NoFix{target, window_start};

    {
      std::lock_guard lock(cache_mutex_);
      if (cache_version_ != version) {
        cache_.clear();
        cache_version_ = version;
      }
      if (auto it = cache_.find({target, chosen->start_time}); it != cache_.end()) return it->second;
    }
    FixRecord result = NoFix{target, chosen->start_time};
    if (auto fix = locate(*chosen, config_, params_)) result = std::move(*fix);
    std::lock_guard lock(cache_mutex_);
    if (cache_version_ == version) cache_[{target, chosen->start_time}] = result;
    return result;
  }

  // Handles one protocol line; returns the reply, or an empty string when none is due.
  std::string handle_line(std::string_view line) {
    const auto tok = detail::split_ws(line);
    if (tok.empty()) return {};
    try {
      if (tok[0] == "OBS") {
        ingest(parse_observation_line(line));
        return {};
      }
      if (tok[0] == "QUERY") {
        if (tok.size() != 3 && tok.size() != 5) throw ParseError(0, "", "QUERY needs 'target <id> [window <start>]'");
        detail::expect_keyword(tok[1], "target", 0);
        const int target = detail::parse_number<int>(tok[2], 0, "target");
        std::optional<double> window;
        if (tok.size() == 5) {
          detail::expect_keyword(tok[3], "window", 0);
          window = detail::parse_number<double>(tok[4], 0, "window");
        }
        return format_record(query(target, window));
      }
      return "ERR unknown message kind '" + std::string(tok[0]) + "'";
    } catch (const std::exception& e) {
      return std::string("ERR ") + e.what();
    }
  }

  /// Binds and starts accepting connections on a background thread. Port 0 picks a free port.
  /// Returns the bound port.
  std::uint16_t start(std::uint16_t port) {
    if (running_.exchange(true)) throw std::logic_error("server already running");
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::system_error(errno, std::generic_category(), "socket");
    int yes = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, store_.options().bind_address.c_str(), &addr.sin_addr) != 1) {
      close_listener();
      throw std::invalid_argument("bad bind address " + store_.options().bind_address);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(listen_fd_, 64) < 0) {
      const int err = errno;
      close_listener();
      throw std::system_error(err, std::generic_category(), "bind/listen");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    accept_thread_ = std::thread([this] { accept_loop(); });
    return port_;
  }

  void stop() {
    if (!running_.exchange(false)) return;
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> workers;
    {
      std::lock_guard lock(workers_mutex_);
      workers.swap(workers_);
    }
    for (auto& w : workers) w.join();
    close_listener();
  }

  std::uint16_t port() const { return port_; }

 private:
  static constexpr int kPollMillis = 50;
  static constexpr std::size_t kMaxLine = 4096;

  void close_listener() {
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
    running_ = false;
  }

  void accept_loop() {
    while (running_) {
      pollfd pfd{listen_fd_, POLLIN, 0};
      if (::poll(&pfd, 1, kPollMillis) <= 0) continue;
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      std::lock_guard lock(workers_mutex_);
      workers_.emplace_back([this, fd] { serve_connection(fd); });
    }
  }

  static bool send_all(int fd, std::string data) {
    data += '\n';
    std::size_t sent = 0;
    while (sent < data.size()) {
      const auto n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
      if (n <= 0) return false;
      sent += static_cast<std::size_t>(n);
    }
    return true;
  }

  void serve_connection(int fd) {
    std::string buffer;
    char chunk[4096];
    bool discarding = false;
    while (running_) {
      pollfd pfd{fd, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, kPollMillis);
      if (ready == 0) continue;
      if (ready < 0) break;
      const auto n = ::recv(fd, chunk, sizeof(chunk), 0);
      if (n <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (auto nl = buffer.find('\n', start); nl != std::string::npos; nl = buffer.find('\n', start)) {
        const std::string_view line(buffer.data() + start, nl - start);
        start = nl + 1;
        if (discarding) {
          discarding = false;
          continue;
        }
        const auto reply = line.size() > kMaxLine ? std::string("ERR line too long") : handle_line(line);
        if (!reply.empty() && !send_all(fd, reply)) {
          ::close(fd);
          return;
        }
      }
      buffer.erase(0, start);
      if (buffer.size() > kMaxLine) {
        buffer.clear();
        discarding = true;
        if (!send_all(fd, "ERR line too long")) break;
      }
    }
    ::close(fd);
  }

  TestbedConfig config_;
  SolverParams params_;
  WindowStore store_;

  mutable std::mutex cache_mutex_;
  mutable std::map<std::pair<int, double>, FixRecord> cache_;
  mutable std::uint64_t cache_version_ = 0;

  std::atomic<bool> running_{false};
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::thread accept_thread_;
  std::mutex workers_mutex_;
  std::vector<std::thread> workers_;
};

}  // namespace beaconloc
