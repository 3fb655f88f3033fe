#pragma once

// Minimal DevTools-protocol plumbing: a launched headless browser process
// and a JSON-over-websocket connection multiplexing flattened sessions.

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <future>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace uicoder::cdp {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

class BrowserProcess {
public:
    struct Options {
        std::filesystem::path executable;
        std::optional<std::filesystem::path> fonts_conf;
        std::vector<std::string> extra_args;
        std::chrono::milliseconds launch_timeout{30000};
    };

    explicit BrowserProcess(Options options);
    ~BrowserProcess();
    BrowserProcess(const BrowserProcess&) = delete;
    BrowserProcess& operator=(const BrowserProcess&) = delete;

    const std::string& websocket_url() const noexcept { return ws_url_; }
    bool alive() const;

private:
    int pid_ = -1;
    std::filesystem::path profile_dir_;
    std::string ws_url_;
};

class Connection {
public:
    explicit Connection(const std::string& ws_url);
    ~Connection();
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;

    // Resolves to the full response message ({"id","result"} or {"id","error"}).
    std::shared_future<json> send(const std::string& method, json params = json::object(),
                                  const std::string& session_id = {});

    // Send and wait; throws Error(timeout) at the deadline and
    // Error(protocol_error) for protocol-level errors.
    json call(const std::string& method, json params, const std::string& session_id, Clock::time_point deadline);

    void subscribe(const std::string& session_id);
    void unsubscribe(const std::string& session_id);

    // Next event for a subscribed session. Returns nullopt once `ready()`
    // holds, at the deadline, or when the connection is closed.
    std::optional<json> next_event(const std::string& session_id, Clock::time_point deadline,
                                   const std::function<bool()>& ready);

    bool closed() const;

private:
    class Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace uicoder::cdp
