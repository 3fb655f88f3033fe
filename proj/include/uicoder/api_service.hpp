#pragma once

// HTTP API over sessions, rounds, blobs and progress events.
//
//   POST /sessions                  multipart: image (PNG/JPEG), policy?  -> 201 summary, generation runs async
//   GET  /sessions                  summaries
//   GET  /sessions/{id}             summary
//   POST /sessions/{id}/polish      -> round summary on completion (409 while busy)
//   POST /sessions/{id}/edits       {"instruction": "..."} -> round summary
//   GET  /sessions/{id}/rounds      round summaries ordered by index
//   GET  /sessions/{id}/events      server-sent events; ?cursor=N or Last-Event-ID resumes
//   GET  /blobs/{hash}              raw bytes, immutable
//
// Responses are views of the store plus a small in-memory table of running
// operations, so a restart loses no persisted state. Events are derived from
// persisted rounds, which keeps cursors stable across restarts.

#include "uicoder/config.hpp"

#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace uicoder {

enum class SessionStatus { idle, running, error };
std::string_view to_string(SessionStatus status);

class ApiService {
public:
    explicit ApiService(Runtime& runtime);
    ~ApiService();

    // Binds (port 0 picks a free port) and serves on a background thread.
    int start(const std::string& host, int port);
    // Binds and serves on the calling thread until stop().
    void run(const std::string& host, int port);
    void stop();

    // Events for a session in stream order; exposed for tests.
    std::vector<nlohmann::json> events(const std::string& session_id);

private:
    struct Live {
        SessionStatus status = SessionStatus::idle;
        std::optional<RoundKind> in_flight;
        std::optional<std::string> error;
        AdvancePolicy policy = AdvancePolicy::always_advance;
        ImageRef target;
        std::string created_at;
    };

    void routes();
    bool exists(const std::string& id);
    nlohmann::json summary(const std::string& id);
    std::optional<Live> live(const std::string& id);
    bool try_begin(const std::string& id, RoundKind kind);
    void finish(const std::string& id, std::optional<std::string> error);

    Runtime& runtime_;
    std::unique_ptr<Judge> judge_;
    std::unique_ptr<SessionEngine> engine_;
    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;

    std::mutex mutex_;
    std::condition_variable changed_;
    std::uint64_t version_ = 0;
    std::map<std::string, Live> live_;
    std::vector<std::jthread> jobs_;
    bool stopping_ = false;
};

}  // namespace uicoder
