#include "uicoder/api_service.hpp"

#include "uicoder/error.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <regex>
#include <set>

namespace uicoder {

using nlohmann::json;

std::string_view to_string(SessionStatus status) {
    switch (status) {
    case SessionStatus::idle: return "idle";
    case SessionStatus::running: return "running";
    case SessionStatus::error: return "error";
    }
    return "idle";
}

namespace {

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::unknown_id: return 404;
    case ErrorCode::conflict: return 409;
    case ErrorCode::invalid_argument:
    case ErrorCode::missing_slot:
    case ErrorCode::image_arity_mismatch: return 400;
    case ErrorCode::precondition: return 422;
    case ErrorCode::auth_failure: return 503;
    case ErrorCode::rate_limited:
    case ErrorCode::timeout:
    case ErrorCode::transport:
    case ErrorCode::malformed_provider_response:
    case ErrorCode::extraction_failed:
    case ErrorCode::malformed_tags:
    case ErrorCode::no_boxed_content:
    case ErrorCode::unbalanced_braces:
    case ErrorCode::parse_error: return 502;
    default: return 500;
    }
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, std::string_view code = "") {
    json body{{"error", message}};
    if (!code.empty()) body["code"] = std::string(code);
    send_json(res, status, body);
}

json api_round(const Round& round) {
    json j = round_summary(round);
    j["render_blob"] = round.output_render.ok() ? json(round.output_render.image().hash) : json(nullptr);
    return j;
}

std::string sse(std::size_t id, const json& event) {
    return "id: " + std::to_string(id) + "\nevent: " + event.at("type").get<std::string>() + "\ndata: " +
           event.dump() + "\n\n";
}

}  // namespace

ApiService::ApiService(Runtime& runtime) : runtime_(runtime) {
    judge_ = runtime_.make_judge();
    engine_ = std::make_unique<SessionEngine>(runtime_.store(), runtime_.client(), runtime_.prompts(),
                                              runtime_.renderer(), runtime_.session_options(), judge_.get());
    server_ = std::make_unique<httplib::Server>();
    server_->new_task_queue = [] { return new httplib::ThreadPool(32); };
    routes();
}

ApiService::~ApiService() {
    stop();
    jobs_.clear();  // joins outstanding generations
}

int ApiService::start(const std::string& host, int port) {
    int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorCode::io_error, "cannot bind " + host + ":" + std::to_string(port));
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void ApiService::run(const std::string& host, int port) {
    if (!server_->bind_to_port(host, port))
        throw Error(ErrorCode::io_error, "cannot bind " + host + ":" + std::to_string(port));
    spdlog::info("serving on http://{}:{}", host, port);
    server_->listen_after_bind();
}

void ApiService::stop() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
        ++version_;
    }
    changed_.notify_all();
    if (server_) server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
}

std::optional<ApiService::Live> ApiService::live(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = live_.find(id);
    if (it == live_.end()) return std::nullopt;
    return it->second;
}

bool ApiService::exists(const std::string& id) {
    if (live(id)) return true;
    return runtime_.store().has_session(id);
}

bool ApiService::try_begin(const std::string& id, RoundKind kind) {
    std::lock_guard lock(mutex_);
    Live& l = live_[id];
    if (l.status == SessionStatus::running) return false;
    l.status = SessionStatus::running;
    l.in_flight = kind;
    l.error.reset();
    ++version_;
    changed_.notify_all();
    return true;
}

void ApiService::finish(const std::string& id, std::optional<std::string> error) {
    std::lock_guard lock(mutex_);
    Live& l = live_[id];
    l.status = error ? SessionStatus::error : SessionStatus::idle;
    l.in_flight.reset();
    l.error = std::move(error);
    ++version_;
    changed_.notify_all();
}

json ApiService::summary(const std::string& id) {
    auto l = live(id);
    std::optional<Session> s;
    if (runtime_.store().has_session(id)) s = runtime_.store().load_session(id);
    json j;
    j["id"] = id;
    j["status"] = std::string(to_string(l ? l->status : SessionStatus::idle));
    if (l && l->error) j["error"] = *l->error;
    j["round_count"] = s ? s->rounds.size() : 0;
    j["mode_history"] = json::array();
    if (s) {
        for (auto kind : s->mode_history()) j["mode_history"].push_back(std::string(to_string(kind)));
        j["head_round_index"] = s->head_index() ? json(*s->head_index()) : json(nullptr);
        j["policy"] = std::string(to_string(s->policy));
        j["target"] = s->target.hash;
        j["created_at"] = s->created_at;
    } else {
        j["head_round_index"] = nullptr;
        if (l) {
            j["policy"] = std::string(to_string(l->policy));
            j["target"] = l->target.hash;
            j["created_at"] = l->created_at;
        }
    }
    return j;
}

std::vector<json> ApiService::events(const std::string& id) {
    std::vector<json> out;
    std::size_t persisted = 0;
    if (runtime_.store().has_session(id)) {
        Session s = runtime_.store().load_session(id);
        persisted = s.rounds.size();
        for (const Round& r : s.rounds) {
            out.push_back({{"type", "round-started"}, {"round", r.index}, {"kind", std::string(to_string(r.kind))}});
            out.push_back({{"type", "render-done"}, {"round", r.index}, {"render", r.output_render}});
            if (!r.verdicts.empty()) {
                json scores = json::array();
                for (const auto& v : r.verdicts) scores.push_back(v.scores);
                out.push_back({{"type", "judge-done"}, {"round", r.index}, {"scores", scores}});
            }
            out.push_back({{"type", r.accepted ? "round-accepted" : "round-rejected"}, {"round", r.index},
                           {"summary", api_round(r)}});
        }
    }
    if (auto l = live(id); l && l->status == SessionStatus::running && l->in_flight) {
        out.push_back(
            {{"type", "round-started"}, {"round", persisted}, {"kind", std::string(to_string(*l->in_flight))}});
    }
    return out;
}

void ApiService::routes() {
    auto& svr = *server_;

    svr.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    svr.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type, Last-Event-ID");
        res.status = 204;
    });
    svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const Error& e) {
            send_error(res, http_status(e.code()), e.what(), to_string(e.code()));
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    });

    svr.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"ok", true}}); });

    svr.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
        if (!req.has_file("image")) return send_error(res, 400, "multipart field 'image' is required");
        AdvancePolicy policy = AdvancePolicy::always_advance;
        if (req.has_file("policy")) {
            try {
                policy = advance_policy_from_string(req.get_file_value("policy").content);
            } catch (const Error& e) {
                return send_error(res, 400, e.what());
            }
        }
        ImageRef target;
        try {
            target = runtime_.store().put_image(req.get_file_value("image").content);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::invalid_argument || e.code() == ErrorCode::precondition)
                return send_error(res, 400, e.what());
            throw;
        }
        try {
            runtime_.client().check_ready(engine_->options().model.provider_id);
        } catch (const Error& e) {
            return send_error(res, 503, std::string("model unavailable: ") + e.what(), to_string(e.code()));
        }

        const std::string id = SessionEngine::new_session_id();
        try_begin(id, RoundKind::generate);
        {
            std::lock_guard lock(mutex_);
            Live& l = live_[id];
            l.policy = policy;
            l.target = target;
            l.created_at = utc_timestamp();
            jobs_.emplace_back([this, id, target, policy] {
                try {
                    engine_->start_generate(target, policy, id);
                    finish(id, std::nullopt);
                } catch (const std::exception& e) {
                    spdlog::warn("session {}: generation failed: {}", id, e.what());
                    finish(id, e.what());
                }
            });
        }
        send_json(res, 201, summary(id));
    });

    svr.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
        std::set<std::string> ids;
        for (auto& id : runtime_.store().list_sessions()) ids.insert(id);
        {
            std::lock_guard lock(mutex_);
            for (auto& [id, _] : live_) ids.insert(id);
        }
        json out = json::array();
        for (const auto& id : ids) out.push_back(summary(id));
        send_json(res, 200, out);
    });

    svr.Get(R"(/sessions/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!exists(id)) return send_error(res, 404, "unknown session " + id);
        send_json(res, 200, summary(id));
    });

    auto mutate = [this](const std::string& id, RoundKind kind, httplib::Response& res, auto&& op) {
        if (!exists(id)) return send_error(res, 404, "unknown session " + id);
        if (!try_begin(id, kind)) return send_error(res, 409, "session " + id + " is busy", "conflict");
        try {
            Round round = op();
            finish(id, std::nullopt);
            send_json(res, 200, api_round(round));
        } catch (const Error& e) {
            finish(id, std::nullopt);  // the persisted session is unchanged
            send_error(res, http_status(e.code()), e.what(), to_string(e.code()));
        }
    };

    svr.Post(R"(/sessions/([A-Za-z0-9_-]+)/polish)", [this, mutate](const httplib::Request& req,
                                                                   httplib::Response& res) {
        const std::string id = req.matches[1];
        mutate(id, RoundKind::polish, res, [&] { return engine_->polish_once(id, false); });
    });

    svr.Post(R"(/sessions/([A-Za-z0-9_-]+)/edits)", [this, mutate](const httplib::Request& req,
                                                                  httplib::Response& res) {
        const std::string id = req.matches[1];
        std::string instruction;
        try {
            instruction = json::parse(req.body).at("instruction").get<std::string>();
        } catch (const json::exception&) {
            return send_error(res, 400, "body must be JSON with a string 'instruction'");
        }
        if (instruction.find_first_not_of(" \t\r\n") == std::string::npos)
            return send_error(res, 400, "instruction is empty");
        mutate(id, RoundKind::edit, res, [&] { return engine_->edit(id, instruction, false); });
    });

    svr.Get(R"(/sessions/([A-Za-z0-9_-]+)/rounds)", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!exists(id)) return send_error(res, 404, "unknown session " + id);
        json out = json::array();
        if (runtime_.store().has_session(id)) {
            for (const Round& r : runtime_.store().load_session(id).rounds) out.push_back(api_round(r));
        }
        send_json(res, 200, out);
    });

    svr.Get(R"(/blobs/([0-9a-f]{64}))", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string hash = req.matches[1];
        auto bytes = runtime_.store().get_blob(hash);
        if (!bytes) return send_error(res, 404, "unknown blob " + hash);
        const MediaType type = runtime_.store().sniff_blob(hash).value_or(MediaType::text);
        res.set_header("Cache-Control", "public, max-age=31536000, immutable");
        res.set_header("ETag", "\"" + hash + "\"");
        res.set_content(std::move(*bytes), std::string(mime_type(type)));
    });

    svr.Get(R"(/sessions/([A-Za-z0-9_-]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!exists(id)) return send_error(res, 404, "unknown session " + id);
        std::size_t start = 0;
        try {
            if (req.has_param("cursor")) start = std::stoul(req.get_param_value("cursor"));
            else if (req.has_header("Last-Event-ID")) start = std::stoul(req.get_header_value("Last-Event-ID"));
        } catch (const std::exception&) {
            return send_error(res, 400, "cursor must be a non-negative integer");
        }
        auto cursor = std::make_shared<std::size_t>(start);
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider("text/event-stream", [this, id, cursor](std::size_t, httplib::DataSink& sink) {
            std::uint64_t seen;
            {
                std::lock_guard lock(mutex_);
                seen = version_;
            }
            auto evs = events(id);
            if (*cursor < evs.size()) {
                std::string chunk;
                for (; *cursor < evs.size(); ++*cursor) chunk += sse(*cursor + 1, evs[*cursor]);
                return sink.write(chunk.data(), chunk.size());
            }
            auto l = live(id);
            if (!l || l->status != SessionStatus::running) {
                const std::string end = "event: end\ndata: {}\n\n";
                sink.write(end.data(), end.size());
                sink.done();
                return true;
            }
            std::unique_lock lock(mutex_);
            const bool woke = changed_.wait_for(lock, std::chrono::seconds(10),
                                                [&] { return version_ != seen || stopping_; });
            if (stopping_) {
                sink.done();
                return true;
            }
            lock.unlock();
            if (!woke) {
                const std::string ping = ": keepalive\n\n";
                return sink.write(ping.data(), ping.size());
            }
            return sink.is_writable();
        });
    });
}

}  // namespace uicoder
