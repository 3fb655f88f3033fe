#include "uicoder/cdp.hpp"

#include "uicoder/error.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <regex>
#include <set>
#include <thread>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
namespace fs = std::filesystem;

namespace uicoder::cdp {

// ---------------------------------------------------------------------------
// BrowserProcess

BrowserProcess::BrowserProcess(Options options) {
    std::error_code ec;
    if (!fs::exists(options.executable, ec)) {
        throw Error(ErrorCode::config_error, "browser executable " + options.executable.string() + " not found");
    }
    std::string tmpl = (fs::temp_directory_path() / "uicoder-browser-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw Error(ErrorCode::io_error, "mkdtemp failed");
    profile_dir_ = tmpl;

    std::vector<std::string> args = {
        options.executable.string(),
        "--headless=shell",
        "--no-sandbox",
        "--no-zygote",
        "--disable-gpu",
        "--disable-dev-shm-usage",
        "--remote-debugging-port=0",
        "--user-data-dir=" + profile_dir_.string(),
        "--no-first-run",
        "--no-default-browser-check",
        "--hide-scrollbars",
        "--mute-audio",
        "--font-render-hinting=none",
        "--force-color-profile=srgb",
        "--disable-background-networking",
        "--disable-background-timer-throttling",
        "--disable-renderer-backgrounding",
        "--disable-extensions",
        "--disable-sync",
        "--disable-component-update",
        "--disable-features=Translate,MediaRouter,OptimizationHints",
    };
    args.insert(args.end(), options.extra_args.begin(), options.extra_args.end());
    args.push_back("about:blank");

    const std::string log_path = (profile_dir_ / "browser.log").string();
    const std::string fonts = options.fonts_conf ? options.fonts_conf->string() : std::string();

    pid_ = ::fork();
    if (pid_ < 0) throw Error(ErrorCode::io_error, "fork failed");
    if (pid_ == 0) {
        ::setpgid(0, 0);
        if (!fonts.empty()) ::setenv("FONTCONFIG_FILE", fonts.c_str(), 1);
        const int log_fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        const int null_fd = ::open("/dev/null", O_RDWR);
        if (null_fd >= 0) ::dup2(null_fd, STDIN_FILENO);
        if (log_fd >= 0) {
            ::dup2(log_fd, STDOUT_FILENO);
            ::dup2(log_fd, STDERR_FILENO);
        }
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        argv.push_back(nullptr);
        ::execv(argv[0], argv.data());
        ::_exit(127);
    }

    // The browser writes "<port>\n<path>" once DevTools is listening.
    const fs::path port_file = profile_dir_ / "DevToolsActivePort";
    const auto deadline = Clock::now() + options.launch_timeout;
    while (Clock::now() < deadline) {
        std::ifstream in(port_file);
        std::string port, path;
        if (in && std::getline(in, port) && std::getline(in, path) && !port.empty() && !path.empty()) {
            ws_url_ = "ws://127.0.0.1:" + port + path;
            return;
        }
        if (!alive()) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(25));
    }
    std::ifstream log(log_path);
    std::string tail((std::istreambuf_iterator<char>(log)), std::istreambuf_iterator<char>());
    if (tail.size() > 400) tail = tail.substr(tail.size() - 400);
    ::kill(-pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
    pid_ = -1;
    fs::remove_all(profile_dir_, ec);
    throw Error(ErrorCode::protocol_error, "browser did not start: " + tail);
}

BrowserProcess::~BrowserProcess() {
    if (pid_ > 0) {
        ::kill(-pid_, SIGKILL);
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, nullptr, 0);
    }
    std::error_code ec;
    if (!profile_dir_.empty()) fs::remove_all(profile_dir_, ec);
}

bool BrowserProcess::alive() const {
    if (pid_ <= 0) return false;
    int status = 0;
    return ::waitpid(pid_, &status, WNOHANG) == 0;
}

// ---------------------------------------------------------------------------
// Connection

class Connection::Impl {
public:
    explicit Impl(const std::string& url) : ws_(ioc_) {
        static const std::regex kUrl(R"(^ws://([^:/]+):(\d+)(/.*)$)");
        std::smatch m;
        if (!std::regex_match(url, m, kUrl)) throw Error(ErrorCode::protocol_error, "bad websocket url " + url);
        try {
            tcp::resolver resolver(ioc_);
            auto endpoints = resolver.resolve(m[1].str(), m[2].str());
            beast::get_lowest_layer(ws_).connect(endpoints);
            beast::get_lowest_layer(ws_).expires_never();
            ws_.read_message_max(512ull * 1024 * 1024);
            ws_.handshake(m[1].str() + ":" + m[2].str(), m[3].str());
        } catch (const boost::system::system_error& e) {
            throw Error(ErrorCode::protocol_error, std::string("websocket connect failed: ") + e.what());
        }
        do_read();
        thread_ = std::thread([this] { ioc_.run(); });
    }

    ~Impl() {
        net::post(ioc_, [this] {
            beast::error_code ec;
            beast::get_lowest_layer(ws_).socket().close(ec);
        });
        ioc_.stop();
        if (thread_.joinable()) thread_.join();
        fail_all("connection closed");
    }

    std::shared_future<json> send(const std::string& method, json params, const std::string& session_id) {
        std::promise<json> promise;
        std::shared_future<json> future = promise.get_future().share();
        json message = {{"method", method}, {"params", std::move(params)}};
        if (!session_id.empty()) message["sessionId"] = session_id;
        {
            std::lock_guard lock(mutex_);
            if (closed_) {
                promise.set_exception(std::make_exception_ptr(Error(ErrorCode::protocol_error, "connection closed")));
                return future;
            }
            const int id = next_id_++;
            message["id"] = id;
            pending_.emplace(id, std::move(promise));
        }
        net::post(ioc_, [this, text = message.dump()]() mutable {
            outbox_.push_back(std::move(text));
            if (outbox_.size() == 1) do_write();
        });
        return future;
    }

    void subscribe(const std::string& sid) {
        std::lock_guard lock(mutex_);
        subscribed_.insert(sid);
    }

    void unsubscribe(const std::string& sid) {
        std::lock_guard lock(mutex_);
        subscribed_.erase(sid);
        events_.erase(sid);
    }

    std::optional<json> next_event(const std::string& sid, Clock::time_point deadline,
                                   const std::function<bool()>& ready) {
        std::unique_lock lock(mutex_);
        for (;;) {
            auto it = events_.find(sid);
            if (it != events_.end() && !it->second.empty()) {
                json event = std::move(it->second.front());
                it->second.pop_front();
                return event;
            }
            if (closed_ || (ready && ready()) || Clock::now() >= deadline) return std::nullopt;
            cv_.wait_until(lock, deadline);
        }
    }

    bool closed() const {
        std::lock_guard lock(mutex_);
        return closed_;
    }

private:
    void do_read() {
        ws_.async_read(buffer_, [this](beast::error_code ec, std::size_t) {
            if (ec) {
                fail_all("connection lost: " + ec.message());
                return;
            }
            on_message(beast::buffers_to_string(buffer_.data()));
            buffer_.consume(buffer_.size());
            do_read();
        });
    }

    void do_write() {
        ws_.async_write(net::buffer(outbox_.front()), [this](beast::error_code ec, std::size_t) {
            if (ec) {
                fail_all("write failed: " + ec.message());
                return;
            }
            outbox_.pop_front();
            if (!outbox_.empty()) do_write();
        });
    }

    void on_message(const std::string& text) {
        json message = json::parse(text, nullptr, false);
        if (message.is_discarded()) {
            spdlog::warn("cdp: dropping unparseable message");
            return;
        }
        std::lock_guard lock(mutex_);
        if (message.contains("id")) {
            auto it = pending_.find(message["id"].get<int>());
            if (it != pending_.end()) {
                it->second.set_value(std::move(message));
                pending_.erase(it);
            }
        } else if (message.contains("method")) {
            const std::string sid = message.value("sessionId", "");
            if (subscribed_.count(sid)) events_[sid].push_back(std::move(message));
        }
        cv_.notify_all();
    }

    void fail_all(const std::string& reason) {
        std::lock_guard lock(mutex_);
        if (!closed_) spdlog::debug("cdp: {}", reason);
        closed_ = true;
        for (auto& [id, promise] : pending_) {
            promise.set_exception(std::make_exception_ptr(Error(ErrorCode::protocol_error, reason)));
        }
        pending_.clear();
        cv_.notify_all();
    }

    net::io_context ioc_;
    websocket::stream<beast::tcp_stream> ws_;
    beast::flat_buffer buffer_;
    std::deque<std::string> outbox_;  // io thread only
    std::thread thread_;

    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::map<int, std::promise<json>> pending_;
    std::set<std::string> subscribed_;
    std::map<std::string, std::deque<json>> events_;
    int next_id_ = 1;
    bool closed_ = false;
};

Connection::Connection(const std::string& ws_url) : impl_(std::make_unique<Impl>(ws_url)) {}
Connection::~Connection() = default;

std::shared_future<json> Connection::send(const std::string& method, json params, const std::string& session_id) {
    return impl_->send(method, std::move(params), session_id);
}

json Connection::call(const std::string& method, json params, const std::string& session_id,
                      Clock::time_point deadline) {
    auto future = send(method, std::move(params), session_id);
    if (future.wait_until(deadline) != std::future_status::ready) {
        throw Error(ErrorCode::timeout, method + " timed out");
    }
    const json& response = future.get();
    if (response.contains("error")) {
        throw Error(ErrorCode::protocol_error, method + ": " + response["error"].value("message", "unknown error"));
    }
    return response.value("result", json::object());
}

void Connection::subscribe(const std::string& session_id) { impl_->subscribe(session_id); }
void Connection::unsubscribe(const std::string& session_id) { impl_->unsubscribe(session_id); }

std::optional<json> Connection::next_event(const std::string& session_id, Clock::time_point deadline,
                                           const std::function<bool()>& ready) {
    return impl_->next_event(session_id, deadline, ready);
}

bool Connection::closed() const { return impl_->closed(); }

}  // namespace uicoder::cdp
