#include <httplib.h>

#include "uicoder/error.hpp"
#include "uicoder/vlm_client.hpp"

#include <regex>

namespace uicoder {

namespace {

class HttpsTransport final : public Transport {
public:
    HttpResponse post(const HttpRequest& request) override {
        static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
        std::smatch m;
        if (!std::regex_match(request.url, m, kUrl)) {
            throw Error(ErrorCode::invalid_argument, "bad provider URL '" + request.url + "'");
        }
        httplib::Client client(m[1].str());
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(request.timeout).count();
        client.set_connection_timeout(std::min<long long>(secs, 30), 0);
        client.set_read_timeout(secs, 0);
        client.set_write_timeout(secs, 0);

        httplib::Headers headers;
        std::string content_type = "application/json";
        for (const auto& [k, v] : request.headers) {
            if (k == "Content-Type") content_type = v;
            else headers.emplace(k, v);
        }
        const std::string path = m[2].matched ? m[2].str() : "/";
        auto result = client.Post(path, headers, request.body, content_type);
        if (!result) {
            const auto err = result.error();
            if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) {
                throw Error(ErrorCode::timeout, "request to " + request.url + " timed out");
            }
            throw Error(ErrorCode::transport, "request to " + request.url + " failed: " + httplib::to_string(err));
        }
        return {result->status, result->body};
    }
};

}  // namespace

std::unique_ptr<Transport> make_https_transport() { return std::make_unique<HttpsTransport>(); }

}  // namespace uicoder
