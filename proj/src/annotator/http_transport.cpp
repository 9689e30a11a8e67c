#include <regex>

#include "httplib.h"
#include "steerkit/annotator.hpp"
#include "steerkit/errors.hpp"

namespace steerkit {

HttpResponse default_http_transport(const HttpRequest& request) {
    static const std::regex url_re(R"(^(https?)://([^/:]+)(?::(\d+))?(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(request.url, m, url_re)) throw TransportError("malformed endpoint URL " + request.url);
    const std::string scheme = m[1];
    const std::string host = m[2];
    const std::string path = m[4].matched ? std::string(m[4]) : "/";
    const int port = m[3].matched ? std::stoi(m[3]) : (scheme == "https" ? 443 : 80);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (scheme == "https") throw TransportError("endpoint " + request.url + " needs https, built without OpenSSL");
#endif
    httplib::Client client(scheme + "://" + host + ":" + std::to_string(port));
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(request.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(request.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    client.set_bearer_token_auth(request.bearer_token);
    auto res = client.Post(path, request.body, "application/json");
    if (!res) throw TransportError("request to " + request.url + " failed: " + httplib::to_string(res.error()));
    return {res->status, res->body};
}

}  // namespace steerkit
