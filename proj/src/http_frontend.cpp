#include <fstream>

#include "dve/error.hpp"
#include "dve/service.hpp"
#include "httplib.h"
#include "json.hpp"

namespace dve {

using nlohmann::json;

struct HttpFrontend::Impl {
  QueryService& service;
  httplib::Server server;

  explicit Impl(QueryService& s) : service(s) {}
};

namespace {

void send_error(httplib::Response& res, const Error& e) {
  res.status = http_status_for(e.code());
  res.set_content(json{{"error", std::string(to_string(e.code()))}, {"message", e.what()}}.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, e);
  } catch (const std::exception& e) {
    res.status = 500;
    res.set_content(json{{"error", "Internal"}, {"message", e.what()}}.dump(), "application/json");
  }
}

std::string content_type_for(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".pgm" || ext == ".ppm") return "image/x-portable-anymap";
  return "application/octet-stream";
}

}  // namespace

HttpFrontend::HttpFrontend(QueryService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  auto& svc = impl_->service;

  srv.Get("/session", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(svc.session_json(), "application/json"); });
  });

  srv.Post("/load", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::BadSchema, e.what());
      }
      if (!body.is_object() || !body.contains("kind") || !body.contains("path") || !body["kind"].is_string() ||
          !body["path"].is_string()) {
        throw Error(ErrorCode::BadSchema, "load needs string fields 'kind' and 'path'");
      }
      std::optional<std::filesystem::path> display;
      if (body.contains("display_image")) display = body["display_image"].get<std::string>();
      svc.load(body["kind"].get<std::string>(), body["path"].get<std::string>(), body.value("id", std::string()),
               display);
      res.set_content(svc.session_json(), "application/json");
    });
  });

  srv.Post("/query", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(svc.query_json(req.body), "application/json"); });
  });

  srv.Post("/segment", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(svc.segment_json(req.body), "application/json"); });
  });

  srv.Get(R"(/image/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      const auto s = svc.snapshot();
      const auto it = s->volumes.find(id);
      if (it == s->volumes.end()) throw Error(ErrorCode::UnknownImage, id);
      if (!it->second.display_image) throw Error(ErrorCode::UnknownImage, id + " has no display image");
      const auto bytes = read_file(*it->second.display_image);
      res.set_content(std::string(bytes.begin(), bytes.end()), content_type_for(*it->second.display_image));
    });
  });
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorCode::Io, "cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpFrontend::listen() { impl_->server.listen_after_bind(); }

void HttpFrontend::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace dve
