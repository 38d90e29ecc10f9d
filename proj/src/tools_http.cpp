#include "apo/tools_http.hpp"

#include <httplib.h>

namespace apo {

namespace {

const char* query_kind_name(VqaQuery::Kind k) {
  switch (k) {
    case VqaQuery::Kind::CountOf: return "count_of";
    case VqaQuery::Kind::AttributeOf: return "attribute_of";
    case VqaQuery::Kind::RelationHolds: return "relation_holds";
    case VqaQuery::Kind::GroupPresent: return "group_present";
  }
  throw ValidationError("bad query kind");
}

VqaQuery::Kind query_kind_from(const std::string& s) {
  if (s == "count_of") return VqaQuery::Kind::CountOf;
  if (s == "attribute_of") return VqaQuery::Kind::AttributeOf;
  if (s == "relation_holds") return VqaQuery::Kind::RelationHolds;
  if (s == "group_present") return VqaQuery::Kind::GroupPresent;
  throw ValidationError("unknown query kind: " + s);
}

}  // namespace

json to_json(const VqaQuery& q) {
  json j{{"kind", query_kind_name(q.kind)}};
  switch (q.kind) {
    case VqaQuery::Kind::GroupPresent:
      j["category"] = q.category;
      break;
    case VqaQuery::Kind::CountOf:
      j["category"] = q.category;
      j["ordinal"] = q.ordinal;
      break;
    case VqaQuery::Kind::AttributeOf:
      j["category"] = q.category;
      j["ordinal"] = q.ordinal;
      j["attribute"] =
          q.attribute == VqaQuery::Attribute::Color ? "color" : "size";
      break;
    case VqaQuery::Kind::RelationHolds:
      j["subject"] = q.subject_category;
      j["predicate"] = q.predicate;
      j["object"] = q.object_category;
      j["subject_ordinal"] = q.subject_ordinal;
      j["object_ordinal"] = q.object_ordinal;
      break;
  }
  return j;
}

VqaQuery query_from_json(const json& j) {
  VqaQuery q;
  q.kind = query_kind_from(j.at("kind").get<std::string>());
  switch (q.kind) {
    case VqaQuery::Kind::GroupPresent:
      q.category = j.at("category").get<std::string>();
      break;
    case VqaQuery::Kind::CountOf:
      q.category = j.at("category").get<std::string>();
      q.ordinal = j.value("ordinal", 0);
      break;
    case VqaQuery::Kind::AttributeOf: {
      q.category = j.at("category").get<std::string>();
      q.ordinal = j.value("ordinal", 0);
      std::string attr = j.at("attribute").get<std::string>();
      if (attr == "color")
        q.attribute = VqaQuery::Attribute::Color;
      else if (attr == "size")
        q.attribute = VqaQuery::Attribute::Size;
      else
        throw ValidationError("unknown attribute kind: " + attr);
      break;
    }
    case VqaQuery::Kind::RelationHolds:
      q.subject_category = j.at("subject").get<std::string>();
      q.predicate = j.at("predicate").get<std::string>();
      q.object_category = j.at("object").get<std::string>();
      q.subject_ordinal = j.value("subject_ordinal", 0);
      q.object_ordinal = j.value("object_ordinal", 0);
      break;
  }
  return q;
}

json to_json(const VqaAnswer& a) {
  if (const int* i = std::get_if<int>(&a)) return {{"kind", "int"}, {"value", *i}};
  if (const bool* b = std::get_if<bool>(&a))
    return {{"kind", "bool"}, {"value", *b}};
  return {{"kind", "string"}, {"value", std::get<std::string>(a)}};
}

VqaAnswer answer_from_json(const json& j) {
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "int") return j.at("value").get<int>();
  if (kind == "bool") return j.at("value").get<bool>();
  if (kind == "string") return j.at("value").get<std::string>();
  throw ValidationError("unknown answer kind: " + kind);
}

json to_json(const Provenance& p) {
  if (p.kind == Provenance::Kind::Generated) return {{"kind", "generated"}};
  return {{"kind", "edited"}, {"from_id", p.from_id}, {"edit", to_json(*p.edit)}};
}

Provenance provenance_from_json(const json& j) {
  Provenance p;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "generated") {
    p.kind = Provenance::Kind::Generated;
  } else if (kind == "edited") {
    p.kind = Provenance::Kind::Edited;
    p.from_id = j.at("from_id").get<std::string>();
    p.edit = edit_from_json(j.at("edit"));
  } else {
    throw ValidationError("unknown provenance kind: " + kind);
  }
  return p;
}

json to_json(const ImageRecord& r) {
  return {{"id", r.id},
          {"scene", to_json(r.scene)},
          {"provenance", to_json(r.provenance)},
          {"created_at", r.created_at}};
}

ImageRecord record_from_json(const json& j) {
  ImageRecord r;
  r.id = j.at("id").get<std::string>();
  r.scene = scene_from_json(j.at("scene"));
  r.provenance = provenance_from_json(j.at("provenance"));
  r.created_at = j.at("created_at").get<std::uint64_t>();
  return r;
}

json to_json(const ToolStats& s) {
  return {{"imggen_calls", s.imggen_calls},
          {"editor_calls", s.editor_calls},
          {"vqa_calls", s.vqa_calls}};
}

ToolStats stats_from_json(const json& j) {
  ToolStats s;
  s.imggen_calls = j.at("imggen_calls").get<std::uint64_t>();
  s.editor_calls = j.at("editor_calls").get<std::uint64_t>();
  s.vqa_calls = j.at("vqa_calls").get<std::uint64_t>();
  return s;
}

json to_json(const NoiseProfile& p) {
  return {{"gen_detail_error_rate", p.gen_detail_error_rate},
          {"edit_failure_rate", p.edit_failure_rate},
          {"edit_side_effect_rate", p.edit_side_effect_rate},
          {"vqa_error_rate", p.vqa_error_rate},
          {"seed", p.seed}};
}

NoiseProfile profile_from_json(const json& j) {
  NoiseProfile p;
  p.gen_detail_error_rate = j.value("gen_detail_error_rate", p.gen_detail_error_rate);
  p.edit_failure_rate = j.value("edit_failure_rate", p.edit_failure_rate);
  p.edit_side_effect_rate = j.value("edit_side_effect_rate", p.edit_side_effect_rate);
  p.vqa_error_rate = j.value("vqa_error_rate", p.vqa_error_rate);
  p.seed = j.value("seed", p.seed);
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Server

struct ToolServer::Impl {
  httplib::Server server;
};

namespace {

void write_error(httplib::Response& res, int status, const std::string& code,
                 const std::string& message) {
  res.status = status;
  res.set_content(
      json{{"v", 1}, {"error", {{"code", code}, {"message", message}}}}.dump(),
      "application/json");
}

void write_ok(httplib::Response& res, json body) {
  body["v"] = 1;
  res.set_content(body.dump(), "application/json");
}

// Parses the body before touching the service so malformed requests leave the
// call counters unchanged; maps the in-process error types to 400/404.
template <typename Fn>
void handle(const httplib::Request& req, httplib::Response& res, Fn&& fn) {
  json body;
  if (!req.body.empty()) {
    body = json::parse(req.body, nullptr, /*allow_exceptions=*/false);
    if (body.is_discarded()) {
      write_error(res, 400, "bad_request", "malformed JSON body");
      return;
    }
  }
  try {
    write_ok(res, fn(body));
  } catch (const NotFoundError& e) {
    write_error(res, 404, "not_found", e.what());
  } catch (const ValidationError& e) {
    write_error(res, 400, "validation", e.what());
  } catch (const json::exception& e) {
    write_error(res, 400, "bad_request", e.what());
  }
}

}  // namespace

ToolServer::ToolServer(ToolService& service) : impl_(new Impl) {
  auto& s = impl_->server;
  // Small request/response bodies ping-pong on one keep-alive connection;
  // without TCP_NODELAY, Nagle + delayed ACK adds ~40 ms to every call.
  s.set_tcp_nodelay(true);
  s.Post("/generate", [&service](const httplib::Request& req, httplib::Response& res) {
    handle(req, res, [&](const json& body) {
      Prompt prompt = prompt_from_json(body.at("prompt"));
      std::uint64_t seed = body.value("seed", std::uint64_t{0});
      return json{{"image_id", service.generate(prompt, seed)}};
    });
  });
  s.Post("/edit", [&service](const httplib::Request& req, httplib::Response& res) {
    handle(req, res, [&](const json& body) {
      std::string id = body.at("image_id").get<std::string>();
      AtomicEdit e = edit_from_json(body.at("edit"));
      return json{{"image_id", service.edit(id, e)}};
    });
  });
  s.Post("/vqa", [&service](const httplib::Request& req, httplib::Response& res) {
    handle(req, res, [&](const json& body) {
      std::string id = body.at("image_id").get<std::string>();
      VqaQuery q = query_from_json(body.at("query"));
      return json{{"answer", to_json(service.vqa(id, q))}};
    });
  });
  s.Get(R"(/image/(.+))", [&service](const httplib::Request& req, httplib::Response& res) {
    handle(req, res, [&](const json&) {
      return json{{"image", to_json(service.image(req.matches[1]))}};
    });
  });
  s.Get("/stats", [&service](const httplib::Request& req, httplib::Response& res) {
    handle(req, res, [&](const json&) { return to_json(service.stats()); });
  });
}

ToolServer::~ToolServer() { stop(); }

int ToolServer::start(const std::string& host, int port) {
  if (port == 0)
    port_ = impl_->server.bind_to_any_port(host);
  else {
    if (!impl_->server.bind_to_port(host, port))
      throw ValidationError("cannot bind to " + host + ":" + std::to_string(port));
    port_ = port;
  }
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void ToolServer::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

// ---------------------------------------------------------------------------
// Client

struct ToolClient::Impl {
  httplib::Client client;
  Impl(const std::string& host, int port) : client(host, port) {}
};

ToolClient::ToolClient(const std::string& host, int port)
    : impl_(new Impl(host, port)) {
  impl_->client.set_keep_alive(true);
  impl_->client.set_tcp_nodelay(true);  // see the matching server-side note
}

ToolClient::~ToolClient() = default;

namespace {

json parse_response(const httplib::Result& res) {
  if (!res) throw NotFoundError("tool service unreachable");
  json body = json::parse(res->body, nullptr, false);
  if (body.is_discarded())
    throw ValidationError("tool service returned malformed JSON");
  if (res->status == 200) return body;
  std::string code = body.at("error").at("code").get<std::string>();
  std::string message = body.at("error").at("message").get<std::string>();
  if (res->status == 404) throw NotFoundError(message);
  throw ValidationError(message);
}

}  // namespace

json ToolClient::post(const std::string& path, const json& body) {
  json full = body;
  full["v"] = 1;
  return parse_response(
      impl_->client.Post(path, full.dump(), "application/json"));
}

json ToolClient::get(const std::string& path) {
  return parse_response(impl_->client.Get(path));
}

std::string ToolClient::generate(const Prompt& prompt, std::uint64_t seed) {
  return post("/generate", {{"prompt", to_json(prompt)}, {"seed", seed}})
      .at("image_id")
      .get<std::string>();
}

std::string ToolClient::edit(const std::string& image_id,
                             const AtomicEdit& instruction) {
  return post("/edit", {{"image_id", image_id}, {"edit", to_json(instruction)}})
      .at("image_id")
      .get<std::string>();
}

VqaAnswer ToolClient::vqa(const std::string& image_id, const VqaQuery& query) {
  return answer_from_json(
      post("/vqa", {{"image_id", image_id}, {"query", to_json(query)}})
          .at("answer"));
}

ImageRecord ToolClient::image(const std::string& image_id) {
  return record_from_json(get("/image/" + image_id).at("image"));
}

ToolStats ToolClient::stats() { return stats_from_json(get("/stats")); }

}  // namespace apo
