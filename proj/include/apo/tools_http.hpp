#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include "apo/json_io.hpp"
#include "apo/tools.hpp"

// Wire protocol (JSON over HTTP, every body carries "v": 1):
//   POST /generate  {"v", "prompt": Prompt, "seed"}        -> {"v", "image_id"}
//   POST /edit      {"v", "image_id", "edit": AtomicEdit}  -> {"v", "image_id"}
//   POST /vqa       {"v", "image_id", "query": VqaQuery}   -> {"v", "answer"}
//   GET  /image/{id}                                       -> {"v", "image": ImageRecord}
//   GET  /stats                       -> {"v", "imggen_calls", "editor_calls", "vqa_calls"}
// Errors: {"v", "error": {"code": "bad_request"|"validation"|"not_found",
//                         "message"}} with status 400/404.
// A golden transcript lives in docs/wire_transcript.md.

namespace apo {

json to_json(const VqaQuery& q);
json to_json(const VqaAnswer& a);
json to_json(const Provenance& p);
json to_json(const ImageRecord& r);
json to_json(const ToolStats& s);
json to_json(const NoiseProfile& p);
VqaQuery query_from_json(const json& j);
VqaAnswer answer_from_json(const json& j);
Provenance provenance_from_json(const json& j);
ImageRecord record_from_json(const json& j);
ToolStats stats_from_json(const json& j);
NoiseProfile profile_from_json(const json& j);

// Serves a ToolService over loopback (or any interface). start() binds to an
// OS-assigned port when port == 0 and runs the accept loop on its own thread.
class ToolServer {
 public:
  explicit ToolServer(ToolService& service);
  ~ToolServer();

  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  int port_ = 0;
};

// HTTP counterpart of ToolService; response handling mirrors the in-process
// error contract (404 -> NotFoundError, 400 -> ValidationError).
class ToolClient : public ToolInterface {
 public:
  explicit ToolClient(const std::string& host, int port);
  ~ToolClient() override;

  std::string generate(const Prompt& prompt, std::uint64_t seed) override;
  std::string edit(const std::string& image_id,
                   const AtomicEdit& instruction) override;
  VqaAnswer vqa(const std::string& image_id, const VqaQuery& query) override;
  ImageRecord image(const std::string& image_id) override;
  ToolStats stats() override;

 private:
  json post(const std::string& path, const json& body);
  json get(const std::string& path);

  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace apo
