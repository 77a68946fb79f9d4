#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "httplib.h"

#include "rubricforge/core.hpp"
#include "rubricforge/errors.hpp"
#include "rubricforge/reward.hpp"

namespace rforge {

// POST /score reward service. Accepts one {"instance_id","response"} record
// or a list of them; replies with the scored record(s), or {"instance_id",
// "error"} for per-record scoring failures.
class ScoreServer {
 public:
  ScoreServer(std::vector<Instance> instances, RewardEngine engine, RewardStrategy strategy)
      : instances_(std::move(instances)), engine_(std::move(engine)),
        strategy_(std::move(strategy)) {
    engine_.validate();
    strategy_.validate();
    for (const Instance& inst : instances_) index_.emplace(inst.id, &inst);

    server_.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
      json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !(body.is_object() || body.is_array())) {
        res.status = 400;
        res.set_content(json{{"error", "body must be a JSON object or list"}}.dump(),
                        "application/json");
        return;
      }
      if (body.is_object()) {
        res.set_content(score_one(body).dump(), "application/json");
        return;
      }
      json out = json::array();
      for (const json& record : body) out.push_back(score_one(record));
      res.set_content(out.dump(), "application/json");
    });
  }

  // Binds an ephemeral port when port == 0; returns the bound port.
  int start(const std::string& host, int port) {
    if (port == 0) {
      port = server_.bind_to_any_port(host);
      if (port < 0) throw IoError("cannot bind score server");
    } else if (!server_.bind_to_port(host, port)) {
      throw IoError("cannot bind score server to port " + std::to_string(port));
    }
    return port;
  }

  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }

 private:
  json score_one(const json& record) {
    if (!record.is_object() || !record.contains("instance_id") ||
        !record.contains("response"))
      return json{{"error", "record needs instance_id and response"}};
    const std::string id = record["instance_id"].get<std::string>();
    auto it = index_.find(id);
    if (it == index_.end()) return json{{"instance_id", id}, {"error", "unknown instance"}};
    try {
      return scored_to_json(
          score_response(engine_, strategy_, *it->second, record["response"].get<std::string>()));
    } catch (const Error& e) {
      return json{{"instance_id", id}, {"error", e.what()}};
    }
  }

  std::vector<Instance> instances_;
  std::unordered_map<std::string, const Instance*> index_;
  RewardEngine engine_;
  RewardStrategy strategy_;
  httplib::Server server_;
};

}  // namespace rforge
