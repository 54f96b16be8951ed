#pragma once

// HTTP review service over a pipeline output directory. Reviewers read topics
// with their automatic labels and write whole-set label overrides, which are
// persisted to the overrides file before the request is acknowledged.

#include "crisis/coherence.hpp"
#include "crisis/ingest.hpp"
#include "crisis/pipeline.hpp"
#include "crisis/represent.hpp"
#include "crisis/schema.hpp"

#include <httplib.h>
#undef _res
#include <json.hpp>

#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>

namespace crisis::review {

using nlohmann::json;
namespace fs = std::filesystem;

struct ServiceOptions {
  fs::path artifacts;
  fs::path schema_file;     // empty: bundled schema.json
  fs::path overrides_file;  // empty: <artifacts>/overrides.json
  fs::path static_dir;      // empty: no static mount
};

struct Reply {
  int status = 200;
  json body;
};

class ReviewState {
 public:
  explicit ReviewState(ServiceOptions opts) : opts_(std::move(opts)) {
    const auto& dir = opts_.artifacts;
    for (const auto* f : {"topics.json", "topic_labels.json"})
      if (!fs::exists(dir / f))
        throw StaleInputError(std::string(f) + " not found in " + dir.string() +
                                  " (run the represent and map stages first)",
                              f == std::string("topics.json") ? "represent" : "map");
    schema_ = schema::load_schema(opts_.schema_file.empty() ? pipeline::PipelineConfig::data_dir() / "schema.json"
                                                            : opts_.schema_file);
    if (opts_.overrides_file.empty()) opts_.overrides_file = dir / "overrides.json";

    for (auto& t : pipeline::read_topics(dir)) topics_.emplace(t.topic_id, std::move(t));
    const auto labels = pipeline::detail::read_json(dir / "topic_labels.json");
    for (const auto& row : labels.at("comments"))
      auto_labels_[row.at("topic_id").get<int>()] = row.at("auto").get<schema::TopicLabelSet>();

    if (fs::exists(dir / "coherence.json")) {
      const auto coh = pipeline::detail::read_json(dir / "coherence.json");
      for (const auto& t : coh.at("comments").at("per_topic"))
        coherence_[t.at("topic_id").get<int>()] = t.at("score");
    }

    if (fs::exists(dir / "clean.jsonl")) {
      std::set<std::string> wanted;
      for (const auto& [id, t] : topics_) wanted.insert(t.representative_doc_ids.begin(), t.representative_doc_ids.end());
      for (auto& d : ingest::read_clean_jsonl(dir / "clean.jsonl"))
        if (wanted.count(d.id)) texts_[d.id] = std::move(d.text);
    }

    overrides_ = schema::load_overrides(opts_.overrides_file, schema_);
    for (const auto& [id, o] : overrides_)
      if (!topics_.count(id)) spdlog::warn("override for unknown topic {} is kept but not served", id);
  }

  const ServiceOptions& options() const { return opts_; }

  Reply list_topics() const {
    std::shared_lock lock(mu_);
    std::vector<const represent::TopicRepresentation*> order;
    for (const auto& [id, t] : topics_) order.push_back(&t);
    std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->size > b->size; });
    json out = json::array();
    for (const auto* t : order) out.push_back(summary(*t));
    return {200, out};
  }

  Reply get_topic(int id) const {
    std::shared_lock lock(mu_);
    const auto it = topics_.find(id);
    if (it == topics_.end()) return not_found(id);
    auto out = summary(it->second);
    out["summary"] = it->second.summary;
    json docs = json::array();
    for (const auto& doc_id : it->second.representative_doc_ids) {
      const auto t = texts_.find(doc_id);
      docs.push_back({{"id", doc_id}, {"text", t == texts_.end() ? json(nullptr) : json(t->second)}});
    }
    out["representative_docs"] = docs;
    return {200, out};
  }

  Reply put_labels(int id, std::string_view body) {
    schema::Override o;
    try {
      o = schema::parse_override(json::parse(body), schema_);
    } catch (const json::exception& e) {
      return {400, {{"error", std::string("invalid JSON: ") + e.what()}}};
    } catch (const SchemaError& e) {
      return {400, {{"error", e.what()}}};
    }
    std::unique_lock lock(mu_);
    if (!topics_.count(id)) return not_found(id);
    const auto it = overrides_.find(id);
    if (it == overrides_.end() || !(it->second == o)) {
      auto next = overrides_;
      next[id] = o;
      write_file_atomic(opts_.overrides_file, schema::overrides_json(next).dump(2) + "\n");
      overrides_ = std::move(next);
      ++version_;
    }
    return {200, {{"topic_id", id}, {"version", version_}, {"human_labels", schema::to_json_value(o)}}};
  }

  Reply get_schema() const { return {200, schema_.to_json_value()}; }

  std::uint64_t version() const {
    std::shared_lock lock(mu_);
    return version_;
  }

 private:
  json summary(const represent::TopicRepresentation& t) const {
    const auto a = auto_labels_.find(t.topic_id);
    const auto c = coherence_.find(t.topic_id);
    const auto h = overrides_.find(t.topic_id);
    return json{{"topic_id", t.topic_id},
                {"label", t.label},
                {"size", t.size},
                {"keywords", t.keywords},
                {"coherence", c == coherence_.end() ? json(nullptr) : c->second},
                {"auto_labels", a == auto_labels_.end() ? json(nullptr) : schema::labels_json(a->second)},
                {"needs_review", a != auto_labels_.end() && a->second.needs_review},
                {"human_labels", h == overrides_.end() ? json(nullptr) : schema::to_json_value(h->second)}};
  }

  static Reply not_found(int id) { return {404, {{"unknown_ids", {id}}}}; }

  ServiceOptions opts_;
  schema::Schema schema_;
  std::map<int, represent::TopicRepresentation> topics_;
  std::map<int, schema::TopicLabelSet> auto_labels_;
  std::map<int, json> coherence_;
  std::map<std::string, std::string> texts_;
  schema::Overrides overrides_;
  std::uint64_t version_ = 0;
  mutable std::shared_mutex mu_;
};

// Binds routes onto an httplib server.
inline void mount(httplib::Server& server, ReviewState& state) {
  const auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  const auto topic_id = [](const httplib::Request& req) -> std::optional<int> {
    try {
      std::size_t used = 0;
      const auto s = req.matches[1].str();
      const int id = std::stoi(s, &used);
      if (used != s.size()) return std::nullopt;
      return id;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  };
  server.Get("/api/health", [send](const httplib::Request&, httplib::Response& res) {
    send(res, {200, {{"status", "ok"}}});
  });
  server.Get("/api/schema", [&state, send](const httplib::Request&, httplib::Response& res) {
    send(res, state.get_schema());
  });
  server.Get("/api/topics", [&state, send](const httplib::Request&, httplib::Response& res) {
    send(res, state.list_topics());
  });
  server.Get(R"(/api/topics/(-?\d+))", [&state, send, topic_id](const httplib::Request& req, httplib::Response& res) {
    const auto id = topic_id(req);
    send(res, id ? state.get_topic(*id) : Reply{400, {{"error", "bad topic id"}}});
  });
  server.Put(R"(/api/topics/(-?\d+)/labels)",
             [&state, send, topic_id](const httplib::Request& req, httplib::Response& res) {
               const auto id = topic_id(req);
               send(res, id ? state.put_labels(*id, req.body) : Reply{400, {{"error", "bad topic id"}}});
             });
  server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, {500, {{"error", what}}});
  });
  const auto& dir = state.options().static_dir;
  if (!dir.empty() && !server.set_mount_point("/", dir.string()))
    throw ConfigError("static directory " + dir.string() + " does not exist");
}

// Owns the server and its listening thread.
class ReviewServer {
 public:
  explicit ReviewServer(ServiceOptions opts) : state_(std::move(opts)) {
    // SO_REUSEADDR only: the library default also sets SO_REUSEPORT, which
    // would let a second server share a busy port.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
    });
    mount(server_, state_);
  }
  ~ReviewServer() { stop(); }
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  // Binds the port (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
      if (port_ < 0) throw Error("could not bind any port on " + host);
    } else {
      if (!server_.bind_to_port(host, port)) throw Error("port " + std::to_string(port) + " is busy or unavailable");
      port_ = port;
    }
    return port_;
  }

  // Blocks until stop().
  void listen() { server_.listen_after_bind(); }

  void start_background() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  ReviewState& state() { return state_; }

 private:
  ReviewState state_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace crisis::review
