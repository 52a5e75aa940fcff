#include "aemeter/service.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>

#include <httplib.h>
#include <json.hpp>

#include "aemeter/image_io.hpp"

namespace aemeter {

using json = nlohmann::json;

namespace {

std::string to_string(const std::vector<std::uint8_t>& bytes) { return {bytes.begin(), bytes.end()}; }

std::vector<std::uint8_t> to_bytes(const std::string& s) { return {s.begin(), s.end()}; }

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

json history_json(const std::vector<FinetuneEpoch>& history) {
  json arr = json::array();
  for (const auto& h : history) {
    arr.push_back({{"epoch", h.epoch},
                   {"mean_reward", h.mean_reward},
                   {"n_samples", h.n_samples},
                   {"n_excluded", h.n_excluded},
                   {"clamp_rate", h.clamp_rate},
                   {"mae", h.mae ? json(*h.mae) : json(nullptr)}});
  }
  return arr;
}

FinetuneSpec run_spec(const ServiceOptions& options, int run_index, std::optional<int> epochs) {
  FinetuneSpec spec = options.finetune;
  if (epochs) spec.epochs = *epochs;
  spec.seed = derive_seed(options.seed, static_cast<std::uint64_t>(run_index));
  return spec;
}

}  // namespace

ImagePlane service_frame(const SceneModel& scene, double ev) { return quantize8(render(scene, ev)); }

FeedbackService::FeedbackService(Model model, std::map<std::string, SceneModel> scenes, ServiceOptions options)
    : options_(std::move(options)), scenes_(std::move(scenes)), model_(std::make_shared<const Model>(std::move(model))) {
  if (scenes_.empty()) throw std::invalid_argument("service: no scenes loaded");
  if (options_.episode_steps < 1) throw std::invalid_argument("service: episode_steps must be >= 1");
  if (options_.latency_depth < 0) throw std::invalid_argument("service: latency_depth must be >= 0");
}

void FeedbackService::start_episode(const std::string& scene_id, Episode& ep, double start_ev) {
  ep.model = model_;
  ep.queue = std::make_unique<LatencyQueue>(options_.latency_depth, start_ev);
  ep.commanded = start_ev;
  ep.step = 0;
  ep.trace = SimTrace{};
  ep.trace.latency_depth = options_.latency_depth;
  ep.trace.max_steps = options_.episode_steps;
  (void)scene_id;
}

FrameInfo FeedbackService::frame(const std::string& scene_id, bool new_episode, std::optional<double> start_ev) {
  const auto sit = scenes_.find(scene_id);
  if (sit == scenes_.end()) throw ServiceError(404, "unknown scene_id '" + scene_id + "'");
  if (start_ev && !std::isfinite(*start_ev)) throw ServiceError(400, "start_ev must be finite");

  std::unique_lock lock(state_mutex_);
  auto [it, fresh] = episodes_.try_emplace(scene_id);
  Episode& ep = it->second;
  if (fresh || new_episode || start_ev || ep.step >= options_.episode_steps) {
    start_episode(scene_id, ep, start_ev.value_or(sit->second.ev_ref));
  }

  Frame f;
  f.scene_id = scene_id;
  f.step = ep.step;
  f.model = ep.model;
  f.effective_ev = ep.queue->step(ep.commanded);
  const ImagePlane img = service_frame(sit->second, f.effective_ev);
  f.predicted_delta_ev = predict_delta_ev(*ep.model, prepare_input(ep.model->config, img));
  f.png = to_string(encode_png(img));

  SimStep rec;
  rec.step = ep.step;
  rec.commanded_ev = ep.commanded;
  rec.effective_ev = f.effective_ev;
  rec.predicted_delta_ev = f.predicted_delta_ev;
  ep.trace.steps.push_back(rec);
  if (!ep.trace.converged_at) ep.trace.converged_at = find_convergence(ep.trace, 0.05, 3);
  ep.commanded = f.effective_ev + f.predicted_delta_ev;
  ++ep.step;

  char id[32];
  std::snprintf(id, sizeof id, "f%06llu", static_cast<unsigned long long>(next_frame_++));
  FrameInfo info{id, scene_id, f.step, f.effective_ev, f.predicted_delta_ev, f.png};
  frames_.emplace(id, std::move(f));
  return info;
}

std::size_t FeedbackService::feedback(const std::string& frame_id, const std::string& label) {
  const auto parsed = parse_label(label);
  if (!parsed) throw ServiceError(400, "label must be under|well|over, got '" + label + "'");
  std::unique_lock lock(state_mutex_);
  const auto it = frames_.find(frame_id);
  if (it == frames_.end()) throw ServiceError(404, "unknown frame_id '" + frame_id + "'");
  const Frame& f = it->second;

  FeedbackEvent ev{frame_id, f.scene_id, f.effective_ev, *parsed, now_ms(), options_.session_id};
  pool_.push_back(FeedbackItem{decode_png(to_bytes(f.png)), *parsed, std::nullopt, f.scene_id});
  events_.push_back(ev);
  log_event(json{{"type", "feedback"},
                 {"frame_id", ev.frame_id},
                 {"scene_id", ev.scene_id},
                 {"effective_ev", ev.effective_ev},
                 {"label", label_name(ev.label)},
                 {"timestamp_ms", ev.timestamp_ms},
                 {"session_id", ev.session_id}}
                .dump());
  return pool_.size();
}

FinetuneResult FeedbackService::finetune(std::optional<int> epochs) {
  std::unique_lock run_lock(finetune_mutex_, std::try_to_lock);
  if (!run_lock.owns_lock()) throw ServiceError(409, "a fine-tune run is already in progress");
  if (epochs && *epochs < 1) throw ServiceError(400, "epochs must be >= 1");

  std::vector<FeedbackItem> pool;
  std::shared_ptr<const Model> base;
  int run_index = 0;
  {
    std::shared_lock lock(state_mutex_);
    pool = pool_;
    base = model_;
    run_index = finetune_count_;
  }
  if (pool.empty()) throw ServiceError(400, "feedback pool is empty");

  const FinetuneSpec spec = run_spec(options_, run_index, epochs);
  FinetuneResult result = aemeter::finetune(*base, pool, spec);

  std::unique_lock lock(state_mutex_);
  model_ = std::make_shared<const Model>(result.model);
  ++finetune_count_;
  last_history_ = result.history;
  log_event(json{{"type", "finetune"}, {"epochs", spec.epochs}, {"pool_size", pool.size()}, {"run", run_index}}.dump());
  return result;
}

std::pair<std::string, std::string> FeedbackService::maps(const std::string& frame_id) const {
  std::shared_ptr<const Model> model;
  std::string png;
  {
    std::shared_lock lock(state_mutex_);
    const auto it = frames_.find(frame_id);
    if (it == frames_.end()) throw ServiceError(404, "unknown frame_id '" + frame_id + "'");
    model = it->second.model;
    png = it->second.png;
  }
  const ImagePlane img = decode_png(to_bytes(png));
  const Prediction p = forward_eval(*model, prepare_input(model->config, img));
  const auto [em, im] = export_maps(p.maps, img.width);
  return {to_string(encode_png(em)), to_string(encode_png(im))};
}

std::string FeedbackService::metrics_json() const {
  std::shared_lock lock(state_mutex_);
  json out;
  out["pool_size"] = pool_.size();
  out["finetune_count"] = finetune_count_;
  out["frames_served"] = frames_.size();
  json counts = {{"under", 0}, {"well", 0}, {"over", 0}};
  for (const auto& e : events_) counts[label_name(e.label)] = counts[label_name(e.label)].get<int>() + 1;
  out["label_counts"] = counts;
  if (last_history_.empty()) {
    out["mean_recent_reward"] = nullptr;
    out["clamp_rate"] = nullptr;
  } else {
    out["mean_recent_reward"] = last_history_.back().mean_reward;
    out["clamp_rate"] = last_history_.back().clamp_rate;
  }
  out["last_finetune"] = history_json(last_history_);
  json scenes = json::object();
  for (const auto& [id, ep] : episodes_) {
    json ev = json::array();
    for (const auto& s : ep.trace.steps) ev.push_back(s.effective_ev);
    scenes[id] = {{"step", ep.step},
                  {"converged_at", ep.trace.converged_at ? json(*ep.trace.converged_at) : json(nullptr)},
                  {"effective_ev", ev}};
  }
  out["scenes"] = scenes;
  return out.dump();
}

std::string FeedbackService::model_info_json() const {
  std::shared_lock lock(state_mutex_);
  return json{{"config", json::parse(config_to_json(model_->config))},
              {"param_count", model_->params.numel()},
              {"finetune_count", finetune_count_},
              {"session_id", options_.session_id},
              {"latency_depth", options_.latency_depth},
              {"scenes", [&] {
                 json ids = json::array();
                 for (const auto& [id, _] : scenes_) ids.push_back(id);
                 return ids;
               }()}}
      .dump();
}

Model FeedbackService::model() const {
  std::shared_lock lock(state_mutex_);
  return *model_;
}

std::size_t FeedbackService::pool_size() const {
  std::shared_lock lock(state_mutex_);
  return pool_.size();
}

int FeedbackService::finetune_count() const {
  std::shared_lock lock(state_mutex_);
  return finetune_count_;
}

std::vector<std::string> FeedbackService::event_log_lines() const {
  std::shared_lock lock(state_mutex_);
  return log_lines_;
}

// Caller holds the state lock exclusively.
void FeedbackService::log_event(const std::string& line) {
  log_lines_.push_back(line);
  if (options_.event_log) {
    std::ofstream out(*options_.event_log, std::ios::app | std::ios::binary);
    out << line << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot append to event log " + options_.event_log->string());
  }
}

std::vector<std::string> read_event_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open event log " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

Model replay_event_log(Model model, const std::map<std::string, SceneModel>& scenes, const std::vector<std::string>& lines,
                       const ServiceOptions& options) {
  std::vector<FeedbackItem> pool;
  int run_index = 0;
  std::size_t lineno = 0;
  for (const auto& line : lines) {
    ++lineno;
    const json e = json::parse(line, nullptr, false);
    if (e.is_discarded() || !e.contains("type")) throw std::runtime_error("event log line " + std::to_string(lineno) + ": malformed");
    const std::string type = e.at("type").get<std::string>();
    if (type == "feedback") {
      const std::string sid = e.at("scene_id").get<std::string>();
      const auto it = scenes.find(sid);
      if (it == scenes.end()) throw std::runtime_error("event log line " + std::to_string(lineno) + ": unknown scene " + sid);
      const auto label = parse_label(e.at("label").get<std::string>());
      if (!label) throw std::runtime_error("event log line " + std::to_string(lineno) + ": bad label");
      pool.push_back(FeedbackItem{service_frame(it->second, e.at("effective_ev").get<double>()), *label, std::nullopt, sid});
    } else if (type == "finetune") {
      const auto n = e.at("pool_size").get<std::size_t>();
      if (n == 0 || n > pool.size()) throw std::runtime_error("event log line " + std::to_string(lineno) + ": pool_size out of range");
      const std::vector<FeedbackItem> sub(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
      model = finetune(std::move(model), sub, run_spec(options, run_index++, e.at("epochs").get<int>())).model;
    } else {
      throw std::runtime_error("event log line " + std::to_string(lineno) + ": unknown type " + type);
    }
  }
  return model;
}

struct HttpServer::Impl {
  FeedbackService& service;
  httplib::Server server;
  std::atomic<bool> running{false};

  explicit Impl(FeedbackService& s) : service(s) { routes(); }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
  }

  template <class F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const ServiceError& e) {
      reply(res, e.status, {{"error", e.what()}});
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", std::string("malformed request: ") + e.what()}});
    } catch (const std::invalid_argument& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  }

  static json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    json j = json::parse(req.body);
    if (!j.is_object()) throw ServiceError(400, "request body must be a JSON object");
    return j;
  }

  void routes() {
    server.Get("/frame", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.has_param("scene_id")) throw ServiceError(400, "scene_id is required");
        const bool fresh = req.has_param("new_episode") && req.get_param_value("new_episode") == "1";
        std::optional<double> start;
        if (req.has_param("start_ev")) {
          try {
            start = std::stod(req.get_param_value("start_ev"));
          } catch (const std::exception&) {
            throw ServiceError(400, "start_ev must be a number");
          }
        }
        const FrameInfo f = service.frame(req.get_param_value("scene_id"), fresh, start);
        reply(res, 200,
              {{"frame_id", f.frame_id},
               {"scene_id", f.scene_id},
               {"step", f.step},
               {"effective_ev", f.effective_ev},
               {"predicted_delta_ev", f.predicted_delta_ev},
               {"png_base64", httplib::detail::base64_encode(f.png)}});
      });
    });
    server.Post("/feedback", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json b = body_of(req);
        if (!b.contains("frame_id") || !b["frame_id"].is_string()) throw ServiceError(400, "frame_id (string) is required");
        if (!b.contains("label") || !b["label"].is_string()) throw ServiceError(400, "label (string) is required");
        const auto n = service.feedback(b["frame_id"].get<std::string>(), b["label"].get<std::string>());
        reply(res, 200, {{"pool_size", n}});
      });
    });
    server.Post("/finetune", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json b = body_of(req);
        std::optional<int> epochs;
        if (b.contains("epochs")) {
          if (!b["epochs"].is_number_integer()) throw ServiceError(400, "epochs must be an integer");
          epochs = b["epochs"].get<int>();
        }
        const FinetuneResult r = service.finetune(epochs);
        reply(res, 200,
              {{"finetune_count", service.finetune_count()},
               {"steps", r.steps},
               {"pool_size", service.pool_size()},
               {"history", history_json(r.history)}});
      });
    });
    server.Get(R"(/maps/([A-Za-z0-9_\-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        const auto [em, im] = service.maps(id);
        reply(res, 200,
              {{"frame_id", id},
               {"em_png_base64", httplib::detail::base64_encode(em)},
               {"im_png_base64", httplib::detail::base64_encode(im)}});
      });
    });
    server.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { res.set_content(service.metrics_json(), "application/json; charset=utf-8"); });
    });
    server.Get("/model/info", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { res.set_content(service.model_info_json(), "application/json; charset=utf-8"); });
    });
  }
};

HttpServer::HttpServer(FeedbackService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() {
  impl_->running = true;
  impl_->server.listen_after_bind();
  impl_->running = false;
}

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace aemeter
