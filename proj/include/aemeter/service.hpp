#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "aemeter/control_sim.hpp"
#include "aemeter/datasets.hpp"
#include "aemeter/metering_net.hpp"
#include "aemeter/reinforce.hpp"

namespace aemeter {

struct FeedbackEvent {
  std::string frame_id;
  std::string scene_id;
  double effective_ev = 0.0;
  CoarseLabel label = CoarseLabel::Well;
  std::int64_t timestamp_ms = 0;
  std::string session_id;
};

struct ServiceOptions {
  std::uint64_t seed = 1;
  int latency_depth = 3;
  int episode_steps = 20;
  FinetuneSpec finetune;
  std::string session_id = "session";
  // JSON-lines log of feedback and fine-tune events; appended when set.
  std::optional<std::filesystem::path> event_log;
};

// Thrown by the service methods; carries the HTTP status to report.
struct ServiceError : std::runtime_error {
  int status;
  ServiceError(int status_code, const std::string& what) : std::runtime_error(what), status(status_code) {}
};

struct FrameInfo {
  std::string frame_id;
  std::string scene_id;
  int step = 0;
  double effective_ev = 0.0;
  double predicted_delta_ev = 0.0;
  std::string png;  // encoded frame bytes
};

// Simulated viewfinder sessions over a fixed scene set, with a feedback pool
// that fine-tunes the served model on request.
class FeedbackService {
 public:
  FeedbackService(Model model, std::map<std::string, SceneModel> scenes, ServiceOptions options = {});

  // Advances the scene's episode by one step. A new episode starts on request,
  // on first use, or after episode_steps; it picks up the latest model.
  FrameInfo frame(const std::string& scene_id, bool new_episode = false, std::optional<double> start_ev = std::nullopt);
  // Returns the pool size after the append.
  std::size_t feedback(const std::string& frame_id, const std::string& label);
  // Throws 400 on an empty pool and 409 while another run is in flight.
  FinetuneResult finetune(std::optional<int> epochs = std::nullopt);

  // (em, im) as PNG bytes, rendered with the model that served the frame.
  std::pair<std::string, std::string> maps(const std::string& frame_id) const;
  std::string metrics_json() const;
  std::string model_info_json() const;

  Model model() const;
  std::size_t pool_size() const;
  int finetune_count() const;
  std::vector<std::string> event_log_lines() const;

 private:
  struct Episode {
    std::shared_ptr<const Model> model;
    std::unique_ptr<LatencyQueue> queue;
    double commanded = 0.0;
    int step = 0;
    SimTrace trace;
  };
  struct Frame {
    std::string scene_id;
    int step = 0;
    double effective_ev = 0.0;
    double predicted_delta_ev = 0.0;
    std::string png;
    std::shared_ptr<const Model> model;
  };

  void start_episode(const std::string& scene_id, Episode& ep, double start_ev);
  void log_event(const std::string& line);

  ServiceOptions options_;
  std::map<std::string, SceneModel> scenes_;

  mutable std::shared_mutex state_mutex_;
  std::shared_ptr<const Model> model_;
  std::map<std::string, Episode> episodes_;
  std::map<std::string, Frame> frames_;
  std::vector<FeedbackEvent> events_;
  std::vector<FeedbackItem> pool_;
  std::vector<std::string> log_lines_;
  std::vector<FinetuneEpoch> last_history_;
  std::uint64_t next_frame_ = 1;
  int finetune_count_ = 0;

  std::mutex finetune_mutex_;
};

// Rebuilds the pool from the logged events and reruns every logged fine-tune.
Model replay_event_log(Model model, const std::map<std::string, SceneModel>& scenes,
                       const std::vector<std::string>& lines, const ServiceOptions& options);
std::vector<std::string> read_event_log(const std::filesystem::path& path);

// Frame served for a scene at an EV: 8-bit quantized render.
ImagePlane service_frame(const SceneModel& scene, double ev);

// Blocking HTTP front end; stop() may be called from another thread.
class HttpServer {
 public:
  explicit HttpServer(FeedbackService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port.
  int bind(const std::string& host, int port);
  void listen();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace aemeter
