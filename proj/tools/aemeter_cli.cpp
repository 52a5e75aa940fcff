#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aemeter/control_sim.hpp"
#include "aemeter/datasets.hpp"
#include "aemeter/detail/allocator.hpp"
#include "aemeter/image_io.hpp"
#include "aemeter/metering_net.hpp"
#include "aemeter/reinforce.hpp"
#include "aemeter/service.hpp"
#include "aemeter/supervised.hpp"

namespace fs = std::filesystem;
using namespace aemeter;

namespace {

std::uint64_t env_seed() {
  if (const char* s = std::getenv("AEMETER_SEED")) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("AEMETER_SEED must be an unsigned integer, got '") + s + "'");
    }
  }
  return 1;
}

std::uint64_t seed_or_env(const std::optional<std::uint64_t>& s) { return s ? *s : env_seed(); }

NetConfig resolve_config(const std::string& which, int input_size) {
  if (which == "desk") return NetConfig::desk(input_size);
  if (which == "full") return NetConfig::full_scale(input_size);
  const auto bytes = read_file_bytes(which);
  return config_from_json(std::string(bytes.begin(), bytes.end()));
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

std::vector<LabeledImage> labeled_from_manifest(const fs::path& manifest, const std::optional<std::string>& expert) {
  const auto base = manifest.parent_path();
  std::vector<LabeledImage> out;
  for (const auto& r : load_manifest(manifest, &std::cerr)) {
    if (expert && r.expert_id != *expert) continue;
    if (!r.ground_truth_delta_ev) throw std::invalid_argument("manifest record " + r.image_path + " has no ground truth");
    out.push_back({read_image(resolve(base, r.image_path)), *r.ground_truth_delta_ev, r.scene_id.value_or(r.image_path)});
  }
  if (out.empty()) throw std::invalid_argument("no usable records in " + manifest.string());
  return out;
}

std::vector<SceneModel> scenes_in_order(const std::map<std::string, SceneModel>& archive) {
  std::vector<SceneModel> v;
  for (const auto& [_, s] : archive) v.push_back(s);
  return v;
}

int cmd_gen_scenes(std::size_t n, std::uint64_t seed, const fs::path& out, int size, const std::vector<std::string>& experts,
                   double offset_range) {
  if (n == 0) throw std::invalid_argument("--n must be >= 1");
  SceneSpec spec;
  spec.size = size;
  const auto scenes = generate_scenes(n, seed, spec);
  write_scene_archive(out, scenes);

  fs::create_directories(out / "native");
  std::vector<ManifestRecord> native;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::string id = scene_id(i);
    const std::string rel = "native/" + id + ".png";
    write_png(native_render(scenes[i]), out / rel);
    native.push_back({rel, 0.0, CoarseLabel::Well, std::nullopt, id});
  }
  save_manifest(native, out / "manifest.tsv");

  if (!experts.empty()) {
    fs::create_directories(out / "captures");
    std::vector<ManifestRecord> caps;
    bool images_written = false;
    for (const auto& e : experts) {
      const ExpertOracle oracle = expert_by_id(e);
      const auto set = expert_test_set(scenes, oracle, derive_seed(seed, 0xCA97), offset_range);
      for (std::size_t i = 0; i < set.size(); ++i) {
        const std::string rel = "captures/" + scene_id(i) + ".png";
        if (!images_written) write_png(set[i].image, out / rel);
        caps.push_back({rel, set[i].delta_ev, label_from_gt(set[i].delta_ev, oracle.tolerance), e, scene_id(i)});
      }
      images_written = true;
    }
    save_manifest(caps, out / "captures.tsv");
  }
  std::cout << "wrote " << n << " scenes to " << out.string() << '\n';
  return 0;
}

int cmd_pretrain(const fs::path& manifest, const std::string& config, int input_size, const fs::path& out_model,
                 TrainSpec spec, bool uniform_im, const std::optional<fs::path>& history) {
  NetConfig cfg = resolve_config(config, input_size);
  cfg.uniform_im = cfg.uniform_im || uniform_im;
  cfg.validate();
  const auto data = labeled_from_manifest(manifest, std::nullopt);
  Rng init(derive_seed(spec.seed, 0x1417));
  const auto result = pretrain(build_network(cfg, init), data, spec, &std::cerr);
  save_model(result.model, out_model);
  write_file_atomic(history.value_or(fs::path(out_model.string() + ".history.tsv")), history_tsv(result.history));
  std::cout << "best epoch " << result.best_epoch << '\n';
  return 0;
}

int cmd_rl_train(const fs::path& model_path, const fs::path& manifest, const std::optional<std::string>& expert,
                 const fs::path& out_model, FinetuneSpec spec, const std::optional<fs::path>& history) {
  Model model = load_model(model_path);
  const auto base = manifest.parent_path();
  std::vector<FeedbackItem> pool;
  if (expert) {
    // Oracle-labeled pool over the scenes the manifest references.
    const ExpertOracle oracle = expert_by_id(*expert);
    const auto archive = load_scene_archive(base);
    std::vector<SceneModel> scenes;
    std::set<std::string> seen;
    for (const auto& r : load_manifest(manifest, &std::cerr)) {
      if (!r.scene_id || !seen.insert(*r.scene_id).second) continue;
      const auto it = archive.find(*r.scene_id);
      if (it == archive.end()) throw std::invalid_argument("scene " + *r.scene_id + " missing from archive");
      scenes.push_back(it->second);
    }
    if (scenes.empty()) throw std::invalid_argument("manifest references no scenes");
    pool = expert_pool(scenes, oracle, derive_seed(spec.seed, 0x9001));
  } else {
    for (const auto& r : load_manifest(manifest, &std::cerr)) {
      if (!r.coarse_label) throw std::invalid_argument("record " + r.image_path + " has no coarse_label (or pass --expert)");
      pool.push_back({read_image(resolve(base, r.image_path)), *r.coarse_label, r.ground_truth_delta_ev,
                      r.scene_id.value_or(r.image_path)});
    }
  }
  if (pool.empty()) throw std::invalid_argument("empty feedback pool");
  const auto result = finetune(std::move(model), pool, spec, &std::cerr);
  save_model(result.model, out_model);
  write_file_atomic(history.value_or(fs::path(out_model.string() + ".history.tsv")), finetune_history_tsv(result.history));
  std::cout << "steps " << result.steps << '\n';
  return 0;
}

std::pair<std::string, fs::path> split_named(const std::string& arg, std::size_t index) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos) return {"m" + std::to_string(index), arg};
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

void emit(const std::string& text, const std::optional<fs::path>& out) {
  if (out) {
    write_file_atomic(*out, text);
  } else {
    std::cout << text;
  }
}

int cmd_eval(const std::vector<std::string>& model_args, const fs::path& manifest, bool cross, bool nearest,
             const std::optional<fs::path>& out) {
  std::map<std::string, Model> models;
  for (std::size_t i = 0; i < model_args.size(); ++i) {
    auto [id, path] = split_named(model_args[i], i);
    models.emplace(id, load_model(path));
  }
  const auto base = manifest.parent_path();
  // Group records by expert; every group must list the same images in order.
  std::map<std::string, std::vector<ManifestRecord>> groups;
  for (const auto& r : load_manifest(manifest, &std::cerr)) {
    if (!r.ground_truth_delta_ev) throw std::invalid_argument("record " + r.image_path + " has no ground truth");
    groups[r.expert_id.value_or("gt")].push_back(r);
  }
  if (groups.empty()) throw std::invalid_argument("empty manifest");
  const auto& first = groups.begin()->second;
  std::vector<ImagePlane> images;
  for (const auto& r : first) images.push_back(read_image(resolve(base, r.image_path)));

  std::map<std::string, std::vector<double>> gts;
  for (const auto& [e, recs] : groups) {
    if (recs.size() != first.size()) throw std::invalid_argument("expert groups must share their images");
    std::vector<double> g;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (recs[i].image_path != first[i].image_path) throw std::invalid_argument("expert groups must share their images");
      g.push_back(*recs[i].ground_truth_delta_ev);
    }
    gts[e] = std::move(g);
  }
  std::map<std::string, std::vector<double>> preds;
  for (const auto& [id, m] : models) {
    std::vector<double> p;
    for (const auto& img : images) p.push_back(predict_delta_ev(m, prepare_input(m.config, img)));
    preds[id] = std::move(p);
  }

  std::string text;
  if (cross || !nearest) text += cross_eval(preds, gts).tsv();
  if (nearest) {
    if (!text.empty()) text += '\n';
    text += nearest_expert_accuracy(preds, gts).tsv();
  }
  emit(text, out);
  return 0;
}

int cmd_simulate(const std::optional<fs::path>& model_path, const std::string& policy_name, const fs::path& scenes_dir,
                 int latency, int episodes, int max_steps, double start_range, bool keep_going, std::uint64_t seed,
                 const std::optional<fs::path>& out) {
  if (episodes < 1) throw std::invalid_argument("--episodes must be >= 1");
  const auto scenes = scenes_in_order(load_scene_archive(scenes_dir));
  std::optional<Model> model;
  if (policy_name == "model") {
    if (!model_path) throw std::invalid_argument("--policy model requires --model");
    model = load_model(*model_path);
  } else if (policy_name != "oracle" && policy_name != "zero") {
    throw std::invalid_argument("--policy must be model|oracle|zero");
  }
  EpisodeOptions opt;
  opt.max_steps = max_steps;
  opt.latency_depth = latency;
  opt.stop_on_convergence = !keep_going;
  if (out) fs::create_directories(*out / "traces");

  std::ostringstream summary;
  summary.precision(10);
  summary << "episode\tscene_id\tstart_ev\toptimal_ev\tconverged\tsteps_to_converge\tovershoot_ev\toscillations"
             "\tamplitude_ev\tresidual_ev\n";
  int converged = 0;
  for (int e = 0; e < episodes; ++e) {
    const std::size_t si = static_cast<std::size_t>(e) % scenes.size();
    const SceneModel& scene = scenes[si];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(e)));
    const double start = scene.optimal_ev + std::uniform_real_distribution<double>(-start_range, start_range)(rng);
    const ExposurePolicy policy =
        policy_name == "model" ? model_policy(*model) : policy_name == "oracle" ? oracle_policy(scene) : zero_policy();
    const SimTrace trace = run_episode(scene, policy, start, opt);
    const auto rep = convergence_metrics(trace, scene.optimal_ev, opt.eps, opt.k);
    converged += rep.converged ? 1 : 0;
    summary << e << '\t' << scene_id(si) << '\t' << start << '\t' << scene.optimal_ev << '\t' << (rep.converged ? 1 : 0)
            << '\t' << rep.steps_to_converge << '\t' << rep.overshoot_ev << '\t' << rep.oscillation_count << '\t'
            << rep.oscillation_amplitude_ev << '\t' << rep.residual_ev << '\n';
    if (out) {
      char name[32];
      std::snprintf(name, sizeof name, "episode_%04d.tsv", e);
      write_file_atomic(*out / "traces" / name, trace_tsv(trace));
    }
  }
  if (out) write_file_atomic(*out / "summary.tsv", summary.str());
  std::cout << summary.str();
  std::cerr << "converged " << converged << " / " << episodes << '\n';
  return 0;
}

int cmd_maps(const fs::path& model_path, const fs::path& image, const fs::path& out, int size) {
  const Model model = load_model(model_path);
  const ImagePlane img = read_image(image);
  const Prediction p = forward_eval(model, prepare_input(model.config, img));
  const auto [em, im] = export_maps(p.maps, size > 0 ? size : img.width);
  fs::create_directories(out);
  write_png(em, out / "em.png");
  write_png(im, out / "im.png");
  std::cout << "predicted_delta_ev\t" << p.delta_ev_norm * model.config.scale_ev << '\n';
  return 0;
}

std::atomic<HttpServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

int cmd_serve(const fs::path& model_path, const fs::path& scenes_dir, const std::string& host, int port, int latency,
              const std::optional<fs::path>& event_log, std::uint64_t seed, int epochs) {
  ServiceOptions opt;
  opt.seed = seed;
  opt.latency_depth = latency;
  opt.event_log = event_log;
  opt.finetune.epochs = epochs;
  FeedbackService service(load_model(model_path), load_scene_archive(scenes_dir), opt);
  HttpServer server(service);
  const int bound = server.bind(host, port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on " << host << ':' << bound << std::endl;
  server.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  detail::tune_allocator();
  CLI::App app{"aemeter: learned exposure metering"};
  app.require_subcommand(1);

  // gen-scenes
  std::size_t n = 0;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int scene_size = 64;
  std::vector<std::string> experts;
  double offset_range = 1.5;
  auto* gen = app.add_subcommand("gen-scenes", "Generate a synthetic scene archive and manifests");
  gen->add_option("--n", n, "Number of scenes")->required();
  gen->add_option("--seed", seed, "RNG seed (default: AEMETER_SEED or 1)");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--size", scene_size, "Scene resolution");
  gen->add_option("--experts", experts, "Write oracle-labeled captures for these experts (A..E)")->delimiter(',');
  gen->add_option("--offset-range", offset_range, "Capture EV offsets drawn from U[-r, r]");

  // pretrain
  std::string manifest, config = "desk", out_model, model_path;
  int input_size = 64;
  TrainSpec tspec;
  bool uniform_im = false;
  std::optional<std::string> history;
  auto* pre = app.add_subcommand("pretrain", "Supervised pre-training on bracketed native captures");
  pre->add_option("--manifest", manifest)->required();
  pre->add_option("--config", config, "desk | full | path to a JSON config");
  pre->add_option("--input-size", input_size);
  pre->add_option("--out-model", out_model)->required();
  pre->add_option("--epochs", tspec.epochs);
  pre->add_option("--batch", tspec.batch_size);
  pre->add_option("--lr", tspec.base_lr);
  pre->add_flag("--adam", tspec.use_adam);
  pre->add_flag("--uniform-im", uniform_im, "Replace the importance map with ones");
  pre->add_option("--seed", seed);
  pre->add_option("--history", history);

  // rl-train
  FinetuneSpec fspec;
  std::optional<std::string> expert;
  auto* rl = app.add_subcommand("rl-train", "Fine-tune with REINFORCE on coarse feedback");
  rl->add_option("--model", model_path)->required();
  rl->add_option("--manifest", manifest)->required();
  rl->add_option("--expert", expert, "Label the pool with this oracle expert");
  rl->add_option("--out-model", out_model)->required();
  rl->add_option("--epochs", fspec.epochs);
  rl->add_option("--batch", fspec.batch_size);
  rl->add_option("--lr", fspec.adam_lr);
  rl->add_option("--max-steps", fspec.max_steps);
  rl->add_option("--seed", seed);
  rl->add_option("--history", history);

  // eval
  std::vector<std::string> models;
  bool cross = false, nearest = false;
  std::optional<std::string> out_file;
  auto* ev = app.add_subcommand("eval", "MAE tables against manifest ground truth");
  ev->add_option("--model", models, "Model file, optionally id=path (repeatable)")->required();
  ev->add_option("--manifest", manifest)->required();
  ev->add_flag("--cross", cross, "Model x expert MAE matrix");
  ev->add_flag("--nearest", nearest, "Nearest-expert accuracy matrix");
  ev->add_option("--out", out_file);

  // simulate
  std::optional<std::string> sim_model;
  std::string policy = "model", scenes_dir;
  int latency = 3, episodes = 10, max_steps = 20;
  double start_range = 2.0;
  bool keep_going = false;
  auto* sim = app.add_subcommand("simulate", "Closed-loop viewfinder episodes");
  sim->add_option("--model", sim_model);
  sim->add_option("--policy", policy, "model | oracle | zero");
  sim->add_option("--scenes", scenes_dir)->required();
  sim->add_option("--latency", latency);
  sim->add_option("--episodes", episodes);
  sim->add_option("--max-steps", max_steps);
  sim->add_option("--start-range", start_range, "Start EV = optimal + U[-r, r]");
  sim->add_flag("--no-stop", keep_going, "Run every episode to --max-steps");
  sim->add_option("--seed", seed);
  sim->add_option("--out", out_file, "Directory for traces and summary.tsv");

  // maps
  std::string image;
  int map_size = 0;
  auto* maps = app.add_subcommand("maps", "Export exposure / importance maps for an image");
  maps->add_option("--model", model_path)->required();
  maps->add_option("--image", image)->required();
  maps->add_option("--out", out_dir)->required();
  maps->add_option("--size", map_size, "Output size (default: image width)");

  // serve
  std::string host = "127.0.0.1";
  int port = 8080, serve_epochs = 5;
  std::optional<std::string> event_log;
  auto* serve = app.add_subcommand("serve", "Feedback service over HTTP");
  serve->add_option("--model", model_path)->required();
  serve->add_option("--scenes", scenes_dir)->required();
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--latency", latency);
  serve->add_option("--event-log", event_log);
  serve->add_option("--finetune-epochs", serve_epochs);
  serve->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    auto opt_path = [](const std::optional<std::string>& s) -> std::optional<fs::path> {
      if (s) return fs::path(*s);
      return std::nullopt;
    };
    if (*gen) return cmd_gen_scenes(n, seed_or_env(seed), out_dir, scene_size, experts, offset_range);
    if (*pre) {
      tspec.seed = seed_or_env(seed);
      return cmd_pretrain(manifest, config, input_size, out_model, tspec, uniform_im, opt_path(history));
    }
    if (*rl) {
      fspec.seed = seed_or_env(seed);
      return cmd_rl_train(model_path, manifest, expert, out_model, fspec, opt_path(history));
    }
    if (*ev) return cmd_eval(models, manifest, cross, nearest, opt_path(out_file));
    if (*sim) {
      return cmd_simulate(opt_path(sim_model), policy, scenes_dir, latency, episodes, max_steps, start_range, keep_going,
                          seed_or_env(seed), opt_path(out_file));
    }
    if (*maps) return cmd_maps(model_path, image, out_dir, map_size);
    if (*serve) return cmd_serve(model_path, scenes_dir, host, port, latency, opt_path(event_log), seed_or_env(seed), serve_epochs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
