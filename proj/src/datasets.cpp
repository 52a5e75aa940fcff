#include "aemeter/datasets.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "aemeter/image_io.hpp"

namespace aemeter {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void manifest_error(std::size_t line, const std::string& what) {
  throw std::runtime_error("manifest line " + std::to_string(line) + ": " + what);
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double rec709(double r, double g, double b) { return 0.2126 * r + 0.7152 * g + 0.0722 * b; }

// Saturated colour with unit Rec.709 luminance.
std::array<double, 3> hue_color(double hue, double saturation) {
  const double h = hue * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double v = 1.0;
  const double p = v * (1.0 - saturation);
  const double q = v * (1.0 - saturation * f);
  const double t = v * (1.0 - saturation * (1.0 - f));
  std::array<double, 3> rgb{};
  switch (sector) {
    case 0: rgb = {v, t, p}; break;
    case 1: rgb = {q, v, p}; break;
    case 2: rgb = {p, v, t}; break;
    case 3: rgb = {p, q, v}; break;
    case 4: rgb = {t, p, v}; break;
    default: rgb = {v, p, q}; break;
  }
  const double y = rec709(rgb[0], rgb[1], rgb[2]);
  for (double& c : rgb) c /= y;
  return rgb;
}

}  // namespace

const char* label_name(CoarseLabel label) {
  switch (label) {
    case CoarseLabel::Under: return "under";
    case CoarseLabel::Well: return "well";
    case CoarseLabel::Over: return "over";
  }
  return "?";
}

std::optional<CoarseLabel> parse_label(std::string_view text) {
  if (text == "under") return CoarseLabel::Under;
  if (text == "well") return CoarseLabel::Well;
  if (text == "over") return CoarseLabel::Over;
  return std::nullopt;
}

CoarseLabel label_from_gt(double gt_ev, double tolerance) {
  if (std::abs(gt_ev) < tolerance) return CoarseLabel::Well;
  return gt_ev > 0.0 ? CoarseLabel::Under : CoarseLabel::Over;
}

std::vector<ManifestRecord> parse_manifest(std::istream& in, std::ostream* warnings) {
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    ManifestRecord rec;
    std::istringstream fields(body);
    std::string field;
    while (std::getline(fields, field, '\t')) {
      field = trim(field);
      if (field.empty()) continue;
      const auto eq = field.find('=');
      if (eq == std::string::npos || eq == 0) manifest_error(lineno, "expected key=value, got '" + field + "'");
      const std::string key = field.substr(0, eq);
      const std::string value = field.substr(eq + 1);
      if (key == "image_path") {
        rec.image_path = value;
      } else if (key == "ground_truth_delta_ev") {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(value, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != value.size() || value.empty() || !std::isfinite(v)) {
          manifest_error(lineno, "ground_truth_delta_ev is not a finite number: '" + value + "'");
        }
        rec.ground_truth_delta_ev = v;
      } else if (key == "coarse_label") {
        rec.coarse_label = parse_label(value);
        if (!rec.coarse_label) manifest_error(lineno, "coarse_label must be under|well|over, got '" + value + "'");
      } else if (key == "expert_id") {
        rec.expert_id = value;
      } else if (key == "scene_id") {
        rec.scene_id = value;
      } else if (warnings) {
        *warnings << "manifest line " << lineno << ": ignoring unknown field '" << key << "'\n";
      }
    }
    if (rec.image_path.empty()) manifest_error(lineno, "missing image_path");
    if (!rec.ground_truth_delta_ev && !rec.coarse_label) {
      manifest_error(lineno, "needs ground_truth_delta_ev or coarse_label");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path, std::ostream* warnings) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  return parse_manifest(in, warnings);
}

std::string format_manifest(const std::vector<ManifestRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += "image_path=" + r.image_path;
    if (r.ground_truth_delta_ev) out += "\tground_truth_delta_ev=" + format_double(*r.ground_truth_delta_ev);
    if (r.coarse_label) out += std::string("\tcoarse_label=") + label_name(*r.coarse_label);
    if (r.expert_id) out += "\texpert_id=" + *r.expert_id;
    if (r.scene_id) out += "\tscene_id=" + *r.scene_id;
    out += '\n';
  }
  return out;
}

void save_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path) {
  write_file_atomic(path, format_manifest(records));
}

int bracket_size(double lo, double hi, double step) {
  if (!(lo <= hi) || !(step > 0.0)) throw std::invalid_argument("bracket: need lo <= hi and step > 0");
  const double rungs = (hi - lo) / step;
  const double r = std::round(rungs);
  if (std::abs(rungs - r) > 1e-9) throw std::invalid_argument("bracket: (hi - lo) / step is not integral");
  return static_cast<int>(r) + 1;
}

double bracket_action(double lo, double step, int index) { return lo + step * index; }

std::vector<BracketItem> synth_bracket(const ImagePlane& image, double lo, double hi, double step, double gamma) {
  const int n = bracket_size(lo, hi, step);
  std::vector<BracketItem> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    double y = bracket_action(lo, step, t);
    if (std::abs(y) < 1e-12) y = 0.0;
    out.push_back({apply_exposure_shift(image, -y, gamma), y, t});
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the combined state
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string scene_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05zu", index);
  return buf;
}

double scene_statistic(const SceneModel& scene, double ev) {
  return weighted_linear_luminance(render(scene, ev), scene.importance);
}

SceneModel generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  if (spec.size < 4) throw std::invalid_argument("scene: size must be >= 4");
  if (spec.min_shapes < 0 || spec.max_shapes < spec.min_shapes) throw std::invalid_argument("scene: bad shape count range");
  if (!(spec.background_lo > 0.0) || spec.background_hi < spec.background_lo) {
    throw std::invalid_argument("scene: bad background range");
  }
  if (spec.importance_base < 0.0 || spec.importance_base > 1.0) throw std::invalid_argument("scene: importance_base outside [0,1]");

  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };

  const int s = spec.size;
  const std::size_t n = static_cast<std::size_t>(s) * s;
  SceneModel sc;
  sc.width = s;
  sc.height = s;
  sc.seed = seed;
  sc.spec = spec;
  sc.radiance.assign(3 * n, 0.0);
  sc.importance.assign(n, spec.importance_base);

  const double bg = std::exp(uni(std::log(spec.background_lo), std::log(spec.background_hi)));
  const double angle = uni(0.0, 2.0 * std::numbers::pi);
  const double slope = uni(-1.5, 1.5);
  std::array<double, 3> tint{};
  for (double& t : tint) t = 1.0 + uni(-0.05, 0.05);

  std::vector<double> lum(n);
  std::vector<std::array<double, 3>> color(n);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double px = (x + 0.5) / s - 0.5;
      const double py = (y + 0.5) / s - 0.5;
      const std::size_t i = static_cast<std::size_t>(y) * s + x;
      lum[i] = bg * std::exp2(slope * (px * std::cos(angle) + py * std::sin(angle)));
      color[i] = tint;
    }
  }

  const int shapes = spec.min_shapes + static_cast<int>(rng() % static_cast<std::uint64_t>(spec.max_shapes - spec.min_shapes + 1));
  for (int k = 0; k < shapes; ++k) {
    const bool disk = u01(rng) < 0.5;
    const double cx = uni(0.2, 0.8) * s;
    const double cy = uni(0.2, 0.8) * s;
    const double rx = uni(0.1, 0.25) * s;
    const double ry = disk ? rx : uni(0.1, 0.25) * s;
    const double level = bg * std::exp2(uni(-spec.contrast_stops, spec.contrast_stops));
    const auto rgb = hue_color(u01(rng), uni(0.5, 0.8));
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double dx = (x + 0.5 - cx) / rx;
        const double dy = (y + 0.5 - cy) / ry;
        const bool inside = disk ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (!inside) continue;
        const std::size_t i = static_cast<std::size_t>(y) * s + x;
        lum[i] = level;
        color[i] = rgb;
        sc.importance[i] = 1.0;
      }
    }
  }

  std::normal_distribution<double> grain(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = std::exp2(0.08 * grain(rng));
    for (int c = 0; c < 3; ++c) sc.radiance[c * n + i] = lum[i] * color[i][c] * g;
  }

  sc.ev_ref = uni(3.0, 9.0);
  // The statistic is continuous and nondecreasing in ev, from 0 to 1.
  double lo = sc.ev_ref - 30.0, hi = sc.ev_ref + 30.0;
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (scene_statistic(sc, mid) < spec.target_luminance ? lo : hi) = mid;
  }
  sc.optimal_ev = 0.5 * (lo + hi);
  return sc;
}

std::vector<SceneModel> generate_scenes(std::size_t count, std::uint64_t seed, const SceneSpec& spec) {
  std::vector<SceneModel> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(derive_seed(seed, i), spec));
  return out;
}

std::vector<ExpertOracle> default_experts() {
  return {{"A", -0.4, 0.18, 0.1}, {"B", -0.2, 0.18, 0.1}, {"C", 0.0, 0.18, 0.1}, {"D", 0.2, 0.18, 0.1}, {"E", 0.4, 0.18, 0.1}};
}

ExpertOracle expert_by_id(const std::string& id) {
  for (const auto& e : default_experts()) {
    if (e.expert_id == id) return e;
  }
  throw std::invalid_argument("unknown expert id '" + id + "' (expected A..E)");
}

ExpertJudgement expert_label(const ImagePlane& image, const std::vector<double>& importance, const ExpertOracle& oracle,
                             double gamma) {
  if (image.space != ColorSpace::Encoded) throw std::invalid_argument("expert_label: image must be encoded");
  const std::size_t n = image.pixels();
  if (importance.size() != n) throw std::invalid_argument("expert_label: importance map size mismatch");
  std::vector<double> lin(image.values.size());
  for (std::size_t i = 0; i < lin.size(); ++i) lin[i] = std::pow(std::clamp(image.values[i], 0.0, 1.0), gamma);
  double wsum = 0.0;
  for (double w : importance) wsum += w;
  if (!(wsum > 0.0)) throw std::invalid_argument("expert_label: importance sums to zero");

  auto statistic = [&](double delta) {
    const double k = std::exp2(delta);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += importance[i] * rec709(std::min(1.0, lin[i] * k), std::min(1.0, lin[n + i] * k), std::min(1.0, lin[2 * n + i] * k));
    }
    return acc / wsum;
  };

  ExpertJudgement j;
  double lo = -8.0, hi = 8.0;
  if (statistic(hi) < oracle.target_luminance) {
    j.bracketed = false;
    j.ground_truth_delta_ev = 2.0;
  } else if (statistic(lo) > oracle.target_luminance) {
    j.bracketed = false;
    j.ground_truth_delta_ev = -2.0;
  } else {
    for (int it = 0; it < 100 && hi - lo > 1e-12; ++it) {
      const double mid = 0.5 * (lo + hi);
      (statistic(mid) < oracle.target_luminance ? lo : hi) = mid;
    }
    j.ground_truth_delta_ev = 0.5 * (lo + hi) + oracle.bias_ev;
  }
  j.label = label_from_gt(j.ground_truth_delta_ev, oracle.tolerance);
  return j;
}

ExpertJudgement expert_label(const ImagePlane& image, const ExpertOracle& oracle, double gamma) {
  return expert_label(image, std::vector<double>(image.pixels(), 1.0), oracle, gamma);
}

ImagePlane native_render(const SceneModel& scene) { return quantize8(render(scene, scene.optimal_ev)); }

std::vector<LabeledImage> native_set(const std::vector<SceneModel>& scenes) {
  std::vector<LabeledImage> out;
  out.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) out.push_back({native_render(scenes[i]), 0.0, scene_id(i)});
  return out;
}

namespace {

template <typename F>
void for_each_capture(const std::vector<SceneModel>& scenes, std::uint64_t seed, double center, double offset_range,
                      F&& f) {
  Rng rng(seed);
  std::uniform_real_distribution<double> off(-offset_range, offset_range);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const double o = off(rng);
    f(i, quantize8(render(scenes[i], scenes[i].optimal_ev + center + o)));
  }
}

}  // namespace

std::vector<LabeledImage> expert_test_set(const std::vector<SceneModel>& scenes, const ExpertOracle& oracle,
                                          std::uint64_t seed, double offset_range) {
  std::vector<LabeledImage> out;
  for_each_capture(scenes, seed, 0.0, offset_range, [&](std::size_t i, ImagePlane img) {
    const auto j = expert_label(img, scenes[i].importance, oracle);
    out.push_back({std::move(img), j.ground_truth_delta_ev, scene_id(i)});
  });
  return out;
}

std::vector<FeedbackItem> expert_pool(const std::vector<SceneModel>& scenes, const ExpertOracle& oracle,
                                      std::uint64_t seed, double offset_range) {
  std::vector<FeedbackItem> out;
  for_each_capture(scenes, seed, oracle.bias_ev, offset_range, [&](std::size_t i, ImagePlane img) {
    const auto j = expert_label(img, scenes[i].importance, oracle);
    out.push_back({std::move(img), j.label, j.ground_truth_delta_ev, scene_id(i)});
  });
  return out;
}

}  // namespace aemeter

namespace aemeter {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string scene_meta(const SceneModel& scene, const std::string& id) {
  const SceneSpec& sp = scene.spec;
  std::ostringstream os;
  os << "scene_id=" << id << '\n'
     << "seed=" << scene.seed << '\n'
     << "size=" << sp.size << '\n'
     << "min_shapes=" << sp.min_shapes << '\n'
     << "max_shapes=" << sp.max_shapes << '\n'
     << "background_lo=" << fmt17(sp.background_lo) << '\n'
     << "background_hi=" << fmt17(sp.background_hi) << '\n'
     << "contrast_stops=" << fmt17(sp.contrast_stops) << '\n'
     << "importance_base=" << fmt17(sp.importance_base) << '\n'
     << "target_luminance=" << fmt17(sp.target_luminance) << '\n'
     << "ev_ref=" << fmt17(scene.ev_ref) << '\n'
     << "optimal_ev=" << fmt17(scene.optimal_ev) << '\n';
  return os.str();
}

SceneModel parse_scene_meta(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("scene meta: expected key=value, got '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(std::string("scene meta: missing ") + key);
    return it->second;
  };
  SceneSpec sp;
  sp.size = std::stoi(need("size"));
  sp.min_shapes = std::stoi(need("min_shapes"));
  sp.max_shapes = std::stoi(need("max_shapes"));
  sp.background_lo = std::stod(need("background_lo"));
  sp.background_hi = std::stod(need("background_hi"));
  sp.contrast_stops = std::stod(need("contrast_stops"));
  sp.importance_base = std::stod(need("importance_base"));
  sp.target_luminance = std::stod(need("target_luminance"));
  SceneModel s = generate_scene(std::stoull(need("seed")), sp);
  const double ev_ref = std::stod(need("ev_ref"));
  const double opt = std::stod(need("optimal_ev"));
  if (std::abs(s.ev_ref - ev_ref) > 1e-9 || std::abs(s.optimal_ev - opt) > 1e-9) {
    throw std::runtime_error("scene meta: regenerated scene " + need("scene_id") + " disagrees with its sidecar");
  }
  return s;
}

void write_scene_archive(const std::filesystem::path& dir, const std::vector<SceneModel>& scenes) {
  const auto sdir = dir / "scenes";
  std::filesystem::create_directories(sdir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::string id = scene_id(i);
    write_file_atomic(sdir / (id + ".meta"), scene_meta(scenes[i], id));
    write_file_atomic(sdir / (id + ".png"), encode_png(render(scenes[i], scenes[i].ev_ref)));
  }
}

std::map<std::string, SceneModel> load_scene_archive(const std::filesystem::path& dir) {
  const auto sdir = std::filesystem::is_directory(dir / "scenes") ? dir / "scenes" : dir;
  if (!std::filesystem::is_directory(sdir)) throw std::runtime_error("scene archive not found: " + dir.string());
  std::map<std::string, SceneModel> out;
  for (const auto& entry : std::filesystem::directory_iterator(sdir)) {
    if (entry.path().extension() != ".meta") continue;
    const auto bytes = read_file_bytes(entry.path());
    out.emplace(entry.path().stem().string(), parse_scene_meta(std::string(bytes.begin(), bytes.end())));
  }
  if (out.empty()) throw std::runtime_error("scene archive has no .meta files: " + sdir.string());
  return out;
}

}  // namespace aemeter
