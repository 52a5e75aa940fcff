#include "aemeter/metering_net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <json.hpp>
#include <stdexcept>

#include "aemeter/image_io.hpp"

namespace aemeter {

using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'A', 'E', 'M', 'E', 'T', 'E', 'R', '1'};
constexpr int kFormatVersion = 1;

std::string block_prefix(std::size_t i) { return "backbone.block" + std::to_string(i); }

void add_conv(ParamSet& ps, const std::string& name, int out, int in, int k, double std, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Tensor w({static_cast<std::size_t>(out), static_cast<std::size_t>(in), static_cast<std::size_t>(k),
            static_cast<std::size_t>(k)});
  for (auto& v : w.data()) v = dist(rng);
  ps.add(name + ".w", std::move(w));
  ps.add(name + ".b", Tensor({static_cast<std::size_t>(out)}));
}

Var conv_layer(Graph& g, const ParamSet& ps, const std::string& name, Var x, int stride, int pad) {
  return conv2d(x, g.param(ps, name + ".w"), g.param(ps, name + ".b"), stride, pad);
}

const char* kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::Conv: return "conv";
    case BlockKind::Fire: return "fire";
    case BlockKind::MaxPool: return "maxpool";
  }
  return "?";
}

BlockKind kind_from(const std::string& s) {
  if (s == "conv") return BlockKind::Conv;
  if (s == "fire") return BlockKind::Fire;
  if (s == "maxpool") return BlockKind::MaxPool;
  throw std::invalid_argument("config: unknown block kind '" + s + "'");
}

json config_json(const NetConfig& c) {
  json blocks = json::array();
  for (const auto& b : c.backbone) {
    json j = {{"kind", kind_name(b.kind)}};
    switch (b.kind) {
      case BlockKind::Conv:
        j["out"] = b.out_channels;
        j["kernel"] = b.kernel;
        j["stride"] = b.stride;
        j["pad"] = b.pad;
        break;
      case BlockKind::Fire:
        j["squeeze"] = b.squeeze;
        j["expand1"] = b.expand1;
        j["expand3"] = b.expand3;
        break;
      case BlockKind::MaxPool:
        j["kernel"] = b.kernel;
        j["stride"] = b.stride;
        break;
    }
    blocks.push_back(j);
  }
  return {{"input_size", c.input_size},
          {"backbone", blocks},
          {"dropout_ratio", c.dropout_ratio},
          {"scale_ev", c.scale_ev},
          {"uniform_im", c.uniform_im},
          {"head_init_std", c.head_init_std},
          {"backbone_init", c.backbone_init == BackboneInit::He ? "he" : "gaussian"},
          {"backbone_init_std", c.backbone_init_std}};
}

NetConfig config_from(const json& j) {
  NetConfig c;
  c.input_size = j.at("input_size").get<int>();
  for (const auto& b : j.at("backbone")) {
    BlockSpec s;
    s.kind = kind_from(b.at("kind").get<std::string>());
    switch (s.kind) {
      case BlockKind::Conv:
        s = BlockSpec::conv(b.at("out"), b.at("kernel"), b.at("stride"), b.value("pad", 0));
        break;
      case BlockKind::Fire:
        s = BlockSpec::fire(b.at("squeeze"), b.at("expand1"), b.at("expand3"));
        break;
      case BlockKind::MaxPool:
        s = BlockSpec::pool(b.at("kernel"), b.at("stride"));
        break;
    }
    c.backbone.push_back(s);
  }
  c.dropout_ratio = j.value("dropout_ratio", 0.5);
  c.scale_ev = j.value("scale_ev", 2.0);
  c.uniform_im = j.value("uniform_im", false);
  c.head_init_std = j.value("head_init_std", 0.01);
  c.backbone_init = j.value("backbone_init", std::string("he")) == "gaussian" ? BackboneInit::Gaussian : BackboneInit::He;
  c.backbone_init_std = j.value("backbone_init_std", 0.01);
  return c;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw std::runtime_error("model file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

void put_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
  for (double d : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

Tensor get_tensor(const std::vector<std::uint8_t>& in, std::size_t& pos, const Shape& shape) {
  Tensor t(shape);
  for (auto& d : t.data()) d = std::bit_cast<double>(get_u64(in, pos));
  return t;
}

}  // namespace

NetConfig NetConfig::desk(int input_size) {
  NetConfig c;
  c.input_size = input_size;
  c.backbone = {BlockSpec::conv(16, 3, 2), BlockSpec::pool(3, 2), BlockSpec::fire(8, 16, 16),
                BlockSpec::pool(3, 2), BlockSpec::fire(16, 32, 32), BlockSpec::pool(3, 2),
                BlockSpec::fire(16, 32, 32)};
  return c;
}

NetConfig NetConfig::full_scale(int input_size) {
  NetConfig c;
  c.input_size = input_size;
  c.backbone = {BlockSpec::conv(64, 3, 2),       BlockSpec::pool(3, 2),         BlockSpec::fire(16, 64, 64),
                BlockSpec::fire(16, 64, 64),     BlockSpec::pool(3, 2),         BlockSpec::fire(32, 128, 128),
                BlockSpec::fire(32, 128, 128),   BlockSpec::pool(3, 2),         BlockSpec::fire(48, 192, 192),
                BlockSpec::fire(48, 192, 192)};
  return c;
}

int NetConfig::head_channels() const {
  int ch = 3;
  for (const auto& b : backbone) {
    if (b.kind == BlockKind::Conv) ch = b.out_channels;
    if (b.kind == BlockKind::Fire) ch = b.expand1 + b.expand3;
  }
  return ch;
}

std::pair<int, int> NetConfig::map_size() const {
  int s = input_size;
  for (const auto& b : backbone) {
    if (b.kind == BlockKind::Conv) s = window_out(s, b.kernel, b.stride, b.pad);
    if (b.kind == BlockKind::MaxPool) s = b.kernel > s ? 0 : window_out(s, b.kernel, b.stride, 0);
    if (s < 1) return {0, 0};
  }
  return {s, s};
}

void NetConfig::validate() const {
  if (input_size < 1) throw std::invalid_argument("config: input_size must be positive");
  if (!(scale_ev > 0.0)) throw std::invalid_argument("config: scale_ev must be positive");
  if (!(dropout_ratio >= 0.0 && dropout_ratio < 1.0)) throw std::invalid_argument("config: dropout_ratio must be in [0,1)");
  for (const auto& b : backbone) {
    const bool bad = (b.kind == BlockKind::Conv && (b.out_channels < 1 || b.kernel < 1 || b.stride < 1)) ||
                     (b.kind == BlockKind::Fire && (b.squeeze < 1 || b.expand1 < 0 || b.expand3 < 0 ||
                                                    b.expand1 + b.expand3 < 1)) ||
                     (b.kind == BlockKind::MaxPool && (b.kernel < 1 || b.stride < 1));
    if (bad) throw std::invalid_argument("config: invalid block spec");
  }
  const auto [h, w] = map_size();
  if (h < 1 || w < 1) {
    throw std::invalid_argument("config: input " + std::to_string(input_size) + " yields a feature map smaller than 1x1");
  }
}

std::string config_to_json(const NetConfig& config) { return config_json(config).dump(); }
NetConfig config_from_json(const std::string& text) { return config_from(json::parse(text)); }

Model build_network(const NetConfig& config, Rng& init_rng) {
  config.validate();
  Model m{config, {}};
  int ch = 3;
  auto backbone_std = [&](int fan_in) {
    return config.backbone_init == BackboneInit::He ? std::sqrt(2.0 / fan_in) : config.backbone_init_std;
  };
  for (std::size_t i = 0; i < config.backbone.size(); ++i) {
    const auto& b = config.backbone[i];
    const std::string p = block_prefix(i);
    switch (b.kind) {
      case BlockKind::Conv:
        add_conv(m.params, p + ".conv", b.out_channels, ch, b.kernel, backbone_std(ch * b.kernel * b.kernel), init_rng);
        ch = b.out_channels;
        break;
      case BlockKind::Fire:
        add_conv(m.params, p + ".squeeze", b.squeeze, ch, 1, backbone_std(ch), init_rng);
        add_conv(m.params, p + ".expand1", b.expand1, b.squeeze, 1, backbone_std(b.squeeze), init_rng);
        add_conv(m.params, p + ".expand3", b.expand3, b.squeeze, 3, backbone_std(9 * b.squeeze), init_rng);
        ch = b.expand1 + b.expand3;
        break;
      case BlockKind::MaxPool:
        break;
    }
  }
  add_conv(m.params, "head.em", 1, ch, 1, config.head_init_std, init_rng);
  if (!config.uniform_im) add_conv(m.params, "head.im", 1, ch, 1, config.head_init_std, init_rng);
  return m;
}

ForwardVars forward_graph(Graph& g, const Model& model, const Tensor& image, Mode mode, Rng& rng) {
  const NetConfig& cfg = model.config;
  const auto s = static_cast<std::size_t>(cfg.input_size);
  if (image.shape() != Shape{3, s, s}) {
    throw std::invalid_argument("forward: expected input " + shape_str({3, s, s}) + ", got " + shape_str(image.shape()));
  }
  const ParamSet& ps = model.params;
  Var x = g.input(image);
  for (std::size_t i = 0; i < cfg.backbone.size(); ++i) {
    const auto& b = cfg.backbone[i];
    const std::string p = block_prefix(i);
    switch (b.kind) {
      case BlockKind::Conv:
        x = activation(conv_layer(g, ps, p + ".conv", x, b.stride, b.pad), Activation::Relu);
        break;
      case BlockKind::Fire: {
        Var sq = activation(conv_layer(g, ps, p + ".squeeze", x, 1, 0), Activation::Relu);
        Var e1 = activation(conv_layer(g, ps, p + ".expand1", sq, 1, 0), Activation::Relu);
        Var e3 = activation(conv_layer(g, ps, p + ".expand3", sq, 1, 1), Activation::Relu);
        x = concat_channels(e1, e3);
        break;
      }
      case BlockKind::MaxPool:
        x = maxpool2d(x, b.kernel, b.stride);
        break;
    }
  }
  x = dropout(x, cfg.dropout_ratio, mode, rng);
  Var em = activation(conv_layer(g, ps, "head.em", x, 1, 0), Activation::Tanh);
  Var im;
  if (cfg.uniform_im) {
    im = g.input(Tensor(em.shape(), 1.0));
  } else {
    im = activation(conv_layer(g, ps, "head.im", x, 1, 0), Activation::Sigmoid);
  }
  Var delta = global_avg_pool(elementwise_mul(em, im));
  return {delta, em, im};
}

double aggregate_maps(const Tensor& em, const Tensor& im) {
  if (em.shape() != im.shape()) {
    throw std::invalid_argument("aggregate_maps: shape mismatch " + shape_str(em.shape()) + " vs " + shape_str(im.shape()));
  }
  if (em.size() == 0) throw std::invalid_argument("aggregate_maps: empty maps");
  double s = 0.0;
  for (std::size_t i = 0; i < em.size(); ++i) s += em[i] * im[i];
  return s / static_cast<double>(em.size());
}

Prediction forward(const Model& model, const ImagePlane& image, Mode mode, Rng& rng) {
  if (image.space != ColorSpace::Encoded) throw std::invalid_argument("forward: image must be encoded");
  Graph g;
  ForwardVars fv = forward_graph(g, model, image.to_tensor(), mode, rng);
  const auto& es = fv.em.shape();
  Prediction p;
  p.delta_ev_norm = fv.delta_ev_norm.value().item();
  p.maps.em = fv.em.value().reshaped({es[1], es[2]});
  p.maps.im = fv.im.value().reshaped({es[1], es[2]});
  return p;
}

Prediction forward_eval(const Model& model, const ImagePlane& image) {
  Rng unused(0);
  return forward(model, image, Mode::Eval, unused);
}

double predict_delta_ev(const Model& model, const ImagePlane& image) {
  return forward_eval(model, image).delta_ev_norm * model.config.scale_ev;
}

ImagePlane prepare_input(const NetConfig& config, const ImagePlane& image) {
  return resize_bilinear(image, config.input_size, config.input_size);
}

std::vector<std::uint8_t> serialize_model(const Model& model) {
  json manifest = json::array();
  for (const auto& [name, slot] : model.params) {
    manifest.push_back({{"name", name},
                        {"shape", slot.value.shape()},
                        {"momentum", !slot.momentum.empty()},
                        {"adam", !slot.adam_m.empty()},
                        {"adam_step", slot.adam_step}});
  }
  const std::string header =
      json{{"format_version", kFormatVersion}, {"config", config_json(model.config)}, {"params", manifest}}.dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& [_, slot] : model.params) {
    put_tensor(out, slot.value);
    if (!slot.momentum.empty()) put_tensor(out, slot.momentum);
    if (!slot.adam_m.empty()) {
      put_tensor(out, slot.adam_m);
      put_tensor(out, slot.adam_v);
    }
  }
  return out;
}

Model deserialize_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw std::runtime_error("model file: bad magic (expected AEMETER1)");
  }
  std::size_t pos = 8;
  const std::uint64_t hlen = get_u64(bytes, pos);
  if (pos + hlen > bytes.size()) throw std::runtime_error("model file truncated in header");
  json header;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + hlen));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("model file: corrupt header: ") + e.what());
  }
  pos += hlen;
  const int version = header.value("format_version", -1);
  if (version != kFormatVersion) {
    throw std::runtime_error("model file: unsupported format version " + std::to_string(version));
  }
  Model m;
  m.config = config_from(header.at("config"));
  for (const auto& p : header.at("params")) {
    const std::string name = p.at("name");
    const Shape shape = p.at("shape").get<Shape>();
    m.params.add(name, get_tensor(bytes, pos, shape));
    ParamSlot& slot = m.params.slot(name);
    if (p.at("momentum").get<bool>()) slot.momentum = get_tensor(bytes, pos, shape);
    if (p.at("adam").get<bool>()) {
      slot.adam_m = get_tensor(bytes, pos, shape);
      slot.adam_v = get_tensor(bytes, pos, shape);
    }
    slot.adam_step = p.at("adam_step").get<std::uint64_t>();
  }
  if (pos != bytes.size()) throw std::runtime_error("model file: trailing bytes after payload");
  return m;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file_bytes(path)); }

Model load_model(const std::filesystem::path& path, const NetConfig& expected) {
  Model m = load_model(path);
  if (!(m.config == expected)) {
    throw std::runtime_error("model file: config echo mismatch (file input_size " + std::to_string(m.config.input_size) +
                             ", expected " + std::to_string(expected.input_size) + ")");
  }
  return m;
}

std::pair<ImagePlane, ImagePlane> export_maps(const MeteringMaps& maps, int target_size) {
  if (maps.em.shape() != maps.im.shape() || maps.em.rank() != 2) {
    throw std::invalid_argument("export_maps: maps must share a 2-D shape");
  }
  const int h = static_cast<int>(maps.em.dim(0));
  const int w = static_cast<int>(maps.em.dim(1));
  ImagePlane em_vis(target_size, target_size, ColorSpace::Encoded);
  ImagePlane im_vis(target_size, target_size, ColorSpace::Encoded);
  for (int y = 0; y < target_size; ++y) {
    const int sy = std::min(h - 1, y * h / target_size);
    for (int x = 0; x < target_size; ++x) {
      const int sx = std::min(w - 1, x * w / target_size);
      const std::size_t i = static_cast<std::size_t>(sy) * w + sx;
      const double e = std::clamp(maps.em[i], -1.0, 1.0);
      em_vis.at(0, y, x) = e < 0.0 ? -e : 0.0;
      em_vis.at(1, y, x) = e > 0.0 ? e : 0.0;
      em_vis.at(2, y, x) = 0.0;
      const double v = std::clamp(maps.im[i], 0.0, 1.0);
      for (int c = 0; c < 3; ++c) im_vis.at(c, y, x) = v;
    }
  }
  return {em_vis, im_vis};
}

}  // namespace aemeter
