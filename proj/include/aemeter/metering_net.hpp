#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "aemeter/camera.hpp"
#include "aemeter/graph.hpp"
#include "aemeter/params.hpp"

namespace aemeter {

enum class BlockKind { Conv, Fire, MaxPool };

struct BlockSpec {
  BlockKind kind = BlockKind::Conv;
  // Conv: out_channels, kernel, stride, pad. Fire: squeeze / expand1 / expand3.
  // MaxPool: kernel, stride.
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 0;
  int squeeze = 0;
  int expand1 = 0;
  int expand3 = 0;

  static BlockSpec conv(int out, int k, int stride, int pad = 0) { return {BlockKind::Conv, out, k, stride, pad, 0, 0, 0}; }
  static BlockSpec fire(int s, int e1, int e3) { return {BlockKind::Fire, 0, 0, 1, 0, s, e1, e3}; }
  static BlockSpec pool(int k, int stride) { return {BlockKind::MaxPool, 0, k, stride, 0, 0, 0, 0}; }

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

enum class BackboneInit { He, Gaussian };

struct NetConfig {
  int input_size = 64;
  std::vector<BlockSpec> backbone;
  double dropout_ratio = 0.5;
  double scale_ev = 2.0;
  // Replace the importance map with a constant 1 (plain mean of the exposure map).
  bool uniform_im = false;
  double head_init_std = 0.01;
  BackboneInit backbone_init = BackboneInit::He;
  double backbone_init_std = 0.01;  // used when backbone_init == Gaussian

  // conv16/s2 -> pool -> fire(8,16,16) -> pool -> fire(16,32,32) -> pool -> fire(16,32,32)
  static NetConfig desk(int input_size = 64);
  // SqueezeNet v1.1 trimmed after fire7.
  static NetConfig full_scale(int input_size = 128);

  int head_channels() const;
  // Spatial size of the metering maps.
  std::pair<int, int> map_size() const;
  void validate() const;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

std::string config_to_json(const NetConfig& config);
NetConfig config_from_json(const std::string& text);

struct Model {
  NetConfig config;
  ParamSet params;

  friend bool operator==(const Model&, const Model&) = default;
};

// Conv weights of the backbone per config.backbone_init, head weights
// N(0, head_init_std^2), all biases zero.
Model build_network(const NetConfig& config, Rng& init_rng);

struct MeteringMaps {
  Tensor em;  // [H',W'] in [-1,1]
  Tensor im;  // [H',W'] in [0,1]
};

struct ForwardVars {
  Var delta_ev_norm;  // [1]
  Var em;             // [1,H',W']
  Var im;             // [1,H',W']
};

// Records the full network on `graph`. The image tensor is [3,S,S] in [0,1].
ForwardVars forward_graph(Graph& graph, const Model& model, const Tensor& image, Mode mode, Rng& rng);

struct Prediction {
  double delta_ev_norm = 0.0;
  MeteringMaps maps;
};

Prediction forward(const Model& model, const ImagePlane& image, Mode mode, Rng& rng);
Prediction forward_eval(const Model& model, const ImagePlane& image);

// Mean of em * im over all cells.
double aggregate_maps(const Tensor& em, const Tensor& im);

// Eval-mode prediction in EV units (delta_ev_norm * scale_ev).
double predict_delta_ev(const Model& model, const ImagePlane& image);

// Resizes to the network input if needed.
ImagePlane prepare_input(const NetConfig& config, const ImagePlane& image);

void save_model(const Model& model, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(const std::vector<std::uint8_t>& bytes);
Model load_model(const std::filesystem::path& path);
// Rejects a file whose config echo differs from `expected`.
Model load_model(const std::filesystem::path& path, const NetConfig& expected);

// Exposure map: green for positive, red for negative, black at zero.
// Importance map: gray level = value. Nearest-neighbour upsampling.
std::pair<ImagePlane, ImagePlane> export_maps(const MeteringMaps& maps, int target_size);

}  // namespace aemeter
