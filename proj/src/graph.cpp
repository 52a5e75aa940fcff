#include "aemeter/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aemeter {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

void require_rank(const std::string& op, const Tensor& t, std::size_t rank, const char* name) {
  if (t.rank() != rank) {
    shape_error(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

Graph& same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) throw std::invalid_argument(std::string(op) + ": operands belong to different graphs");
  return a.graph();
}

struct ConvGeom {
  int cin, h, w, cout, kh, kw, ho, wo;
};

ConvGeom conv_geom(const Tensor& x, const Tensor& w, int stride, int pad) {
  ConvGeom g{};
  g.cin = static_cast<int>(x.dim(0));
  g.h = static_cast<int>(x.dim(1));
  g.w = static_cast<int>(x.dim(2));
  g.cout = static_cast<int>(w.dim(0));
  g.kh = static_cast<int>(w.dim(2));
  g.kw = static_cast<int>(w.dim(3));
  g.ho = window_out(g.h, g.kh, stride, pad);
  g.wo = window_out(g.w, g.kw, stride, pad);
  return g;
}

bool is_pointwise(const ConvGeom& g, int stride, int pad) { return g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0; }

// cols[(c*kh+i)*kw+j][oy*wo+ox] = x[c][oy*s+i-p][ox*s+j-p] (zero outside)
void im2col(const double* x, const ConvGeom& g, int stride, int pad, double* cols) {
  const int p = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        double* row = cols + static_cast<std::ptrdiff_t>((c * g.kh + i) * g.kw + j) * p;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int y = oy * stride + i - pad;
          double* out = row + oy * g.wo;
          if (y < 0 || y >= g.h) {
            for (int ox = 0; ox < g.wo; ++ox) out[ox] = 0.0;
            continue;
          }
          const double* src = x + (static_cast<std::ptrdiff_t>(c) * g.h + y) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int xx = ox * stride + j - pad;
            out[ox] = (xx >= 0 && xx < g.w) ? src[xx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, int stride, int pad, double* dx) {
  const int p = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const double* row = cols + static_cast<std::ptrdiff_t>((c * g.kh + i) * g.kw + j) * p;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int y = oy * stride + i - pad;
          if (y < 0 || y >= g.h) continue;
          double* dst = dx + (static_cast<std::ptrdiff_t>(c) * g.h + y) * g.w;
          const double* in = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int xx = ox * stride + j - pad;
            if (xx >= 0 && xx < g.w) dst[xx] += in[ox];
          }
        }
      }
    }
  }
}

double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::Conv2d: return "conv2d";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::MaxPool2d: return "maxpool2d";
    case Op::ConcatChannels: return "concat_channels";
    case Op::Mul: return "elementwise_mul";
    case Op::Add: return "add";
    case Op::GlobalAvgPool: return "global_avg_pool";
    case Op::Dropout: return "dropout";
    case Op::Scale: return "scale";
    case Op::Square: return "square";
    case Op::Sum: return "sum";
    case Op::Reshape: return "reshape";
  }
  return "?";
}

int window_out(int in, int k, int stride, int pad) {
  if (stride < 1) throw std::invalid_argument("window: stride must be >= 1");
  const int span = in + 2 * pad - k;
  if (span < 0) return 0;
  return span / stride + 1;
}

const Tensor& Var::value() const { return graph_->value(id_); }

std::uint64_t Graph::kink_signature() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) { h = (h ^ v) * 1099511628211ull; };
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.op == Op::Relu) {
      mix(id);
      for (double v : n.value.vec()) mix(v > 0.0);
    } else if (n.op == Op::MaxPool2d) {
      mix(id);
      for (auto a : n.arg) mix(a);
    }
  }
  return h;
}

Var Graph::push(Node node) {
  for (auto in : node.inputs) {
    if (in >= nodes_.size()) throw std::logic_error("graph: input id out of range");
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::input(Tensor value) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::param(const ParamSet& params, const std::string& name) {
  Node n;
  n.op = Op::Param;
  n.value = params.value(name);
  n.requires_grad = true;
  n.param = name;
  return push(std::move(n));
}

Var conv2d(Var input, Var weight, Var bias, int stride, int pad) {
  Graph& g = same_graph(input, weight, "conv2d");
  same_graph(input, bias, "conv2d");
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  require_rank("conv2d", x, 3, "input");
  require_rank("conv2d", w, 4, "weight");
  require_rank("conv2d", b, 1, "bias");
  if (stride < 1) shape_error("conv2d", "stride must be >= 1");
  if (pad < 0) shape_error("conv2d", "pad must be >= 0");
  if (w.dim(1) != x.dim(0)) {
    shape_error("conv2d", "weight in-channels (dim 1) = " + std::to_string(w.dim(1)) +
                              " does not match input channels (dim 0) = " + std::to_string(x.dim(0)));
  }
  if (b.dim(0) != w.dim(0)) {
    shape_error("conv2d", "bias length " + std::to_string(b.dim(0)) + " does not match out-channels " +
                              std::to_string(w.dim(0)));
  }
  if (static_cast<int>(w.dim(2)) > static_cast<int>(x.dim(1)) + 2 * pad) {
    shape_error("conv2d", "kernel height " + std::to_string(w.dim(2)) + " exceeds padded input height " +
                              std::to_string(x.dim(1) + 2 * pad));
  }
  if (static_cast<int>(w.dim(3)) > static_cast<int>(x.dim(2)) + 2 * pad) {
    shape_error("conv2d", "kernel width " + std::to_string(w.dim(3)) + " exceeds padded input width " +
                              std::to_string(x.dim(2) + 2 * pad));
  }
  const ConvGeom geo = conv_geom(x, w, stride, pad);
  const int k = geo.cin * geo.kh * geo.kw;
  const int p = geo.ho * geo.wo;

  Graph::Node n;
  n.op = Op::Conv2d;
  n.inputs = {input.id(), weight.id(), bias.id()};
  n.stride = stride;
  n.pad = pad;
  n.requires_grad = g.node(input.id()).requires_grad || g.node(weight.id()).requires_grad ||
                    g.node(bias.id()).requires_grad;
  n.value = Tensor({static_cast<std::size_t>(geo.cout), static_cast<std::size_t>(geo.ho),
                    static_cast<std::size_t>(geo.wo)});

  const double* cols = x.data().data();
  if (!is_pointwise(geo, stride, pad)) {
    n.saved.resize(static_cast<std::size_t>(k) * p);
    im2col(x.data().data(), geo, stride, pad, n.saved.data());
    cols = n.saved.data();
  }
  CMapMat wm(w.data().data(), geo.cout, k);
  CMapMat cm(cols, k, p);
  MapMat out(n.value.data().data(), geo.cout, p);
  out.noalias() = wm * cm;
  for (int o = 0; o < geo.cout; ++o) out.row(o).array() += b[o];
  return g.push(std::move(n));
}

Var activation(Var input, Activation kind) {
  Graph& g = input.graph();
  const Tensor& x = input.value();
  Graph::Node n;
  n.inputs = {input.id()};
  n.requires_grad = g.node(input.id()).requires_grad;
  n.value = Tensor(x.shape());
  auto out = n.value.data();
  auto in = x.data();
  switch (kind) {
    case Activation::Tanh:
      n.op = Op::Tanh;
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
      break;
    case Activation::Sigmoid:
      n.op = Op::Sigmoid;
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = sigmoid(in[i]);
      break;
    case Activation::Relu:
      n.op = Op::Relu;
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
  }
  return g.push(std::move(n));
}

Var maxpool2d(Var input, int k, int stride) {
  Graph& g = input.graph();
  const Tensor& x = input.value();
  require_rank("maxpool2d", x, 3, "input");
  if (k < 1 || stride < 1) shape_error("maxpool2d", "window and stride must be >= 1");
  const int c = static_cast<int>(x.dim(0));
  const int h = static_cast<int>(x.dim(1));
  const int w = static_cast<int>(x.dim(2));
  if (k > h || k > w) {
    shape_error("maxpool2d", "window " + std::to_string(k) + " larger than input " + shape_str(x.shape()));
  }
  const int ho = window_out(h, k, stride, 0);
  const int wo = window_out(w, k, stride, 0);
  Graph::Node n;
  n.op = Op::MaxPool2d;
  n.inputs = {input.id()};
  n.kernel = k;
  n.stride = stride;
  n.requires_grad = g.node(input.id()).requires_grad;
  n.value = Tensor({static_cast<std::size_t>(c), static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
  n.arg.resize(n.value.size());
  const double* xs = x.data().data();
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch) {
    const std::size_t plane = static_cast<std::size_t>(ch) * h * w;
    for (int oy = 0; oy < ho; ++oy) {
      const std::size_t row0 = plane + static_cast<std::size_t>(oy) * stride * w;
      for (int ox = 0; ox < wo; ++ox, ++o) {
        std::size_t best = row0 + static_cast<std::size_t>(ox) * stride;
        double bv = xs[best];
        for (int i = 0; i < k; ++i) {
          const std::size_t base = row0 + static_cast<std::size_t>(i) * w + static_cast<std::size_t>(ox) * stride;
          for (int j = 0; j < k; ++j) {
            if (xs[base + j] > bv) {  // strict: first occurrence wins ties
              bv = xs[base + j];
              best = base + j;
            }
          }
        }
        n.value[o] = bv;
        n.arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return g.push(std::move(n));
}

Var concat_channels(Var a, Var b) {
  Graph& g = same_graph(a, b, "concat_channels");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank("concat_channels", x, 3, "a");
  require_rank("concat_channels", y, 3, "b");
  if (x.dim(1) != y.dim(1) || x.dim(2) != y.dim(2)) {
    shape_error("concat_channels", "spatial mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  Graph::Node n;
  n.op = Op::ConcatChannels;
  n.inputs = {a.id(), b.id()};
  n.requires_grad = g.node(a.id()).requires_grad || g.node(b.id()).requires_grad;
  std::vector<double> data;
  data.reserve(x.size() + y.size());
  data.insert(data.end(), x.vec().begin(), x.vec().end());
  data.insert(data.end(), y.vec().begin(), y.vec().end());
  n.value = Tensor({x.dim(0) + y.dim(0), x.dim(1), x.dim(2)}, std::move(data));
  return g.push(std::move(n));
}

Var elementwise_mul(Var a, Var b) {
  Graph& g = same_graph(a, b, "elementwise_mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() != y.shape()) {
    shape_error("elementwise_mul", "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  Graph::Node n;
  n.op = Op::Mul;
  n.inputs = {a.id(), b.id()};
  n.requires_grad = g.node(a.id()).requires_grad || g.node(b.id()).requires_grad;
  n.value = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] * y[i];
  return g.push(std::move(n));
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() != y.shape()) shape_error("add", "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Graph::Node n;
  n.op = Op::Add;
  n.inputs = {a.id(), b.id()};
  n.requires_grad = g.node(a.id()).requires_grad || g.node(b.id()).requires_grad;
  n.value = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] + y[i];
  return g.push(std::move(n));
}

Var global_avg_pool(Var input) {
  Graph& g = input.graph();
  const Tensor& x = input.value();
  require_rank("global_avg_pool", x, 3, "input");
  const std::size_t c = x.dim(0);
  const std::size_t hw = x.dim(1) * x.dim(2);
  if (hw == 0) shape_error("global_avg_pool", "empty spatial extent");
  Graph::Node n;
  n.op = Op::GlobalAvgPool;
  n.inputs = {input.id()};
  n.requires_grad = g.node(input.id()).requires_grad;
  n.value = Tensor({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += x[ch * hw + i];
    n.value[ch] = s / static_cast<double>(hw);
  }
  return g.push(std::move(n));
}

Var dropout(Var input, double ratio, Mode mode, Rng& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("dropout: ratio must be in [0,1)");
  if (mode == Mode::Eval || ratio == 0.0) return input;
  Graph& g = input.graph();
  const Tensor& x = input.value();
  Graph::Node n;
  n.op = Op::Dropout;
  n.inputs = {input.id()};
  n.requires_grad = g.node(input.id()).requires_grad;
  n.factor = 1.0 / (1.0 - ratio);
  n.saved.resize(x.size());
  n.value = Tensor(x.shape());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    n.saved[i] = u(rng) < ratio ? 0.0 : n.factor;
    n.value[i] = x[i] * n.saved[i];
  }
  return g.push(std::move(n));
}

Var scale(Var input, double factor) {
  Graph& g = input.graph();
  const Tensor& x = input.value();
  Graph::Node n;
  n.op = Op::Scale;
  n.inputs = {input.id()};
  n.factor = factor;
  n.requires_grad = g.node(input.id()).requires_grad;
  n.value = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = factor * x[i];
  return g.push(std::move(n));
}

Var square(Var input) {
  Graph& g = input.graph();
  const Tensor& x = input.value();
  Graph::Node n;
  n.op = Op::Square;
  n.inputs = {input.id()};
  n.requires_grad = g.node(input.id()).requires_grad;
  n.value = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] * x[i];
  return g.push(std::move(n));
}

Var sum(Var input) {
  Graph& g = input.graph();
  const Tensor& x = input.value();
  Graph::Node n;
  n.op = Op::Sum;
  n.inputs = {input.id()};
  n.requires_grad = g.node(input.id()).requires_grad;
  double s = 0.0;
  for (double v : x.data()) s += v;
  n.value = Tensor::scalar(s);
  return g.push(std::move(n));
}

Var reshape(Var input, Shape shape) {
  Graph& g = input.graph();
  Graph::Node n;
  n.op = Op::Reshape;
  n.inputs = {input.id()};
  n.requires_grad = g.node(input.id()).requires_grad;
  n.value = input.value().reshaped(std::move(shape));
  return g.push(std::move(n));
}

GradMap Graph::backward(Var seed) {
  if (&seed.graph() != this) throw std::invalid_argument("backward: seed belongs to another graph");
  const Tensor& sv = nodes_.at(seed.id()).value;
  if (sv.size() != 1) throw std::invalid_argument("backward: seed must be scalar, got " + shape_str(sv.shape()));

  std::vector<Tensor> grads(nodes_.size());
  auto grad_of = [&](std::size_t id) -> Tensor& {
    Tensor& t = grads[id];
    if (t.shape() != nodes_[id].value.shape()) t = Tensor(nodes_[id].value.shape());
    return t;
  };
  auto wants = [&](std::size_t id) { return nodes_[id].requires_grad; };

  grads[seed.id()] = Tensor(sv.shape(), 1.0);
  GradMap out;
  last_visits_ = 0;

  for (std::size_t id = seed.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (grads[id].empty() || !n.requires_grad) continue;
    ++last_visits_;
    const Tensor& gy = grads[id];
    switch (n.op) {
      case Op::Input:
        break;
      case Op::Param: {
        auto it = out.find(n.param);
        if (it == out.end()) {
          out.emplace(n.param, gy);
        } else {
          for (std::size_t i = 0; i < gy.size(); ++i) it->second[i] += gy[i];
        }
        break;
      }
      case Op::Conv2d: {
        const std::size_t xi = n.inputs[0], wi = n.inputs[1], bi = n.inputs[2];
        const Tensor& x = nodes_[xi].value;
        const Tensor& w = nodes_[wi].value;
        const ConvGeom geo = conv_geom(x, w, n.stride, n.pad);
        const int k = geo.cin * geo.kh * geo.kw;
        const int p = geo.ho * geo.wo;
        const bool pointwise = is_pointwise(geo, n.stride, n.pad);
        const double* cols = pointwise ? x.data().data() : n.saved.data();
        const double* gyp = gy.data().data();
        CMapMat gm(gyp, geo.cout, p);
        if (wants(wi)) {
          MapMat dw(grad_of(wi).data().data(), geo.cout, k);
          dw.noalias() += gm * CMapMat(cols, k, p).transpose();
        }
        if (wants(bi)) {
          Tensor& db = grad_of(bi);
          // plain loop: Eigen's vectorized sum depends on buffer alignment
          for (int o = 0; o < geo.cout; ++o) {
            const double* row = gyp + static_cast<std::size_t>(o) * p;
            double s = 0.0;
            for (int j = 0; j < p; ++j) s += row[j];
            db[o] += s;
          }
        }
        if (wants(xi)) {
          CMapMat wm(w.data().data(), geo.cout, k);
          if (pointwise) {
            MapMat dx(grad_of(xi).data().data(), k, p);
            dx.noalias() += wm.transpose() * gm;
          } else {
            RowMat dcols = wm.transpose() * gm;
            col2im_add(dcols.data(), geo, n.stride, n.pad, grad_of(xi).data().data());
          }
        }
        break;
      }
      case Op::Tanh: {
        Tensor& dx = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i] * (1.0 - n.value[i] * n.value[i]);
        break;
      }
      case Op::Sigmoid: {
        Tensor& dx = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i] * n.value[i] * (1.0 - n.value[i]);
        break;
      }
      case Op::Relu: {
        Tensor& dx = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += n.value[i] > 0.0 ? gy[i] : 0.0;
        break;
      }
      case Op::MaxPool2d: {
        Tensor& dx = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) dx[n.arg[i]] += gy[i];
        break;
      }
      case Op::ConcatChannels: {
        const std::size_t ai = n.inputs[0], bi = n.inputs[1];
        const std::size_t na = nodes_[ai].value.size();
        if (wants(ai)) {
          Tensor& da = grad_of(ai);
          for (std::size_t i = 0; i < na; ++i) da[i] += gy[i];
        }
        if (wants(bi)) {
          Tensor& db = grad_of(bi);
          for (std::size_t i = 0; i < db.size(); ++i) db[i] += gy[na + i];
        }
        break;
      }
      case Op::Mul: {
        const std::size_t ai = n.inputs[0], bi = n.inputs[1];
        // Read both operand values before touching grads: a == b is legal.
        const Tensor& a = nodes_[ai].value;
        const Tensor& b = nodes_[bi].value;
        if (wants(ai)) {
          Tensor& da = grad_of(ai);
          for (std::size_t i = 0; i < gy.size(); ++i) da[i] += gy[i] * b[i];
        }
        if (wants(bi)) {
          Tensor& db = grad_of(bi);
          for (std::size_t i = 0; i < gy.size(); ++i) db[i] += gy[i] * a[i];
        }
        break;
      }
      case Op::Add: {
        for (std::size_t in : n.inputs) {
          if (!wants(in)) continue;
          Tensor& d = grad_of(in);
          for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i];
        }
        break;
      }
      case Op::GlobalAvgPool: {
        Tensor& dx = grad_of(n.inputs[0]);
        const std::size_t hw = dx.dim(1) * dx.dim(2);
        for (std::size_t ch = 0; ch < gy.size(); ++ch) {
          const double v = gy[ch] / static_cast<double>(hw);
          for (std::size_t i = 0; i < hw; ++i) dx[ch * hw + i] += v;
        }
        break;
      }
      case Op::Dropout: {
        Tensor& dx = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i] * n.saved[i];
        break;
      }
      case Op::Scale: {
        Tensor& dx = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i] * n.factor;
        break;
      }
      case Op::Square: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        Tensor& dx = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += 2.0 * x[i] * gy[i];
        break;
      }
      case Op::Sum: {
        Tensor& dx = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gy[0];
        break;
      }
      case Op::Reshape: {
        Tensor& dx = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i];
        break;
      }
    }
  }
  return out;
}

GradMap Graph::backward(Var seed, const ParamSet& params) {
  GradMap reached = backward(seed);
  GradMap out = zero_grads(params);
  for (auto& [name, g] : reached) {
    auto it = out.find(name);
    if (it == out.end()) throw std::invalid_argument("backward: graph parameter '" + name + "' not in parameter set");
    it->second = std::move(g);
  }
  return out;
}

}  // namespace aemeter
