#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "aemeter/params.hpp"
#include "aemeter/tensor.hpp"

namespace aemeter {

using Rng = std::mt19937_64;

enum class Op {
  Input,
  Param,
  Conv2d,
  Tanh,
  Sigmoid,
  Relu,
  MaxPool2d,
  ConcatChannels,
  Mul,
  Add,
  GlobalAvgPool,
  Dropout,
  Scale,
  Square,
  Sum,
  Reshape,
};

const char* op_name(Op op);

enum class Activation { Tanh, Sigmoid, Relu };
enum class Mode { Train, Eval };

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Append-only tape of recorded operations. Node i only reads nodes < i, so
// the reverse sweep in backward() is a single pass over the tape.
class Graph {
 public:
  struct Node {
    Op op = Op::Input;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool requires_grad = false;
    std::string param;               // Op::Param
    int stride = 1;                  // conv / pool
    int pad = 0;                     // conv
    int kernel = 0;                  // pool
    double factor = 1.0;             // Scale, Dropout survivor scale
    std::vector<double> saved;       // conv im2col columns, dropout mask
    std::vector<std::uint32_t> arg;  // maxpool argmax
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor value);
  Var param(const ParamSet& params, const std::string& name);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }

  Var push(Node node);

  // Reverse sweep from a scalar seed. Returns d(seed)/d(param) for every
  // Param leaf reached; a parameter used by several leaves accumulates.
  GradMap backward(Var seed);
  // Same, but every parameter of `params` is present (zeros if unreachable).
  GradMap backward(Var seed, const ParamSet& params);

  // Number of nodes whose backward rule ran in the last backward() call.
  std::size_t last_backward_visits() const { return last_visits_; }

  // Hash of the piecewise-linear branch taken by every relu and maxpool node.
  // Two evaluations with equal signatures lie on the same smooth piece.
  std::uint64_t kink_signature() const;

 private:
  std::vector<Node> nodes_;
  std::size_t last_visits_ = 0;
};

Var conv2d(Var input, Var weight, Var bias, int stride, int pad);
Var activation(Var input, Activation kind);
Var maxpool2d(Var input, int k, int stride);
Var concat_channels(Var a, Var b);
Var elementwise_mul(Var a, Var b);
Var add(Var a, Var b);
Var global_avg_pool(Var input);
Var dropout(Var input, double ratio, Mode mode, Rng& rng);
Var scale(Var input, double factor);
Var square(Var input);
Var sum(Var input);
Var reshape(Var input, Shape shape);

// Output extent of a strided window along one axis.
int window_out(int in, int k, int stride, int pad);

}  // namespace aemeter
