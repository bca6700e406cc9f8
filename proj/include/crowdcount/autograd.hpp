#pragma once

// Minimal reverse-mode differentiation over NCHW tensors. Each op computes its
// value eagerly and, when any input requires a gradient, records a closure
// that accumulates into the inputs' gradients during backward().

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "crowdcount/tensor.hpp"

namespace crowdcount::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  // Zero-filled tensor of the value's shape if no gradient has reached this node.
  Tensor grad() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor t);
Var leaf(Tensor t, bool requires_grad = true);

// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
void backward(const Var& loss);

// Running statistics are read in inference mode; in training mode they are
// blended into update_mean/update_var when BatchNormOptions::update_running.
struct BatchNormBuffers {
  const Tensor* running_mean = nullptr;
  const Tensor* running_var = nullptr;
  Tensor* update_mean = nullptr;
  Tensor* update_var = nullptr;
};

struct BatchNormOptions {
  bool training = false;
  bool update_running = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

// While a trace is active on the calling thread, relu() appends the sign
// pattern of its inputs to it, or, in replay mode, gates its inputs with a
// previously recorded pattern instead of their own signs. Finite-difference
// checks use this to detect, or step around, ReLU kinks.
struct ReluTrace {
  std::vector<uint8_t> pattern;
  bool replay = false;
  size_t cursor = 0;
};
void relu_trace_begin(ReluTrace& trace);
void relu_trace_end();

Var conv2d(const Var& x, const Var& weight, int64_t stride, int64_t pad);
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormBuffers buffers,
               const BatchNormOptions& opts);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var add_all(std::span<const Var> terms);
Var scale(const Var& x, double factor);
// x: N×C×H×W, mask: N×1×H×W broadcast over channels.
Var mul_channels(const Var& x, const Var& mask);
Var concat_channels(std::span<const Var> parts);
Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w);
Var avg_pool2(const Var& x);
Var flatten(const Var& x);
// x: N×F, weight: O×F, bias: O.
Var linear(const Var& x, const Var& weight, const Var& bias);
// Row `i` of the result is row `index[i]` of x along the batch axis.
Var gather_batch(const Var& x, std::span<const int64_t> index);
Var softmax_rows(const Var& logits);

// Scalar losses.
Var mse_loss(const Var& pred, std::span<const double> target);
Var class_cross_entropy(const Var& probs, std::span<const int> labels, double eps);
Var binary_cross_entropy(const Var& probs, const Tensor& target, double eps);

}  // namespace crowdcount::ag
