#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "specstg/errors.hpp"

namespace specstg {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

namespace detail {
struct Node {
  Matrix value;
  Matrix grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

// Dense rank-2 tensor (vectors are n x 1, scalars 1 x 1) with an optional
// gradient. Copies share storage; use clone() for an independent leaf.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  std::vector<std::size_t> shape() const;
  std::size_t rows() const { return static_cast<std::size_t>(node_->value.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(node_->value.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(node_->value.size()); }

  const Matrix& value() const { return node_->value; }
  // Mutable access is for optimizers and loaders; it never goes through the tape.
  Matrix& mutable_value() { return node_->value; }

  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->value(r, c); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() != 0; }
  const Matrix& grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }
  void accumulate_grad(const Matrix& g);

  Tensor detach() const { return Tensor(node_->value, false); }
  Tensor clone() const { return Tensor(node_->value, node_->requires_grad); }

  const detail::Node* id() const { return node_.get(); }
  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  friend Tensor make_op(Matrix, const std::vector<Tensor>&, std::function<void(const Matrix&)>);
  enum CheckedTag { kChecked };
  Tensor(Matrix value, bool requires_grad, CheckedTag);

  std::shared_ptr<detail::Node> node_;
};

// Ordered record of differentiable operations on the current thread. Every
// entry's inputs were produced before it, so reverse iteration is a valid
// topological order for backpropagation.
class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix& out_grad)>;

  struct Entry {
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::shared_ptr<detail::Node> output;
    BackwardFn backward;
  };

  static Tape& current();

  void record(std::vector<std::shared_ptr<detail::Node>> inputs,
              std::shared_ptr<detail::Node> output, BackwardFn backward);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Runs reverse accumulation from `loss` and clears the tape.
  void backward(const Tensor& loss);

 private:
  std::vector<Entry> entries_;
};

bool grad_enabled();

// Disables recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op output and records it when any input tracks gradients.
// `backward` receives d(loss)/d(output) and must accumulate into inputs.
// Exposed so that tests and downstream layers can define custom ops.
Tensor make_op(Matrix value, const std::vector<Tensor>& inputs, Tape::BackwardFn backward);

// True when an op on these inputs would be recorded.
bool tracks(std::initializer_list<const Tensor*> inputs);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a: R x C, row: 1 x C; row is broadcast over the leading axis.
Tensor add_broadcast(const Tensor& a, const Tensor& row);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
// Concatenates along columns; all parts share the row count.
Tensor concat(const std::vector<Tensor>& parts);
// Column slice [begin, begin + count).
Tensor slice(const Tensor& x, std::size_t begin, std::size_t count);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
// Multiplies row i by weights[i]; weights are constants.
Tensor scale_rows(const Tensor& x, const Vector& weights);
// B x C -> (B * times) x C, each input row repeated `times` times in place.
Tensor repeat_rows(const Tensor& x, std::size_t times);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

inline void backward(const Tensor& loss) { Tape::current().backward(loss); }

// Named learnable tensors in a fixed insertion order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Matrix init);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return params_; }
  std::vector<std::pair<std::string, Tensor>>& items() { return params_; }

  void zero_grad();
  // Gives parameters that did not reach the loss an explicit zero gradient.
  void fill_missing_grads();
  // Overwrites values from `other`; names and shapes must match.
  void copy_values_from(const ParamStore& other);
  ParamStore deep_copy() const;

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(const ParamStore& params);

  // One bias-corrected update; every parameter must hold a gradient.
  // Gradients are zeroed afterwards.
  void step(ParamStore& params, const AdamConfig& cfg);
  long long steps_taken() const { return t_; }

 private:
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long long t_ = 0;
};

// Checkpoint: JSON container
// {"format": "specstg-checkpoint", "version": 1, "meta": {...},
//  "params": [{"name": ..., "shape": [r, c], "values": [...row-major...]}]}
void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& meta_json = "{}");
// Loads into an existing store whose names and shapes must match the file.
// Returns the stored meta object as a JSON string.
std::string load_checkpoint(const std::string& path, ParamStore& params);
// Meta object only, without touching parameters.
std::string read_checkpoint_meta(const std::string& path);

}  // namespace specstg
