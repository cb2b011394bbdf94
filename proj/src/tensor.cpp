#include "specstg/tensor.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace specstg {

namespace {

thread_local bool g_grad_enabled = true;

void require_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "," << m.cols() << "]";
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
}

void accumulate(detail::Node& node, const Matrix& g) {
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

}  // namespace

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  require_finite(value, "tensor construction");
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Matrix value, bool requires_grad, CheckedTag)
    : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return Tensor(Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)),
                requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m), requires_grad);
}

std::vector<std::size_t> Tensor::shape() const { return {rows(), cols()}; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(value()));
  return node_->value(0, 0);
}

const Matrix& Tensor::grad() const {
  if (!has_grad()) throw UsageError("tensor has no gradient");
  return node_->grad;
}

void Tensor::accumulate_grad(const Matrix& g) {
  if (g.rows() != node_->value.rows() || g.cols() != node_->value.cols()) {
    throw ShapeError("gradient shape " + shape_str(g) + " does not match " +
                     shape_str(node_->value));
  }
  if (node_->grad.size() == 0) {
    node_->grad = g;
  } else {
    node_->grad += g;
  }
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::vector<std::shared_ptr<detail::Node>> inputs,
                  std::shared_ptr<detail::Node> output, BackwardFn backward) {
  entries_.push_back({std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.value()));
  }
  auto loss_node = loss.node();
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const Entry& e) { return e.output == loss_node; });
  if (it == entries_.end()) {
    throw UsageError("backward() on a tensor that is not on the tape");
  }
  const std::size_t loss_index = static_cast<std::size_t>(it - entries_.begin());
  accumulate(*loss_node, Matrix::Ones(1, 1));
  for (std::size_t i = loss_index + 1; i-- > 0;) {
    Entry& e = entries_[i];
    if (e.output->grad.size() == 0) continue;
    Matrix out_grad = std::move(e.output->grad);
    e.output->grad.resize(0, 0);
    e.backward(out_grad);
  }
  entries_.clear();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool tracks(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const auto* in : inputs) {
    if (in->requires_grad()) return true;
  }
  return false;
}

Tensor make_op(Matrix value, const std::vector<Tensor>& inputs, Tape::BackwardFn backward) {
  if (!value.allFinite()) throw NumericError("non-finite value produced by forward op");
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  Tensor out(std::move(value), track, Tensor::kChecked);
  if (track) {
    std::vector<std::shared_ptr<detail::Node>> nodes;
    nodes.reserve(inputs.size());
    for (const auto& in : inputs) nodes.push_back(in.node());
    Tape::current().record(std::move(nodes), out.node(), std::move(backward));
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.value()) + " x " +
                     shape_str(b.value()));
  }
  auto an = a.node(), bn = b.node();
  Matrix out = a.value() * b.value();
  return make_op(std::move(out), {a, b}, [an, bn](const Matrix& g) {
    if (an->requires_grad) accumulate(*an, g * bn->value.transpose());
    if (bn->requires_grad) accumulate(*bn, an->value.transpose() * g);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto an = a.node(), bn = b.node();
  return make_op(a.value() + b.value(), {a, b}, [an, bn](const Matrix& g) {
    accumulate(*an, g);
    accumulate(*bn, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto an = a.node(), bn = b.node();
  return make_op(a.value() - b.value(), {a, b}, [an, bn](const Matrix& g) {
    accumulate(*an, g);
    if (bn->requires_grad) accumulate(*bn, -g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto an = a.node(), bn = b.node();
  Matrix out = a.value().cwiseProduct(b.value());
  return make_op(std::move(out), {a, b}, [an, bn](const Matrix& g) {
    if (an->requires_grad) accumulate(*an, g.cwiseProduct(bn->value));
    if (bn->requires_grad) accumulate(*bn, g.cwiseProduct(an->value));
  });
}

Tensor add_broadcast(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_broadcast: expected 1 x " + std::to_string(a.cols()) + " row, got " +
                     shape_str(row.value()));
  }
  auto an = a.node(), rn = row.node();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_op(std::move(out), {a, row}, [an, rn](const Matrix& g) {
    accumulate(*an, g);
    if (rn->requires_grad) accumulate(*rn, g.colwise().sum());
  });
}

Tensor sigmoid(const Tensor& x) {
  auto xn = x.node();
  // exp() saturates to inf/0 at the extremes, which gives exactly 0 or 1.
  Matrix out = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  Matrix saved = tracks({&x}) ? out : Matrix();
  return make_op(std::move(out), {x}, [xn, saved = std::move(saved)](const Matrix& g) {
    accumulate(*xn, g.cwiseProduct(saved.cwiseProduct((1.0 - saved.array()).matrix())));
  });
}

Tensor tanh(const Tensor& x) {
  auto xn = x.node();
  // tanh(v) = 1 - 2 / (exp(2v) + 1) keeps the vectorized exp path.
  Matrix out = (1.0 - 2.0 / ((2.0 * x.value().array()).exp() + 1.0)).matrix();
  Matrix saved = tracks({&x}) ? out : Matrix();
  return make_op(std::move(out), {x}, [xn, saved = std::move(saved)](const Matrix& g) {
    accumulate(*xn, g.cwiseProduct((1.0 - saved.array().square()).matrix()));
  });
}

Tensor relu(const Tensor& x) {
  auto xn = x.node();
  Matrix out = x.value().cwiseMax(0.0);
  return make_op(std::move(out), {x}, [xn](const Matrix& g) {
    Matrix mask = (xn->value.array() > 0.0).cast<double>().matrix();
    accumulate(*xn, g.cwiseProduct(mask));
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto rows = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat: row counts differ (" + std::to_string(rows) + " vs " +
                       std::to_string(p.rows()) + ")");
    }
    total += p.cols();
  }
  Matrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(total));
  std::vector<std::shared_ptr<detail::Node>> nodes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, static_cast<Eigen::Index>(p.cols())) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(off);
    off += static_cast<Eigen::Index>(p.cols());
  }
  return make_op(std::move(out), parts, [nodes, offsets](const Matrix& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i]->requires_grad) continue;
      accumulate(*nodes[i], g.middleCols(offsets[i], nodes[i]->value.cols()));
    }
  });
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > x.cols()) {
    throw ShapeError("slice: columns [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_str(x.value()));
  }
  auto xn = x.node();
  const auto b = static_cast<Eigen::Index>(begin), n = static_cast<Eigen::Index>(count);
  Matrix out = x.value().middleCols(b, n);
  return make_op(std::move(out), {x}, [xn, b, n](const Matrix& g) {
    Matrix full = Matrix::Zero(xn->value.rows(), xn->value.cols());
    full.middleCols(b, n) = g;
    accumulate(*xn, full);
  });
}

Tensor scale(const Tensor& x, double factor) {
  auto xn = x.node();
  return make_op(x.value() * factor, {x},
                 [xn, factor](const Matrix& g) { accumulate(*xn, g * factor); });
}

Tensor sum(const Tensor& x) {
  auto xn = x.node();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return make_op(std::move(out), {x}, [xn](const Matrix& g) {
    accumulate(*xn, Matrix::Constant(xn->value.rows(), xn->value.cols(), g(0, 0)));
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  auto pn = pred.node(), tn = target.node();
  Matrix diff = pred.value() - target.value();
  const double n = static_cast<double>(diff.size());
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return make_op(std::move(out), {pred, target},
                 [pn, tn, diff = std::move(diff), n](const Matrix& g) {
                   Matrix d = diff * (2.0 * g(0, 0) / n);
                   if (pn->requires_grad) accumulate(*pn, d);
                   if (tn->requires_grad) accumulate(*tn, -d);
                 });
}

Tensor scale_rows(const Tensor& x, const Vector& weights) {
  if (static_cast<std::size_t>(weights.size()) != x.rows()) {
    throw ShapeError("scale_rows: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(x.rows()) + " rows");
  }
  auto xn = x.node();
  Matrix out = weights.asDiagonal() * x.value();
  return make_op(std::move(out), {x},
                 [xn, weights](const Matrix& g) { accumulate(*xn, weights.asDiagonal() * g); });
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
  if (times == 0) throw ShapeError("repeat_rows: times must be positive");
  auto xn = x.node();
  const auto rows = static_cast<Eigen::Index>(x.rows());
  const auto reps = static_cast<Eigen::Index>(times);
  Matrix out(rows * reps, x.value().cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    out.middleRows(r * reps, reps).rowwise() = x.value().row(r);
  }
  return make_op(std::move(out), {x}, [xn, rows, reps](const Matrix& g) {
    Matrix acc(rows, g.cols());
    for (Eigen::Index r = 0; r < rows; ++r) acc.row(r) = g.middleRows(r * reps, reps).colwise().sum();
    accumulate(*xn, acc);
  });
}

Tensor& ParamStore::add(const std::string& name, Matrix init) {
  if (contains(name)) throw UsageError("duplicate parameter name: " + name);
  params_.emplace_back(name, Tensor(std::move(init), true));
  return params_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw UsageError("unknown parameter: " + name);
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw UsageError("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const auto& p) { return p.first == name; });
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void ParamStore::fill_missing_grads() {
  for (auto& [name, t] : params_) {
    if (!t.has_grad()) t.accumulate_grad(Matrix::Zero(t.value().rows(), t.value().cols()));
  }
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.params_.size() != params_.size()) throw UsageError("parameter sets differ in size");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& src = other.params_[i];
    auto& dst = params_[i];
    if (src.first != dst.first || src.second.rows() != dst.second.rows() ||
        src.second.cols() != dst.second.cols()) {
      throw UsageError("parameter mismatch at " + dst.first);
    }
    dst.second.mutable_value() = src.second.value();
  }
}

ParamStore ParamStore::deep_copy() const {
  ParamStore out;
  for (const auto& [name, t] : params_) out.add(name, t.value());
  return out;
}

Adam::Adam(const ParamStore& params) {
  for (const auto& [name, t] : params.items()) {
    m_.push_back(Matrix::Zero(t.value().rows(), t.value().cols()));
    v_.push_back(Matrix::Zero(t.value().rows(), t.value().cols()));
  }
}

void Adam::step(ParamStore& params, const AdamConfig& cfg) {
  auto& items = params.items();
  if (items.size() != m_.size()) throw UsageError("Adam state does not match parameter set");
  for (const auto& [name, t] : items) {
    if (!t.has_grad()) throw UsageError("Adam step: missing gradient for " + name);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& p = items[i].second;
    const Matrix& g = p.grad();
    m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * g;
    v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    auto mhat = (m_[i] / bc1).array();
    auto vhat = (v_[i] / bc2).array();
    p.mutable_value().array() -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    p.zero_grad();
  }
}

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& meta_json) {
  nlohmann::ordered_json doc;
  doc["format"] = "specstg-checkpoint";
  doc["version"] = 1;
  doc["meta"] = nlohmann::ordered_json::parse(meta_json);
  auto& arr = doc["params"] = nlohmann::ordered_json::array();
  for (const auto& [name, t] : params.items()) {
    nlohmann::ordered_json p;
    p["name"] = name;
    p["shape"] = {t.rows(), t.cols()};
    std::vector<double> vals(t.value().data(), t.value().data() + t.size());
    p["values"] = vals;
    arr.push_back(std::move(p));
  }
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write checkpoint: " + path);
  out << doc.dump() << "\n";
}

namespace {

nlohmann::ordered_json read_checkpoint_doc(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint " + path + ": " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != "specstg-checkpoint" ||
      doc.value("version", 0) != 1 || !doc.contains("params") || !doc.contains("meta")) {
    throw FormatError("unsupported checkpoint format in " + path);
  }
  return doc;
}

}  // namespace

std::string read_checkpoint_meta(const std::string& path) {
  return read_checkpoint_doc(path).at("meta").dump();
}

std::string load_checkpoint(const std::string& path, ParamStore& params) {
  const auto doc = read_checkpoint_doc(path);
  const auto& arr = doc.at("params");
  if (arr.size() != params.size()) {
    throw FormatError("checkpoint has " + std::to_string(arr.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (const auto& p : arr) {
    const auto name = p.at("name").get<std::string>();
    if (!params.contains(name)) throw FormatError("checkpoint tensor not in model: " + name);
    auto& t = params.get(name);
    const auto shape = p.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols()) {
      throw FormatError("checkpoint shape mismatch for " + name);
    }
    const auto vals = p.at("values").get<std::vector<double>>();
    if (vals.size() != t.size()) throw FormatError("checkpoint value count mismatch for " + name);
    std::copy(vals.begin(), vals.end(), t.mutable_value().data());
  }
  return doc.at("meta").dump();
}

}  // namespace specstg
