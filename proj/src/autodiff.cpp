#include "safeloco/autodiff.hpp"

#include <cmath>
#include <sstream>

#include "safeloco/errors.hpp"

namespace safeloco::ad {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

bool is_row_broadcast(const Matrix& a, const Matrix& b) {
  return b.rows() == 1 && b.cols() == a.cols() && a.rows() != 1;
}

}  // namespace

void ParamStore::add(const std::string& name, Matrix value) {
  if (entries_.count(name) != 0) throw ConfigError("duplicate parameter '" + name + "'");
  if (!value.allFinite()) throw ConfigError("non-finite initial value for '" + name + "'");
  entries_.emplace(name, std::move(value));
  ++version;
}

const Matrix& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Eigen::Ref<Matrix> ParamStore::mutable_at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : entries_) n += static_cast<std::size_t>(m.size());
  return n;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& [name, m] : entries_) out.entries_.emplace(name, Matrix::Zero(m.rows(), m.cols()));
  return out;
}

std::vector<std::string> ParamStore::non_finite() const {
  std::vector<std::string> bad;
  for (const auto& [name, m] : entries_)
    if (!m.allFinite()) bad.push_back(name);
  return bad;
}

Var Graph::push(Node node) {
  if (node.op == Op::kParam) {
    node.needs_grad = true;
  } else {
    for (int id : node.inputs) node.needs_grad = node.needs_grad || nodes_[static_cast<std::size_t>(id)].needs_grad;
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw UsageError("invalid graph variable");
  return nodes_[static_cast<std::size_t>(v.id)];
}

void Graph::check_same_shape(Var a, Var b, const char* op) const {
  const auto& x = node(a).value;
  const auto& y = node(b).value;
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(x) + " vs " + shape_str(y));
}

const Matrix& Graph::value(Var v) const { return node(v).value; }

double Graph::scalar(Var v) const {
  const auto& m = node(v).value;
  if (m.size() != 1) throw UsageError("scalar() on a " + shape_str(m) + " node");
  return m(0, 0);
}

Var Graph::param(const std::string& name) {
  // One node per name: repeated uses accumulate into the same adjoint.
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var{it->second};
  Node n{Op::kParam, {}, params_->at(name)};
  n.name = name;
  Var v = push(std::move(n));
  param_nodes_.emplace(name, v.id);
  return v;
}

Var Graph::constant(Matrix value) { return push(Node{Op::kConst, {}, std::move(value)}); }

Var Graph::matmul(Var a, Var b) {
  const auto& x = node(a).value;
  const auto& y = node(b).value;
  if (x.cols() != y.rows())
    throw ConfigError("matmul: shape mismatch " + shape_str(x) + " * " + shape_str(y));
  Matrix out = x * y;
  return push(Node{Op::kMatmul, {a.id, b.id}, std::move(out)});
}

Var Graph::add(Var a, Var b) {
  const auto& x = node(a).value;
  const auto& y = node(b).value;
  if (is_row_broadcast(x, y)) {
    Matrix out = x.rowwise() + y.row(0);
    return push(Node{Op::kAddRow, {a.id, b.id}, std::move(out)});
  }
  check_same_shape(a, b, "add");
  Matrix out = x + y;
  return push(Node{Op::kAdd, {a.id, b.id}, std::move(out)});
}

Var Graph::sub(Var a, Var b) {
  const auto& x = node(a).value;
  const auto& y = node(b).value;
  if (is_row_broadcast(x, y)) {
    Matrix out = x.rowwise() - y.row(0);
    return push(Node{Op::kSubRow, {a.id, b.id}, std::move(out)});
  }
  check_same_shape(a, b, "sub");
  Matrix out = x - y;
  return push(Node{Op::kSub, {a.id, b.id}, std::move(out)});
}

Var Graph::mul(Var a, Var b) {
  const auto& x = node(a).value;
  const auto& y = node(b).value;
  if (is_row_broadcast(x, y)) {
    Matrix out = x.array().rowwise() * y.row(0).array();
    return push(Node{Op::kMulRow, {a.id, b.id}, std::move(out)});
  }
  check_same_shape(a, b, "mul");
  Matrix out = x.cwiseProduct(y);
  return push(Node{Op::kMul, {a.id, b.id}, std::move(out)});
}

Var Graph::scale(Var a, double s) {
  Node n{Op::kScale, {a.id}, node(a).value * s};
  n.a = s;
  return push(std::move(n));
}

Var Graph::add_scalar(Var a, double s) {
  Node n{Op::kAddScalar, {a.id}, node(a).value.array() + s};
  n.a = s;
  return push(std::move(n));
}

Var Graph::tanh(Var a) { return push(Node{Op::kTanh, {a.id}, node(a).value.array().tanh()}); }

Var Graph::sigmoid(Var a) {
  Matrix out = node(a).value.unaryExpr([](double x) {
    // Split by sign so exp never overflows.
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return push(Node{Op::kSigmoid, {a.id}, std::move(out)});
}

Var Graph::exp(Var a) { return push(Node{Op::kExp, {a.id}, node(a).value.array().exp()}); }

Var Graph::log(Var a) { return push(Node{Op::kLog, {a.id}, node(a).value.array().log()}); }

Var Graph::square(Var a) { return push(Node{Op::kSquare, {a.id}, node(a).value.array().square()}); }

Var Graph::maximum(Var a, Var b) {
  check_same_shape(a, b, "maximum");
  return push(Node{Op::kMax, {a.id, b.id}, node(a).value.cwiseMax(node(b).value)});
}

Var Graph::minimum(Var a, Var b) {
  check_same_shape(a, b, "minimum");
  return push(Node{Op::kMin, {a.id, b.id}, node(a).value.cwiseMin(node(b).value)});
}

Var Graph::max_scalar(Var a, double floor) {
  Node n{Op::kMaxScalar, {a.id}, node(a).value.array().max(floor)};
  n.a = floor;
  return push(std::move(n));
}

Var Graph::clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw ConfigError("clamp: lo > hi");
  Node n{Op::kClamp, {a.id}, node(a).value.array().max(lo).min(hi)};
  n.a = lo;
  n.b = hi;
  return push(std::move(n));
}

Var Graph::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = node(a).value.sum();
  return push(Node{Op::kSum, {a.id}, std::move(out)});
}

Var Graph::mean(Var a) {
  const auto& x = node(a).value;
  if (x.size() == 0) throw UsageError("mean of an empty node");
  Matrix out(1, 1);
  out(0, 0) = x.mean();
  return push(Node{Op::kMean, {a.id}, std::move(out)});
}

Var Graph::row_sum(Var a) {
  return push(Node{Op::kRowSum, {a.id}, node(a).value.rowwise().sum()});
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols of nothing");
  const auto rows = node(parts[0]).value.rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    const auto& m = node(p).value;
    if (m.rows() != rows)
      throw ConfigError("concat_cols: row mismatch " + shape_str(node(parts[0]).value) + " vs " + shape_str(m));
    cols += m.cols();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  Eigen::Index at = 0;
  for (Var p : parts) {
    const auto& m = node(p).value;
    out.middleCols(at, m.cols()) = m;
    at += m.cols();
    ids.push_back(p.id);
  }
  return push(Node{Op::kConcat, std::move(ids), std::move(out)});
}

Var Graph::slice_cols(Var a, int start, int width) {
  const auto& x = node(a).value;
  if (start < 0 || width < 0 || start + width > x.cols())
    throw ConfigError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(width) +
                      ") out of range for " + shape_str(x));
  Node n{Op::kSlice, {a.id}, x.middleCols(start, width)};
  n.i0 = start;
  return push(std::move(n));
}

ParamStore Graph::backward(Var seed) const {
  const auto& s = node(seed);
  if (s.value.size() != 1) throw UsageError("backward: seed must be scalar, got " + shape_str(s.value));

  std::vector<Matrix> adj(nodes_.size());
  auto wants = [&](int id) { return nodes_[static_cast<std::size_t>(id)].needs_grad; };
  auto acc = [&](int id, const auto& g) {
    if (!wants(id)) return;
    auto& slot = adj[static_cast<std::size_t>(id)];
    if (slot.size() == 0)
      slot = g;
    else
      slot += g;
  };
  adj[static_cast<std::size_t>(seed.id)] = Matrix::Ones(1, 1);

  for (int i = seed.id; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    const Matrix& g = adj[static_cast<std::size_t>(i)];
    if (g.size() == 0 || !n.needs_grad) continue;
    const auto in = [&](int k) -> const Matrix& { return nodes_[static_cast<std::size_t>(n.inputs[k])].value; };

    switch (n.op) {
      case Op::kParam:
      case Op::kConst:
        break;
      case Op::kMatmul:
        if (wants(n.inputs[0])) acc(n.inputs[0], Matrix(g * in(1).transpose()));
        if (wants(n.inputs[1])) acc(n.inputs[1], Matrix(in(0).transpose() * g));
        break;
      case Op::kAdd:
        if (wants(n.inputs[0])) acc(n.inputs[0], g);
        if (wants(n.inputs[1])) acc(n.inputs[1], g);
        break;
      case Op::kAddRow:
        if (wants(n.inputs[0])) acc(n.inputs[0], g);
        if (wants(n.inputs[1])) acc(n.inputs[1], Matrix(g.colwise().sum()));
        break;
      case Op::kSub:
        if (wants(n.inputs[0])) acc(n.inputs[0], g);
        if (wants(n.inputs[1])) acc(n.inputs[1], Matrix(-g));
        break;
      case Op::kSubRow:
        if (wants(n.inputs[0])) acc(n.inputs[0], g);
        if (wants(n.inputs[1])) acc(n.inputs[1], Matrix(-g.colwise().sum()));
        break;
      case Op::kMul:
        if (wants(n.inputs[0])) acc(n.inputs[0], Matrix(g.cwiseProduct(in(1))));
        if (wants(n.inputs[1])) acc(n.inputs[1], Matrix(g.cwiseProduct(in(0))));
        break;
      case Op::kMulRow: {
        Matrix ga = g.array().rowwise() * in(1).row(0).array();
        if (wants(n.inputs[0])) acc(n.inputs[0], ga);
        if (wants(n.inputs[1])) acc(n.inputs[1], Matrix(g.cwiseProduct(in(0)).colwise().sum()));
        break;
      }
      case Op::kScale:
        if (wants(n.inputs[0])) acc(n.inputs[0], Matrix(g * n.a));
        break;
      case Op::kAddScalar:
        if (wants(n.inputs[0])) acc(n.inputs[0], g);
        break;
      case Op::kTanh:
        if (wants(n.inputs[0])) acc(n.inputs[0], Matrix(g.array() * (1.0 - n.value.array().square())));
        break;
      case Op::kSigmoid:
        if (wants(n.inputs[0])) acc(n.inputs[0], Matrix(g.array() * n.value.array() * (1.0 - n.value.array())));
        break;
      case Op::kExp:
        if (wants(n.inputs[0])) acc(n.inputs[0], Matrix(g.cwiseProduct(n.value)));
        break;
      case Op::kLog:
        if (wants(n.inputs[0])) acc(n.inputs[0], Matrix(g.array() / in(0).array()));
        break;
      case Op::kSquare:
        if (wants(n.inputs[0])) acc(n.inputs[0], Matrix(2.0 * g.array() * in(0).array()));
        break;
      case Op::kMax:
      case Op::kMin: {
        const bool is_max = n.op == Op::kMax;
        Matrix ga(g.rows(), g.cols());
        Matrix gb(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r)
          for (Eigen::Index c = 0; c < g.cols(); ++c) {
            const double x = in(0)(r, c);
            const double y = in(1)(r, c);
            const bool pick_a = is_max ? x >= y : x <= y;
            ga(r, c) = pick_a ? g(r, c) : 0.0;
            gb(r, c) = pick_a ? 0.0 : g(r, c);
          }
        if (wants(n.inputs[0])) acc(n.inputs[0], ga);
        if (wants(n.inputs[1])) acc(n.inputs[1], gb);
        break;
      }
      case Op::kMaxScalar:
        if (wants(n.inputs[0])) acc(n.inputs[0], Matrix((in(0).array() >= n.a).select(g, 0.0)));
        break;
      case Op::kClamp:
        if (wants(n.inputs[0])) acc(n.inputs[0], Matrix((in(0).array() >= n.a && in(0).array() <= n.b).select(g, 0.0)));
        break;
      case Op::kSum:
        if (wants(n.inputs[0])) acc(n.inputs[0], Matrix::Constant(in(0).rows(), in(0).cols(), g(0, 0)));
        break;
      case Op::kMean:
        if (wants(n.inputs[0])) acc(n.inputs[0],
            Matrix::Constant(in(0).rows(), in(0).cols(), g(0, 0) / static_cast<double>(in(0).size())));
        break;
      case Op::kRowSum:
        if (wants(n.inputs[0])) acc(n.inputs[0], Matrix(g.col(0).replicate(1, in(0).cols())));
        break;
      case Op::kConcat: {
        Eigen::Index at = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const auto cols = in(static_cast<int>(k)).cols();
          if (wants(n.inputs[k])) acc(n.inputs[k], Matrix(g.middleCols(at, cols)));
          at += cols;
        }
        break;
      }
      case Op::kSlice: {
        if (!wants(n.inputs[0])) break;
        Matrix full = Matrix::Zero(in(0).rows(), in(0).cols());
        full.middleCols(n.i0, n.value.cols()) = g;
        if (wants(n.inputs[0])) acc(n.inputs[0], full);
        break;
      }
    }
  }

  ParamStore grads = params_->zeros_like();
  for (const auto& [name, id] : param_nodes_) {
    const auto& g = adj[static_cast<std::size_t>(id)];
    if (g.size() != 0) grads.mutable_at(name) = g;
  }
  return grads;
}

}  // namespace safeloco::ad
