#pragma once

// Tape-based reverse-mode differentiation over small dense matrices.
//
// A Graph records primitive ops in creation order. Every node's inputs
// precede it, so the tape itself is a topological order and backward()
// walks it in exact reverse. Batches are carried as rows; the only
// broadcasting is a 1xN row vector against an MxN matrix.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace safeloco::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ParamStore {
 public:
  // Throws ConfigError on duplicate names or non-finite values.
  void add(const std::string& name, Matrix value);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Matrix& at(const std::string& name) const;
  // Mutable access keeps the shape fixed; callers write through the block.
  Eigen::Ref<Matrix> mutable_at(const std::string& name);

  const std::map<std::string, Matrix>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  ParamStore zeros_like() const;
  // Names whose entries contain NaN or inf.
  std::vector<std::string> non_finite() const;

  std::uint64_t version = 0;

 private:
  std::map<std::string, Matrix> entries_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph {
 public:
  // The store is read at param() time; it must outlive the graph.
  explicit Graph(const ParamStore& params) : params_(&params) {}

  Var param(const std::string& name);
  Var constant(Matrix value);

  Var matmul(Var a, Var b);
  // Same shape, or b a 1xN row broadcast over the rows of a.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var neg(Var a) { return scale(a, -1.0); }

  Var tanh(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var square(Var a);
  // Elementwise max/min of two same-shape nodes. Ties route the gradient to a.
  Var maximum(Var a, Var b);
  Var minimum(Var a, Var b);
  Var max_scalar(Var a, double floor);
  // Gradient passes only where lo <= a <= hi.
  Var clamp(Var a, double lo, double hi);

  Var sum(Var a);       // -> 1x1
  Var mean(Var a);      // -> 1x1
  Var row_sum(Var a);   // MxN -> Mx1
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var a, int start, int width);

  const Matrix& value(Var v) const;
  double scalar(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Gradient of a 1x1 seed with respect to every parameter in the store.
  // Parameters the seed does not reach get zeros. Throws UsageError for a
  // non-scalar seed.
  ParamStore backward(Var seed) const;

 private:
  enum class Op {
    kParam, kConst, kMatmul, kAdd, kAddRow, kSub, kSubRow, kMul, kMulRow,
    kScale, kAddScalar, kTanh, kSigmoid, kExp, kLog, kSquare, kMax, kMin,
    kMaxScalar, kClamp, kSum, kMean, kRowSum, kConcat, kSlice,
  };
  struct Node {
    Op op;
    std::vector<int> inputs;
    Matrix value;
    double a = 0.0;
    double b = 0.0;
    int i0 = 0;
    std::string name;
    bool needs_grad = false;  // some parameter is upstream
  };

  Var push(Node node);
  const Node& node(Var v) const;
  void check_same_shape(Var a, Var b, const char* op) const;

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::map<std::string, int> param_nodes_;
};

}  // namespace safeloco::ad
