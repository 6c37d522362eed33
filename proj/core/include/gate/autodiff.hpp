#pragma once

// Dense rank-2 reverse-mode differentiation.
//
// A Tape records every forward operation together with a closure that
// propagates the output gradient into its inputs. Values are cheap handles
// (tape pointer + node id); all storage lives on the tape. Parameters are
// owned by the model and bound to a tape with Tape::param(), after which
// Tape::backward() accumulates into Parameter::grad.
//
// Shapes are always (rows x cols). Scalars are 1x1, vectors are 1xn, a
// batch of vectors is stacked row-wise.

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gate::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Trainable tensor owned by a model. `touched` is set by backward() when
/// any gradient reached this parameter since the last zero_grad().
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool touched = false;

  Parameter() = default;
  Parameter(std::string n, Matrix v);

  void zero_grad();
  Shape shape() const { return {static_cast<std::size_t>(value.rows()),
                                static_cast<std::size_t>(value.cols())}; }
};

class Tape;

/// References returned by data() and grad() are invalidated by any further
/// recording on the same tape.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& data() const;
  /// Gradient after backward(); zero-sized if nothing reached this node.
  const Matrix& grad() const;
  Shape shape() const;
  std::size_t rows() const { return shape().rows; }
  std::size_t cols() const { return shape().cols; }
  double item() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Untracked input; never receives a gradient.
  Value constant(Matrix m);
  /// Tracked leaf; its gradient is readable through Value::grad().
  Value variable(Matrix m);
  /// Tracked leaf bound to a model parameter.
  Value param(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse order.
  void backward(Value loss);

  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Value record(Matrix value, std::vector<std::size_t> inputs, BackwardFn fn);
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Adds `g` into the gradient of node `id` if that node is tracked.
  void accumulate(std::size_t id, const Matrix& g);
  template <typename Fn>
  void accumulate_with(std::size_t id, Fn&& fn) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    fn(n.grad);
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---- operations ------------------------------------------------------------

Value matmul(Value a, Value b);
Value add(Value a, Value b);
Value sub(Value a, Value b);
/// a[m x n] + bias[1 x n], bias broadcast over rows.
Value add_bias(Value a, Value bias);
Value scale(Value a, double c);
Value relu(Value a);
/// Column-wise concatenation: [m x p] ++ [m x q] -> [m x (p+q)].
Value concat(Value a, Value b);
/// Row-wise stacking of equal-width blocks.
Value vstack(std::span<const Value> parts);
/// Column sums: [m x n] -> [1 x n].
Value reduce_sum_rows(Value a);
/// Sum of all entries -> scalar.
Value sum(Value a);
/// (1/N) sum (a_i - b_i)^2 over all N entries -> scalar.
Value mse(Value a, Value b);
/// Euclidean norm of every row: [m x n] -> [m x 1]. Gradient of a zero row is zero.
Value row_norms(Value a);
/// out[k] = a[index[k]].
Value gather_rows(Value a, std::span<const int> index);
/// out[index[k]] += a[k], out has `out_rows` rows.
Value scatter_add_rows(Value a, std::span<const int> index, std::size_t out_rows);
/// Rows [begin, begin+count).
Value slice_rows(Value a, std::size_t begin, std::size_t count);
/// Inverted dropout. Identity when !training or rate == 0.
Value dropout(Value a, double rate, std::mt19937_64& rng, bool training);

}  // namespace gate::ad
