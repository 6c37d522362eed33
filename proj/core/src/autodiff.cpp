#include "gate/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace gate::ad {

namespace {

std::string shapes(const char* op, Shape a, Shape b) {
  std::ostringstream os;
  os << op << ": shape mismatch " << a.str() << " vs " << b.str();
  return os.str();
}

Shape shape_of(const Matrix& m) {
  return {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
}

void check_same_tape(Value a, Value b, const char* op) {
  if (a.tape() != b.tape() || a.tape() == nullptr)
    throw ContractError(std::string(op) + ": operands live on different tapes");
}

}  // namespace

std::string Shape::str() const {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

Parameter::Parameter(std::string n, Matrix v)
    : name(std::move(n)), value(std::move(v)),
      grad(Matrix::Zero(value.rows(), value.cols())) {}

void Parameter::zero_grad() {
  grad.setZero(value.rows(), value.cols());
  touched = false;
}

const Matrix& Value::data() const { return tape_->value(id_); }
const Matrix& Value::grad() const { return tape_->grad(id_); }
Shape Value::shape() const { return shape_of(tape_->value(id_)); }
bool Value::requires_grad() const { return tape_->requires_grad(id_); }

double Value::item() const {
  const Matrix& m = data();
  if (m.size() != 1) throw ContractError("item() on non-scalar " + shape().str());
  return m(0, 0);
}

Value Tape::constant(Matrix m) {
  Node n;
  n.value = std::move(m);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Value Tape::variable(Matrix m) {
  Node n;
  n.value = std::move(m);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Value Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Value Tape::record(Matrix value, std::vector<std::size_t> inputs, BackwardFn fn) {
#ifndef NDEBUG
  if (!value.allFinite()) throw ContractError("non-finite value produced by forward op");
#endif
  Node n;
  n.value = std::move(value);
  for (std::size_t id : inputs) n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  if (n.requires_grad) n.backward = std::move(fn);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  accumulate_with(id, [&](Matrix& dst) { dst += g; });
}

void Tape::backward(Value loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (loss.shape().size() != 1)
    throw ContractError("backward: loss must be a scalar, got " + loss.shape().str());
  for (Node& n : nodes_) n.grad.resize(0, 0);
  Node& root = nodes_[loss.id()];
  if (!root.requires_grad) return;
  root.grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) {
      n.param->grad += n.grad;
      n.param->touched = true;
    }
  }
}

// ---- operations ------------------------------------------------------------

Value matmul(Value a, Value b) {
  check_same_tape(a, b, "matmul");
  const Matrix& A = a.data();
  const Matrix& B = b.data();
  if (A.cols() != B.rows()) throw DimensionError(shapes("matmul", a.shape(), b.shape()));
  Matrix out(A.rows(), B.cols());
  out.noalias() = A * B;
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia))
      t.accumulate_with(ia, [&](Matrix& d) { d.noalias() += g * t.value(ib).transpose(); });
    if (t.requires_grad(ib))
      t.accumulate_with(ib, [&](Matrix& d) { d.noalias() += t.value(ia).transpose() * g; });
  });
}

Value add(Value a, Value b) {
  check_same_tape(a, b, "add");
  if (a.shape() != b.shape()) throw DimensionError(shapes("add", a.shape(), b.shape()));
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.data() + b.data(), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Value sub(Value a, Value b) {
  check_same_tape(a, b, "sub");
  if (a.shape() != b.shape()) throw DimensionError(shapes("sub", a.shape(), b.shape()));
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.data() - b.data(), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate_with(ib, [&](Matrix& d) { d -= g; });
  });
}

Value add_bias(Value a, Value bias) {
  check_same_tape(a, bias, "add_bias");
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw DimensionError(shapes("add_bias", a.shape(), bias.shape()));
  Matrix out = a.data();
  out.rowwise() += bias.data().row(0);
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate_with(ib, [&](Matrix& d) { d += g.colwise().sum(); });
  });
}

Value scale(Value a, double c) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.data() * c, {ia}, [ia, c](Tape& t, const Matrix& g) {
    t.accumulate_with(ia, [&](Matrix& d) { d += c * g; });
  });
}

Value relu(Value a) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.data().cwiseMax(0.0), {ia}, [ia](Tape& t, const Matrix& g) {
    t.accumulate_with(ia, [&](Matrix& d) {
      d.array() += (t.value(ia).array() > 0.0).select(g.array(), 0.0);
    });
  });
}

Value concat(Value a, Value b) {
  check_same_tape(a, b, "concat");
  if (a.rows() != b.rows()) throw DimensionError(shapes("concat", a.shape(), b.shape()));
  const Eigen::Index p = a.data().cols(), q = b.data().cols();
  Matrix out(a.data().rows(), p + q);
  out.leftCols(p) = a.data();
  out.rightCols(q) = b.data();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib, p, q](Tape& t, const Matrix& g) {
    t.accumulate_with(ia, [&](Matrix& d) { d += g.leftCols(p); });
    t.accumulate_with(ib, [&](Matrix& d) { d += g.rightCols(q); });
  });
}

Value vstack(std::span<const Value> parts) {
  if (parts.empty()) throw DimensionError("vstack: no inputs");
  Tape* tape = parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> offsets;
  for (const Value& v : parts) {
    if (v.tape() != tape) throw ContractError("vstack: operands live on different tapes");
    if (v.cols() != cols) throw DimensionError(shapes("vstack", parts.front().shape(), v.shape()));
    offsets.push_back(static_cast<Eigen::Index>(rows));
    rows += v.rows();
    ids.push_back(v.id());
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k)
    out.middleRows(offsets[k], parts[k].data().rows()) = parts[k].data();
  auto inputs = ids;
  return tape->record(std::move(out), std::move(inputs),
                      [ids, offsets](Tape& t, const Matrix& g) {
                        for (std::size_t k = 0; k < ids.size(); ++k) {
                          t.accumulate_with(ids[k], [&](Matrix& d) {
                            d += g.middleRows(offsets[k], d.rows());
                          });
                        }
                      });
}

Value reduce_sum_rows(Value a) {
  const std::size_t ia = a.id();
  Matrix out = a.data().colwise().sum();
  return a.tape()->record(std::move(out), {ia}, [ia](Tape& t, const Matrix& g) {
    t.accumulate_with(ia, [&](Matrix& d) { d.rowwise() += g.row(0); });
  });
}

Value sum(Value a) {
  const std::size_t ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.data().sum();
  return a.tape()->record(std::move(out), {ia}, [ia](Tape& t, const Matrix& g) {
    t.accumulate_with(ia, [&](Matrix& d) { d.array() += g(0, 0); });
  });
}

Value mse(Value a, Value b) {
  check_same_tape(a, b, "mse");
  if (a.shape() != b.shape()) throw DimensionError(shapes("mse", a.shape(), b.shape()));
  const double n = static_cast<double>(a.shape().size());
  Matrix out(1, 1);
  out(0, 0) = (a.data() - b.data()).squaredNorm() / n;
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib, n](Tape& t, const Matrix& g) {
    const double c = 2.0 * g(0, 0) / n;
    if (t.requires_grad(ia))
      t.accumulate_with(ia, [&](Matrix& d) { d += c * (t.value(ia) - t.value(ib)); });
    if (t.requires_grad(ib))
      t.accumulate_with(ib, [&](Matrix& d) { d -= c * (t.value(ia) - t.value(ib)); });
  });
}

Value row_norms(Value a) {
  const std::size_t ia = a.id();
  Matrix out = a.data().rowwise().norm();
  return a.tape()->record(std::move(out), {ia}, [ia](Tape& t, const Matrix& g) {
    t.accumulate_with(ia, [&](Matrix& d) {
      const Matrix& x = t.value(ia);
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double nrm = x.row(r).norm();
        if (nrm > 0.0) d.row(r) += (g(r, 0) / nrm) * x.row(r);
      }
    });
  });
}

Value gather_rows(Value a, std::span<const int> index) {
  const Matrix& A = a.data();
  Matrix out(static_cast<Eigen::Index>(index.size()), A.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= A.rows())
      throw DimensionError("gather_rows: index " + std::to_string(index[k]) + " out of range " +
                           a.shape().str());
    out.row(static_cast<Eigen::Index>(k)) = A.row(index[k]);
  }
  const std::size_t ia = a.id();
  std::vector<int> idx(index.begin(), index.end());
  return a.tape()->record(std::move(out), {ia}, [ia, idx = std::move(idx)](Tape& t, const Matrix& g) {
    t.accumulate_with(ia, [&](Matrix& d) {
      for (std::size_t k = 0; k < idx.size(); ++k) d.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
    });
  });
}

Value scatter_add_rows(Value a, std::span<const int> index, std::size_t out_rows) {
  const Matrix& A = a.data();
  if (index.size() != static_cast<std::size_t>(A.rows()))
    throw DimensionError("scatter_add_rows: " + std::to_string(index.size()) +
                         " indices for " + a.shape().str());
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(out_rows), A.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || static_cast<std::size_t>(index[k]) >= out_rows)
      throw DimensionError("scatter_add_rows: index " + std::to_string(index[k]) +
                           " out of range " + std::to_string(out_rows));
    out.row(index[k]) += A.row(static_cast<Eigen::Index>(k));
  }
  const std::size_t ia = a.id();
  std::vector<int> idx(index.begin(), index.end());
  return a.tape()->record(std::move(out), {ia}, [ia, idx = std::move(idx)](Tape& t, const Matrix& g) {
    t.accumulate_with(ia, [&](Matrix& d) {
      for (std::size_t k = 0; k < idx.size(); ++k) d.row(static_cast<Eigen::Index>(k)) += g.row(idx[k]);
    });
  });
}

Value slice_rows(Value a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows())
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + a.shape().str());
  const auto b = static_cast<Eigen::Index>(begin), c = static_cast<Eigen::Index>(count);
  Matrix out = a.data().middleRows(b, c);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia, b, c](Tape& t, const Matrix& g) {
    t.accumulate_with(ia, [&](Matrix& d) { d.middleRows(b, c) += g; });
  });
}

Value dropout(Value a, double rate, std::mt19937_64& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ParameterError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution drop(rate);
  Matrix mask(a.data().rows(), a.data().cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = drop(rng) ? 0.0 : keep_scale;
  Matrix out = a.data().cwiseProduct(mask);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia, mask = std::move(mask)](Tape& t, const Matrix& g) {
    t.accumulate_with(ia, [&](Matrix& d) { d += g.cwiseProduct(mask); });
  });
}

}  // namespace gate::ad
