#include "survtrace/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "survtrace/errors.hpp"

namespace survtrace {

// ---- ParameterStore --------------------------------------------------------

ParameterStore::ParameterStore(const ParameterStore& other) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this != &other) {
    ParameterStore copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Parameter& ParameterStore::add(std::string name, Tensor value) {
  if (find(name) != nullptr) throw ContractError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->grad = Tensor(value.shape());
  p->value = std::move(value);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(std::string_view name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Parameter* ParameterStore::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

Parameter& ParameterStore::at(std::string_view name) {
  Parameter* p = find(name);
  if (p == nullptr) throw ContractError("unknown parameter: " + std::string(name));
  return *p;
}

const Parameter& ParameterStore::at(std::string_view name) const {
  const Parameter* p = find(name);
  if (p == nullptr) throw ContractError("unknown parameter: " + std::string(name));
  return *p;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::assign_values(const ParameterStore& other) {
  if (other.size() != size()) throw ContractError("parameter stores differ in size");
  for (std::size_t i = 0; i < size(); ++i) {
    if (params_[i]->name != other[i].name) {
      throw ContractError("parameter order mismatch: " + params_[i]->name + " vs " + other[i].name);
    }
    require_same_shape(params_[i]->value, other[i].value, params_[i]->name.c_str());
    params_[i]->value = other[i].value;
  }
}

// ---- Tape ------------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), nullptr, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::watch(Parameter& parameter) {
  nodes_.push_back(Node{parameter.value, Tensor(), nullptr, &parameter, recording_});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw ContractError("operation mixes variables from different tapes");
    needs = needs || nodes_[in.id_].needs_grad;
  }
  needs = needs && recording_;
  nodes_.push_back(Node{std::move(value), Tensor(), needs ? std::move(fn) : nullptr, nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_target(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw ContractError("loss belongs to a different tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(loss.value().shape()));
  }
  if (!recording_) throw ContractError("backward on a tape created without gradient recording");
  for (Node& n : nodes_) n.grad = Tensor();
  Node& root = nodes_[loss.id_];
  if (!root.needs_grad) return;
  root.grad = Tensor(root.value.shape(), 1.0);
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.parameter != nullptr) {
      if (n.parameter->grad.shape() != n.parameter->value.shape()) n.parameter->zero_grad();
      n.parameter->grad += n.grad;
    }
  }
}

// ---- helpers ---------------------------------------------------------------

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
  }
}

// C (+)= op(A) · op(B) with optional transposes.
void gemm(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c) {
  const std::size_t n = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t m = tb ? b.rows() : b.cols();
  const std::size_t ac = a.cols();
  const std::size_t bc = b.cols();
  auto av = a.values();
  auto bv = b.values();
  auto cv = c.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = ta ? av[p * ac + i] : av[i * ac + p];
      if (x == 0.0) continue;
      double* crow = &cv[i * m];
      if (!tb) {
        const double* brow = &bv[p * bc];
        for (std::size_t j = 0; j < m; ++j) crow[j] += x * brow[j];
      } else {
        for (std::size_t j = 0; j < m; ++j) crow[j] += x * bv[j * bc + p];
      }
    }
  }
}

template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, df](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

// ---- scalar functions ------------------------------------------------------

namespace scalar {

double selu(double x) {
  return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
}

double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace scalar

// ---- operations ------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  gemm(av, false, bv, false, out);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(ia)) gemm(g, false, t.value(ib), true, *ga);
    if (Tensor* gb = t.grad_target(ib)) gemm(t.value(ia), true, g, false, *gb);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(ia)) *ga += g;
    if (Tensor* gb = t.grad_target(ib)) *gb += g;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(ia)) *ga += g;
    if (Tensor* gb = t.grad_target(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(ia)) {
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_target(ib)) {
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var mul(const Var& a, const Tensor& constant) {
  require_same_shape(a.value(), constant, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= constant[i];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, constant](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * constant[i];
  });
}

Var add_row(const Var& a, const Var& row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  require_matrix(av, "add_row");
  if (rv.size() != av.cols()) {
    throw DimensionError("add_row: row " + shape_string(rv.shape()) + " does not fit " +
                         shape_string(av.shape()));
  }
  Tensor out = av;
  const std::size_t n = av.rows(), m = av.cols();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += rv[j];
  }
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape().record(std::move(out), {a, row}, [ia, ir, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.grad_target(ia)) *ga += g;
    if (Tensor* gr = t.grad_target(ir)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) (*gr)[j] += g[i * m + j];
      }
    }
  });
}

Var affine(const Var& a, double scale, double shift) {
  return unary(
      a, [scale, shift](double x) { return scale * x + shift; },
      [scale](double, double) { return scale; });
}

Var selu(const Var& a) {
  using scalar::kSeluAlpha;
  using scalar::kSeluLambda;
  return unary(a, scalar::selu, [](double x, double y) {
    return x > 0.0 ? kSeluLambda : y + kSeluLambda * kSeluAlpha;
  });
}

Var softplus(const Var& a) {
  return unary(a, scalar::softplus, [](double x, double) { return scalar::sigmoid(x); });
}

Var sigmoid(const Var& a) {
  return unary(a, scalar::sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var log(const Var& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softmax_rows(const Var& a) {
  const Tensor& x = a.value();
  require_matrix(x, "softmax_rows");
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = &x.values()[i * m];
    double* yr = &out.values()[i * m];
    const double mx = *std::max_element(xr, xr + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < m; ++j) yr[j] /= z;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, n, m](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
      for (std::size_t j = 0; j < m; ++j) (*ga)[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const double g = t.grad(self)[0];
    for (double& v : ga->values()) v += g;
  });
}

Var mean(const Var& a) { return affine(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var row_sum(const Var& a) {
  const Tensor& x = a.value();
  require_matrix(x, "row_sum");
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += x[i * m + j];
    out[i] = s;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, n, m](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) (*ga)[i * m + j] += g[i];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (p.rows() != n) {
      throw DimensionError("concat_cols: row counts differ, " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.cols());
    ids.push_back(p.id());
    total += p.cols();
  }
  Tensor out({n, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(&v.values()[i * w], w, &out.values()[i * total + offset]);
    }
    offset += w;
  }
  return parts[0].tape().record(std::move(out), parts, [ids, widths, n, total](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t w = widths[p];
      if (Tensor* gp = t.grad_target(ids[p])) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < w; ++j) (*gp)[i * w + j] += g[i * total + offset + j];
        }
      }
      offset += w;
    }
  });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
  const Tensor& x = a.value();
  require_matrix(x, "slice_cols");
  if (count == 0 || start + count > x.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " + shape_string(x.shape()));
  }
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({n, count});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(&x.values()[i * m + start], count, &out.values()[i * count]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, n, m, start, count](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < count; ++j) (*ga)[i * m + start + j] += g[i * count + j];
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

Var gather_rows(const Var& table, std::span<const std::size_t> indices) {
  const Tensor& x = table.value();
  require_matrix(x, "gather_rows");
  if (indices.empty()) throw DimensionError("gather_rows: no indices");
  const std::size_t m = x.cols();
  Tensor out({indices.size(), m});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                           shape_string(x.shape()));
    }
    std::copy_n(&x.values()[indices[i] * m], m, &out.values()[i * m]);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), {table}, [it, idx, m](Tape& t, std::size_t self) {
    Tensor* gt = t.grad_target(it);
    if (gt == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < m; ++j) (*gt)[idx[i] * m + j] += g[i * m + j];
    }
  });
}

Var pick(const Var& a, std::span<const std::size_t> cols) {
  const Tensor& x = a.value();
  require_matrix(x, "pick");
  if (cols.size() != x.rows()) {
    throw DimensionError("pick: " + std::to_string(cols.size()) + " column indices for " +
                         shape_string(x.shape()));
  }
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    if (cols[i] >= m) throw DimensionError("pick: column index out of range");
    out[i] = x[i * m + cols[i]];
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, idx, m](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_target(ia);
    if (ga == nullptr) return;
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < idx.size(); ++i) (*ga)[i * m + idx[i]] += g[i];
  });
}

Var interleave_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("interleave_rows: no inputs");
  const std::size_t fields = parts.size();
  const std::size_t b = parts[0].rows(), d = parts[0].cols();
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    require_matrix(p.value(), "interleave_rows");
    if (p.rows() != b || p.cols() != d) {
      throw DimensionError("interleave_rows: shape mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    ids.push_back(p.id());
  }
  Tensor out({b * fields, d});
  for (std::size_t f = 0; f < fields; ++f) {
    const Tensor& v = parts[f].value();
    for (std::size_t r = 0; r < b; ++r) std::copy_n(&v.values()[r * d], d, &out.values()[(r * fields + f) * d]);
  }
  return parts[0].tape().record(std::move(out), parts, [ids, b, d, fields](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t f = 0; f < fields; ++f) {
      Tensor* gp = t.grad_target(ids[f]);
      if (gp == nullptr) continue;
      for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t j = 0; j < d; ++j) (*gp)[r * d + j] += g[(r * fields + f) * d + j];
      }
    }
  });
}

namespace {

void check_blocks(const Tensor& x, std::size_t block, const char* op) {
  require_matrix(x, op);
  if (block == 0 || x.rows() % block != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(x.rows()) +
                         " rows are not a multiple of block " + std::to_string(block));
  }
}

}  // namespace

Var block_matmul_nt(const Var& a, const Var& b, std::size_t block) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check_blocks(av, block, "block_matmul_nt");
  if (av.shape() != bv.shape()) {
    throw DimensionError("block_matmul_nt: shape mismatch " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  }
  const std::size_t groups = av.rows() / block, d = av.cols();
  Tensor out({av.rows(), block});
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < block; ++i) {
      const double* ar = &av.values()[(g * block + i) * d];
      for (std::size_t j = 0; j < block; ++j) {
        const double* br = &bv.values()[(g * block + j) * d];
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += ar[c] * br[c];
        out[(g * block + i) * block + j] = s;
      }
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, groups, block, d](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.grad_target(ia);
    Tensor* gb = t.grad_target(ib);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    for (std::size_t grp = 0; grp < groups; ++grp) {
      for (std::size_t i = 0; i < block; ++i) {
        const std::size_t ri = grp * block + i;
        for (std::size_t j = 0; j < block; ++j) {
          const std::size_t rj = grp * block + j;
          const double gij = g[ri * block + j];
          if (gij == 0.0) continue;
          for (std::size_t c = 0; c < d; ++c) {
            if (ga) (*ga)[ri * d + c] += gij * bv[rj * d + c];
            if (gb) (*gb)[rj * d + c] += gij * av[ri * d + c];
          }
        }
      }
    }
  });
}

Var block_matmul(const Var& a, const Var& b, std::size_t block) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check_blocks(av, block, "block_matmul");
  check_blocks(bv, block, "block_matmul");
  if (av.cols() != block || av.rows() != bv.rows()) {
    throw DimensionError("block_matmul: shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()) + " do not fit block " + std::to_string(block));
  }
  const std::size_t groups = av.rows() / block, d = bv.cols();
  Tensor out({av.rows(), d});
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < block; ++i) {
      double* orow = &out.values()[(g * block + i) * d];
      for (std::size_t j = 0; j < block; ++j) {
        const double w = av[(g * block + i) * block + j];
        const double* brow = &bv.values()[(g * block + j) * d];
        for (std::size_t c = 0; c < d; ++c) orow[c] += w * brow[c];
      }
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, groups, block, d](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.grad_target(ia);
    Tensor* gb = t.grad_target(ib);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    for (std::size_t grp = 0; grp < groups; ++grp) {
      for (std::size_t i = 0; i < block; ++i) {
        const std::size_t ri = grp * block + i;
        for (std::size_t j = 0; j < block; ++j) {
          const std::size_t rj = grp * block + j;
          if (ga) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += g[ri * d + c] * bv[rj * d + c];
            (*ga)[ri * block + j] += s;
          }
          if (gb) {
            const double w = av[ri * block + j];
            for (std::size_t c = 0; c < d; ++c) (*gb)[rj * d + c] += w * g[ri * d + c];
          }
        }
      }
    }
  });
}

}  // namespace survtrace
