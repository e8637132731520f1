#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <sstream>

namespace mem::nn {

namespace {

int64_t shape_numel(const std::vector<int>& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("Array: nonpositive dimension");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

}  // namespace

Array::Array(std::vector<int> s, double fill) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(shape_numel(shape)), fill);
}

Array::Array(std::vector<int> s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("Array: shape/data size mismatch");
}

Array Array::identity(int n) {
  Array a({n, n});
  for (int i = 0; i < n; ++i) a.at(i, i) = 1.0;
  return a;
}

bool Array::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

bool operator==(const Array& a, const Array& b) { return a.shape == b.shape && a.data == b.data; }

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b,
          double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  if (!trans_a && !trans_b) {
    // C[m,n] += A[m,k] * B[k,n]; i-k-j order keeps B and C accesses contiguous.
    for (int i = 0; i < m; ++i) {
      const double* ai = a + static_cast<size_t>(i) * k;
      double* ci = c + static_cast<size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        const double av = ai[p];
        if (av == 0.0) continue;
        const double* bp = b + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // C[m,n] += A[m,k] * B[n,k]^T; rows of both operands are contiguous.
    for (int i = 0; i < m; ++i) {
      const double* ai = a + static_cast<size_t>(i) * k;
      double* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* bj = b + static_cast<size_t>(j) * k;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
        ci[j] += acc;
      }
    }
  } else if (trans_a && !trans_b) {
    // C[m,n] += A[k,m]^T * B[k,n]
    for (int p = 0; p < k; ++p) {
      const double* ap = a + static_cast<size_t>(p) * m;
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        const double av = ap[i];
        if (av == 0.0) continue;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int p = 0; p < k; ++p)
          acc += a[static_cast<size_t>(p) * m + i] * b[static_cast<size_t>(j) * k + p];
        c[static_cast<size_t>(i) * n + j] += acc;
      }
  }
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.tape != this || v.id >= static_cast<int>(nodes_.size()))
    throw ContractError("Tape: var does not belong to this tape");
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) {
  return const_cast<Node&>(static_cast<const Tape*>(this)->node(v));
}

void Tape::check_mine(Var v, const char* op) const {
  if (!v.valid() || v.tape != this)
    throw ContractError(std::string(op) + ": var does not belong to this tape");
}

Var Tape::leaf(Array value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Array{}, requires_grad, false, nullptr});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::emit(Array value, bool requires_grad,
               std::function<void(Tape&, const Array&)> backprop) {
  nodes_.push_back(Node{std::move(value), Array{}, requires_grad,
                        false, requires_grad ? std::move(backprop) : nullptr});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::accumulate(int id, const Array& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.grad_ready) {
    n.grad = g;
    n.grad_ready = true;
  } else {
    for (size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
  }
}

const Array& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.grad_ready) {
    // Materialize a zero gradient so callers can take stable references.
    Node& writable = const_cast<Node&>(n);
    writable.grad = Array(n.value.shape);
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(ln.value.shape));
  for (Node& n : nodes_) {
    n.grad_ready = false;
    n.grad = Array{};
  }
  accumulate(loss.id, Array(ln.value.shape, 1.0));
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backprop && n.grad_ready) n.backprop(*this, n.grad);
  }
}

Var Tape::add(Var a, Var b) {
  check_mine(a, "add");
  check_mine(b, "add");
  const Array& av = value(a);
  const Array& bv = value(b);
  if (!av.same_shape(bv))
    throw ShapeError("add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Array out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  const int ia = a.id, ib = b.id;
  return emit(std::move(out), rg, [ia, ib](Tape& t, const Array& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var Tape::sub(Var a, Var b) {
  check_mine(a, "sub");
  check_mine(b, "sub");
  const Array& av = value(a);
  const Array& bv = value(b);
  if (!av.same_shape(bv))
    throw ShapeError("sub: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Array out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  const int ia = a.id, ib = b.id;
  return emit(std::move(out), rg, [ia, ib](Tape& t, const Array& g) {
    t.accumulate(ia, g);
    Array neg = g;
    for (double& v : neg.data) v = -v;
    t.accumulate(ib, neg);
  });
}

Var Tape::mul(Var a, Var b) {
  check_mine(a, "mul");
  check_mine(b, "mul");
  const Array& av = value(a);
  const Array& bv = value(b);
  if (!av.same_shape(bv))
    throw ShapeError("mul: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Array out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  const int ia = a.id, ib = b.id;
  return emit(std::move(out), rg, [ia, ib](Tape& t, const Array& g) {
    const Array& av2 = t.nodes_[ia].value;
    const Array& bv2 = t.nodes_[ib].value;
    Array ga = g, gb = g;
    for (size_t i = 0; i < g.data.size(); ++i) {
      ga.data[i] *= bv2.data[i];
      gb.data[i] *= av2.data[i];
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

Var Tape::scale(Var a, double c) {
  check_mine(a, "scale");
  Array out = value(a);
  for (double& v : out.data) v *= c;
  const int ia = a.id;
  return emit(std::move(out), requires_grad(a), [ia, c](Tape& t, const Array& g) {
    Array ga = g;
    for (double& v : ga.data) v *= c;
    t.accumulate(ia, ga);
  });
}

Var Tape::add_bias(Var x, Var bias) {
  check_mine(x, "add_bias");
  check_mine(bias, "add_bias");
  const Array& xv = value(x);
  const Array& bv = value(bias);
  if (bv.numel() != xv.cols())
    throw ShapeError("add_bias: bias length " + std::to_string(bv.numel()) +
                     " != cols " + std::to_string(xv.cols()));
  Array out = xv;
  const int r = xv.rows(), c = xv.cols();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(i, j) += bv.data[j];
  const bool rg = requires_grad(x) || requires_grad(bias);
  const int ix = x.id, ib = bias.id;
  return emit(std::move(out), rg, [ix, ib, r, c](Tape& t, const Array& g) {
    t.accumulate(ix, g);
    Array gb(t.nodes_[ib].value.shape);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) gb.data[j] += g.data[static_cast<size_t>(i) * c + j];
    t.accumulate(ib, gb);
  });
}

Var Tape::matmul(Var a, Var b) {
  check_mine(a, "matmul");
  check_mine(b, "matmul");
  const Array& av = value(a);
  const Array& bv = value(b);
  const int m = av.rows(), k = av.cols(), k2 = bv.rows(), n = bv.cols();
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(av.shape) + " x " +
                     shape_str(bv.shape));
  Array out({m, n});
  gemm(false, false, m, n, k, av.data.data(), bv.data.data(), out.data.data(), false);
  const bool rg = requires_grad(a) || requires_grad(b);
  const int ia = a.id, ib = b.id;
  return emit(std::move(out), rg, [ia, ib, m, n, k](Tape& t, const Array& g) {
    const Array& av2 = t.nodes_[ia].value;
    const Array& bv2 = t.nodes_[ib].value;
    if (t.nodes_[ia].requires_grad) {
      Array ga(av2.shape);  // dA = dC * B^T
      gemm(false, true, m, k, n, g.data.data(), bv2.data.data(), ga.data.data(), false);
      t.accumulate(ia, ga);
    }
    if (t.nodes_[ib].requires_grad) {
      Array gb(bv2.shape);  // dB = A^T * dC
      gemm(true, false, k, n, m, av2.data.data(), g.data.data(), gb.data.data(), false);
      t.accumulate(ib, gb);
    }
  });
}

Var Tape::transpose(Var a) {
  check_mine(a, "transpose");
  const Array& av = value(a);
  const int r = av.rows(), c = av.cols();
  Array out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  const int ia = a.id;
  return emit(std::move(out), requires_grad(a), [ia, r, c](Tape& t, const Array& g) {
    Array ga(t.nodes_[ia].value.shape);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) ga.data[static_cast<size_t>(i) * c + j] = g.at(j, i);
    t.accumulate(ia, ga);
  });
}

Var Tape::reshape(Var a, std::vector<int> shape) {
  check_mine(a, "reshape");
  const Array& av = value(a);
  if (shape_numel(shape) != av.numel())
    throw ShapeError("reshape: element count mismatch");
  Array out(shape, av.data);
  const int ia = a.id;
  return emit(std::move(out), requires_grad(a), [ia](Tape& t, const Array& g) {
    Array ga(t.nodes_[ia].value.shape, g.data);
    t.accumulate(ia, ga);
  });
}

Var Tape::softmax_rows(Var a) {
  check_mine(a, "softmax_rows");
  const Array& av = value(a);
  Array out = av;
  const int r = av.rows(), c = av.cols();
  for (int i = 0; i < r; ++i) {
    double mx = out.at(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, out.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      const double e = std::exp(out.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < c; ++j) out.at(i, j) /= sum;
  }
  const int ia = a.id, self = static_cast<int>(nodes_.size());
  return emit(std::move(out), requires_grad(a), [ia, self, r, c](Tape& t, const Array& g) {
    const Array& y = t.nodes_[self].value;
    Array ga(t.nodes_[ia].value.shape);
    for (int i = 0; i < r; ++i) {
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += g.at(i, j) * y.at(i, j);
      for (int j = 0; j < c; ++j) ga.at(i, j) = (g.at(i, j) - dot) * y.at(i, j);
    }
    t.accumulate(ia, ga);
  });
}

Var Tape::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  check_mine(x, "layer_norm_rows");
  check_mine(gamma, "layer_norm_rows");
  check_mine(beta, "layer_norm_rows");
  const Array& xv = value(x);
  const int r = xv.rows(), c = xv.cols();
  if (value(gamma).numel() != c || value(beta).numel() != c)
    throw ShapeError("layer_norm_rows: gamma/beta length must equal cols");
  Array xhat({r, c});
  std::vector<double> inv_std(r);
  for (int i = 0; i < r; ++i) {
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += xv.at(i, j);
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = xv.at(i, j) - mean;
      var += d * d;
    }
    var /= c;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) xhat.at(i, j) = (xv.at(i, j) - mean) * inv_std[i];
  }
  Array out({r, c});
  const Array& gv = value(gamma);
  const Array& bv = value(beta);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(i, j) = xhat.at(i, j) * gv.data[j] + bv.data[j];
  const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  auto xhat_saved = std::make_shared<Array>(std::move(xhat));
  auto inv_saved = std::make_shared<std::vector<double>>(std::move(inv_std));
  return emit(std::move(out), rg,
              [ix, ig, ib, r, c, xhat_saved, inv_saved](Tape& t, const Array& g) {
                const Array& gv2 = t.nodes_[ig].value;
                Array gx(t.nodes_[ix].value.shape);
                Array gg(gv2.shape);
                Array gb(t.nodes_[ib].value.shape);
                for (int i = 0; i < r; ++i) {
                  double sum_dy = 0.0, sum_dy_xhat = 0.0;
                  for (int j = 0; j < c; ++j) {
                    const double dy = g.at(i, j) * gv2.data[j];
                    sum_dy += dy;
                    sum_dy_xhat += dy * xhat_saved->at(i, j);
                  }
                  for (int j = 0; j < c; ++j) {
                    const double dy = g.at(i, j) * gv2.data[j];
                    gx.at(i, j) = (*inv_saved)[i] *
                                  (dy - sum_dy / c - xhat_saved->at(i, j) * sum_dy_xhat / c);
                    gg.data[j] += g.at(i, j) * xhat_saved->at(i, j);
                    gb.data[j] += g.at(i, j);
                  }
                }
                t.accumulate(ix, gx);
                t.accumulate(ig, gg);
                t.accumulate(ib, gb);
              });
}

Var Tape::gelu(Var x) {
  check_mine(x, "gelu");
  Array out = value(x);
  const double inv_sqrt2 = 0.70710678118654752440;
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  const int ix = x.id;
  return emit(std::move(out), requires_grad(x), [ix, inv_sqrt2](Tape& t, const Array& g) {
    const Array& xv = t.nodes_[ix].value;
    Array gx = g;
    const double inv_sqrt2pi = 0.39894228040143267794;
    for (size_t i = 0; i < gx.data.size(); ++i) {
      const double v = xv.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      gx.data[i] *= cdf + v * pdf;
    }
    t.accumulate(ix, gx);
  });
}

Var Tape::dropout(Var x, const Array& keep_mask, double keep_prob) {
  check_mine(x, "dropout");
  const Array& xv = value(x);
  if (!xv.same_shape(keep_mask)) throw ShapeError("dropout: mask shape mismatch");
  if (keep_prob <= 0.0 || keep_prob > 1.0)
    throw ContractError("dropout: keep_prob must be in (0,1]");
  Array out = xv;
  const double inv = 1.0 / keep_prob;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= keep_mask.data[i] * inv;
  const int ix = x.id;
  auto mask = std::make_shared<Array>(keep_mask);
  return emit(std::move(out), requires_grad(x), [ix, mask, inv](Tape& t, const Array& g) {
    Array gx = g;
    for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] *= mask->data[i] * inv;
    t.accumulate(ix, gx);
  });
}

Var Tape::mean_rows(Var x) {
  check_mine(x, "mean_rows");
  const Array& xv = value(x);
  const int r = xv.rows(), c = xv.cols();
  Array out({1, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.data[j] += xv.at(i, j);
  for (double& v : out.data) v /= r;
  const int ix = x.id;
  return emit(std::move(out), requires_grad(x), [ix, r, c](Tape& t, const Array& g) {
    Array gx(t.nodes_[ix].value.shape);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) gx.data[static_cast<size_t>(i) * c + j] = g.data[j] / r;
    t.accumulate(ix, gx);
  });
}

Var Tape::mean_all(Var x) {
  check_mine(x, "mean_all");
  const Array& xv = value(x);
  const double n = static_cast<double>(xv.numel());
  double sum = 0.0;
  for (double v : xv.data) sum += v;
  const int ix = x.id;
  return emit(Array::scalar(sum / n), requires_grad(x), [ix, n](Tape& t, const Array& g) {
    Array gx(t.nodes_[ix].value.shape, g.data[0] / n);
    t.accumulate(ix, gx);
  });
}

Var Tape::sum_all(Var x) {
  check_mine(x, "sum_all");
  double sum = 0.0;
  for (double v : value(x).data) sum += v;
  const int ix = x.id;
  return emit(Array::scalar(sum), requires_grad(x), [ix](Tape& t, const Array& g) {
    Array gx(t.nodes_[ix].value.shape, g.data[0]);
    t.accumulate(ix, gx);
  });
}

Var Tape::gather_rows(Var x, std::vector<int> rows) {
  check_mine(x, "gather_rows");
  const Array& xv = value(x);
  const int r = xv.rows(), c = xv.cols();
  for (int idx : rows)
    if (idx < 0 || idx >= r) throw ContractError("gather_rows: row index out of range");
  Array out({static_cast<int>(rows.size()), c});
  for (size_t i = 0; i < rows.size(); ++i)
    std::memcpy(&out.data[i * c], &xv.data[static_cast<size_t>(rows[i]) * c],
                sizeof(double) * c);
  const int ix = x.id;
  auto idx = std::make_shared<std::vector<int>>(std::move(rows));
  return emit(std::move(out), requires_grad(x), [ix, idx, c](Tape& t, const Array& g) {
    Array gx(t.nodes_[ix].value.shape);
    for (size_t i = 0; i < idx->size(); ++i)
      for (int j = 0; j < c; ++j)
        gx.data[static_cast<size_t>((*idx)[i]) * c + j] += g.data[i * c + j];
    t.accumulate(ix, gx);
  });
}

Var Tape::assemble_rows(Var visible, Var mask_token, std::vector<int> visible_pos,
                        std::vector<int> masked_pos, int total) {
  check_mine(visible, "assemble_rows");
  check_mine(mask_token, "assemble_rows");
  const Array& vv = value(visible);
  const Array& mv = value(mask_token);
  const int c = vv.cols();
  if (mv.numel() != c) throw ShapeError("assemble_rows: mask token width mismatch");
  if (static_cast<int>(visible_pos.size()) != vv.rows())
    throw ContractError("assemble_rows: visible position count mismatch");
  if (static_cast<int>(visible_pos.size() + masked_pos.size()) != total)
    throw ContractError("assemble_rows: positions do not cover the sequence");
  std::vector<char> seen(total, 0);
  for (int p : visible_pos) {
    if (p < 0 || p >= total || seen[p]) throw ContractError("assemble_rows: position collision");
    seen[p] = 1;
  }
  for (int p : masked_pos) {
    if (p < 0 || p >= total || seen[p]) throw ContractError("assemble_rows: position collision");
    seen[p] = 1;
  }
  Array out({total, c});
  for (size_t i = 0; i < visible_pos.size(); ++i)
    std::memcpy(&out.data[static_cast<size_t>(visible_pos[i]) * c], &vv.data[i * c],
                sizeof(double) * c);
  for (int p : masked_pos)
    std::memcpy(&out.data[static_cast<size_t>(p) * c], mv.data.data(), sizeof(double) * c);
  const bool rg = requires_grad(visible) || requires_grad(mask_token);
  const int iv = visible.id, im = mask_token.id;
  auto vpos = std::make_shared<std::vector<int>>(std::move(visible_pos));
  auto mpos = std::make_shared<std::vector<int>>(std::move(masked_pos));
  return emit(std::move(out), rg, [iv, im, vpos, mpos, c](Tape& t, const Array& g) {
    Array gv(t.nodes_[iv].value.shape);
    for (size_t i = 0; i < vpos->size(); ++i)
      std::memcpy(&gv.data[i * c], &g.data[static_cast<size_t>((*vpos)[i]) * c],
                  sizeof(double) * c);
    t.accumulate(iv, gv);
    Array gm(t.nodes_[im].value.shape);
    for (int p : *mpos)
      for (int j = 0; j < c; ++j) gm.data[j] += g.data[static_cast<size_t>(p) * c + j];
    t.accumulate(im, gm);
  });
}

Var Tape::slice_cols(Var x, int start, int width) {
  check_mine(x, "slice_cols");
  const Array& xv = value(x);
  const int r = xv.rows(), c = xv.cols();
  if (start < 0 || width <= 0 || start + width > c)
    throw ShapeError("slice_cols: range out of bounds");
  Array out({r, width});
  for (int i = 0; i < r; ++i)
    std::memcpy(&out.data[static_cast<size_t>(i) * width],
                &xv.data[static_cast<size_t>(i) * c + start], sizeof(double) * width);
  const int ix = x.id;
  return emit(std::move(out), requires_grad(x), [ix, start, width, r, c](Tape& t, const Array& g) {
    Array gx(t.nodes_[ix].value.shape);
    for (int i = 0; i < r; ++i)
      std::memcpy(&gx.data[static_cast<size_t>(i) * c + start],
                  &g.data[static_cast<size_t>(i) * width], sizeof(double) * width);
    t.accumulate(ix, gx);
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  int r = -1, c = 0;
  bool rg = false;
  for (Var p : parts) {
    check_mine(p, "concat_cols");
    const Array& pv = value(p);
    if (r < 0) r = pv.rows();
    if (pv.rows() != r) throw ShapeError("concat_cols: row count mismatch");
    c += pv.cols();
    rg = rg || requires_grad(p);
  }
  Array out({r, c});
  int off = 0;
  for (Var p : parts) {
    const Array& pv = value(p);
    const int w = pv.cols();
    for (int i = 0; i < r; ++i)
      std::memcpy(&out.data[static_cast<size_t>(i) * c + off],
                  &pv.data[static_cast<size_t>(i) * w], sizeof(double) * w);
    off += w;
  }
  std::vector<int> ids;
  std::vector<int> widths;
  for (Var p : parts) {
    ids.push_back(p.id);
    widths.push_back(value(p).cols());
  }
  auto ids_s = std::make_shared<std::vector<int>>(std::move(ids));
  auto widths_s = std::make_shared<std::vector<int>>(std::move(widths));
  return emit(std::move(out), rg, [ids_s, widths_s, r, c](Tape& t, const Array& g) {
    int off2 = 0;
    for (size_t k = 0; k < ids_s->size(); ++k) {
      const int w = (*widths_s)[k];
      Array gp(t.nodes_[(*ids_s)[k]].value.shape);
      for (int i = 0; i < r; ++i)
        std::memcpy(&gp.data[static_cast<size_t>(i) * w],
                    &g.data[static_cast<size_t>(i) * c + off2], sizeof(double) * w);
      t.accumulate((*ids_s)[k], gp);
      off2 += w;
    }
  });
}

Var Tape::cross_entropy(Var probs, int label) {
  check_mine(probs, "cross_entropy");
  const Array& pv = value(probs);
  if (pv.rows() != 1) throw ShapeError("cross_entropy: expects a single probability row");
  if (label < 0 || label >= pv.cols())
    throw ContractError("cross_entropy: label out of range");
  const double p = std::max(pv.data[label], kProbFloor);
  const int ip = probs.id;
  return emit(Array::scalar(-std::log(p)), requires_grad(probs),
              [ip, label](Tape& t, const Array& g) {
                const Array& pv2 = t.nodes_[ip].value;
                Array gp(pv2.shape);
                const double p2 = pv2.data[label];
                if (p2 > kProbFloor) gp.data[label] = -g.data[0] / p2;
                t.accumulate(ip, gp);
              });
}

int ParamStore::add(std::string name, Array value) {
  if (index_of(name) >= 0) throw ContractError("ParamStore: duplicate parameter " + name);
  params_.emplace_back(std::move(name), std::move(value));
  return static_cast<int>(params_.size() - 1);
}

int ParamStore::index_of(const std::string& name) const {
  for (size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return static_cast<int>(i);
  return -1;
}

Parameter& ParamStore::by_name(const std::string& name) {
  const int i = index_of(name);
  if (i < 0) throw ContractError("ParamStore: unknown parameter " + name);
  return params_[i];
}

const Parameter& ParamStore::by_name(const std::string& name) const {
  const int i = index_of(name);
  if (i < 0) throw ContractError("ParamStore: unknown parameter " + name);
  return params_[i];
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

std::vector<Var> ParamStore::bind(Tape& tape) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.leaf(p.value, true));
  return vars;
}

}  // namespace mem::nn
