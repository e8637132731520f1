#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "util.hpp"

namespace mem::nn {

// Dense row-major array of doubles. Rank is 1 or 2 everywhere in this
// project; scalars are shape {1}.
struct Array {
  std::vector<int> shape;
  std::vector<double> data;

  Array() = default;
  explicit Array(std::vector<int> s, double fill = 0.0);
  Array(std::vector<int> s, std::vector<double> values);

  static Array scalar(double v) { return Array({1}, {v}); }
  static Array identity(int n);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  // 2-D view: rank-1 arrays are treated as a single row.
  int rows() const { return rank() == 2 ? shape[0] : 1; }
  int cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }
  double& operator[](size_t i) { return data[i]; }
  double operator[](size_t i) const { return data[i]; }

  bool all_finite() const;
  bool same_shape(const Array& other) const { return shape == other.shape; }
};

bool operator==(const Array& a, const Array& b);

class Tape;

// Lightweight handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape. Nodes are appended in execution order, so the creation
// order is a topological order and the backward sweep is a single reverse
// pass over the node list.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Array value, bool requires_grad = true);
  Var constant(Array value) { return leaf(std::move(value), false); }

  const Array& value(Var v) const { return node(v).value; }
  const Array& grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss)=1 and replays the tape backward once.
  void backward(Var loss);

  // --- primitives -------------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);               // elementwise
  Var scale(Var a, double c);
  Var add_bias(Var x, Var bias);       // bias broadcast over rows of x
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var reshape(Var a, std::vector<int> shape);
  Var softmax_rows(Var a);             // stabilized by row-max subtraction
  Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var gelu(Var x);
  Var dropout(Var x, const Array& keep_mask, double keep_prob);
  Var mean_rows(Var x);                // {1, cols}
  Var mean_all(Var x);                 // scalar
  Var sum_all(Var x);                  // scalar
  Var gather_rows(Var x, std::vector<int> rows);
  // Rebuilds a full sequence: rows of `visible` at visible_pos, the (single
  // row) mask token at masked_pos. Positions must partition {0..total-1}.
  Var assemble_rows(Var visible, Var mask_token, std::vector<int> visible_pos,
                    std::vector<int> masked_pos, int total);
  Var slice_cols(Var x, int start, int width);
  Var concat_cols(const std::vector<Var>& parts);
  // -ln(max(p_label, 1e-12)) for a row of probabilities.
  Var cross_entropy(Var probs, int label);

  static constexpr double kProbFloor = 1e-12;

 private:
  struct Node {
    Array value;
    Array grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::function<void(Tape&, const Array&)> backprop;  // receives d(loss)/d(this)
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  Var emit(Array value, bool requires_grad, std::function<void(Tape&, const Array&)> backprop);
  void accumulate(int id, const Array& g);
  void check_mine(Var v, const char* op) const;

  std::deque<Node> nodes_;  // deque: references stay valid while nodes append
};

// Dense matrix product with optional transposes; C (+)= op(A)*op(B).
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b,
          double* c, bool accumulate);

// Named parameter with optimizer slots.
struct Parameter {
  std::string name;
  Array value;
  Array adam_m;
  Array adam_v;

  Parameter(std::string n, Array v) : name(std::move(n)), value(std::move(v)) {
    adam_m = Array(value.shape);
    adam_v = Array(value.shape);
  }
};

// Ordered parameter collection; order is part of the determinism and
// checkpoint contracts.
class ParamStore {
 public:
  int add(std::string name, Array value);
  int index_of(const std::string& name) const;  // -1 if absent
  Parameter& at(int i) { return params_[i]; }
  const Parameter& at(int i) const { return params_[i]; }
  Parameter& by_name(const std::string& name);
  const Parameter& by_name(const std::string& name) const;
  size_t size() const { return params_.size(); }
  int64_t total_elements() const;

  // Leases every parameter onto the tape, index-aligned with the store.
  std::vector<Var> bind(Tape& tape) const;

 private:
  std::vector<Parameter> params_;
};

}  // namespace mem::nn
