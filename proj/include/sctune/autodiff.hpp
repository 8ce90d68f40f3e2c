// Copyright 2026 The sctune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode automatic differentiation over small dense matrices.
//
// A Tape records every operation applied to its variables. Parameters are
// views into one flat parameter array, so backward() can deposit the whole
// gradient into one flat vector of the same length. All values are row-major
// f64 matrices; scalars are 1x1.
//
//   Tape t(params);
//   Var w = t.param(0, 4, 3);
//   Var y = t.linear(x, w);
//   Var loss = t.mean(y);
//   t.backward(loss, grad);

#ifndef SCTUNE_AUTODIFF_HPP_
#define SCTUNE_AUTODIFF_HPP_

#include <functional>
#include <span>
#include <vector>

namespace sctune::ad {

// Constant sparse matrix in compressed-row form.
struct Csr {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_ptr{0};
  std::vector<int> col;
  std::vector<double> val;

  explicit Csr(int num_cols = 0) : cols(num_cols) {}
  void push(int c, double v) {
    col.push_back(c);
    val.push_back(v);
  }
  void end_row() {
    row_ptr.push_back(static_cast<int>(col.size()));
    ++rows;
  }
};

struct Var {
  int id = -1;
};

class Tape {
 public:
  // With requires_grad false nothing is kept for backward(); used for
  // sampling and scoring.
  explicit Tape(std::span<const double> params, bool requires_grad = true);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // rows x cols block of the parameter array starting at offset.
  Var param(size_t offset, int rows, int cols);
  Var constant(int rows, int cols, std::vector<double> values);

  // x: n x k, w: m x k, optional bias b: 1 x m. Returns x w^T + b.
  Var linear(Var x, Var w);
  Var linear(Var x, Var w, Var b);
  // Sparse constant x (n x k) times table (k x m).
  Var embed(const Csr& x, Var table);
  // out[i] = a[index[i]].
  Var gather_rows(Var a, std::vector<int> index);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  // a (n x m) plus the 1 x m row broadcast over every row.
  Var add_row(Var a, Var row);
  // Adds a constant of the same shape; no gradient flows into it.
  Var add_const(Var a, std::vector<double> c);
  // Elementwise product with a constant of the same shape.
  Var mul_const(Var a, std::vector<double> c);
  Var scale(Var a, double s);
  Var relu(Var a);
  Var exp(Var a);
  Var clamp(Var a, double lo, double hi);
  // Elementwise minimum; ties send the gradient to a.
  Var minimum(Var a, Var b);
  // Row-wise log-softmax.
  Var log_softmax(Var a);
  // out[i] = a[i][cols[i]]; n x 1.
  Var pick(Var a, std::vector<int> cols);
  Var sum(Var a);
  Var mean(Var a);
  // z: (batch * grid * grid) x c cell activations, cells row-major within a
  // scene. Returns batch x c(2 grid + 1): per-channel totals, then per-row
  // sums (channel-major), then per-column sums.
  Var grid_pool(Var z, int grid);

  int rows(Var v) const { return nodes_[v.id].rows; }
  int cols(Var v) const { return nodes_[v.id].cols; }
  std::span<const double> value(Var v) const;
  double scalar(Var v) const;

  // Accumulates d(loss)/d(params) into grad, which must have the length of
  // the parameter array. loss must be 1x1.
  void backward(Var loss, std::span<double> grad);

 private:
  struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<double> val;
    const double* ext = nullptr;  // parameter view
    long param_offset = -1;
    std::vector<double> grad;
    std::function<void()> back;
  };

  Var push(int rows, int cols, std::vector<double> val);
  const double* data(int id) const;
  std::vector<double>& grad_of(int id);
  void require(bool cond, const char* what) const;

  std::span<const double> params_;
  bool requires_grad_;
  std::vector<Node> nodes_;
};

}  // namespace sctune::ad

#endif  // SCTUNE_AUTODIFF_HPP_
