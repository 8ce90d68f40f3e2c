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

#include "sctune/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "sctune/kernels.hpp"

namespace sctune::ad {

Tape::Tape(std::span<const double> params, bool requires_grad)
    : params_(params), requires_grad_(requires_grad) {
  nodes_.reserve(64);
}

void Tape::require(bool cond, const char* what) const {
  if (!cond) throw std::invalid_argument(std::string("tape: ") + what);
}

Var Tape::push(int rows, int cols, std::vector<double> val) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.val = std::move(val);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const double* Tape::data(int id) const {
  const Node& n = nodes_[id];
  return n.ext ? n.ext : n.val.data();
}

std::vector<double>& Tape::grad_of(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.rows) * n.cols, 0.0);
  return n.grad;
}

std::span<const double> Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return {data(v.id), static_cast<size_t>(n.rows) * n.cols};
}

double Tape::scalar(Var v) const {
  require(rows(v) == 1 && cols(v) == 1, "scalar() of a non-1x1 value");
  return data(v.id)[0];
}

Var Tape::param(size_t offset, int rows, int cols) {
  const size_t len = static_cast<size_t>(rows) * cols;
  require(offset + len <= params_.size(), "parameter view out of range");
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.ext = params_.data() + offset;
  n.param_offset = static_cast<long>(offset);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(int rows, int cols, std::vector<double> values) {
  require(values.size() == static_cast<size_t>(rows) * cols,
          "constant size mismatch");
  return push(rows, cols, std::move(values));
}

Var Tape::linear(Var x, Var w) {
  const int n = rows(x), k = cols(x), m = rows(w);
  require(cols(w) == k, "linear shape mismatch");
  std::vector<double> y(static_cast<size_t>(n) * m);
  kernels::linear_forward({data(x.id), static_cast<size_t>(n) * k},
                          {data(w.id), static_cast<size_t>(m) * k}, {}, y, n,
                          k, m);
  Var out = push(n, m, std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, x, w, n, k, m] {
      const auto& dy = nodes_[o].grad;
      kernels::linear_backward_input(dy, {data(w.id), size_t(m) * k},
                                     grad_of(x.id), n, k, m);
      kernels::linear_backward_weight(dy, {data(x.id), size_t(n) * k},
                                      grad_of(w.id), n, k, m);
    };
  }
  return out;
}

Var Tape::linear(Var x, Var w, Var b) {
  return add_row(linear(x, w), b);
}

Var Tape::embed(const Csr& x, Var table) {
  const int n = x.rows, k = rows(table), m = cols(table);
  require(x.cols == k, "embed shape mismatch");
  const double* t = data(table.id);
  std::vector<double> y(static_cast<size_t>(n) * m, 0.0);
  for (int r = 0; r < n; ++r) {
    double* yr = y.data() + static_cast<size_t>(r) * m;
    for (int p = x.row_ptr[r]; p < x.row_ptr[r + 1]; ++p) {
      const double v = x.val[p];
      const double* tr = t + static_cast<size_t>(x.col[p]) * m;
      for (int j = 0; j < m; ++j) yr[j] += v * tr[j];
    }
  }
  Var out = push(n, m, std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, x, table, n, m] {
      const auto& dy = nodes_[o].grad;
      auto& dt = grad_of(table.id);
      for (int r = 0; r < n; ++r) {
        const double* dyr = dy.data() + static_cast<size_t>(r) * m;
        for (int p = x.row_ptr[r]; p < x.row_ptr[r + 1]; ++p) {
          const double v = x.val[p];
          double* dtr = dt.data() + static_cast<size_t>(x.col[p]) * m;
          for (int j = 0; j < m; ++j) dtr[j] += v * dyr[j];
        }
      }
    };
  }
  return out;
}

Var Tape::gather_rows(Var a, std::vector<int> index) {
  const int m = cols(a), n = static_cast<int>(index.size());
  const double* src = data(a.id);
  std::vector<double> y(static_cast<size_t>(n) * m);
  for (int i = 0; i < n; ++i) {
    require(index[i] >= 0 && index[i] < rows(a), "gather index out of range");
    std::copy_n(src + static_cast<size_t>(index[i]) * m, m,
                y.data() + static_cast<size_t>(i) * m);
  }
  Var out = push(n, m, std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, a, idx = std::move(index), m] {
      const auto& dy = nodes_[o].grad;
      auto& da = grad_of(a.id);
      for (size_t i = 0; i < idx.size(); ++i) {
        for (int j = 0; j < m; ++j) {
          da[static_cast<size_t>(idx[i]) * m + j] += dy[i * m + j];
        }
      }
    };
  }
  return out;
}

Var Tape::add(Var a, Var b) {
  require(rows(a) == rows(b) && cols(a) == cols(b), "add shape mismatch");
  const size_t len = value(a).size();
  std::vector<double> y(len);
  const double* pa = data(a.id);
  const double* pb = data(b.id);
  for (size_t i = 0; i < len; ++i) y[i] = pa[i] + pb[i];
  Var out = push(rows(a), cols(a), std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, a, b, len] {
      const auto& dy = nodes_[o].grad;
      auto& da = grad_of(a.id);
      for (size_t i = 0; i < len; ++i) da[i] += dy[i];
      auto& db = grad_of(b.id);
      for (size_t i = 0; i < len; ++i) db[i] += dy[i];
    };
  }
  return out;
}

Var Tape::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Tape::add_row(Var a, Var row) {
  const int n = rows(a), m = cols(a);
  require(rows(row) == 1 && cols(row) == m, "add_row shape mismatch");
  std::vector<double> y(value(a).begin(), value(a).end());
  const double* pr = data(row.id);
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < m; ++j) y[static_cast<size_t>(r) * m + j] += pr[j];
  }
  Var out = push(n, m, std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, a, row, n, m] {
      const auto& dy = nodes_[o].grad;
      auto& da = grad_of(a.id);
      for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      auto& dr = grad_of(row.id);
      for (int r = 0; r < n; ++r) {
        for (int j = 0; j < m; ++j) dr[j] += dy[static_cast<size_t>(r) * m + j];
      }
    };
  }
  return out;
}

Var Tape::add_const(Var a, std::vector<double> c) {
  require(c.size() == value(a).size(), "add_const shape mismatch");
  const double* pa = data(a.id);
  for (size_t i = 0; i < c.size(); ++i) c[i] += pa[i];
  Var out = push(rows(a), cols(a), std::move(c));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, a] {
      const auto& dy = nodes_[o].grad;
      auto& da = grad_of(a.id);
      for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    };
  }
  return out;
}

Var Tape::mul_const(Var a, std::vector<double> c) {
  require(c.size() == value(a).size(), "mul_const shape mismatch");
  const double* pa = data(a.id);
  std::vector<double> y(c.size());
  for (size_t i = 0; i < c.size(); ++i) y[i] = pa[i] * c[i];
  Var out = push(rows(a), cols(a), std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, a, c = std::move(c)] {
      const auto& dy = nodes_[o].grad;
      auto& da = grad_of(a.id);
      for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * c[i];
    };
  }
  return out;
}

Var Tape::scale(Var a, double s) {
  return mul_const(a, std::vector<double>(value(a).size(), s));
}

Var Tape::relu(Var a) {
  const double* pa = data(a.id);
  const size_t len = value(a).size();
  std::vector<double> y(len);
  for (size_t i = 0; i < len; ++i) y[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  Var out = push(rows(a), cols(a), std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, a] {
      const auto& dy = nodes_[o].grad;
      const double* pa = data(a.id);
      auto& da = grad_of(a.id);
      for (size_t i = 0; i < dy.size(); ++i) {
        if (pa[i] > 0.0) da[i] += dy[i];
      }
    };
  }
  return out;
}

Var Tape::exp(Var a) {
  const double* pa = data(a.id);
  const size_t len = value(a).size();
  std::vector<double> y(len);
  for (size_t i = 0; i < len; ++i) y[i] = std::exp(pa[i]);
  Var out = push(rows(a), cols(a), std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, a] {
      const auto& dy = nodes_[o].grad;
      const auto& y = nodes_[o].val;
      auto& da = grad_of(a.id);
      for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * y[i];
    };
  }
  return out;
}

Var Tape::clamp(Var a, double lo, double hi) {
  const double* pa = data(a.id);
  const size_t len = value(a).size();
  std::vector<double> y(len);
  for (size_t i = 0; i < len; ++i) y[i] = std::clamp(pa[i], lo, hi);
  Var out = push(rows(a), cols(a), std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, a, lo, hi] {
      const auto& dy = nodes_[o].grad;
      const double* pa = data(a.id);
      auto& da = grad_of(a.id);
      for (size_t i = 0; i < dy.size(); ++i) {
        if (pa[i] > lo && pa[i] < hi) da[i] += dy[i];
      }
    };
  }
  return out;
}

Var Tape::minimum(Var a, Var b) {
  require(rows(a) == rows(b) && cols(a) == cols(b), "minimum shape mismatch");
  const double* pa = data(a.id);
  const double* pb = data(b.id);
  const size_t len = value(a).size();
  std::vector<double> y(len);
  for (size_t i = 0; i < len; ++i) y[i] = pa[i] <= pb[i] ? pa[i] : pb[i];
  Var out = push(rows(a), cols(a), std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, a, b] {
      const auto& dy = nodes_[o].grad;
      const double* pa = data(a.id);
      const double* pb = data(b.id);
      auto& da = grad_of(a.id);
      auto& db = grad_of(b.id);
      for (size_t i = 0; i < dy.size(); ++i) {
        if (pa[i] <= pb[i]) {
          da[i] += dy[i];
        } else {
          db[i] += dy[i];
        }
      }
    };
  }
  return out;
}

Var Tape::log_softmax(Var a) {
  const int n = rows(a), m = cols(a);
  const double* pa = data(a.id);
  std::vector<double> y(static_cast<size_t>(n) * m);
  for (int r = 0; r < n; ++r) {
    const double* ar = pa + static_cast<size_t>(r) * m;
    double* yr = y.data() + static_cast<size_t>(r) * m;
    const double mx = *std::max_element(ar, ar + m);
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += std::exp(ar[j] - mx);
    const double lse = mx + std::log(s);
    for (int j = 0; j < m; ++j) yr[j] = ar[j] - lse;
  }
  Var out = push(n, m, std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, a, n, m] {
      const auto& dy = nodes_[o].grad;
      const auto& y = nodes_[o].val;
      auto& da = grad_of(a.id);
      for (int r = 0; r < n; ++r) {
        const size_t base = static_cast<size_t>(r) * m;
        double gs = 0.0;
        for (int j = 0; j < m; ++j) gs += dy[base + j];
        for (int j = 0; j < m; ++j) {
          da[base + j] += dy[base + j] - std::exp(y[base + j]) * gs;
        }
      }
    };
  }
  return out;
}

Var Tape::pick(Var a, std::vector<int> cols_idx) {
  const int n = rows(a), m = cols(a);
  require(static_cast<int>(cols_idx.size()) == n, "pick needs one column per row");
  const double* pa = data(a.id);
  std::vector<double> y(n);
  for (int r = 0; r < n; ++r) {
    require(cols_idx[r] >= 0 && cols_idx[r] < m, "pick column out of range");
    y[r] = pa[static_cast<size_t>(r) * m + cols_idx[r]];
  }
  Var out = push(n, 1, std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, a, c = std::move(cols_idx), m] {
      const auto& dy = nodes_[o].grad;
      auto& da = grad_of(a.id);
      for (size_t r = 0; r < c.size(); ++r) da[r * m + c[r]] += dy[r];
    };
  }
  return out;
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : value(a)) s += v;
  Var out = push(1, 1, {s});
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, a] {
      const double g = nodes_[o].grad[0];
      for (double& d : grad_of(a.id)) d += g;
    };
  }
  return out;
}

Var Tape::mean(Var a) {
  const size_t len = value(a).size();
  require(len > 0, "mean of an empty value");
  return scale(sum(a), 1.0 / static_cast<double>(len));
}

Var Tape::grid_pool(Var z, int grid) {
  const int cells = grid * grid, c = cols(z);
  require(rows(z) % cells == 0, "grid_pool rows not a multiple of grid^2");
  const int batch = rows(z) / cells;
  const int width = c * (2 * grid + 1);
  const double* pz = data(z.id);
  std::vector<double> y(static_cast<size_t>(batch) * width, 0.0);
  for (int b = 0; b < batch; ++b) {
    double* yb = y.data() + static_cast<size_t>(b) * width;
    for (int cell = 0; cell < cells; ++cell) {
      const int row = cell / grid, col = cell % grid;
      const double* zc = pz + (static_cast<size_t>(b) * cells + cell) * c;
      for (int ch = 0; ch < c; ++ch) {
        yb[ch] += zc[ch];
        yb[c + ch * grid + row] += zc[ch];
        yb[c + c * grid + ch * grid + col] += zc[ch];
      }
    }
  }
  Var out = push(batch, width, std::move(y));
  if (requires_grad_) {
    const int o = out.id;
    nodes_[o].back = [this, o, z, grid, batch, cells, c, width] {
      const auto& dy = nodes_[o].grad;
      auto& dz = grad_of(z.id);
      for (int b = 0; b < batch; ++b) {
        const double* gb = dy.data() + static_cast<size_t>(b) * width;
        for (int cell = 0; cell < cells; ++cell) {
          const int row = cell / grid, col = cell % grid;
          double* dc = dz.data() + (static_cast<size_t>(b) * cells + cell) * c;
          for (int ch = 0; ch < c; ++ch) {
            dc[ch] += gb[ch] + gb[c + ch * grid + row] +
                      gb[c + c * grid + ch * grid + col];
          }
        }
      }
    };
  }
  return out;
}

void Tape::backward(Var loss, std::span<double> grad) {
  require(requires_grad_, "backward on a tape built without gradients");
  require(rows(loss) == 1 && cols(loss) == 1, "loss must be a scalar");
  require(grad.size() == params_.size(), "gradient length mismatch");
  if (!std::isfinite(scalar(loss))) {
    throw std::domain_error("non-finite loss");
  }
  for (auto& n : nodes_) n.grad.clear();
  grad_of(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.back) n.back();
    if (n.param_offset >= 0) {
      double* g = grad.data() + n.param_offset;
      for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
  }
}

}  // namespace sctune::ad
