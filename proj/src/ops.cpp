#include "mlt/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

#include "mlt/errors.hpp"

namespace mlt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::size_t normalize_axis(int axis, std::size_t rank, const Shape& shape) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  }
  return static_cast<std::size_t>(a);
}

// For every flat index of `to`, the flat index of `from` it reads under
// broadcasting. `from` must broadcast to `to`.
std::vector<std::size_t> broadcast_map(const Shape& from, const Shape& to) {
  const std::size_t r = to.size();
  const std::size_t offset = r - from.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = from.size(); i-- > 0;) {
    if (from[i] != 1) stride[i + offset] = s;
    s *= from[i];
  }
  const std::size_t n = shape_numel(to);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += stride[ax];
      if (idx[ax] < to[ax]) break;
      src -= stride[ax] * to[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

// How one operand's flat index follows the output's: identical, periodic
// (operand shape is a suffix of the output shape, leading 1s ignored, so
// index = i mod period), or an explicit table.
struct OperandMap {
  std::size_t period = 0;  // 0 = identity
  std::vector<std::size_t> table;

  std::size_t operator()(std::size_t i) const {
    if (!table.empty()) return table[i];
    return period == 0 ? i : i % period;
  }
};

OperandMap operand_map(const Shape& from, const Shape& to) {
  OperandMap m;
  if (from == to) return m;
  std::size_t lead = 0;
  while (lead < from.size() && from[lead] == 1) ++lead;
  const std::size_t tail = from.size() - lead;
  if (std::equal(from.begin() + lead, from.end(), to.end() - tail)) {
    m.period = std::max<std::size_t>(shape_numel(from), 1);
    if (m.period == shape_numel(to)) m.period = 0;
    return m;
  }
  m.table = broadcast_map(from, to);
  return m;
}

struct BroadcastPlan {
  Shape out;
  OperandMap a;
  OperandMap b;
};

BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b) {
  BroadcastPlan plan;
  plan.out = broadcast_shape(a.shape(), b.shape());
  plan.a = operand_map(a.shape(), plan.out);
  plan.b = operand_map(b.shape(), plan.out);
  return plan;
}

// Calls fn(i, ia, ib) for every output index, avoiding per-element division
// in the identity and single-periodic cases.
template <class Fn>
void for_each_index(const BroadcastPlan& p, std::size_t n, Fn&& fn) {
  if (p.a.table.empty() && p.b.table.empty()) {
    const std::size_t pa = p.a.period;
    const std::size_t pb = p.b.period;
    if (pa == 0 && pb == 0) {
      for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
      return;
    }
    if (pa == 0) {
      for (std::size_t base = 0; base < n; base += pb) {
        for (std::size_t j = 0; j < pb; ++j) fn(base + j, base + j, j);
      }
      return;
    }
    if (pb == 0) {
      for (std::size_t base = 0; base < n; base += pa) {
        for (std::size_t j = 0; j < pa; ++j) fn(base + j, j, base + j);
      }
      return;
    }
  }
  for (std::size_t i = 0; i < n; ++i) fn(i, p.a(i), p.b(i));
}

// f(x, y) forward; da(x, y, out) and db(x, y, out) are partial derivatives.
template <class F, class Da, class Db>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, Da da, Db db) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a, b));
  const std::size_t n = shape_numel(plan->out);
  std::vector<double> out(n);
  const double* av = a.data().data();
  const double* bv = b.data().data();
  double* o = out.data();
  for_each_index(*plan, n, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = f(av[ia], bv[ib]); });
  return make_op(name, plan->out, std::move(out), {a, b}, [a, b, plan, da, db](const Node& node) {
    const double* av = a.data().data();
    const double* bv = b.data().data();
    const double* g = node.grad.data();
    const double* y = node.data.data();
    const std::size_t n = node.data.size();
    if (a.requires_grad()) {
      double* ga = a.grad_accumulator().data();
      for_each_index(*plan, n, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        ga[ia] += g[i] * da(av[ia], bv[ib], y[i]);
      });
    }
    if (b.requires_grad()) {
      double* gb = b.grad_accumulator().data();
      for_each_index(*plan, n, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        gb[ib] += g[i] * db(av[ia], bv[ib], y[i]);
      });
    }
  });
}

// f(x) forward; df(x, y) derivative given input and output.
template <class F, class Df>
Tensor unary_op(const char* name, const Tensor& x, F f, Df df) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_op(name, x.shape(), std::move(out), {x}, [x, df](const Node& node) {
    auto gx = x.grad_accumulator();
    const auto xv = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i] * df(xv[i], node.data[i]);
  });
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(
      "scale", x, [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary_op(
      "add_scalar", x, [value](double v) { return v + value; },
      [](double, double) { return 1.0; });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape) != shape) {
    throw ShapeError("cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  auto map = std::make_shared<std::vector<std::size_t>>(broadcast_map(x.shape(), shape));
  const auto xv = x.data();
  std::vector<double> out(map->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*map)[i]];
  return make_op("broadcast_to", shape, std::move(out), {x}, [x, map](const Node& node) {
    auto gx = x.grad_accumulator();
    for (std::size_t i = 0; i < map->size(); ++i) gx[(*map)[i]] += node.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t n = b.dim(-1);
  if (b.dim(-2) != k) {
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Shape out_batch;
  try {
    out_batch = broadcast_shape(a_batch, b_batch);
  } catch (const ShapeError&) {
    throw ShapeError("matmul batch extents do not broadcast: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  // A single GEMM covers the common [.., m, k] x [k, n] case.
  const bool flat = b_batch.empty() && a_batch == out_batch;
  const std::size_t batches = shape_numel(out_batch);
  auto a_map = std::make_shared<std::vector<std::size_t>>();
  auto b_map = std::make_shared<std::vector<std::size_t>>();
  if (!flat) {
    *a_map = broadcast_map(a_batch, out_batch);
    *b_map = broadcast_map(b_batch, out_batch);
  }

  std::vector<double> out(batches * m * n);
  if (flat) {
    MatMap(out.data(), batches * m, n).noalias() =
        ConstMatMap(a.data().data(), batches * m, k) * ConstMatMap(b.data().data(), k, n);
  } else {
    for (std::size_t i = 0; i < batches; ++i) {
      MatMap(out.data() + i * m * n, m, n).noalias() =
          ConstMatMap(a.data().data() + (*a_map)[i] * m * k, m, k) *
          ConstMatMap(b.data().data() + (*b_map)[i] * k * n, k, n);
    }
  }

  return make_op("matmul", std::move(out_shape), std::move(out), {a, b},
                 [a, b, a_map, b_map, flat, batches, m, k, n](const Node& node) {
                   const double* g = node.grad.data();
                   if (flat) {
                     ConstMatMap gm(g, batches * m, n);
                     if (a.requires_grad()) {
                       MatMap(a.grad_accumulator().data(), batches * m, k).noalias() +=
                           gm * ConstMatMap(b.data().data(), k, n).transpose();
                     }
                     if (b.requires_grad()) {
                       MatMap(b.grad_accumulator().data(), k, n).noalias() +=
                           ConstMatMap(a.data().data(), batches * m, k).transpose() * gm;
                     }
                     return;
                   }
                   for (std::size_t i = 0; i < batches; ++i) {
                     ConstMatMap gm(g + i * m * n, m, n);
                     const std::size_t ia = (*a_map)[i] * m * k;
                     const std::size_t ib = (*b_map)[i] * k * n;
                     if (a.requires_grad()) {
                       MatMap(a.grad_accumulator().data() + ia, m, k).noalias() +=
                           gm * ConstMatMap(b.data().data() + ib, k, n).transpose();
                     }
                     if (b.requires_grad()) {
                       MatMap(b.grad_accumulator().data() + ib, k, n).noalias() +=
                           ConstMatMap(a.data().data() + ia, m, k).transpose() * gm;
                     }
                   }
                 });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(-2);
  const std::size_t c = x.dim(-1);
  const std::size_t batches = x.numel() / (r * c);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t base = b * r * c;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[base + j * r + i] = xv[base + i * c + j];
    }
  }
  return make_op("transpose", std::move(shape), std::move(out), {x}, [x, r, c, batches](const Node& node) {
    auto gx = x.grad_accumulator();
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t base = b * r * c;
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[base + i * c + j] += node.grad[base + j * r + i];
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  const auto xv = x.data();
  return make_op("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                 [x](const Node& node) {
                   auto gx = x.grad_accumulator();
                   for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i];
                 });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size(), first);
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const Tensor& p : parts) {
    bool compatible = p.rank() == first.size();
    for (std::size_t i = 0; compatible && i < first.size(); ++i) {
      if (i != ax && p.shape()[i] != first[i]) compatible = false;
    }
    if (!compatible) {
      throw ShapeError("concat along axis " + std::to_string(axis) + " of incompatible shapes " +
                       shape_str(first) + " and " + shape_str(p.shape()));
    }
    out_shape[ax] += p.shape()[ax];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t row = out_shape[ax] * inner;

  std::vector<double> out(outer * row);
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::size_t offset = 0;
  for (const Tensor& p : inputs) {
    const std::size_t chunk = p.shape()[ax] * inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + o * chunk, chunk, out.begin() + o * row + offset);
    }
    offset += chunk;
  }
  return make_op("concat", std::move(out_shape), std::move(out), inputs,
                 [inputs, ax, outer, inner, row](const Node& node) {
                   std::size_t offset = 0;
                   for (const Tensor& p : inputs) {
                     const std::size_t chunk = p.shape()[ax] * inner;
                     if (p.requires_grad()) {
                       auto gp = p.grad_accumulator();
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t j = 0; j < chunk; ++j) {
                           gp[o * chunk + j] += node.grad[o * row + offset + j];
                         }
                       }
                     }
                     offset += chunk;
                   }
                 });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, x.rank(), x.shape());
  if (length == 0 || start + length > x.shape()[ax]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= x.shape()[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t row = x.shape()[ax] * inner;
  const std::size_t chunk = length * inner;
  const std::size_t offset = start * inner;
  Shape shape = x.shape();
  shape[ax] = length;
  const auto xv = x.data();
  std::vector<double> out(outer * chunk);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + o * row + offset, chunk, out.begin() + o * chunk);
  }
  return make_op("slice", std::move(shape), std::move(out), {x},
                 [x, outer, row, chunk, offset](const Node& node) {
                   auto gx = x.grad_accumulator();
                   for (std::size_t o = 0; o < outer; ++o) {
                     for (std::size_t j = 0; j < chunk; ++j) {
                       gx[o * row + offset + j] += node.grad[o * chunk + j];
                     }
                   }
                 });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_op("sum", Shape{}, {total}, {x}, [x](const Node& node) {
    auto gx = x.grad_accumulator();
    for (double& g : gx) g += node.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), x.shape());
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= x.shape()[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t n = x.shape()[ax];
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  const auto xv = x.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * n + j) * inner + i];
    }
  }
  return make_op("sum_axis", std::move(shape), std::move(out), {x},
                 [x, outer, inner, n](const Node& node) {
                   auto gx = x.grad_accumulator();
                   for (std::size_t o = 0; o < outer; ++o) {
                     for (std::size_t j = 0; j < n; ++j) {
                       for (std::size_t i = 0; i < inner; ++i) {
                         gx[(o * n + j) * inner + i] += node.grad[o * inner + i];
                       }
                     }
                   }
                 });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  if (table.rank() != 2) throw ShapeError("gather_rows needs a rank-2 table, got " + shape_str(table.shape()));
  if (indices.empty()) throw ShapeError("gather_rows with no indices");
  const std::size_t rows = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const auto tv = table.data();
  std::vector<double> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= rows) {
      throw ShapeError("row index " + std::to_string(idx[r]) + " out of range for table " +
                       shape_str(table.shape()));
    }
    std::copy_n(tv.begin() + idx[r] * d, d, out.begin() + r * d);
  }
  return make_op("gather_rows", Shape{idx.size(), d}, std::move(out), {table},
                 [table, idx, d](const Node& node) {
                   auto gt = table.grad_accumulator();
                   for (std::size_t r = 0; r < idx.size(); ++r) {
                     for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += node.grad[r * d + j];
                   }
                 });
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax needs rank >= 1");
  const std::size_t n = x.dim(-1);
  const std::size_t rows = x.numel() / n;
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(in[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  return make_op("softmax", x.shape(), std::move(out), {x}, [x, n, rows](const Node& node) {
    auto gx = x.grad_accumulator();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = node.data.data() + r * n;
      const double* g = node.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("layer_norm eps must be positive");
  if (x.rank() == 0) throw ShapeError("layer_norm needs rank >= 1");
  const std::size_t d = x.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm over " + shape_str(x.shape()) + " needs gamma/beta of shape [" +
                     std::to_string(d) + "], got " + shape_str(gamma.shape()) + " and " +
                     shape_str(beta.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mu) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return make_op("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                 [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), d,
                  rows](const Node& node) {
                   const auto gv = gamma.data();
                   if (x.requires_grad()) {
                     auto gx = x.grad_accumulator();
                     std::vector<double> gh(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double m1 = 0.0;
                       double m2 = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         gh[j] = node.grad[r * d + j] * gv[j];
                         m1 += gh[j];
                         m2 += gh[j] * xhat[r * d + j];
                       }
                       m1 /= static_cast<double>(d);
                       m2 /= static_cast<double>(d);
                       for (std::size_t j = 0; j < d; ++j) {
                         gx[r * d + j] += inv_std[r] * (gh[j] - m1 - xhat[r * d + j] * m2);
                       }
                     }
                   }
                   if (gamma.requires_grad()) {
                     auto gg = gamma.grad_accumulator();
                     for (std::size_t i = 0; i < rows * d; ++i) gg[i % d] += node.grad[i] * xhat[i];
                   }
                   if (beta.requires_grad()) {
                     auto gb = beta.grad_accumulator();
                     for (std::size_t i = 0; i < rows * d; ++i) gb[i % d] += node.grad[i];
                   }
                 });
}

Tensor gelu(const Tensor& x) {
  const auto xv = x.data();
  std::vector<double> cdf(xv.size());
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    cdf[i] = normal_cdf(xv[i]);
    out[i] = xv[i] * cdf[i];
  }
  return make_op("gelu", x.shape(), std::move(out), {x}, [x, cdf = std::move(cdf)](const Node& node) {
    auto gx = x.grad_accumulator();
    const auto xv = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i] * (cdf[i] + xv[i] * normal_pdf(xv[i]));
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw std::domain_error("log of non-positive value " + std::to_string(v));
  }
  return unary_op(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp bounds out of order");
  return unary_op(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  // Each 64-bit draw decides two elements: an element is dropped when its
  // 32-bit half falls below rate * 2^32.
  const auto cut = static_cast<std::uint64_t>(std::llround(std::ldexp(rate, 32)));
  const auto xv = x.data();
  std::vector<std::uint8_t> keep(xv.size());
  std::vector<double> out(xv.size());
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (i % 2 == 0) bits = rng();
    const std::uint64_t half = i % 2 == 0 ? (bits & 0xFFFFFFFFULL) : (bits >> 32);
    keep[i] = half >= cut;
    out[i] = keep[i] ? xv[i] * keep_scale : 0.0;
  }
  return make_op("dropout", x.shape(), std::move(out), {x},
                 [x, keep = std::move(keep), keep_scale](const Node& node) {
                   auto gx = x.grad_accumulator();
                   for (std::size_t i = 0; i < gx.size(); ++i) {
                     if (keep[i]) gx[i] += node.grad[i] * keep_scale;
                   }
                 });
}

}  // namespace mlt
