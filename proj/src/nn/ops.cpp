#include <dip/nn/ops.hpp>

#include <cmath>

namespace dip::nn {

namespace {

using RowMap = Eigen::Map<RowMatrixXd>;
using ConstRowMap = Eigen::Map<const RowMatrixXd>;

ConstRowMap rows_of(const VectorXd& v, Index rows, Index cols) { return {v.data(), rows, cols}; }
RowMap rows_of(VectorXd& v, Index rows, Index cols) { return {v.data(), rows, cols}; }

VectorXd* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

[[noreturn]] void mismatch(const std::string& op, const Var& a, const Var& b) {
  throw ShapeMismatch(op + ": incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

void require_rank(const std::string& op, const Var& x, std::size_t rank) {
  if (x.shape().size() != rank)
    throw ShapeMismatch(op + ": expected rank " + std::to_string(rank) + ", got " + shape_string(x.shape()));
}

VectorXd flatten(const RowMatrixXd& m) { return Eigen::Map<const VectorXd>(m.data(), m.size()); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) mismatch("add", a, b);
  return make_result(a.shape(), a.value() + b.value(), {a, b}, [](Node& self) {
    if (auto* g = grad_of(self, 0)) *g += self.grad;
    if (auto* g = grad_of(self, 1)) *g += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) mismatch("sub", a, b);
  return make_result(a.shape(), a.value() - b.value(), {a, b}, [](Node& self) {
    if (auto* g = grad_of(self, 0)) *g += self.grad;
    if (auto* g = grad_of(self, 1)) *g -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) mismatch("mul", a, b);
  return make_result(a.shape(), a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = grad_of(self, 0)) *g += self.grad.cwiseProduct(bv);
    if (auto* g = grad_of(self, 1)) *g += self.grad.cwiseProduct(av);
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.shape(), s * a.value(), {a}, [s](Node& self) {
    if (auto* g = grad_of(self, 0)) *g += s * self.grad;
  });
}

Var add_scalar(const Var& a, double s) {
  return make_result(a.shape(), a.value().array() + s, {a}, [](Node& self) {
    if (auto* g = grad_of(self, 0)) *g += self.grad;
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) mismatch("matmul", a, b);
  const Index n = a.dim(0), k = a.dim(1), m = b.dim(1);
  const RowMatrixXd c = rows_of(a.value(), n, k) * rows_of(b.value(), k, m);
  return make_result({n, m}, flatten(c), {a, b}, [n, k, m](Node& self) {
    const auto dc = rows_of(self.grad, n, m);
    if (auto* g = grad_of(self, 0)) rows_of(*g, n, k).noalias() += dc * rows_of(self.parents[1]->value, k, m).transpose();
    if (auto* g = grad_of(self, 1)) rows_of(*g, k, m).noalias() += rows_of(self.parents[0]->value, n, k).transpose() * dc;
  });
}

Var dense(const Var& x, const Var& w, const Var& b) {
  require_rank("dense", x, 2);
  require_rank("dense", w, 2);
  if (x.dim(1) != w.dim(0)) mismatch("dense", x, w);
  const Index n = x.dim(0), in = x.dim(1), out = w.dim(1);
  RowMatrixXd y = rows_of(x.value(), n, in) * rows_of(w.value(), in, out);
  std::vector<Var> parents{x, w};
  if (b.defined()) {
    if (b.size() != out) mismatch("dense bias", w, b);
    y.rowwise() += b.value().transpose();
    parents.push_back(b);
  }
  return make_result({n, out}, flatten(y), parents, [n, in, out](Node& self) {
    const auto dy = rows_of(self.grad, n, out);
    if (auto* g = grad_of(self, 0)) rows_of(*g, n, in).noalias() += dy * rows_of(self.parents[1]->value, in, out).transpose();
    if (auto* g = grad_of(self, 1)) rows_of(*g, in, out).noalias() += rows_of(self.parents[0]->value, n, in).transpose() * dy;
    if (self.parents.size() > 2)
      if (auto* g = grad_of(self, 2)) *g += dy.colwise().sum().transpose();
  });
}

Var silu(const Var& x) {
  const VectorXd y = x.value().unaryExpr([](double v) { return v * sigmoid(v); });
  return make_result(x.shape(), y, {x}, [](Node& self) {
    const auto& xv = self.parents[0]->value;
    if (auto* g = grad_of(self, 0))
      *g += self.grad.cwiseProduct(xv.unaryExpr([](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      }));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank("layer_norm", x, 2);
  const Index n = x.dim(0), m = x.dim(1);
  if (gamma.defined() && gamma.size() != m) mismatch("layer_norm gamma", x, gamma);
  if (beta.defined() && beta.size() != m) mismatch("layer_norm beta", x, beta);
  const auto xv = rows_of(x.value(), n, m);
  RowMatrixXd xhat(n, m);
  VectorXd rstd(n);
  for (Index r = 0; r < n; ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    rstd(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * rstd(r);
  }
  RowMatrixXd y = xhat;
  std::vector<Var> parents{x};
  const bool has_gamma = gamma.defined(), has_beta = beta.defined();
  if (has_gamma) {
    y.array().rowwise() *= gamma.value().transpose().array();
    parents.push_back(gamma);
  }
  if (has_beta) {
    y.rowwise() += beta.value().transpose();
    parents.push_back(beta);
  }
  return make_result({n, m}, flatten(y), parents, [n, m, xhat, rstd, has_gamma, has_beta](Node& self) {
    const auto dy = rows_of(self.grad, n, m);
    RowMatrixXd dxhat = dy;
    if (has_gamma) dxhat.array().rowwise() *= self.parents[1]->value.transpose().array();
    if (auto* g = grad_of(self, 0)) {
      auto dx = rows_of(*g, n, m);
      for (Index r = 0; r < n; ++r) {
        const double mean_d = dxhat.row(r).mean();
        const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(m);
        dx.row(r).array() += rstd(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
      }
    }
    std::size_t next = 1;
    if (has_gamma) {
      if (auto* g = grad_of(self, next)) *g += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
      ++next;
    }
    if (has_beta)
      if (auto* g = grad_of(self, next)) *g += dy.colwise().sum().transpose();
  });
}

Var add_group(const Var& x, const Var& e) {
  require_rank("add_group", x, 2);
  require_rank("add_group", e, 2);
  const Index groups = e.dim(0), m = e.dim(1);
  if (m != x.dim(1) || groups == 0 || x.dim(0) % groups != 0) mismatch("add_group", x, e);
  const Index r = x.dim(0) / groups;
  VectorXd y = x.value();
  auto ym = rows_of(y, x.dim(0), m);
  const auto em = rows_of(e.value(), groups, m);
  for (Index g = 0; g < groups; ++g) ym.middleRows(g * r, r).rowwise() += em.row(g);
  return make_result(x.shape(), std::move(y), {x, e}, [groups, r, m](Node& self) {
    if (auto* g = grad_of(self, 0)) *g += self.grad;
    if (auto* g = grad_of(self, 1)) {
      const auto dy = rows_of(self.grad, groups * r, m);
      auto de = rows_of(*g, groups, m);
      for (Index i = 0; i < groups; ++i) de.row(i) += dy.middleRows(i * r, r).colwise().sum();
    }
  });
}

Var mul_group(const Var& x, const Var& e) {
  require_rank("mul_group", x, 2);
  require_rank("mul_group", e, 2);
  const Index groups = e.dim(0), m = e.dim(1);
  if (m != x.dim(1) || groups == 0 || x.dim(0) % groups != 0) mismatch("mul_group", x, e);
  const Index r = x.dim(0) / groups;
  VectorXd y = x.value();
  auto ym = rows_of(y, x.dim(0), m);
  const auto em = rows_of(e.value(), groups, m);
  for (Index g = 0; g < groups; ++g) ym.middleRows(g * r, r).array().rowwise() *= em.row(g).array();
  return make_result(x.shape(), std::move(y), {x, e}, [groups, r, m](Node& self) {
    const auto dy = rows_of(self.grad, groups * r, m);
    const auto xv = rows_of(self.parents[0]->value, groups * r, m);
    const auto ev = rows_of(self.parents[1]->value, groups, m);
    if (auto* g = grad_of(self, 0)) {
      auto dx = rows_of(*g, groups * r, m);
      for (Index i = 0; i < groups; ++i)
        dx.middleRows(i * r, r).array() += dy.middleRows(i * r, r).array().rowwise() * ev.row(i).array();
    }
    if (auto* g = grad_of(self, 1)) {
      auto de = rows_of(*g, groups, m);
      for (Index i = 0; i < groups; ++i)
        de.row(i) += (dy.middleRows(i * r, r).array() * xv.middleRows(i * r, r).array()).colwise().sum().matrix();
    }
  });
}

Var add_tiled(const Var& x, const Var& p) {
  require_rank("add_tiled", x, 2);
  require_rank("add_tiled", p, 2);
  const Index r = p.dim(0), m = p.dim(1);
  if (m != x.dim(1) || r == 0 || x.dim(0) % r != 0) mismatch("add_tiled", x, p);
  const Index groups = x.dim(0) / r;
  VectorXd y = x.value();
  auto ym = rows_of(y, x.dim(0), m);
  const auto pm = rows_of(p.value(), r, m);
  for (Index g = 0; g < groups; ++g) ym.middleRows(g * r, r) += pm;
  return make_result(x.shape(), std::move(y), {x, p}, [groups, r, m](Node& self) {
    if (auto* g = grad_of(self, 0)) *g += self.grad;
    if (auto* g = grad_of(self, 1)) {
      const auto dy = rows_of(self.grad, groups * r, m);
      auto dp = rows_of(*g, r, m);
      for (Index i = 0; i < groups; ++i) dp += dy.middleRows(i * r, r);
    }
  });
}

Var slice_cols(const Var& x, Index begin, Index count) {
  require_rank("slice_cols", x, 2);
  const Index n = x.dim(0), m = x.dim(1);
  if (begin < 0 || count < 0 || begin + count > m)
    throw ShapeMismatch("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                        ") outside " + shape_string(x.shape()));
  const RowMatrixXd y = rows_of(x.value(), n, m).middleCols(begin, count);
  return make_result({n, count}, flatten(y), {x}, [n, m, begin, count](Node& self) {
    if (auto* g = grad_of(self, 0)) rows_of(*g, n, m).middleCols(begin, count) += rows_of(self.grad, n, count);
  });
}

Var embedding(const Var& table, std::span<const Index> rows) {
  require_rank("embedding", table, 2);
  const Index k = table.dim(0), m = table.dim(1), n = static_cast<Index>(rows.size());
  std::vector<Index> idx(rows.begin(), rows.end());
  RowMatrixXd y(n, m);
  const auto tm = rows_of(table.value(), k, m);
  for (Index i = 0; i < n; ++i) {
    if (idx[i] < 0 || idx[i] >= k)
      throw InvalidParameter("embedding: row " + std::to_string(idx[i]) + " outside table of " + std::to_string(k));
    y.row(i) = tm.row(idx[i]);
  }
  return make_result({n, m}, flatten(y), {table}, [idx, k, m](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      auto dt = rows_of(*g, k, m);
      const auto dy = rows_of(self.grad, static_cast<Index>(idx.size()), m);
      for (std::size_t i = 0; i < idx.size(); ++i) dt.row(idx[i]) += dy.row(static_cast<Index>(i));
    }
  });
}

namespace {

struct AttentionShape {
  Index groups, heads, len, d, dh;
};

AttentionShape attention_shape(const Var& q, const Var& k, const Var& v, Index groups, Index heads) {
  require_rank("attention", q, 2);
  if (k.shape() != q.shape()) mismatch("attention (q, k)", q, k);
  if (v.shape() != q.shape()) mismatch("attention (q, v)", q, v);
  const Index n = q.dim(0), d = q.dim(1);
  if (groups <= 0 || n % groups != 0)
    throw ShapeMismatch("attention: " + std::to_string(n) + " rows not divisible into " + std::to_string(groups) + " groups");
  if (heads <= 0 || d % heads != 0)
    throw ShapeMismatch("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  return {groups, heads, n / groups, d, d / heads};
}

std::vector<MatrixXd> softmax_weights(const VectorXd& qv, const VectorXd& kv, const AttentionShape& s) {
  const auto qm = rows_of(qv, s.groups * s.len, s.d);
  const auto km = rows_of(kv, s.groups * s.len, s.d);
  const double inv = 1.0 / std::sqrt(static_cast<double>(s.dh));
  std::vector<MatrixXd> out(static_cast<std::size_t>(s.groups * s.heads));
  for (Index g = 0; g < s.groups; ++g)
    for (Index h = 0; h < s.heads; ++h) {
      MatrixXd scores = inv * qm.block(g * s.len, h * s.dh, s.len, s.dh) * km.block(g * s.len, h * s.dh, s.len, s.dh).transpose();
      for (Index r = 0; r < s.len; ++r) {
        const double mx = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - mx).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      out[static_cast<std::size_t>(g * s.heads + h)] = std::move(scores);
    }
  return out;
}

}  // namespace

Tensor attention_weights(const Var& q, const Var& k, Index groups, Index heads) {
  const auto s = attention_shape(q, k, q, groups, heads);
  const auto weights = softmax_weights(q.value(), k.value(), s);
  Tensor out = Tensor::zeros({s.groups, s.heads, s.len, s.len});
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const RowMatrixXd w = weights[i];
    out.data.segment(static_cast<Index>(i) * s.len * s.len, s.len * s.len) = flatten(w);
  }
  return out;
}

Var attention(const Var& q, const Var& k, const Var& v, Index groups, Index heads) {
  const auto s = attention_shape(q, k, v, groups, heads);
  auto weights = std::make_shared<std::vector<MatrixXd>>(softmax_weights(q.value(), k.value(), s));
  const auto vm = rows_of(v.value(), s.groups * s.len, s.d);
  RowMatrixXd out(s.groups * s.len, s.d);
  for (Index g = 0; g < s.groups; ++g)
    for (Index h = 0; h < s.heads; ++h)
      out.block(g * s.len, h * s.dh, s.len, s.dh) =
          (*weights)[static_cast<std::size_t>(g * s.heads + h)] * vm.block(g * s.len, h * s.dh, s.len, s.dh);
  return make_result(q.shape(), flatten(out), {q, k, v}, [s, weights](Node& self) {
    const Index n = s.groups * s.len;
    const auto dout = rows_of(self.grad, n, s.d);
    const auto qm = rows_of(self.parents[0]->value, n, s.d);
    const auto km = rows_of(self.parents[1]->value, n, s.d);
    const auto vm = rows_of(self.parents[2]->value, n, s.d);
    VectorXd* gq = grad_of(self, 0);
    VectorXd* gk = grad_of(self, 1);
    VectorXd* gv = grad_of(self, 2);
    const double inv = 1.0 / std::sqrt(static_cast<double>(s.dh));
    for (Index g = 0; g < s.groups; ++g)
      for (Index h = 0; h < s.heads; ++h) {
        const MatrixXd& a = (*weights)[static_cast<std::size_t>(g * s.heads + h)];
        const auto dO = dout.block(g * s.len, h * s.dh, s.len, s.dh);
        if (gv) rows_of(*gv, n, s.d).block(g * s.len, h * s.dh, s.len, s.dh) += a.transpose() * dO;
        if (!gq && !gk) continue;
        const MatrixXd da = dO * vm.block(g * s.len, h * s.dh, s.len, s.dh).transpose();
        const VectorXd rowdot = (da.array() * a.array()).rowwise().sum();
        const MatrixXd ds = inv * (a.array() * (da.colwise() - rowdot).array()).matrix();
        if (gq) rows_of(*gq, n, s.d).block(g * s.len, h * s.dh, s.len, s.dh) += ds * km.block(g * s.len, h * s.dh, s.len, s.dh);
        if (gk)
          rows_of(*gk, n, s.d).block(g * s.len, h * s.dh, s.len, s.dh) += ds.transpose() * qm.block(g * s.len, h * s.dh, s.len, s.dh);
      }
  });
}

namespace {

struct ConvGeometry {
  Index batch, in_ch, height, width, out_ch, kernel, pad, out_h, out_w;
  Index patch_rows() const { return in_ch * kernel * kernel; }
  Index pixels() const { return out_h * out_w; }
};

MatrixXd im2col(const VectorXd& x, const ConvGeometry& g) {
  MatrixXd cols = MatrixXd::Zero(g.patch_rows(), g.batch * g.pixels());
  for (Index b = 0; b < g.batch; ++b)
    for (Index c = 0; c < g.in_ch; ++c)
      for (Index ky = 0; ky < g.kernel; ++ky)
        for (Index kx = 0; kx < g.kernel; ++kx) {
          const Index row = (c * g.kernel + ky) * g.kernel + kx;
          for (Index oy = 0; oy < g.out_h; ++oy) {
            const Index iy = oy + ky - g.pad;
            if (iy < 0 || iy >= g.height) continue;
            for (Index ox = 0; ox < g.out_w; ++ox) {
              const Index ix = ox + kx - g.pad;
              if (ix < 0 || ix >= g.width) continue;
              cols(row, b * g.pixels() + oy * g.out_w + ox) = x(((b * g.in_ch + c) * g.height + iy) * g.width + ix);
            }
          }
        }
  return cols;
}

void col2im_add(const MatrixXd& cols, const ConvGeometry& g, VectorXd& dx) {
  for (Index b = 0; b < g.batch; ++b)
    for (Index c = 0; c < g.in_ch; ++c)
      for (Index ky = 0; ky < g.kernel; ++ky)
        for (Index kx = 0; kx < g.kernel; ++kx) {
          const Index row = (c * g.kernel + ky) * g.kernel + kx;
          for (Index oy = 0; oy < g.out_h; ++oy) {
            const Index iy = oy + ky - g.pad;
            if (iy < 0 || iy >= g.height) continue;
            for (Index ox = 0; ox < g.out_w; ++ox) {
              const Index ix = ox + kx - g.pad;
              if (ix < 0 || ix >= g.width) continue;
              dx(((b * g.in_ch + c) * g.height + iy) * g.width + ix) += cols(row, b * g.pixels() + oy * g.out_w + ox);
            }
          }
        }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, Index pad) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", w, 4);
  if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) mismatch("conv2d", x, w);
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), pad, 0, 0};
  g.out_h = g.height + 2 * pad - g.kernel + 1;
  g.out_w = g.width + 2 * pad - g.kernel + 1;
  if (pad < 0 || g.out_h <= 0 || g.out_w <= 0) mismatch("conv2d (kernel larger than padded input)", x, w);
  if (bias.defined() && bias.size() != g.out_ch) mismatch("conv2d bias", w, bias);

  auto cols = std::make_shared<MatrixXd>(im2col(x.value(), g));
  const auto wm = rows_of(w.value(), g.out_ch, g.patch_rows());
  MatrixXd y = wm * *cols;
  if (bias.defined()) y.colwise() += bias.value();
  VectorXd out(g.batch * g.out_ch * g.pixels());
  for (Index b = 0; b < g.batch; ++b)
    for (Index o = 0; o < g.out_ch; ++o)
      out.segment((b * g.out_ch + o) * g.pixels(), g.pixels()) = y.row(o).segment(b * g.pixels(), g.pixels()).transpose();

  std::vector<Var> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_result({g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), parents, [g, cols](Node& self) {
    MatrixXd dy(g.out_ch, g.batch * g.pixels());
    for (Index b = 0; b < g.batch; ++b)
      for (Index o = 0; o < g.out_ch; ++o)
        dy.row(o).segment(b * g.pixels(), g.pixels()) = self.grad.segment((b * g.out_ch + o) * g.pixels(), g.pixels()).transpose();
    if (auto* gw = grad_of(self, 1)) rows_of(*gw, g.out_ch, g.patch_rows()).noalias() += dy * cols->transpose();
    if (self.parents.size() > 2)
      if (auto* gb = grad_of(self, 2)) *gb += dy.rowwise().sum();
    if (auto* gx = grad_of(self, 0)) {
      const MatrixXd dcols = rows_of(self.parents[1]->value, g.out_ch, g.patch_rows()).transpose() * dy;
      col2im_add(dcols, g, *gx);
    }
  });
}

Var avg_pool2d(const Var& x, Index factor) {
  require_rank("avg_pool2d", x, 4);
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (factor <= 0 || h % factor != 0 || w % factor != 0)
    throw ShapeMismatch("avg_pool2d: " + shape_string(x.shape()) + " not divisible by " + std::to_string(factor));
  const Index oh = h / factor, ow = w / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  VectorXd y = VectorXd::Zero(b * c * oh * ow);
  const auto& xv = x.value();
  for (Index p = 0; p < b * c; ++p)
    for (Index iy = 0; iy < h; ++iy)
      for (Index ix = 0; ix < w; ++ix) y((p * oh + iy / factor) * ow + ix / factor) += inv * xv((p * h + iy) * w + ix);
  return make_result({b, c, oh, ow}, std::move(y), {x}, [b, c, h, w, oh, ow, factor, inv](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (Index p = 0; p < b * c; ++p)
        for (Index iy = 0; iy < h; ++iy)
          for (Index ix = 0; ix < w; ++ix) (*g)((p * h + iy) * w + ix) += inv * self.grad((p * oh + iy / factor) * ow + ix / factor);
  });
}

Var upsample_nearest(const Var& x, Index factor) {
  require_rank("upsample_nearest", x, 4);
  if (factor <= 0) throw ShapeMismatch("upsample_nearest: factor must be positive");
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h * factor, ow = w * factor;
  VectorXd y(b * c * oh * ow);
  const auto& xv = x.value();
  for (Index p = 0; p < b * c; ++p)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) y((p * oh + oy) * ow + ox) = xv((p * h + oy / factor) * w + ox / factor);
  return make_result({b, c, oh, ow}, std::move(y), {x}, [b, c, h, w, oh, ow, factor](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (Index p = 0; p < b * c; ++p)
        for (Index oy = 0; oy < oh; ++oy)
          for (Index ox = 0; ox < ow; ++ox) (*g)((p * h + oy / factor) * w + ox / factor) += self.grad((p * oh + oy) * ow + ox);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank("concat_channels", a, 4);
  require_rank("concat_channels", b, 4);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) mismatch("concat_channels", a, b);
  const Index n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  VectorXd y(n * (ca + cb) * hw);
  for (Index i = 0; i < n; ++i) {
    y.segment(i * (ca + cb) * hw, ca * hw) = a.value().segment(i * ca * hw, ca * hw);
    y.segment((i * (ca + cb) + ca) * hw, cb * hw) = b.value().segment(i * cb * hw, cb * hw);
  }
  return make_result({n, ca + cb, a.dim(2), a.dim(3)}, std::move(y), {a, b}, [n, ca, cb, hw](Node& self) {
    for (Index i = 0; i < n; ++i) {
      if (auto* g = grad_of(self, 0)) g->segment(i * ca * hw, ca * hw) += self.grad.segment(i * (ca + cb) * hw, ca * hw);
      if (auto* g = grad_of(self, 1)) g->segment(i * cb * hw, cb * hw) += self.grad.segment((i * (ca + cb) + ca) * hw, cb * hw);
    }
  });
}

Var broadcast_spatial(const Var& x, Index h, Index w) {
  const Index b = x.dim(0), c = x.size() / std::max<Index>(1, b);
  if (!(x.shape().size() == 2 || (x.shape().size() == 4 && x.dim(2) == 1 && x.dim(3) == 1)))
    throw ShapeMismatch("broadcast_spatial: expected [b,c] or [b,c,1,1], got " + shape_string(x.shape()));
  VectorXd y(b * c * h * w);
  for (Index p = 0; p < b * c; ++p) y.segment(p * h * w, h * w).setConstant(x.value()(p));
  return make_result({b, c, h, w}, std::move(y), {x}, [b, c, h, w](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (Index p = 0; p < b * c; ++p) (*g)(p) += self.grad.segment(p * h * w, h * w).sum();
  });
}

Var reshape(const Var& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeMismatch("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  return make_result(std::move(shape), x.value(), {x}, [](Node& self) {
    if (auto* g = grad_of(self, 0)) *g += self.grad;
  });
}

Var gather(const Var& x, Shape shape, std::vector<Index> index) {
  if (numel(shape) != static_cast<Index>(index.size()))
    throw ShapeMismatch("gather: " + std::to_string(index.size()) + " indices for shape " + shape_string(shape));
  VectorXd y(static_cast<Index>(index.size()));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.size()) throw ShapeMismatch("gather: index outside " + shape_string(x.shape()));
    y(static_cast<Index>(i)) = x.value()(index[i]);
  }
  auto idx = std::make_shared<const std::vector<Index>>(std::move(index));
  return make_result(std::move(shape), std::move(y), {x}, [idx](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < idx->size(); ++i) (*g)((*idx)[i]) += self.grad(static_cast<Index>(i));
  });
}

Var mse(const Var& pred, const Var& target) {
  if (pred.shape() != target.shape()) mismatch("mse", pred, target);
  const double n = static_cast<double>(pred.size());
  const VectorXd diff = pred.value() - target.value();
  VectorXd out(1);
  out(0) = diff.squaredNorm() / n;
  return make_result({}, std::move(out), {pred, target}, [diff, n](Node& self) {
    const double s = 2.0 * self.grad(0) / n;
    if (auto* g = grad_of(self, 0)) *g += s * diff;
    if (auto* g = grad_of(self, 1)) *g -= s * diff;
  });
}

}  // namespace dip::nn
