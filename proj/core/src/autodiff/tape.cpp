#include "vlattack/autodiff/tape.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace vlattack::ad {

namespace {

constexpr double kZeroNorm = 1e-12;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autodiff: ") + what);
}

void same_tape(Var a, Var b) {
  require(a.valid() && b.valid() && a.tape() == b.tape(), "operands on different tapes");
}

}  // namespace

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) { return record(std::move(value), true, nullptr); }

Var Tape::parameter(const Matrix& value, bool requires_grad) {
  Node& node = nodes_.emplace_back();
  node.borrowed = &value;
  node.requires_grad = requires_grad;
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, bool requires_grad, BackwardFn backward) {
  Node& node = nodes_.emplace_back();
  node.owned = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Matrix& Tape::value(int id) const {
  const Node& node = nodes_[id];
  return node.borrowed ? *node.borrowed : node.owned;
}

void Tape::backward(Var root) {
  require(root.tape() == this, "root from another tape");
  require(root.rows() == 1 && root.cols() == 1, "backward root must be scalar");
  if (!requires_grad(root.id())) return;
  accumulate(root.id(), Matrix::Ones(1, 1));
  for (int id = root.id(); id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.has_grad && node.backward) node.backward(*this, id);
  }
}

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b) {
  same_tape(a, b);
  require(a.cols() == b.rows(), "matmul shape mismatch");
  Tape& t = *a.tape();
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, int self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
                    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
                  });
}

Var matmul_transposed(Var a, Var b) {
  same_tape(a, b);
  require(a.cols() == b.cols(), "matmul_transposed shape mismatch");
  Tape& t = *a.tape();
  Matrix out = a.value() * b.value().transpose();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, int self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib));
                    if (tp.requires_grad(ib)) tp.accumulate(ib, g.transpose() * tp.value(ia));
                  });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
  Tape& t = *a.tape();
  Matrix out = a.value() + b.value();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, int self) {
                    tp.accumulate(ia, tp.grad(self));
                    tp.accumulate(ib, tp.grad(self));
                  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape mismatch");
  Tape& t = *a.tape();
  Matrix out = a.value() - b.value();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, int self) {
                    tp.accumulate(ia, tp.grad(self));
                    tp.accumulate(ib, -tp.grad(self));
                  });
}

Var add_row(Var a, Var row) {
  same_tape(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row shape mismatch");
  Tape& t = *a.tape();
  Matrix out = a.value().rowwise() + row.value().row(0);
  const int ia = a.id(), ir = row.id();
  return t.record(std::move(out), a.requires_grad() || row.requires_grad(),
                  [ia, ir](Tape& tp, int self) {
                    tp.accumulate(ia, tp.grad(self));
                    if (tp.requires_grad(ir)) tp.accumulate(ir, tp.grad(self).colwise().sum());
                  });
}

Var scale(Var a, double factor) {
  Tape& t = *a.tape();
  Matrix out = a.value() * factor;
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, factor](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self) * factor);
  });
}

Var gelu(Var a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia](Tape& tp, int self) {
    const Matrix& xv = tp.value(ia);
    const Matrix& g = tp.grad(self);
    Matrix dx(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const double v = xv.data()[i];
      const double th = std::tanh(kC * (v + kA * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
      dx.data()[i] = g.data()[i] * d;
    }
    tp.accumulate(ia, dx);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  same_tape(x, gain);
  same_tape(x, bias);
  require(gain.rows() == 1 && gain.cols() == x.cols() && bias.rows() == 1 && bias.cols() == x.cols(),
          "layer_norm shape mismatch");
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.cols();
  auto normalized = std::make_shared<Matrix>(xv.rows(), n);
  auto inv_std = std::make_shared<Eigen::VectorXd>(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    normalized->row(r) = (xv.row(r).array() - mean) * is;
  }
  Matrix out = (normalized->array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  return t.record(std::move(out), rg, [ix, ig, ib, normalized, inv_std](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& xhat = *normalized;
    if (tp.requires_grad(ig)) tp.accumulate(ig, (g.array() * xhat.array()).colwise().sum().matrix());
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.colwise().sum());
    if (tp.requires_grad(ix)) {
      const Eigen::RowVectorXd gamma = tp.value(ig).row(0);
      Matrix dxhat = g.array().rowwise() * gamma.array();
      Matrix dx(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
        dx.row(r) = (*inv_std)(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
      }
      tp.accumulate(ix, dx);
    }
  });
}

Var attention(Var q, Var k, Var v, int heads, bool causal) {
  same_tape(q, k);
  same_tape(q, v);
  const Eigen::Index d = q.cols();
  require(heads > 0 && d % heads == 0, "attention heads must divide width");
  require(k.cols() == d && v.cols() == d && k.rows() == v.rows(), "attention shape mismatch");
  require(!causal || q.rows() == k.rows(), "causal attention needs square scores");
  Tape& t = *q.tape();
  const Eigen::Index n = q.rows(), m = k.rows(), dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  auto probs = std::make_shared<std::vector<Matrix>>(heads);
  Matrix out(n, d);
  for (int h = 0; h < heads; ++h) {
    Matrix s = (qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose()) * sc;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (causal) {
        for (Eigen::Index j = i + 1; j < m; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
      }
      const double mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    out.middleCols(h * dh, dh) = s * vv.middleCols(h * dh, dh);
    (*probs)[h] = std::move(s);
  }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  const bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
  return t.record(std::move(out), rg, [iq, ik, iv, heads, dh, sc, probs](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& qv2 = tp.value(iq);
    const Matrix& kv2 = tp.value(ik);
    const Matrix& vv2 = tp.value(iv);
    Matrix dq = Matrix::Zero(qv2.rows(), qv2.cols());
    Matrix dk = Matrix::Zero(kv2.rows(), kv2.cols());
    Matrix dv = Matrix::Zero(vv2.rows(), vv2.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = (*probs)[h];
      const auto go = g.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh) = p.transpose() * go;
      Matrix dp = go * vv2.middleCols(h * dh, dh).transpose();
      Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
      Matrix ds = p.array() * (dp.array().colwise() - rowdot.array());
      ds *= sc;
      dq.middleCols(h * dh, dh) = ds * kv2.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * qv2.middleCols(h * dh, dh);
    }
    tp.accumulate(iq, dq);
    tp.accumulate(ik, dk);
    tp.accumulate(iv, dv);
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows of nothing");
  Tape& t = *parts.front().tape();
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  bool rg = false;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    require(p.cols() == cols, "concat_rows width mismatch");
    rows += p.rows();
    rg = rg || p.requires_grad();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id(), p.rows());
    at += p.rows();
  }
  return t.record(std::move(out), rg, [layout](Tape& tp, int self) {
    Eigen::Index off = 0;
    for (const auto& [id, r] : layout) {
      if (tp.requires_grad(id)) tp.accumulate(id, tp.grad(self).middleRows(off, r));
      off += r;
    }
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows out of range");
  Tape& t = *a.tape();
  Matrix out = a.value().middleRows(start, count);
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, start, count](Tape& tp, int self) {
    const Matrix& src = tp.value(ia);
    Matrix g = Matrix::Zero(src.rows(), src.cols());
    g.middleRows(start, count) = tp.grad(self);
    tp.accumulate(ia, g);
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = *table.tape();
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] >= 0 && ids[r] < tv.rows(), "gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(r)) = tv.row(ids[r]);
  }
  const int it = table.id();
  std::vector<int> idx(ids.begin(), ids.end());
  return t.record(std::move(out), table.requires_grad(), [it, idx](Tape& tp, int self) {
    const Matrix& src = tp.value(it);
    Matrix g = Matrix::Zero(src.rows(), src.cols());
    const Matrix& go = tp.grad(self);
    for (std::size_t r = 0; r < idx.size(); ++r) g.row(idx[r]) += go.row(static_cast<Eigen::Index>(r));
    tp.accumulate(it, g);
  });
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == a.value().size(), "reshape size mismatch");
  Tape& t = *a.tape();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia](Tape& tp, int self) {
    const Matrix& src = tp.value(ia);
    tp.accumulate(ia, Eigen::Map<const Matrix>(tp.grad(self).data(), src.rows(), src.cols()));
  });
}

Var patchify(Var image, int height, int width, int channels, int patch) {
  require(image.rows() == 1 && image.cols() == static_cast<Eigen::Index>(height) * width * channels,
          "patchify expects a 1x(H*W*C) row");
  require(patch > 0 && height % patch == 0 && width % patch == 0, "patch must tile the image");
  const int gh = height / patch, gw = width / patch;
  const int plen = patch * patch * channels;
  // mapping[p * plen + e] = source column
  auto mapping = std::make_shared<std::vector<int>>(static_cast<std::size_t>(gh) * gw * plen);
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px)
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx)
          for (int c = 0; c < channels; ++c) {
            const int p = py * gw + px;
            const int e = (dy * patch + dx) * channels + c;
            const int y = py * patch + dy, x = px * patch + dx;
            (*mapping)[static_cast<std::size_t>(p) * plen + e] = (y * width + x) * channels + c;
          }
  Tape& t = *image.tape();
  const Matrix& src = image.value();
  Matrix out(gh * gw, plen);
  for (std::size_t i = 0; i < mapping->size(); ++i) out.data()[i] = src(0, (*mapping)[i]);
  const int ii = image.id();
  return t.record(std::move(out), image.requires_grad(), [ii, mapping](Tape& tp, int self) {
    const Matrix& s = tp.value(ii);
    Matrix g = Matrix::Zero(1, s.cols());
    const Matrix& go = tp.grad(self);
    for (std::size_t i = 0; i < mapping->size(); ++i) g(0, (*mapping)[i]) += go.data()[i];
    tp.accumulate(ii, g);
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets) {
  require(static_cast<Eigen::Index>(targets.size()) == logits.rows(), "one target per row");
  Tape& t = *logits.tape();
  const Matrix& lv = logits.value();
  auto probs = std::make_shared<Matrix>(lv.rows(), lv.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const int tgt = targets[static_cast<std::size_t>(r)];
    require(tgt >= 0 && tgt < lv.cols(), "target out of range");
    const double mx = lv.row(r).maxCoeff();
    probs->row(r) = (lv.row(r).array() - mx).exp();
    const double z = probs->row(r).sum();
    probs->row(r) /= z;
    loss += -(lv(r, tgt) - mx - std::log(z));
  }
  const double inv = 1.0 / static_cast<double>(lv.rows());
  Matrix out(1, 1);
  out(0, 0) = loss * inv;
  const int il = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return t.record(std::move(out), logits.requires_grad(), [il, probs, tg, inv](Tape& tp, int self) {
    Matrix g = *probs;
    for (std::size_t r = 0; r < tg.size(); ++r) g(static_cast<Eigen::Index>(r), tg[r]) -= 1.0;
    tp.accumulate(il, g * (inv * tp.grad(self)(0, 0)));
  });
}

double cosine(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  const double na = a.norm(), nb = b.norm();
  if (na < kZeroNorm || nb < kZeroNorm) return 0.0;
  return a.dot(b) / (na * nb);
}

Var cosine_rows_sum(Var a, const Matrix& reference) {
  require(a.rows() == reference.rows() && a.cols() == reference.cols(), "cosine_rows_sum shape mismatch");
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  auto ref = std::make_shared<Matrix>(reference);
  double total = 0.0;
  for (Eigen::Index r = 0; r < av.rows(); ++r) total += cosine(av.row(r), reference.row(r));
  Matrix out(1, 1);
  out(0, 0) = total;
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, ref](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    const double go = tp.grad(self)(0, 0);
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double na = x.row(r).norm(), nb = ref->row(r).norm();
      if (na < kZeroNorm || nb < kZeroNorm) continue;
      const double c = x.row(r).dot(ref->row(r)) / (na * nb);
      g.row(r) = go * (ref->row(r) / (na * nb) - c * x.row(r) / (na * na));
    }
    tp.accumulate(ia, g);
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    tp.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), tp.grad(self)(0, 0)));
  });
}

Var dot(Var a, const Matrix& weights) {
  require(a.rows() == weights.rows() && a.cols() == weights.cols(), "dot shape mismatch");
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = (a.value().array() * weights.array()).sum();
  auto w = std::make_shared<Matrix>(weights);
  const int ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, w](Tape& tp, int self) {
    tp.accumulate(ia, *w * tp.grad(self)(0, 0));
  });
}

}  // namespace vlattack::ad
