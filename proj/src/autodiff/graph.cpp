#include "detguard/autodiff/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "detguard/errors.hpp"

namespace detguard::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// cols[(c*k + ky)*k + kx, oy*ow + ox] = x[c, oy*s - p + ky, ox*s - p + kx]
void im2col(const double* x, int c, int h, int w, int k, int s, int p, int oh, int ow, double* cols) {
  const int hw = oh * ow;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + static_cast<std::ptrdiff_t>((ci * k + ky) * k + kx) * hw;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s - p + ky;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s - p + kx;
            row[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(ci * h + iy) * w + ix] : 0.0;
          }
        }
      }
}

void col2im(const double* cols, int c, int h, int w, int k, int s, int p, int oh, int ow, double* dx) {
  const int hw = oh * ow;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + static_cast<std::ptrdiff_t>((ci * k + ky) * k + kx) * hw;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < w) dx[(ci * h + iy) * w + ix] += row[oy * ow + ox];
          }
        }
      }
}

}  // namespace

const Tensor& Var::value() const { return graph->value(*this); }

Graph::Node& Graph::node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
const Graph::Node& Graph::node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
const Tensor& Graph::value(Var v) const { return node(v).value; }
const std::string& Graph::op_name(Var v) const { return node(v).op; }

void Graph::check(Var v, const char* op) const {
  if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw ShapeError(op, "operand does not belong to this graph");
}

Buffer& Graph::grad_of(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Var Graph::push(std::string op, Tensor value, std::vector<int> inputs, std::function<void(Graph&, Node&)> back) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  for (int i : n.inputs) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(i)].requires_grad;
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Tensor value) { return push("input", std::move(value), {}, nullptr); }

Var Graph::param(ParameterStore& store, const std::string& name) {
  Tensor& t = store.at(name);
  Var v = push("param:" + name, Tensor::from_buffer(t.shape(), t.storage()), {}, nullptr);
  auto& n = node(v);
  n.requires_grad = true;
  n.param = &t;
  return v;
}

Var Graph::detach(Var x) {
  check(x, "detach");
  Var v = push("detach", value(x), {}, nullptr);
  return v;
}

Var Graph::add(Var a, Var b) {
  check(a, "add");
  check(b, "add");
  if (value(a).shape() != value(b).shape())
    throw ShapeError("add#" + std::to_string(nodes_.size()),
                     shape_str(value(a).shape()) + " vs " + shape_str(value(b).shape()));
  Tensor out = value(a);
  const auto& bv = value(b).storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const int ia = a.id, ib = b.id;
  return push("add", std::move(out), {ia, ib}, [ia, ib](Graph& g, Node& n) {
    for (int id : {ia, ib}) {
      if (!g.needs_grad(id)) continue;
      auto& gx = g.grad_of(id);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i];
    }
  });
}

Var Graph::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Graph::mul(Var a, Var b) {
  check(a, "mul");
  check(b, "mul");
  if (value(a).shape() != value(b).shape())
    throw ShapeError("mul#" + std::to_string(nodes_.size()),
                     shape_str(value(a).shape()) + " vs " + shape_str(value(b).shape()));
  Tensor out = value(a);
  const auto& bv = value(b).storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ia = a.id, ib = b.id;
  return push("mul", std::move(out), {ia, ib}, [ia, ib](Graph& g, Node& n) {
    const auto& av = g.nodes_[static_cast<std::size_t>(ia)].value.storage();
    const auto& bv = g.nodes_[static_cast<std::size_t>(ib)].value.storage();
    if (g.needs_grad(ia)) {
      auto& gx = g.grad_of(ia);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i] * bv[i];
    }
    if (g.needs_grad(ib)) {
      auto& gx = g.grad_of(ib);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i] * av[i];
    }
  });
}

Var Graph::scale(Var x, double factor) {
  check(x, "scale");
  Tensor out = value(x);
  for (double& v : out.data()) v *= factor;
  const int ix = x.id;
  return push("scale", std::move(out), {ix}, [ix, factor](Graph& g, Node& n) {
    auto& gx = g.grad_of(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * n.grad[i];
  });
}

Var Graph::add_scalar(Var x, double c) {
  check(x, "add_scalar");
  Tensor out = value(x);
  for (double& v : out.data()) v += c;
  const int ix = x.id;
  return push("add_scalar", std::move(out), {ix}, [ix](Graph& g, Node& n) {
    auto& gx = g.grad_of(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i];
  });
}

Var Graph::sum(Var x) {
  check(x, "sum");
  double s = 0.0;
  for (double v : value(x).data()) s += v;
  const int ix = x.id;
  return push("sum", Tensor({1}, {s}), {ix}, [ix](Graph& g, Node& n) {
    auto& gx = g.grad_of(ix);
    for (double& v : gx) v += n.grad[0];
  });
}

Var Graph::reshape(Var x, Shape shape) {
  check(x, "reshape");
  Tensor out = value(x);
  if (shape_size(shape) != out.size())
    throw ShapeError("reshape#" + std::to_string(nodes_.size()),
                     shape_str(out.shape()) + " -> " + shape_str(shape));
  out.reshape(std::move(shape));
  const int ix = x.id;
  return push("reshape", std::move(out), {ix}, [ix](Graph& g, Node& n) {
    auto& gx = g.grad_of(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i];
  });
}

Var Graph::relu(Var x) {
  check(x, "relu");
  Tensor out = value(x);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const int ix = x.id;
  return push("relu", std::move(out), {ix}, [ix](Graph& g, Node& n) {
    auto& gx = g.grad_of(ix);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (n.value[i] > 0.0) gx[i] += n.grad[i];
  });
}

Var Graph::sigmoid(Var x) {
  check(x, "sigmoid");
  Tensor out = value(x);
  for (double& v : out.data()) v = sigmoid_scalar(v);
  const int ix = x.id;
  return push("sigmoid", std::move(out), {ix}, [ix](Graph& g, Node& n) {
    auto& gx = g.grad_of(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
  });
}

Var Graph::softmax(Var x) {
  check(x, "softmax");
  const Tensor& in = value(x);
  if (in.rank() != 1 && in.rank() != 2)
    throw ShapeError("softmax#" + std::to_string(nodes_.size()), "expected rank 1 or 2, got " + shape_str(in.shape()));
  const int cols = in.shape().back();
  const int rows = static_cast<int>(in.size()) / cols;
  Tensor out = in;
  for (int r = 0; r < rows; ++r) {
    double* row = out.data().data() + static_cast<std::ptrdiff_t>(r) * cols;
    const double m = *std::max_element(row, row + cols);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += (row[c] = std::exp(row[c] - m));
    for (int c = 0; c < cols; ++c) row[c] /= z;
  }
  const int ix = x.id;
  return push("softmax", std::move(out), {ix}, [ix, rows, cols](Graph& g, Node& n) {
    auto& gx = g.grad_of(ix);
    for (int r = 0; r < rows; ++r) {
      const std::size_t o = static_cast<std::size_t>(r) * cols;
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += n.grad[o + c] * n.value[o + c];
      for (int c = 0; c < cols; ++c) gx[o + c] += n.value[o + c] * (n.grad[o + c] - dot);
    }
  });
}

Var Graph::conv2d(Var x, Var w, Var b, int stride, int pad) {
  check(x, "conv2d");
  check(w, "conv2d");
  check(b, "conv2d");
  const std::string where = "conv2d#" + std::to_string(nodes_.size());
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  if (xv.rank() != 3) throw ShapeError(where, "input must be [C,H,W], got " + shape_str(xv.shape()));
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3))
    throw ShapeError(where, "weight must be [O,C,k,k], got " + shape_str(wv.shape()));
  if (wv.dim(1) != xv.dim(0))
    throw ShapeError(where, "input channels " + std::to_string(xv.dim(0)) + " vs weight " + shape_str(wv.shape()));
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(0))
    throw ShapeError(where, "bias " + shape_str(bv.shape()) + " vs weight " + shape_str(wv.shape()));
  if (stride < 1 || pad < 0) throw ShapeError(where, "bad stride/pad");
  const int c = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const int o = wv.dim(0), k = wv.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (wd + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError(where, "kernel larger than padded input");
  const int ckk = c * k * k, hw = oh * ow;

  auto cols = std::make_shared<Buffer>(static_cast<std::size_t>(ckk) * hw);
  im2col(xv.data().data(), c, h, wd, k, stride, pad, oh, ow, cols->data());
  Tensor out({o, oh, ow});
  MapMat om(out.data().data(), o, hw);
  om.noalias() = CMapMat(wv.data().data(), o, ckk) * CMapMat(cols->data(), ckk, hw);
  for (int oc = 0; oc < o; ++oc) om.row(oc).array() += bv[static_cast<std::size_t>(oc)];

  const int ix = x.id, iw = w.id, ib = b.id;
  return push("conv2d", std::move(out), {ix, iw, ib},
              [=](Graph& g, Node& n) {
                CMapMat gout(n.grad.data(), o, hw);
                if (g.needs_grad(iw)) {
                  auto& gw = g.grad_of(iw);
                  MapMat(gw.data(), o, ckk).noalias() += gout * CMapMat(cols->data(), ckk, hw).transpose();
                }
                if (g.needs_grad(ib)) {
                  auto& gb = g.grad_of(ib);
                  for (int oc = 0; oc < o; ++oc) gb[static_cast<std::size_t>(oc)] += gout.row(oc).sum();
                }
                if (g.needs_grad(ix)) {
                  const auto& wv = g.nodes_[static_cast<std::size_t>(iw)].value;
                  RowMat dcols = CMapMat(wv.data().data(), o, ckk).transpose() * gout;
                  col2im(dcols.data(), c, h, wd, k, stride, pad, oh, ow, g.grad_of(ix).data());
                }
              });
}

Var Graph::linear(Var x, Var w, Var b) {
  check(x, "linear");
  check(w, "linear");
  check(b, "linear");
  const std::string where = "linear#" + std::to_string(nodes_.size());
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  if (xv.rank() != 2) throw ShapeError(where, "input must be [N,F], got " + shape_str(xv.shape()));
  if (wv.rank() != 2 || wv.dim(1) != xv.dim(1))
    throw ShapeError(where, "weight " + shape_str(wv.shape()) + " vs input " + shape_str(xv.shape()));
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(0))
    throw ShapeError(where, "bias " + shape_str(bv.shape()) + " vs weight " + shape_str(wv.shape()));
  const int nrow = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
  Tensor out({nrow, o});
  MapMat om(out.data().data(), nrow, o);
  om.noalias() = CMapMat(xv.data().data(), nrow, f) * CMapMat(wv.data().data(), o, f).transpose();
  for (int r = 0; r < nrow; ++r)
    for (int j = 0; j < o; ++j) om(r, j) += bv[static_cast<std::size_t>(j)];
  const int ix = x.id, iw = w.id, ib = b.id;
  return push("linear", std::move(out), {ix, iw, ib}, [=](Graph& g, Node& n) {
    CMapMat gout(n.grad.data(), nrow, o);
    const auto& xv = g.nodes_[static_cast<std::size_t>(ix)].value;
    const auto& wv = g.nodes_[static_cast<std::size_t>(iw)].value;
    if (g.needs_grad(iw))
      MapMat(g.grad_of(iw).data(), o, f).noalias() += gout.transpose() * CMapMat(xv.data().data(), nrow, f);
    if (g.needs_grad(ib)) {
      auto& gb = g.grad_of(ib);
      for (int j = 0; j < o; ++j) gb[static_cast<std::size_t>(j)] += gout.col(j).sum();
    }
    if (g.needs_grad(ix))
      MapMat(g.grad_of(ix).data(), nrow, f).noalias() += gout * CMapMat(wv.data().data(), o, f);
  });
}

Var Graph::roi_align(Var feat, const std::vector<RoiBox>& boxes, int out, double spatial_scale) {
  check(feat, "roi_align");
  const std::string where = "roi_align#" + std::to_string(nodes_.size());
  const Tensor& fv = value(feat);
  if (fv.rank() != 3) throw ShapeError(where, "features must be [C,H,W], got " + shape_str(fv.shape()));
  if (boxes.empty()) throw ShapeError(where, "no boxes");
  if (out < 1) throw ShapeError(where, "output size must be positive");
  const int c = fv.dim(0), h = fv.dim(1), w = fv.dim(2);
  const int r = static_cast<int>(boxes.size());
  const int bins = out * out;
  constexpr int kSamples = 2;
  constexpr double kInvSamples = 1.0 / (kSamples * kSamples);

  // Per bin: four corner taps per sample, flattened (index into an HxW plane, weight).
  struct Tap {
    int index;
    double weight;
  };
  auto taps = std::make_shared<std::vector<Tap>>();
  taps->reserve(static_cast<std::size_t>(r) * bins * kSamples * kSamples * 4);
  auto tap_begin = std::make_shared<std::vector<std::size_t>>();
  tap_begin->reserve(static_cast<std::size_t>(r) * bins + 1);

  for (const auto& box : boxes) {
    const double x1 = box[0] * spatial_scale - 0.5, y1 = box[1] * spatial_scale - 0.5;
    const double x2 = box[2] * spatial_scale - 0.5, y2 = box[3] * spatial_scale - 0.5;
    const double bw = (x2 - x1) / out, bh = (y2 - y1) / out;
    for (int py = 0; py < out; ++py)
      for (int px = 0; px < out; ++px) {
        tap_begin->push_back(taps->size());
        for (int sy = 0; sy < kSamples; ++sy)
          for (int sx = 0; sx < kSamples; ++sx) {
            double y = y1 + bh * (py + (sy + 0.5) / kSamples);
            double x = x1 + bw * (px + (sx + 0.5) / kSamples);
            if (y < -1.0 || y > h || x < -1.0 || x > w) continue;
            y = std::clamp(y, 0.0, static_cast<double>(h - 1));
            x = std::clamp(x, 0.0, static_cast<double>(w - 1));
            const int y0 = std::min(static_cast<int>(y), h - 1), x0 = std::min(static_cast<int>(x), w - 1);
            const int yh = std::min(y0 + 1, h - 1), xh = std::min(x0 + 1, w - 1);
            const double ly = y - y0, lx = x - x0;
            taps->push_back({y0 * w + x0, (1 - ly) * (1 - lx) * kInvSamples});
            taps->push_back({y0 * w + xh, (1 - ly) * lx * kInvSamples});
            taps->push_back({yh * w + x0, ly * (1 - lx) * kInvSamples});
            taps->push_back({yh * w + xh, ly * lx * kInvSamples});
          }
      }
  }
  tap_begin->push_back(taps->size());

  const int f = c * bins;
  Tensor result({r, f});
  const double* fd = fv.data().data();
  for (int ri = 0; ri < r; ++ri)
    for (int b = 0; b < bins; ++b) {
      const std::size_t t0 = (*tap_begin)[static_cast<std::size_t>(ri * bins + b)];
      const std::size_t t1 = (*tap_begin)[static_cast<std::size_t>(ri * bins + b) + 1];
      for (int ci = 0; ci < c; ++ci) {
        const double* plane = fd + static_cast<std::ptrdiff_t>(ci) * h * w;
        double acc = 0.0;
        for (std::size_t t = t0; t < t1; ++t) acc += (*taps)[t].weight * plane[(*taps)[t].index];
        result[static_cast<std::size_t>(ri) * f + static_cast<std::size_t>(ci) * bins + b] = acc;
      }
    }

  const int ifeat = feat.id;
  return push("roi_align", std::move(result), {ifeat}, [=](Graph& g, Node& n) {
    auto& gf = g.grad_of(ifeat);
    for (int ri = 0; ri < r; ++ri)
      for (int b = 0; b < bins; ++b) {
        const std::size_t t0 = (*tap_begin)[static_cast<std::size_t>(ri * bins + b)];
        const std::size_t t1 = (*tap_begin)[static_cast<std::size_t>(ri * bins + b) + 1];
        for (int ci = 0; ci < c; ++ci) {
          const double go = n.grad[static_cast<std::size_t>(ri) * f + static_cast<std::size_t>(ci) * bins + b];
          if (go == 0.0) continue;
          double* plane = gf.data() + static_cast<std::ptrdiff_t>(ci) * h * w;
          for (std::size_t t = t0; t < t1; ++t) plane[(*taps)[t].index] += go * (*taps)[t].weight;
        }
      }
  });
}

Var Graph::gather(Var x, const std::vector<int>& indices) {
  check(x, "gather");
  const Tensor& xv = value(x);
  for (int i : indices)
    if (i < 0 || static_cast<std::size_t>(i) >= xv.size())
      throw ShapeError("gather#" + std::to_string(nodes_.size()),
                       "index " + std::to_string(i) + " out of range for " + shape_str(xv.shape()));
  if (indices.empty()) return push("gather", Tensor({1}, {0.0}), {}, nullptr);
  Tensor out({static_cast<int>(indices.size())});
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = xv[static_cast<std::size_t>(indices[i])];
  const int ix = x.id;
  return push("gather", std::move(out), {ix}, [ix, indices](Graph& g, Node& n) {
    auto& gx = g.grad_of(ix);
    for (std::size_t i = 0; i < indices.size(); ++i) gx[static_cast<std::size_t>(indices[i])] += n.grad[i];
  });
}

Var Graph::cross_entropy(Var logits, const std::vector<int>& labels) {
  check(logits, "cross_entropy");
  const std::string where = "cross_entropy#" + std::to_string(nodes_.size());
  const Tensor& lv = value(logits);
  if (lv.rank() != 2) throw ShapeError(where, "logits must be [N,K], got " + shape_str(lv.shape()));
  const int n = lv.dim(0), k = lv.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError(where, std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  auto probs = std::make_shared<Buffer>(lv.size());
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= k) throw ShapeError(where, "label " + std::to_string(y) + " out of range");
    const double* row = lv.data().data() + static_cast<std::ptrdiff_t>(r) * k;
    double* pr = probs->data() + static_cast<std::ptrdiff_t>(r) * k;
    const double m = *std::max_element(row, row + k);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += (pr[j] = std::exp(row[j] - m));
    for (int j = 0; j < k; ++j) pr[j] /= z;
    loss += -(row[y] - m - std::log(z));
  }
  loss /= n;
  const int il = logits.id;
  return push("cross_entropy", Tensor({1}, {loss}), {il}, [=](Graph& g, Node& node) {
    auto& gx = g.grad_of(il);
    const double s = node.grad[0] / n;
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < k; ++j) {
        const std::size_t i = static_cast<std::size_t>(r) * k + j;
        gx[i] += s * ((*probs)[i] - (j == labels[static_cast<std::size_t>(r)] ? 1.0 : 0.0));
      }
  });
}

Var Graph::bce_with_logits(Var logits, const std::vector<double>& targets) {
  check(logits, "bce_with_logits");
  const Tensor& lv = value(logits);
  if (lv.size() != targets.size())
    throw ShapeError("bce_with_logits#" + std::to_string(nodes_.size()),
                     std::to_string(targets.size()) + " targets for " + shape_str(lv.shape()));
  if (targets.empty()) return push("bce_with_logits", Tensor({1}, {0.0}), {}, nullptr);
  const double n = static_cast<double>(targets.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double x = lv[i];
    loss += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  loss /= n;
  const int il = logits.id;
  return push("bce_with_logits", Tensor({1}, {loss}), {il}, [=](Graph& g, Node& node) {
    auto& gx = g.grad_of(il);
    const auto& xv = g.nodes_[static_cast<std::size_t>(il)].value;
    for (std::size_t i = 0; i < targets.size(); ++i) gx[i] += node.grad[0] * (sigmoid_scalar(xv[i]) - targets[i]) / n;
  });
}

Var Graph::smooth_l1(Var x, const std::vector<double>& target, double beta) {
  check(x, "smooth_l1");
  const Tensor& xv = value(x);
  if (xv.size() != target.size())
    throw ShapeError("smooth_l1#" + std::to_string(nodes_.size()),
                     std::to_string(target.size()) + " targets for " + shape_str(xv.shape()));
  double loss = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = std::abs(xv[i] - target[i]);
    loss += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  const int ix = x.id;
  return push("smooth_l1", Tensor({1}, {loss}), {ix}, [=](Graph& g, Node& node) {
    auto& gx = g.grad_of(ix);
    const auto& xv = g.nodes_[static_cast<std::size_t>(ix)].value;
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double d = xv[i] - target[i];
      const double dd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
      gx[i] += node.grad[0] * dd;
    }
  });
}

void Graph::backward(Var loss) {
  check(loss, "backward");
  if (value(loss).size() != 1)
    throw ShapeError("backward", "loss must be scalar, got " + shape_str(value(loss).shape()));
  for (auto& n : nodes_) n.grad.clear();
  if (node(loss).requires_grad) {
    grad_of(loss.id)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.empty() || !n.back) continue;
      n.back(*this, n);
    }
  }
  for (auto& n : nodes_) {
    if (!n.param) continue;
    auto g = n.param->ensure_grad();
    for (std::size_t j = 0; j < n.grad.size(); ++j) g[j] += n.grad[j];
  }
}

}  // namespace detguard::ad
