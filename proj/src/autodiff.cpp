#include "decoyforge/autodiff.hpp"

#include <atomic>
#include <cassert>
#include <cmath>
#include <queue>
#include <unordered_map>
#include <unordered_set>

#include "decoyforge/kernels.hpp"

namespace decoyforge::ad {

namespace {

std::atomic<std::int64_t> g_next_id{1};

Node make(Tensor val, std::vector<Node> parents, VjpFn vjp) {
  auto d = std::make_shared<NodeData>();
  d->val = std::move(val);
  d->id = g_next_id.fetch_add(1);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  d->requires_grad = rg;
  if (rg) {
    d->parents = std::move(parents);
    d->vjp = std::move(vjp);
  }
  return Node(std::move(d));
}

Tensor ew(const Tensor& a, const Tensor& b, double (*op)(double, double)) {
  assert(a.same_shape(b));
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = op(a[i], b[i]);
  return out;
}

} // namespace

Node constant(Tensor t) {
  auto d = std::make_shared<NodeData>();
  d->val = std::move(t);
  d->id = g_next_id.fetch_add(1);
  d->requires_grad = false;
  return Node(std::move(d));
}

Node variable(Tensor t) {
  auto d = std::make_shared<NodeData>();
  d->val = std::move(t);
  d->id = g_next_id.fetch_add(1);
  d->requires_grad = true;
  return Node(std::move(d));
}

Node add(const Node& a, const Node& b) {
  return make(ew(a.val(), b.val(), [](double x, double y) { return x + y; }), {a, b},
              [](const NodeData& self, const Node& cot) -> std::vector<Node> {
                std::vector<Node> out(2);
                if (self.parents[0].requires_grad()) out[0] = cot;
                if (self.parents[1].requires_grad()) out[1] = cot;
                return out;
              });
}

Node sub(const Node& a, const Node& b) {
  return make(ew(a.val(), b.val(), [](double x, double y) { return x - y; }), {a, b},
              [](const NodeData& self, const Node& cot) -> std::vector<Node> {
                std::vector<Node> out(2);
                if (self.parents[0].requires_grad()) out[0] = cot;
                if (self.parents[1].requires_grad()) out[1] = neg(cot);
                return out;
              });
}

Node mul(const Node& a, const Node& b) {
  return make(ew(a.val(), b.val(), [](double x, double y) { return x * y; }), {a, b},
              [](const NodeData& self, const Node& cot) -> std::vector<Node> {
                std::vector<Node> out(2);
                if (self.parents[0].requires_grad()) out[0] = mul(cot, self.parents[1]);
                if (self.parents[1].requires_grad()) out[1] = mul(cot, self.parents[0]);
                return out;
              });
}

Node div(const Node& a, const Node& b) {
  Tensor val = ew(a.val(), b.val(), [](double x, double y) { return x / y; });
  Node out = make(std::move(val), {a, b},
                  [](const NodeData& self, const Node& cot) -> std::vector<Node> {
                    std::vector<Node> out(2);
                    Node selfnode(std::const_pointer_cast<NodeData>(
                        std::shared_ptr<const NodeData>(&self, [](const NodeData*) {})));
                    // handled below via capture; placeholder
                    return out;
                  });
  // div needs a handle on its own node for the denominator cotangent; rebuild
  // the vjp now that the node exists.
  Node self_handle = out;
  out.get()->vjp = [self_handle](const NodeData& self, const Node& cot) -> std::vector<Node> {
    std::vector<Node> res(2);
    if (self.parents[0].requires_grad()) res[0] = div(cot, self.parents[1]);
    if (self.parents[1].requires_grad())
      res[1] = neg(div(mul(cot, self_handle), self.parents[1]));
    return res;
  };
  return out;
}

Node neg(const Node& a) {
  Tensor v(a.val().shape());
  for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = -a.val()[i];
  return make(std::move(v), {a},
              [](const NodeData& self, const Node& cot) -> std::vector<Node> {
                (void)self;
                return {neg(cot)};
              });
}

Node scale(const Node& a, double c) {
  Tensor v(a.val().shape());
  for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = c * a.val()[i];
  return make(std::move(v), {a},
              [c](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {scale(cot, c)};
              });
}

Node add_scalar(const Node& a, double c) {
  Tensor v(a.val().shape());
  for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = a.val()[i] + c;
  return make(std::move(v), {a},
              [](const NodeData&, const Node& cot) -> std::vector<Node> { return {cot}; });
}

Node leaky_relu(const Node& a, double slope) {
  Tensor v(a.val().shape());
  Tensor mask(a.val().shape());
  for (std::int64_t i = 0; i < v.numel(); ++i) {
    const bool pos = a.val()[i] > 0.0;
    mask[i] = pos ? 1.0 : slope;
    v[i] = a.val()[i] * mask[i];
  }
  return make(std::move(v), {a},
              [m = std::move(mask)](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {mul(cot, constant(m))};
              });
}

Node tanh_act(const Node& a) {
  Tensor v(a.val().shape());
  for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = std::tanh(a.val()[i]);
  Node out = make(std::move(v), {a}, nullptr);
  if (out.requires_grad()) {
    Node self_handle = out;
    out.get()->vjp = [self_handle](const NodeData&, const Node& cot) -> std::vector<Node> {
      Node one_minus_sq = add_scalar(neg(mul(self_handle, self_handle)), 1.0);
      return {mul(cot, one_minus_sq)};
    };
  }
  return out;
}

Node sqrt_elem(const Node& a) {
  Tensor v(a.val().shape());
  for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = std::sqrt(a.val()[i]);
  Node out = make(std::move(v), {a}, nullptr);
  if (out.requires_grad()) {
    Node self_handle = out;
    out.get()->vjp = [self_handle](const NodeData&, const Node& cot) -> std::vector<Node> {
      return {div(scale(cot, 0.5), self_handle)};
    };
  }
  return out;
}

Node matmul(const Node& a, const Node& b) {
  return make(kernels::matmul_nn(a.val(), b.val()), {a, b},
              [](const NodeData& self, const Node& cot) -> std::vector<Node> {
                std::vector<Node> out(2);
                if (self.parents[0].requires_grad()) out[0] = matmul_nt(cot, self.parents[1]);
                if (self.parents[1].requires_grad()) out[1] = matmul_tn(self.parents[0], cot);
                return out;
              });
}

Node matmul_nt(const Node& a, const Node& b) {
  return make(kernels::matmul_nt(a.val(), b.val()), {a, b},
              [](const NodeData& self, const Node& cot) -> std::vector<Node> {
                std::vector<Node> out(2);
                if (self.parents[0].requires_grad()) out[0] = matmul(cot, self.parents[1]);
                if (self.parents[1].requires_grad()) out[1] = matmul_tn(cot, self.parents[0]);
                return out;
              });
}

Node matmul_tn(const Node& a, const Node& b) {
  return make(kernels::matmul_tn(a.val(), b.val()), {a, b},
              [](const NodeData& self, const Node& cot) -> std::vector<Node> {
                std::vector<Node> out(2);
                if (self.parents[0].requires_grad()) out[0] = matmul_nt(self.parents[1], cot);
                if (self.parents[1].requires_grad()) out[1] = matmul(self.parents[0], cot);
                return out;
              });
}

Node conv2d(const Node& x, const Node& w, int stride, int pad) {
  const int h = x.val().dim(2), w_in = x.val().dim(3);
  const int kh = w.val().dim(2), kw = w.val().dim(3);
  return make(kernels::conv2d_fwd(x.val(), w.val(), stride, pad), {x, w},
              [stride, pad, h, w_in, kh, kw](const NodeData& self,
                                             const Node& cot) -> std::vector<Node> {
                std::vector<Node> out(2);
                if (self.parents[0].requires_grad())
                  out[0] = conv2d_igrad(cot, self.parents[1], stride, pad, h, w_in);
                if (self.parents[1].requires_grad())
                  out[1] = conv2d_wgrad(self.parents[0], cot, stride, pad, kh, kw);
                return out;
              });
}

Node conv2d_igrad(const Node& gy, const Node& w, int stride, int pad, int h, int w_in) {
  const int kh = w.val().dim(2), kw = w.val().dim(3);
  return make(kernels::conv2d_igrad(gy.val(), w.val(), stride, pad, h, w_in), {gy, w},
              [stride, pad, kh, kw](const NodeData& self, const Node& cot) -> std::vector<Node> {
                std::vector<Node> out(2);
                if (self.parents[0].requires_grad())
                  out[0] = conv2d(cot, self.parents[1], stride, pad);
                if (self.parents[1].requires_grad())
                  out[1] = conv2d_wgrad(cot, self.parents[0], stride, pad, kh, kw);
                return out;
              });
}

Node conv2d_wgrad(const Node& x, const Node& gy, int stride, int pad, int kh, int kw) {
  const int h = x.val().dim(2), w_in = x.val().dim(3);
  return make(kernels::conv2d_wgrad(x.val(), gy.val(), stride, pad, kh, kw), {x, gy},
              [stride, pad, h, w_in](const NodeData& self, const Node& cot) -> std::vector<Node> {
                std::vector<Node> out(2);
                if (self.parents[0].requires_grad())
                  out[0] = conv2d_igrad(self.parents[1], cot, stride, pad, h, w_in);
                if (self.parents[1].requires_grad())
                  out[1] = conv2d(self.parents[0], cot, stride, pad);
                return out;
              });
}

Node reshape(const Node& a, std::vector<int> shape) {
  std::vector<int> orig = a.val().shape();
  return make(a.val().reshaped(std::move(shape)), {a},
              [orig](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {reshape(cot, orig)};
              });
}

Node upsample_nn2x(const Node& a) {
  return make(kernels::upsample_nn2x(a.val()), {a},
              [](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {downsample_sum2x(cot)};
              });
}

Node downsample_sum2x(const Node& a) {
  return make(kernels::downsample_sum2x(a.val()), {a},
              [](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {upsample_nn2x(cot)};
              });
}

Node concat_channels(const Node& a, const Node& b) {
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  assert(ta.rank() == 4 && tb.rank() == 4);
  assert(ta.dim(0) == tb.dim(0) && ta.dim(2) == tb.dim(2) && ta.dim(3) == tb.dim(3));
  const int bsz = ta.dim(0), ca = ta.dim(1), cb = tb.dim(1), h = ta.dim(2), w = ta.dim(3);
  Tensor out({bsz, ca + cb, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int bb = 0; bb < bsz; ++bb) {
    std::copy_n(ta.data() + static_cast<std::int64_t>(bb) * ca * plane, ca * plane,
                out.data() + static_cast<std::int64_t>(bb) * (ca + cb) * plane);
    std::copy_n(tb.data() + static_cast<std::int64_t>(bb) * cb * plane, cb * plane,
                out.data() + (static_cast<std::int64_t>(bb) * (ca + cb) + ca) * plane);
  }
  return make(std::move(out), {a, b},
              [ca, cb](const NodeData& self, const Node& cot) -> std::vector<Node> {
                std::vector<Node> out(2);
                if (self.parents[0].requires_grad()) out[0] = slice_channels(cot, 0, ca);
                if (self.parents[1].requires_grad()) out[1] = slice_channels(cot, ca, ca + cb);
                return out;
              });
}

Node slice_channels(const Node& a, int c0, int c1) {
  const Tensor& t = a.val();
  const int bsz = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  assert(0 <= c0 && c0 < c1 && c1 <= c);
  Tensor out({bsz, c1 - c0, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int bb = 0; bb < bsz; ++bb)
    std::copy_n(t.data() + (static_cast<std::int64_t>(bb) * c + c0) * plane,
                (c1 - c0) * plane,
                out.data() + static_cast<std::int64_t>(bb) * (c1 - c0) * plane);
  return make(std::move(out), {a},
              [c0, c](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {pad_channels(cot, c0, c)};
              });
}

Node pad_channels(const Node& a, int c0, int c_total) {
  const Tensor& t = a.val();
  const int bsz = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  assert(c0 + c <= c_total);
  Tensor out({bsz, c_total, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int bb = 0; bb < bsz; ++bb)
    std::copy_n(t.data() + static_cast<std::int64_t>(bb) * c * plane, c * plane,
                out.data() + (static_cast<std::int64_t>(bb) * c_total + c0) * plane);
  return make(std::move(out), {a},
              [c0, c](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {slice_channels(cot, c0, c0 + c)};
              });
}

Node sum_all(const Node& a) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.val().numel(); ++i) s += a.val()[i];
  std::vector<int> shape = a.val().shape();
  return make(Tensor::scalar(s), {a},
              [shape](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {broadcast_scalar(cot, shape)};
              });
}

Node mean_all(const Node& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.val().numel()));
}

Node broadcast_scalar(const Node& s, std::vector<int> shape) {
  assert(s.val().numel() == 1);
  Tensor out = Tensor::full(shape, s.val()[0]);
  return make(std::move(out), {s},
              [](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {sum_all(cot)};
              });
}

Node sum_per_sample(const Node& a) {
  const int bsz = a.val().dim(0);
  const std::int64_t stride = a.val().numel() / bsz;
  Tensor out({bsz});
  for (int b = 0; b < bsz; ++b) {
    double s = 0.0;
    const double* p = a.val().data() + b * stride;
    for (std::int64_t i = 0; i < stride; ++i) s += p[i];
    out[b] = s;
  }
  std::vector<int> shape = a.val().shape();
  return make(std::move(out), {a},
              [shape](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {broadcast_per_sample(cot, shape)};
              });
}

Node broadcast_per_sample(const Node& s, std::vector<int> shape) {
  const int bsz = shape[0];
  assert(s.val().numel() == bsz);
  Tensor out(shape);
  const std::int64_t stride = out.numel() / bsz;
  for (int b = 0; b < bsz; ++b) {
    double* p = out.data() + b * stride;
    for (std::int64_t i = 0; i < stride; ++i) p[i] = s.val()[b];
  }
  return make(std::move(out), {s},
              [](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {sum_per_sample(cot)};
              });
}

Node sum_rows(const Node& a) {
  const int bsz = a.val().dim(0), n = a.val().dim(1);
  Tensor out({n});
  for (int b = 0; b < bsz; ++b)
    for (int j = 0; j < n; ++j) out[j] += a.val().at(b, j);
  return make(std::move(out), {a},
              [bsz](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {broadcast_rows(cot, bsz)};
              });
}

Node broadcast_rows(const Node& v, int rows) {
  const int n = static_cast<int>(v.val().numel());
  Tensor out({rows, n});
  for (int b = 0; b < rows; ++b)
    for (int j = 0; j < n; ++j) out.at(b, j) = v.val()[j];
  return make(std::move(out), {v},
              [](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {sum_rows(cot)};
              });
}

Node sum_channel(const Node& a) {
  const int bsz = a.val().dim(0), c = a.val().dim(1), h = a.val().dim(2), w = a.val().dim(3);
  Tensor out({c});
  for (int bb = 0; bb < bsz; ++bb)
    for (int cc = 0; cc < c; ++cc) {
      double s = 0.0;
      for (int hh = 0; hh < h; ++hh)
        for (int ww = 0; ww < w; ++ww) s += a.val().at(bb, cc, hh, ww);
      out[cc] += s;
    }
  const int b2 = bsz, h2 = h, w2 = w;
  return make(std::move(out), {a},
              [b2, h2, w2](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {broadcast_channel(cot, b2, h2, w2)};
              });
}

Node broadcast_channel(const Node& c, int b, int h, int w) {
  const int nc = static_cast<int>(c.val().numel());
  Tensor out({b, nc, h, w});
  for (int bb = 0; bb < b; ++bb)
    for (int cc = 0; cc < nc; ++cc) {
      const double v = c.val()[cc];
      for (int hh = 0; hh < h; ++hh)
        for (int ww = 0; ww < w; ++ww) out.at(bb, cc, hh, ww) = v;
    }
  return make(std::move(out), {c},
              [](const NodeData&, const Node& cot) -> std::vector<Node> {
                return {sum_channel(cot)};
              });
}

Node add_bias_rowwise(const Node& x, const Node& b) {
  const int bsz = x.val().dim(0), n = x.val().dim(1);
  assert(b.val().numel() == n);
  Tensor out({bsz, n});
  for (int i = 0; i < bsz; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = x.val().at(i, j) + b.val()[j];
  return make(std::move(out), {x, b},
              [](const NodeData& self, const Node& cot) -> std::vector<Node> {
                std::vector<Node> out(2);
                if (self.parents[0].requires_grad()) out[0] = cot;
                if (self.parents[1].requires_grad()) out[1] = sum_rows(cot);
                return out;
              });
}

Node add_bias_channel(const Node& x, const Node& b) {
  const int bsz = x.val().dim(0), c = x.val().dim(1), h = x.val().dim(2), w = x.val().dim(3);
  assert(b.val().numel() == c);
  Tensor out(x.val().shape());
  for (int bb = 0; bb < bsz; ++bb)
    for (int cc = 0; cc < c; ++cc) {
      const double bv = b.val()[cc];
      for (int hh = 0; hh < h; ++hh)
        for (int ww = 0; ww < w; ++ww) out.at(bb, cc, hh, ww) = x.val().at(bb, cc, hh, ww) + bv;
    }
  return make(std::move(out), {x, b},
              [](const NodeData& self, const Node& cot) -> std::vector<Node> {
                std::vector<Node> out(2);
                if (self.parents[0].requires_grad()) out[0] = cot;
                if (self.parents[1].requires_grad()) out[1] = sum_channel(cot);
                return out;
              });
}

std::vector<Node> grad(const Node& root, const std::vector<Node>& wrt, Node cot) {
  if (!cot.defined()) cot = constant(Tensor::full(root.val().shape(), 1.0));

  std::unordered_map<NodeData*, Node> cots;
  std::priority_queue<std::pair<std::int64_t, NodeData*>> heap;
  std::unordered_set<NodeData*> queued;
  std::unordered_map<NodeData*, Node> holder; // keeps NodeData alive via Node handles

  auto enqueue = [&](const Node& n) {
    if (!n.requires_grad()) return;
    if (queued.insert(n.get()).second) {
      heap.emplace(n.get()->id, n.get());
      holder.emplace(n.get(), n);
    }
  };

  if (root.requires_grad()) {
    cots.emplace(root.get(), cot);
    enqueue(root);
  }

  while (!heap.empty()) {
    NodeData* cur = heap.top().second;
    heap.pop();
    const Node cur_cot = cots.at(cur);
    if (!cur->vjp) continue; // leaf
    std::vector<Node> pcots = cur->vjp(*cur, cur_cot);
    assert(pcots.size() == cur->parents.size());
    for (std::size_t i = 0; i < pcots.size(); ++i) {
      const Node& parent = cur->parents[i];
      if (!parent.requires_grad() || !pcots[i].defined()) continue;
      auto it = cots.find(parent.get());
      if (it == cots.end()) {
        cots.emplace(parent.get(), pcots[i]);
      } else {
        it->second = add(it->second, pcots[i]);
      }
      enqueue(parent);
    }
  }

  std::vector<Node> out;
  out.reserve(wrt.size());
  for (const Node& w : wrt) {
    auto it = cots.find(w.get());
    if (it != cots.end()) {
      out.push_back(it->second);
    } else {
      out.push_back(constant(Tensor::zeros(w.val().shape())));
    }
  }
  return out;
}

} // namespace decoyforge::ad
