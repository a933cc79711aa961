#include "decoyforge/kernels.hpp"

#include <atomic>
#include <cassert>
#include <cstring>

namespace decoyforge::kernels {

namespace {

struct ConvDims {
  int b, ic, h, w;
  int oc, kh, kw;
  int stride, pad;
  int oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wt, int stride, int pad) {
  assert(x.rank() == 4 && wt.rank() == 4);
  assert(x.dim(1) == wt.dim(1));
  ConvDims d;
  d.b = x.dim(0);
  d.ic = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.oc = wt.dim(0);
  d.kh = wt.dim(2);
  d.kw = wt.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.oh = conv_out(d.h, d.kh, stride, pad);
  d.ow = conv_out(d.w, d.kw, stride, pad);
  return d;
}

std::atomic<bool> g_parallel{true};

} // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

// ---------------------------------------------------------------------------
// Reference kernels
// ---------------------------------------------------------------------------

namespace ref {

Tensor matmul_nn(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  assert(b.dim(0) == k);
  Tensor c({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += a.at(i, t) * b.at(t, j);
      c.at(i, j) = acc;
    }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  assert(b.dim(1) == k);
  Tensor c({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += a.at(i, t) * b.at(j, t);
      c.at(i, j) = acc;
    }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  assert(b.dim(0) == m);
  Tensor c({k, n});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < m; ++t) acc += a.at(t, i) * b.at(t, j);
      c.at(i, j) = acc;
    }
  return c;
}

Tensor conv2d_fwd(const Tensor& x, const Tensor& wt, int stride, int pad) {
  const ConvDims d = conv_dims(x, wt, stride, pad);
  Tensor y({d.b, d.oc, d.oh, d.ow});
  for (int b = 0; b < d.b; ++b)
    for (int oc = 0; oc < d.oc; ++oc)
      for (int oh = 0; oh < d.oh; ++oh)
        for (int ow = 0; ow < d.ow; ++ow) {
          double acc = 0.0;
          for (int ic = 0; ic < d.ic; ++ic)
            for (int kh = 0; kh < d.kh; ++kh) {
              const int ih = oh * stride - pad + kh;
              if (ih < 0 || ih >= d.h) continue;
              for (int kw = 0; kw < d.kw; ++kw) {
                const int iw = ow * stride - pad + kw;
                if (iw < 0 || iw >= d.w) continue;
                acc += x.at(b, ic, ih, iw) * wt.at(oc, ic, kh, kw);
              }
            }
          y.at(b, oc, oh, ow) = acc;
        }
  return y;
}

Tensor conv2d_igrad(const Tensor& gy, const Tensor& wt, int stride, int pad, int h, int w_in) {
  const int bsz = gy.dim(0), oc = gy.dim(1), oh = gy.dim(2), ow = gy.dim(3);
  const int ic = wt.dim(1), kh = wt.dim(2), kw = wt.dim(3);
  assert(gy.dim(1) == wt.dim(0));
  Tensor gx({bsz, ic, h, w_in});
  for (int b = 0; b < bsz; ++b)
    for (int o = 0; o < oc; ++o)
      for (int p = 0; p < oh; ++p)
        for (int q = 0; q < ow; ++q) {
          const double g = gy.at(b, o, p, q);
          for (int c = 0; c < ic; ++c)
            for (int i = 0; i < kh; ++i) {
              const int ih = p * stride - pad + i;
              if (ih < 0 || ih >= h) continue;
              for (int j = 0; j < kw; ++j) {
                const int iw = q * stride - pad + j;
                if (iw < 0 || iw >= w_in) continue;
                gx.at(b, c, ih, iw) += g * wt.at(o, c, i, j);
              }
            }
        }
  return gx;
}

Tensor conv2d_wgrad(const Tensor& x, const Tensor& gy, int stride, int pad, int kh, int kw) {
  const int bsz = x.dim(0), ic = x.dim(1), h = x.dim(2), w_in = x.dim(3);
  const int oc = gy.dim(1), oh = gy.dim(2), ow = gy.dim(3);
  Tensor gw({oc, ic, kh, kw});
  for (int o = 0; o < oc; ++o)
    for (int c = 0; c < ic; ++c)
      for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j) {
          double acc = 0.0;
          for (int b = 0; b < bsz; ++b)
            for (int p = 0; p < oh; ++p) {
              const int ih = p * stride - pad + i;
              if (ih < 0 || ih >= h) continue;
              for (int q = 0; q < ow; ++q) {
                const int iw = q * stride - pad + j;
                if (iw < 0 || iw >= w_in) continue;
                acc += x.at(b, c, ih, iw) * gy.at(b, o, p, q);
              }
            }
          gw.at(o, c, i, j) = acc;
        }
  return gw;
}

Tensor upsample_nn2x(const Tensor& x) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({b, c, 2 * h, 2 * w});
  for (int bb = 0; bb < b; ++bb)
    for (int cc = 0; cc < c; ++cc)
      for (int hh = 0; hh < 2 * h; ++hh)
        for (int ww = 0; ww < 2 * w; ++ww)
          y.at(bb, cc, hh, ww) = x.at(bb, cc, hh / 2, ww / 2);
  return y;
}

Tensor downsample_sum2x(const Tensor& x) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  assert(h % 2 == 0 && w % 2 == 0);
  Tensor y({b, c, h / 2, w / 2});
  for (int bb = 0; bb < b; ++bb)
    for (int cc = 0; cc < c; ++cc)
      for (int hh = 0; hh < h / 2; ++hh)
        for (int ww = 0; ww < w / 2; ++ww)
          y.at(bb, cc, hh, ww) = x.at(bb, cc, 2 * hh, 2 * ww) + x.at(bb, cc, 2 * hh, 2 * ww + 1) +
                                 x.at(bb, cc, 2 * hh + 1, 2 * ww) +
                                 x.at(bb, cc, 2 * hh + 1, 2 * ww + 1);
  return y;
}

} // namespace ref

// ---------------------------------------------------------------------------
// OpenMP kernels
// ---------------------------------------------------------------------------

namespace par {

namespace {

constexpr int kTile = 512;

// C[m, n0:n1) += sum_k A[m,k] * B[k, n0:n1) ; axpy inner loops vectorize
// without any FP reassociation.
void mm_block_nn(const double* a, const double* b, double* c, int m, int k, int n, int n0,
                 int n1) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n + n0;
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int t = 0; t < k; ++t) {
      const double av = arow[t];
      const double* brow = b + static_cast<std::size_t>(t) * n + n0;
      for (int j = 0; j < n1 - n0; ++j) crow[j] += av * brow[j];
    }
  }
}

// Eight-lane dot product. Fixed summation order, independent accumulator
// chains so the compiler can keep several FMAs in flight.
double dot8(const double* a, const double* b, int k) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  int t = 0;
  for (; t + 8 <= k; t += 8) {
    s0 += a[t] * b[t];
    s1 += a[t + 1] * b[t + 1];
    s2 += a[t + 2] * b[t + 2];
    s3 += a[t + 3] * b[t + 3];
    s4 += a[t + 4] * b[t + 4];
    s5 += a[t + 5] * b[t + 5];
    s6 += a[t + 6] * b[t + 6];
    s7 += a[t + 7] * b[t + 7];
  }
  double tail = 0;
  for (; t < k; ++t) tail += a[t] * b[t];
  return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7)) + tail;
}

// col is (ic*kh*kw) x (nb*oh*ow) for samples [b0, b0+nb).
void im2col(const Tensor& x, const ConvDims& d, int b0, int nb, std::vector<double>& col) {
  const int cols = nb * d.oh * d.ow;
  const int rows = d.ic * d.kh * d.kw;
  col.assign(static_cast<std::size_t>(rows) * cols, 0.0);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int kw = r % d.kw;
    const int kh = (r / d.kw) % d.kh;
    const int ic = r / (d.kw * d.kh);
    double* out = col.data() + static_cast<std::size_t>(r) * cols;
    for (int b = 0; b < nb; ++b)
      for (int p = 0; p < d.oh; ++p) {
        const int ih = p * d.stride - d.pad + kh;
        if (ih < 0 || ih >= d.h) continue;
        double* orow = out + (static_cast<std::size_t>(b) * d.oh + p) * d.ow;
        for (int q = 0; q < d.ow; ++q) {
          const int iw = q * d.stride - d.pad + kw;
          if (iw < 0 || iw >= d.w) continue;
          orow[q] = x.at(b0 + b, ic, ih, iw);
        }
      }
  }
}

int chunk_samples(const ConvDims& d) {
  const std::int64_t per_sample =
      static_cast<std::int64_t>(d.ic) * d.kh * d.kw * d.oh * d.ow;
  const std::int64_t budget = 4'000'000; // doubles
  int nb = static_cast<int>(budget / (per_sample > 0 ? per_sample : 1));
  if (nb < 1) nb = 1;
  if (nb > d.b) nb = d.b;
  return nb;
}

} // namespace

Tensor matmul_nn(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  assert(b.dim(0) == k);
  Tensor c({m, n});
  if (n >= m) {
    const int tiles = (n + kTile - 1) / kTile;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < tiles; ++t) {
      const int n0 = t * kTile;
      const int n1 = n0 + kTile < n ? n0 + kTile : n;
      mm_block_nn(a.data(), b.data(), c.data(), m, k, n, n0, n1);
    }
  } else {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
      double* crow = c.data() + static_cast<std::size_t>(i) * n;
      const double* arow = a.data() + static_cast<std::size_t>(i) * k;
      for (int t = 0; t < k; ++t) {
        const double av = arow[t];
        const double* brow = b.data() + static_cast<std::size_t>(t) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  assert(b.dim(1) == k);
  Tensor c({m, n});
  const std::int64_t cells = static_cast<std::int64_t>(m) * n;
#pragma omp parallel for schedule(static)
  for (std::int64_t cell = 0; cell < cells; ++cell) {
    const int i = static_cast<int>(cell / n);
    const int j = static_cast<int>(cell % n);
    c.at(i, j) = dot8(a.data() + static_cast<std::size_t>(i) * k,
                      b.data() + static_cast<std::size_t>(j) * k, k);
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  assert(b.dim(0) == m);
  Tensor c({k, n});
  if (n >= k) {
    const int tiles = (n + kTile - 1) / kTile;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < tiles; ++t) {
      const int n0 = t * kTile;
      const int n1 = n0 + kTile < n ? n0 + kTile : n;
      for (int i = 0; i < k; ++i) {
        double* crow = c.data() + static_cast<std::size_t>(i) * n + n0;
        for (int r = 0; r < m; ++r) {
          const double av = a.at(r, i);
          const double* brow = b.data() + static_cast<std::size_t>(r) * n + n0;
          for (int j = 0; j < n1 - n0; ++j) crow[j] += av * brow[j];
        }
      }
    }
  } else {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < k; ++i) {
      double* crow = c.data() + static_cast<std::size_t>(i) * n;
      for (int r = 0; r < m; ++r) {
        const double av = a.at(r, i);
        const double* brow = b.data() + static_cast<std::size_t>(r) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  return c;
}

Tensor conv2d_fwd(const Tensor& x, const Tensor& wt, int stride, int pad) {
  const ConvDims d = conv_dims(x, wt, stride, pad);
  const int krows = d.ic * d.kh * d.kw;
  Tensor y({d.b, d.oc, d.oh, d.ow});
  const Tensor wflat = wt.reshaped({d.oc, krows});
  std::vector<double> col;
  const int nb = chunk_samples(d);
  for (int b0 = 0; b0 < d.b; b0 += nb) {
    const int bn = b0 + nb <= d.b ? nb : d.b - b0;
    im2col(x, d, b0, bn, col);
    const Tensor colt({krows, bn * d.oh * d.ow}, col);
    Tensor ymat = matmul_nn(wflat, colt);
    const int span = d.oh * d.ow;
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < d.oc; ++oc)
      for (int b = 0; b < bn; ++b)
        std::memcpy(&y.at(b0 + b, oc, 0, 0), &ymat.at(oc, b * span),
                    static_cast<std::size_t>(span) * sizeof(double));
  }
  return y;
}

Tensor conv2d_igrad(const Tensor& gy, const Tensor& wt, int stride, int pad, int h, int w_in) {
  ConvDims d;
  d.b = gy.dim(0);
  d.oc = gy.dim(1);
  d.oh = gy.dim(2);
  d.ow = gy.dim(3);
  d.ic = wt.dim(1);
  d.kh = wt.dim(2);
  d.kw = wt.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.h = h;
  d.w = w_in;
  assert(gy.dim(1) == wt.dim(0));
  const int krows = d.ic * d.kh * d.kw;
  const Tensor wflat = wt.reshaped({d.oc, krows});
  Tensor gx({d.b, d.ic, h, w_in});
  const int nb = chunk_samples(d);
  const int span = d.oh * d.ow;
  for (int b0 = 0; b0 < d.b; b0 += nb) {
    const int bn = b0 + nb <= d.b ? nb : d.b - b0;
    Tensor gmat({d.oc, bn * span});
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < d.oc; ++oc)
      for (int b = 0; b < bn; ++b)
        std::memcpy(&gmat.at(oc, b * span), &gy.at(b0 + b, oc, 0, 0),
                    static_cast<std::size_t>(span) * sizeof(double));
    Tensor dcol = matmul_tn(wflat, gmat); // krows x (bn*span)
    // col2im: each sample's scatter is independent.
#pragma omp parallel for schedule(static)
    for (int b = 0; b < bn; ++b) {
      for (int r = 0; r < krows; ++r) {
        const int kw = r % d.kw;
        const int kh = (r / d.kw) % d.kh;
        const int ic = r / (d.kw * d.kh);
        const double* src = dcol.data() + static_cast<std::size_t>(r) * (bn * span) +
                            static_cast<std::size_t>(b) * span;
        for (int p = 0; p < d.oh; ++p) {
          const int ih = p * stride - pad + kh;
          if (ih < 0 || ih >= h) continue;
          for (int q = 0; q < d.ow; ++q) {
            const int iw = q * stride - pad + kw;
            if (iw < 0 || iw >= w_in) continue;
            gx.at(b0 + b, ic, ih, iw) += src[p * d.ow + q];
          }
        }
      }
    }
  }
  return gx;
}

Tensor conv2d_wgrad(const Tensor& x, const Tensor& gy, int stride, int pad, int kh, int kw) {
  ConvDims d;
  d.b = x.dim(0);
  d.ic = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.oc = gy.dim(1);
  d.oh = gy.dim(2);
  d.ow = gy.dim(3);
  d.kh = kh;
  d.kw = kw;
  d.stride = stride;
  d.pad = pad;
  const int krows = d.ic * kh * kw;
  const int span = d.oh * d.ow;
  Tensor gw({d.oc, d.ic, kh, kw});
  std::vector<double> col;
  const int nb = chunk_samples(d);
  for (int b0 = 0; b0 < d.b; b0 += nb) {
    const int bn = b0 + nb <= d.b ? nb : d.b - b0;
    im2col(x, d, b0, bn, col);
    Tensor gmat({d.oc, bn * span});
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < d.oc; ++oc)
      for (int b = 0; b < bn; ++b)
        std::memcpy(&gmat.at(oc, b * span), &gy.at(b0 + b, oc, 0, 0),
                    static_cast<std::size_t>(span) * sizeof(double));
    const Tensor colt({krows, bn * span}, col);
    Tensor partial = matmul_nt(gmat, colt); // oc x krows
    double* acc = gw.data();
    const double* src = partial.data();
    for (std::int64_t i = 0; i < gw.numel(); ++i) acc[i] += src[i];
  }
  return gw;
}

Tensor upsample_nn2x(const Tensor& x) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({b, c, 2 * h, 2 * w});
  const std::int64_t planes = static_cast<std::int64_t>(b) * c;
#pragma omp parallel for schedule(static)
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const double* src = x.data() + pl * h * w;
    double* dst = y.data() + pl * 4 * h * w;
    for (int hh = 0; hh < 2 * h; ++hh) {
      const double* srow = src + (hh / 2) * w;
      double* drow = dst + static_cast<std::size_t>(hh) * 2 * w;
      for (int ww = 0; ww < 2 * w; ++ww) drow[ww] = srow[ww / 2];
    }
  }
  return y;
}

Tensor downsample_sum2x(const Tensor& x) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  assert(h % 2 == 0 && w % 2 == 0);
  Tensor y({b, c, h / 2, w / 2});
  const std::int64_t planes = static_cast<std::int64_t>(b) * c;
#pragma omp parallel for schedule(static)
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const double* src = x.data() + pl * h * w;
    double* dst = y.data() + pl * (h / 2) * (w / 2);
    for (int hh = 0; hh < h / 2; ++hh)
      for (int ww = 0; ww < w / 2; ++ww)
        dst[hh * (w / 2) + ww] = src[2 * hh * w + 2 * ww] + src[2 * hh * w + 2 * ww + 1] +
                                 src[(2 * hh + 1) * w + 2 * ww] +
                                 src[(2 * hh + 1) * w + 2 * ww + 1];
  }
  return y;
}

} // namespace par

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

Tensor matmul_nn(const Tensor& a, const Tensor& b) {
  return parallel_enabled() ? par::matmul_nn(a, b) : ref::matmul_nn(a, b);
}
Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  return parallel_enabled() ? par::matmul_nt(a, b) : ref::matmul_nt(a, b);
}
Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  return parallel_enabled() ? par::matmul_tn(a, b) : ref::matmul_tn(a, b);
}
Tensor conv2d_fwd(const Tensor& x, const Tensor& w, int stride, int pad) {
  return parallel_enabled() ? par::conv2d_fwd(x, w, stride, pad) : ref::conv2d_fwd(x, w, stride, pad);
}
Tensor conv2d_igrad(const Tensor& gy, const Tensor& w, int stride, int pad, int h, int w_in) {
  return parallel_enabled() ? par::conv2d_igrad(gy, w, stride, pad, h, w_in)
                            : ref::conv2d_igrad(gy, w, stride, pad, h, w_in);
}
Tensor conv2d_wgrad(const Tensor& x, const Tensor& gy, int stride, int pad, int kh, int kw) {
  return parallel_enabled() ? par::conv2d_wgrad(x, gy, stride, pad, kh, kw)
                            : ref::conv2d_wgrad(x, gy, stride, pad, kh, kw);
}
Tensor upsample_nn2x(const Tensor& x) {
  return parallel_enabled() ? par::upsample_nn2x(x) : ref::upsample_nn2x(x);
}
Tensor downsample_sum2x(const Tensor& x) {
  return parallel_enabled() ? par::downsample_sum2x(x) : ref::downsample_sum2x(x);
}

} // namespace decoyforge::kernels
