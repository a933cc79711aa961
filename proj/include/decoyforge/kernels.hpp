#pragma once

#include "decoyforge/tensor.hpp"

namespace decoyforge::kernels {

/// Output spatial extent of a convolution along one axis.
inline int conv_out(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// Serial reference implementations. Plain loops, no tiling, no OpenMP.
// These define the semantics the optimized kernels are tested against.
namespace ref {

Tensor matmul_nn(const Tensor& a, const Tensor& b);               // (M,K)x(K,N) -> (M,N)
Tensor matmul_nt(const Tensor& a, const Tensor& b);               // (M,K)x(N,K) -> (M,N)
Tensor matmul_tn(const Tensor& a, const Tensor& b);               // (M,K)x(M,N) -> (K,N)
Tensor conv2d_fwd(const Tensor& x, const Tensor& w, int stride, int pad);
Tensor conv2d_igrad(const Tensor& gy, const Tensor& w, int stride, int pad, int h, int w_in);
Tensor conv2d_wgrad(const Tensor& x, const Tensor& gy, int stride, int pad, int kh, int kw);
Tensor upsample_nn2x(const Tensor& x);
Tensor downsample_sum2x(const Tensor& x);

} // namespace ref

// OpenMP-parallel kernels (im2col + tiled matmul for the convolutions).
// Every output element is accumulated in a fixed serial order, so results do
// not depend on the thread count.
namespace par {

Tensor matmul_nn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor conv2d_fwd(const Tensor& x, const Tensor& w, int stride, int pad);
Tensor conv2d_igrad(const Tensor& gy, const Tensor& w, int stride, int pad, int h, int w_in);
Tensor conv2d_wgrad(const Tensor& x, const Tensor& gy, int stride, int pad, int kh, int kw);
Tensor upsample_nn2x(const Tensor& x);
Tensor downsample_sum2x(const Tensor& x);

} // namespace par

/// Globally selects which kernel family the dispatch functions use.
void set_parallel(bool enabled);
bool parallel_enabled();

// Dispatchers used by the autodiff layer.
Tensor matmul_nn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor conv2d_fwd(const Tensor& x, const Tensor& w, int stride, int pad);
Tensor conv2d_igrad(const Tensor& gy, const Tensor& w, int stride, int pad, int h, int w_in);
Tensor conv2d_wgrad(const Tensor& x, const Tensor& gy, int stride, int pad, int kh, int kw);
Tensor upsample_nn2x(const Tensor& x);
Tensor downsample_sum2x(const Tensor& x);

} // namespace decoyforge::kernels
