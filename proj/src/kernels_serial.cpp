// Reference implementations.  Written for clarity; the OpenMP variants
// must match these byte-for-byte, so both keep the same per-element
// accumulation order.

#include <cmath>
#include <cstring>

#include "lw/kernels.hpp"

namespace lw::kern::serial {

template <class T>
void matmul_nn(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate) {
  for (int r = 0; r < rows; ++r) {
    T* crow = c + static_cast<long>(r) * cols;
    if (!accumulate)
      for (int j = 0; j < cols; ++j) crow[j] = T(0);
    const T* arow = a + static_cast<long>(r) * inner;
    for (int k = 0; k < inner; ++k) {
      const T av = arow[k];
      const T* brow = b + static_cast<long>(k) * cols;
      for (int j = 0; j < cols; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void matmul_nt(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate) {
  for (int r = 0; r < rows; ++r) {
    const T* arow = a + static_cast<long>(r) * inner;
    T* crow = c + static_cast<long>(r) * cols;
    for (int j = 0; j < cols; ++j) {
      const T* brow = b + static_cast<long>(j) * inner;
      T sum = T(0);
      for (int k = 0; k < inner; ++k) sum += arow[k] * brow[k];
      if (accumulate)
        crow[j] += sum;
      else
        crow[j] = sum;
    }
  }
}

template <class T>
void matmul_tn(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate) {
  for (int r = 0; r < rows; ++r) {
    T* crow = c + static_cast<long>(r) * cols;
    if (!accumulate)
      for (int j = 0; j < cols; ++j) crow[j] = T(0);
    for (int k = 0; k < inner; ++k) {
      const T av = a[static_cast<long>(k) * rows + r];
      const T* brow = b + static_cast<long>(k) * cols;
      for (int j = 0; j < cols; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void softmax_rows(const T* x, T* y, int rows, int width) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<long>(r) * width;
    T* yr = y + static_cast<long>(r) * width;
    T m = xr[0];
    for (int j = 1; j < width; ++j)
      if (xr[j] > m) m = xr[j];
    T sum = T(0);
    for (int j = 0; j < width; ++j) {
      yr[j] = std::exp(xr[j] - m);
      sum += yr[j];
    }
    for (int j = 0; j < width; ++j) yr[j] /= sum;
  }
}

template <class T>
void layernorm_rows(const T* x, const T* gain, const T* bias, T* y, T* mean,
                    T* rstd, int rows, int width, T eps) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<long>(r) * width;
    T* yr = y + static_cast<long>(r) * width;
    T mu = T(0);
    for (int j = 0; j < width; ++j) mu += xr[j];
    mu /= T(width);
    T var = T(0);
    for (int j = 0; j < width; ++j) {
      const T d = xr[j] - mu;
      var += d * d;
    }
    var /= T(width);
    const T rs = T(1) / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (int j = 0; j < width; ++j)
      yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
  }
}

template <class T>
void layernorm_backward_rows(const T* x, const T* gain, const T* mean,
                             const T* rstd, const T* gout, T* gx, T* ggain,
                             T* gbias, int rows, int width) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<long>(r) * width;
    const T* gr = gout + static_cast<long>(r) * width;
    T* gxr = gx + static_cast<long>(r) * width;
    const T mu = mean[r];
    const T rs = rstd[r];
    T sum_gh = T(0);
    T sum_ghx = T(0);
    for (int j = 0; j < width; ++j) {
      const T xhat = (xr[j] - mu) * rs;
      const T gh = gr[j] * gain[j];
      sum_gh += gh;
      sum_ghx += gh * xhat;
    }
    const T mean_gh = sum_gh / T(width);
    const T mean_ghx = sum_ghx / T(width);
    for (int j = 0; j < width; ++j) {
      const T xhat = (xr[j] - mu) * rs;
      const T gh = gr[j] * gain[j];
      gxr[j] += rs * (gh - mean_gh - xhat * mean_ghx);
    }
  }
  for (int j = 0; j < width; ++j) {
    T sg = T(0);
    T sb = T(0);
    for (int r = 0; r < rows; ++r) {
      const T xhat = (x[static_cast<long>(r) * width + j] - mean[r]) * rstd[r];
      const T g = gout[static_cast<long>(r) * width + j];
      sg += g * xhat;
      sb += g;
    }
    ggain[j] += sg;
    gbias[j] += sb;
  }
}

template <class T>
void gelu(const T* x, T* y, long n) {
  const T inv_sqrt2 = T(0.70710678118654752440084436210485L);
  for (long i = 0; i < n; ++i) {
    const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
    y[i] = x[i] * cdf;
  }
}

template <class T>
void gelu_backward(const T* x, const T* gout, T* gx, long n) {
  const T inv_sqrt2 = T(0.70710678118654752440084436210485L);
  const T inv_sqrt2pi = T(0.39894228040143267793994605993438L);
  for (long i = 0; i < n; ++i) {
    const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
    const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
    gx[i] += gout[i] * (cdf + x[i] * pdf);
  }
}

template void matmul_nn<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_nn<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_nt<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_nt<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_tn<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_tn<double>(const double*, const double*, double*, int, int, int, bool);
template void softmax_rows<float>(const float*, float*, int, int);
template void softmax_rows<double>(const double*, double*, int, int);
template void layernorm_rows<float>(const float*, const float*, const float*, float*, float*, float*, int, int, float);
template void layernorm_rows<double>(const double*, const double*, const double*, double*, double*, double*, int, int, double);
template void layernorm_backward_rows<float>(const float*, const float*, const float*, const float*, const float*, float*, float*, float*, int, int);
template void layernorm_backward_rows<double>(const double*, const double*, const double*, const double*, const double*, double*, double*, double*, int, int);
template void gelu<float>(const float*, float*, long);
template void gelu<double>(const double*, double*, long);
template void gelu_backward<float>(const float*, const float*, float*, long);
template void gelu_backward<double>(const double*, const double*, double*, long);

}  // namespace lw::kern::serial
