#include "lw/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lw::kern {

namespace {
std::atomic<Backend> g_backend{Backend::openmp};
}

Backend backend() { return g_backend.load(std::memory_order_relaxed); }

void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

int thread_count() {
#ifdef _OPENMP
  return backend() == Backend::openmp ? omp_get_max_threads() : 1;
#else
  return 1;
#endif
}

template <class T>
void matmul_nn(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate) {
  if (backend() == Backend::openmp)
    omp::matmul_nn(a, b, c, rows, inner, cols, accumulate);
  else
    serial::matmul_nn(a, b, c, rows, inner, cols, accumulate);
}

template <class T>
void matmul_nt(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate) {
  if (backend() == Backend::openmp)
    omp::matmul_nt(a, b, c, rows, inner, cols, accumulate);
  else
    serial::matmul_nt(a, b, c, rows, inner, cols, accumulate);
}

template <class T>
void matmul_tn(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate) {
  if (backend() == Backend::openmp)
    omp::matmul_tn(a, b, c, rows, inner, cols, accumulate);
  else
    serial::matmul_tn(a, b, c, rows, inner, cols, accumulate);
}

template <class T>
void softmax_rows(const T* x, T* y, int rows, int width) {
  if (backend() == Backend::openmp)
    omp::softmax_rows(x, y, rows, width);
  else
    serial::softmax_rows(x, y, rows, width);
}

template <class T>
void layernorm_rows(const T* x, const T* gain, const T* bias, T* y, T* mean,
                    T* rstd, int rows, int width, T eps) {
  if (backend() == Backend::openmp)
    omp::layernorm_rows(x, gain, bias, y, mean, rstd, rows, width, eps);
  else
    serial::layernorm_rows(x, gain, bias, y, mean, rstd, rows, width, eps);
}

template <class T>
void layernorm_backward_rows(const T* x, const T* gain, const T* mean,
                             const T* rstd, const T* gout, T* gx, T* ggain,
                             T* gbias, int rows, int width) {
  if (backend() == Backend::openmp)
    omp::layernorm_backward_rows(x, gain, mean, rstd, gout, gx, ggain, gbias,
                                 rows, width);
  else
    serial::layernorm_backward_rows(x, gain, mean, rstd, gout, gx, ggain,
                                    gbias, rows, width);
}

template <class T>
void gelu(const T* x, T* y, long n) {
  if (backend() == Backend::openmp)
    omp::gelu(x, y, n);
  else
    serial::gelu(x, y, n);
}

template <class T>
void gelu_backward(const T* x, const T* gout, T* gx, long n) {
  if (backend() == Backend::openmp)
    omp::gelu_backward(x, gout, gx, n);
  else
    serial::gelu_backward(x, gout, gx, n);
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

}  // namespace lw::kern
