#pragma once

#include <atomic>

namespace lw::kern {

/// Which implementation the dispatch front-ends route to.  Both produce
/// byte-identical results (same per-element accumulation order); the
/// OpenMP variants only split independent output rows across threads.
enum class Backend { serial, openmp };

Backend backend();
void set_backend(Backend b);

/// Number of threads the OpenMP backend would use right now.
int thread_count();

// Shared shape conventions, all row-major:
//   matmul_nn: c(rows x cols)  = a(rows x inner) * b(inner x cols)
//   matmul_nt: c(rows x cols)  = a(rows x inner) * b(cols x inner)^T
//   matmul_tn: c(rows x cols)  = a(inner x rows)^T * b(inner x cols)
// With accumulate=true the product is added onto c instead of
// overwriting it (used for gradient accumulation).

namespace serial {
template <class T>
void matmul_nn(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate);
template <class T>
void matmul_nt(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate);
template <class T>
void matmul_tn(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate);
template <class T>
void softmax_rows(const T* x, T* y, int rows, int width);
template <class T>
void layernorm_rows(const T* x, const T* gain, const T* bias, T* y, T* mean,
                    T* rstd, int rows, int width, T eps);
template <class T>
void layernorm_backward_rows(const T* x, const T* gain, const T* mean,
                             const T* rstd, const T* gout, T* gx, T* ggain,
                             T* gbias, int rows, int width);
template <class T>
void gelu(const T* x, T* y, long n);
template <class T>
void gelu_backward(const T* x, const T* gout, T* gx, long n);
}  // namespace serial

namespace omp {
template <class T>
void matmul_nn(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate);
template <class T>
void matmul_nt(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate);
template <class T>
void matmul_tn(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate);
template <class T>
void softmax_rows(const T* x, T* y, int rows, int width);
template <class T>
void layernorm_rows(const T* x, const T* gain, const T* bias, T* y, T* mean,
                    T* rstd, int rows, int width, T eps);
template <class T>
void layernorm_backward_rows(const T* x, const T* gain, const T* mean,
                             const T* rstd, const T* gout, T* gx, T* ggain,
                             T* gbias, int rows, int width);
template <class T>
void gelu(const T* x, T* y, long n);
template <class T>
void gelu_backward(const T* x, const T* gout, T* gx, long n);
}  // namespace omp

// Dispatch front-ends: route to serial or omp per backend().
template <class T>
void matmul_nn(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate);
template <class T>
void matmul_nt(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate);
template <class T>
void matmul_tn(const T* a, const T* b, T* c, int rows, int inner, int cols,
               bool accumulate);
template <class T>
void softmax_rows(const T* x, T* y, int rows, int width);
template <class T>
void layernorm_rows(const T* x, const T* gain, const T* bias, T* y, T* mean,
                    T* rstd, int rows, int width, T eps);
template <class T>
void layernorm_backward_rows(const T* x, const T* gain, const T* mean,
                             const T* rstd, const T* gout, T* gx, T* ggain,
                             T* gbias, int rows, int width);
template <class T>
void gelu(const T* x, T* y, long n);
template <class T>
void gelu_backward(const T* x, const T* gout, T* gx, long n);

/// Runs f(0..n-1); iterations must be independent.  Under the OpenMP
/// backend iterations are split statically across threads, which keeps
/// every output element's arithmetic identical to the serial order.
template <class F>
void parallel_for(int n, F&& f) {
  if (backend() == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) f(i);
  } else {
    for (int i = 0; i < n; ++i) f(i);
  }
}

}  // namespace lw::kern
