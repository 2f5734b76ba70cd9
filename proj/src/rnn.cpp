#include "rat/rnn.hpp"

namespace rat {

template <typename T>
RnnParamsT<T> RnnParamsT<T>::init(int64_t dim, double std_dev, Rng& rng) {
  RnnParamsT p;
  p.w_v = rng.gaussian_tensor<T>({dim, dim}, std_dev);
  p.w_g = rng.gaussian_tensor<T>({dim, dim}, std_dev);
  p.w_z = rng.gaussian_tensor<T>({dim, dim}, std_dev);
  p.w_o = rng.gaussian_tensor<T>({dim, dim}, std_dev);
  return p;
}

template <typename T>
RnnOutT<T> rnn_forward(const TensorT<T>& x, const RnnParamsT<T>& p,
                       const TensorT<T>& h0, const TensorT<T>* force_g) {
  if (x.ndim() != 3) {
    throw ShapeError("rnn_forward: x must be [B, T, D], got " +
                     shape_str(x.shape));
  }
  const int64_t B = x.dim(0), T_len = x.dim(1);

  TensorT<T> g = force_g != nullptr ? *force_g : sigmoid(matmul(x, p.w_g));
  TensorT<T> z = sigmoid(matmul(x, p.w_z));
  TensorT<T> v = matmul(x, p.w_v);
  // v~_t = g_t*v~_{t-1} + (1-g_t)*v_t
  TensorT<T> vt = linear_scan(g, mul(affine(g, T(-1), T(1)), v), h0);
  TensorT<T> y = matmul(mul(z, vt), p.w_o);

  TensorT<T> h_last = reshape(slice(vt, 1, T_len - 1, 1), {B, x.dim(2)});
  return {y, h_last};
}

template struct RnnParamsT<float>;
template struct RnnParamsT<double>;
template RnnOutT<float> rnn_forward(const TensorT<float>&,
                                    const RnnParamsT<float>&,
                                    const TensorT<float>&,
                                    const TensorT<float>*);
template RnnOutT<double> rnn_forward(const TensorT<double>&,
                                     const RnnParamsT<double>&,
                                     const TensorT<double>&,
                                     const TensorT<double>*);

}  // namespace rat
