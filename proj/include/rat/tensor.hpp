#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rat/errors.hpp"

namespace rat {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Runs body(begin, end) over disjoint subranges of [0, n). Each worker owns
// its output range, so results are bitwise identical for any thread count.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);
void set_num_threads(int n);
int num_threads();

template <typename T>
class TapeT;

// Dense row-major n-d array. Copies share storage; ops never mutate their
// inputs, so sharing is safe. A tensor participates in autodiff when it
// carries a (tape, node) pair.
template <typename T>
struct TensorT {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  TapeT<T>* tape = nullptr;
  int node = -1;

  TensorT() = default;

  static TensorT zeros(Shape s);
  static TensorT full(Shape s, T value);
  static TensorT from(Shape s, std::vector<T> values);
  static TensorT scalar(T value) { return from({}, {value}); }

  bool defined() const { return data != nullptr; }
  int64_t size() const { return data ? static_cast<int64_t>(data->size()) : 0; }
  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const;  // negative indices count from the back

  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }
  T item() const;  // value of a single-element tensor

  bool tracked() const { return tape != nullptr && node >= 0; }
  // Node id if this tensor lives on `t`, else -1.
  int node_on(const TapeT<T>* t) const { return tape == t ? node : -1; }
  TensorT detached() const {
    TensorT out = *this;
    out.tape = nullptr;
    out.node = -1;
    return out;
  }
};

// Reverse-mode tape: ops append backward closures in execution order and
// backward() replays them in exact reverse order. Gradient buffers live here,
// keyed by node id; leaves are registered with leaf().
template <typename T>
class TapeT {
 public:
  int alloc_node(const Shape& shape);
  void push_op(std::function<void()> bwd);

  // Marks `t` as a differentiable leaf on this tape (in place).
  void leaf(TensorT<T>& t);

  // Seeds d(root)/d(root) = 1 and replays all recorded ops in reverse.
  // `root` must be a single-element tensor on this tape.
  void backward(const TensorT<T>& root);

  // Gradient buffer, allocated (zeroed) on first touch.
  std::vector<T>& grad_mut(int node);
  // Read-only view; empty vector means "never touched" == all zeros.
  const std::vector<T>& grad_view(int node) const;
  const std::vector<T>& grad_view(const TensorT<T>& t) const {
    return grad_view(t.node_on(this));
  }

  size_t num_nodes() const { return shapes_.size(); }
  size_t num_ops() const { return ops_.size(); }

 private:
  std::vector<Shape> shapes_;
  std::vector<std::vector<T>> grads_;
  std::vector<std::function<void()>> ops_;
  std::vector<T> empty_;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

// Integer token batch. Kept separate from TensorT<T>: ids are not
// differentiable and never enter the tape.
struct Tokens {
  Shape shape;
  std::vector<int32_t> ids;

  static Tokens zeros(Shape s);
  int64_t size() const { return static_cast<int64_t>(ids.size()); }
  int64_t dim(int i) const;
};

// Returns the unique non-null tape among inputs; throws if two tensors live
// on different tapes.
template <typename T>
TapeT<T>* tape_of(std::initializer_list<const TensorT<T>*> ts);

void check_same_shape(const char* op, const Shape& a, const Shape& b);

extern template struct TensorT<float>;
extern template struct TensorT<double>;
extern template class TapeT<float>;
extern template class TapeT<double>;
extern template TapeT<float>* tape_of(std::initializer_list<const TensorT<float>*>);
extern template TapeT<double>* tape_of(std::initializer_list<const TensorT<double>*>);

}  // namespace rat
