#include "rat/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <sstream>
#include <thread>

namespace rat {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

void check_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
  }
}

namespace {

std::atomic<int> g_threads{0};  // 0 = pick from hardware

thread_local bool t_in_worker = false;

// Persistent workers; spawning a thread per dispatch costs more than most of
// the loops it would split. Lazily sized from num_threads() at first use.
class WorkerPool {
 public:
  static WorkerPool& get() {
    static WorkerPool pool;
    return pool;
  }

  // Splits [0, n) into (workers_ + 1) contiguous ranges; the caller runs
  // range 0 while the pool runs the rest. Bodies must not throw.
  void run(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    const int64_t parts = workers_ + 1;
    const int64_t per = (n + parts - 1) / parts;
    {
      std::lock_guard<std::mutex> lk(m_);
      body_ = &body;
      n_ = n;
      per_ = per;
      done_ = 0;
      epoch_ += 1;
    }
    cv_.notify_all();
    body(0, std::min(n, per));
    std::unique_lock<std::mutex> lk(m_);
    cv_done_.wait(lk, [&] { return done_ == workers_; });
    body_ = nullptr;
  }

  int workers() const { return static_cast<int>(workers_); }

 private:
  WorkerPool() {
    int n = g_threads.load();
    if (n <= 0) {
      const unsigned hc = std::thread::hardware_concurrency();
      n = hc == 0 ? 1 : static_cast<int>(hc);
    }
    workers_ = std::max(0, n - 1);
    for (int64_t i = 0; i < workers_; ++i) {
      threads_.emplace_back([this, i] { loop(i); });
    }
  }

  ~WorkerPool() {
    {
      std::lock_guard<std::mutex> lk(m_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void loop(int64_t idx) {
    t_in_worker = true;
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int64_t, int64_t)>* body = nullptr;
      int64_t lo = 0, hi = 0;
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return stop_ || epoch_ != seen; });
        if (stop_) return;
        seen = epoch_;
        body = body_;
        lo = std::min(n_, (idx + 1) * per_);
        hi = std::min(n_, lo + per_);
      }
      if (body != nullptr && lo < hi) (*body)(lo, hi);
      {
        std::lock_guard<std::mutex> lk(m_);
        done_ += 1;
      }
      cv_done_.notify_one();
    }
  }

  std::mutex m_;
  std::condition_variable cv_, cv_done_;
  std::vector<std::thread> threads_;
  const std::function<void(int64_t, int64_t)>* body_ = nullptr;
  int64_t n_ = 0, per_ = 0, workers_ = 0, done_ = 0;
  uint64_t epoch_ = 0;
  bool stop_ = false;
};

}  // namespace

void set_num_threads(int n) { g_threads.store(n); }

int num_threads() {
  int n = g_threads.load();
  if (n > 0) return n;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
  if (n <= 0) return;
  // Nested dispatch and the single-thread setting run inline.
  if (n < 2 || num_threads() <= 1 || t_in_worker) {
    body(0, n);
    return;
  }
  WorkerPool::get().run(n, body);
}

template <typename T>
TensorT<T> TensorT<T>::zeros(Shape s) {
  TensorT out;
  int64_t n = numel(s);
  out.shape = std::move(s);
  out.data = std::make_shared<std::vector<T>>(static_cast<size_t>(n), T(0));
  return out;
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape s, T value) {
  TensorT out = zeros(std::move(s));
  std::fill(out.data->begin(), out.data->end(), value);
  return out;
}

template <typename T>
TensorT<T> TensorT<T>::from(Shape s, std::vector<T> values) {
  if (numel(s) != static_cast<int64_t>(values.size())) {
    throw ShapeError("Tensor::from: " + shape_str(s) + " needs " +
                     std::to_string(numel(s)) + " values, got " +
                     std::to_string(values.size()));
  }
  TensorT out;
  out.shape = std::move(s);
  out.data = std::make_shared<std::vector<T>>(std::move(values));
  return out;
}

template <typename T>
int64_t TensorT<T>::dim(int i) const {
  int n = ndim();
  if (i < 0) i += n;
  if (i < 0 || i >= n) {
    throw ShapeError("dim index " + std::to_string(i) + " out of range for " +
                     shape_str(shape));
  }
  return shape[static_cast<size_t>(i)];
}

template <typename T>
T TensorT<T>::item() const {
  if (size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape));
  }
  return (*data)[0];
}

template <typename T>
int TapeT<T>::alloc_node(const Shape& shape) {
  shapes_.push_back(shape);
  grads_.emplace_back();
  return static_cast<int>(shapes_.size()) - 1;
}

template <typename T>
void TapeT<T>::push_op(std::function<void()> bwd) {
  ops_.push_back(std::move(bwd));
}

template <typename T>
void TapeT<T>::leaf(TensorT<T>& t) {
  t.tape = this;
  t.node = alloc_node(t.shape);
}

template <typename T>
std::vector<T>& TapeT<T>::grad_mut(int node) {
  auto& g = grads_.at(static_cast<size_t>(node));
  if (g.empty()) g.assign(static_cast<size_t>(numel(shapes_[node])), T(0));
  return g;
}

template <typename T>
const std::vector<T>& TapeT<T>::grad_view(int node) const {
  if (node < 0) return empty_;
  return grads_.at(static_cast<size_t>(node));
}

template <typename T>
void TapeT<T>::backward(const TensorT<T>& root) {
  if (root.node_on(this) < 0) {
    throw ConfigError("backward: root is not tracked on this tape");
  }
  if (root.size() != 1) {
    throw ShapeError("backward: root must be a single-element tensor, got " +
                     shape_str(root.shape));
  }
  grad_mut(root.node)[0] = T(1);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

Tokens Tokens::zeros(Shape s) {
  Tokens out;
  int64_t n = numel(s);
  out.shape = std::move(s);
  out.ids.assign(static_cast<size_t>(n), 0);
  return out;
}

int64_t Tokens::dim(int i) const {
  int n = static_cast<int>(shape.size());
  if (i < 0) i += n;
  if (i < 0 || i >= n) {
    throw ShapeError("Tokens dim index out of range for " + shape_str(shape));
  }
  return shape[static_cast<size_t>(i)];
}

template <typename T>
TapeT<T>* tape_of(std::initializer_list<const TensorT<T>*> ts) {
  TapeT<T>* found = nullptr;
  for (const TensorT<T>* t : ts) {
    if (t == nullptr || !t->tracked()) continue;
    if (found != nullptr && found != t->tape) {
      throw ConfigError("op inputs live on different tapes");
    }
    found = t->tape;
  }
  return found;
}

template struct TensorT<float>;
template struct TensorT<double>;
template class TapeT<float>;
template class TapeT<double>;
template TapeT<float>* tape_of(std::initializer_list<const TensorT<float>*>);
template TapeT<double>* tape_of(std::initializer_list<const TensorT<double>*>);

}  // namespace rat
