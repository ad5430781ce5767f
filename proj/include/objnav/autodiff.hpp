#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace objnav::ad {

using Shape = std::vector<int>;

/// 64-byte aligned storage. Vectorized reductions peel according to pointer alignment, so a fixed
/// alignment keeps floating-point results independent of where the allocator placed the buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

std::string shape_str(const Shape& s);
size_t shape_size(const Shape& s);

/// Dense row-major array.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, const std::vector<T>& data);
  Tensor(Shape shape, AlignedVector<T> data);
  Tensor(Shape shape, std::initializer_list<T> data) : Tensor(std::move(shape), AlignedVector<T>(data)) {}

  static Tensor scalar(T v) { return Tensor(Shape{}, AlignedVector<T>{v}); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  size_t size() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  AlignedVector<T>& storage() { return data_; }
  const AlignedVector<T>& storage() const { return data_; }

  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }
  T item() const { return data_.at(0); }

  void fill(T v);
  /// Same data, new shape of equal size.
  Tensor reshaped(Shape shape) const;

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, AlignedVector<U>(data_.begin(), data_.end()));
  }

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

/// Handle to a node recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order; backward walks them in reverse.
///
/// A tape built with `record = false` keeps forward values only (inference).
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  /// Leaf that never receives a gradient. The borrowed form must outlive the tape.
  Var constant(Tensor<T> value);
  Var constant_ref(const Tensor<T>& value);
  /// Leaf whose gradient is accumulated by backward(). Borrowed; must outlive the tape.
  Var parameter(const Tensor<T>& value);

  const Tensor<T>& value(Var v) const;
  /// Accumulated gradient; a zero tensor when none reached the node.
  Tensor<T> grad(Var v) const;
  bool has_grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  const Shape& shape(Var v) const { return value(v).shape(); }

  size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every parameter leaf.
  void backward(Var loss);

  // Used by primitive implementations.
  Var push(Tensor<T> value, std::vector<int> inputs, BackwardFn fn, const char* op);
  Tensor<T>& grad_buffer(int id);
  const Tensor<T>& grad_ref(int id) const { return nodes_[id].grad; }
  int input(int id, size_t k) const { return nodes_[id].inputs[k]; }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    std::vector<int> inputs;
    BackwardFn backward;
    const char* op = "";
    bool requires_grad = false;
    bool is_parameter = false;
  };
  bool record_;
  std::vector<Node> nodes_;
};

// Primitives. Every call checks shapes (ShapeError) and output finiteness (NumericError).

/// x [N,in] * w [in,out] + b [out]
template <class T> Var affine(Tape<T>& t, Var x, Var w, Var b);
/// x [N,in] * w [in,out], no bias.
template <class T> Var matmul(Tape<T>& t, Var x, Var w);
/// Channels-last valid convolution: x [N,L,Cin], kernel [K,Cin,Cout], bias [Cout] -> [N,Lout,Cout].
template <class T> Var conv1d(Tape<T>& t, Var x, Var kernel, Var bias, int stride);
template <class T> Var tanh(Tape<T>& t, Var x);
template <class T> Var relu(Tape<T>& t, Var x);
template <class T> Var sigmoid(Tape<T>& t, Var x);
template <class T> Var exp(Tape<T>& t, Var x);
template <class T> Var log(Tape<T>& t, Var x);
template <class T> Var square(Tape<T>& t, Var x);
template <class T> Var add(Tape<T>& t, Var a, Var b);
template <class T> Var sub(Tape<T>& t, Var a, Var b);
template <class T> Var mul(Tape<T>& t, Var a, Var b);
/// a * c + d with scalar constants.
template <class T> Var scale(Tape<T>& t, Var a, T c, T d = T(0));
/// Sum of all elements -> scalar.
template <class T> Var sum(Tape<T>& t, Var x);
template <class T> Var mean(Tape<T>& t, Var x);
/// Row sums of a 2-D tensor: [N,M] -> [N,1].
template <class T> Var sum_cols(Tape<T>& t, Var x);
template <class T> Var min_elementwise(Tape<T>& t, Var a, Var b);
/// Hard clamp; gradient passes only strictly inside (lo, hi).
template <class T> Var clamp(Tape<T>& t, Var x, T lo, T hi);
/// Concatenation along `axis`.
template <class T> Var concat(Tape<T>& t, const std::vector<Var>& parts, int axis);
/// Elements [begin, end) along `axis`.
template <class T> Var slice(Tape<T>& t, Var x, int axis, int begin, int end);
template <class T> Var reshape(Tape<T>& t, Var x, Shape shape);

/// While alive, relu, clamp and min_elementwise on this thread fold their branch choices into a
/// signature. Two evaluations with equal signatures lie on the same smooth piece.
class BranchProbe {
 public:
  BranchProbe();
  ~BranchProbe();
  BranchProbe(const BranchProbe&) = delete;
  BranchProbe& operator=(const BranchProbe&) = delete;

  uint64_t signature() const { return hash_; }
  void reset() { hash_ = 1469598103934665603ull; }
  void mix(uint8_t branch) {
    hash_ ^= branch;
    hash_ *= 1099511628211ull;
  }
  /// Probe installed on the calling thread, if any.
  static BranchProbe* active();

 private:
  uint64_t hash_ = 1469598103934665603ull;
  BranchProbe* prev_ = nullptr;
};

}  // namespace objnav::ad
