#pragma once

// Dense row-major tensors with a tape-based reverse-mode autodiff.
//
// A Tensor is a cheap handle onto shared storage: copying the handle aliases
// the data, which is what the tape needs to route gradients. Use clone() for
// an independent deep copy.
//
// Everything is instantiated for float (training / inference) and double
// (gradient verification).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace geosense {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Leading dimension of a 2-D view: product of all but the last dim.
  std::size_t rows() const;
  // Last dimension.
  std::size_t cols() const;

  std::span<T> data();
  std::span<const T> data() const;
  T& at(std::size_t r, std::size_t c);
  T at(std::size_t r, std::size_t c) const;
  T item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  // Allocates a zero gradient buffer on first use. The buffer belongs to the
  // shared storage, so it is writable through any handle.
  std::span<T> grad() const;
  void zero_grad();

  const std::string& name() const;
  void set_name(std::string name);

  Tensor clone() const;
  template <typename U>
  Tensor<U> cast() const;

  // Identity of the underlying storage, used by the tape.
  const void* id() const { return s_.get(); }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::string name;
  };
  std::shared_ptr<Storage> s_;
};

// Ordered record of differentiable operations. backward() replays the local
// rules in reverse recording order, visiting each entry once.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  explicit Tape(bool recording) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool value) { recording_ = value; }

  // True when an op over these inputs must be recorded.
  bool wants(std::initializer_list<const Tensor<T>*> inputs) const;

  void record(std::string_view op, std::vector<Tensor<T>> inputs, Tensor<T> output,
              BackwardFn fn);

  void backward(const Tensor<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  std::vector<std::string> op_names() const;
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn fn;
  };
  bool recording_ = true;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations. All are shape-checked; none broadcast except add_bias.

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
// a · bᵀ, used for the tied unembedding.
template <typename T>
Tensor<T> matmul_transposed(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias);
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);

// Softmax along the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5));

// Multi-head causal self-attention over already-projected q, k, v [T×D].
template <typename T>
Tensor<T> causal_attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k,
                           const Tensor<T>& v, std::size_t heads);

// Rows of `table` selected by `ids` → [ids.size() × cols].
template <typename T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& table, std::span<const std::size_t> ids);

// Copy of `base` with row positions[i] replaced by row i of `src`.
template <typename T>
Tensor<T> scatter_rows(Tape<T>& tape, const Tensor<T>& base, const Tensor<T>& src,
                       std::span<const std::size_t> positions);

// Mean negative log-likelihood over rows whose mask is set.
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> mask);

}  // namespace geosense
