#include "geosense/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "geosense/errors.hpp"

namespace geosense {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  s_ = std::make_shared<Storage>();
  s_->shape = std::move(shape);
  s_->data = std::move(data);
  s_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!s_) throw ContractError("use of an undefined tensor");
  return s_->shape;
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return shape_numel(shape());
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  const auto& s = shape();
  return shape_numel(s) / s.back();
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  return shape().back();
}

template <typename T>
std::span<T> Tensor<T>::data() {
  shape();
  return s_->data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  shape();
  return s_->data;
}

template <typename T>
T& Tensor<T>::at(std::size_t r, std::size_t c) {
  return s_->data[r * cols() + c];
}

template <typename T>
T Tensor<T>::at(std::size_t r, std::size_t c) const {
  return s_->data[r * cols() + c];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return s_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return s_ && s_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  shape();
  s_->requires_grad = value;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return s_ && !s_->grad.empty();
}

template <typename T>
std::span<T> Tensor<T>::grad() const {
  shape();
  if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
  return s_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (s_ && !s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
}

template <typename T>
const std::string& Tensor<T>::name() const {
  static const std::string empty;
  return s_ ? s_->name : empty;
}

template <typename T>
void Tensor<T>::set_name(std::string name) {
  shape();
  s_->name = std::move(name);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(shape(), s_->data, s_->requires_grad);
  out.s_->name = s_->name;
  return out;
}

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> converted(s_->data.begin(), s_->data.end());
  Tensor<U> out(shape(), std::move(converted), s_->requires_grad);
  out.set_name(s_->name);
  return out;
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
bool Tape<T>::wants(std::initializer_list<const Tensor<T>*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <typename T>
void Tape<T>::record(std::string_view op, std::vector<Tensor<T>> inputs, Tensor<T> output,
                     BackwardFn fn) {
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::string(op), std::move(inputs), std::move(output), std::move(fn)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  const bool on_tape = std::any_of(nodes_.begin(), nodes_.end(),
                                   [&](const Node& n) { return n.output.id() == loss.id(); });
  if (!on_tape) throw ContractError("backward: loss was not produced on this tape");

  Tensor<T> seed = loss;
  seed.grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // nothing flows through this node
    it->fn();
  }
}

template <typename T>
std::vector<std::string> Tape<T>::op_names() const {
  std::vector<std::string> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.op);
  return out;
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

template <typename T>
void require_rank2(const Tensor<T>& t, std::string_view op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// C[M×N] += A[M×K] · B[K×N]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M×N] += A[M×K] · B[N×K]ᵀ
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[K×N] += A[M×K]ᵀ · B[M×N]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void check_finite(std::span<const T> xs, std::string_view op) {
  for (T x : xs) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

template <typename T>
T gelu_scalar(T x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  const T u = k * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad_scalar(T x) {
  constexpr T k = T(0.7978845608028654);
  const T x2 = x * x;
  const T u = k * (x + T(0.044715) * x2 * x);
  const T th = std::tanh(u);
  const T du = k * (T(1) + T(3) * T(0.044715) * x2);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

}  // namespace

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  auto out = Tensor<T>::zeros({m, n});
  gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (tape.wants({&a, &b})) {
    tape.record("matmul", {a, b}, out, [a, b, out, m, k, n]() mutable {
      const T* g = out.grad().data();
      if (a.requires_grad()) gemm_nt(g, b.data().data(), a.grad().data(), m, n, k);
      if (b.requires_grad()) gemm_tn(a.data().data(), g, b.grad().data(), m, k, n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul_transposed(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul_transposed");
  require_rank2(b, "matmul_transposed");
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_transposed: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  }
  auto out = Tensor<T>::zeros({m, n});
  gemm_nt(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (tape.wants({&a, &b})) {
    tape.record("matmul_transposed", {a, b}, out, [a, b, out, m, k, n]() mutable {
      const T* g = out.grad().data();
      // dA = G · B, dB = Gᵀ · A
      if (a.requires_grad()) gemm_nn(g, b.data().data(), a.grad().data(), m, n, k);
      if (b.requires_grad()) gemm_tn(g, a.data().data(), b.grad().data(), m, n, k);
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto out = Tensor<T>::zeros(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (tape.wants({&a, &b})) {
    tape.record("add", {a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  const auto n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match columns of " +
                         shape_str(x.shape()));
  }
  const auto m = x.rows();
  auto out = Tensor<T>::zeros(x.shape());
  auto o = out.data();
  auto xs = x.data(), bs = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = xs[i * n + j] + bs[j];
  if (tape.wants({&x, &bias})) {
    tape.record("add_bias", {x, bias}, out, [x, bias, out, m, n]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto out = Tensor<T>::zeros(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (tape.wants({&a, &b})) {
    tape.record("mul", {a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      auto x = a.data(), y = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
  auto out = Tensor<T>::zeros(x.shape());
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xs[i] * factor;
  if (tape.wants({&x})) {
    tape.record("scale", {x}, out, [x, out, factor]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& x) {
  auto out = Tensor<T>::zeros(x.shape());
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(xs[i]);
  if (tape.wants({&x})) {
    tape.record("tanh", {x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x) {
  auto out = Tensor<T>::zeros(x.shape());
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = gelu_scalar(xs[i]);
  if (tape.wants({&x})) {
    tape.record("gelu", {x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto xs = x.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_grad_scalar(xs[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  auto out = Tensor<T>::scalar(acc);
  if (tape.wants({&x})) {
    tape.record("sum", {x}, out, [x, out]() mutable {
      const T g = out.grad()[0];
      for (auto& gx : x.grad()) gx += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x) {
  check_finite<T>(x.data(), "softmax");
  const auto m = x.rows(), n = x.cols();
  auto out = Tensor<T>::zeros(x.shape());
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xs.data() + i * n;
    T* orow = o.data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T z = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= z;
  }
  if (tape.wants({&x})) {
    tape.record("softmax", {x}, out, [x, out, m, n]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < m; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  const auto m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
  }
  auto out = Tensor<T>::zeros(x.shape());
  std::vector<T> xhat(m * n);
  std::vector<T> inv_std(m);
  auto xs = x.data();
  auto o = out.data();
  auto gs = gain.data(), bs = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xs.data() + i * n;
    T mean = T(0);
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= T(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mean) * is;
      xhat[i * n + j] = h;
      o[i * n + j] = h * gs[j] + bs[j];
    }
  }
  if (tape.wants({&x, &gain, &bias})) {
    tape.record("layer_norm", {x, gain, bias}, out,
                [x, gain, bias, out, m, n, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)]() mutable {
                  auto g = out.grad();
                  auto gs = gain.data();
                  if (gain.requires_grad() || bias.requires_grad()) {
                    auto gg = gain.grad();
                    auto gb = bias.grad();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) {
                        gg[j] += g[i * n + j] * xhat[i * n + j];
                        gb[j] += g[i * n + j];
                      }
                  }
                  if (x.requires_grad()) {
                    auto gx = x.grad();
                    for (std::size_t i = 0; i < m; ++i) {
                      T mean_dh = T(0), mean_dh_h = T(0);
                      for (std::size_t j = 0; j < n; ++j) {
                        const T dh = g[i * n + j] * gs[j];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[i * n + j];
                      }
                      mean_dh /= T(n);
                      mean_dh_h /= T(n);
                      for (std::size_t j = 0; j < n; ++j) {
                        const T dh = g[i * n + j] * gs[j];
                        gx[i * n + j] += inv_std[i] * (dh - mean_dh - xhat[i * n + j] * mean_dh_h);
                      }
                    }
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> causal_attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k,
                           const Tensor<T>& v, std::size_t heads) {
  require_rank2(q, "causal_attention");
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  const auto len = q.shape()[0], width = q.shape()[1];
  if (heads == 0 || width % heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(width) +
                         " not divisible by heads " + std::to_string(heads));
  }
  const auto hd = width / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(hd));
  auto out = Tensor<T>::zeros({len, width});
  // probs[h][i][j] for j <= i; stored dense for simplicity.
  std::vector<T> probs(heads * len * len, T(0));
  auto qs = q.data(), ks = k.data(), vs = v.data();
  auto o = out.data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < len; ++i) {
      T* p = probs.data() + (h * len + i) * len;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        T s = T(0);
        for (std::size_t d = 0; d < hd; ++d) s += qs[i * width + off + d] * ks[j * width + off + d];
        p[j] = s * inv_sqrt;
        mx = std::max(mx, p[j]);
      }
      T z = T(0);
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] /= z;
        const T w = p[j];
        for (std::size_t d = 0; d < hd; ++d) o[i * width + off + d] += w * vs[j * width + off + d];
      }
    }
  }
  if (tape.wants({&q, &k, &v})) {
    tape.record("causal_attention", {q, k, v}, out,
                [q, k, v, out, len, width, heads, hd, inv_sqrt,
                 probs = std::move(probs)]() mutable {
                  auto g = out.grad();
                  auto qs = q.data(), ks = k.data(), vs = v.data();
                  auto gq = q.grad(), gk = k.grad(), gv = v.grad();
                  std::vector<T> dp(len);
                  for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t off = h * hd;
                    for (std::size_t i = 0; i < len; ++i) {
                      const T* p = probs.data() + (h * len + i) * len;
                      T dot = T(0);
                      for (std::size_t j = 0; j <= i; ++j) {
                        T s = T(0);
                        for (std::size_t d = 0; d < hd; ++d)
                          s += g[i * width + off + d] * vs[j * width + off + d];
                        dp[j] = s;
                        dot += s * p[j];
                      }
                      for (std::size_t j = 0; j <= i; ++j) {
                        for (std::size_t d = 0; d < hd; ++d)
                          gv[j * width + off + d] += p[j] * g[i * width + off + d];
                        const T ds = p[j] * (dp[j] - dot) * inv_sqrt;
                        if (ds == T(0)) continue;
                        for (std::size_t d = 0; d < hd; ++d) {
                          gq[i * width + off + d] += ds * ks[j * width + off + d];
                          gk[j * width + off + d] += ds * qs[i * width + off + d];
                        }
                      }
                    }
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& table, std::span<const std::size_t> ids) {
  require_rank2(table, "gather_rows");
  const auto vocab = table.shape()[0], n = table.shape()[1];
  if (ids.empty()) throw DimensionError("gather_rows: empty index list");
  for (auto id : ids) {
    if (id >= vocab) {
      throw DimensionError("gather_rows: index " + std::to_string(id) + " out of range for " +
                           shape_str(table.shape()));
    }
  }
  auto out = Tensor<T>::zeros({ids.size(), n});
  auto o = out.data();
  auto t = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(t.data() + ids[i] * n, n, o.data() + i * n);
  if (tape.wants({&table})) {
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    tape.record("gather_rows", {table}, out, [table, out, n, idx = std::move(idx)]() mutable {
      auto g = out.grad();
      auto gt = table.grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) gt[idx[i] * n + j] += g[i * n + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> scatter_rows(Tape<T>& tape, const Tensor<T>& base, const Tensor<T>& src,
                       std::span<const std::size_t> positions) {
  require_rank2(base, "scatter_rows");
  require_rank2(src, "scatter_rows");
  const auto m = base.shape()[0], n = base.shape()[1];
  if (src.shape()[1] != n || src.shape()[0] != positions.size()) {
    throw DimensionError("scatter_rows: source " + shape_str(src.shape()) + " does not fit " +
                         std::to_string(positions.size()) + " rows of " + shape_str(base.shape()));
  }
  std::vector<std::uint8_t> replaced(m, 0);
  for (auto p : positions) {
    if (p >= m) throw DimensionError("scatter_rows: position out of range");
    if (replaced[p]) throw DimensionError("scatter_rows: duplicate position");
    replaced[p] = 1;
  }
  auto out = base.clone();
  out.set_requires_grad(false);
  auto o = out.data();
  auto s = src.data();
  for (std::size_t i = 0; i < positions.size(); ++i)
    std::copy_n(s.data() + i * n, n, o.data() + positions[i] * n);
  if (tape.wants({&base, &src})) {
    std::vector<std::size_t> pos(positions.begin(), positions.end());
    tape.record("scatter_rows", {base, src}, out,
                [base, src, out, m, n, pos = std::move(pos),
                 replaced = std::move(replaced)]() mutable {
                  auto g = out.grad();
                  if (base.requires_grad()) {
                    auto gb = base.grad();
                    for (std::size_t i = 0; i < m; ++i) {
                      if (replaced[i]) continue;
                      for (std::size_t j = 0; j < n; ++j) gb[i * n + j] += g[i * n + j];
                    }
                  }
                  if (src.requires_grad()) {
                    auto gs = src.grad();
                    for (std::size_t i = 0; i < pos.size(); ++i)
                      for (std::size_t j = 0; j < n; ++j) gs[i * n + j] += g[pos[i] * n + j];
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> mask) {
  require_rank2(logits, "cross_entropy");
  const auto rows = logits.shape()[0], vocab = logits.shape()[1];
  if (targets.size() != rows || mask.size() != rows) {
    throw DimensionError("cross_entropy: targets/mask length must equal " + std::to_string(rows));
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!mask[i]) continue;
    ++count;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw DimensionError("cross_entropy: target id " + std::to_string(targets[i]) +
                           " out of range for vocabulary " + std::to_string(vocab));
    }
  }
  if (count == 0) throw EmptySupervisionError("cross_entropy: mask selects no positions");

  auto ls = logits.data();
  std::vector<T> probs(rows * vocab, T(0));
  T total = T(0);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!mask[i]) continue;
    const T* row = ls.data() + i * vocab;
    T* p = probs.data() + i * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T z = T(0);
    for (std::size_t j = 0; j < vocab; ++j) {
      p[j] = std::exp(row[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < vocab; ++j) p[j] /= z;
    total += -(row[targets[i]] - mx - std::log(z));
  }
  auto out = Tensor<T>::scalar(total / T(count));
  if (tape.wants({&logits})) {
    std::vector<int> tg(targets.begin(), targets.end());
    std::vector<std::uint8_t> mk(mask.begin(), mask.end());
    tape.record("cross_entropy", {logits}, out,
                [logits, out, rows, vocab, count, probs = std::move(probs), tg = std::move(tg),
                 mk = std::move(mk)]() mutable {
                  const T g = out.grad()[0] / T(count);
                  auto gl = logits.grad();
                  for (std::size_t i = 0; i < rows; ++i) {
                    if (!mk[i]) continue;
                    for (std::size_t j = 0; j < vocab; ++j) {
                      const T onehot = static_cast<int>(j) == tg[i] ? T(1) : T(0);
                      gl[i * vocab + j] += g * (probs[i * vocab + j] - onehot);
                    }
                  }
                });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Explicit instantiation

#define GEOSENSE_INSTANTIATE(T)                                                                  \
  template class Tensor<T>;                                                                      \
  template class Tape<T>;                                                                        \
  template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> matmul_transposed(Tape<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> add_bias(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                       \
  template Tensor<T> tanh(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> gelu(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                            \
  template Tensor<T> softmax(Tape<T>&, const Tensor<T>&);                                        \
  template Tensor<T> layer_norm(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                T);                                                              \
  template Tensor<T> causal_attention(Tape<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                      const Tensor<T>&, std::size_t);                            \
  template Tensor<T> gather_rows(Tape<T>&, const Tensor<T>&, std::span<const std::size_t>);      \
  template Tensor<T> scatter_rows(Tape<T>&, const Tensor<T>&, const Tensor<T>&,                  \
                                  std::span<const std::size_t>);                                 \
  template Tensor<T> cross_entropy(Tape<T>&, const Tensor<T>&, std::span<const int>,             \
                                   std::span<const std::uint8_t>);

GEOSENSE_INSTANTIATE(float)
GEOSENSE_INSTANTIATE(double)

template Tensor<double> Tensor<float>::cast<double>() const;
template Tensor<float> Tensor<double>::cast<float>() const;
template Tensor<float> Tensor<float>::cast<float>() const;
template Tensor<double> Tensor<double>::cast<double>() const;

}  // namespace geosense
