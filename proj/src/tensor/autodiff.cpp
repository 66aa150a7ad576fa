#include "mhcnn/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "mhcnn/kernels.hpp"

namespace mhcnn::ad {
namespace {

thread_local ScopedKinkProbe* t_probe = nullptr;

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (checked_mode() && !t.all_finite()) throw NonFiniteError(std::string(op) + ": produced NaN/Inf");
}

template <typename T>
Tape<T>& tape_of(const Var<T>& a) {
  if (a.tape() == nullptr) throw std::invalid_argument("var is not attached to a tape");
  return *a.tape();
}

template <typename T>
Tape<T>& tape_of(const Var<T>& a, const Var<T>& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("vars belong to different tapes");
  return tape_of(a);
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(s));
}

template <typename T>
void probe(const Tensor<T>& x) {
  if (t_probe != nullptr) t_probe->observe(x.ptr(), x.size());
}

}  // namespace

ScopedKinkProbe::ScopedKinkProbe() : previous_(t_probe) { t_probe = this; }
ScopedKinkProbe::~ScopedKinkProbe() { t_probe = previous_; }

void ScopedKinkProbe::observe(const double* values, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    hash_ ^= values[i] > 0.0 ? 1U : 2U;
    hash_ *= 0x100000001b3ULL;
  }
}

void ScopedKinkProbe::observe(const float* values, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    hash_ ^= values[i] > 0.0F ? 1U : 2U;
    hash_ *= 0x100000001b3ULL;
  }
}

// ---- Tape -----------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  check_finite(value, "constant");
  auto ptr = std::make_shared<const Tensor<T>>(std::move(value));
  nodes_.push_back({ptr, nullptr, false});
  return Var<T>(this, nodes_.size() - 1, std::move(ptr));
}

template <typename T>
Var<T> Tape<T>::parameter(const std::string& name, Tensor<T> value) {
  if (by_name_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto ptr = std::make_shared<const Tensor<T>>(std::move(value));
  nodes_.push_back({ptr, nullptr, recording_});
  by_name_.emplace(name, nodes_.size() - 1);
  param_names_.push_back(name);
  return Var<T>(this, nodes_.size() - 1, std::move(ptr));
}

template <typename T>
Var<T> Tape<T>::param(const std::string& name) const {
  const auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::out_of_range("unknown parameter: " + name);
  return Var<T>(const_cast<Tape*>(this), it->second, nodes_[it->second].value);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward fn) {
  return record(std::make_shared<const Tensor<T>>(std::move(value)), inputs, std::move(fn));
}

template <typename T>
Var<T> Tape<T>::record(std::shared_ptr<const Tensor<T>> ptr, const std::vector<Var<T>>& inputs,
                       Backward fn) {
  const bool needs = recording_ && std::any_of(inputs.begin(), inputs.end(),
                                               [this](const Var<T>& v) { return requires_grad(v); });
  if (!needs) return Var<T>(this, Var<T>::kUntracked, std::move(ptr));
  nodes_.push_back({ptr, std::move(fn), true});
  return Var<T>(this, nodes_.size() - 1, std::move(ptr));
}

template <typename T>
bool Tape<T>::requires_grad(const Var<T>& v) const {
  return v.tape() == this && v.tracked() && nodes_[v.id()].requires_grad;
}

template <typename T>
void Tape<T>::accumulate(const Var<T>& v, const Tensor<T>& g) {
  if (!requires_grad(v)) return;
  if (g.shape() != v.shape())
    throw ShapeError("gradient shape " + to_string(g.shape()) + " does not match value " +
                     to_string(v.shape()));
  Tensor<T>& slot = grads_[v.id()];
  if (slot.empty()) {
    slot = g;
    return;
  }
  for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
}

template <typename T>
std::map<std::string, Tensor<T>> Tape<T>::backward(const Var<T>& loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss was not produced on this tape");
  if (loss.value().size() != 1) throw ShapeError("backward: loss must be a scalar");
  grads_.assign(nodes_.size(), Tensor<T>());
  if (loss.tracked()) {
    grads_[loss.id()] = Tensor<T>::fill(loss.shape(), T{1});
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.backward || grads_[i].empty()) continue;
      const Tensor<T> g = std::move(grads_[i]);
      grads_[i] = Tensor<T>();
      node.backward(*this, g);
    }
  }
  std::map<std::string, Tensor<T>> out;
  for (const auto& name : param_names_) {
    const std::size_t id = by_name_.at(name);
    Tensor<T>& g = grads_[id];
    out.emplace(name, g.empty() ? Tensor<T>(nodes_[id].value->shape()) : std::move(g));
  }
  grads_.clear();
  return out;
}

template class Tape<float>;
template class Tape<double>;

// ---- elementwise ----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& tape = tape_of(a, b);
  auto out = ops::add(a.value(), b.value());
  check_finite(out, "add");
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto& tape = tape_of(a, b);
  auto out = ops::sub(a.value(), b.value());
  check_finite(out, "sub");
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.accumulate(b, ops::scale(g, T{-1}));
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto& tape = tape_of(a, b);
  auto out = ops::mul(a.value(), b.value());
  check_finite(out, "mul");
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a, ops::mul(g, b.value()));
    if (t.requires_grad(b)) t.accumulate(b, ops::mul(g, a.value()));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T k) {
  auto& tape = tape_of(a);
  auto out = ops::scale(a.value(), k);
  check_finite(out, "scale");
  return tape.record(std::move(out), {a},
                     [a, k](Tape<T>& t, const Tensor<T>& g) { t.accumulate(a, ops::scale(g, k)); });
}

// ---- layout ---------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  auto& tape = tape_of(a);
  return tape.record(ops::reshape(a.value(), std::move(shape)), {a},
                     [a](Tape<T>& t, const Tensor<T>& g) { t.accumulate(a, ops::reshape(g, a.shape())); });
}

template <typename T>
Var<T> permute(const Var<T>& a, const std::vector<std::size_t>& axes) {
  auto& tape = tape_of(a);
  auto out = ops::permute(a.value(), axes);
  return tape.record(std::move(out), {a}, [a, inverse = ops::inverse_permutation(axes)](
                                               Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, ops::permute(g, inverse));
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  auto& tape = tape_of(parts.front());
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw std::invalid_argument("vars belong to different tapes");
    values.push_back(p.value());
  }
  auto out = ops::concat(std::span<const Tensor<T>>(values), axis);
  return tape.record(std::move(out), parts, [parts, axis](Tape<T>& t, const Tensor<T>& g) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t len = p.dim(axis);
      if (t.requires_grad(p)) t.accumulate(p, ops::slice(g, axis, offset, len));
      offset += len;
    }
  });
}

template <typename T>
Var<T> rotate90(const Var<T>& a, int quarter_turns) {
  auto& tape = tape_of(a);
  return tape.record(ops::rotate90(a.value(), quarter_turns), {a},
                     [a, quarter_turns](Tape<T>& t, const Tensor<T>& g) {
                       t.accumulate(a, ops::rotate90(g, -quarter_turns));
                     });
}

// ---- linear algebra -------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& tape = tape_of(a, b);
  auto out = ops::matmul_batched(a.value(), b.value());
  check_finite(out, "matmul");
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const std::size_t r = a.shape().size();
    const std::size_t m = a.dim(r - 2);
    const std::size_t k = a.dim(r - 1);
    const std::size_t n = b.dim(r - 1);
    const std::size_t batch = a.value().size() / (m * k);
    if (t.requires_grad(a)) {
      Tensor<T> da(a.shape());
      for (std::size_t s = 0; s < batch; ++s)
        kernels::gemm(false, true, m, k, n, g.ptr() + s * m * n, n, b.value().ptr() + s * k * n, n,
                      da.ptr() + s * m * k, k, false);
      t.accumulate(a, da);
    }
    if (t.requires_grad(b)) {
      Tensor<T> db(b.shape());
      for (std::size_t s = 0; s < batch; ++s)
        kernels::gemm(true, false, k, n, m, a.value().ptr() + s * m * k, k, g.ptr() + s * m * n, n,
                      db.ptr() + s * k * n, n, false);
      t.accumulate(b, db);
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::type_identity_t<Var<T>>* bias,
              ops::Conv2dParams params) {
  auto& tape = tape_of(x, weight);
  if (bias != nullptr && bias->tape() != &tape) throw std::invalid_argument("vars belong to different tapes");
  auto out = ops::conv2d(x.value(), weight.value(), bias ? &bias->value() : nullptr, params);
  check_finite(out, "conv2d");
  std::vector<Var<T>> inputs{x, weight};
  if (bias != nullptr) inputs.push_back(*bias);
  const kernels::ConvGeometry geom{x.dim(0),      x.dim(1),      x.dim(2),      x.dim(3),
                                   weight.dim(0), weight.dim(2), weight.dim(3), params.stride,
                                   params.padding};
  return tape.record(std::move(out), inputs, [inputs, geom](Tape<T>& t, const Tensor<T>& g) {
    const Var<T>& xv = inputs[0];
    const Var<T>& wv = inputs[1];
    if (t.requires_grad(xv)) {
      Tensor<T> dx(xv.shape());
      kernels::conv2d_backward_input(geom, wv.value().ptr(), g.ptr(), dx.ptr());
      t.accumulate(xv, dx);
    }
    const bool want_bias = inputs.size() == 3 && t.requires_grad(inputs[2]);
    if (t.requires_grad(wv) || want_bias) {
      Tensor<T> dw(wv.shape());
      Tensor<T> db({geom.out_channels});
      kernels::conv2d_backward_weight(geom, xv.value().ptr(), g.ptr(), dw.ptr(),
                                      want_bias ? db.ptr() : nullptr);
      t.accumulate(wv, dw);
      if (want_bias) t.accumulate(inputs[2], db);
    }
  });
}

// ---- activations ----------------------------------------------------------

template <typename T>
Var<T> relu(const Var<T>& x) {
  auto& tape = tape_of(x);
  probe(x.value());
  Tensor<T> out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    const auto& in = x.value();
    for (std::size_t i = 0; i < in.size(); ++i) dx[i] = in[i] > T{0} ? g[i] : T{0};
    t.accumulate(x, dx);
  });
}

template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& slope) {
  auto& tape = tape_of(x, slope);
  require_rank(x.shape(), 4, "prelu");
  const std::size_t channels = x.dim(1);
  if (slope.value().size() != channels) throw ShapeError("prelu: one slope per channel required");
  const std::size_t plane = x.dim(2) * x.dim(3);
  probe(x.value());
  Tensor<T> out(x.shape());
  const auto& in = x.value();
  const auto& a = slope.value();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const T s = a[(i / plane) % channels];
    out[i] = in[i] > T{0} ? in[i] : s * in[i];
  }
  check_finite(out, "prelu");
  return tape.record(std::move(out), {x, slope}, [x, slope, channels, plane](Tape<T>& t,
                                                                            const Tensor<T>& g) {
    const auto& in = x.value();
    const auto& a = slope.value();
    if (t.requires_grad(x)) {
      Tensor<T> dx(x.shape());
      for (std::size_t i = 0; i < in.size(); ++i)
        dx[i] = in[i] > T{0} ? g[i] : a[(i / plane) % channels] * g[i];
      t.accumulate(x, dx);
    }
    if (t.requires_grad(slope)) {
      Tensor<T> da(slope.shape());
      for (std::size_t i = 0; i < in.size(); ++i)
        if (!(in[i] > T{0})) da[(i / plane) % channels] += in[i] * g[i];
      t.accumulate(slope, da);
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  auto& tape = tape_of(x);
  Tensor<T> out(x.shape());
  const auto& in = x.value();
  // Saturated tails are pinned one step inside (0, 1) so a gate never fully
  // opens or closes.
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T{1}, T{0});
  for (std::size_t i = 0; i < in.size(); ++i)
    out[i] = std::clamp(T{1} / (T{1} + std::exp(-in[i])), lo, hi);
  check_finite(out, "sigmoid");
  auto y = std::make_shared<const Tensor<T>>(std::move(out));
  return tape.record(y, {x}, [x, y](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    const auto& yv = *y;
    for (std::size_t i = 0; i < yv.size(); ++i) dx[i] = g[i] * yv[i] * (T{1} - yv[i]);
    t.accumulate(x, dx);
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  auto& tape = tape_of(x);
  T acc{0};
  for (const T v : x.value().data()) acc += v;
  return tape.record(Tensor<T>({1}, {acc}), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, Tensor<T>::fill(x.shape(), g[0]));
  });
}

// ---- normalization --------------------------------------------------------

namespace {

// Backward of (x - mean) * invstd over one group of `count` samples, given
// xhat and the gradient w.r.t. xhat.
template <typename T>
void standardize_backward(std::size_t count, T invstd, const T* xhat, const T* dxhat, T* dx) {
  T sum_d{0};
  T sum_dx{0};
  for (std::size_t i = 0; i < count; ++i) {
    sum_d += dxhat[i];
    sum_dx += dxhat[i] * xhat[i];
  }
  const T inv_n = T{1} / static_cast<T>(count);
  for (std::size_t i = 0; i < count; ++i)
    dx[i] = invstd * (dxhat[i] - inv_n * sum_d - xhat[i] * inv_n * sum_dx);
}

}  // namespace

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, BatchNormOptions options) {
  auto& tape = tape_of(x, gamma);
  require_rank(x.shape(), 4, "batch_norm");
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  const std::size_t count = batch * plane;
  if (gamma.value().size() != channels || beta.value().size() != channels ||
      running_mean.size() != channels || running_var.size() != channels)
    throw ShapeError("batch_norm: per-channel parameter size mismatch");

  const auto& in = x.value();
  Tensor<T> mean({channels});
  Tensor<T> invstd({channels});
  for (std::size_t c = 0; c < channels; ++c) {
    if (options.training) {
      T acc{0};
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = in.ptr() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      const T mu = acc / static_cast<T>(count);
      T var{0};
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = in.ptr() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
      }
      var /= static_cast<T>(count);
      mean[c] = mu;
      invstd[c] = T{1} / std::sqrt(var + static_cast<T>(options.eps));
      const T unbiased = count > 1 ? var * static_cast<T>(count) / static_cast<T>(count - 1) : var;
      const T m = static_cast<T>(options.momentum);
      running_mean[c] = (T{1} - m) * running_mean[c] + m * mu;
      running_var[c] = (T{1} - m) * running_var[c] + m * unbiased;
    } else {
      mean[c] = running_mean[c];
      invstd[c] = T{1} / std::sqrt(running_var[c] + static_cast<T>(options.eps));
    }
  }

  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[base + i] = (in[base + i] - mean[c]) * invstd[c];
        out[base + i] = gamma.value()[c] * xhat[base + i] + beta.value()[c];
      }
    }
  check_finite(out, "batch_norm");
  const bool training = options.training;
  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat = std::move(xhat), invstd, training, batch, channels, plane](
                         Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T> dgamma({channels});
                       Tensor<T> dbeta({channels});
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t c = 0; c < channels; ++c) {
                           const std::size_t base = (b * channels + c) * plane;
                           for (std::size_t i = 0; i < plane; ++i) {
                             dgamma[c] += g[base + i] * xhat[base + i];
                             dbeta[c] += g[base + i];
                           }
                         }
                       t.accumulate(gamma, dgamma);
                       t.accumulate(beta, dbeta);
                       if (!t.requires_grad(x)) return;
                       Tensor<T> dx(x.shape());
                       if (!training) {
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t c = 0; c < channels; ++c) {
                             const std::size_t base = (b * channels + c) * plane;
                             const T k = gamma.value()[c] * invstd[c];
                             for (std::size_t i = 0; i < plane; ++i) dx[base + i] = g[base + i] * k;
                           }
                         t.accumulate(x, dx);
                         return;
                       }
                       // Gather each channel's samples contiguously, then apply the
                       // standardization backward rule.
                       const std::size_t count = batch * plane;
                       std::vector<T> xh(count), dxh(count), dxc(count);
                       for (std::size_t c = 0; c < channels; ++c) {
                         const T gm = gamma.value()[c];
                         for (std::size_t b = 0; b < batch; ++b) {
                           const std::size_t base = (b * channels + c) * plane;
                           for (std::size_t i = 0; i < plane; ++i) {
                             xh[b * plane + i] = xhat[base + i];
                             dxh[b * plane + i] = g[base + i] * gm;
                           }
                         }
                         standardize_backward(count, invstd[c], xh.data(), dxh.data(), dxc.data());
                         for (std::size_t b = 0; b < batch; ++b) {
                           const std::size_t base = (b * channels + c) * plane;
                           for (std::size_t i = 0; i < plane; ++i) dx[base + i] = dxc[b * plane + i];
                         }
                       }
                       t.accumulate(x, dx);
                     });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, double eps) {
  auto& tape = tape_of(x);
  require_rank(x.shape(), 4, "instance_norm");
  const std::size_t slices = x.dim(0) * x.dim(1);
  const std::size_t count = x.dim(2) * x.dim(3);
  const auto& in = x.value();
  Tensor<T> out(x.shape());
  Tensor<T> invstd({slices});
  for (std::size_t s = 0; s < slices; ++s) {
    const T* p = in.ptr() + s * count;
    T acc{0};
    for (std::size_t i = 0; i < count; ++i) acc += p[i];
    const T mu = acc / static_cast<T>(count);
    T var{0};
    for (std::size_t i = 0; i < count; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<T>(count);
    invstd[s] = T{1} / std::sqrt(var + static_cast<T>(eps));
    T* q = out.ptr() + s * count;
    for (std::size_t i = 0; i < count; ++i) q[i] = (p[i] - mu) * invstd[s];
  }
  check_finite(out, "instance_norm");
  auto y = std::make_shared<const Tensor<T>>(std::move(out));
  return tape.record(y, {x}, [x, y, invstd, slices, count](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T> dx(x.shape());
                       const auto& xhat = *y;
                       for (std::size_t s = 0; s < slices; ++s)
                         standardize_backward(count, invstd[s], xhat.ptr() + s * count,
                                              g.ptr() + s * count, dx.ptr() + s * count);
                       t.accumulate(x, dx);
                     });
}

// ---- channel attention pieces ---------------------------------------------

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  auto& tape = tape_of(x);
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t slices = x.dim(0) * x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1)});
  for (std::size_t s = 0; s < slices; ++s) {
    T acc{0};
    const T* p = x.value().ptr() + s * plane;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    out[s] = acc / static_cast<T>(plane);
  }
  return tape.record(std::move(out), {x}, [x, slices, plane](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    for (std::size_t s = 0; s < slices; ++s) {
      const T v = g[s] / static_cast<T>(plane);
      std::fill_n(dx.ptr() + s * plane, plane, v);
    }
    t.accumulate(x, dx);
  });
}

template <typename T>
Var<T> channel_conv1d(const Var<T>& g_in, const Var<T>& kernel) {
  auto& tape = tape_of(g_in, kernel);
  require_rank(g_in.shape(), 2, "channel_conv1d");
  const std::size_t k = kernel.value().size();
  if (k % 2 == 0) throw ShapeError("channel_conv1d: kernel length must be odd");
  const std::size_t batch = g_in.dim(0);
  const std::size_t channels = g_in.dim(1);
  const long pad = static_cast<long>(k / 2);
  const auto& w = kernel.value();
  const auto& in = g_in.value();
  Tensor<T> out(g_in.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      T acc{0};
      for (std::size_t j = 0; j < k; ++j) {
        const long src = static_cast<long>(c) + static_cast<long>(j) - pad;
        if (src < 0 || src >= static_cast<long>(channels)) continue;
        acc += w[j] * in[b * channels + static_cast<std::size_t>(src)];
      }
      out[b * channels + c] = acc;
    }
  return tape.record(std::move(out), {g_in, kernel},
                     [g_in, kernel, batch, channels, k, pad](Tape<T>& t, const Tensor<T>& g) {
                       const auto& w = kernel.value();
                       const auto& in = g_in.value();
                       Tensor<T> din(g_in.shape());
                       Tensor<T> dw(kernel.shape());
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t c = 0; c < channels; ++c) {
                           const T go = g[b * channels + c];
                           for (std::size_t j = 0; j < k; ++j) {
                             const long src = static_cast<long>(c) + static_cast<long>(j) - pad;
                             if (src < 0 || src >= static_cast<long>(channels)) continue;
                             const std::size_t si = b * channels + static_cast<std::size_t>(src);
                             din[si] += w[j] * go;
                             dw[j] += in[si] * go;
                           }
                         }
                       t.accumulate(g_in, din);
                       t.accumulate(kernel, dw);
                     });
}

template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  auto& tape = tape_of(x, s);
  require_rank(x.shape(), 4, "scale_channels");
  if (s.shape() != Shape{x.dim(0), x.dim(1)}) throw ShapeError("scale_channels: scale must be (b, c)");
  const std::size_t slices = x.dim(0) * x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  for (std::size_t sl = 0; sl < slices; ++sl) {
    const T k = s.value()[sl];
    const T* p = x.value().ptr() + sl * plane;
    T* q = out.ptr() + sl * plane;
    for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * k;
  }
  return tape.record(std::move(out), {x, s}, [x, s, slices, plane](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(x)) {
      Tensor<T> dx(x.shape());
      for (std::size_t sl = 0; sl < slices; ++sl) {
        const T k = s.value()[sl];
        for (std::size_t i = 0; i < plane; ++i) dx[sl * plane + i] = g[sl * plane + i] * k;
      }
      t.accumulate(x, dx);
    }
    if (t.requires_grad(s)) {
      Tensor<T> ds(s.shape());
      for (std::size_t sl = 0; sl < slices; ++sl) {
        T acc{0};
        for (std::size_t i = 0; i < plane; ++i) acc += g[sl * plane + i] * x.value()[sl * plane + i];
        ds[sl] = acc;
      }
      t.accumulate(s, ds);
    }
  });
}

template <typename T>
Var<T> l2_loss(const Var<T>& predicted, const Var<T>& target) {
  auto& tape = tape_of(predicted, target);
  if (predicted.shape() != target.shape())
    throw ShapeError("l2_loss: shape mismatch " + to_string(predicted.shape()) + " vs " +
                     to_string(target.shape()));
  const T two_n = T{2} * static_cast<T>(predicted.dim(0));
  T acc{0};
  const auto& p = predicted.value();
  const auto& y = target.value();
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - y[i]) * (p[i] - y[i]);
  Tensor<T> out({1}, {acc / two_n});
  check_finite(out, "l2_loss");
  return tape.record(std::move(out), {predicted, target},
                     [predicted, target, two_n](Tape<T>& t, const Tensor<T>& g) {
                       const auto& p = predicted.value();
                       const auto& y = target.value();
                       Tensor<T> d(p.shape());
                       const T k = T{2} * g[0] / two_n;
                       for (std::size_t i = 0; i < p.size(); ++i) d[i] = k * (p[i] - y[i]);
                       t.accumulate(predicted, d);
                       if (t.requires_grad(target)) t.accumulate(target, ops::scale(d, T{-1}));
                     });
}

#define MHCNN_INSTANTIATE_AD(T)                                                                  \
  template Var<T> add(const Var<T>&, const Var<T>&);                                             \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                             \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                             \
  template Var<T> scale(const Var<T>&, T);                                                       \
  template Var<T> reshape(const Var<T>&, Shape);                                                 \
  template Var<T> permute(const Var<T>&, const std::vector<std::size_t>&);                       \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                               \
  template Var<T> rotate90(const Var<T>&, int);                                                  \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                          \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>*, ops::Conv2dParams);        \
  template Var<T> relu(const Var<T>&);                                                           \
  template Var<T> prelu(const Var<T>&, const Var<T>&);                                           \
  template Var<T> sigmoid(const Var<T>&);                                                        \
  template Var<T> sum(const Var<T>&);                                                            \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, Tensor<T>&, \
                             BatchNormOptions);                                                  \
  template Var<T> instance_norm(const Var<T>&, double);                                          \
  template Var<T> global_avg_pool(const Var<T>&);                                                \
  template Var<T> channel_conv1d(const Var<T>&, const Var<T>&);                                  \
  template Var<T> scale_channels(const Var<T>&, const Var<T>&);                                  \
  template Var<T> l2_loss(const Var<T>&, const Var<T>&);

MHCNN_INSTANTIATE_AD(float)
MHCNN_INSTANTIATE_AD(double)

#undef MHCNN_INSTANTIATE_AD

}  // namespace mhcnn::ad
