#include "spikediff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace spikediff {

void SurrogateSpec::validate() const {
  if (!(width > 0.0)) {
    throw std::invalid_argument("surrogate width must be positive, got " + std::to_string(width));
  }
}

namespace {

template <typename T>
using Grads = std::span<BasicTensor<T>* const>;

template <typename T>
Graph<T>& same_graph(Var<T> a, Var<T> b, const char* op) {
  if (!a.valid() || !b.valid() || a.graph() != b.graph()) {
    throw GraphError(std::string(op) + ": operands live on different graphs");
  }
  return *a.graph();
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

std::int64_t row_stride(const Shape& s) {
  if (s.empty()) throw ShapeError("row operation on a rank-0 tensor");
  return s[0] == 0 ? 0 : shape_numel(s) / s[0];
}

// For output index o with input index o*stride + offset, the range of o
// keeping the input index inside [0, in_len).
std::pair<std::int64_t, std::int64_t> valid_outputs(std::int64_t out_len, std::int64_t in_len,
                                                    std::int64_t offset, std::int64_t stride) {
  std::int64_t lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  std::int64_t hi = out_len;
  const std::int64_t last = in_len - 1 - offset;
  if (last < 0) return {0, 0};
  hi = std::min(hi, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace

// Elementwise ----------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& g = same_graph(a, b, "add");
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape(av, bv, "add");
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return g.record(std::move(out), {a, b}, [](const BasicTensor<T>& go, Grads<T> gi) {
    for (auto* gx : gi) {
      if (!gx) continue;
      for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& g = same_graph(a, b, "sub");
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape(av, bv, "sub");
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return g.record(std::move(out), {a, b}, [](const BasicTensor<T>& go, Grads<T> gi) {
    if (gi[0]) for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += go[i];
    if (gi[1]) for (std::size_t i = 0; i < go.size(); ++i) (*gi[1])[i] -= go[i];
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& g = same_graph(a, b, "mul");
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape(av, bv, "mul");
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return g.record(std::move(out), {a, b}, [&av, &bv](const BasicTensor<T>& go, Grads<T> gi) {
    if (gi[0]) for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += go[i] * bv[i];
    if (gi[1]) for (std::size_t i = 0; i < go.size(); ++i) (*gi[1])[i] += go[i] * av[i];
  });
}

template <typename T>
Var<T> scale(Var<T> a, double factor) {
  const auto& av = a.value();
  const T f = static_cast<T>(factor);
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * f;
  return a.graph()->record(std::move(out), {a}, [f](const BasicTensor<T>& go, Grads<T> gi) {
    for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += go[i] * f;
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, double value) {
  const auto& av = a.value();
  const T c = static_cast<T>(value);
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  return a.graph()->record(std::move(out), {a}, [](const BasicTensor<T>& go, Grads<T> gi) {
    for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += go[i];
  });
}

template <typename T>
Var<T> square(Var<T> a) {
  const auto& av = a.value();
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
  return a.graph()->record(std::move(out), {a}, [&av](const BasicTensor<T>& go, Grads<T> gi) {
    for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += T{2} * av[i] * go[i];
  });
}

template <typename T>
Var<T> silu(Var<T> a) {
  const auto& av = a.value();
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T s = T{1} / (T{1} + std::exp(-av[i]));
    out[i] = av[i] * s;
  }
  return a.graph()->record(std::move(out), {a}, [&av](const BasicTensor<T>& go, Grads<T> gi) {
    for (std::size_t i = 0; i < go.size(); ++i) {
      const T s = T{1} / (T{1} + std::exp(-av[i]));
      (*gi[0])[i] += go[i] * s * (T{1} + av[i] * (T{1} - s));
    }
  });
}

// Reductions -----------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> a) {
  const auto& av = a.value();
  double acc = 0.0;
  for (T v : av.data()) acc += v;
  return a.graph()->record(BasicTensor<T>::scalar(static_cast<T>(acc)), {a},
                           [](const BasicTensor<T>& go, Grads<T> gi) {
                             const T g0 = go[0];
                             for (auto& v : gi[0]->data()) v += g0;
                           });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const auto& av = a.value();
  if (av.size() == 0) throw ShapeError("mean of an empty tensor");
  double acc = 0.0;
  for (T v : av.data()) acc += v;
  const double n = static_cast<double>(av.size());
  return a.graph()->record(BasicTensor<T>::scalar(static_cast<T>(acc / n)), {a},
                           [n](const BasicTensor<T>& go, Grads<T> gi) {
                             const T g0 = static_cast<T>(go[0] / n);
                             for (auto& v : gi[0]->data()) v += g0;
                           });
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  auto& g = same_graph(a, b, "mse");
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape(av, bv, "mse");
  if (av.size() == 0) throw ShapeError("mse of empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    acc += d * d;
  }
  const double n = static_cast<double>(av.size());
  return g.record(BasicTensor<T>::scalar(static_cast<T>(acc / n)), {a, b},
                  [&av, &bv, n](const BasicTensor<T>& go, Grads<T> gi) {
                    const double c = 2.0 * static_cast<double>(go[0]) / n;
                    for (std::size_t i = 0; i < av.size(); ++i) {
                      const T d = static_cast<T>(c * (static_cast<double>(av[i]) - static_cast<double>(bv[i])));
                      if (gi[0]) (*gi[0])[i] += d;
                      if (gi[1]) (*gi[1])[i] -= d;
                    }
                  });
}

// Layout ---------------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  const auto& av = a.value();
  if (shape_numel(shape) != static_cast<std::int64_t>(av.size())) {
    throw ShapeError("reshape " + shape_str(av.shape()) + " -> " + shape_str(shape));
  }
  return a.graph()->record(av.reshaped(std::move(shape)), {a},
                           [](const BasicTensor<T>& go, Grads<T> gi) {
                             for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += go[i];
                           });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::int64_t begin, std::int64_t count) {
  const auto& av = a.value();
  const std::int64_t stride = row_stride(av.shape());
  if (begin < 0 || count < 0 || begin + count > av.shape()[0]) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") out of range for " + shape_str(av.shape()));
  }
  Shape shape = av.shape();
  shape[0] = count;
  BasicTensor<T> out(shape);
  std::copy_n(av.data().begin() + begin * stride, count * stride, out.data().begin());
  return a.graph()->record(std::move(out), {a},
                           [begin, stride](const BasicTensor<T>& go, Grads<T> gi) {
                             auto dst = gi[0]->data().subspan(begin * stride, go.size());
                             for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go[i];
                           });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Graph<T>* g = parts.front().graph();
  Shape shape = parts.front().shape();
  std::int64_t rows = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    if (p.graph() != g) throw GraphError("concat_rows: operands live on different graphs");
    Shape ps = p.shape();
    if (ps.empty() || ps.size() != shape.size() ||
        !std::equal(ps.begin() + 1, ps.end(), shape.begin() + 1)) {
      throw ShapeError("concat_rows: incompatible part " + shape_str(ps));
    }
    offsets.push_back(rows);
    rows += ps[0];
  }
  shape[0] = rows;
  BasicTensor<T> out(shape);
  const std::int64_t stride = row_stride(parts.front().shape());
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + offsets[k] * stride);
  }
  return g->record(std::move(out), parts,
                   [offsets, stride](const BasicTensor<T>& go, Grads<T> gi) {
                     for (std::size_t k = 0; k < gi.size(); ++k) {
                       if (!gi[k]) continue;
                       auto src = go.data().subspan(offsets[k] * stride, gi[k]->size());
                       for (std::size_t i = 0; i < src.size(); ++i) (*gi[k])[i] += src[i];
                     }
                   });
}

template <typename T>
Var<T> repeat_rows(Var<T> a, std::int64_t times) {
  if (times < 1) throw std::invalid_argument("repeat_rows: times must be >= 1");
  const auto& av = a.value();
  row_stride(av.shape());
  Shape shape = av.shape();
  shape[0] *= times;
  BasicTensor<T> out(shape);
  for (std::int64_t k = 0; k < times; ++k) {
    std::copy(av.data().begin(), av.data().end(), out.data().begin() + k * av.size());
  }
  const std::size_t block = av.size();
  return a.graph()->record(std::move(out), {a},
                           [times, block](const BasicTensor<T>& go, Grads<T> gi) {
                             for (std::int64_t k = 0; k < times; ++k) {
                               for (std::size_t i = 0; i < block; ++i) (*gi[0])[i] += go[k * block + i];
                             }
                           });
}

template <typename T>
Var<T> upsample_nearest2x(Var<T> a) {
  const auto& av = a.value();
  if (av.rank() != 4) throw ShapeError("upsample_nearest2x expects [N,C,H,W], got " + shape_str(av.shape()));
  const auto N = av.dim(0), C = av.dim(1), H = av.dim(2), W = av.dim(3);
  BasicTensor<T> out(Shape{N, C, 2 * H, 2 * W});
  for (std::int64_t p = 0; p < N * C; ++p) {
    for (std::int64_t y = 0; y < 2 * H; ++y) {
      for (std::int64_t x = 0; x < 2 * W; ++x) {
        out[(p * 2 * H + y) * 2 * W + x] = av[(p * H + y / 2) * W + x / 2];
      }
    }
  }
  return a.graph()->record(std::move(out), {a},
                           [N, C, H, W](const BasicTensor<T>& go, Grads<T> gi) {
                             for (std::int64_t p = 0; p < N * C; ++p) {
                               for (std::int64_t y = 0; y < 2 * H; ++y) {
                                 for (std::int64_t x = 0; x < 2 * W; ++x) {
                                   (*gi[0])[(p * H + y / 2) * W + x / 2] += go[(p * 2 * H + y) * 2 * W + x];
                                 }
                               }
                             }
                           });
}

// Time-major helpers -----------------------------------------------------------

template <typename T>
Var<T> time_mean(Var<T> a, std::int64_t time_steps) {
  const auto& av = a.value();
  if (time_steps < 1) throw std::invalid_argument("time_mean: time_steps must be >= 1");
  if (av.rank() == 0 || av.dim(0) % time_steps != 0) {
    throw ShapeError("time_mean: leading axis of " + shape_str(av.shape()) + " not divisible by T=" +
                     std::to_string(time_steps));
  }
  Shape shape = av.shape();
  shape[0] /= time_steps;
  const std::size_t block = static_cast<std::size_t>(shape_numel(shape));
  BasicTensor<T> out(shape);
  // Accumulating in double makes the mean of T identical values exact.
  for (std::size_t i = 0; i < block; ++i) {
    double acc = 0.0;
    for (std::int64_t t = 0; t < time_steps; ++t) acc += av[t * block + i];
    out[i] = static_cast<T>(acc / static_cast<double>(time_steps));
  }
  return a.graph()->record(std::move(out), {a},
                           [time_steps, block](const BasicTensor<T>& go, Grads<T> gi) {
                             const double inv = 1.0 / static_cast<double>(time_steps);
                             for (std::int64_t t = 0; t < time_steps; ++t) {
                               for (std::size_t i = 0; i < block; ++i) {
                                 (*gi[0])[t * block + i] += static_cast<T>(go[i] * inv);
                               }
                             }
                           });
}

template <typename T>
Var<T> time_scale(Var<T> a, Var<T> scales) {
  auto& g = same_graph(a, scales, "time_scale");
  const auto& av = a.value();
  const auto& pv = scales.value();
  if (pv.rank() != 1) throw ShapeError("time_scale: scales must be rank 1, got " + shape_str(pv.shape()));
  const std::int64_t T_ = pv.dim(0);
  if (av.rank() == 0 || T_ < 1 || av.dim(0) % T_ != 0) {
    throw ShapeError("time_scale: leading axis of " + shape_str(av.shape()) + " not divisible by " +
                     std::to_string(T_));
  }
  const std::size_t block = av.size() / static_cast<std::size_t>(T_);
  BasicTensor<T> out(av.shape());
  for (std::int64_t t = 0; t < T_; ++t) {
    for (std::size_t i = 0; i < block; ++i) out[t * block + i] = av[t * block + i] * pv[t];
  }
  return g.record(std::move(out), {a, scales},
                  [&av, &pv, T_, block](const BasicTensor<T>& go, Grads<T> gi) {
                    for (std::int64_t t = 0; t < T_; ++t) {
                      if (gi[0]) {
                        for (std::size_t i = 0; i < block; ++i) (*gi[0])[t * block + i] += go[t * block + i] * pv[t];
                      }
                      if (gi[1]) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < block; ++i) {
                          acc += static_cast<double>(go[t * block + i]) * av[t * block + i];
                        }
                        (*gi[1])[t] += static_cast<T>(acc);
                      }
                    }
                  });
}

template <typename T>
Var<T> add_time_broadcast(Var<T> x, Var<T> e) {
  auto& g = same_graph(x, e, "add_time_broadcast");
  const auto& xv = x.value();
  const auto& ev = e.value();
  if (xv.rank() < 2 || ev.rank() != 2 || ev.dim(1) != xv.dim(1) || ev.dim(0) == 0 ||
      xv.dim(0) % ev.dim(0) != 0) {
    throw ShapeError("add_time_broadcast: cannot broadcast " + shape_str(ev.shape()) + " onto " +
                     shape_str(xv.shape()));
  }
  const std::int64_t N = ev.dim(0), C = ev.dim(1);
  const std::int64_t rows = xv.dim(0);
  const std::int64_t inner = static_cast<std::int64_t>(xv.size()) / (rows * C);
  BasicTensor<T> out(xv.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t n = r % N;
    for (std::int64_t c = 0; c < C; ++c) {
      const T ec = ev[n * C + c];
      const std::int64_t base = (r * C + c) * inner;
      for (std::int64_t s = 0; s < inner; ++s) out[base + s] = xv[base + s] + ec;
    }
  }
  return g.record(std::move(out), {x, e},
                  [N, C, rows, inner](const BasicTensor<T>& go, Grads<T> gi) {
                    if (gi[0]) for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += go[i];
                    if (gi[1]) {
                      for (std::int64_t r = 0; r < rows; ++r) {
                        const std::int64_t n = r % N;
                        for (std::int64_t c = 0; c < C; ++c) {
                          double acc = 0.0;
                          const std::int64_t base = (r * C + c) * inner;
                          for (std::int64_t s = 0; s < inner; ++s) acc += go[base + s];
                          (*gi[1])[n * C + c] += static_cast<T>(acc);
                        }
                      }
                    }
                  });
}

template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> b) {
  auto& g = same_graph(x, b, "add_channel_bias");
  const auto& xv = x.value();
  const auto& bv = b.value();
  if (xv.rank() < 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
    throw ShapeError("add_channel_bias: bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
  }
  const std::int64_t N = xv.dim(0), C = xv.dim(1);
  const std::int64_t inner = N * C == 0 ? 0 : static_cast<std::int64_t>(xv.size()) / (N * C);
  BasicTensor<T> out(xv.shape());
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const std::int64_t base = (n * C + c) * inner;
      for (std::int64_t s = 0; s < inner; ++s) out[base + s] = xv[base + s] + bv[c];
    }
  }
  return g.record(std::move(out), {x, b}, [N, C, inner](const BasicTensor<T>& go, Grads<T> gi) {
    if (gi[0]) for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += go[i];
    if (gi[1]) {
      for (std::int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::int64_t n = 0; n < N; ++n) {
          const std::int64_t base = (n * C + c) * inner;
          for (std::int64_t s = 0; s < inner; ++s) acc += go[base + s];
        }
        (*gi[1])[c] += static_cast<T>(acc);
      }
    }
  });
}

// Layers ---------------------------------------------------------------------

namespace kernels {

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride, int padding) {
  if (stride < 1) throw std::invalid_argument("conv stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv padding must be >= 0");
  if (kernel > in + 2 * padding) {
    throw ShapeError("conv kernel " + std::to_string(kernel) + " exceeds padded extent " +
                     std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

template <typename T>
BasicTensor<T> linear_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  const std::int64_t N = x.dim(0), D = x.dim(1), E = w.dim(1);
  if (b && (b->rank() != 1 || b->dim(0) != E)) {
    throw ShapeError("linear: bias " + shape_str(b->shape()) + " vs output width " + std::to_string(E));
  }
  BasicTensor<T> out(Shape{N, E});
  for (std::int64_t n = 0; n < N; ++n) {
    T* o = &out[n * E];
    if (b) std::copy(b->data().begin(), b->data().end(), o);
    for (std::int64_t d = 0; d < D; ++d) {
      const T xv = x[n * D + d];
      if (xv == T{0}) continue;
      const T* wr = &w[d * E];
      for (std::int64_t e = 0; e < E; ++e) o[e] += xv * wr[e];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, int stride, int padding) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Co = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const std::int64_t OH = conv_out_extent(H, KH, stride, padding);
  const std::int64_t OW = conv_out_extent(W, KW, stride, padding);
  BasicTensor<T> out(Shape{N, Co, OH, OW});
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t co = 0; co < Co; ++co) {
      T* op = &out[((n * Co + co) * OH) * OW];
      for (std::int64_t ci = 0; ci < C; ++ci) {
        const T* ip = &x[((n * C + ci) * H) * W];
        for (std::int64_t kh = 0; kh < KH; ++kh) {
          const auto [oh0, oh1] = valid_outputs(OH, H, kh - padding, stride);
          for (std::int64_t kw = 0; kw < KW; ++kw) {
            const T wv = w[((co * C + ci) * KH + kh) * KW + kw];
            if (wv == T{0}) continue;
            const auto [ow0, ow1] = valid_outputs(OW, W, kw - padding, stride);
            for (std::int64_t oh = oh0; oh < oh1; ++oh) {
              const T* irow = ip + (oh * stride + kh - padding) * W + (kw - padding);
              T* orow = op + oh * OW;
              for (std::int64_t ow = ow0; ow < ow1; ++ow) orow[ow] += wv * irow[ow * stride];
            }
          }
        }
      }
    }
  }
  return out;
}

template BasicTensor<float> linear_forward(const BasicTensor<float>&, const BasicTensor<float>&,
                                           const BasicTensor<float>*);
template BasicTensor<double> linear_forward(const BasicTensor<double>&, const BasicTensor<double>&,
                                            const BasicTensor<double>*);
template BasicTensor<float> conv2d_forward(const BasicTensor<float>&, const BasicTensor<float>&, int, int);
template BasicTensor<double> conv2d_forward(const BasicTensor<double>&, const BasicTensor<double>&, int, int);

}  // namespace kernels

namespace {

template <typename T>
void linear_backward(const BasicTensor<T>& go, const BasicTensor<T>& x, const BasicTensor<T>& w,
                     BasicTensor<T>* gx, BasicTensor<T>* gw, BasicTensor<T>* gb) {
  const std::int64_t N = x.dim(0), D = x.dim(1), E = w.dim(1);
  for (std::int64_t n = 0; n < N; ++n) {
    const T* g = &go[n * E];
    for (std::int64_t d = 0; d < D; ++d) {
      const T* wr = &w[d * E];
      if (gx) {
        T acc{0};
        for (std::int64_t e = 0; e < E; ++e) acc += g[e] * wr[e];
        (*gx)[n * D + d] += acc;
      }
      if (gw) {
        const T xv = x[n * D + d];
        if (xv == T{0}) continue;
        T* gwr = &(*gw)[d * E];
        for (std::int64_t e = 0; e < E; ++e) gwr[e] += xv * g[e];
      }
    }
    if (gb) {
      for (std::int64_t e = 0; e < E; ++e) (*gb)[e] += g[e];
    }
  }
}

}  // namespace

template <typename T>
Var<T> linear(Var<T> input, Var<T> weight, Var<T> bias) {
  auto& g = same_graph(input, weight, "linear");
  same_graph(input, bias, "linear");
  const auto& xv = input.value();
  const auto& wv = weight.value();
  auto out = kernels::linear_forward(xv, wv, &bias.value());
  return g.record(std::move(out), {input, weight, bias},
                  [&xv, &wv](const BasicTensor<T>& go, Grads<T> gi) {
                    linear_backward(go, xv, wv, gi[0], gi[1], gi[2]);
                  });
}

template <typename T>
Var<T> linear(Var<T> input, Var<T> weight) {
  auto& g = same_graph(input, weight, "linear");
  const auto& xv = input.value();
  const auto& wv = weight.value();
  auto out = kernels::linear_forward<T>(xv, wv, nullptr);
  return g.record(std::move(out), {input, weight},
                  [&xv, &wv](const BasicTensor<T>& go, Grads<T> gi) {
                    linear_backward<T>(go, xv, wv, gi[0], gi[1], nullptr);
                  });
}

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, int stride, int padding) {
  auto& g = same_graph(input, weight, "conv2d");
  const auto& xv = input.value();
  const auto& wv = weight.value();
  auto out = kernels::conv2d_forward(xv, wv, stride, padding);
  const Shape out_shape = out.shape();
  return g.record(
      std::move(out), {input, weight},
      [&xv, &wv, stride, padding, out_shape](const BasicTensor<T>& go, Grads<T> gi) {
        const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        const std::int64_t Co = wv.dim(0), KH = wv.dim(2), KW = wv.dim(3);
        const std::int64_t OH = out_shape[2], OW = out_shape[3];
        BasicTensor<T>* gx = gi[0];
        BasicTensor<T>* gw = gi[1];
        for (std::int64_t n = 0; n < N; ++n) {
          for (std::int64_t co = 0; co < Co; ++co) {
            const T* gp = &go[((n * Co + co) * OH) * OW];
            for (std::int64_t ci = 0; ci < C; ++ci) {
              const T* ip = &xv[((n * C + ci) * H) * W];
              T* gip = gx ? &(*gx)[((n * C + ci) * H) * W] : nullptr;
              for (std::int64_t kh = 0; kh < KH; ++kh) {
                const auto [oh0, oh1] = valid_outputs(OH, H, kh - padding, stride);
                for (std::int64_t kw = 0; kw < KW; ++kw) {
                  const std::int64_t widx = ((co * C + ci) * KH + kh) * KW + kw;
                  const T wval = wv[widx];
                  const auto [ow0, ow1] = valid_outputs(OW, W, kw - padding, stride);
                  T wacc{0};
                  for (std::int64_t oh = oh0; oh < oh1; ++oh) {
                    const std::int64_t row = (oh * stride + kh - padding) * W + (kw - padding);
                    const T* grow = gp + oh * OW;
                    for (std::int64_t ow = ow0; ow < ow1; ++ow) {
                      const T gval = grow[ow];
                      wacc += gval * ip[row + ow * stride];
                      if (gip) gip[row + ow * stride] += gval * wval;
                    }
                  }
                  if (gw) (*gw)[widx] += wacc;
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> batchnorm(Var<T> input, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats,
                 const BatchNormOptions& options) {
  auto& g = same_graph(input, gamma, "batchnorm");
  same_graph(input, beta, "batchnorm");
  const auto& xv = input.value();
  if (xv.rank() < 2) throw ShapeError("batchnorm expects a channel axis, got " + shape_str(xv.shape()));
  const std::int64_t N = xv.dim(0), C = xv.dim(1);
  const Shape cshape{C};
  if (gamma.shape() != cshape || beta.shape() != cshape) {
    throw ShapeError("batchnorm: gamma/beta must have shape " + shape_str(cshape));
  }
  if (stats.mean.shape() != cshape || stats.var.shape() != cshape) {
    throw ShapeError("batchnorm: running stats must have shape " + shape_str(cshape));
  }
  if (N == 0) throw ShapeError("batchnorm on an empty batch");
  const std::int64_t inner = static_cast<std::int64_t>(xv.size()) / (N * C);
  const std::int64_t M = N * inner;
  const bool train = options.mode == NormMode::Train;

  auto invstd = std::make_shared<std::vector<double>>(C);
  auto centre = std::make_shared<std::vector<double>>(C);
  for (std::int64_t c = 0; c < C; ++c) {
    double mu = 0.0, var = 0.0;
    if (train) {
      for (std::int64_t n = 0; n < N; ++n) {
        const std::int64_t base = (n * C + c) * inner;
        for (std::int64_t s = 0; s < inner; ++s) mu += xv[base + s];
      }
      mu /= static_cast<double>(M);
      for (std::int64_t n = 0; n < N; ++n) {
        const std::int64_t base = (n * C + c) * inner;
        for (std::int64_t s = 0; s < inner; ++s) {
          const double d = xv[base + s] - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(M);
      const double unbiased = M > 1 ? var * static_cast<double>(M) / static_cast<double>(M - 1) : var;
      const double m = options.momentum;
      stats.mean[c] = static_cast<T>((1.0 - m) * stats.mean[c] + m * mu);
      stats.var[c] = static_cast<T>((1.0 - m) * stats.var[c] + m * unbiased);
    } else {
      mu = stats.mean[c];
      var = stats.var[c];
    }
    (*centre)[c] = mu;
    (*invstd)[c] = 1.0 / std::sqrt(var + options.eps);
  }

  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  BasicTensor<T> out(xv.shape());
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const std::int64_t base = (n * C + c) * inner;
      const double gs = gv[c] * (*invstd)[c];
      for (std::int64_t s = 0; s < inner; ++s) {
        out[base + s] = static_cast<T>((xv[base + s] - (*centre)[c]) * gs + bv[c]);
      }
    }
  }

  return g.record(
      std::move(out), {input, gamma, beta},
      [&xv, &gv, invstd, centre, N, C, inner, M, train](const BasicTensor<T>& go, Grads<T> gi) {
        for (std::int64_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::int64_t n = 0; n < N; ++n) {
            const std::int64_t base = (n * C + c) * inner;
            for (std::int64_t s = 0; s < inner; ++s) {
              const double xhat = (xv[base + s] - (*centre)[c]) * (*invstd)[c];
              sum_g += go[base + s];
              sum_gx += go[base + s] * xhat;
            }
          }
          if (gi[1]) (*gi[1])[c] += static_cast<T>(sum_gx);
          if (gi[2]) (*gi[2])[c] += static_cast<T>(sum_g);
          if (!gi[0]) continue;
          const double k = gv[c] * (*invstd)[c];
          const double mean_g = sum_g / static_cast<double>(M);
          const double mean_gx = sum_gx / static_cast<double>(M);
          for (std::int64_t n = 0; n < N; ++n) {
            const std::int64_t base = (n * C + c) * inner;
            for (std::int64_t s = 0; s < inner; ++s) {
              double d = go[base + s];
              if (train) {
                const double xhat = (xv[base + s] - (*centre)[c]) * (*invstd)[c];
                d = d - mean_g - xhat * mean_gx;
              }
              (*gi[0])[base + s] += static_cast<T>(k * d);
            }
          }
        }
      });
}

template <typename T>
Var<T> spike(Var<T> u, const SurrogateSpec& spec) {
  spec.validate();
  const auto& uv = u.value();
  const T theta = static_cast<T>(spec.threshold);
  BasicTensor<T> out(uv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = uv[i] >= theta ? T{1} : T{0};
  const double half = spec.width / 2.0;
  const T height = static_cast<T>(1.0 / spec.width);
  return u.graph()->record(std::move(out), {u},
                           [&uv, theta, half, height](const BasicTensor<T>& go, Grads<T> gi) {
                             for (std::size_t i = 0; i < go.size(); ++i) {
                               const double dist = std::abs(static_cast<double>(uv[i]) - theta);
                               if (dist < half) (*gi[0])[i] += go[i] * height;
                             }
                           });
}

#define SPIKEDIFF_INSTANTIATE_OPS(T)                                                        \
  template Var<T> add(Var<T>, Var<T>);                                                      \
  template Var<T> sub(Var<T>, Var<T>);                                                      \
  template Var<T> mul(Var<T>, Var<T>);                                                      \
  template Var<T> scale(Var<T>, double);                                                    \
  template Var<T> add_scalar(Var<T>, double);                                               \
  template Var<T> square(Var<T>);                                                           \
  template Var<T> silu(Var<T>);                                                             \
  template Var<T> sum(Var<T>);                                                              \
  template Var<T> mean(Var<T>);                                                             \
  template Var<T> mse(Var<T>, Var<T>);                                                      \
  template Var<T> reshape(Var<T>, Shape);                                                   \
  template Var<T> slice_rows(Var<T>, std::int64_t, std::int64_t);                           \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                  \
  template Var<T> repeat_rows(Var<T>, std::int64_t);                                        \
  template Var<T> upsample_nearest2x(Var<T>);                                               \
  template Var<T> time_mean(Var<T>, std::int64_t);                                          \
  template Var<T> time_scale(Var<T>, Var<T>);                                               \
  template Var<T> add_time_broadcast(Var<T>, Var<T>);                                       \
  template Var<T> add_channel_bias(Var<T>, Var<T>);                                         \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                           \
  template Var<T> linear(Var<T>, Var<T>);                                                   \
  template Var<T> conv2d(Var<T>, Var<T>, int, int);                                         \
  template Var<T> batchnorm(Var<T>, Var<T>, Var<T>, BatchNormStats<T>&, const BatchNormOptions&); \
  template Var<T> spike(Var<T>, const SurrogateSpec&);

SPIKEDIFF_INSTANTIATE_OPS(float)
SPIKEDIFF_INSTANTIATE_OPS(double)

#undef SPIKEDIFF_INSTANTIATE_OPS

}  // namespace spikediff
