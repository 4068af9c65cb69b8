// SPDX-License-Identifier: Apache-2.0
#include "xlret/tensor_ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace xlret::ops {

namespace {

template <typename T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void require_2d(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " +
                     shape_to_string(t.shape()));
  }
}

int normalize_axis(int axis, std::size_t rank, const char* op) {
  int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op) + ": axis out of range for rank " +
                     std::to_string(rank));
  }
  return axis;
}

// Dropout keep decision for one element; pure in (key, index).
inline bool dropout_keep(std::uint64_t key, std::size_t index, double rate) {
  const std::uint64_t golden = 0x9e3779b97f4a7c15ull;
  std::uint64_t bits = splitmix64(key ^ ((index + 1) * golden));
  return unit_double(bits) >= rate;
}

}  // namespace

// ==================== matmul / transpose ====================

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros({m, n});
  {
    ConstMatMap<T> A(a.values().data(), m, k);
    ConstMatMap<T> B(b.values().data(), k, n);
    MatMap<T> C(out.values().data(), m, n);
    C.noalias() = A * B;
  }
  if (should_record<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto pa = a.payload(), pb = b.payload(), po = out.payload();
    Tape<T>::active()->record(
        [pa, pb, po, m, k, n]() {
          ConstMatMap<T> G(po->grad.data(), m, n);
          if (pa->requires_grad) {
            ConstMatMap<T> B(pb->values.data(), k, n);
            MatMap<T> dA(pa->grad.data(), m, k);
            dA.noalias() += G * B.transpose();
          }
          if (pb->requires_grad) {
            ConstMatMap<T> A(pa->values.data(), m, k);
            MatMap<T> dB(pb->grad.data(), k, n);
            dB.noalias() += A.transpose() * G;
          }
        },
        {pa, pb, po});
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> out = Tensor<T>::zeros({n, m});
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
  }
  if (should_record<T>({&a})) {
    out.set_requires_grad(true);
    auto pa = a.payload(), po = out.payload();
    Tape<T>::active()->record(
        [pa, po, m, n]() {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              pa->grad[i * n + j] += po->grad[j * m + i];
            }
          }
        },
        {pa, po});
  }
  return out;
}

// ==================== elementwise ====================

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b,
                      ElementwiseKind kind) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() ||
      !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
    throw ShapeError("elementwise: " + shape_to_string(sb) +
                     " is not broadcastable to " + shape_to_string(sa));
  }
  const std::size_t inner = b.numel();
  const std::size_t outer = a.numel() / std::max<std::size_t>(inner, 1);
  Tensor<T> out = Tensor<T>::zeros(sa);
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * inner;
    for (std::size_t i = 0; i < inner; ++i) {
      switch (kind) {
        case ElementwiseKind::kAdd: ov[base + i] = av[base + i] + bv[i]; break;
        case ElementwiseKind::kSub: ov[base + i] = av[base + i] - bv[i]; break;
        case ElementwiseKind::kMul: ov[base + i] = av[base + i] * bv[i]; break;
      }
    }
  }
  if (should_record<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto pa = a.payload(), pb = b.payload(), po = out.payload();
    Tape<T>::active()->record(
        [pa, pb, po, kind, outer, inner]() {
          for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t base = o * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              const T g = po->grad[base + i];
              switch (kind) {
                case ElementwiseKind::kAdd:
                  if (pa->requires_grad) pa->grad[base + i] += g;
                  if (pb->requires_grad) pb->grad[i] += g;
                  break;
                case ElementwiseKind::kSub:
                  if (pa->requires_grad) pa->grad[base + i] += g;
                  if (pb->requires_grad) pb->grad[i] -= g;
                  break;
                case ElementwiseKind::kMul:
                  // d(a*b)/da = b, d(a*b)/db = a
                  if (pa->requires_grad) pa->grad[base + i] += g * pb->values[i];
                  if (pb->requires_grad) pb->grad[i] += g * pa->values[base + i];
                  break;
              }
            }
          }
        },
        {pa, pb, po});
  }
  return out;
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T factor) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * factor;
  if (should_record<T>({&a})) {
    out.set_requires_grad(true);
    auto pa = a.payload(), po = out.payload();
    Tape<T>::active()->record(
        [pa, po, factor]() {
          for (std::size_t i = 0; i < pa->grad.size(); ++i) {
            pa->grad[i] += po->grad[i] * factor;
          }
        },
        {pa, po});
  }
  return out;
}

// ==================== softmax family ====================

namespace {

struct AxisSpan {
  std::size_t outer, n, inner;
};

template <typename T>
AxisSpan axis_span(const Tensor<T>& x, int axis) {
  AxisSpan s{1, x.shape()[axis], 1};
  for (int i = 0; i < axis; ++i) s.outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) s.inner *= x.shape()[i];
  return s;
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "softmax");
  const AxisSpan sp = axis_span(x, ax);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      T mx = xv[base];
      for (std::size_t j = 1; j < sp.n; ++j) {
        mx = std::max(mx, xv[base + j * sp.inner]);
      }
      T total = T(0);
      for (std::size_t j = 0; j < sp.n; ++j) {
        const T e = std::exp(xv[base + j * sp.inner] - mx);
        ov[base + j * sp.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < sp.n; ++j) ov[base + j * sp.inner] /= total;
    }
  }
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    auto px = x.payload(), po = out.payload();
    Tape<T>::active()->record(
        [px, po, sp]() {
          // dx = s * (g - sum(g * s)) per slice
          for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
              const std::size_t base = o * sp.n * sp.inner + i;
              T dot = T(0);
              for (std::size_t j = 0; j < sp.n; ++j) {
                const std::size_t idx = base + j * sp.inner;
                dot += po->grad[idx] * po->values[idx];
              }
              for (std::size_t j = 0; j < sp.n; ++j) {
                const std::size_t idx = base + j * sp.inner;
                px->grad[idx] += po->values[idx] * (po->grad[idx] - dot);
              }
            }
          }
        },
        {px, po});
  }
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "log_softmax");
  const AxisSpan sp = axis_span(x, ax);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      T mx = xv[base];
      for (std::size_t j = 1; j < sp.n; ++j) {
        mx = std::max(mx, xv[base + j * sp.inner]);
      }
      T total = T(0);
      for (std::size_t j = 0; j < sp.n; ++j) {
        total += std::exp(xv[base + j * sp.inner] - mx);
      }
      const T lse = mx + std::log(total);
      for (std::size_t j = 0; j < sp.n; ++j) {
        ov[base + j * sp.inner] = xv[base + j * sp.inner] - lse;
      }
    }
  }
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    auto px = x.payload(), po = out.payload();
    Tape<T>::active()->record(
        [px, po, sp]() {
          // dx = g - exp(y) * sum(g) per slice
          for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
              const std::size_t base = o * sp.n * sp.inner + i;
              T gsum = T(0);
              for (std::size_t j = 0; j < sp.n; ++j) {
                gsum += po->grad[base + j * sp.inner];
              }
              for (std::size_t j = 0; j < sp.n; ++j) {
                const std::size_t idx = base + j * sp.inner;
                px->grad[idx] +=
                    po->grad[idx] - std::exp(po->values[idx]) * gsum;
              }
            }
          }
        },
        {px, po});
  }
  return out;
}

// ==================== layernorm ====================

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, T eps) {
  if (x.rank() < 1) throw ShapeError("layernorm: scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layernorm: gamma " + shape_to_string(gamma.shape()) +
                     " / beta " + shape_to_string(beta.shape()) +
                     " do not match trailing dimension of " +
                     shape_to_string(x.shape()));
  }
  const std::size_t slices = x.numel() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> means(slices), invs(slices);
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  auto ov = out.values();
  for (std::size_t s = 0; s < slices; ++s) {
    const std::size_t base = s * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += xv[base + j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = xv[base + j] - mu;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    means[s] = mu;
    invs[s] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      ov[base + j] = (xv[base + j] - mu) * inv * gv[j] + bv[j];
    }
  }
  if (should_record<T>({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto px = x.payload(), pg = gamma.payload(), pb = beta.payload(),
         po = out.payload();
    Tape<T>::active()->record(
        [px, pg, pb, po, means = std::move(means), invs = std::move(invs), d,
         slices]() {
          for (std::size_t s = 0; s < slices; ++s) {
            const std::size_t base = s * d;
            const T inv = invs[s];
            const T mu = means[s];
            // ghat = g * gamma; dx = inv * (ghat - mean(ghat) - xhat * mean(ghat * xhat))
            T mean_ghat = T(0), mean_ghat_xhat = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              const T xhat = (px->values[base + j] - mu) * inv;
              const T g = po->grad[base + j];
              const T ghat = g * pg->values[j];
              mean_ghat += ghat;
              mean_ghat_xhat += ghat * xhat;
              if (pg->requires_grad) pg->grad[j] += g * xhat;
              if (pb->requires_grad) pb->grad[j] += g;
            }
            mean_ghat /= static_cast<T>(d);
            mean_ghat_xhat /= static_cast<T>(d);
            if (px->requires_grad) {
              for (std::size_t j = 0; j < d; ++j) {
                const T xhat = (px->values[base + j] - mu) * inv;
                const T ghat = po->grad[base + j] * pg->values[j];
                px->grad[base + j] +=
                    inv * (ghat - mean_ghat - xhat * mean_ghat_xhat);
              }
            }
          }
        },
        {px, pg, pb, po});
  }
  return out;
}

// ==================== gelu / dropout ====================

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T phi = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
    ov[i] = xv[i] * phi;
  }
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    auto px = x.payload(), po = out.payload();
    Tape<T>::active()->record(
        [px, po, inv_sqrt2]() {
          const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
          for (std::size_t i = 0; i < px->grad.size(); ++i) {
            const T v = px->values[i];
            const T phi = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            const T pdf = std::exp(T(-0.5) * v * v) * inv_sqrt2pi;
            px->grad[i] += po->grad[i] * (phi + v * pdf);
          }
        },
        {px, po});
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, DropoutKey key, bool training) {
  if (rate < T(0) || rate >= T(1)) {
    throw ContractError("dropout: rate must lie in [0, 1)");
  }
  if (!training || rate == T(0)) return x;
  const std::uint64_t k = hash_combine(hash_combine(key.stream, key.layer),
                                       key.slot);
  const T scale = T(1) / (T(1) - rate);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    ov[i] = dropout_keep(k, i, static_cast<double>(rate)) ? xv[i] * scale
                                                          : T(0);
  }
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    auto px = x.payload(), po = out.payload();
    Tape<T>::active()->record(
        [px, po, k, rate, scale]() {
          for (std::size_t i = 0; i < px->grad.size(); ++i) {
            if (dropout_keep(k, i, static_cast<double>(rate))) {
              px->grad[i] += po->grad[i] * scale;
            }
          }
        },
        {px, po});
  }
  return out;
}

// ==================== gather / concat / slice / stack ====================

template <typename T>
Tensor<T> embedding_gather(const Tensor<T>& table,
                           const std::vector<std::int32_t>& ids) {
  require_2d(table, "embedding_gather");
  const std::size_t v = table.dim(0), d = table.dim(1);
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw ContractError("embedding_gather: id " + std::to_string(id) +
                          " out of range for table " +
                          shape_to_string(table.shape()));
    }
  }
  Tensor<T> out = Tensor<T>::zeros({ids.size(), d});
  auto tv = table.values();
  auto ov = out.values();
  for (std::size_t l = 0; l < ids.size(); ++l) {
    const std::size_t row = static_cast<std::size_t>(ids[l]);
    std::copy_n(tv.data() + row * d, d, ov.data() + l * d);
  }
  if (should_record<T>({&table})) {
    out.set_requires_grad(true);
    auto pt = table.payload(), po = out.payload();
    Tape<T>::active()->record(
        [pt, po, ids, d]() {
          for (std::size_t l = 0; l < ids.size(); ++l) {
            const std::size_t row = static_cast<std::size_t>(ids[l]);
            for (std::size_t j = 0; j < d; ++j) {
              pt->grad[row * d + j] += po->grad[l * d + j];
            }
          }
        },
        {pt, po});
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  const std::size_t d = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  std::size_t rows = 0;
  for (const Tensor<T>& p : parts) {
    require_2d(p, "concat_rows");
    if (p.dim(1) != d) {
      throw ShapeError("concat_rows: column mismatch, " +
                       shape_to_string(parts[0].shape()) + " vs " +
                       shape_to_string(p.shape()));
    }
    rows += p.dim(0);
  }
  Tensor<T> out = Tensor<T>::zeros({rows, d});
  auto ov = out.values();
  std::size_t row = 0;
  bool rec = false;
  for (const Tensor<T>& p : parts) {
    std::copy_n(p.values().data(), p.numel(), ov.data() + row * d);
    row += p.dim(0);
    rec = rec || p.requires_grad();
  }
  if (rec && Tape<T>::active() != nullptr) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<T>>> payloads;
    payloads.reserve(parts.size());
    for (const Tensor<T>& p : parts) payloads.push_back(p.payload());
    auto po = out.payload();
    auto touched = payloads;
    touched.push_back(po);
    Tape<T>::active()->record(
        [payloads = std::move(payloads), po]() {
          std::size_t offset = 0;
          for (auto& p : payloads) {
            if (p->requires_grad) {
              for (std::size_t i = 0; i < p->grad.size(); ++i) {
                p->grad[i] += po->grad[offset + i];
              }
            }
            offset += p->values.size();
          }
        },
        std::move(touched));
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const std::size_t rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::size_t cols = 0;
  for (const Tensor<T>& p : parts) {
    require_2d(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw ShapeError("concat_cols: row mismatch, " +
                       shape_to_string(parts[0].shape()) + " vs " +
                       shape_to_string(p.shape()));
    }
    cols += p.dim(1);
  }
  Tensor<T> out = Tensor<T>::zeros({rows, cols});
  auto ov = out.values();
  std::size_t col = 0;
  bool rec = false;
  for (const Tensor<T>& p : parts) {
    const std::size_t pc = p.dim(1);
    auto pv = p.values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data() + r * pc, pc, ov.data() + r * cols + col);
    }
    col += pc;
    rec = rec || p.requires_grad();
  }
  if (rec && Tape<T>::active() != nullptr) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<T>>> payloads;
    std::vector<std::size_t> widths;
    for (const Tensor<T>& p : parts) {
      payloads.push_back(p.payload());
      widths.push_back(p.dim(1));
    }
    auto po = out.payload();
    auto touched = payloads;
    touched.push_back(po);
    Tape<T>::active()->record(
        [payloads = std::move(payloads), widths = std::move(widths), po, rows,
         cols]() {
          std::size_t col = 0;
          for (std::size_t pi = 0; pi < payloads.size(); ++pi) {
            auto& p = payloads[pi];
            const std::size_t pc = widths[pi];
            if (p->requires_grad) {
              for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < pc; ++j) {
                  p->grad[r * pc + j] += po->grad[r * cols + col + j];
                }
              }
            }
            col += pc;
          }
        },
        std::move(touched));
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_2d(x, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin + count > cols) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") exceeds " +
                     shape_to_string(x.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros({rows, count});
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data() + r * cols + begin, count, ov.data() + r * count);
  }
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    auto px = x.payload(), po = out.payload();
    Tape<T>::active()->record(
        [px, po, rows, cols, begin, count]() {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < count; ++j) {
              px->grad[r * cols + begin + j] += po->grad[r * count + j];
            }
          }
        },
        {px, po});
  }
  return out;
}

template <typename T>
Tensor<T> stack_rows(std::span<const Tensor<T>> rows) {
  if (rows.empty()) throw ContractError("stack_rows: no rows");
  const std::size_t d = rows[0].numel();
  for (const Tensor<T>& r : rows) {
    if (r.rank() != 1 || r.numel() != d) {
      throw ShapeError("stack_rows: expected 1-D tensors of length " +
                       std::to_string(d) + ", got " +
                       shape_to_string(r.shape()));
    }
  }
  Tensor<T> out = Tensor<T>::zeros({rows.size(), d});
  auto ov = out.values();
  bool rec = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(rows[i].values().data(), d, ov.data() + i * d);
    rec = rec || rows[i].requires_grad();
  }
  if (rec && Tape<T>::active() != nullptr) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<T>>> payloads;
    for (const Tensor<T>& r : rows) payloads.push_back(r.payload());
    auto po = out.payload();
    auto touched = payloads;
    touched.push_back(po);
    Tape<T>::active()->record(
        [payloads = std::move(payloads), po, d]() {
          for (std::size_t i = 0; i < payloads.size(); ++i) {
            auto& p = payloads[i];
            if (!p->requires_grad) continue;
            for (std::size_t j = 0; j < d; ++j) {
              p->grad[j] += po->grad[i * d + j];
            }
          }
        },
        std::move(touched));
  }
  return out;
}

// ==================== pooling / reductions ====================

template <typename T>
Tensor<T> masked_mean_pool(const Tensor<T>& h, const Tensor<T>& mask) {
  require_2d(h, "masked_mean_pool");
  const std::size_t L = h.dim(0), d = h.dim(1);
  if (mask.rank() != 1 || mask.numel() != L) {
    throw ShapeError("masked_mean_pool: mask " + shape_to_string(mask.shape()) +
                     " does not match " + shape_to_string(h.shape()));
  }
  std::vector<std::size_t> kept;
  for (std::size_t l = 0; l < L; ++l) {
    if (mask.at(l) != T(0)) kept.push_back(l);
  }
  if (kept.empty()) {
    throw ContractError("masked_mean_pool: all-zero mask is degenerate");
  }
  Tensor<T> out = Tensor<T>::zeros({d});
  auto hv = h.values();
  auto ov = out.values();
  for (std::size_t l : kept) {
    for (std::size_t j = 0; j < d; ++j) ov[j] += hv[l * d + j];
  }
  const T inv = T(1) / static_cast<T>(kept.size());
  for (std::size_t j = 0; j < d; ++j) ov[j] *= inv;
  if (should_record<T>({&h})) {
    out.set_requires_grad(true);
    auto ph = h.payload(), po = out.payload();
    Tape<T>::active()->record(
        [ph, po, kept = std::move(kept), d, inv]() {
          for (std::size_t l : kept) {
            for (std::size_t j = 0; j < d; ++j) {
              ph->grad[l * d + j] += po->grad[j] * inv;
            }
          }
        },
        {ph, po});
  }
  return out;
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  const std::size_t n = a.numel();
  if (n == 0) throw ContractError("mse: empty tensors");
  auto av = a.values();
  auto bv = b.values();
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T diff = av[i] - bv[i];
    total += diff * diff;
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n));
  if (should_record<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto pa = a.payload(), pb = b.payload(), po = out.payload();
    Tape<T>::active()->record(
        [pa, pb, po, n]() {
          const T g = po->grad[0];
          const T c = T(2) / static_cast<T>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const T d = c * (pa->values[i] - pb->values[i]) * g;
            if (pa->requires_grad) pa->grad[i] += d;
            if (pb->requires_grad) pb->grad[i] -= d;
          }
        },
        {pa, pb, po});
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.values()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    auto px = x.payload(), po = out.payload();
    Tape<T>::active()->record(
        [px, po]() {
          for (std::size_t i = 0; i < px->grad.size(); ++i) {
            px->grad[i] += po->grad[0];
          }
        },
        {px, po});
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ContractError("mean: empty tensor");
  T total = T(0);
  for (T v : x.values()) total += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  Tensor<T> out = Tensor<T>::scalar(total * inv);
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    auto px = x.payload(), po = out.payload();
    Tape<T>::active()->record(
        [px, po, inv]() {
          for (std::size_t i = 0; i < px->grad.size(); ++i) {
            px->grad[i] += po->grad[0] * inv;
          }
        },
        {px, po});
  }
  return out;
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, T eps) {
  require_2d(x, "l2_normalize_rows");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> norms(rows);
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    T sq = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T v = xv[r * d + j];
      sq += v * v;
    }
    const T n = std::sqrt(sq + eps);
    norms[r] = n;
    for (std::size_t j = 0; j < d; ++j) ov[r * d + j] = xv[r * d + j] / n;
  }
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    auto px = x.payload(), po = out.payload();
    Tape<T>::active()->record(
        [px, po, norms = std::move(norms), rows, d]() {
          // dx = g / n - x * (g . x) / n^3
          for (std::size_t r = 0; r < rows; ++r) {
            const T n = norms[r];
            T dot = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              dot += po->grad[r * d + j] * px->values[r * d + j];
            }
            const T n3 = n * n * n;
            for (std::size_t j = 0; j < d; ++j) {
              px->grad[r * d + j] +=
                  po->grad[r * d + j] / n - px->values[r * d + j] * dot / n3;
            }
          }
        },
        {px, po});
  }
  return out;
}

template <typename T>
Tensor<T> diagonal(const Tensor<T>& x) {
  require_2d(x, "diagonal");
  const std::size_t n = x.dim(0);
  if (x.dim(1) != n) {
    throw ShapeError("diagonal: matrix " + shape_to_string(x.shape()) +
                     " is not square");
  }
  Tensor<T> out = Tensor<T>::zeros({n});
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i * n + i];
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    auto px = x.payload(), po = out.payload();
    Tape<T>::active()->record(
        [px, po, n]() {
          for (std::size_t i = 0; i < n; ++i) {
            px->grad[i * n + i] += po->grad[i];
          }
        },
        {px, po});
  }
  return out;
}

template <typename T>
Tensor<T> mask_tensor(const std::vector<int>& mask) {
  std::vector<T> v(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) v[i] = static_cast<T>(mask[i]);
  return Tensor<T>::from_values({mask.size()}, std::move(v));
}

// ==================== instantiations ====================

#define XLRET_INSTANTIATE_OPS(T)                                               \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> transpose<T>(const Tensor<T>&);                           \
  template Tensor<T> elementwise<T>(const Tensor<T>&, const Tensor<T>&,        \
                                    ElementwiseKind);                          \
  template Tensor<T> scalar_mul<T>(const Tensor<T>&, T);                       \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                        \
  template Tensor<T> log_softmax<T>(const Tensor<T>&, int);                    \
  template Tensor<T> layernorm<T>(const Tensor<T>&, const Tensor<T>&,          \
                                  const Tensor<T>&, T);                        \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                \
  template Tensor<T> dropout<T>(const Tensor<T>&, T, DropoutKey, bool);        \
  template Tensor<T> embedding_gather<T>(const Tensor<T>&,                     \
                                         const std::vector<std::int32_t>&);    \
  template Tensor<T> concat_rows<T>(std::span<const Tensor<T>>);               \
  template Tensor<T> concat_cols<T>(std::span<const Tensor<T>>);               \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, std::size_t,              \
                                   std::size_t);                               \
  template Tensor<T> stack_rows<T>(std::span<const Tensor<T>>);                \
  template Tensor<T> masked_mean_pool<T>(const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> mse<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> sum<T>(const Tensor<T>&);                                 \
  template Tensor<T> mean<T>(const Tensor<T>&);                                \
  template Tensor<T> l2_normalize_rows<T>(const Tensor<T>&, T);                \
  template Tensor<T> diagonal<T>(const Tensor<T>&);                            \
  template Tensor<T> mask_tensor<T>(const std::vector<int>&);

XLRET_INSTANTIATE_OPS(float)
XLRET_INSTANTIATE_OPS(double)

#undef XLRET_INSTANTIATE_OPS

}  // namespace xlret::ops
