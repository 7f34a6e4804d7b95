#include "vlarl/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "vlarl/error.hpp"

namespace vlarl::nn {

std::size_t shape_numel(const std::vector<std::size_t>& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape_, double fill)
    : shape(std::move(shape_)), data(shape_numel(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (shape_numel(shape) != data.size()) {
    throw invalid_argument("tensor shape " + shape_string() + " does not match " +
                           std::to_string(data.size()) + " values");
  }
}

std::size_t Tensor::cols() const noexcept {
  if (shape.size() < 2) return 1;
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
  return c;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 16;

// Four doubles; lowered to whatever vector width the target offers.
using Lane = double __attribute__((vector_size(32)));
constexpr std::size_t kLanes = kTileCols / 4;

inline Lane load_lane(const double* p) {
  Lane v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}
inline void store_lane(double* p, Lane v) { std::memcpy(p, &v, sizeof(v)); }

// Accumulators for an R x kTileCols output tile stay in registers across the
// whole k loop; each element still sums a[i,0]*b[0,j], a[i,1]*b[1,j], ... in
// order starting from zero.
template <std::size_t R>
void matmul_tile(const double* a, const double* b, double* out, std::size_t k, std::size_t n,
                 std::size_t j0) {
  Lane acc[R][kLanes] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n + j0;
    Lane bv[kLanes];
    for (std::size_t l = 0; l < kLanes; ++l) bv[l] = load_lane(brow + 4 * l);
    for (std::size_t r = 0; r < R; ++r) {
      const double av = a[r * k + p];
      for (std::size_t l = 0; l < kLanes; ++l) acc[r][l] += av * bv[l];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t l = 0; l < kLanes; ++l) store_lane(out + r * n + j0 + 4 * l, acc[r][l]);
}

template <std::size_t R>
void matmul_rows(const double* a, const double* b, double* out, std::size_t k, std::size_t n) {
  std::size_t j = 0;
  for (; j + kTileCols <= n; j += kTileCols) matmul_tile<R>(a, b, out, k, n, j);
  for (; j < n; ++j) {
    for (std::size_t r = 0; r < R; ++r) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[r * k + p] * b[p * n + j];
      out[r * n + j] = s;
    }
  }
}

// out[p0..p0+R, j0..j0+kTileCols] += sum_i a[i, p]^T g[i, j] over rows
// [i0, i1), i ascending.
template <std::size_t R>
void matmul_tn_tile(const double* a, const double* g, double* out, std::size_t i0,
                    std::size_t i1, std::size_t k, std::size_t n, std::size_t p0,
                    std::size_t j0) {
  Lane acc[R][kLanes];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t l = 0; l < kLanes; ++l) acc[r][l] = load_lane(out + (p0 + r) * n + j0 + 4 * l);
  for (std::size_t i = i0; i < i1; ++i) {
    const double* grow = g + i * n + j0;
    const double* arow = a + i * k + p0;
    Lane gv[kLanes];
    for (std::size_t l = 0; l < kLanes; ++l) gv[l] = load_lane(grow + 4 * l);
    for (std::size_t r = 0; r < R; ++r) {
      const double av = arow[r];
      for (std::size_t l = 0; l < kLanes; ++l) acc[r][l] += av * gv[l];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t l = 0; l < kLanes; ++l) store_lane(out + (p0 + r) * n + j0 + 4 * l, acc[r][l]);
}

// Rows of a and g are consumed in chunks small enough to stay cached; every
// output element still sees the rows in ascending order.
constexpr std::size_t kTnChunk = 64;

}  // namespace

void matmul_into(std::span<const double> a, std::span<const double> b,
                 std::span<double> out, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + kTileRows <= m; i += kTileRows)
    matmul_rows<kTileRows>(a.data() + i * k, b.data(), out.data() + i * n, k, n);
  for (; i < m; ++i) matmul_rows<1>(a.data() + i * k, b.data(), out.data() + i * n, k, n);
}

void matmul_tn_accumulate(std::span<const double> a, std::span<const double> g,
                          std::span<double> out, std::size_t m, std::size_t k,
                          std::size_t n) {
  const std::size_t tiled = n - n % kTileCols;
  for (std::size_t i0 = 0; i0 < m; i0 += kTnChunk) {
    const std::size_t i1 = std::min(m, i0 + kTnChunk);
    std::size_t p = 0;
    for (; p + kTileRows <= k; p += kTileRows)
      for (std::size_t j = 0; j < tiled; j += kTileCols)
        matmul_tn_tile<kTileRows>(a.data(), g.data(), out.data(), i0, i1, k, n, p, j);
    for (; p < k; ++p)
      for (std::size_t j = 0; j < tiled; j += kTileCols)
        matmul_tn_tile<1>(a.data(), g.data(), out.data(), i0, i1, k, n, p, j);
    if (tiled == n) continue;
    for (std::size_t i = i0; i < i1; ++i) {
      const double* arow = a.data() + i * k;
      for (std::size_t j = tiled; j < n; ++j) {
        const double gv = g[i * n + j];
        double* __restrict ocol = out.data() + j;
        for (std::size_t q = 0; q < k; ++q) ocol[q * n] += arow[q] * gv;
      }
    }
  }
}

double softmax_inplace(std::span<double> row) noexcept {
  const double mx = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    total += v;
  }
  for (double& v : row) v /= total;
  return mx + std::log(total);
}

}  // namespace vlarl::nn
