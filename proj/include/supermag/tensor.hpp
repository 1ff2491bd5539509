#pragma once

// Dense row-major tensor with up to 4 dimensions, plus the small GEMM kernels
// the network ops are built on. Templated on the scalar type so the gradient
// checker can run the whole model in double precision.

#include <array>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace supermag {

struct Shape {
    std::array<int, 4> dim{1, 1, 1, 1};
    int rank = 0;

    Shape() = default;
    Shape(std::initializer_list<int> dims) {
        rank = static_cast<int>(dims.size());
        assert(rank >= 1 && rank <= 4);
        int i = 0;
        for (int d : dims) dim[i++] = d;
        for (; i < 4; ++i) dim[i] = 1;
    }

    std::size_t numel() const {
        std::size_t n = 1;
        for (int i = 0; i < rank; ++i) n *= static_cast<std::size_t>(dim[i]);
        return n;
    }

    int operator[](int i) const { return dim[i]; }

    bool operator==(const Shape& o) const { return rank == o.rank && dim == o.dim; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::string s = "(";
        for (int i = 0; i < rank; ++i) {
            if (i) s += ",";
            s += std::to_string(dim[i]);
        }
        return s + ")";
    }
};

template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(s), data(s.numel(), T(0)) {}
    Tensor(Shape s, T fill) : shape(s), data(s.numel(), fill) {}

    std::size_t numel() const { return data.size(); }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // 2-D access (rank >= 2 collapses trailing dims into columns).
    T& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape.dim[1] + j]; }

    Tensor<T> reshaped(Shape s) const {
        if (s.numel() != numel())
            throw std::invalid_argument("reshape: element count mismatch " + shape.str() + " -> " + s.str());
        Tensor<T> out;
        out.shape = s;
        out.data = data;
        return out;
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

// ---------------------------------------------------------------------------
// GEMM kernels. Row-major, accumulate into C. Inner loops are written so the
// compiler vectorizes the contiguous j dimension; each output element is
// accumulated sequentially, which keeps results independent of tiling.
// ---------------------------------------------------------------------------

// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_nn(int M, int N, int K, const T* __restrict a, const T* __restrict b, T* __restrict c) {
    constexpr int MR = 4;
    int m = 0;
    for (; m + MR <= M; m += MR) {
        const T* a0 = a + static_cast<std::size_t>(m) * K;
        const T* a1 = a0 + K;
        const T* a2 = a1 + K;
        const T* a3 = a2 + K;
        T* c0 = c + static_cast<std::size_t>(m) * N;
        T* c1 = c0 + N;
        T* c2 = c1 + N;
        T* c3 = c2 + N;
        for (int k = 0; k < K; ++k) {
            const T* bk = b + static_cast<std::size_t>(k) * N;
            const T va0 = a0[k], va1 = a1[k], va2 = a2[k], va3 = a3[k];
            for (int j = 0; j < N; ++j) {
                const T bj = bk[j];
                c0[j] += va0 * bj;
                c1[j] += va1 * bj;
                c2[j] += va2 * bj;
                c3[j] += va3 * bj;
            }
        }
    }
    for (; m < M; ++m) {
        T* cm = c + static_cast<std::size_t>(m) * N;
        const T* am = a + static_cast<std::size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            const T* bk = b + static_cast<std::size_t>(k) * N;
            const T va = am[k];
            for (int j = 0; j < N; ++j) cm[j] += va * bk[j];
        }
    }
}

// C[M x N] += A[M x K] * B[N x K]^T   (dot products over contiguous K; the
// simd reduction permits a vectorized, fixed-order accumulation)
template <typename T>
void gemm_nt(int M, int N, int K, const T* __restrict a, const T* __restrict b, T* __restrict c) {
    for (int i = 0; i < M; ++i) {
        const T* ai = a + static_cast<std::size_t>(i) * K;
        T* ci = c + static_cast<std::size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const T* bj = b + static_cast<std::size_t>(j) * K;
            T acc = 0;
#pragma omp simd reduction(+ : acc)
            for (int k = 0; k < K; ++k) acc += ai[k] * bj[k];
            ci[j] += acc;
        }
    }
}

// C[M x N] += A[K x M]^T * B[K x N]   (rank-1 updates, vectorized over N)
template <typename T>
void gemm_tn(int M, int N, int K, const T* __restrict a, const T* __restrict b, T* __restrict c) {
    for (int k = 0; k < K; ++k) {
        const T* ak = a + static_cast<std::size_t>(k) * M;
        const T* bk = b + static_cast<std::size_t>(k) * N;
        for (int i = 0; i < M; ++i) {
            const T va = ak[i];
            if (va == T(0)) continue;
            T* ci = c + static_cast<std::size_t>(i) * N;
            for (int j = 0; j < N; ++j) ci[j] += va * bk[j];
        }
    }
}

}  // namespace supermag
