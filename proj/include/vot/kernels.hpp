#pragma once

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include "vot/tensor.hpp"

namespace vot {

template <typename T>
using EigenRowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EigenRowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const EigenRowMat<T>>;

// C (+)= A(m,k) * B(k,n), row-major raw pointers.
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    ConstMatMap<T> A(a, m, k), B(b, k, n);
    MatMap<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

// C (+)= A(m,k) * B(n,k)^T
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    ConstMatMap<T> A(a, m, k), B(b, n, k);
    MatMap<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

// C (+)= A(k,m)^T * B(k,n)
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    ConstMatMap<T> A(a, k, m), B(b, k, n);
    MatMap<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

template <typename T>
using StridedMap = Eigen::Map<EigenRowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const EigenRowMat<T>, 0, Eigen::OuterStride<>>;

}  // namespace vot
