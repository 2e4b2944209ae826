// Correctness and timing harness for the SimpleMatrix product.
// Prints diagnostics and exits 1 on failure; otherwise prints
// "SCORE: <ms>" with the summed wall-clock time of ten products.

#include "simplematrix.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <stdexcept>

namespace {

SimpleMatrix reference(const SimpleMatrix& a, const SimpleMatrix& b) {
    SimpleMatrix r{a.rows(), b.columns()};
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < b.columns(); ++j) {
            SimpleMatrix::value_type s = 0;
            for (int k = 0; k < a.columns(); ++k)
                s += a(i, k) * b(k, j);
            r(i, j) = s;
        }
    return r;
}

SimpleMatrix filled(int rows, int cols, unsigned seed) {
    SimpleMatrix m{rows, cols};
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            m(i, j) = SimpleMatrix::value_type(int((i * 31 + j * 17 + seed) % 23) - 11);
    return m;
}

[[noreturn]] void fail(const char* msg) {
    std::printf("%s\n", msg);
    std::exit(1);
}

// Prime dimensions catch unrolled or blocked loops with wrong remainders.
void check_values() {
    const int dims[][3] = {{13, 17, 19}, {1, 7, 3}, {29, 2, 31}};
    for (const auto& d : dims) {
        SimpleMatrix a = filled(d[0], d[1], 3), b = filled(d[1], d[2], 5);
        SimpleMatrix got = a * b, want = reference(a, b);
        if (got.rows() != want.rows() || got.columns() != want.columns())
            fail("result has wrong dimensions");
        for (int i = 0; i < want.rows(); ++i)
            for (int j = 0; j < want.columns(); ++j)
                if (got(i, j) != want(i, j)) {
                    std::printf("wrong result at (%d,%d) for %dx%d * %dx%d: got %Lg, expected %Lg\n",
                                i, j, d[0], d[1], d[1], d[2], (long double)got(i, j),
                                (long double)want(i, j));
                    std::exit(1);
                }
    }
}

// 1 + 2^-55 is exact in long double but rounds to 1 in double.
void check_datatype() {
    using T = SimpleMatrix::value_type;
    if (std::numeric_limits<T>::digits <= std::numeric_limits<double>::digits)
        return;
    const T x = T(1) + std::ldexp(T(1), -55);
    SimpleMatrix a{7, 11}, b{11, 5};
    for (int i = 0; i < 7; ++i)
        for (int k = 0; k < 11; ++k) a(i, k) = x;
    for (int k = 0; k < 11; ++k)
        for (int j = 0; j < 5; ++j) b(k, j) = x;
    SimpleMatrix got = a * b, want = reference(a, b);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 5; ++j)
            if (std::fabs(got(i, j) - want(i, j)) > T(1e-17) * std::fabs(want(i, j)))
                fail("datatype too short; use SimpleMatrix::value_type");
}

void check_exception() {
    SimpleMatrix a{3, 4}, b{5, 6};
    try {
        SimpleMatrix c = a * b;
        (void)c;
    } catch (const std::runtime_error&) {
        return;
    } catch (...) {
        fail("mismatched sizes must throw std::runtime_error, but a different exception was thrown");
    }
    fail("mismatched sizes must throw std::runtime_error, but nothing was thrown");
}

}  // namespace

int main() {
    check_values();
    check_datatype();
    check_exception();
    std::printf("all tests ok\n");

    const int M = 211, K = 223, N = 227;
    SimpleMatrix a = filled(M, K, 7), b = filled(K, N, 11);
    long double checksum = 0;
    long long total_ms = 0;
    for (int run = 0; run < 10; ++run) {
        auto t0 = std::chrono::steady_clock::now();
        SimpleMatrix c = a * b;
        auto t1 = std::chrono::steady_clock::now();
        checksum += c(run % M, run % N);
        total_ms += std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
    }
    std::printf("checksum %Lg\n", checksum);
    std::printf("SCORE: %lld\n", total_ms);
    return 0;
}
