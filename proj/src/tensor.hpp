#pragma once

#include <initializer_list>
#include <vector>

#include "common.hpp"

namespace cfmn {

// Dense row-major n-d array. Immutable by convention once an op has
// produced it; ops allocate fresh outputs.
struct Tensor {
    std::vector<int> shape;
    std::vector<real> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s, real fill = real(0));

    static Tensor from(std::vector<int> s, std::vector<real> values);
    static Tensor scalar(real v) { return from({1}, {v}); }

    int rank() const { return static_cast<int>(shape.size()); }
    long long numel() const { return static_cast<long long>(data.size()); }
    bool empty() const { return data.empty(); }

    int extent(int d) const { return shape[static_cast<size_t>(d)]; }

    real* ptr() { return data.data(); }
    const real* ptr() const { return data.data(); }

    real& at(int i) { return data[static_cast<size_t>(i)]; }
    real at(int i) const { return data[static_cast<size_t>(i)]; }
    real& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    real at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
    real& at(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    real at(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    real& at(int i, int j, int k, int l) {
        return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    real at(int i, int j, int k, int l) const {
        return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(real v);

    // throws NumericError naming `ctx` if any element is NaN/Inf
    void check_finite(const char* ctx) const;

    std::string shape_str() const;
};

std::string shape_str(const std::vector<int>& shape);
long long shape_numel(const std::vector<int>& shape);

Tensor random_uniform(std::vector<int> shape, Rng& rng, real lo = real(-1), real hi = real(1));
Tensor random_normal(std::vector<int> shape, Rng& rng, real stddev = real(1));

real max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace cfmn
