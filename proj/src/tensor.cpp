#include "tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace cfmn {

long long shape_numel(const std::vector<int>& shape) {
    long long n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> s, real fill) {
    long long n = shape_numel(s);
    shape = std::move(s);
    data.assign(static_cast<size_t>(n), fill);
}

Tensor Tensor::from(std::vector<int> s, std::vector<real> values) {
    if (shape_numel(s) != static_cast<long long>(values.size()))
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + cfmn::shape_str(s));
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(values);
    return t;
}

void Tensor::fill(real v) { std::fill(data.begin(), data.end(), v); }

void Tensor::check_finite(const char* ctx) const {
    for (real v : data) {
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite value in ") + ctx + " " + shape_str());
    }
}

std::string Tensor::shape_str() const { return cfmn::shape_str(shape); }

Tensor random_uniform(std::vector<int> shape, Rng& rng, real lo, real hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = static_cast<real>(rng.uniform(lo, hi));
    return t;
}

Tensor random_normal(std::vector<int> shape, Rng& rng, real stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = static_cast<real>(rng.normal() * stddev);
    return t;
}

real max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw ShapeError("max_abs_diff shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    real m = 0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(real)) == 0;
}

}  // namespace cfmn
