#pragma once
#include <cstddef>
#include <numeric>
#include <vector>

#include "dnp/errors.hpp"

namespace dnp {

// Dense row-major nd-array of doubles. The feature axis, where present,
// is always the last (fastest-varying) axis.
struct NdArray {
    std::vector<int> shape;
    std::vector<double> v;

    NdArray() = default;
    explicit NdArray(std::vector<int> s, double fill = 0.0)
        : shape(std::move(s)), v(count(shape), fill) {}

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 0) throw ShapeMismatch("negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }
    int ndim() const { return static_cast<int>(shape.size()); }

    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    bool same_shape(const NdArray& o) const { return shape == o.shape; }
};

// Odometer-style iteration over a spatial grid given as shape[0..d).
// Calls fn(linear_index, coord_ptr) for every grid point, row-major.
template <typename Fn>
inline void for_each_coord(const int* shape, int d, Fn&& fn) {
    std::vector<int> c(static_cast<std::size_t>(d), 0);
    std::size_t n = 1;
    for (int i = 0; i < d; ++i) n *= static_cast<std::size_t>(shape[i]);
    for (std::size_t lin = 0; lin < n; ++lin) {
        fn(lin, c.data());
        for (int i = d - 1; i >= 0; --i) {
            if (++c[static_cast<std::size_t>(i)] < shape[i]) break;
            c[static_cast<std::size_t>(i)] = 0;
        }
    }
}

} // namespace dnp
