#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ptransfer {

// Row-major dense array of doubles. Shape dimensions are all positive and
// product(shape) == data.size() at all times.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s);
    Tensor(std::vector<std::size_t> s, std::vector<double> d);

    std::size_t size() const { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;

    static std::size_t count(const std::vector<std::size_t>& s);
};

std::string shape_str(const std::vector<std::size_t>& s);

void add_in_place(Tensor& a, const Tensor& b);
void divide_in_place(Tensor& t, double divisor);

// Pairwise (half-split) summation. Reductions across a batch use this tree so
// that summing a concatenated [x; x] batch yields exactly twice the sum of x.
double pairwise_sum(std::span<const double> xs);
double pairwise_mean(std::span<const double> xs);

// Same half-split tree over a list of equally shaped tensors. Consumes the
// leaves; returns the elementwise sum.
Tensor pairwise_reduce(std::vector<Tensor> leaves);

}  // namespace ptransfer
