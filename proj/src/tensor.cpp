#include "ptransfer/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace ptransfer {

std::size_t Tensor::count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) {
        if (d == 0) throw std::invalid_argument("tensor shape has a zero dimension");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(count(shape), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (count(shape) != data.size())
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

void add_in_place(Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("tensor shape mismatch in add: " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void divide_in_place(Tensor& t, double divisor) {
    for (double& v : t.data) v /= divisor;
}

namespace {

double pairwise_sum_range(std::span<const double> xs, std::size_t lo, std::size_t hi) {
    if (hi - lo == 1) return xs[lo];
    const std::size_t mid = lo + (hi - lo) / 2;
    return pairwise_sum_range(xs, lo, mid) + pairwise_sum_range(xs, mid, hi);
}

// Reduces leaves[lo, hi) in place; returns the index holding the subtree sum.
std::size_t reduce_range(std::vector<Tensor>& leaves, std::size_t lo, std::size_t hi) {
    if (hi - lo == 1) return lo;
    const std::size_t mid = lo + (hi - lo) / 2;
    const std::size_t l = reduce_range(leaves, lo, mid);
    const std::size_t r = reduce_range(leaves, mid, hi);
    add_in_place(leaves[l], leaves[r]);
    return l;
}

}  // namespace

double pairwise_sum(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    return pairwise_sum_range(xs, 0, xs.size());
}

double pairwise_mean(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("mean of empty range");
    return pairwise_sum(xs) / static_cast<double>(xs.size());
}

Tensor pairwise_reduce(std::vector<Tensor> leaves) {
    if (leaves.empty()) throw std::invalid_argument("pairwise_reduce on empty list");
    const std::size_t root = reduce_range(leaves, 0, leaves.size());
    return std::move(leaves[root]);
}

}  // namespace ptransfer
