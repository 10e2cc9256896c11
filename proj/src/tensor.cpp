#include "iat/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace iat {

namespace {
int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        check_contract(d >= 0, "tensor dimension must be non-negative");
        n *= d;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)),
      store_(std::make_shared<std::vector<double>>(static_cast<size_t>(shape_numel(shape_)), 0.0)) {}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
    check_contract(shape_numel(shape) == static_cast<int64_t>(values.size()),
                   "tensor: value count does not match shape");
    Tensor t;
    t.shape_ = std::move(shape);
    t.store_ = std::make_shared<std::vector<double>>(std::move(values));
    return t;
}

int64_t Tensor::numel() const { return store_ ? static_cast<int64_t>(store_->size()) : 0; }

Tensor Tensor::clone() const {
    if (!defined()) return Tensor();
    Tensor t;
    t.shape_ = shape_;
    t.store_ = std::make_shared<std::vector<double>>(*store_);
    return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    check_contract(shape_numel(shape) == numel(), "reshape: element count mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.store_ = store_;
    return t;
}

void Tensor::fill(double value) {
    if (store_) std::fill(store_->begin(), store_->end(), value);
}

bool Tensor::all_finite() const {
    if (!defined()) return true;
    const double* p = data();
    for (int64_t i = 0; i < numel(); ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

std::string shape_str(const Tensor& t) {
    std::ostringstream ss;
    ss << "[";
    for (int i = 0; i < t.ndim(); ++i) ss << (i ? "," : "") << t.dim(i);
    ss << "]";
    return ss.str();
}

double dot(const Tensor& a, const Tensor& b) {
    check_contract(a.numel() == b.numel(), "dot: size mismatch");
    double s = 0.0;
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) s += pa[i] * pb[i];
    return s;
}

double sum(const Tensor& a) {
    double s = 0.0;
    const double* p = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) s += p[i];
    return s;
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    const double* p = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(p[i]));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    check_contract(same_shape(a, b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(pa[i] - pb[i]));
    return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) return false;
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.numel())) == 0;
}

void add_scaled(Tensor& dst, const Tensor& src, double s) {
    check_contract(same_shape(dst, src), "add_scaled: shape mismatch");
    double* pd = dst.data();
    const double* ps = src.data();
    for (int64_t i = 0; i < dst.numel(); ++i) pd[i] += s * ps[i];
}

}  // namespace iat
