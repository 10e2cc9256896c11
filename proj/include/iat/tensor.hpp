#ifndef IAT_TENSOR_HPP_
#define IAT_TENSOR_HPP_

#include <cstdint>
#include <memory>
#include <vector>

#include "iat/common.hpp"

namespace iat {

// Dense row-major double tensor with shared storage. Copies are shallow;
// tensors handed to a Graph are treated as read-only for the graph's
// lifetime. Use clone() when a private buffer is needed.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value) { return full({1}, value); }
    static Tensor from(std::vector<int> shape, std::vector<double> values);

    bool defined() const { return store_ != nullptr; }
    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const;

    double* data() { return store_->data(); }
    const double* data() const { return store_->data(); }

    double& operator[](int64_t i) { return (*store_)[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return (*store_)[static_cast<size_t>(i)]; }

    double& at(int a) { return (*store_)[static_cast<size_t>(a)]; }
    double& at(int a, int b) { return (*store_)[static_cast<size_t>(a) * shape_[1] + b]; }
    double& at(int a, int b, int c) {
        return (*store_)[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    double& at(int a, int b, int c, int d) {
        return (*store_)[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    double at(int a) const { return (*store_)[static_cast<size_t>(a)]; }
    double at(int a, int b) const { return (*store_)[static_cast<size_t>(a) * shape_[1] + b]; }
    double at(int a, int b, int c) const {
        return (*store_)[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    double at(int a, int b, int c, int d) const {
        return (*store_)[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    Tensor clone() const;
    Tensor reshaped(std::vector<int> shape) const;  // shares storage
    void fill(double value);
    void zero() { fill(0.0); }

    bool all_finite() const;

  private:
    std::vector<int> shape_;
    std::shared_ptr<std::vector<double>> store_;
};

bool same_shape(const Tensor& a, const Tensor& b);
std::string shape_str(const Tensor& t);

double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

// dst += s * src (shapes must match)
void add_scaled(Tensor& dst, const Tensor& src, double s);

}  // namespace iat

#endif  // IAT_TENSOR_HPP_
