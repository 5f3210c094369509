#include "cmtf/tensor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "cmtf/error.hpp"

namespace cmtf::tensor {

namespace {

std::size_t product(const Tensor::Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void validate_shape(const Tensor::Shape& shape) {
    if (shape.empty() || shape.size() > 3) {
        throw DimensionError("tensor rank must be 1..3, got " + std::to_string(shape.size()));
    }
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
    }
}

}  // namespace

std::string shape_string(const Tensor::Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != product(shape_)) {
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             cmtf::tensor::shape_string(shape_));
    }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}, 0.0); }

Tensor Tensor::scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> v) {
    const auto n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged row list");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const noexcept {
    if (shape_.empty()) return 0;
    if (shape_.size() == 1) return 1;
    return data_.size() / shape_.back();
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const { return cmtf::tensor::shape_string(shape_); }

void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value in tensor " + t.shape_string());
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows() || b.rank() > 2) {
        throw DimensionError("matmul: incompatible shapes " + a.shape_string() + " and " + b.shape_string());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros(m, n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = po + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = pa[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    require_finite(out, "matmul");
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: incompatible shapes " + a.shape_string() + " and " + b.shape_string());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out = Tensor::zeros(m, n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += pa[i * k + p] * pb[j * k + p];
            out(i, j) = s;
        }
    }
    require_finite(out, "matmul_nt");
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: incompatible shapes " + a.shape_string() + " and " + b.shape_string());
    }
    const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
    Tensor out = Tensor::zeros(m, n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = pa + p * m;
        const double* brow = pb + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double api = arow[i];
            if (api == 0.0) continue;
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += api * brow[j];
        }
    }
    require_finite(out, "matmul_tn");
    return out;
}

Tensor transpose(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out = Tensor::zeros(c, r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(j, i) = a(i, j);
    return out;
}

Tensor softmax_rows(const Tensor& m) {
    require_finite(m, "softmax_rows");
    Tensor out = m;
    const std::size_t r = m.rows(), c = m.cols();
    for (std::size_t i = 0; i < r; ++i) {
        double* row = out.data().data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            s += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) row[j] /= s;
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = x.cols();
    if (d == 0) throw DimensionError("layer_norm: zero-length last dimension");
    if (gain.size() != d || bias.size() != d) {
        throw DimensionError("layer_norm: gain/bias " + gain.shape_string() + "/" + bias.shape_string() +
                             " do not match last dimension of " + x.shape_string());
    }
    Tensor out = x;
    const std::size_t r = x.rows();
    for (std::size_t i = 0; i < r; ++i) {
        double* row = out.data().data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) row[j] = gain[j] * (row[j] - mean) * inv + bias[j];
    }
    require_finite(out, "layer_norm");
    return out;
}

}  // namespace cmtf::tensor
