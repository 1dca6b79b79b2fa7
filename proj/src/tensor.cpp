#include "trvae/tensor.hpp"

#include "trvae/error.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace trvae {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(what) + ": expected a rank-2 tensor, got " + t.shape_string());
    }
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += "x";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_.empty()) {
        throw DimensionError("tensor shape must have at least one extent");
    }
    for (std::size_t extent : shape_) {
        if (extent == 0) {
            throw DimensionError("tensor extents must be positive, got " + trvae::shape_string(shape_));
        }
    }
    if (product(shape_) != values_.size()) {
        throw DimensionError("tensor shape " + trvae::shape_string(shape_) + " needs " +
                             std::to_string(product(shape_)) + " values, got " +
                             std::to_string(values_.size()));
    }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return filled(rows, cols, 0.0); }

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double value) {
    return Tensor({rows, cols}, std::vector<double>(rows * cols, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, {value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> values;
    std::size_t cols = rows.size() == 0 ? 0 : rows.begin()->size();
    for (const auto& r : rows) {
        if (r.size() != cols) {
            throw DimensionError("ragged matrix literal");
        }
        values.insert(values.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(values));
}

Tensor Tensor::from_external(std::vector<std::size_t> shape, std::vector<double> values) {
    Tensor t(std::move(shape), std::move(values));
    if (!t.all_finite()) {
        throw NumericError("tensor input contains NaN or Inf");
    }
    return t;
}

std::size_t Tensor::rows() const {
    require_matrix(*this, "rows()");
    return shape_[0];
}

std::size_t Tensor::cols() const {
    require_matrix(*this, "cols()");
    return shape_[1];
}

std::span<const double> Tensor::row(std::size_t r) const {
    const std::size_t c = cols();
    return std::span<const double>(values_).subspan(r * c, c);
}

double Tensor::item() const {
    if (values_.size() != 1) {
        throw DimensionError("item() needs a single-element tensor, got " + shape_string());
    }
    return values_[0];
}

bool Tensor::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

std::string Tensor::shape_string() const { return trvae::shape_string(shape_); }

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ for " + a.shape_string() + " and " +
                             b.shape_string());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros(m, n);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = ov + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            const double* brow = bv + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += aip * brow[j];
            }
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: column counts differ for " + a.shape_string() + " and " +
                             b.shape_string());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out = Tensor::zeros(m, n);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = av + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = bv + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += arow[p] * brow[p];
            }
            ov[i * n + j] = acc;
        }
    }
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_tn");
    require_matrix(b, "matmul_tn");
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: row counts differ for " + a.shape_string() + " and " +
                             b.shape_string());
    }
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros(m, n);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.values().data();
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = av + p * m;
        const double* brow = bv + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double api = arow[i];
            double* orow = ov + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += api * brow[j];
            }
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros(n, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

Tensor take_rows(const Tensor& a, std::span<const std::size_t> rows) {
    const std::size_t n = a.cols();
    if (rows.empty()) {
        throw DimensionError("take_rows: empty row selection");
    }
    std::vector<double> values;
    values.reserve(rows.size() * n);
    for (std::size_t r : rows) {
        if (r >= a.rows()) {
            throw DimensionError("take_rows: row " + std::to_string(r) + " out of range for " +
                                 a.shape_string());
        }
        const auto src = a.row(r);
        values.insert(values.end(), src.begin(), src.end());
    }
    return Tensor::matrix(rows.size(), n, std::move(values));
}

}  // namespace trvae
