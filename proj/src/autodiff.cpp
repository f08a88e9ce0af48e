#include "tvsurv/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "tvsurv/errors.hpp"

namespace tvsurv::ad {

namespace {

constexpr double kLogFloor = 1e-12;
thread_local bool t_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_mat(const Tensor& t) { return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
MapMat as_mat(Tensor& t) { return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

// Creates a result node; parents are recorded only when a gradient can flow.
Var make_result(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (t_grad_enabled) {
        for (const auto& in : inputs) {
            if (in.requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        node->grad = Tensor(node->value.rows(), node->value.cols());
        for (const auto& in : inputs) node->parents.push_back(in.ptr());
        node->backward_fn = std::move(fn);
    }
    return Var(std::move(node));
}

Var make_result_n(Tensor value, std::span<const Var> inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (t_grad_enabled) {
        node->requires_grad = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    }
    if (node->requires_grad) {
        node->grad = Tensor(node->value.rows(), node->value.cols());
        for (const auto& in : inputs) node->parents.push_back(in.ptr());
        node->backward_fn = std::move(fn);
    }
    return Var(std::move(node));
}

std::size_t bdim(std::size_t a, std::size_t b, bool& ok) {
    if (a == b) return a;
    if (a == 1) return b;
    if (b == 1) return a;
    ok = false;
    return 0;
}

enum class BinOp { Add, Sub, Mul };

Var binary(const Var& a, const Var& b, BinOp op, const char* name) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    bool ok = true;
    const std::size_t rows = bdim(av.rows(), bv.rows(), ok);
    const std::size_t cols = bdim(av.cols(), bv.cols(), ok);
    if (!ok) shape_fail(name, av, bv);

    const bool ar1 = av.rows() == 1, ac1 = av.cols() == 1, br1 = bv.rows() == 1, bc1 = bv.cols() == 1;
    Tensor out(rows, cols);
    if (av.same_shape(bv)) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            switch (op) {
                case BinOp::Add: out[i] = av[i] + bv[i]; break;
                case BinOp::Sub: out[i] = av[i] - bv[i]; break;
                case BinOp::Mul: out[i] = av[i] * bv[i]; break;
            }
        }
    } else {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const double x = av(ar1 ? 0 : r, ac1 ? 0 : c);
                const double y = bv(br1 ? 0 : r, bc1 ? 0 : c);
                switch (op) {
                    case BinOp::Add: out(r, c) = x + y; break;
                    case BinOp::Sub: out(r, c) = x - y; break;
                    case BinOp::Mul: out(r, c) = x * y; break;
                }
            }
        }
    }

    return make_result(std::move(out), {a, b}, [op, ar1, ac1, br1, bc1](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const std::size_t rows = self.value.rows(), cols = self.value.cols();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const double g = self.grad(r, c);
                const std::size_t ra = ar1 ? 0 : r, ca = ac1 ? 0 : c;
                const std::size_t rb = br1 ? 0 : r, cb = bc1 ? 0 : c;
                switch (op) {
                    case BinOp::Add:
                        if (pa.requires_grad) pa.grad(ra, ca) += g;
                        if (pb.requires_grad) pb.grad(rb, cb) += g;
                        break;
                    case BinOp::Sub:
                        if (pa.requires_grad) pa.grad(ra, ca) += g;
                        if (pb.requires_grad) pb.grad(rb, cb) -= g;
                        break;
                    case BinOp::Mul:
                        if (pa.requires_grad) pa.grad(ra, ca) += g * pb.value(rb, cb);
                        if (pb.requires_grad) pb.grad(rb, cb) += g * pa.value(ra, ca);
                        break;
                }
            }
        }
    });
}

template <class Fwd, class Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
    const Tensor& xv = x.value();
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    // deriv(x, y) gives dy/dx
    return make_result(std::move(out), {x}, [deriv](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.value.size(); ++i) p.grad[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
    });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("Tensor: data length " + std::to_string(data_.size()) + " does not match shape [" +
                         std::to_string(rows_) + "," + std::to_string(cols_) + "]");
    }
}

Tensor Tensor::row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(1, n, std::move(values));
}

Tensor Tensor::column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(n, 1, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[' << rows_ << ',' << cols_ << ']';
    return os.str();
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item(): tensor of shape " + shape_str() + " is not scalar");
    return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

// ---------------------------------------------------------------------------
// Var / leaves

void Var::zero_grad() {
    if (node_ && node_->requires_grad) node_->grad.fill(0.0);
}

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var parameter(Tensor value) {
    auto node = std::make_shared<Node>();
    node->grad = Tensor(value.rows(), value.cols());
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Ops

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::Add, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::Sub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::Mul, "mul"); }

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.rows()) shape_fail("matmul", av, bv);
    Tensor out(av.rows(), bv.cols());
    as_mat(out).noalias() = as_mat(av) * as_mat(bv);
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) as_mat(pa.grad).noalias() += as_mat(self.grad) * as_mat(pb.value).transpose();
        if (pb.requires_grad) as_mat(pb.grad).noalias() += as_mat(pa.value).transpose() * as_mat(self.grad);
    });
}

Var sigmoid(const Var& x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
    return unary(
        x, [](double v) { return std::log(std::max(v, kLogFloor)); },
        [](double v, double) { return v > kLogFloor ? 1.0 / v : 0.0; });
}

Var square(const Var& x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var scale(const Var& x, double s) {
    return unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
    return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var softmax(const Var& x) {
    const Tensor& xv = x.value();
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < xv.cols(); ++c) mx = std::max(mx, xv(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < xv.cols(); ++c) {
            out(r, c) = std::exp(xv(r, c) - mx);
            z += out(r, c);
        }
        for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) /= z;
    }
    return make_result(std::move(out), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        const Tensor& y = self.value;
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) dot += self.grad(r, c) * y(r, c);
            for (std::size_t c = 0; c < y.cols(); ++c) p.grad(r, c) += y(r, c) * (self.grad(r, c) - dot);
        }
    });
}

Var concat(std::span<const Var> parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    const Tensor& first = parts[0].value();
    std::size_t rows = 0, cols = 0;
    for (const auto& p : parts) {
        const Tensor& v = p.value();
        if (axis == 1) {
            if (v.rows() != first.rows()) shape_fail("concat(axis=1)", first, v);
            cols += v.cols();
        } else {
            if (v.cols() != first.cols()) shape_fail("concat(axis=0)", first, v);
            rows += v.rows();
        }
    }
    if (axis == 1) rows = first.rows();
    else cols = first.cols();

    Tensor out(rows, cols);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const Tensor& v = p.value();
        for (std::size_t r = 0; r < v.rows(); ++r)
            for (std::size_t c = 0; c < v.cols(); ++c) {
                if (axis == 1) out(r, offset + c) = v(r, c);
                else out(offset + r, c) = v(r, c);
            }
        offset += axis == 1 ? v.cols() : v.rows();
    }
    return make_result_n(std::move(out), parts, [axis](Node& self) {
        std::size_t off = 0;
        for (auto& pp : self.parents) {
            Node& p = *pp;
            const std::size_t pr = p.value.rows(), pc = p.value.cols();
            if (p.requires_grad) {
                for (std::size_t r = 0; r < pr; ++r)
                    for (std::size_t c = 0; c < pc; ++c)
                        p.grad(r, c) += axis == 1 ? self.grad(r, off + c) : self.grad(off + r, c);
            }
            off += axis == 1 ? pc : pr;
        }
    });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
    const Tensor& xv = x.value();
    if (begin >= end || end > xv.cols()) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for shape " + xv.shape_str());
    }
    Tensor out(xv.rows(), end - begin);
    for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = xv(r, c);
    return make_result(std::move(out), {x}, [begin](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t r = 0; r < self.value.rows(); ++r)
            for (std::size_t c = 0; c < self.value.cols(); ++c) p.grad(r, begin + c) += self.grad(r, c);
    });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
    const Tensor& xv = x.value();
    Tensor out(rows.size(), xv.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= xv.rows()) {
            throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for shape " + xv.shape_str());
        }
        for (std::size_t c = 0; c < xv.cols(); ++c) out(i, c) = xv(rows[i], c);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result(std::move(out), {x}, [idx = std::move(idx)](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t c = 0; c < self.value.cols(); ++c) p.grad(idx[i], c) += self.grad(i, c);
    });
}

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return make_result(Tensor::scalar(s), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        const double g = self.grad[0];
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    });
}

Var mean(const Var& x) {
    const double n = static_cast<double>(x.value().size());
    if (n == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(x), 1.0 / n);
}

Var row_sum(const Var& x) {
    const Tensor& xv = x.value();
    Tensor out(xv.rows(), 1);
    for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = 0; c < xv.cols(); ++c) out(r, 0) += xv(r, c);
    return make_result(std::move(out), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t r = 0; r < p.value.rows(); ++r)
            for (std::size_t c = 0; c < p.value.cols(); ++c) p.grad(r, c) += self.grad(r, 0);
    });
}

Var rbf_gram(const Var& a, const Var& b, double sigma) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.cols()) shape_fail("rbf_gram", av, bv);
    if (!(sigma > 0.0)) throw NumericalError("rbf_gram: bandwidth must be positive");
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const std::size_t n = av.rows(), m = bv.rows(), p = av.cols();
    Tensor out(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < p; ++c) {
                const double diff = av(i, c) - bv(j, c);
                d2 += diff * diff;
            }
            out(i, j) = std::exp(-d2 * inv);
        }
    }
    return make_result(std::move(out), {a, b}, [sigma](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double inv_s2 = 1.0 / (sigma * sigma);
        const std::size_t n = pa.value.rows(), m = pb.value.rows(), p = pa.value.cols();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                const double coef = self.grad(i, j) * self.value(i, j) * inv_s2;
                if (coef == 0.0) continue;
                for (std::size_t c = 0; c < p; ++c) {
                    const double diff = pa.value(i, c) - pb.value(j, c);
                    if (pa.requires_grad) pa.grad(i, c) -= coef * diff;
                    if (pb.requires_grad) pb.grad(j, c) += coef * diff;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Backward

void backward(const Var& root) {
    if (!root.defined()) throw Error("backward: undefined root");
    if (root.value().size() != 1) {
        throw ShapeError("backward: root must be scalar, got shape " + root.value().shape_str());
    }
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && parent->backward_fn && seen.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

void zero_grads(std::span<Var> params) {
    for (auto& p : params) p.zero_grad();
}

GradCheckReport grad_check(const std::function<Var()>& f, std::span<Var> params, double step, double tol) {
    if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
    zero_grads(params);
    Var root = f();
    if (!std::isfinite(root.item())) throw NumericalError("grad_check: non-finite objective at base point");
    backward(root);

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Var& p = params[pi];
        Tensor& value = p.mutable_value();
        for (std::size_t c = 0; c < value.size(); ++c) {
            const double orig = value[c];
            double fp = 0.0, fm = 0.0;
            {
                NoGradGuard guard;
                value[c] = orig + step;
                fp = f().item();
                value[c] = orig - step;
                fm = f().item();
            }
            value[c] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericalError("grad_check: non-finite objective at probe of parameter " + std::to_string(pi) +
                                     " coordinate " + std::to_string(c));
            }
            const double numeric = (fp - fm) / (2.0 * step);
            const double analytic = p.grad()[c];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
            const double dev = std::abs(analytic - numeric) / denom;
            ++report.coords_checked;
            if (dev > report.max_rel_deviation || report.coords_checked == 1) {
                report.max_rel_deviation = dev;
                report.worst_param = pi;
                report.worst_coord = c;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_deviation <= tol;
    return report;
}

}  // namespace tvsurv::ad
