#include "rd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rd/simd.hpp"

namespace rd {

bool Distribution::valid(double tol) const {
    if (probs.empty()) return false;
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0)) return false;
        total += p;
    }
    return std::abs(total - 1.0) <= tol;
}

std::size_t Distribution::argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i) {
        if (probs[i] > probs[best]) best = i;
    }
    return best;
}

Distribution softmax(const Vec64& logits, double temperature) {
    if (!(temperature > 0.0)) {
        throw ConfigError("softmax: temperature must be positive, got " +
                          std::to_string(temperature));
    }
    if (logits.empty()) throw ShapeError("softmax: empty logits");
    const double m = simd::max_value(logits.data(), logits.size());
    Distribution out;
    out.probs.resize(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out.probs[i] = std::exp((logits[i] - m) / temperature);
        total += out.probs[i];
    }
    for (double& p : out.probs) p /= total;
    return out;
}

double norm2(const Vec64& a) {
    return std::sqrt(simd::sum_squares(a.data(), a.size()));
}

double cosine(const Vec64& a, const Vec64& b, bool* degenerate) {
    if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
    const double na = norm2(a);
    const double nb = norm2(b);
    if (degenerate) *degenerate = (na <= kNormEps && nb <= kNormEps);
    const double d = simd::dot(a.data(), b.data(), a.size());
    return std::clamp(d / (na * nb + kNormEps), -1.0, 1.0);
}

Vec64 l2_normalize(const Vec64& a, bool* degenerate) {
    const double n = norm2(a);
    if (n <= kNormEps) {
        if (degenerate) *degenerate = true;
        return Vec64(a.size(), 0.0);
    }
    if (degenerate) *degenerate = false;
    Vec64 out(a.size());
    simd::scale(1.0 / n, a.data(), out.data(), a.size());
    return out;
}

double kl_divergence(const Distribution& t, const Distribution& p) {
    if (t.class_count() != p.class_count()) {
        throw ShapeError("kl_divergence: class count mismatch");
    }
    double acc = 0.0;
    for (std::size_t c = 0; c < t.class_count(); ++c) {
        if (t.probs[c] <= 0.0) continue;
        acc += t.probs[c] * std::log(t.probs[c] / std::max(p.probs[c], kLogEps));
    }
    return acc;
}

double entropy(const Distribution& p) {
    double acc = 0.0;
    for (double v : p.probs) acc -= v * std::log(v + kLogEps);
    return acc;
}

Vec64 matvec(const Mat& m, const Vec64& x) {
    if (x.size() != m.cols) throw ShapeError("matvec: dimension mismatch");
    Vec64 out(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) {
        out[r] = simd::dot(m.data.data() + r * m.cols, x.data(), m.cols);
    }
    return out;
}

// ---------------------------------------------------------------------------
// GradTape
// ---------------------------------------------------------------------------

Var GradTape::push(Node n) {
    n.grad.assign(n.value.size(), 0.0);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var GradTape::leaf(Vec64 value) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    return push(std::move(n));
}

Var GradTape::constant(Vec64 value) { return leaf(std::move(value)); }

Var GradTape::scalar_constant(double value) { return leaf(Vec64{value}); }

const Vec64& GradTape::value(Var v) const { return nodes_.at(v.id).value; }

double GradTape::scalar(Var v) const {
    const Vec64& val = value(v);
    if (val.size() != 1) throw ShapeError("scalar: node is not scalar");
    return val[0];
}

const Vec64& GradTape::grad(Var v) const { return nodes_.at(v.id).grad; }

bool GradTape::degenerate(Var v) const { return nodes_.at(v.id).flag; }

Var GradTape::add(Var a, Var b) {
    const Vec64& va = value(a);
    const Vec64& vb = value(b);
    if (va.size() != vb.size()) throw ShapeError("add: length mismatch");
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.value = va;
    simd::axpy(1.0, vb.data(), n.value.data(), vb.size());
    return push(std::move(n));
}

Var GradTape::sub(Var a, Var b) {
    const Vec64& va = value(a);
    const Vec64& vb = value(b);
    if (va.size() != vb.size()) throw ShapeError("sub: length mismatch");
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.value = va;
    simd::axpy(-1.0, vb.data(), n.value.data(), vb.size());
    return push(std::move(n));
}

Var GradTape::scale(Var a, double alpha) {
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.aux = alpha;
    n.value.resize(value(a).size());
    simd::scale(alpha, value(a).data(), n.value.data(), n.value.size());
    return push(std::move(n));
}

Var GradTape::matvec(const Mat& m, Var x) {
    Node n;
    n.op = Op::MatVec;
    n.a = x.id;
    n.mat = &m;
    n.value = rd::matvec(m, value(x));
    return push(std::move(n));
}

Var GradTape::normalize(Var a) {
    const Vec64& va = value(a);
    const double nrm = norm2(va);
    Node n;
    n.op = Op::Normalize;
    n.a = a.id;
    n.aux = nrm;
    if (nrm <= kNormEps) {
        n.value.assign(va.size(), 0.0);
        n.flag = true;
    } else {
        n.value.resize(va.size());
        simd::scale(1.0 / nrm, va.data(), n.value.data(), va.size());
    }
    return push(std::move(n));
}

Var GradTape::dot(Var a, Var b) {
    const Vec64& va = value(a);
    const Vec64& vb = value(b);
    if (va.size() != vb.size()) throw ShapeError("dot: length mismatch");
    Node n;
    n.op = Op::Dot;
    n.a = a.id;
    n.b = b.id;
    n.value = {simd::dot(va.data(), vb.data(), va.size())};
    return push(std::move(n));
}

Var GradTape::cosine(Var a, Var b) {
    const Vec64& va = value(a);
    const Vec64& vb = value(b);
    if (va.size() != vb.size()) throw ShapeError("cosine: length mismatch");
    const double na = norm2(va);
    const double nb = norm2(vb);
    const double d = simd::dot(va.data(), vb.data(), va.size());
    Node n;
    n.op = Op::Cosine;
    n.a = a.id;
    n.b = b.id;
    n.cache = {na, nb, d};
    n.flag = (na <= kNormEps && nb <= kNormEps);
    n.value = {std::clamp(d / (na * nb + kNormEps), -1.0, 1.0)};
    return push(std::move(n));
}

Var GradTape::softmax(Var logits, double temperature) {
    if (!(temperature > 0.0)) {
        throw ConfigError("softmax: temperature must be positive");
    }
    Node n;
    n.op = Op::Softmax;
    n.a = logits.id;
    n.aux = temperature;
    n.value = rd::softmax(value(logits), temperature).probs;
    return push(std::move(n));
}

Var GradTape::log_clamped(Var a) {
    const Vec64& va = value(a);
    Node n;
    n.op = Op::LogClamped;
    n.a = a.id;
    n.value.resize(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) {
        n.value[i] = std::log(std::max(va[i], kLogEps));
    }
    return push(std::move(n));
}

Var GradTape::hinge(Var x, double delta) {
    const Vec64& vx = value(x);
    Node n;
    n.op = Op::Hinge;
    n.a = x.id;
    n.aux = delta;
    n.value.resize(vx.size());
    for (std::size_t i = 0; i < vx.size(); ++i) {
        n.value[i] = std::max(0.0, vx[i] + delta);
    }
    return push(std::move(n));
}

Var GradTape::concat(std::span<const Var> scalars) {
    Node n;
    n.op = Op::Concat;
    n.value.reserve(scalars.size());
    for (Var v : scalars) {
        n.inputs.push_back(v.id);
        n.value.push_back(scalar(v));
    }
    return push(std::move(n));
}

Var GradTape::affine(std::span<const Var> scalars, std::span<const double> coeffs,
                     double bias) {
    if (scalars.size() != coeffs.size()) throw ShapeError("affine: arity mismatch");
    Node n;
    n.op = Op::Affine;
    n.aux = bias;
    double acc = bias;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        n.inputs.push_back(scalars[i].id);
        n.coeffs.push_back(coeffs[i]);
        acc += coeffs[i] * scalar(scalars[i]);
    }
    n.value = {acc};
    return push(std::move(n));
}

void GradTape::backstep(Node& n) {
    const Vec64& u = n.grad;
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add:
            simd::axpy(1.0, u.data(), nodes_[n.a].grad.data(), u.size());
            simd::axpy(1.0, u.data(), nodes_[n.b].grad.data(), u.size());
            break;
        case Op::Sub:
            simd::axpy(1.0, u.data(), nodes_[n.a].grad.data(), u.size());
            simd::axpy(-1.0, u.data(), nodes_[n.b].grad.data(), u.size());
            break;
        case Op::Scale:
            simd::axpy(n.aux, u.data(), nodes_[n.a].grad.data(), u.size());
            break;
        case Op::MatVec: {
            // grad_x += M^T u
            const Mat& m = *n.mat;
            Vec64& gx = nodes_[n.a].grad;
            for (std::size_t r = 0; r < m.rows; ++r) {
                simd::axpy(u[r], m.data.data() + r * m.cols, gx.data(), m.cols);
            }
            break;
        }
        case Op::Normalize: {
            if (n.flag) break;
            const double nrm = n.aux;
            const Vec64& y = n.value;
            const double uy = simd::dot(u.data(), y.data(), y.size());
            Vec64& gx = nodes_[n.a].grad;
            simd::axpy(1.0 / nrm, u.data(), gx.data(), u.size());
            simd::axpy(-uy / nrm, y.data(), gx.data(), y.size());
            break;
        }
        case Op::Dot: {
            const double g = u[0];
            const Vec64& va = nodes_[n.a].value;
            const Vec64& vb = nodes_[n.b].value;
            simd::axpy(g, vb.data(), nodes_[n.a].grad.data(), vb.size());
            simd::axpy(g, va.data(), nodes_[n.b].grad.data(), va.size());
            break;
        }
        case Op::Cosine: {
            const double na = n.cache[0];
            const double nb = n.cache[1];
            const double d = n.cache[2];
            if (na <= kNormEps || nb <= kNormEps) break;
            const double g = u[0];
            const double denom = na * nb + kNormEps;
            const Vec64& va = nodes_[n.a].value;
            const Vec64& vb = nodes_[n.b].value;
            // d/da = b/denom - d*nb*(a/na)/denom^2, symmetric for b
            simd::axpy(g / denom, vb.data(), nodes_[n.a].grad.data(), vb.size());
            simd::axpy(-g * d * nb / (na * denom * denom), va.data(),
                       nodes_[n.a].grad.data(), va.size());
            simd::axpy(g / denom, va.data(), nodes_[n.b].grad.data(), va.size());
            simd::axpy(-g * d * na / (nb * denom * denom), vb.data(),
                       nodes_[n.b].grad.data(), vb.size());
            break;
        }
        case Op::Softmax: {
            const Vec64& p = n.value;
            const double udotp = simd::dot(u.data(), p.data(), p.size());
            Vec64& gx = nodes_[n.a].grad;
            for (std::size_t i = 0; i < p.size(); ++i) {
                gx[i] += p[i] * (u[i] - udotp) / n.aux;
            }
            break;
        }
        case Op::LogClamped: {
            const Vec64& x = nodes_[n.a].value;
            Vec64& gx = nodes_[n.a].grad;
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (x[i] > kLogEps) gx[i] += u[i] / x[i];
            }
            break;
        }
        case Op::Hinge: {
            const Vec64& x = nodes_[n.a].value;
            Vec64& gx = nodes_[n.a].grad;
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (x[i] + n.aux > 0.0) gx[i] += u[i];
            }
            break;
        }
        case Op::Concat:
            for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                nodes_[n.inputs[i]].grad[0] += u[i];
            }
            break;
        case Op::Affine:
            for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                nodes_[n.inputs[i]].grad[0] += u[0] * n.coeffs[i];
            }
            break;
    }
}

void GradTape::backward(Var out) {
    Node& last = nodes_.at(out.id);
    if (last.value.size() != 1) throw ShapeError("backward: output is not scalar");
    last.grad[0] = 1.0;
    for (std::int32_t i = out.id; i >= 0; --i) backstep(nodes_[i]);
}

double check_gradients(const DiffFn& f, const Vec64& params, double step) {
    Vec64 analytic;
    f(params, &analytic);
    if (analytic.size() != params.size()) {
        throw ShapeError("check_gradients: gradient size mismatch");
    }
    double worst = 0.0;
    Vec64 probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        probe[i] = params[i] + step;
        const double fp = f(probe, nullptr);
        probe[i] = params[i] - step;
        const double fm = f(probe, nullptr);
        probe[i] = params[i];
        const double numeric = (fp - fm) / (2.0 * step);
        if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
            throw NumericError("check_gradients: non-finite value at coordinate " +
                               std::to_string(i));
        }
        const double rel =
            std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace rd
