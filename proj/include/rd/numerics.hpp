#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "rd/errors.hpp"

namespace rd {

using Vec64 = std::vector<double>;

inline constexpr double kLogEps = 1e-8;    // log/entropy clamp
inline constexpr double kNormEps = 1e-12;  // norm degeneracy guard

struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec64 data;  // row-major

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// Class-probability vector. Entries in [0,1] summing to 1 within 1e-9.
struct Distribution {
    Vec64 probs;

    std::size_t class_count() const { return probs.size(); }
    bool valid(double tol = 1e-9) const;
    std::size_t argmax() const;
};

Distribution softmax(const Vec64& logits, double temperature);
double cosine(const Vec64& a, const Vec64& b, bool* degenerate = nullptr);
Vec64 l2_normalize(const Vec64& a, bool* degenerate = nullptr);
double kl_divergence(const Distribution& t, const Distribution& p);
double entropy(const Distribution& p);
double norm2(const Vec64& a);
Vec64 matvec(const Mat& m, const Vec64& x);

// ---------------------------------------------------------------------------
// Reverse-mode tape over a fixed primitive set. Values are dense f64
// vectors; scalars are length-1 vectors. Frozen matrices (encoder
// weights) are captured by pointer and never receive gradients.
// ---------------------------------------------------------------------------

struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

class GradTape {
public:
    // requires_grad only affects which leaves are worth reading gradients
    // from; constants participate in backward but their buffers are ignored.
    Var leaf(Vec64 value);
    Var constant(Vec64 value);
    Var scalar_constant(double value);

    const Vec64& value(Var v) const;
    double scalar(Var v) const;
    const Vec64& grad(Var v) const;

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double alpha);
    Var matvec(const Mat& m, Var x);  // m must outlive the tape
    Var normalize(Var a);             // zero output + flag when ||a|| <= kNormEps
    Var dot(Var a, Var b);
    Var cosine(Var a, Var b);
    Var softmax(Var logits, double temperature);
    Var log_clamped(Var a);                   // elementwise log(max(x, kLogEps))
    Var hinge(Var x, double delta);           // elementwise max(0, x + delta)
    Var concat(std::span<const Var> scalars);
    // sum_i coeffs[i] * scalars[i] + bias
    Var affine(std::span<const Var> scalars, std::span<const double> coeffs, double bias);

    bool degenerate(Var v) const;

    // Seeds d(out)/d(out)=1 and sweeps the tape in reverse. out must be scalar.
    void backward(Var out);

    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op : std::uint8_t {
        Leaf, Add, Sub, Scale, MatVec, Normalize, Dot, Cosine,
        Softmax, LogClamped, Hinge, Concat, Affine,
    };

    struct Node {
        Op op;
        Vec64 value;
        Vec64 grad;
        std::int32_t a = -1, b = -1;
        double aux = 0.0;       // scale factor / temperature / delta / bias
        const Mat* mat = nullptr;
        std::vector<std::int32_t> inputs;  // Concat/Affine
        std::vector<double> coeffs;        // Affine
        Vec64 cache;                       // op-specific saved forward state
        bool flag = false;                 // degeneracy
    };

    Var push(Node n);
    void backstep(Node& n);

    std::vector<Node> nodes_;
};

// Compares f's analytic gradient at params against central finite
// differences of its value. f fills *grad when grad != nullptr.
// Returns the max over coordinates of |analytic-numeric|/max(1e-8,|numeric|).
using DiffFn = std::function<double(const Vec64& params, Vec64* grad)>;
double check_gradients(const DiffFn& f, const Vec64& params, double step);

}  // namespace rd
