#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rd/numerics.hpp"
#include "rd/student.hpp"

namespace rd {

// One training sample: frozen image feature, stored (densified) teacher
// label, its information weight and pseudo-hard label.
struct BatchItem {
    Vec64 feature;        // f(x_i), unit norm
    Distribution target;  // t_i
    double weight = 0.0;  // w_i in [0,1]
    std::uint32_t pseudo_label = 0;
};

struct LossConfig {
    double lambda_neg = 1.0;
    double lambda_diff1 = 0.5;
    double lambda_diff2 = 0.5;
    double alpha = 1.0;
    double delta = 0.1;
    double tau = 0.07;  // student temperature

    void validate() const;
};

struct LossReport {
    double pos = 0.0;
    double neg = 0.0;
    double diff1 = 0.0;
    double diff2 = 0.0;
    double total = 0.0;
    Vec64 grad;  // over [positive contexts | negative contexts]
};

// Per-class positive-minus-negative text embedding differences.
struct DiffSet {
    std::vector<Vec64> raw;   // D1_c, unnormalized
    std::vector<Vec64> unit;  // D1_c / ||D1_c||, zero when degenerate
    std::vector<bool> degenerate;
};

DiffSet first_order_diffs(const StudentState& state);

// D2 = D1_c - D1_c' over the raw first-order vectors, then unit-normalized.
Vec64 second_order_diff(const DiffSet& diffs, std::uint32_t c, std::uint32_t c_prime,
                        bool* degenerate = nullptr);

// Individual terms; grad (when requested) spans all trainable parameters,
// with zeros for parameters the term does not touch.
double loss_pos(const StudentState& state, std::span<const BatchItem> batch,
                double tau, Vec64* grad = nullptr);
double loss_neg(const StudentState& state, std::span<const BatchItem> batch,
                double tau, Vec64* grad = nullptr);
double loss_diff1(const StudentState& state, std::span<const BatchItem> batch,
                  double alpha, Vec64* grad = nullptr);
double loss_diff2(const StudentState& state, std::span<const BatchItem> batch,
                  double delta, Vec64* grad = nullptr);

LossReport loss_total(const StudentState& state, std::span<const BatchItem> batch,
                      const LossConfig& cfg);

struct HardExample {
    Vec64 feature;
    std::uint32_t label = 0;
};

// Plain cross-entropy over the positive prompt; the comparison baseline.
double loss_native_ce(const StudentState& state, std::span<const HardExample> batch,
                      double tau, Vec64* grad = nullptr);

namespace detail {

// Tape-level builders shared by the public losses and the hand-value test
// fixtures (which feed synthetic first-order diffs directly).
Var diff1_term(GradTape& tape, std::span<const Var> d1_raw,
               std::span<const BatchItem> batch, double alpha);
Var diff2_term(GradTape& tape, std::span<const Var> d1_raw,
               std::span<const BatchItem> batch, double delta);

}  // namespace detail

}  // namespace rd
