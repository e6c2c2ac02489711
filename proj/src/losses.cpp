#include "rd/losses.hpp"

#include <cmath>
#include <functional>
#include <map>

namespace rd {

void LossConfig::validate() const {
    if (lambda_neg < 0 || lambda_diff1 < 0 || lambda_diff2 < 0 || alpha < 0 ||
        delta < 0 || !(delta < 1.0)) {
        throw ConfigError("loss config: weights must be nonnegative, delta in [0,1)");
    }
    if (!(tau > 0.0)) throw ConfigError("loss config: tau must be positive");
    if (!std::isfinite(lambda_neg + lambda_diff1 + lambda_diff2 + alpha + delta + tau)) {
        throw ConfigError("loss config: non-finite value");
    }
}

namespace {

// Rebuilds the differentiable part of the student forward pass on a tape.
// Leaves are the 2*L context vectors; everything else is frozen.
class LossGraph {
public:
    explicit LossGraph(const StudentState& state) : state_(state) {
        for (const Vec64& v : state.positive().context) ctx_pos_.push_back(tape.leaf(v));
        for (const Vec64& v : state.negative().context) ctx_neg_.push_back(tape.leaf(v));
        emb_pos_.assign(state.class_count(), Var{});
        emb_neg_.assign(state.class_count(), Var{});
    }

    GradTape tape;

    Var embedding(PromptSpace space, std::uint32_t c) {
        auto& cache = space == PromptSpace::Positive ? emb_pos_ : emb_neg_;
        if (cache[c].valid()) return cache[c];
        const auto& ctx = space == PromptSpace::Positive ? ctx_pos_ : ctx_neg_;
        Var acc = tape.constant(state_.class_token(c));
        for (Var v : ctx) acc = tape.add(acc, v);
        acc = tape.scale(acc, 1.0 / (ctx.size() + 1));
        cache[c] = tape.normalize(tape.matvec(state_.text_proj(), acc));
        return cache[c];
    }

    Var diff1_raw(std::uint32_t c) {
        if (d1_.empty()) d1_.assign(state_.class_count(), Var{});
        if (!d1_[c].valid()) {
            d1_[c] = tape.sub(embedding(PromptSpace::Positive, c),
                              embedding(PromptSpace::Negative, c));
        }
        return d1_[c];
    }

    std::vector<Var> all_diff1_raw() {
        std::vector<Var> out;
        for (std::uint32_t c = 0; c < state_.class_count(); ++c) {
            out.push_back(diff1_raw(c));
        }
        return out;
    }

    // softmax over classes of cos(feature, g(V(l_c)))/tau
    Var prediction(PromptSpace space, const Vec64& feature, double tau) {
        Var feat = tape.constant(feature);
        std::vector<Var> sims;
        for (std::uint32_t c = 0; c < state_.class_count(); ++c) {
            sims.push_back(tape.cosine(feat, embedding(space, c)));
        }
        return tape.softmax(tape.concat(sims), tau);
    }

    // Gradient over [positive contexts | negative contexts].
    Vec64 context_grad() const {
        Vec64 out;
        out.reserve(state_.param_count());
        for (Var v : ctx_pos_) {
            const Vec64& g = tape.grad(v);
            out.insert(out.end(), g.begin(), g.end());
        }
        for (Var v : ctx_neg_) {
            const Vec64& g = tape.grad(v);
            out.insert(out.end(), g.begin(), g.end());
        }
        return out;
    }

private:
    const StudentState& state_;
    std::vector<Var> ctx_pos_, ctx_neg_;
    std::vector<Var> emb_pos_, emb_neg_, d1_;
};

// sum_i w_i * KL(t_i || p_i)
Var pos_term(LossGraph& g, std::span<const BatchItem> batch, double tau) {
    std::vector<Var> dots;
    std::vector<double> coeffs;
    double bias = 0.0;
    for (const BatchItem& item : batch) {
        Var p = g.prediction(PromptSpace::Positive, item.feature, tau);
        Var t = g.tape.constant(item.target.probs);
        dots.push_back(g.tape.dot(t, g.tape.log_clamped(p)));
        coeffs.push_back(-item.weight);
        for (double tv : item.target.probs) {
            if (tv > 0.0) bias += item.weight * tv * std::log(tv);
        }
    }
    return g.tape.affine(dots, coeffs, bias);
}

// sum_i (1-w_i) * KL(uniform || pbar_i)
Var neg_term(LossGraph& g, std::span<const BatchItem> batch, double tau,
             std::uint32_t class_count) {
    const double c = static_cast<double>(class_count);
    const Vec64 uniform(class_count, 1.0 / c);
    std::vector<Var> dots;
    std::vector<double> coeffs;
    double bias = 0.0;
    for (const BatchItem& item : batch) {
        Var p = g.prediction(PromptSpace::Negative, item.feature, tau);
        Var u = g.tape.constant(uniform);
        dots.push_back(g.tape.dot(u, g.tape.log_clamped(p)));
        coeffs.push_back(-(1.0 - item.weight));
        bias += (1.0 - item.weight) * (-std::log(c));
    }
    return g.tape.affine(dots, coeffs, bias);
}

}  // namespace

namespace detail {

Var diff1_term(GradTape& tape, std::span<const Var> d1_raw,
               std::span<const BatchItem> batch, double alpha) {
    std::vector<Var> hats(d1_raw.size());
    std::vector<Var> sims;
    std::vector<double> weights, alphas;
    for (const BatchItem& item : batch) {
        Var& hat = hats[item.pseudo_label];
        if (!hat.valid()) hat = tape.normalize(d1_raw[item.pseudo_label]);
        if (tape.degenerate(hat)) continue;  // skipped, N adjusted
        sims.push_back(tape.cosine(tape.constant(item.feature), hat));
        weights.push_back(item.weight);
        alphas.push_back(alpha);
    }
    if (sims.empty()) return tape.scalar_constant(0.0);
    const double n = static_cast<double>(sims.size());
    // -(1/N) sum [(1-w)S + alpha*w*(1-S)] = affine in the S_i
    std::vector<double> coeffs;
    double bias = 0.0;
    for (std::size_t i = 0; i < sims.size(); ++i) {
        coeffs.push_back(-(1.0 - weights[i] - alphas[i] * weights[i]) / n);
        bias += -(alphas[i] * weights[i]) / n;
    }
    return tape.affine(sims, coeffs, bias);
}

Var diff2_term(GradTape& tape, std::span<const Var> d1_raw,
               std::span<const BatchItem> batch, double delta) {
    const std::size_t n = batch.size();
    if (n < 2) return tape.scalar_constant(0.0);
    std::map<std::pair<std::uint32_t, std::uint32_t>, Var> hat_cache;
    const auto hat2 = [&](std::uint32_t c, std::uint32_t cp) {
        auto it = hat_cache.find({c, cp});
        if (it != hat_cache.end()) return it->second;
        Var h = tape.normalize(tape.sub(d1_raw[c], d1_raw[cp]));
        hat_cache.emplace(std::make_pair(c, cp), h);
        return h;
    };
    std::vector<Var> feats(n, Var{});
    std::vector<Var> hinges;
    std::vector<double> coeffs;
    const double norm = 1.0 / (static_cast<double>(n) * (n - 1));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (batch[i].pseudo_label == batch[j].pseudo_label) continue;
            const double pair_w = batch[i].weight * batch[j].weight;
            if (pair_w == 0.0) continue;
            Var h = hat2(batch[i].pseudo_label, batch[j].pseudo_label);
            if (tape.degenerate(h)) continue;
            if (!feats[i].valid()) feats[i] = tape.constant(batch[i].feature);
            hinges.push_back(tape.hinge(tape.cosine(feats[i], h), delta));
            coeffs.push_back(pair_w * norm);
        }
    }
    if (hinges.empty()) return tape.scalar_constant(0.0);
    return tape.affine(hinges, coeffs, 0.0);
}

}  // namespace detail

DiffSet first_order_diffs(const StudentState& state) {
    DiffSet out;
    for (std::uint32_t c = 0; c < state.class_count(); ++c) {
        Vec64 d = state.text_embedding(PromptSpace::Positive, c);
        const Vec64 neg = state.text_embedding(PromptSpace::Negative, c);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= neg[i];
        bool degenerate = false;
        out.unit.push_back(l2_normalize(d, &degenerate));
        out.raw.push_back(std::move(d));
        out.degenerate.push_back(degenerate);
    }
    return out;
}

Vec64 second_order_diff(const DiffSet& diffs, std::uint32_t c, std::uint32_t c_prime,
                        bool* degenerate) {
    if (c == c_prime) throw ConfigError("second_order_diff: classes must differ");
    Vec64 d = diffs.raw.at(c);
    const Vec64& other = diffs.raw.at(c_prime);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= other[i];
    return l2_normalize(d, degenerate);
}

namespace {

double run_single_term(const StudentState& state, Vec64* grad,
                       const std::function<Var(LossGraph&)>& build) {
    LossGraph g(state);
    Var out = build(g);
    if (grad) {
        g.tape.backward(out);
        *grad = g.context_grad();
    }
    return g.tape.scalar(out);
}

}  // namespace

double loss_pos(const StudentState& state, std::span<const BatchItem> batch,
                double tau, Vec64* grad) {
    if (batch.empty()) throw ConfigError("loss_pos: empty batch");
    return run_single_term(state, grad,
                           [&](LossGraph& g) { return pos_term(g, batch, tau); });
}

double loss_neg(const StudentState& state, std::span<const BatchItem> batch,
                double tau, Vec64* grad) {
    if (batch.empty()) throw ConfigError("loss_neg: empty batch");
    return run_single_term(state, grad, [&](LossGraph& g) {
        return neg_term(g, batch, tau, state.class_count());
    });
}

double loss_diff1(const StudentState& state, std::span<const BatchItem> batch,
                  double alpha, Vec64* grad) {
    if (batch.empty()) throw ConfigError("loss_diff1: empty batch");
    return run_single_term(state, grad, [&](LossGraph& g) {
        auto d1 = g.all_diff1_raw();
        return detail::diff1_term(g.tape, d1, batch, alpha);
    });
}

double loss_diff2(const StudentState& state, std::span<const BatchItem> batch,
                  double delta, Vec64* grad) {
    return run_single_term(state, grad, [&](LossGraph& g) {
        auto d1 = g.all_diff1_raw();
        return detail::diff2_term(g.tape, d1, batch, delta);
    });
}

LossReport loss_total(const StudentState& state, std::span<const BatchItem> batch,
                      const LossConfig& cfg) {
    if (batch.empty()) throw ConfigError("loss_total: empty batch");
    cfg.validate();
    LossGraph g(state);
    Var pos = pos_term(g, batch, cfg.tau);
    Var neg = neg_term(g, batch, cfg.tau, state.class_count());
    auto d1 = g.all_diff1_raw();
    Var diff1 = detail::diff1_term(g.tape, d1, batch, cfg.alpha);
    Var diff2 = detail::diff2_term(g.tape, d1, batch, cfg.delta);
    const std::vector<Var> parts = {pos, neg, diff1, diff2};
    const std::vector<double> weights = {1.0, cfg.lambda_neg, cfg.lambda_diff1,
                                         cfg.lambda_diff2};
    Var total = g.tape.affine(parts, weights, 0.0);
    g.tape.backward(total);

    LossReport r;
    r.pos = g.tape.scalar(pos);
    r.neg = g.tape.scalar(neg);
    r.diff1 = g.tape.scalar(diff1);
    r.diff2 = g.tape.scalar(diff2);
    r.total = g.tape.scalar(total);
    r.grad = g.context_grad();
    return r;
}

double loss_native_ce(const StudentState& state, std::span<const HardExample> batch,
                      double tau, Vec64* grad) {
    if (batch.empty()) throw ConfigError("loss_native_ce: empty batch");
    for (const HardExample& ex : batch) {
        if (ex.label >= state.class_count()) {
            throw ConfigError("loss_native_ce: label out of range");
        }
    }
    return run_single_term(state, grad, [&](LossGraph& g) {
        std::vector<Var> dots;
        std::vector<double> coeffs;
        for (const HardExample& ex : batch) {
            Var p = g.prediction(PromptSpace::Positive, ex.feature, tau);
            Vec64 onehot(state.class_count(), 0.0);
            onehot[ex.label] = 1.0;
            dots.push_back(g.tape.dot(g.tape.constant(onehot), g.tape.log_clamped(p)));
            coeffs.push_back(-1.0 / static_cast<double>(batch.size()));
        }
        return g.tape.affine(dots, coeffs, 0.0);
    });
}

}  // namespace rd
