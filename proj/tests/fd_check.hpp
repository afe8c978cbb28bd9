#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "enggraph/diffcore.hpp"

namespace fdcheck {

using enggraph::Tape;
using enggraph::Tensor;
using enggraph::Var;

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct Report {
    double max_rel = 0.0;
    double max_abs = 0.0;
    std::size_t checked = 0;
    std::string worst;
};

inline Tensor random_tensor(enggraph::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.values()) v = u(rng);
    return t;
}

// Entries pushed away from zero so kinks are at least `gap` away.
inline Tensor random_away_from_zero(enggraph::Shape shape, std::mt19937_64& rng, double gap = 0.05) {
    Tensor t = random_tensor(std::move(shape), rng);
    for (double& v : t.values()) v = v >= 0 ? v + gap : v - gap;
    return t;
}

inline double evaluate(const Builder& f, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    return f(tape, vars).value()[0];
}

// Compares reverse-mode gradients with central differences on every input entry.
inline Report check(const Builder& f, std::vector<Tensor> inputs, double step = 1e-5, double floor = 1e-8) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    Var loss = f(tape, vars);
    tape.backward(loss);
    Report rep;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor analytic = vars[k].grad();
        if (analytic.size() != inputs[k].size()) analytic = Tensor(inputs[k].shape());
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double x0 = inputs[k][i];
            inputs[k][i] = x0 + step;
            const double up = evaluate(f, inputs);
            inputs[k][i] = x0 - step;
            const double dn = evaluate(f, inputs);
            inputs[k][i] = x0;
            const double numeric = (up - dn) / (2.0 * step);
            const double a = analytic[i];
            const double abs_err = std::abs(a - numeric);
            rep.max_abs = std::max(rep.max_abs, abs_err);
            ++rep.checked;
            if (std::abs(a) <= floor) continue;
            const double rel = abs_err / std::max(std::abs(a), std::abs(numeric));
            if (rel > rep.max_rel) {
                rep.max_rel = rel;
                rep.worst = "input " + std::to_string(k) + " entry " + std::to_string(i) + ": analytic " +
                            std::to_string(a) + " numeric " + std::to_string(numeric);
            }
        }
    }
    return rep;
}

// Scalar probe of a tensor output: sum(y * w) with fixed random weights.
inline Var probe(Tape& tape, const Var& y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor w = random_tensor(y.value().shape(), rng, 0.5, 1.5);
    return enggraph::ops::reduce_sum(enggraph::ops::mul(y, tape.constant(std::move(w))));
}

}  // namespace fdcheck
