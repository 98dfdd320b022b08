// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <type_traits>

#include "structgen/core/grid.hpp"
#include "structgen/core/rng.hpp"

namespace structgen::flow {

/// One training draw on the linear path x_t = (1 - t) x_0 + t x_1.
template <class T>
struct FlowSample {
    Grid<T> x0, x1, xt;
    double t = 0.0;
};

struct SamplerConfig {
    int steps = 32;
    std::uint64_t seed = 0;
    std::string scheme = "euler";

    void validate() const {
        require(steps >= 1, ErrorKind::config, "sampler.steps must be >= 1");
        require(scheme == "euler", ErrorKind::config, "sampler.scheme must be 'euler'");
    }
};

template <class T>
Grid<T> sample_path(const Grid<T>& x0, const Grid<T>& x1, double t) {
    require_same_shape(x0, x1, "sample_path");
    require(std::isfinite(t) && t >= 0.0 && t <= 1.0, ErrorKind::domain, "t must lie in [0, 1]");
    // Endpoints are returned verbatim so they are exact identities.
    if (t == 0.0) return x0;
    if (t == 1.0) return x1;
    Grid<T> out(x0.height, x0.width, x0.channels);
    const T a = static_cast<T>(1.0 - t), b = static_cast<T>(t);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a * x0.data[i] + b * x1.data[i];
    return out;
}

/// Target velocity of the linear path.
template <class T>
Grid<T> target_velocity(const Grid<T>& x0, const Grid<T>& x1) {
    require_same_shape(x0, x1, "target_velocity");
    Grid<T> out(x0.height, x0.width, x0.channels);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x1.data[i] - x0.data[i];
    return out;
}

/// Accumulator type: double, or T when T is wider.
template <class T>
using Acc = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

/// Mean over elements of (v_pred - (x_1 - x_0))^2.
template <class T>
Acc<T> fm_loss(const Grid<T>& v_pred, const Grid<T>& x0, const Grid<T>& x1) {
    require_same_shape(v_pred, x0, "fm_loss");
    require_same_shape(x0, x1, "fm_loss");
    require(!v_pred.empty(), ErrorKind::shape, "fm_loss on empty grids");
    using A = Acc<T>;
    A acc = 0;
    for (std::size_t i = 0; i < v_pred.size(); ++i) {
        const A r = static_cast<A>(v_pred.data[i]) - (static_cast<A>(x1.data[i]) - static_cast<A>(x0.data[i]));
        acc += r * r;
    }
    return acc / static_cast<A>(v_pred.size());
}

/// dL/dv_pred of fm_loss.
template <class T>
Grid<T> fm_loss_grad(const Grid<T>& v_pred, const Grid<T>& x0, const Grid<T>& x1) {
    require_same_shape(v_pred, x0, "fm_loss_grad");
    require_same_shape(x0, x1, "fm_loss_grad");
    Grid<T> g(v_pred.height, v_pred.width, v_pred.channels);
    const T k = static_cast<T>(2.0 / static_cast<double>(v_pred.size()));
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = k * (v_pred.data[i] - (x1.data[i] - x0.data[i]));
    return g;
}

/// Standard normal grid; same seed, same draw.
template <class T = double>
Grid<T> draw_prior(int height, int width, int channels, std::uint64_t seed) {
    Rng rng = make_rng(seed, 7);
    std::normal_distribution<double> nd(0.0, 1.0);
    Grid<T> g(height, width, channels);
    for (auto& v : g.data) v = static_cast<T>(nd(rng));
    return g;
}

template <class T>
using VelocityFn = std::function<Grid<T>(const Grid<T>& x, double t)>;

/// Euler integration of dx/dt = v(x, t) from t = 0 to 1 on a uniform grid, starting at z_0.
template <class T>
Grid<T> integrate(const VelocityFn<T>& model, Grid<T> x, int steps) {
    require(steps >= 1, ErrorKind::config, "sampler.steps must be >= 1");
    const double dt = 1.0 / steps;
    for (int i = 0; i < steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const Grid<T> v = model(x, t);
        if (!v.same_shape(x))
            fail(ErrorKind::integration, "velocity shape " + std::to_string(v.height) + "x" + std::to_string(v.width) + "x" +
                                             std::to_string(v.channels) + " does not match state at step " + std::to_string(i));
        if (!all_finite(v)) fail(ErrorKind::integration, "non-finite velocity at step " + std::to_string(i));
        for (std::size_t k = 0; k < x.size(); ++k) x.data[k] += static_cast<T>(dt) * v.data[k];
    }
    return x;
}

/// Draws z_0 from the prior with cfg.seed and integrates the velocity field. Conditions are bound into
/// the callable by the caller.
template <class T>
Grid<T> sample_ode(const VelocityFn<T>& model, int height, int width, int channels, const SamplerConfig& cfg) {
    cfg.validate();
    return integrate(model, draw_prior<T>(height, width, channels, cfg.seed), cfg.steps);
}

}  // namespace structgen::flow
