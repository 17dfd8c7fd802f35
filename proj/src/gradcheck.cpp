#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "matching.hpp"

namespace cfmn {

namespace {

double scalar_eval(const CheckedOp& op, const std::vector<Tensor>& inputs, const Tensor& proj) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& in : inputs) vars.push_back(t.leaf(in, false));
    Var out = op(t, vars);
    Var loss = ops::weighted_sum(t, out, proj);
    return static_cast<double>(t.val(loss).data[0]);
}

}  // namespace

CheckReport grad_check(const std::string& op_name, const CheckedOp& op,
                       const std::vector<Tensor>& inputs, double eps, double tol,
                       uint64_t projection_seed) {
    CheckReport report;
    report.op_name = op_name;

    // probe once for the output shape, then fix the projection
    Tensor proj;
    {
        Tape t;
        std::vector<Var> vars;
        for (const Tensor& in : inputs) vars.push_back(t.leaf(in, false));
        Var out = op(t, vars);
        Rng prng(mix_u64(projection_seed, 0x70726f6aULL));
        proj = random_uniform(t.val(out).shape, prng);
    }

    // analytic gradients
    std::vector<Tensor> analytic;
    {
        Tape t;
        std::vector<Var> vars;
        for (const Tensor& in : inputs) vars.push_back(t.leaf(in, true));
        Var out = op(t, vars);
        Var loss = ops::weighted_sum(t, out, proj);
        t.backward(loss);
        for (Var v : vars) {
            const Tensor* g = t.grad_if_any(v);
            Tensor ga = g ? *g : Tensor(t.val(v).shape);
            ga.check_finite((op_name + " analytic gradient").c_str());
            analytic.push_back(std::move(ga));
        }
    }

    std::vector<Tensor> work = inputs;
    for (size_t i = 0; i < inputs.size(); ++i) {
        double max_diff = 0;
        double max_fd = 0;
        for (size_t j = 0; j < work[i].data.size(); ++j) {
            const real orig = work[i].data[j];
            work[i].data[j] = orig + static_cast<real>(eps);
            const double up = scalar_eval(op, work, proj);
            work[i].data[j] = orig - static_cast<real>(eps);
            const double dn = scalar_eval(op, work, proj);
            work[i].data[j] = orig;
            const double fd = (up - dn) / (2.0 * eps);
            if (!std::isfinite(fd))
                throw NumericError(op_name + ": non-finite finite-difference gradient");
            max_diff = std::max(max_diff,
                                std::abs(static_cast<double>(analytic[i].data[j]) - fd));
            max_fd = std::max(max_fd, std::abs(fd));
        }
        report.per_input_error.push_back(max_diff / std::max(1.0, max_fd));
    }
    report.max_error = report.per_input_error.empty()
                           ? 0.0
                           : *std::max_element(report.per_input_error.begin(),
                                               report.per_input_error.end());
    report.passed = report.max_error <= tol;
    return report;
}

namespace {

// values with pairwise gaps well above the FD step so maxpool/relu kinks
// stay out of the probe
Tensor separated_values(std::vector<int> shape, Rng& rng, real spread = real(0.01)) {
    Tensor t(std::move(shape));
    const long long n = t.numel();
    std::vector<int> order(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
    for (long long i = n - 1; i > 0; --i) {
        const int j = rng.uniform_int(0, static_cast<int>(i));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    for (long long i = 0; i < n; ++i)
        t.data[static_cast<size_t>(order[static_cast<size_t>(i)])] =
            static_cast<real>(i - n / 2) * spread + static_cast<real>(rng.uniform(-1e-3, 1e-3));
    return t;
}

Tensor away_from_zero(std::vector<int> shape, Rng& rng, real margin) {
    Tensor t = random_uniform(std::move(shape), rng);
    for (auto& v : t.data) v += v >= 0 ? margin : -margin;
    return t;
}

}  // namespace

std::vector<CheckReport> grad_check_round(uint64_t seed, double eps, double tol) {
    Rng rng(mix_u64(seed, 0x6772616421ULL));
    std::vector<CheckReport> out;
    auto run = [&](const std::string& name, const CheckedOp& op, std::vector<Tensor> inputs) {
        out.push_back(grad_check(name, op, inputs, eps, tol, mix_u64(seed, out.size())));
    };

    run("matmul",
        [](Tape& t, const std::vector<Var>& v) { return ops::matmul(t, v[0], v[1]); },
        {random_uniform({3, 4}, rng), random_uniform({4, 2}, rng)});

    run("transpose", [](Tape& t, const std::vector<Var>& v) { return ops::transpose(t, v[0]); },
        {random_uniform({3, 5}, rng)});

    run("row_softmax",
        [](Tape& t, const std::vector<Var>& v) { return ops::row_softmax(t, v[0]); },
        {random_uniform({4, 5}, rng, -3, 3)});

    run("conv2d",
        [](Tape& t, const std::vector<Var>& v) { return ops::conv2d(t, v[0], v[1], v[2], 1, 1); },
        {random_uniform({2, 5, 5}, rng), random_uniform({3, 2, 3, 3}, rng),
         random_uniform({3}, rng)});

    run("conv2d_stride2",
        [](Tape& t, const std::vector<Var>& v) { return ops::conv2d(t, v[0], v[1], v[2], 2, 1); },
        {random_uniform({2, 2, 7, 7}, rng), random_uniform({2, 2, 3, 3}, rng),
         random_uniform({2}, rng)});

    run("maxpool2d",
        [](Tape& t, const std::vector<Var>& v) { return ops::maxpool2d(t, v[0], 2, 2); },
        {separated_values({2, 6, 6}, rng)});

    {
        BatchNormState proto(3);
        run("batchnorm_train",
            [proto](Tape& t, const std::vector<Var>& v) {
                BatchNormState state = proto;  // fresh copy per evaluation
                return ops::batchnorm(t, v[0], v[1], v[2], state, BnMode::train);
            },
            {random_uniform({2, 3, 4, 4}, rng), random_uniform({3}, rng, real(0.5), real(1.5)),
             random_uniform({3}, rng)});
    }
    {
        BatchNormState state(3);
        state.running_mean = random_uniform({3}, rng);
        state.running_var = random_uniform({3}, rng, real(0.5), real(2));
        state.initialized = true;
        run("batchnorm_eval",
            [state](Tape& t, const std::vector<Var>& v) {
                BatchNormState s = state;
                return ops::batchnorm(t, v[0], v[1], v[2], s, BnMode::eval);
            },
            {random_uniform({2, 3, 4, 4}, rng), random_uniform({3}, rng, real(0.5), real(1.5)),
             random_uniform({3}, rng)});
    }

    run("relu", [](Tape& t, const std::vector<Var>& v) { return ops::relu(t, v[0]); },
        {away_from_zero({3, 4, 4}, rng, static_cast<real>(10 * eps))});

    run("sigmoid", [](Tape& t, const std::vector<Var>& v) { return ops::sigmoid(t, v[0]); },
        {random_uniform({2, 7}, rng, -3, 3)});

    run("fully_connected",
        [](Tape& t, const std::vector<Var>& v) {
            return ops::fully_connected(t, v[0], v[1], v[2]);
        },
        {random_uniform({5}, rng), random_uniform({3, 5}, rng), random_uniform({3}, rng)});

    run("fully_connected_batched",
        [](Tape& t, const std::vector<Var>& v) {
            return ops::fully_connected(t, v[0], v[1], v[2]);
        },
        {random_uniform({2, 5}, rng), random_uniform({3, 5}, rng), random_uniform({3}, rng)});

    run("concat_channels",
        [](Tape& t, const std::vector<Var>& v) { return ops::concat_channels(t, v[0], v[1]); },
        {random_uniform({2, 3, 3}, rng), random_uniform({4, 3, 3}, rng)});

    run("elementwise_mean",
        [](Tape& t, const std::vector<Var>& v) { return ops::elementwise_mean(t, v); },
        {random_uniform({2, 3, 3}, rng), random_uniform({2, 3, 3}, rng),
         random_uniform({2, 3, 3}, rng)});

    run("stack_slice",
        [](Tape& t, const std::vector<Var>& v) {
            Var s = ops::stack_batch(t, v);
            return ops::slice_batch(t, s, 1);
        },
        {random_uniform({2, 3, 3}, rng), random_uniform({2, 3, 3}, rng)});

    run("spatial_flatten",
        [](Tape& t, const std::vector<Var>& v) { return ops::spatial_flatten(t, v[0]); },
        {random_uniform({3, 2, 4}, rng)});

    run("spatial_unflatten",
        [](Tape& t, const std::vector<Var>& v) { return ops::spatial_unflatten(t, v[0], 2, 4); },
        {random_uniform({8, 3}, rng)});

    run("flatten", [](Tape& t, const std::vector<Var>& v) { return ops::flatten(t, v[0]); },
        {random_uniform({2, 3, 4}, rng)});

    run("blend",
        [](Tape& t, const std::vector<Var>& v) { return ops::blend(t, v[0], v[1], real(0.3)); },
        {random_uniform({2, 3, 3}, rng), random_uniform({2, 3, 3}, rng)});

    {
        Tensor target = random_uniform({6}, rng);
        run("mse_of_scalars",
            [target](Tape& t, const std::vector<Var>& v) {
                Var joined = ops::concat_scalars(t, v);
                return ops::mse(t, joined, target);
            },
            {Tensor::scalar(static_cast<real>(rng.uniform(0, 1))),
             Tensor::scalar(static_cast<real>(rng.uniform(0, 1))),
             Tensor::scalar(static_cast<real>(rng.uniform(0, 1))),
             Tensor::scalar(static_cast<real>(rng.uniform(0, 1))),
             Tensor::scalar(static_cast<real>(rng.uniform(0, 1))),
             Tensor::scalar(static_cast<real>(rng.uniform(0, 1)))});
    }

    // full matching block, Eqs. 1-4 end to end, params included as inputs
    {
        MatchBlockConfig cfg;
        cfg.c_in = 8;
        cfg.c_m = 6;
        cfg.lambda = real(0.5);
        run("matching_block",
            [cfg](Tape& t, const std::vector<Var>& v) {
                MatchVars p;
                p.mu_w = v[2];
                p.mu_b = v[3];
                p.phi_w = v[4];
                p.phi_b = v[5];
                p.omega_w = v[6];
                p.omega_b = v[7];
                p.restore_w = v[8];
                p.restore_b = v[9];
                return apply_matching_op(t, v[0], v[1], p, cfg, "gradcheck");
            },
            {random_uniform({8, 4, 4}, rng), random_uniform({8, 4, 4}, rng),
             random_uniform({6, 8}, rng), random_uniform({6}, rng), random_uniform({6, 8}, rng),
             random_uniform({6}, rng), random_uniform({6, 8}, rng), random_uniform({6}, rng),
             random_uniform({8, 6}, rng), random_uniform({8}, rng)});
    }

    return out;
}

std::vector<CheckReport> grad_check_battery(uint64_t seed, int rounds, double eps, double tol) {
    std::vector<CheckReport> all;
    for (int r = 0; r < rounds; ++r) {
        auto part = grad_check_round(mix_u64(seed, static_cast<uint64_t>(r)), eps, tol);
        all.insert(all.end(), part.begin(), part.end());
    }
    return all;
}

}  // namespace cfmn
