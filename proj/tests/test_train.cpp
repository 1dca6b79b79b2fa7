#include "helpers.hpp"

#include "trvae/error.hpp"
#include "trvae/train.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace trvae;

namespace {

TrainConfig quick_train(std::uint64_t seed, std::size_t epochs) {
    TrainConfig t;
    t.seed = seed;
    t.epochs = epochs;
    t.batch_size = 64;
    t.learning_rate = 2e-3;
    return t;
}

ModelConfig small_model(std::size_t p) {
    ModelConfig c;
    c.input_dim = p;
    c.encoder_hidden = {32};
    c.z_dim = 4;
    c.g1_dim = 16;
    c.g2_hidden = {32};
    return c;
}

Dataset small_benchmark(std::uint64_t seed) {
    SyntheticSpec s;
    s.domain_count = 2;
    s.dims = 12;
    s.samples_per_cell = 60;
    s.seed = seed;
    Dataset d = synth_shift(s).first;
    return Standardizer::fit(d.x).apply(d);
}

double epoch_mean(const LossTrace& trace, std::size_t epoch, double LossRecord::*field) {
    double total = 0.0;
    std::size_t n = 0;
    for (const LossRecord& r : trace) {
        if (r.epoch == epoch) {
            total += r.*field;
            ++n;
        }
    }
    return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig t;
    CHECK_NOTHROW(t.validate());
    t.batch_size = 1;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.learning_rate = 0.0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.adam_betas = {0.9, 1.0};
    CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
    const std::vector<Tensor> params{Tensor::matrix({{1.0, -2.0}}), Tensor::matrix({{0.5}})};
    const std::vector<Tensor> zeros{Tensor::zeros(1, 2), Tensor::zeros(1, 1)};
    AdamState state = AdamState::fresh(params);
    std::vector<Tensor> current = params;
    for (int i = 0; i < 5; ++i) {
        auto [next, next_state] = adam_step(current, zeros, state, TrainConfig{});
        current = std::move(next);
        state = std::move(next_state);
    }
    CHECK(current == params);
    CHECK(state.step == 5);
}

TEST_CASE("adam first step moves by about the learning rate") {
    const TrainConfig cfg;
    for (double g : {3.0, -0.02, 1e-3}) {
        const std::vector<Tensor> params{Tensor::matrix({{0.7}})};
        const std::vector<Tensor> grads{Tensor::matrix({{g}})};
        const auto [next, state] = adam_step(params, grads, AdamState::fresh(params), cfg);
        const double delta = next[0].item() - 0.7;
        // m_hat = g, v_hat = g^2, so delta = -lr * g / (|g| + eps).
        const double expected = -cfg.learning_rate * g / (std::abs(g) + cfg.adam_epsilon);
        CHECK(delta == doctest::Approx(expected).epsilon(1e-9));
        CHECK(std::abs(std::abs(delta) - cfg.learning_rate) < 1e-7);
    }
}

TEST_CASE("adam treats entries independently") {
    const std::vector<Tensor> params{Tensor::matrix({{0.1, 5.0, -3.0}})};
    const std::vector<Tensor> grads{Tensor::matrix({{0.4, 0.4, -1.0}})};
    const auto [next, state] = adam_step(params, grads, AdamState::fresh(params), TrainConfig{});
    CHECK(next[0](0, 0) - 0.1 == doctest::Approx(next[0](0, 1) - 5.0).epsilon(1e-12));
}

TEST_CASE("stratified batches") {
    std::vector<int> conditions;
    for (int i = 0; i < 40; ++i) {
        conditions.push_back(i % 2);
    }
    SplitMix64 rng(3);
    const auto batches = make_batches(conditions, 8, rng);
    CHECK(batches.size() == 5);
    for (const auto& b : batches) {
        const auto ones = std::count_if(b.begin(), b.end(), [&](std::size_t r) { return conditions[r] == 1; });
        CHECK(b.size() == 8);
        CHECK(ones == 4);
    }

    SplitMix64 again(3);
    CHECK(make_batches(conditions, 8, again) == batches);
    CHECK_THROWS_AS(make_batches(conditions, 41, again), ContractError);
}

TEST_CASE("batches partition the index set") {
    SplitMix64 rng(77);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 5 + rng.below(200);
        const int k = 1 + static_cast<int>(rng.below(4));
        std::vector<int> conditions(n);
        for (int& c : conditions) {
            c = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        }
        const std::size_t bs = 2 + rng.below(n - 1);
        const auto batches = make_batches(conditions, std::min(bs, n), rng);
        std::vector<std::size_t> all;
        std::size_t smallest = n;
        std::size_t largest = 0;
        for (const auto& b : batches) {
            all.insert(all.end(), b.begin(), b.end());
            smallest = std::min(smallest, b.size());
            largest = std::max(largest, b.size());
        }
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expected(n);
        for (std::size_t i = 0; i < n; ++i) {
            expected[i] = i;
        }
        CHECK(all == expected);
        CHECK(largest - smallest <= 1);
        CHECK(batches.size() == (n + std::min(bs, n) - 1) / std::min(bs, n));
    }
}

TEST_CASE("zero epochs returns the initialization") {
    const Dataset d = small_benchmark(1);
    const ModelConfig c = small_model(d.cols());
    const TrainResult r = train(d, c, quick_train(5, 0));
    SplitMix64 rng(5);
    CHECK(r.params == ModelParams::initialize(c, rng));
    CHECK(r.trace.empty());
    CHECK(r.epochs_run == 0);
}

TEST_CASE("training is deterministic and reduces the loss") {
    const Dataset d = small_benchmark(2);
    const ModelConfig c = small_model(d.cols());
    const TrainResult a = train(d, c, quick_train(9, 6));
    const TrainResult b = train(d, c, quick_train(9, 6));
    CHECK(a.params == b.params);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].total == b.trace[i].total);
        CHECK(a.trace[i].mmd == b.trace[i].mmd);
    }
    CHECK(a.trace.front().epoch == 1);
    CHECK(a.trace.front().step == 1);
    CHECK(a.trace.back().step == a.trace.size());
    CHECK(epoch_mean(a.trace, 6, &LossRecord::total) < epoch_mean(a.trace, 1, &LossRecord::total));

    const TrainResult other = train(d, c, quick_train(10, 6));
    CHECK(other.params != a.params);
}

TEST_CASE("every parameter tensor moves during the first epoch") {
    const Dataset d = small_benchmark(3);
    const ModelConfig c = small_model(d.cols());
    const TrainResult before = train(d, c, quick_train(4, 0));
    const TrainResult after = train(d, c, quick_train(4, 1));
    const auto names = before.params.tensor_names();
    const auto t0 = before.params.tensors();
    const auto t1 = after.params.tensors();
    for (std::size_t i = 0; i < t0.size(); ++i) {
        CAPTURE(names[i]);
        CHECK(*t0[i] != *t1[i]);
    }
}

TEST_CASE("mmd part shrinks during training") {
    // Full-size benchmark: on tiny data the minibatch MMD is dominated by estimator noise.
    std::vector<double> change;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SyntheticSpec s;
        s.seed = seed;
        const Dataset d = synth_shift(s).first;
        const Dataset train_set = split_holdout(d, HoldoutPlan{{{2, 1}}}).first;
        TrainConfig t;
        t.seed = seed;
        t.epochs = 10;
        const FitResult f = fit(train_set, ModelConfig{}, t);
        change.push_back(epoch_mean(f.trace, 10, &LossRecord::mmd) - epoch_mean(f.trace, 1, &LossRecord::mmd));
    }
    std::sort(change.begin(), change.end());
    CHECK(change[2] < 0.0);
}

TEST_CASE("early stopping") {
    const Dataset d = small_benchmark(4);
    const ModelConfig c = small_model(d.cols());
    TrainConfig t = quick_train(1, 200);
    t.learning_rate = 1e-2;
    t.early_stop_patience = 2;
    const TrainResult r = train(d, c, t);
    CHECK(r.epochs_run < 200);
    CHECK(r.trace.back().epoch == r.epochs_run);

    // the stopping epoch is the first one closing a run of `patience` non-improving epochs
    double best = epoch_mean(r.trace, 1, &LossRecord::total);
    std::size_t stale = 0;
    std::size_t expected = 0;
    for (std::size_t e = 2; e <= r.epochs_run && expected == 0; ++e) {
        const double m = epoch_mean(r.trace, e, &LossRecord::total);
        if (m < best) {
            best = m;
            stale = 0;
        } else if (++stale >= 2) {
            expected = e;
        }
    }
    CHECK(expected == r.epochs_run);
}

TEST_CASE("training input checks") {
    const Dataset d = small_benchmark(5);
    ModelConfig c = small_model(d.cols() + 1);
    CHECK_THROWS_AS(train(d, c, quick_train(1, 1)), DimensionError);
}

TEST_CASE("fit standardizes with training statistics") {
    SyntheticSpec s;
    s.domain_count = 2;
    s.dims = 8;
    s.samples_per_cell = 40;
    const Dataset raw = synth_shift(s).first;
    ModelConfig c = small_model(0);
    c.condition_count = 0;
    const FitResult f = fit(raw, c, quick_train(2, 1));
    CHECK(f.model.config.input_dim == 8);
    CHECK(f.model.config.condition_count == 2);
    CHECK(f.model.scaler == Standardizer::fit(raw.x));
    CHECK(f.epochs_run == 1);
}
