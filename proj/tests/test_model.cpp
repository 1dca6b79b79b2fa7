#include "helpers.hpp"

#include "trvae/error.hpp"
#include "trvae/model.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>

using namespace trvae;
using test_util::random_matrix;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.input_dim = 5;
    c.condition_count = 3;
    c.encoder_hidden = {6};
    c.z_dim = 2;
    c.g1_dim = 4;
    c.g2_hidden = {6};
    c.alpha = 0.3;
    c.eta = 1.7;
    c.beta = 2.5;
    c.kernel = KernelSpec{{0.5, 2.0}};
    return c;
}

ModelParams random_params(const ModelConfig& c, std::uint64_t seed) {
    SplitMix64 rng(seed);
    ModelParams p = ModelParams::initialize(c, rng);
    for (Tensor* t : p.tensors()) {
        for (double& v : t->values()) {
            v += 0.05 * rng.normal();
        }
    }
    return p;
}

using Row = std::vector<double>;

double lrelu(double v, double slope) { return v > 0 ? v : slope * v; }

Row dense(const Row& in, const DenseLayer& layer, bool activate, double slope) {
    Row out(layer.weight.cols());
    for (std::size_t j = 0; j < out.size(); ++j) {
        double acc = layer.bias(0, j);
        for (std::size_t i = 0; i < in.size(); ++i) {
            acc += in[i] * layer.weight(i, j);
        }
        out[j] = activate ? lrelu(acc, slope) : acc;
    }
    return out;
}

Row with_label(Row v, int label, std::size_t conditions) {
    for (std::size_t s = 0; s < conditions; ++s) {
        v.push_back(static_cast<int>(s) == label ? 1.0 : 0.0);
    }
    return v;
}

double kernel(const Row& a, const Row& b, const std::vector<double>& gammas) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d2 += (a[i] - b[i]) * (a[i] - b[i]);
    }
    double k = 0.0;
    for (double g : gammas) {
        k += std::exp(-g * d2);
    }
    return k;
}

double mmd_rows(const std::vector<Row>& a, const std::vector<Row>& b, const std::vector<double>& gammas) {
    double kaa = 0.0;
    double kbb = 0.0;
    double kab = 0.0;
    for (const Row& u : a) {
        for (const Row& v : a) {
            kaa += kernel(u, v, gammas);
        }
        for (const Row& v : b) {
            kab += kernel(u, v, gammas);
        }
    }
    for (const Row& u : b) {
        for (const Row& v : b) {
            kbb += kernel(u, v, gammas);
        }
    }
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    return kaa / (na * na) + kbb / (nb * nb) - 2.0 * kab / (na * nb);
}

// Straight-line recomputation of the objective, one sample at a time.
double scalar_loss(const ModelParams& p, const ModelConfig& c, const Tensor& x, const std::vector<int>& labels,
                   const Tensor& eps) {
    std::map<int, double> sq_err;
    std::map<int, double> kl_sum;
    std::map<int, std::size_t> count;
    std::map<int, std::vector<Row>> y1_groups;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const int s = labels[r];
        Row h(x.row(r).begin(), x.row(r).end());
        h = with_label(h, s, c.condition_count);
        for (const DenseLayer& layer : p.encoder) {
            h = dense(h, layer, true, c.activation_slope);
        }
        const Row mu = dense(h, p.mu_head, false, 0.0);
        const Row lv = dense(h, p.logvar_head, false, 0.0);
        Row z(mu.size());
        for (std::size_t j = 0; j < z.size(); ++j) {
            z[j] = mu[j] + std::exp(0.5 * lv[j]) * eps(r, j);
            kl_sum[s] += 0.5 * (std::exp(lv[j]) + mu[j] * mu[j] - 1.0 - lv[j]);
        }
        const Row y1 = dense(with_label(z, s, c.condition_count), p.g1, true, c.activation_slope);
        Row out = y1;
        for (std::size_t i = 0; i < p.g2.size(); ++i) {
            out = dense(out, p.g2[i], i + 1 < p.g2.size(), c.activation_slope);
        }
        for (std::size_t j = 0; j < out.size(); ++j) {
            sq_err[s] += (x(r, j) - out[j]) * (x(r, j) - out[j]);
        }
        ++count[s];
        y1_groups[s].push_back(y1);
    }
    double total = 0.0;
    for (const auto& [s, n] : count) {
        const double nd = static_cast<double>(n);
        total += c.eta * sq_err[s] / (nd * static_cast<double>(c.input_dim)) + c.alpha * kl_sum[s] / nd;
    }
    std::vector<int> keys;
    for (const auto& kv : y1_groups) {
        keys.push_back(kv.first);
    }
    for (std::size_t i = 0; i < keys.size(); ++i) {
        for (std::size_t j = i + 1; j < keys.size(); ++j) {
            total += c.beta * mmd_rows(y1_groups[keys[i]], y1_groups[keys[j]], c.kernel.gammas);
        }
    }
    return total;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.condition_count = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.activation_slope = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.kernel.gammas = {};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(mmd_layer_from_string("bottleneck"), ConfigError);
    CHECK(mmd_layer_from_string(to_string(MmdLayer::y1)) == MmdLayer::y1);
}

TEST_CASE("encoder with zero params") {
    const ModelConfig c = tiny_config();
    const ModelParams p = ModelParams::zeros(c);
    SplitMix64 rng(1);
    const Tensor x = random_matrix(4, 5, rng);
    const std::vector<int> labels{0, 1, 2, 0};
    const LatentStats stats = encode(p, c, x, labels);
    CHECK(stats.mu == Tensor::zeros(4, 2));
    CHECK(stats.logvar == Tensor::zeros(4, 2));
    const auto [y1, xhat] = decode(p, c, stats.mu, labels);
    CHECK(y1 == Tensor::zeros(4, 4));
    CHECK(xhat == Tensor::zeros(4, 5));
}

TEST_CASE("labels are checked") {
    const ModelConfig c = tiny_config();
    const ModelParams p = ModelParams::zeros(c);
    const std::vector<int> bad{0, 3};
    CHECK_THROWS_AS(encode(p, c, Tensor::zeros(2, 5), bad), ContractError);
    const std::vector<int> short_labels{0};
    CHECK_THROWS_AS(encode(p, c, Tensor::zeros(2, 5), short_labels), DimensionError);
}

TEST_CASE("initialization") {
    const ModelConfig c = tiny_config();
    SplitMix64 rng(4);
    const ModelParams p = ModelParams::initialize(c, rng);
    const auto names = p.tensor_names();
    const auto tensors = p.tensors();
    REQUIRE(names.size() == tensors.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
        CAPTURE(names[i]);
        if (names[i].ends_with(".bias")) {
            CHECK(*tensors[i] == Tensor::zeros(1, tensors[i]->cols()));
        } else {
            const double fan_in = static_cast<double>(tensors[i]->rows());
            const double bound = std::sqrt(3.0 * 2.0 / (fan_in * (1.0 + 0.04)));
            for (double v : tensors[i]->values()) {
                CHECK(std::abs(v) <= bound);
            }
        }
    }
    CHECK(names.front() == "encoder.0.weight");
    CHECK(tensors.front()->rows() == 5 + 3);
    CHECK(p.g1.weight.rows() == 2 + 3);
    CHECK(p.g2.back().weight.cols() == 5);
}

TEST_CASE("reparameterize") {
    const LatentStats stats{Tensor::matrix({{1.0}}), Tensor::matrix({{std::log(4.0)}})};
    CHECK(reparameterize(stats, Tensor::matrix({{0.0}})).item() == 1.0);
    CHECK(reparameterize(stats, Tensor::matrix({{0.5}})).item() == doctest::Approx(2.0).epsilon(1e-15));

    constexpr std::size_t n = 100000;
    SplitMix64 rng(99);
    Tensor eps = Tensor::zeros(n, 1);
    for (double& v : eps.values()) {
        v = rng.normal();
    }
    const LatentStats many{Tensor::filled(n, 1, 1.0), Tensor::filled(n, 1, std::log(4.0))};
    const Tensor z = reparameterize(many, eps);
    double m = 0.0;
    for (double v : z.values()) {
        m += v;
    }
    m /= static_cast<double>(n);
    CHECK(std::abs(m - 1.0) < 3.0 * 2.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("decoder depends on the condition") {
    const ModelConfig c = tiny_config();
    const ModelParams p = random_params(c, 5);
    const Tensor z = Tensor::matrix({{0.3, -0.2}});
    const std::vector<int> s0{0};
    const std::vector<int> s1{1};
    CHECK(decode(p, c, z, s0).first != decode(p, c, z, s1).first);
}

TEST_CASE("kl divergence values") {
    CHECK(kl_divergence(LatentStats{Tensor::zeros(3, 2), Tensor::zeros(3, 2)}) == 0.0);
    CHECK(std::abs(kl_divergence(LatentStats{Tensor::matrix({{1.0}}), Tensor::matrix({{0.0}})}) - 0.5) < 1e-12);
    CHECK(kl_divergence(LatentStats{Tensor::matrix({{0.0}}), Tensor::matrix({{std::log(2.0)}})}) ==
          doctest::Approx(0.15342640972002736).epsilon(1e-14));
    SplitMix64 rng(3);
    for (int i = 0; i < 20; ++i) {
        CHECK(kl_divergence(LatentStats{random_matrix(4, 3, rng), random_matrix(4, 3, rng)}) > 0.0);
    }
}

TEST_CASE("cvae loss values") {
    const LatentStats zero{Tensor::zeros(1, 1), Tensor::zeros(1, 1)};
    const Tensor x = Tensor::matrix({{0.4, -1.0}});
    CHECK(loss_cvae(x, x, zero, 1.0, 1.0) == 0.0);

    const Tensor xhat = Tensor::matrix({{1.0, 1.0}});
    const Tensor zeros = Tensor::zeros(1, 2);
    const LatentStats unit_mu{Tensor::matrix({{1.0}}), Tensor::matrix({{0.0}})};
    CHECK(loss_cvae(zeros, xhat, unit_mu, 1.0, 1.0) == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(loss_cvae(zeros, xhat, zero, 0.0, 2.0) == 2.0 * loss_cvae(zeros, xhat, zero, 0.0, 1.0));
}

TEST_CASE("trVAE loss matches the scalar oracle") {
    for (MmdLayer layer : {MmdLayer::y1, MmdLayer::none}) {
        ModelConfig c = tiny_config();
        c.mmd_layer = layer;
        if (layer == MmdLayer::none) {
            c.beta = 0.0;
        }
        const ModelParams p = random_params(c, 17);
        SplitMix64 rng(18);
        const Tensor x = random_matrix(7, 5, rng);
        const Tensor eps = random_matrix(7, 2, rng);
        const std::vector<int> labels{0, 2, 1, 0, 2, 2, 1};
        const LossValue v = loss_trvae(p, c, x, labels, eps);
        CHECK(std::abs(v.total - scalar_loss(p, c, x, labels, eps)) < 1e-10);
    }
}

TEST_CASE("beta zero reduces to the CVAE objective") {
    ModelConfig c = tiny_config();
    const ModelParams p = random_params(c, 21);
    SplitMix64 rng(22);
    const Tensor x = random_matrix(6, 5, rng);
    const Tensor eps = random_matrix(6, 2, rng);
    const std::vector<int> labels{0, 1, 0, 1, 2, 2};

    c.beta = 0.0;
    const LossValue y1_zero = loss_trvae(p, c, x, labels, eps);
    CHECK_FALSE(y1_zero.parts.mmd_skipped);
    CHECK(y1_zero.parts.mmd > 0.0);

    c.mmd_layer = MmdLayer::none;
    c.beta = 123.0;
    const LossValue none = loss_trvae(p, c, x, labels, eps);
    CHECK(none.total == y1_zero.total);
    CHECK(none.parts.mmd_skipped);

    // Sum of per-condition CVAE losses.
    double expected = 0.0;
    for (int s = 0; s < 3; ++s) {
        std::vector<std::size_t> rows;
        for (std::size_t r = 0; r < labels.size(); ++r) {
            if (labels[r] == s) {
                rows.push_back(r);
            }
        }
        const std::vector<int> ls(rows.size(), s);
        const Tensor xs = take_rows(x, rows);
        const LatentStats st = encode(p, c, xs, ls);
        const Tensor z = reparameterize(st, take_rows(eps, rows));
        expected += loss_cvae(xs, decode(p, c, z, ls).second, st, c.alpha, c.eta);
    }
    CHECK(none.total == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("single-condition batch skips the mmd term") {
    const ModelConfig c = tiny_config();
    const ModelParams p = random_params(c, 2);
    SplitMix64 rng(3);
    const std::vector<int> labels{1, 1, 1};
    const LossValue v = loss_trvae(p, c, random_matrix(3, 5, rng), labels, random_matrix(3, 2, rng));
    CHECK(v.parts.mmd == 0.0);
    CHECK(v.parts.mmd_skipped);
}

TEST_CASE("gradients through the encoder and decoder chain") {
    const ModelConfig c = tiny_config();
    // Seeds picked so no pre-activation lies within h of the leaky relu kink (31/32 put one
    // at 8.5e-5, where central differences straddle the slope change).
    const ModelParams p = random_params(c, 33);
    SplitMix64 rng(34);
    const Tensor x = random_matrix(5, 5, rng);
    const Tensor eps = random_matrix(5, 2, rng);
    const std::vector<int> labels{0, 1, 2, 1, 0};

    std::vector<Tensor> point;
    for (const Tensor* t : p.tensors()) {
        point.push_back(*t);
    }
    const GraphBuilder encoder_only = [&](Graph& g, std::span<const Var> handles) {
        const BoundParams b = bind_params(handles, c);
        const LatentVars st = encode(b, c, g.constant(x), labels);
        return sum(square(st.mu)) + kl_divergence(st);
    };
    CHECK(grad_check(encoder_only, point, 1e-4) < 1e-5);

    const GraphBuilder decoder_only = [&](Graph& g, std::span<const Var> handles) {
        const BoundParams b = bind_params(handles, c);
        return mse(g.constant(x), decode(b, c, g.constant(eps), labels).xhat);
    };
    CHECK(grad_check(decoder_only, point, 1e-4) < 1e-5);

    for (MmdLayer layer : {MmdLayer::y1, MmdLayer::z}) {
        ModelConfig lc = c;
        lc.mmd_layer = layer;
        const GraphBuilder full = [&](Graph& g, std::span<const Var> handles) {
            return loss_trvae(g, bind_params(handles, lc), lc, x, labels, eps).total;
        };
        CHECK(grad_check(full, point, 1e-4) < 1e-5);
    }
}

TEST_CASE("prediction protocol") {
    const ModelConfig c = tiny_config();
    const ModelParams p = random_params(c, 41);
    SplitMix64 rng(42);
    const Tensor x = random_matrix(6, 5, rng);

    const Tensor same = predict_transform(p, c, x, 1, 1);
    const std::vector<int> ones(6, 1);
    const LatentStats st = encode(p, c, x, ones);
    CHECK(same == decode(p, c, st.mu, ones).second);
    CHECK(same.same_shape(x));

    const Tensor moved = predict_transform(p, c, x, 0, 2);
    CHECK(moved == predict_transform(p, c, x, 0, 2));
    CHECK(moved != predict_transform(p, c, x, 0, 1));
}

TEST_CASE("params shape validation") {
    const ModelConfig c = tiny_config();
    ModelParams p = ModelParams::zeros(c);
    CHECK_NOTHROW(p.validate(c));
    p.g1.bias = Tensor::zeros(1, 3);
    CHECK_THROWS_AS(p.validate(c), DimensionError);
}
