#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "lacos/errors.hpp"
#include "lacos/lora.hpp"
#include "lacos/rng.hpp"
#include "lacos/tensor.hpp"

using lacos::AttachPoint;
using lacos::Graph;
using lacos::GraphT;
using lacos::init_lora;
using lacos::lora_forward;
using lacos::LoraLinearT;
using lacos::make_frozen_linear;
using lacos::merge_adapters;
using lacos::Rng;
using lacos::Tensor;
using lacos::TensorT;

namespace {

template <class S>
TensorT<S> random_tensor(Rng& rng, std::size_t rows, std::size_t cols, bool rg = false) {
    std::vector<S> v(rows * cols);
    for (auto& x : v) x = static_cast<S>(rng.normal());
    return TensorT<S>::from_values(rows, cols, std::move(v), rg);
}

} // namespace

TEST_CASE("init shapes, determinism, and rank validation") {
    Rng rng(1);
    auto base = random_tensor<float>(rng, 4, 4);
    auto layer = init_lora<float>(4, 4, 2, 99, base, AttachPoint::ffn_in);
    CHECK(layer.w_down.rows() == 4);
    CHECK(layer.w_down.cols() == 2);
    CHECK(layer.w_up.rows() == 2);
    CHECK(layer.w_up.cols() == 4);
    for (const float v : layer.w_up.values()) CHECK(v == 0.0f);
    CHECK(layer.w_down.size() == 8);

    auto again = init_lora<float>(4, 4, 2, 99, base, AttachPoint::ffn_in);
    for (std::size_t i = 0; i < 8; ++i) CHECK(layer.w_down.values()[i] == again.w_down.values()[i]);

    CHECK_THROWS_AS(init_lora<float>(4, 4, 0, 1, base, AttachPoint::ffn_in), lacos::ConfigError);
    CHECK_THROWS_AS(init_lora<float>(4, 4, 5, 1, base, AttachPoint::ffn_in), lacos::ConfigError);
    CHECK(lacos::lora_rank_warrants_warning(16, 16, 8));
    CHECK(!lacos::lora_rank_warrants_warning(16, 16, 4));
}

TEST_CASE("forward at init equals base forward bitwise") {
    Rng rng(2);
    auto base = random_tensor<float>(rng, 6, 5);
    auto layer = init_lora<float>(6, 5, 3, 7, base, AttachPoint::ffn_out);
    auto x = random_tensor<float>(rng, 3, 6);
    Graph g;
    auto y_lora = lora_forward(g, x, layer);
    auto y_base = g.matmul(x, base);
    for (std::size_t i = 0; i < y_lora.size(); ++i)
        CHECK(y_lora.values()[i] == y_base.values()[i]);
}

TEST_CASE("identity factors over zero base give identity") {
    const std::size_t d = 3;
    auto layer = make_frozen_linear(Tensor::zeros(d, d), AttachPoint::final_hidden);
    layer.rank = d;
    layer.w_down = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, true);
    layer.w_up = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, true);
    Rng rng(3);
    auto x = random_tensor<float>(rng, 2, d);
    Graph g;
    auto y = lora_forward(g, x, layer);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.values()[i] == doctest::Approx(x.values()[i]));
}

TEST_CASE("forward equals dense reconstruction oracle") {
    Rng rng(4);
    auto base = random_tensor<float>(rng, 4, 4);
    auto layer = init_lora<float>(4, 4, 2, 11, base, AttachPoint::attn_q);
    // make the adapter nontrivial
    for (auto& v : layer.w_up.mutable_values()) v = static_cast<float>(rng.normal());
    auto x = random_tensor<float>(rng, 3, 4);

    Graph g;
    auto y = lora_forward(g, x, layer);

    // dense oracle: x * (base + w_down*w_up)
    auto merged = merge_adapters(layer);
    auto y_ref = g.matmul(x, merged);
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(y_ref.values()[i]).epsilon(1e-5));
}

TEST_CASE("merge oracle cases") {
    Rng rng(5);
    auto base = random_tensor<float>(rng, 5, 3);
    auto layer = init_lora<float>(5, 3, 2, 13, base, AttachPoint::ffn_in);
    auto merged0 = merge_adapters(layer);
    for (std::size_t i = 0; i < merged0.size(); ++i)
        CHECK(merged0.values()[i] == base.values()[i]); // zero update

    auto zero_base = make_frozen_linear(Tensor::zeros(3, 3), AttachPoint::ffn_in);
    zero_base.rank = 1;
    zero_base.w_down = Tensor::from_rows({{1}, {2}, {3}}, true);
    zero_base.w_up = Tensor::from_rows({{4, 5, 6}}, true);
    auto m = merge_adapters(zero_base);
    CHECK(m.at(0, 0) == doctest::Approx(4.0));
    CHECK(m.at(1, 2) == doctest::Approx(12.0));
    CHECK(m.at(2, 1) == doctest::Approx(15.0));
}

TEST_CASE("merged forward matches lora_forward within 1e-5") {
    Rng rng(6);
    auto base = random_tensor<float>(rng, 8, 6);
    auto layer = init_lora<float>(8, 6, 4, 17, base, AttachPoint::ffn_out);
    for (auto& v : layer.w_up.mutable_values()) v = static_cast<float>(rng.normal() * 0.3);
    auto x = random_tensor<float>(rng, 5, 8);
    Graph g;
    auto y = lora_forward(g, x, layer);
    auto y_merged = g.matmul(x, merge_adapters(layer));
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(std::fabs(y.values()[i] - y_merged.values()[i]) < 1e-5f);
}

TEST_CASE("quantized base path equals dense-dequantized oracle") {
    Rng rng(7);
    auto base = random_tensor<float>(rng, 6, 6);
    auto layer = init_lora<float>(6, 6, 2, 19, base, AttachPoint::ffn_in);
    lacos::quantize_base(layer, 4);
    REQUIRE(layer.base_q.has_value());
    auto dense = lacos::dequantize_blockwise(*layer.base_q);
    auto x = random_tensor<float>(rng, 2, 6);
    Graph g;
    auto y = lora_forward(g, x, layer);
    auto y_ref = g.matmul(x, dense); // adapter update is still zero
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.values()[i] == y_ref.values()[i]);
}

TEST_CASE("gradient isolation: base frozen, adapters match finite differences") {
    Rng rng(8);
    auto base = random_tensor<double>(rng, 5, 4);
    auto layer = init_lora<double>(5, 4, 2, 23, base, AttachPoint::ffn_in);
    for (auto& v : layer.w_up.mutable_values()) v = rng.normal() * 0.5;
    auto x = random_tensor<double>(rng, 3, 5);

    CHECK(!layer.base.requires_grad());

    auto loss_of = [&](GraphT<double>& g) {
        auto y = lora_forward(g, x, layer);
        return g.sum(g.mul(y, y));
    };
    GraphT<double> g;
    auto loss = loss_of(g);
    g.backward(loss);

    for (auto* t : {&layer.w_down, &layer.w_up}) {
        const auto analytic = t->grad();
        auto vals = t->mutable_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double keep = vals[i];
            const double h = 1e-4;
            vals[i] = keep + h;
            GraphT<double> gp;
            const double up = loss_of(gp).item();
            vals[i] = keep - h;
            GraphT<double> gm;
            const double dn = loss_of(gm).item();
            vals[i] = keep;
            const double fd = (up - dn) / (2 * h);
            const double rel =
                std::fabs(analytic[i] - fd) / std::max({std::fabs(analytic[i]), std::fabs(fd), 1e-6});
            CHECK(rel < 1e-3);
        }
    }
}

TEST_CASE("update rank never exceeds r (singular value oracle)") {
    Rng rng(9);
    for (const std::size_t r : {std::size_t{1}, std::size_t{2}, std::size_t{3}}) {
        auto base = Tensor::zeros(6, 5);
        auto layer = init_lora<float>(6, 5, r, 29 + r, base, AttachPoint::ffn_in);
        for (auto& v : layer.w_up.mutable_values()) v = static_cast<float>(rng.normal());
        auto update = merge_adapters(layer); // base is zero, so this is w_down*w_up
        Eigen::MatrixXd m(6, 5);
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 5; ++j) m(static_cast<int>(i), static_cast<int>(j)) =
                update.at(i, j);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
        std::size_t numeric_rank = 0;
        for (int i = 0; i < svd.singularValues().size(); ++i)
            if (svd.singularValues()(i) > 1e-6) ++numeric_rank;
        CHECK(numeric_rank <= r);
    }
}

TEST_CASE("parameter counting: single 1024x1024 layer with r=4") {
    auto base = Tensor::zeros(1024, 1024);
    auto layer = init_lora<float>(1024, 1024, 4, 31, base, AttachPoint::ffn_in);
    CHECK(layer.trainable_params() == 8192);
    CHECK(layer.total_params() == 1048576 + 8192);
    const double frac = static_cast<double>(layer.trainable_params()) /
                        static_cast<double>(layer.total_params());
    CHECK(frac == doctest::Approx(0.00775).epsilon(1e-3));

    auto frozen = make_frozen_linear(Tensor::zeros(8, 8), AttachPoint::ffn_out);
    CHECK(frozen.trainable_params() == 0);
    CHECK(frozen.total_params() == 64);
}

TEST_CASE("attach point names round-trip") {
    for (const auto ap : {AttachPoint::ffn_in, AttachPoint::ffn_out, AttachPoint::final_hidden,
                          AttachPoint::attn_q, AttachPoint::attn_v}) {
        CHECK(lacos::attach_point_from_string(lacos::to_string(ap)) == ap);
    }
    CHECK_THROWS_AS(lacos::attach_point_from_string("ffn"), lacos::ConfigError);
}
