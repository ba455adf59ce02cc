#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "test_util.hpp"
#include "wavelab/gradcheck.hpp"
#include "wavelab/json_util.hpp"
#include "wavelab/model.hpp"

using namespace wavelab;
using namespace wavelab::model;
using wavelab::testing::random_tensor;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.channels = 2;
    c.window = 6;
    c.d_model = 4;
    c.d_ff = 6;
    c.n_layers = 1;
    c.n_heads = 2;
    c.t2v_dim = 2;
    c.filters.taps = 3;
    c.filters.n_fft = 16;
    return c;
}

// Parameter count written out from the architecture description, block by block.
std::size_t count_oracle(const ModelConfig& c) {
    const std::size_t d = c.channels, m = c.d_model, f = c.d_ff, k = c.t2v_dim;
    std::size_t front = 0, embed = 0, fusion = 0;
    if (c.frontend == Frontend::None) {
        embed = d * m + m;
    } else {
        front = c.filters.taps + c.filters.taps;
        const bool both = c.branches == Branches::Both;
        embed = (both ? 2 : 1) * (d * m + m);
        if (both && c.fusion == Fusion::Lghi) fusion = m * m * 4 + 1;
        if (both && c.fusion == Fusion::Concat) {
            const std::size_t h = (4 * m + 2) / 3;
            fusion = (m + m) * h + h * m;
        }
    }
    const std::size_t t2v = k + k;
    const std::size_t input = (m + k) * m + m;
    const std::size_t attn = 4 * m * m;
    const std::size_t ffn = m * f + f + f * m + m;
    const std::size_t norms = 4 * m;
    const std::size_t head = 2 * m + m + 1;
    return front + embed + fusion + t2v + input + c.n_layers * (attn + ffn + norms) + head;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

using Mat = std::vector<std::vector<double>>;

Mat mm(const Mat& a, const Mat& b) {
    Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

Mat layer_norm_ref(const Mat& x, double eps) {
    Mat y = x;
    for (auto& row : y) {
        double mu = 0, var = 0;
        for (double v : row) mu += v;
        mu /= row.size();
        for (double v : row) var += (v - mu) * (v - mu);
        var /= row.size();
        for (double& v : row) v = (v - mu) / std::sqrt(var + eps);
    }
    return y;
}

Mat to_mat(const Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
    return m;
}

}  // namespace

TEST(Config, ValidatesHeadsAndT2v) {
    ModelConfig c = tiny();
    c.n_heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.t2v_dim = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    auto j = to_json(tiny());
    EXPECT_EQ(to_json(model_config_from_json(j)), j);
    j["bogus"] = 1;
    EXPECT_THROW(model_config_from_json(j), ConfigError);
}

TEST(Time2Vec, Examples) {
    ad::Tape t;
    auto zero = time2vec_embed(t, t.constant(Tensor(Shape{3})), t.constant(Tensor(Shape{3})), 5).value();
    EXPECT_EQ(zero, Tensor(Shape{5, 3}));
    auto e = time2vec_embed(t, t.constant(Tensor::vector({0.5, std::numbers::pi})), t.constant(Tensor::vector({0.1, 0})),
                            7)
                 .value();
    ASSERT_EQ(e.shape(), (Shape{7, 2}));
    EXPECT_NEAR(e.at(1, 1), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(e.at(3, 0), 0.5 * 3 + 0.1);
    EXPECT_DOUBLE_EQ(e.at(4, 1), std::sin(std::numbers::pi * 4));
}

TEST(Encoder, ZeroWeightsPassInputThrough) {
    ad::Tape t;
    auto z = [&](std::size_t r, std::size_t c) { return t.constant(Tensor(Shape{r, c})); };
    auto zv = [&](std::size_t n) { return t.constant(Tensor(Shape{n})); };
    auto one = [&](std::size_t n) { return t.constant(Tensor(Shape{n}, 1.0)); };
    EncoderLayer p{one(4), zv(4), z(4, 4), z(4, 4), z(4, 4), z(4, 4), one(4), zv(4), z(4, 6), zv(6), z(6, 4), zv(4)};
    std::mt19937_64 rng(2);
    Tensor x = random_tensor({5, 4}, rng);
    EXPECT_EQ(encoder_layer(t.constant(x), p, 2, 1e-5).value(), x);
}

TEST(Encoder, HandSetSingleHeadMatchesLoopOracle) {
    const Tensor x = Tensor::matrix({{0.5, -1.0}, {2.0, 0.25}});
    const Tensor wq = Tensor::matrix({{0.3, -0.2}, {0.1, 0.4}}), wk = Tensor::matrix({{-0.5, 0.2}, {0.3, 0.1}});
    const Tensor wv = Tensor::matrix({{1.0, 0.5}, {-0.5, 0.25}}), wo = Tensor::matrix({{0.2, 0.0}, {0.1, -0.3}});
    const Tensor f1 = Tensor::matrix({{0.4, -0.6}, {0.7, 0.2}}), f2 = Tensor::matrix({{-0.3, 0.5}, {0.8, 0.1}});
    const Tensor b1 = Tensor::vector({0.05, -0.1}), b2 = Tensor::vector({0.2, 0.0});
    ad::Tape t;
    auto c = [&](const Tensor& v) { return t.constant(v); };
    EncoderLayer p{c(Tensor(Shape{2}, 1.0)), c(Tensor(Shape{2})), c(wq), c(wk), c(wv), c(wo),
                   c(Tensor(Shape{2}, 1.0)), c(Tensor(Shape{2})), c(f1), c(b1), c(f2), c(b2)};
    const Tensor got = encoder_layer(c(x), p, 1, 1e-5).value();

    Mat X = to_mat(x);
    Mat h = layer_norm_ref(X, 1e-5);
    Mat q = mm(h, to_mat(wq)), k = mm(h, to_mat(wk)), v = mm(h, to_mat(wv));
    Mat a(2, std::vector<double>(2));
    for (int i = 0; i < 2; ++i) {
        double s[2], tot = 0;
        for (int j = 0; j < 2; ++j) {
            s[j] = std::exp((q[i][0] * k[j][0] + q[i][1] * k[j][1]) / std::sqrt(2.0));
            tot += s[j];
        }
        for (int j = 0; j < 2; ++j) a[i][j] = s[j] / tot;
    }
    Mat attn = mm(mm(a, v), to_mat(wo));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) X[i][j] += attn[i][j];
    Mat h2 = mm(layer_norm_ref(X, 1e-5), to_mat(f1));
    for (auto& row : h2)
        for (int j = 0; j < 2; ++j) row[j] = gelu_ref(row[j] + b1[j]);
    Mat ff = mm(h2, to_mat(f2));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) EXPECT_NEAR(got.at(i, j), X[i][j] + ff[i][j] + b2[j], 1e-14);
}

TEST(Model, ParameterCountMatchesOracleForEveryVariant) {
    for (auto fe : {Frontend::Learnable, Frontend::FrozenHaar, Frontend::None}) {
        for (auto br : {Branches::Both, Branches::LowOnly, Branches::HighOnly}) {
            for (auto fu : {Fusion::Lghi, Fusion::Concat}) {
                ModelConfig c;  // desk defaults
                c.frontend = fe;
                c.branches = br;
                c.fusion = fu;
                PolicyModel m(c, 1);
                EXPECT_EQ(m.parameter_count(), count_oracle(c));
                EXPECT_EQ(expected_parameter_count(c), count_oracle(c));
            }
        }
    }
    EXPECT_EQ(expected_parameter_count(ModelConfig::full_scale(4)), count_oracle(ModelConfig::full_scale(4)));
}

TEST(Model, DeskDefaultCountIsStable) {
    ModelConfig c;
    // 16 taps + 2*(4*32+32) + 4*32*32+1 + 16 + 40*32+32 + 2*(128+4096+2048+64+2048+32) + 64 + 33
    EXPECT_EQ(count_oracle(c), 16u + 320u + 4097u + 16u + 1312u + 2u * 8416u + 64u + 33u);
}

TEST(Model, FrozenHaarFiltersAreNotTrainable) {
    ModelConfig c = tiny();
    c.frontend = Frontend::FrozenHaar;
    PolicyModel m(c, 1);
    EXPECT_FALSE(m.params().get("frontend.low").trainable);
    EXPECT_EQ(m.params().count(true), m.params().count() - 2 * c.filters.taps);
}

TEST(Model, ZeroWindowZeroHeadGivesZero) {
    PolicyModel m(tiny(), 3);
    m.params().get("head.w").value.fill(0.0);
    ad::Tape t;
    EXPECT_EQ(m.forward_one(t, Tensor(Shape{6, 2})).item(), 0.0);
}

TEST(Model, DeterministicAndBatchPermutationEquivariant) {
    std::mt19937_64 rng(4);
    std::vector<Tensor> w{random_tensor({6, 2}, rng, -0.01, 0.01), random_tensor({6, 2}, rng, -0.01, 0.01),
                          random_tensor({6, 2}, rng, -0.01, 0.01)};
    PolicyModel a(tiny(), 9), b(tiny(), 9);
    auto pa = a.predict(w), pb = b.predict(w);
    EXPECT_EQ(pa, pb);
    std::vector<Tensor> rev{w[2], w[1], w[0]};
    auto pr = a.predict(rev, 2);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(pr[i], pa[2 - i]);
    ad::Tape t;
    EXPECT_EQ(a.forward_one(t, w[1]).item(), pa[1]);
    PolicyModel other(tiny(), 10);
    EXPECT_NE(other.predict(w), pa);
}

TEST(Model, RejectsWrongWindowShape) {
    PolicyModel m(tiny(), 1);
    ad::Tape t;
    EXPECT_THROW(m.forward_one(t, Tensor(Shape{5, 2})), std::invalid_argument);
}

TEST(Model, NonFiniteActivationNamesLayer) {
    PolicyModel m(tiny(), 1);
    ad::Tape t;
    Tensor x(Shape{6, 4});
    x[3] = std::numeric_limits<double>::quiet_NaN();
    try {
        m.encode(t, t.constant(x));
        FAIL();
    } catch (const TrainingStabilityError& e) {
        EXPECT_EQ(e.layer(), 0u);
    }
}

TEST(Model, GradientsMatchFiniteDifferencesEveryGroup) {
    std::mt19937_64 rng(5);
    for (auto fe : {Frontend::Learnable, Frontend::None}) {
        for (auto fu : {Fusion::Lghi, Fusion::Concat}) {
            ModelConfig c = tiny();
            c.frontend = fe;
            c.fusion = fu;
            c.gamma_init = 0.5;
            PolicyModel m(c, 6);
            const Tensor w = random_tensor({6, 2}, rng);
            auto r = ad::finite_difference_check([&](ad::Tape& t) { return m.forward_one(t, w); }, m.params(), 1e-6);
            EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
            EXPECT_EQ(r.coordinates, m.params().count(true));
        }
    }
}

TEST(Model, PoolIsTimePermutationInvariant) {
    std::mt19937_64 rng(7);
    Tensor h = random_tensor({5, 3}, rng);
    Tensor p = h;
    for (std::size_t c = 0; c < 3; ++c) std::swap(p.at(0, c), p.at(4, c));
    ad::Tape t;
    auto a = ad::mean_rows(t.constant(h)).value(), b = ad::mean_rows(t.constant(p)).value();
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
    const auto dir = std::filesystem::temp_directory_path() / "wavelab_ckpt_test";
    std::filesystem::remove_all(dir);
    PolicyModel m(tiny(), 11);
    std::mt19937_64 rng(8);
    std::vector<Tensor> w{random_tensor({6, 2}, rng), random_tensor({6, 2}, rng)};
    save_checkpoint(m, dir / "ckpt", {{"epoch", 3}});
    nlohmann::json manifest;
    PolicyModel back = load_checkpoint(dir / "ckpt", &manifest);
    EXPECT_EQ(back.predict(w), m.predict(w));
    EXPECT_EQ(manifest["epoch"], 3);
    EXPECT_EQ(manifest["byte_order"], "little");
    EXPECT_EQ(manifest["total"], m.parameter_count());
    EXPECT_EQ(std::filesystem::file_size(dir / "ckpt.bin"), 8 * m.parameter_count());

    // First blob value is the first manifest parameter's first entry, little-endian.
    std::ifstream blob(dir / "ckpt.bin", std::ios::binary);
    unsigned char raw[8];
    blob.read(reinterpret_cast<char*>(raw), 8);
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | raw[i];
    double first;
    std::memcpy(&first, &bits, 8);
    const std::string name = manifest["parameters"][0]["name"];
    EXPECT_EQ(first, m.params().get(name).value[0]);

    std::filesystem::resize_file(dir / "ckpt.bin", 16);
    EXPECT_THROW(load_checkpoint(dir / "ckpt"), std::runtime_error);
    std::filesystem::remove_all(dir);
}
