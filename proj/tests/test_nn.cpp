#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "stim/nn.hpp"

using namespace stim;

namespace {

Tensor3 random_tensor(int a, int b, int c, Rng& rng) {
    Tensor3 t(a, b, c);
    for (auto& s : t.slices)
        for (Eigen::Index r = 0; r < s.rows(); ++r)
            for (Eigen::Index cc = 0; cc < s.cols(); ++cc) s(r, cc) = uniform_real(rng, -1, 1);
    return t;
}

// Scalar probe loss: sum over timesteps of <hs[t], probe[t]>.
double lstm_probe_loss(const ParamStore& store, const LstmSpec& spec,
                       const std::vector<Matrix>& xs, const std::vector<Matrix>& probes,
                       LstmCache* cache = nullptr) {
    std::vector<Matrix> hs = lstm_forward_seq(store, spec, xs, cache);
    double loss = 0.0;
    for (std::size_t t = 0; t < hs.size(); ++t) loss += (hs[t].array() * probes[t].array()).sum();
    return loss;
}

}  // namespace

TEST_CASE("transpose01 is an involution with swapped dims") {
    Rng rng = make_rng(3);
    Tensor3 t = random_tensor(4, 7, 5, rng);
    Tensor3 tt = transpose01(t);
    REQUIRE(tt.d0 == 7);
    REQUIRE(tt.d1 == 4);
    REQUIRE(tt.d2 == 5);
    Tensor3 back = transpose01(tt);
    for (int i = 0; i < t.d0; ++i) REQUIRE(back.slices[i] == t.slices[i]);

    Tensor3 big(8, 500, 128);
    Tensor3 bigt = transpose01(big);
    REQUIRE(bigt.d0 == 500);
    REQUIRE(bigt.d1 == 8);
    REQUIRE(bigt.d2 == 128);

    Tensor3 unit = random_tensor(1, 1, 1, rng);
    REQUIRE(transpose01(unit).slices[0] == unit.slices[0]);
}

TEST_CASE("softmax rows") {
    Matrix z = Matrix::Zero(1, 11);
    Matrix p = softmax_rows(z);
    for (int i = 0; i < 11; ++i) REQUIRE(p(0, i) == Catch::Approx(1.0 / 11.0));

    Matrix logits(1, 3);
    logits << 1, 2, 3;
    Matrix q = softmax_rows(logits);
    REQUIRE(q(0, 0) == Catch::Approx(0.09003057).epsilon(1e-5));
    REQUIRE(q(0, 1) == Catch::Approx(0.24472847).epsilon(1e-5));
    REQUIRE(q(0, 2) == Catch::Approx(0.66524096).epsilon(1e-5));

    // shift invariance and stability at large magnitude
    Matrix shifted = logits.array() + 1000.0;
    Matrix qs = softmax_rows(shifted);
    REQUIRE((qs - q).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(qs.sum() == Catch::Approx(1.0));
}

TEST_CASE("cross entropy") {
    Eigen::VectorXd u = Eigen::VectorXd::Constant(11, 1.0 / 11.0);
    REQUIRE(cross_entropy(u, u) == Catch::Approx(std::log(11.0)));

    Eigen::VectorXd onehot = Eigen::VectorXd::Zero(5);
    onehot[2] = 1.0;
    REQUIRE(cross_entropy(onehot, onehot) == 0.0);

    Eigen::VectorXd m(2), rho(2);
    m << 0.5, 0.5;
    rho << 0.9, 0.1;
    REQUIRE(cross_entropy(m, rho) == Catch::Approx(1.20397).epsilon(1e-4));
    // lower bound: CE(m, rho) >= H(m), equality iff rho == m
    REQUIRE(cross_entropy(m, rho) > cross_entropy(m, m));

    Eigen::VectorXd bad(2);
    bad << 0.5, 0.6;
    REQUIRE_THROWS_AS(cross_entropy(m, bad), std::invalid_argument);
    REQUIRE_THROWS_AS(cross_entropy(bad, m), std::invalid_argument);
}

TEST_CASE("lstm: zero parameters give zero outputs") {
    ParamStore store;
    LstmSpec spec{"lstm", 3, 4};
    spec.register_params(store);  // zero-initialized by default
    Rng rng = make_rng(5);
    Tensor3 in = random_tensor(6, 5, 3, rng);
    Tensor3 out = lstm_forward(store, spec, in);
    REQUIRE(out.d0 == 6);
    REQUIRE(out.d1 == 5);
    REQUIRE(out.d2 == 4);
    for (const auto& s : out.slices) REQUIRE(s.isZero());
}

TEST_CASE("lstm: shape contract N x B x F -> N x B x F when hidden = F") {
    ParamStore store;
    LstmSpec spec{"lstm", 16, 16};
    spec.register_params(store);
    Rng rng = make_rng(6);
    store.init_uniform(rng);
    Tensor3 in = random_tensor(20, 8, 16, rng);
    Tensor3 out = lstm_forward(store, spec, in);
    REQUIRE(out.d0 == 20);
    REQUIRE(out.d1 == 8);
    REQUIRE(out.d2 == 16);

    Tensor3 bad = random_tensor(4, 8, 7, rng);
    REQUIRE_THROWS_AS(lstm_forward(store, spec, bad), std::invalid_argument);
}

TEST_CASE("lstm: single-step scalar cell matches hand computation") {
    ParamStore store;
    LstmSpec spec{"lstm", 1, 1};
    spec.register_params(store);
    // wx gate order [i f g o]
    store.value("lstm.wx") << 0.5, -0.25, 0.75, 0.1;
    store.value("lstm.wh").setZero();
    store.value("lstm.b") << 0.05, 0.2, -0.1, 0.3;

    double x = 0.8;
    auto sigm = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    double gi = sigm(0.5 * x + 0.05);
    double gf = sigm(-0.25 * x + 0.2);
    double gg = std::tanh(0.75 * x - 0.1);
    double go = sigm(0.1 * x + 0.3);
    double c = gi * gg;  // c_prev = 0 so the forget path drops out
    double expected = go * std::tanh(c);
    (void)gf;

    std::vector<Matrix> xs{Matrix::Constant(1, 1, x)};
    std::vector<Matrix> hs = lstm_forward_seq(store, spec, xs);
    REQUIRE(hs[0](0, 0) == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("lstm: sequences in a batch are independent") {
    ParamStore store;
    LstmSpec spec{"lstm", 3, 5};
    spec.register_params(store);
    Rng rng = make_rng(7);
    store.init_uniform(rng);
    spec.bias_init(store);

    Tensor3 in = random_tensor(6, 4, 3, rng);
    Tensor3 out = lstm_forward(store, spec, in);
    // perturb sequence 0 only; outputs of other sequences must not move
    Tensor3 in2 = in;
    in2.slices[0].setRandom();
    Tensor3 out2 = lstm_forward(store, spec, in2);
    for (int i = 1; i < in.d0; ++i)
        REQUIRE((out.slices[i] - out2.slices[i]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lstm gradients match central finite differences") {
    ParamStore store;
    LstmSpec spec{"lstm", 3, 4};
    spec.register_params(store);
    Rng rng = make_rng(11);
    store.init_uniform(rng);
    spec.bias_init(store);

    const int steps = 5, batch = 2;
    std::vector<Matrix> xs, probes;
    for (int t = 0; t < steps; ++t) {
        Matrix x(batch, 3), p(batch, 4);
        x.setRandom();
        p.setRandom();
        xs.push_back(x);
        probes.push_back(p);
    }

    LstmCache cache;
    lstm_probe_loss(store, spec, xs, probes, &cache);
    store.zero_grads();
    std::vector<Matrix> dxs = lstm_backward_seq(store, spec, cache, probes);

    const double h = 1e-5;
    for (const std::string& name : store.names()) {
        Matrix& w = store.value(name);
        const Matrix& g = store.grad(name);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                double keep = w(r, c);
                w(r, c) = keep + h;
                double up = lstm_probe_loss(store, spec, xs, probes);
                w(r, c) = keep - h;
                double dn = lstm_probe_loss(store, spec, xs, probes);
                w(r, c) = keep;
                double fd = (up - dn) / (2 * h);
                REQUIRE(g(r, c) == Catch::Approx(fd).epsilon(1e-4).margin(1e-6));
            }
    }

    // input gradients too
    for (int t = 0; t < steps; ++t)
        for (int r = 0; r < batch; ++r)
            for (int c = 0; c < 3; ++c) {
                double keep = xs[t](r, c);
                xs[t](r, c) = keep + h;
                double up = lstm_probe_loss(store, spec, xs, probes);
                xs[t](r, c) = keep - h;
                double dn = lstm_probe_loss(store, spec, xs, probes);
                xs[t](r, c) = keep;
                REQUIRE(dxs[t](r, c) ==
                        Catch::Approx((up - dn) / (2 * h)).epsilon(1e-4).margin(1e-6));
            }
}

TEST_CASE("sgd step arithmetic") {
    ParamStore store;
    store.add("w", 1, 1) << 1.0;
    store.grad("w") << 2.0;
    store.sgd_step(0.1);
    REQUIRE(store.value("w")(0, 0) == Catch::Approx(0.8));

    store.grad("w").setZero();
    store.sgd_step(0.5);
    REQUIRE(store.value("w")(0, 0) == Catch::Approx(0.8));  // zero gradient

    store.grad("w") << 3.0;
    store.sgd_step(0.0);
    REQUIRE(store.value("w")(0, 0) == Catch::Approx(0.8));  // zero learning rate
}

TEST_CASE("checkpoint round trip with header and shape validation") {
    ParamStore a;
    a.add("w1", 2, 3);
    a.add("lstm.b", 1, 4);
    Rng rng = make_rng(21);
    a.init_uniform(rng);

    std::ostringstream os;
    a.save(os, {{"F", "128"}, {"gamma", "0.9"}});

    ParamStore b;
    b.add("w1", 2, 3);
    b.add("lstm.b", 1, 4);
    std::istringstream is(os.str());
    auto header = b.load(is);
    REQUIRE(header.at("F") == "128");
    REQUIRE(header.at("gamma") == "0.9");
    REQUIRE((a.value("w1") - b.value("w1")).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((a.value("lstm.b") - b.value("lstm.b")).cwiseAbs().maxCoeff() == 0.0);

    ParamStore wrong;
    wrong.add("w1", 3, 2);
    wrong.add("lstm.b", 1, 4);
    std::istringstream is2(os.str());
    REQUIRE_THROWS_AS(wrong.load(is2), std::runtime_error);
}
