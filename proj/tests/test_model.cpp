#include <catch2/catch_amalgamated.hpp>

#include "stim/diffusion.hpp"
#include "stim/model.hpp"

using namespace stim;

namespace {

Eigen::VectorXd random_dist(int n, Rng& rng) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform_real(rng, 0.01, 1.0);
    return v / v.sum();
}

struct BatchFixture {
    std::vector<SpMat> adjs;
    std::vector<Eigen::VectorXd> degs;
    std::vector<Matrix> fms;

    std::vector<StimModel::SnapshotInput> inputs() const {
        std::vector<StimModel::SnapshotInput> batch;
        for (std::size_t i = 0; i < adjs.size(); ++i)
            batch.push_back({&adjs[i], &degs[i], &fms[i], static_cast<int>(i)});
        return batch;
    }
};

BatchFixture random_batch(int b, int n, int c, Rng& rng) {
    BatchFixture fx;
    for (int k = 0; k < b; ++k) {
        SnapshotGraph g(n);
        for (int u = 0; u < n; ++u)
            for (int v = u + 1; v < n; ++v)
                if (uniform_real(rng) < 0.4) g.add_edge(u, v);
        fx.adjs.push_back(build_normalized_adjacency(g));
        fx.degs.push_back(normalized_degree_vector(g));
        Matrix fm(n, c);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) fm(i, j) = uniform_real(rng, 0.0, 1.0);
        fx.fms.push_back(fm);
    }
    return fx;
}

}  // namespace

TEST_CASE("atom support arithmetic") {
    AtomSupport s;  // defaults: [-1, 1], 11 atoms
    REQUIRE(s.dz() == Catch::Approx(0.2));
    REQUIRE(s.atom(0) == -1.0);
    REQUIRE(s.atom(5) == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(s.atom(10) == 1.0);
}

TEST_CASE("expected q") {
    AtomSupport s;
    Eigen::VectorXd u = Eigen::VectorXd::Constant(11, 1.0 / 11.0);
    REQUIRE(expected_q(u, s) == Catch::Approx(0.0).margin(1e-15));

    Eigen::VectorXd top = Eigen::VectorXd::Zero(11);
    top[10] = 1.0;
    REQUIRE(expected_q(top, s) == 1.0);

    Eigen::VectorXd split = Eigen::VectorXd::Zero(11);
    split[0] = split[10] = 0.5;
    REQUIRE(expected_q(split, s) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("project target") {
    AtomSupport s;
    Rng rng = make_rng(5);

    Eigen::VectorXd m = project_target(1.0, true, random_dist(11, rng), 0.9, s);
    REQUIRE(m[10] == Catch::Approx(1.0));
    REQUIRE(m.sum() == Catch::Approx(1.0).margin(1e-12));

    AtomSupport s3{-1.0, 1.0, 3};
    Eigen::VectorXd m3 = project_target(0.5, true, random_dist(3, rng), 0.9, s3);
    REQUIRE(m3[0] == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(m3[1] == Catch::Approx(0.5));
    REQUIRE(m3[2] == Catch::Approx(0.5));

    // gamma = 0, non-terminal, r exactly on an atom -> one-hot there
    Eigen::VectorXd next = random_dist(11, rng);
    Eigen::VectorXd mg = project_target(s.atom(7), false, next, 0.0, s);
    REQUIRE(mg[7] == Catch::Approx(1.0).margin(1e-12));

    // mass conservation and terminal expectation, on and off the grid
    for (int k = 0; k < 200; ++k) {
        double r = uniform_real(rng, -1.5, 1.5);
        bool terminal = (k % 2) == 0;
        Eigen::VectorXd proj = project_target(r, terminal, random_dist(11, rng), 0.9, s);
        REQUIRE(std::abs(proj.sum() - 1.0) <= 1e-12);
        REQUIRE(proj.minCoeff() >= 0.0);
        if (terminal)
            REQUIRE(expected_q(proj, s) ==
                    Catch::Approx(std::clamp(r, -1.0, 1.0)).margin(1e-12));
    }
}

TEST_CASE("embedding: zero weights give zero embeddings") {
    StimHyper hy;
    hy.F = 8;
    hy.E = 4;
    StimModel model(hy, 1);
    for (const auto& name : model.params().names()) model.params().value(name).setZero();
    Rng rng = make_rng(2);
    BatchFixture fx = random_batch(1, 10, hy.C, rng);
    Matrix h = model.embed(fx.adjs[0], fx.degs[0], fx.fms[0]);
    REQUIRE(h.isZero());
}

TEST_CASE("embedding: single-node hand evaluation") {
    StimHyper hy;
    hy.C = 2;
    hy.F = 2;
    StimModel model(hy, 1);
    Matrix& w1 = model.params().value("w1");
    Matrix& w2 = model.params().value("w2");
    Matrix& w3 = model.params().value("w3");
    w1 << 0.3, -0.2, 0.1, 0.5;  // column sums: (0.4, 0.3)
    w2 << 1.0, 0.0, 0.0, 1.0;
    w3.setZero();

    SnapshotGraph g(1);
    SpMat adj = build_normalized_adjacency(g);
    Eigen::VectorXd deg = normalized_degree_vector(g);  // [1.0]
    Matrix fm = Matrix::Zero(1, 2);

    // X1 = d * colsum(W1) = (0.4, 0.3); H0 = relu(X1) = (0.4, 0.3)
    // H1 = relu(A H0 W2 + X1) = relu(H0 + X1) = (0.8, 0.6); H2 = (1.2, 0.9)
    Matrix h = model.embed(adj, deg, fm);
    REQUIRE(h(0, 0) == Catch::Approx(1.2));
    REQUIRE(h(0, 1) == Catch::Approx(0.9));
}

TEST_CASE("embedding and forward respect automorphisms") {
    StimHyper hy;
    hy.F = 8;
    hy.E = 4;
    hy.support.n_a = 5;
    StimModel model(hy, 3);

    // 4-cycle: all nodes automorphic; constant features
    SnapshotGraph g(4);
    g.add_edge(0, 1);
    g.add_edge(1, 2);
    g.add_edge(2, 3);
    g.add_edge(3, 0);
    BatchFixture fx;
    for (int t = 0; t < 3; ++t) {
        fx.adjs.push_back(build_normalized_adjacency(g));
        fx.degs.push_back(normalized_degree_vector(g));
        fx.fms.push_back(Matrix::Constant(4, hy.C, 0.25));
    }
    Matrix h = model.embed(fx.adjs[0], fx.degs[0], fx.fms[0]);
    for (int i = 1; i < 4; ++i)
        REQUIRE((h.row(i) - h.row(0)).cwiseAbs().maxCoeff() < 1e-12);

    Tensor3 qall = model.forward(fx.inputs());
    REQUIRE(qall.d0 == 3);
    REQUIRE(qall.d1 == 4);
    REQUIRE(qall.d2 == 5);
    for (const Matrix& q : qall.slices) {
        for (int i = 0; i < 4; ++i) {
            REQUIRE(q.row(i).sum() == Catch::Approx(1.0).margin(1e-9));
            REQUIRE((q.row(i) - q.row(0)).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("forward: output distributions are valid under fuzzing") {
    Rng rng = make_rng(17);
    for (int rep = 0; rep < 200; ++rep) {
        StimHyper hy;
        hy.F = 6;
        hy.E = 3;
        hy.support.n_a = 7;
        StimModel model(hy, rng());
        int n = uniform_int(rng, 2, 50);
        BatchFixture fx = random_batch(uniform_int(rng, 1, 4), n, hy.C, rng);
        Tensor3 qall = model.forward(fx.inputs());
        for (const Matrix& q : qall.slices)
            for (Eigen::Index i = 0; i < q.rows(); ++i) {
                REQUIRE(q.row(i).sum() == Catch::Approx(1.0).margin(1e-9));
                REQUIRE(q.row(i).minCoeff() >= 0.0);
            }
    }
}

TEST_CASE("forward: contiguity of snapshot steps") {
    StimHyper hy;
    hy.F = 4;
    hy.E = 2;
    StimModel model(hy, 1);
    Rng rng = make_rng(9);
    BatchFixture fx = random_batch(3, 5, hy.C, rng);

    auto batch = fx.inputs();
    batch[2].step = 5;  // gap
    REQUIRE_THROWS_AS(model.forward(batch), std::invalid_argument);

    // front padding (repeat of the earliest snapshot) is fine
    batch = fx.inputs();
    batch[0].step = 0;
    batch[1].step = 0;
    batch[2].step = 1;
    REQUIRE_NOTHROW(model.forward(batch));
}

TEST_CASE("loss for batch") {
    StimHyper hy;
    hy.F = 6;
    hy.E = 3;
    hy.support.n_a = 5;
    StimModel model(hy, 7);
    Rng rng = make_rng(13);
    BatchFixture fx = random_batch(2, 6, hy.C, rng);
    Tensor3 qall = model.forward(fx.inputs());

    // targets equal to selected predictions -> loss is the mean entropy
    std::vector<int> chosen{1, 4};
    std::vector<Eigen::VectorXd> targets{qall.slices[0].row(1).transpose(),
                                         qall.slices[1].row(4).transpose()};
    double expect = 0.5 * (cross_entropy(targets[0], targets[0]) +
                           cross_entropy(targets[1], targets[1]));
    REQUIRE(model.loss_for_batch(qall, chosen, targets) == Catch::Approx(expect));

    // independently computed mean of two cross entropies
    std::vector<Eigen::VectorXd> rand_targets{random_dist(5, rng), random_dist(5, rng)};
    double manual =
        0.5 * (cross_entropy(rand_targets[0], qall.slices[0].row(1).transpose()) +
               cross_entropy(rand_targets[1], qall.slices[1].row(4).transpose()));
    REQUIRE(model.loss_for_batch(qall, chosen, rand_targets) == Catch::Approx(manual));

    // B = 1 reduces to a single cross entropy
    Tensor3 single(1, 6, 5);
    single.slices[0] = qall.slices[0];
    REQUIRE(model.loss_for_batch(single, {1}, {rand_targets[0]}) ==
            Catch::Approx(cross_entropy(rand_targets[0], qall.slices[0].row(1).transpose())));

    // out-of-range action is a contract error
    REQUIRE_THROWS_AS(model.loss_for_batch(qall, {1, 99}, rand_targets),
                      std::invalid_argument);
}

TEST_CASE("full-model gradients match central finite differences") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        StimHyper hy;
        hy.F = 4;
        hy.E = 3;
        hy.support.n_a = 5;
        StimModel model(hy, seed);
        Rng rng = make_rng(100 + seed);
        BatchFixture fx = random_batch(2, 6, hy.C, rng);
        auto batch = fx.inputs();
        std::vector<int> chosen{uniform_int(rng, 0, 5), uniform_int(rng, 0, 5)};
        std::vector<Eigen::VectorXd> targets{random_dist(5, rng), random_dist(5, rng)};

        StimModel::ForwardCache cache;
        model.forward(batch, &cache);
        model.params().zero_grads();
        model.backward(cache, chosen, targets);

        const double h = 1e-5;
        double max_rel = 0.0;
        for (const auto& name : model.params().names()) {
            Matrix& w = model.params().value(name);
            const Matrix& g = model.params().grad(name);
            for (Eigen::Index r = 0; r < w.rows(); ++r)
                for (Eigen::Index c = 0; c < w.cols(); ++c) {
                    double keep = w(r, c);
                    w(r, c) = keep + h;
                    double up = model.loss_for_batch(model.forward(batch), chosen, targets);
                    w(r, c) = keep - h;
                    double dn = model.loss_for_batch(model.forward(batch), chosen, targets);
                    w(r, c) = keep;
                    double fd = (up - dn) / (2 * h);
                    double err = std::abs(g(r, c) - fd) /
                                 std::max({std::abs(fd), std::abs(g(r, c)), 1e-6});
                    max_rel = std::max(max_rel, err);
                }
        }
        INFO("seed " << seed);
        REQUIRE(max_rel <= 1e-4);
    }
}

TEST_CASE("gradient scale linearity and disconnected parameters") {
    StimHyper hy;
    hy.F = 4;
    hy.E = 3;
    hy.support.n_a = 5;
    StimModel model(hy, 11);
    Rng rng = make_rng(19);
    BatchFixture fx = random_batch(2, 5, hy.C, rng);
    std::vector<int> chosen{0, 3};
    std::vector<Eigen::VectorXd> targets{random_dist(5, rng), random_dist(5, rng)};

    StimModel::ForwardCache cache;
    model.forward(fx.inputs(), &cache);
    model.params().zero_grads();
    model.backward(cache, chosen, targets);
    Matrix g1 = model.params().grad("w7");

    // running backward twice doubles the accumulated gradient (loss scale x2)
    model.backward(cache, chosen, targets);
    REQUIRE((model.params().grad("w7") - 2.0 * g1).cwiseAbs().maxCoeff() < 1e-12);

    // a no-op-only batch contributes nothing
    model.params().zero_grads();
    model.backward(cache, {-1, -1}, targets);
    for (const auto& name : model.params().names())
        REQUIRE(model.params().grad(name).isZero());
}

TEST_CASE("model checkpoint round trip validates hyper header") {
    StimHyper hy;
    hy.F = 6;
    hy.E = 3;
    StimModel model(hy, 23);
    auto path = (std::filesystem::temp_directory_path() / "stim_model_ckpt.txt").string();
    model.save(path);
    StimModel back = StimModel::load(path);
    REQUIRE(back.hyper().F == 6);
    REQUIRE(back.hyper().E == 3);
    for (const auto& name : model.params().names())
        REQUIRE((model.params().value(name) - back.params().value(name)).cwiseAbs().maxCoeff() ==
                0.0);
}
