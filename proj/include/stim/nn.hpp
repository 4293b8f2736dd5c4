#ifndef STIM_NN_HPP
#define STIM_NN_HPP

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "stim/rng.hpp"

namespace stim {

using Matrix = Eigen::MatrixXd;

/// Dense rank-3 tensor stored as slices along axis 0.
struct Tensor3 {
    int d0 = 0, d1 = 0, d2 = 0;
    std::vector<Matrix> slices;  // d0 matrices of shape d1 x d2

    Tensor3() = default;
    Tensor3(int a, int b, int c)
        : d0(a), d1(b), d2(c), slices(static_cast<std::size_t>(a), Matrix::Zero(b, c)) {}
};

/// Swaps the first two axes: (a, b, k) -> (b, a, k). Involution.
inline Tensor3 transpose01(const Tensor3& x) {
    Tensor3 out(x.d1, x.d0, x.d2);
    for (int i = 0; i < x.d0; ++i)
        for (int j = 0; j < x.d1; ++j)
            out.slices[static_cast<std::size_t>(j)].row(i) =
                x.slices[static_cast<std::size_t>(i)].row(j);
    return out;
}

inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

/// Gradient mask of relu evaluated at pre-activation `pre`.
inline Matrix relu_backward(const Matrix& pre, const Matrix& dout) {
    return (pre.array() > 0.0).cast<double>() * dout.array();
}

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        Eigen::ArrayXd row = x.row(r).array() - x.row(r).maxCoeff();
        Eigen::ArrayXd e = row.exp();
        out.row(r) = (e / e.sum()).matrix();
    }
    return out;
}

/// -sum m_i log rho_i. Both arguments must be probability vectors.
inline double cross_entropy(const Eigen::VectorXd& target, const Eigen::VectorXd& predicted) {
    if (target.size() != predicted.size())
        throw std::invalid_argument("cross_entropy: size mismatch");
    if (std::abs(target.sum() - 1.0) > 1e-6 || std::abs(predicted.sum() - 1.0) > 1e-6)
        throw std::invalid_argument("cross_entropy: inputs must be normalized");
    double loss = 0.0;
    for (Eigen::Index i = 0; i < target.size(); ++i)
        if (target[i] != 0.0) loss -= target[i] * std::log(std::max(predicted[i], 1e-12));
    return loss;
}

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

/// Named parameter matrices with parallel gradient slots. Owns everything the
/// optimizer and the checkpoint format see.
class ParamStore {
  public:
    Matrix& add(const std::string& name, int rows, int cols) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        index_[name] = names_.size();
        names_.push_back(name);
        values_.emplace_back(Matrix::Zero(rows, cols));
        grads_.emplace_back(Matrix::Zero(rows, cols));
        return values_.back();
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Matrix& value(const std::string& name) { return values_[at(name)]; }
    const Matrix& value(const std::string& name) const { return values_[at(name)]; }
    Matrix& grad(const std::string& name) { return grads_[at(name)]; }
    const Matrix& grad(const std::string& name) const { return grads_[at(name)]; }

    const std::vector<std::string>& names() const { return names_; }

    void zero_grads() {
        for (Matrix& g : grads_) g.setZero();
    }

    /// theta <- theta - alpha * grad, elementwise, for every parameter.
    void sgd_step(double alpha) {
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= alpha * grads_[i];
    }

    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], fan_in = rows.
    void init_uniform(Rng& rng) {
        for (Matrix& w : values_) {
            double bound = 1.0 / std::sqrt(double(w.rows()));
            for (Eigen::Index r = 0; r < w.rows(); ++r)
                for (Eigen::Index c = 0; c < w.cols(); ++c)
                    w(r, c) = uniform_real(rng, -bound, bound);
        }
    }

    // Checkpoint format: "stim-checkpoint 1", header key/value lines, a
    // "params" separator, then "name rows cols" followed by row-major values.
    void save(std::ostream& os, const std::map<std::string, std::string>& header = {}) const {
        os << "stim-checkpoint 1\n";
        os.precision(17);
        for (const auto& [k, v] : header) os << k << ' ' << v << '\n';
        os << "params\n";
        for (std::size_t i = 0; i < names_.size(); ++i) {
            const Matrix& w = values_[i];
            os << names_[i] << ' ' << w.rows() << ' ' << w.cols() << '\n';
            for (Eigen::Index r = 0; r < w.rows(); ++r) {
                for (Eigen::Index c = 0; c < w.cols(); ++c) {
                    if (c) os << ' ';
                    os << w(r, c);
                }
                os << '\n';
            }
        }
    }

    void save(const std::string& path, const std::map<std::string, std::string>& header = {}) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot open for writing: " + path);
        save(os, header);
    }

    /// Loads values into the already-constructed store; shapes must match.
    /// Returns the header key/value pairs.
    std::map<std::string, std::string> load(std::istream& is) {
        std::string magic;
        int version = 0;
        if (!(is >> magic >> version) || magic != "stim-checkpoint" || version != 1)
            throw std::runtime_error("bad checkpoint magic/version");
        std::map<std::string, std::string> header;
        std::string key;
        while (is >> key && key != "params") {
            std::string val;
            if (!(is >> val)) throw std::runtime_error("truncated checkpoint header");
            header[key] = val;
        }
        std::size_t seen = 0;
        std::string name;
        while (is >> name) {
            int rows, cols;
            if (!(is >> rows >> cols)) throw std::runtime_error("truncated checkpoint");
            if (!has(name)) throw std::runtime_error("unknown parameter in checkpoint: " + name);
            Matrix& w = value(name);
            if (w.rows() != rows || w.cols() != cols)
                throw std::runtime_error("shape mismatch for parameter " + name);
            for (Eigen::Index r = 0; r < rows; ++r)
                for (Eigen::Index c = 0; c < cols; ++c)
                    if (!(is >> w(r, c))) throw std::runtime_error("truncated checkpoint values");
            ++seen;
        }
        if (seen != names_.size())
            throw std::runtime_error("checkpoint is missing parameters");
        return header;
    }

    std::map<std::string, std::string> load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
        return load(is);
    }

  private:
    std::size_t at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return it->second;
    }

    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<Matrix> values_;
    std::vector<Matrix> grads_;
};

// ---------------------------------------------------------------------------
// LSTM (standard gating, no peepholes). Parameters live in a ParamStore under
// "<prefix>.wx" (in x 4h), "<prefix>.wh" (h x 4h), "<prefix>.b" (1 x 4h) with
// gate block order [input, forget, cell, output].
// ---------------------------------------------------------------------------

struct LstmSpec {
    std::string prefix;
    int input = 0;
    int hidden = 0;

    void register_params(ParamStore& store) const {
        store.add(prefix + ".wx", input, 4 * hidden);
        store.add(prefix + ".wh", hidden, 4 * hidden);
        store.add(prefix + ".b", 1, 4 * hidden);
    }

    /// Forget-gate bias 1.0, everything else as initialized.
    void bias_init(ParamStore& store) const {
        Matrix& b = store.value(prefix + ".b");
        b.setZero();
        b.block(0, hidden, 1, hidden).setConstant(1.0);
    }
};

struct LstmCache {
    std::vector<Matrix> x, gi, gf, gg, go, c, h;
};

namespace detail {
inline Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return 1.0 / (1.0 + (-z).exp()); }
}

/// Time-major forward: xs[t] is (batch x input); returns hs[t] (batch x hidden).
/// Hidden and cell states start at zero; sequences never share state.
inline std::vector<Matrix> lstm_forward_seq(const ParamStore& store, const LstmSpec& spec,
                                            const std::vector<Matrix>& xs,
                                            LstmCache* cache = nullptr) {
    const Matrix& wx = store.value(spec.prefix + ".wx");
    const Matrix& wh = store.value(spec.prefix + ".wh");
    const Matrix& b = store.value(spec.prefix + ".b");
    const int h = spec.hidden;
    if (!xs.empty() && xs[0].cols() != spec.input)
        throw std::invalid_argument("lstm input width mismatch");

    const Eigen::Index batch = xs.empty() ? 0 : xs[0].rows();
    Matrix hprev = Matrix::Zero(batch, h);
    Matrix cprev = Matrix::Zero(batch, h);
    std::vector<Matrix> out;
    out.reserve(xs.size());
    for (const Matrix& x : xs) {
        if (x.rows() != batch) throw std::invalid_argument("lstm ragged batch");
        Matrix z = x * wx + hprev * wh;
        z.rowwise() += b.row(0);
        Eigen::ArrayXXd gi = detail::sigmoid(z.block(0, 0, batch, h).array());
        Eigen::ArrayXXd gf = detail::sigmoid(z.block(0, h, batch, h).array());
        Eigen::ArrayXXd gg = z.block(0, 2 * h, batch, h).array().tanh();
        Eigen::ArrayXXd go = detail::sigmoid(z.block(0, 3 * h, batch, h).array());
        Matrix c = (gf * cprev.array() + gi * gg).matrix();
        Matrix hs = (go * c.array().tanh()).matrix();
        if (cache) {
            cache->x.push_back(x);
            cache->gi.push_back(gi.matrix());
            cache->gf.push_back(gf.matrix());
            cache->gg.push_back(gg.matrix());
            cache->go.push_back(go.matrix());
            cache->c.push_back(c);
            cache->h.push_back(hs);
        }
        out.push_back(hs);
        hprev = hs;
        cprev = c;
    }
    return out;
}

/// BPTT through a cached forward pass. douts[t] is the loss gradient on the
/// t-th hidden output. Accumulates parameter gradients into the store and
/// returns per-timestep input gradients.
inline std::vector<Matrix> lstm_backward_seq(ParamStore& store, const LstmSpec& spec,
                                             const LstmCache& cache,
                                             const std::vector<Matrix>& douts) {
    const Matrix& wx = store.value(spec.prefix + ".wx");
    const Matrix& wh = store.value(spec.prefix + ".wh");
    Matrix& dwx = store.grad(spec.prefix + ".wx");
    Matrix& dwh = store.grad(spec.prefix + ".wh");
    Matrix& db = store.grad(spec.prefix + ".b");
    const int h = spec.hidden;
    const int steps = static_cast<int>(cache.x.size());
    if (static_cast<int>(douts.size()) != steps)
        throw std::invalid_argument("lstm backward: gradient count mismatch");

    const Eigen::Index batch = steps ? cache.x[0].rows() : 0;
    std::vector<Matrix> dxs(static_cast<std::size_t>(steps));
    Matrix dh_next = Matrix::Zero(batch, h);
    Matrix dc_next = Matrix::Zero(batch, h);
    for (int t = steps - 1; t >= 0; --t) {
        const auto& gi = cache.gi[static_cast<std::size_t>(t)].array();
        const auto& gf = cache.gf[static_cast<std::size_t>(t)].array();
        const auto& gg = cache.gg[static_cast<std::size_t>(t)].array();
        const auto& go = cache.go[static_cast<std::size_t>(t)].array();
        const auto& c = cache.c[static_cast<std::size_t>(t)].array();
        Eigen::ArrayXXd cprev = Eigen::ArrayXXd::Zero(batch, h);
        if (t > 0) cprev = cache.c[static_cast<std::size_t>(t - 1)].array();

        Eigen::ArrayXXd dh = douts[static_cast<std::size_t>(t)].array() + dh_next.array();
        Eigen::ArrayXXd tc = c.tanh();
        Eigen::ArrayXXd dgo = dh * tc;
        Eigen::ArrayXXd dc = dh * go * (1.0 - tc.square()) + dc_next.array();
        Eigen::ArrayXXd dgi = dc * gg;
        Eigen::ArrayXXd dgg = dc * gi;
        Eigen::ArrayXXd dgf = dc * cprev;
        dc_next = (dc * gf).matrix();

        Matrix dz(batch, 4 * h);
        dz.block(0, 0, batch, h) = (dgi * gi * (1.0 - gi)).matrix();
        dz.block(0, h, batch, h) = (dgf * gf * (1.0 - gf)).matrix();
        dz.block(0, 2 * h, batch, h) = (dgg * (1.0 - gg.square())).matrix();
        dz.block(0, 3 * h, batch, h) = (dgo * go * (1.0 - go)).matrix();

        dwx += cache.x[static_cast<std::size_t>(t)].transpose() * dz;
        if (t > 0) dwh += cache.h[static_cast<std::size_t>(t - 1)].transpose() * dz;
        db += dz.colwise().sum();
        dxs[static_cast<std::size_t>(t)] = dz * wx.transpose();
        dh_next = dz * wh.transpose();
    }
    return dxs;
}

/// Batch-first convenience wrapper: input (b x l x m) -> output (b x l x h).
inline Tensor3 lstm_forward(const ParamStore& store, const LstmSpec& spec, const Tensor3& in,
                            LstmCache* cache = nullptr) {
    if (in.d2 != spec.input) throw std::invalid_argument("lstm input width mismatch");
    Tensor3 time_major = transpose01(in);  // l slices of (b x m)
    std::vector<Matrix> hs = lstm_forward_seq(store, spec, time_major.slices, cache);
    Tensor3 out(in.d1, in.d0, spec.hidden);
    out.slices = std::move(hs);
    return transpose01(out);  // back to (b x l x h)
}

}  // namespace stim

#endif  // STIM_NN_HPP
