#ifndef STIM_MODEL_HPP
#define STIM_MODEL_HPP

#include <map>
#include <string>
#include <vector>

#include "stim/graph.hpp"
#include "stim/nn.hpp"

namespace stim {

/// Discretized return support of the categorical algorithm.
struct AtomSupport {
    double v_min = -1.0;
    double v_max = 1.0;
    int n_a = 11;

    double dz() const { return (v_max - v_min) / (n_a - 1); }
    double atom(int i) const { return v_min + i * dz(); }
};

struct StimHyper {
    int B = 8;    // batch of contiguous snapshots
    int C = 4;    // raw features
    int F = 128;  // embedding width
    int E = 32;   // flow-2 width
    int L = 2;    // embedding layers
    double gamma = 0.9;
    AtomSupport support;
};

inline double expected_q(const Eigen::VectorXd& dist, const AtomSupport& support) {
    double q = 0.0;
    for (int i = 0; i < support.n_a; ++i) q += support.atom(i) * dist[i];
    return q;
}

/// Categorical Bellman backup: maps each atom through r + gamma*z (clamped to
/// the support) and splits its mass linearly between the bracketing atoms.
inline Eigen::VectorXd project_target(double reward, bool terminal,
                                      const Eigen::VectorXd& next_dist, double gamma,
                                      const AtomSupport& support) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(support.n_a);
    const double dz = support.dz();
    for (int j = 0; j < support.n_a; ++j) {
        double mass = terminal ? (j == 0 ? 1.0 : 0.0) : next_dist[j];
        if (mass == 0.0) continue;
        double tz = reward + (terminal ? 0.0 : gamma * support.atom(j));
        tz = std::clamp(tz, support.v_min, support.v_max);
        double pos = std::clamp((tz - support.v_min) / dz, 0.0, double(support.n_a - 1));
        int lo = static_cast<int>(std::floor(pos));
        int hi = static_cast<int>(std::ceil(pos));
        if (lo == hi) {
            m[lo] += mass;
        } else {
            m[lo] += mass * (hi - pos);
            m[hi] += mass * (pos - lo);
        }
    }
    return m;
}

/// The STIM network. A fixed-topology pipeline with hand-derived reverse-mode
/// gradients; see forward() for the stage list.
class StimModel {
  public:
    struct SnapshotInput {
        const SpMat* adj;          // normalized adjacency with self-loops
        const Eigen::VectorXd* deg;  // its row sums
        const Matrix* features;    // N x C raw features
        int step = -1;             // snapshot index, -1 to skip contiguity checks
    };

    struct ForwardCache {
        std::vector<Matrix> pre0, x13;                   // per snapshot
        std::vector<std::vector<Matrix>> pre, prop, hidden;  // [b][layer]
        LstmCache lstm1, lstm2;
        std::vector<Matrix> concat, pre4, reluced, mixed, m2, m3;
        Tensor3 qall;
        std::vector<SnapshotInput> inputs;
    };

    explicit StimModel(const StimHyper& hyper, std::uint64_t init_seed = 0) : hyper_(hyper) {
        params_.add("w1", hyper.F, hyper.F);
        params_.add("w2", hyper.F, hyper.F);
        params_.add("w3", hyper.C, hyper.F);
        params_.add("w4", hyper.F + hyper.E, hyper.F);
        params_.add("w5", hyper.F, hyper.F);
        params_.add("w6", hyper.F, hyper.F);
        params_.add("w7", hyper.F, hyper.support.n_a);
        lstm1_ = LstmSpec{"lstm1", hyper.F, hyper.F};
        lstm2_ = LstmSpec{"lstm2", hyper.C, hyper.E};
        lstm1_.register_params(params_);
        lstm2_.register_params(params_);
        Rng rng = make_rng(init_seed);
        params_.init_uniform(rng);
        lstm1_.bias_init(params_);
        lstm2_.bias_init(params_);
    }

    const StimHyper& hyper() const { return hyper_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Structure2Vec-variant embedding of one snapshot:
    /// H^0 = relu(X1 + X3), H^{l+1} = relu((A H^l) W2 + X1 + X3), returns H^L.
    /// X1 broadcasts the degree vector across F columns before applying W1.
    Matrix embed(const SpMat& adj, const Eigen::VectorXd& deg, const Matrix& fm) const {
        Matrix x13 = embed_inputs(deg, fm);
        Matrix h = relu(x13);
        const Matrix& w2 = params_.value("w2");
        for (int l = 0; l < hyper_.L; ++l) h = relu((adj * h) * w2 + x13);
        return h;
    }

    /// Full pipeline over B contiguous snapshots -> Q_all (B x N x n_a).
    Tensor3 forward(const std::vector<SnapshotInput>& batch, ForwardCache* cache = nullptr) const {
        const int b_count = static_cast<int>(batch.size());
        if (b_count == 0) throw std::invalid_argument("empty snapshot batch");
        check_contiguity(batch);
        const int n = static_cast<int>(batch[0].features->rows());
        const Matrix& w2 = params_.value("w2");
        const Matrix& w4 = params_.value("w4");
        const Matrix& w5 = params_.value("w5");
        const Matrix& w6 = params_.value("w6");
        const Matrix& w7 = params_.value("w7");

        // stage 1: per-snapshot graph embedding
        std::vector<Matrix> embedded(static_cast<std::size_t>(b_count));
        for (int b = 0; b < b_count; ++b) {
            const SnapshotInput& in = batch[static_cast<std::size_t>(b)];
            if (in.features->rows() != n || in.features->cols() != hyper_.C)
                throw std::invalid_argument("feature matrix shape mismatch");
            Matrix x13 = embed_inputs(*in.deg, *in.features);
            Matrix h = relu(x13);
            std::vector<Matrix> pres, props, hiddens;
            if (cache) {
                cache->pre0.push_back(x13);
                hiddens.push_back(h);
            }
            for (int l = 0; l < hyper_.L; ++l) {
                Matrix prop = *in.adj * h;
                Matrix pre = prop * w2 + x13;
                h = relu(pre);
                if (cache) {
                    props.push_back(std::move(prop));
                    pres.push_back(std::move(pre));
                    hiddens.push_back(h);
                }
            }
            if (cache) {
                cache->x13.push_back(std::move(x13));
                cache->pre.push_back(std::move(pres));
                cache->prop.push_back(std::move(props));
                cache->hidden.push_back(std::move(hiddens));
            }
            embedded[static_cast<std::size_t>(b)] = std::move(h);
        }

        // stage 2/3: temporal flows. Time runs over the B snapshots; each
        // node is one sequence in the LSTM batch, so the embedding stack is
        // already the transposed N x B x * layout.
        std::vector<Matrix> fm_seq;
        fm_seq.reserve(static_cast<std::size_t>(b_count));
        for (const auto& in : batch) fm_seq.push_back(*in.features);
        std::vector<Matrix> flow1 =
            lstm_forward_seq(params_, lstm1_, embedded, cache ? &cache->lstm1 : nullptr);
        std::vector<Matrix> flow2 =
            lstm_forward_seq(params_, lstm2_, fm_seq, cache ? &cache->lstm2 : nullptr);

        // stage 4-8: concat, second embedding, categorical head
        Tensor3 qall(b_count, n, hyper_.support.n_a);
        for (int b = 0; b < b_count; ++b) {
            Matrix concat(n, hyper_.F + hyper_.E);
            concat << flow1[static_cast<std::size_t>(b)], flow2[static_cast<std::size_t>(b)];
            Matrix pre4 = concat * w4;
            Matrix r = relu(pre4);
            Matrix m1 = *batch[static_cast<std::size_t>(b)].adj * r;
            Matrix m2 = m1 * w5;
            Matrix m3 = m2 * w6;
            qall.slices[static_cast<std::size_t>(b)] = softmax_rows(m3 * w7);
            if (cache) {
                cache->concat.push_back(std::move(concat));
                cache->pre4.push_back(std::move(pre4));
                cache->reluced.push_back(std::move(r));
                cache->mixed.push_back(std::move(m1));
                cache->m2.push_back(std::move(m2));
                cache->m3.push_back(std::move(m3));
            }
        }
        if (cache) {
            cache->qall = qall;
            cache->inputs = batch;
        }
        return qall;
    }

    /// Mean cross-entropy over the selected (state, action) rows. Rows with
    /// chosen < 0 (no-op steps) carry no loss.
    double loss_for_batch(const Tensor3& qall, const std::vector<int>& chosen,
                          const std::vector<Eigen::VectorXd>& targets) const {
        if (static_cast<int>(chosen.size()) != qall.d0 || chosen.size() != targets.size())
            throw std::invalid_argument("loss batch size mismatch");
        double loss = 0.0;
        int valid = 0;
        for (int b = 0; b < qall.d0; ++b) {
            if (chosen[static_cast<std::size_t>(b)] < 0) continue;
            if (chosen[static_cast<std::size_t>(b)] >= qall.d1)
                throw std::invalid_argument("chosen node out of range");
            Eigen::VectorXd rho = qall.slices[static_cast<std::size_t>(b)]
                                      .row(chosen[static_cast<std::size_t>(b)])
                                      .transpose();
            loss += cross_entropy(targets[static_cast<std::size_t>(b)], rho);
            ++valid;
        }
        return valid ? loss / valid : 0.0;
    }

    /// Reverse-mode gradients of loss_for_batch through the whole pipeline.
    /// Accumulates into the parameter gradient slots.
    void backward(const ForwardCache& cache, const std::vector<int>& chosen,
                  const std::vector<Eigen::VectorXd>& targets) {
        const int b_count = cache.qall.d0;
        const int n = cache.qall.d1;
        int valid = 0;
        for (int c : chosen)
            if (c >= 0) ++valid;
        if (!valid) return;

        const Matrix& w2 = params_.value("w2");
        const Matrix& w4 = params_.value("w4");
        const Matrix& w5 = params_.value("w5");
        const Matrix& w6 = params_.value("w6");
        const Matrix& w7 = params_.value("w7");

        std::vector<Matrix> d_flow1(static_cast<std::size_t>(b_count)),
            d_flow2(static_cast<std::size_t>(b_count));
        for (int b = 0; b < b_count; ++b) {
            const SpMat& adj = *cache.inputs[static_cast<std::size_t>(b)].adj;
            // softmax + cross-entropy on the selected row
            Matrix dlogits = Matrix::Zero(n, hyper_.support.n_a);
            int sel = chosen[static_cast<std::size_t>(b)];
            if (sel >= 0)
                dlogits.row(sel) =
                    (cache.qall.slices[static_cast<std::size_t>(b)].row(sel) -
                     targets[static_cast<std::size_t>(b)].transpose()) /
                    valid;

            params_.grad("w7") += cache.m3[static_cast<std::size_t>(b)].transpose() * dlogits;
            Matrix dm3 = dlogits * w7.transpose();
            params_.grad("w6") += cache.m2[static_cast<std::size_t>(b)].transpose() * dm3;
            Matrix dm2 = dm3 * w6.transpose();
            params_.grad("w5") += cache.mixed[static_cast<std::size_t>(b)].transpose() * dm2;
            Matrix dm1 = dm2 * w5.transpose();
            Matrix dr = adj * dm1;  // adjacency is symmetric
            Matrix dpre4 = relu_backward(cache.pre4[static_cast<std::size_t>(b)], dr);
            params_.grad("w4") +=
                cache.concat[static_cast<std::size_t>(b)].transpose() * dpre4;
            Matrix dconcat = dpre4 * w4.transpose();
            d_flow1[static_cast<std::size_t>(b)] = dconcat.leftCols(hyper_.F);
            d_flow2[static_cast<std::size_t>(b)] = dconcat.rightCols(hyper_.E);
        }

        std::vector<Matrix> d_embedded = lstm_backward_seq(params_, lstm1_, cache.lstm1, d_flow1);
        lstm_backward_seq(params_, lstm2_, cache.lstm2, d_flow2);  // features are inputs

        for (int b = 0; b < b_count; ++b) {
            const SnapshotInput& in = cache.inputs[static_cast<std::size_t>(b)];
            Matrix dh = std::move(d_embedded[static_cast<std::size_t>(b)]);
            Matrix dx13 = Matrix::Zero(n, hyper_.F);
            for (int l = hyper_.L - 1; l >= 0; --l) {
                Matrix dpre = relu_backward(
                    cache.pre[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)], dh);
                params_.grad("w2") +=
                    cache.prop[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)]
                        .transpose() * dpre;
                dh = *in.adj * (dpre * w2.transpose());
                dx13 += dpre;
            }
            dx13 += relu_backward(cache.pre0[static_cast<std::size_t>(b)], dh);
            params_.grad("w3") += in.features->transpose() * dx13;
            // X1 = (d 1^T) W1: every W1 row sees the same gradient d^T dX13
            Eigen::RowVectorXd row = in.deg->transpose() * dx13;
            params_.grad("w1") += row.replicate(hyper_.F, 1);
        }
    }

    void save(const std::string& path,
              const std::map<std::string, std::string>& extra = {}) const {
        std::map<std::string, std::string> header{
            {"B", std::to_string(hyper_.B)},       {"C", std::to_string(hyper_.C)},
            {"F", std::to_string(hyper_.F)},       {"E", std::to_string(hyper_.E)},
            {"L", std::to_string(hyper_.L)},       {"gamma", format_double(hyper_.gamma)},
            {"v_min", format_double(hyper_.support.v_min)},
            {"v_max", format_double(hyper_.support.v_max)},
            {"n_a", std::to_string(hyper_.support.n_a)}};
        header.insert(extra.begin(), extra.end());
        params_.save(path, header);
    }

    /// Loads a checkpoint; the hyperparameter header must describe this model.
    /// Extra header entries (beyond the hyperparameters) land in header_out.
    static StimModel load(const std::string& path,
                          std::map<std::string, std::string>* header_out = nullptr) {
        // first pass: header only, to size the parameter store
        std::map<std::string, std::string> header = read_header(path);
        StimHyper hyper;
        hyper.B = std::stoi(header.at("B"));
        hyper.C = std::stoi(header.at("C"));
        hyper.F = std::stoi(header.at("F"));
        hyper.E = std::stoi(header.at("E"));
        hyper.L = std::stoi(header.at("L"));
        hyper.gamma = std::stod(header.at("gamma"));
        hyper.support.v_min = std::stod(header.at("v_min"));
        hyper.support.v_max = std::stod(header.at("v_max"));
        hyper.support.n_a = std::stoi(header.at("n_a"));
        StimModel model(hyper);
        model.params_.load(path);
        if (header_out) *header_out = header;
        return model;
    }

  private:
    static std::string format_double(double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    }

    static std::map<std::string, std::string> read_header(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
        std::string magic;
        int version;
        is >> magic >> version;
        std::map<std::string, std::string> header;
        std::string key, val;
        while (is >> key && key != "params" && (is >> val)) header[key] = val;
        return header;
    }

    Matrix embed_inputs(const Eigen::VectorXd& deg, const Matrix& fm) const {
        const Matrix& w1 = params_.value("w1");
        const Matrix& w3 = params_.value("w3");
        Eigen::RowVectorXd w1_colsum = w1.colwise().sum();
        return deg * w1_colsum + fm * w3;
    }

    static void check_contiguity(const std::vector<SnapshotInput>& batch) {
        // allow front padding (repeats of the earliest snapshot) followed by
        // strictly consecutive steps
        std::size_t i = 1;
        while (i < batch.size() && batch[i].step == batch[0].step) ++i;
        for (; i < batch.size(); ++i) {
            if (batch[i].step < 0 || batch[i - 1].step < 0) continue;
            if (batch[i].step != batch[i - 1].step + 1)
                throw std::invalid_argument("snapshot batch is not contiguous");
        }
    }

    StimHyper hyper_;
    ParamStore params_;
    LstmSpec lstm1_, lstm2_;
};

}  // namespace stim

#endif  // STIM_MODEL_HPP
