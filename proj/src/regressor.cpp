#include "dibrqa/regressor.hpp"

#include "dibrqa/error.hpp"
#include "serialization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace dibrqa {

// ---- ε-SVR dual solver ----------------------------------------------------------------
//
// Variables a[0..2l): a[t] pairs with sign y[t] = +1 for t < l and -1 for
// t >= l, sample index t mod l. Minimises 1/2 aᵀQa + pᵀa subject to
// yᵀa = 0 and 0 <= a <= C, with Q[s][t] = y[s] y[t] K(s mod l, t mod l).

namespace {

class SvrSolver {
public:
    SvrSolver(std::span<const std::vector<double>> x, std::span<const double> z, const SvrParams& params)
        : l_(static_cast<int>(z.size())), c_(params.c), params_(params) {
        kernel_.assign(static_cast<std::size_t>(l_) * l_, 0.0);
        for (int i = 0; i < l_; ++i)
            for (int j = i; j < l_; ++j) {
                double dot = 0.0;
                const auto& a = x[static_cast<std::size_t>(i)];
                const auto& b = x[static_cast<std::size_t>(j)];
                for (std::size_t d = 0; d < a.size(); ++d)
                    dot += a[d] * b[d];
                kernel_[static_cast<std::size_t>(i) * l_ + j] = dot;
                kernel_[static_cast<std::size_t>(j) * l_ + i] = dot;
            }
        const int n = 2 * l_;
        alpha_.assign(static_cast<std::size_t>(n), 0.0);
        grad_.resize(static_cast<std::size_t>(n));
        for (int t = 0; t < l_; ++t) {
            grad_[static_cast<std::size_t>(t)] = params.tube_epsilon - z[static_cast<std::size_t>(t)];
            grad_[static_cast<std::size_t>(t + l_)] = params.tube_epsilon + z[static_cast<std::size_t>(t)];
        }
    }

    void solve() {
        constexpr double tau = 1e-12;
        const int n = 2 * l_;
        for (long long iter = 0;; ++iter) {
            if (iter >= params_.max_iterations)
                throw Error(Errc::SolverFailure, "SMO did not converge within " + std::to_string(params_.max_iterations) +
                                                     " iterations");
            // maximal violating pair, second-order selection for j
            double gmax = -std::numeric_limits<double>::infinity();
            int i = -1;
            for (int t = 0; t < n; ++t)
                if (in_up(t) && -y(t) * grad_[static_cast<std::size_t>(t)] >= gmax) {
                    gmax = -y(t) * grad_[static_cast<std::size_t>(t)];
                    i = t;
                }
            double gmin = std::numeric_limits<double>::infinity();
            int j = -1;
            double best_obj = std::numeric_limits<double>::infinity();
            for (int t = 0; t < n; ++t) {
                if (!in_low(t))
                    continue;
                const double v = -y(t) * grad_[static_cast<std::size_t>(t)];
                gmin = std::min(gmin, v);
                if (i < 0)
                    continue;
                const double b = gmax - v;
                if (b > 0) {
                    double a = q(i, i) + q(t, t) - 2.0 * y(i) * y(t) * q(i, t);
                    if (a <= 0)
                        a = tau;
                    const double obj = -(b * b) / a;
                    if (obj <= best_obj) {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
            if (i < 0 || j < 0 || gmax - gmin < params_.tolerance)
                break;
            update(i, j);
        }
    }

    SvrModel model(std::span<const std::vector<double>> x) const {
        SvrModel m;
        m.c = params_.c;
        m.tube_epsilon = params_.tube_epsilon;
        const std::size_t dim = x.front().size();
        m.weights.assign(dim, 0.0);
        for (int t = 0; t < l_; ++t) {
            const double coef = alpha_[static_cast<std::size_t>(t)] - alpha_[static_cast<std::size_t>(t + l_)];
            if (coef == 0.0)
                continue;
            for (std::size_t d = 0; d < dim; ++d)
                m.weights[d] += coef * x[static_cast<std::size_t>(t)][d];
        }
        m.bias = -rho();
        return m;
    }

private:
    double y(int t) const { return t < l_ ? 1.0 : -1.0; }
    int sample(int t) const { return t < l_ ? t : t - l_; }
    double k(int s, int t) const { return kernel_[static_cast<std::size_t>(sample(s)) * l_ + sample(t)]; }
    double q(int s, int t) const { return y(s) * y(t) * k(s, t); }
    bool at_upper(int t) const { return alpha_[static_cast<std::size_t>(t)] >= c_; }
    bool at_lower(int t) const { return alpha_[static_cast<std::size_t>(t)] <= 0.0; }
    bool in_up(int t) const { return y(t) > 0 ? !at_upper(t) : !at_lower(t); }
    bool in_low(int t) const { return y(t) > 0 ? !at_lower(t) : !at_upper(t); }

    void update(int i, int j) {
        constexpr double tau = 1e-12;
        double& ai = alpha_[static_cast<std::size_t>(i)];
        double& aj = alpha_[static_cast<std::size_t>(j)];
        const double old_i = ai, old_j = aj;
        const double qii = q(i, i), qjj = q(j, j), qij = q(i, j);
        const double gi = grad_[static_cast<std::size_t>(i)], gj = grad_[static_cast<std::size_t>(j)];
        if (y(i) != y(j)) {
            double quad = qii + qjj + 2.0 * qij;
            if (quad <= 0)
                quad = tau;
            const double delta = (-gi - gj) / quad;
            const double diff = ai - aj;
            ai += delta;
            aj += delta;
            if (diff > 0) {
                if (aj < 0) {
                    aj = 0;
                    ai = diff;
                }
            } else if (ai < 0) {
                ai = 0;
                aj = -diff;
            }
            if (diff > 0) {
                if (ai > c_) {
                    ai = c_;
                    aj = c_ - diff;
                }
            } else if (aj > c_) {
                aj = c_;
                ai = c_ + diff;
            }
        } else {
            double quad = qii + qjj - 2.0 * qij;
            if (quad <= 0)
                quad = tau;
            const double delta = (gi - gj) / quad;
            const double sum = ai + aj;
            ai -= delta;
            aj += delta;
            if (sum > c_) {
                if (ai > c_) {
                    ai = c_;
                    aj = sum - c_;
                }
            } else if (aj < 0) {
                aj = 0;
                ai = sum;
            }
            if (sum > c_) {
                if (aj > c_) {
                    aj = c_;
                    ai = sum - c_;
                }
            } else if (ai < 0) {
                ai = 0;
                aj = sum;
            }
        }
        const double di = ai - old_i, dj = aj - old_j;
        const int n = 2 * l_;
        for (int t = 0; t < n; ++t)
            grad_[static_cast<std::size_t>(t)] += q(t, i) * di + q(t, j) * dj;
    }

    double rho() const {
        int n_free = 0;
        double sum_free = 0.0;
        double ub = std::numeric_limits<double>::infinity();
        double lb = -std::numeric_limits<double>::infinity();
        for (int t = 0; t < 2 * l_; ++t) {
            const double yg = y(t) * grad_[static_cast<std::size_t>(t)];
            if (at_upper(t)) {
                if (y(t) < 0)
                    ub = std::min(ub, yg);
                else
                    lb = std::max(lb, yg);
            } else if (at_lower(t)) {
                if (y(t) > 0)
                    ub = std::min(ub, yg);
                else
                    lb = std::max(lb, yg);
            } else {
                ++n_free;
                sum_free += yg;
            }
        }
        return n_free > 0 ? sum_free / n_free : (ub + lb) / 2.0;
    }

    int l_;
    double c_;
    SvrParams params_;
    std::vector<double> kernel_;
    std::vector<double> alpha_;
    std::vector<double> grad_;
};

} // namespace

SvrModel train_svr(std::span<const std::vector<double>> features, std::span<const double> targets,
                   const SvrParams& params) {
    if (features.size() != targets.size())
        throw Error(Errc::DimMismatch, "feature and target counts differ");
    if (features.size() < 2)
        throw Error(Errc::TooFewSamples, "SVR needs at least two samples");
    if (!(params.c > 0.0) || !(params.tube_epsilon >= 0.0))
        throw Error(Errc::InvalidParam, "SVR needs C > 0 and tube_epsilon >= 0");
    const std::size_t dim = features.front().size();
    for (const auto& f : features)
        if (f.size() != dim)
            throw Error(Errc::DimMismatch, "feature vectors differ in length");
    for (double t : targets)
        if (!std::isfinite(t))
            throw Error(Errc::InvalidParam, "non-finite regression target");

    SvrSolver solver(features, targets, params);
    solver.solve();
    SvrModel model = solver.model(features);
    for (double w : model.weights)
        if (!std::isfinite(w))
            throw Error(Errc::SolverFailure, "non-finite SVR weights");
    if (!std::isfinite(model.bias))
        throw Error(Errc::SolverFailure, "non-finite SVR bias");
    return model;
}

double predict(const SvrModel& model, std::span<const double> h) {
    if (h.size() != model.weights.size())
        throw Error(Errc::DimMismatch, "histogram length " + std::to_string(h.size()) + " vs model dim " +
                                           std::to_string(model.weights.size()));
    double s = model.bias;
    for (std::size_t i = 0; i < h.size(); ++i)
        s += model.weights[i] * h[i];
    return s;
}

// ---- trained metric ---------------------------------------------------------------

void TrainedMetric::validate() const {
    if (codebook.dim != arch.feature_dim())
        throw Error(Errc::DimMismatch, "codebook dim " + std::to_string(codebook.dim) + " vs discriminator feature dim " +
                                           std::to_string(arch.feature_dim()));
    if (static_cast<int>(svr.weights.size()) != codebook.k)
        throw Error(Errc::DimMismatch, "SVR weight length does not match K");
    if (!(norm.max_logit > norm.min_logit))
        throw Error(Errc::DegenerateRange, "logit normalisation range is empty");
    if (scoring.patch_size != arch.input_size)
        throw Error(Errc::DimMismatch, "patch size must equal the discriminator input size");
}

MetricScorer::MetricScorer(const TrainedMetric& tm) : tm_(tm), disc_(tm.arch) {
    tm_.validate();
    nn::import_weights(disc_.net(), tm.discriminator, "");
}

PatchScores MetricScorer::patch_scores(const ImageRGB& img) {
    const PatchSet set = extract_patches(img, tm_.scoring.patch_size, tm_.scoring.stride);
    return score_patches(disc_, set.patches);
}

Histogram MetricScorer::histogram(const ImageRGB& img) {
    return encode_histogram(patch_scores(img), tm_.codebook, tm_.norm, tm_.scoring.selector);
}

double MetricScorer::score(const ImageRGB& img) { return predict(tm_.svr, histogram(img)); }

double score_image(const TrainedMetric& tm, const ImageRGB& img) {
    MetricScorer scorer(tm);
    return scorer.score(img);
}

namespace {

constexpr char kMetricMagic[9] = "DQAMETRC";

void write_section(std::ostream& out, const char (&tag)[5], const std::string& payload) {
    io::write_bytes(out, tag, 4);
    io::write_pod<std::uint64_t>(out, payload.size());
    io::write_bytes(out, payload.data(), payload.size());
}

std::string tensors_payload(const nn::NamedTensors& tensors) {
    std::ostringstream os(std::ios::binary);
    io::json header = io::json::array();
    for (const auto& [name, blob] : tensors)
        header.push_back({{"name", name}, {"dims", blob.dims}, {"count", blob.values.size()}});
    io::write_json_block(os, header);
    for (const auto& [name, blob] : tensors)
        io::write_floats(os, blob.values);
    return os.str();
}

nn::NamedTensors tensors_from_payload(const std::string& payload) {
    std::istringstream is(payload, std::ios::binary);
    const io::json header = io::read_json_block(is);
    nn::NamedTensors tensors;
    for (const auto& t : header)
        tensors.emplace(t.at("name").get<std::string>(),
                        nn::TensorBlob{t.at("dims").get<std::vector<int>>(),
                                       io::read_floats(is, t.at("count").get<std::size_t>())});
    return tensors;
}

} // namespace

void save_metric(const TrainedMetric& tm, const std::filesystem::path& path) {
    tm.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(Errc::InvalidParam, "cannot open for writing: " + path.string());
    io::write_magic(out, kMetricMagic);
    io::write_pod<std::uint32_t>(out, TrainedMetric::kVersion);

    io::json conf;
    try {
        conf = io::json::parse(tm.config_json);
    } catch (const io::json::exception&) {
        throw Error(Errc::FormatError, "config snapshot is not valid JSON");
    }
    write_section(out, "CONF", conf.dump());
    write_section(out, "CKPT",
                  io::json{{"checkpoint", tm.checkpoint_ref},
                           {"arch", tm.arch.name},
                           {"input_size", tm.arch.input_size},
                           {"hidden_channels", tm.arch.hidden_channels}}
                      .dump());
    write_section(out, "DISC", tensors_payload(tm.discriminator));
    write_section(out, "NORM", io::json{{"min_logit", tm.norm.min_logit}, {"max_logit", tm.norm.max_logit}}.dump());
    std::ostringstream cb(std::ios::binary);
    write_codebook(tm.codebook, cb);
    write_section(out, "CBOK", cb.str());
    write_section(out, "SCOR",
                  io::json{{"patch_size", tm.scoring.patch_size},
                           {"stride", tm.scoring.stride},
                           {"selector", to_string(tm.scoring.selector)}}
                      .dump());
    write_section(out, "SVRM",
                  io::json{{"weights", tm.svr.weights}, {"bias", tm.svr.bias}, {"C", tm.svr.c},
                           {"tube_epsilon", tm.svr.tube_epsilon}}
                      .dump());
}

TrainedMetric load_metric(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::MissingFile, path.string());
    io::expect_magic(in, kMetricMagic, "metric bundle");
    const auto version = io::read_pod<std::uint32_t>(in);
    if (version != TrainedMetric::kVersion)
        throw Error(Errc::FormatError, "unsupported bundle version " + std::to_string(version));

    TrainedMetric tm;
    std::set<std::string> seen;
    try {
        while (in.peek() != std::char_traits<char>::eof()) {
            char tag_buf[4];
            io::read_bytes(in, tag_buf, 4);
            const std::string tag(tag_buf, 4);
            const auto len = io::read_pod<std::uint64_t>(in);
            if (len > (std::uint64_t{1} << 34))
                throw Error(Errc::FormatError, "implausible section length");
            std::string payload(len, '\0');
            io::read_bytes(in, payload.data(), len);
            seen.insert(tag);
            if (tag == "CONF") {
                tm.config_json = payload;
            } else if (tag == "CKPT") {
                const auto j = io::json::parse(payload);
                tm.checkpoint_ref = j.at("checkpoint").get<std::string>();
                const std::string arch = j.at("arch").get<std::string>();
                tm.arch = arch == "custom"
                              ? custom_arch(j.at("input_size").get<int>(), j.at("hidden_channels").get<std::vector<int>>())
                              : arch_spec(arch);
            } else if (tag == "DISC") {
                tm.discriminator = tensors_from_payload(payload);
            } else if (tag == "NORM") {
                const auto j = io::json::parse(payload);
                tm.norm = {j.at("min_logit").get<double>(), j.at("max_logit").get<double>()};
            } else if (tag == "CBOK") {
                std::istringstream is(payload, std::ios::binary);
                tm.codebook = read_codebook(is);
            } else if (tag == "SCOR") {
                const auto j = io::json::parse(payload);
                tm.scoring = {j.at("patch_size").get<int>(), j.at("stride").get<int>(),
                              parse_selector(j.at("selector").get<std::string>())};
            } else if (tag == "SVRM") {
                const auto j = io::json::parse(payload);
                tm.svr.weights = j.at("weights").get<std::vector<double>>();
                tm.svr.bias = j.at("bias").get<double>();
                tm.svr.c = j.at("C").get<double>();
                tm.svr.tube_epsilon = j.at("tube_epsilon").get<double>();
            }
            // unknown sections are skipped for forward compatibility
        }
    } catch (const io::json::exception& e) {
        throw Error(Errc::FormatError, std::string("malformed bundle section: ") + e.what());
    }
    for (const char* required : {"CONF", "CKPT", "DISC", "NORM", "CBOK", "SCOR", "SVRM"})
        if (!seen.count(required))
            throw Error(Errc::FormatError, std::string("bundle is missing section ") + required);
    tm.validate();
    return tm;
}

} // namespace dibrqa
