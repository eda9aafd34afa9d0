// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--workdir DIR]

#include "dibrqa/error.hpp"
#include "dibrqa/eval.hpp"
#include "dibrqa/gan.hpp"
#include "dibrqa/patch_codec.hpp"
#include "dibrqa/pipeline.hpp"
#include "oracles.hpp"
#include "planted_run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace dibrqa;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 6) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- 1: gradients --------------------------------------------------------------------

template <typename Fn>
double fd_check(std::vector<nn::Param<double>> params, Fn&& loss_and_grad, std::mt19937_64& rng, int samples,
                double* max_elem) {
    // analytic gradient
    const auto analytic = loss_and_grad(true);
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t i = 0; i < params[p].value->size(); ++i)
            coords.emplace_back(p, i);
    std::shuffle(coords.begin(), coords.end(), rng);
    if (samples > 0 && coords.size() > static_cast<std::size_t>(samples))
        coords.resize(static_cast<std::size_t>(samples));

    const double h = 1e-6;
    double num2 = 0.0, den2a = 0.0, den2b = 0.0;
    *max_elem = 0.0;
    for (const auto& [p, i] : coords) {
        double& w = (*params[p].value)[i];
        const double saved = w;
        w = saved + h;
        const double lp = loss_and_grad(false)[0];
        w = saved - h;
        const double lm = loss_and_grad(false)[0];
        w = saved;
        const double numeric = (lp - lm) / (2 * h);
        std::size_t flat = 0;
        for (std::size_t q = 0; q < p; ++q)
            flat += params[q].value->size();
        const double a = analytic[1 + flat + i];
        num2 += (a - numeric) * (a - numeric);
        den2a += a * a;
        den2b += numeric * numeric;
        const double denom = std::max(std::fabs(a) + std::fabs(numeric), 1e-7);
        *max_elem = std::max(*max_elem, std::fabs(a - numeric) / denom);
    }
    return std::sqrt(num2) / std::max(std::sqrt(den2a) + std::sqrt(den2b), 1e-300);
}

std::vector<double> flat_grads(std::vector<nn::Param<double>>& params, double loss) {
    std::vector<double> out{loss};
    for (auto& p : params)
        out.insert(out.end(), p.grad->begin(), p.grad->end());
    return out;
}

Outcome criterion1() {
    const ArchSpec arch = custom_arch(16, {4, 8});
    std::mt19937_64 rng(11);
    Generator<double> gen(arch, 8);
    Discriminator<double> disc(arch);
    gen.net().init_normal(rng, 0.3);
    disc.net().init_normal(rng, 0.3);
    const std::size_t n_params = gen.net().param_count() + disc.net().param_count();

    const int batch = 2;
    nn::Activation<double> x({3, batch, 16, 16}), mask({1, batch, 16, 16});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : x.data)
        v = u(rng);
    for (auto& v : mask.data)
        v = u(rng) < 0.3 ? 1.0 : 0.0;
    const auto fake_fixed = gen.forward(apply_holes(x, mask));

    auto gparams = gen.net().params();
    auto dparams = disc.net().params();
    std::ostringstream detail;
    bool ok = true;
    double worst = 0.0;
    auto record = [&](const std::string& name, double rel, double elem) {
        detail << name << " rel " << fmt(rel, 3) << " (max elem " << fmt(elem, 3) << "); ";
        worst = std::max(worst, rel);
        ok = ok && rel < 1e-4;
    };

    // reconstruction term alone (lambda = 1), generator weights
    double elem = 0.0;
    double rel = fd_check(
        gparams,
        [&](bool grads) {
            gen.net().zero_grad();
            const auto l = generator_step_loss(gen, disc, x, mask, 1.0, grads);
            return flat_grads(gparams, l.joint);
        },
        rng, 400, &elem);
    record("rec", rel, elem);

    // discriminator objective, discriminator weights
    rel = fd_check(
        dparams,
        [&](bool grads) {
            disc.net().zero_grad();
            const double l = discriminator_step_loss(disc, x, fake_fixed, grads);
            return flat_grads(dparams, l);
        },
        rng, 0, &elem);
    record("adv_d", rel, elem);

    // generator adversarial term alone (lambda = 0)
    rel = fd_check(
        gparams,
        [&](bool grads) {
            gen.net().zero_grad();
            const auto l = generator_step_loss(gen, disc, x, mask, 0.0, grads);
            return flat_grads(gparams, l.joint);
        },
        rng, 400, &elem);
    record("adv_g", rel, elem);

    // joint loss at the default weighting
    rel = fd_check(
        gparams,
        [&](bool grads) {
            gen.net().zero_grad();
            const auto l = generator_step_loss(gen, disc, x, mask, 0.9, grads);
            return flat_grads(gparams, l.joint);
        },
        rng, 400, &elem);
    record("joint", rel, elem);

    detail << n_params << " params";
    ok = ok && n_params <= 10000;
    return {ok, detail.str()};
}

// ---- 2: architectures ---------------------------------------------------------------------

Outcome criterion2() {
    struct Expect {
        ArchId id;
        std::vector<int> sizes;
        std::vector<int> channels;
        int feature_dim;
    };
    const std::vector<Expect> table{
        {ArchId::D1, {32, 16, 8, 4, 1}, {64, 128, 256, 512, 1}, 8192},
        {ArchId::D2, {64, 32, 16, 8, 4, 1}, {32, 64, 128, 256, 512, 1}, 8192},
        {ArchId::D3, {64, 32, 16, 8, 4, 1}, {16, 32, 64, 128, 256, 1}, 4096},
    };
    std::ostringstream detail;
    bool ok = true;
    for (const auto& e : table) {
        const ArchSpec spec = arch_spec(e.id);
        Discriminator<float> disc(spec);
        std::mt19937_64 rng(3);
        disc.net().init_normal(rng, kInitStddev);
        nn::Activation<float> x({3, 1, spec.input_size, spec.input_size}, 0.5f);
        const auto trace = disc.net().forward_trace(x);
        std::vector<int> sizes, channels;
        for (std::size_t i = 0; i < trace.size(); ++i)
            if (disc.net().layer(i).kind() == "conv") {
                sizes.push_back(trace[i].shape.h);
                channels.push_back(trace[i].shape.c);
                ok = ok && trace[i].shape.h == trace[i].shape.w;
            }
        const auto out = disc.forward_features(x);
        const int fdim = out.features.shape.c * out.features.shape.h * out.features.shape.w;
        const double p = sigmoid(out.logits[0]);
        const bool this_ok = sizes == e.sizes && channels == e.channels && fdim == e.feature_dim && p > 0 && p < 1;
        ok = ok && this_ok;
        detail << spec.name << (this_ok ? " ok" : " MISMATCH") << " (feat " << fdim << "); ";
    }
    return {ok, detail.str()};
}

// ---- 3: histograms --------------------------------------------------------------------------

Outcome criterion3() {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> eps_grid;
    for (int i = 1; i <= 10; ++i)
        eps_grid.push_back(i / 10.0);
    int mismatches = 0, non_integral = 0, non_monotone = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + static_cast<int>(u(rng) * 30);
        const int n = 1 + static_cast<int>(u(rng) * 80);
        std::vector<int> clusters(static_cast<std::size_t>(n));
        std::vector<double> logits(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            clusters[static_cast<std::size_t>(i)] = static_cast<int>(u(rng) * k) % k;
            logits[static_cast<std::size_t>(i)] = 8.0 * (u(rng) - 0.5);
        }
        const LogitNorm norm{-3.0 + u(rng), 2.0 + u(rng)};
        std::vector<Selector> sels{Selector::all(), Selector::boolean()};
        for (double e : eps_grid)
            sels.push_back(Selector::threshold(e));
        std::vector<std::vector<int>> selected_sets;
        for (const auto& sel : sels) {
            const Histogram h = encode_histogram(clusters, logits, k, norm, sel);
            const auto oracle = oracles::histogram_counts(clusters, logits, k, norm.min_logit, norm.max_logit,
                                                          static_cast<int>(sel.mode), sel.epsilon);
            for (int w = 0; w < k; ++w)
                if (h.mu[static_cast<std::size_t>(w)] != oracle.counts[static_cast<std::size_t>(w)] / static_cast<double>(n))
                    ++mismatches;
            if (h.n_patches != n || h.n_selected != oracle.selected)
                ++mismatches;
            double total = 0.0;
            for (double m : h.mu)
                total += m * n;
            if (std::fabs(total - std::round(total)) > 1e-9 || std::llround(total) != oracle.selected)
                ++non_integral;
            if (sel.mode == Selector::Mode::Threshold)
                selected_sets.push_back(oracle.selected_ids);
        }
        for (std::size_t i = 1; i < selected_sets.size(); ++i)
            if (!std::includes(selected_sets[i].begin(), selected_sets[i].end(), selected_sets[i - 1].begin(),
                               selected_sets[i - 1].end()))
                ++non_monotone;
    }

    // the feature path: nearest-centroid words from a real codebook
    int path_mismatch = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int dim = 8, k = 4;
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<FeatureVector> feats(60, FeatureVector(dim));
        for (auto& f : feats)
            for (auto& v : f)
                v = static_cast<float>(g(rng));
        const BDWCodebook cb = build_codebook(feats, KMeansOptions{k, static_cast<std::uint64_t>(trial), 50, 1e-6}, nullptr, "custom");
        PatchScores ps;
        for (int i = 0; i < 15; ++i) {
            ps.features.push_back(feats[static_cast<std::size_t>(i)]);
            ps.logits.push_back(4.0 * (u(rng) - 0.5));
        }
        const LogitNorm norm{-2.0, 2.0};
        const Histogram h = encode_histogram(ps, cb, norm, Selector::threshold(0.6));
        std::vector<int> words;
        for (const auto& f : ps.features)
            words.push_back(oracles::nearest_centroid(cb.centroids, cb.k, cb.dim, f));
        const auto oracle = oracles::histogram_counts(words, ps.logits, k, -2.0, 2.0, 2, 0.6);
        for (int w = 0; w < k; ++w)
            if (h.mu[static_cast<std::size_t>(w)] != oracle.counts[static_cast<std::size_t>(w)] / 15.0)
                ++path_mismatch;
    }
    const bool ok = mismatches == 0 && non_integral == 0 && non_monotone == 0 && path_mismatch == 0;
    return {ok, "200 sets x 12 selectors: " + std::to_string(mismatches) + " count mismatches, " +
                    std::to_string(non_integral) + " non-integral totals, " + std::to_string(non_monotone) +
                    " monotonicity breaks; feature path mismatches " + std::to_string(path_mismatch)};
}

// ---- 4: codebook --------------------------------------------------------------------------

Outcome criterion4() {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<FeatureVector> feats(500, FeatureVector(16));
    for (std::size_t i = 0; i < feats.size(); ++i) {
        const double centre = static_cast<double>(i % 7);
        for (auto& v : feats[i])
            v = static_cast<float>(centre + 0.6 * g(rng));
    }
    std::ostringstream detail;
    bool ok = true;
    for (int k_req : {2, 5, 160}) {
        const int k = std::min<int>(k_req, static_cast<int>(feats.size()));
        KMeansReport rep;
        const BDWCodebook cb = build_codebook(feats, KMeansOptions{k, 42, 100, 1e-4}, &rep, "custom");
        int wrong = 0;
        for (std::size_t i = 0; i < feats.size(); ++i) {
            const int oracle = oracles::nearest_centroid(cb.centroids, cb.k, cb.dim, feats[i]);
            if (rep.assignments[i] != oracle || assign(cb, feats[i]) != oracle)
                ++wrong;
        }
        int increases = 0;
        for (std::size_t i = 1; i < rep.inertia_history.size(); ++i)
            if (rep.inertia_history[i] > rep.inertia_history[i - 1] * (1.0 + 1e-12))
                ++increases;
        const bool this_ok = wrong == 0 && increases == 0 && cb.k == k;
        ok = ok && this_ok;
        detail << "K=" << k << ": " << wrong << " wrong, " << increases << " inertia rises over "
               << rep.inertia_history.size() << " iters; ";
    }
    return {ok, detail.str()};
}

// ---- 5: regression recovery -----------------------------------------------------------------

struct RecoveryFixture {
    std::vector<ManifestRecord> records;
    std::vector<std::vector<double>> features;
    std::vector<double> targets;
    RecordIds ids;
};

RecoveryFixture recovery_fixture(std::uint64_t seed) {
    RecoveryFixture f;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int k = 24;
    std::vector<double> w(static_cast<std::size_t>(k));
    for (auto& v : w)
        v = 4.0 * (u(rng) - 0.5);
    const double b = 2.5;
    for (int c = 0; c < 30; ++c)
        for (int v = 0; v < 2; ++v)
            for (int a = 0; a < 3; ++a) {
                ManifestRecord r;
                r.image_path = "x.png";
                r.content_id = "c" + std::to_string(c);
                r.viewpoint_id = "v" + std::to_string(v);
                r.algorithm_id = "A" + std::to_string(a + 1);
                // sparse histogram: counts over a few words, divided by n_p
                const int n_p = 20;
                std::vector<double> h(static_cast<std::size_t>(k), 0.0);
                for (int p = 0; p < n_p; ++p)
                    if (u(rng) < 0.7)
                        h[static_cast<std::size_t>(u(rng) * k) % k] += 1.0 / n_p;
                double y = b;
                for (int i = 0; i < k; ++i)
                    y += w[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i)];
                r.dmos = y;
                f.ids.push_back(f.records.size());
                f.records.push_back(r);
                f.features.push_back(h);
                f.targets.push_back(y);
            }
    return f;
}

struct RecoveryRun {
    EvalReport report;
    std::string report_json;
    std::string scores_csv;
};

RecoveryRun recovery_run(std::uint64_t seed, const fs::path& dir) {
    const auto f = recovery_fixture(seed);
    SvrParams params;
    params.c = 1000.0;
    params.tube_epsilon = 0.0;
    RecoveryRun run;
    run.report = cross_validate(CvData{f.features, f.targets, &f.records, f.ids}, 50, seed, params, 1);
    fs::create_directories(dir);
    write_eval_report(run.report, dir / "report.json");
    const SvrModel model = train_svr(f.features, f.targets, params);
    std::vector<ScoreRow> rows;
    for (std::size_t i = 0; i < f.records.size(); ++i)
        rows.push_back({"planted", f.records[i].key(), predict(model, f.features[i])});
    write_scores_csv(rows, dir / "scores.csv");
    run.report_json = read_bytes(dir / "report.json");
    run.scores_csv = read_bytes(dir / "scores.csv");
    return run;
}

Outcome criterion5(const fs::path& work) {
    const auto run = recovery_run(2024, work / "c5_run1");
    const auto& r = run.report;
    const bool ok = r.folds.size() == 50 && r.median_pcc >= 0.999 && r.median_rmse < 1e-3;
    return {ok, "50 folds: median PCC " + fmt(r.median_pcc, 10) + ", SCC " + fmt(r.median_scc, 6) + ", RMSE " +
                    fmt(r.median_rmse, 3)};
}

// ---- 6: statistics --------------------------------------------------------------------------

Outcome criterion6() {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    double worst = 0.0;
    int invariance_breaks = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(u(rng) * 200);
        std::vector<double> a(n), b(n);
        const bool ties = trial % 3 == 0;
        const double rho = 2.0 * u(rng) - 1.0;
        do {
            for (std::size_t i = 0; i < n; ++i) {
                a[i] = g(rng);
                b[i] = rho * a[i] + std::sqrt(1 - rho * rho) * g(rng);
                if (ties) {
                    a[i] = std::round(a[i] * 2.0) / 2.0;
                    b[i] = std::round(b[i] * 2.0) / 2.0;
                }
            }
        } while (oracles::variance(a) == 0 || oracles::variance(b) == 0);
        worst = std::max(worst, std::fabs(pcc(a, b) - oracles::pcc(a, b)));
        worst = std::max(worst, std::fabs(scc(a, b) - oracles::scc(a, b)));
        worst = std::max(worst, std::fabs(rmse(a, b) - oracles::rmse(a, b)));

        std::vector<double> ta(n), tb(n);
        for (std::size_t i = 0; i < n; ++i) {
            ta[i] = std::exp(a[i]);
            tb[i] = b[i] * b[i] * b[i] + 3.0 * b[i];
        }
        if (scc(ta, tb) != scc(a, b))
            ++invariance_breaks;
    }

    // significance
    std::vector<std::vector<double>> samples(2, std::vector<double>(1000));
    for (auto& v : samples[0])
        v = 0.8 + 0.01 * g(rng);
    for (auto& v : samples[1])
        v = 0.7 + 0.01 * g(rng);
    const auto gap = significance_matrix({"hi", "lo"}, samples, 0.05);
    bool antisym = true;
    for (int trial = 0; trial < 50; ++trial) {
        const int m = 2 + trial % 5;
        std::vector<std::string> names;
        std::vector<std::vector<double>> s;
        for (int i = 0; i < m; ++i) {
            names.push_back("m" + std::to_string(i));
            std::vector<double> v(2 + static_cast<std::size_t>(u(rng) * 30));
            const double mu = 0.5 + 0.05 * g(rng), sd = 0.01 + 0.05 * u(rng);
            for (auto& x : v)
                x = mu + sd * g(rng);
            s.push_back(v);
        }
        const auto mat = significance_matrix(names, s, 0.05, trial % 2 ? TTest::Pooled : TTest::Welch);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                if (mat.entries[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] !=
                    -mat.entries[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)])
                    antisym = false;
    }
    const bool ok = worst < 1e-12 && invariance_breaks == 0 && antisym && gap.entries[0][1] == 1 &&
                    gap.entries[1][0] == -1;
    return {ok, "max |diff| vs long-double oracle " + fmt(worst, 3) + " over 1000 pairs; monotone-invariance breaks " +
                    std::to_string(invariance_breaks) + "; antisymmetric " + (antisym ? "yes" : "no") +
                    "; 0.1 gap entry " + std::to_string(gap.entries[0][1])};
}

// ---- 7 and 9: end-to-end -----------------------------------------------------------------------

planted::Result g_planted_first;
bool g_planted_done = false;

Outcome criterion7(const fs::path& work) {
    planted::Options opt;
    g_planted_first = planted::run(work / "c7_run1", opt);
    g_planted_done = true;
    const auto& r = g_planted_first;
    const double first = r.history.front().joint, last = r.history.back().joint;
    const bool loss_ok = last <= 0.8 * first;
    const bool scc_ok = std::fabs(r.scc) >= 0.8;
    const bool rank_ok = r.ranking == r.planted_ranking;
    std::string ranking;
    for (const auto& a : r.ranking)
        ranking += (ranking.empty() ? "" : ">") + a;
    const bool time_ok = r.total_seconds <= 15 * 60;
    return {loss_ok && scc_ok && rank_ok && time_ok,
            "joint loss " + fmt(first, 5) + " -> " + fmt(last, 5) + " (ratio " + fmt(last / first, 3) + "); |SCC| " +
                fmt(std::fabs(r.scc), 4) + "; ranking " + ranking + "; K=" + std::to_string(r.codebook_k) +
                "; punched worse in " + fmt(100 * r.worse_fraction, 3) + "% of pairs; reload diff " +
                fmt(r.reload_max_diff, 3) + "; mask coverage " + fmt(r.train_coverage, 3) + "; " +
                fmt(r.total_seconds, 4) + " s"};
}

Outcome criterion8() {
    // 12 contents x 4 viewpoints x 7 algorithms x 4 rotations
    std::vector<ManifestRecord> records;
    for (int c = 0; c < 12; ++c)
        for (int v = 0; v < 4; ++v)
            for (int a = 1; a <= 7; ++a)
                for (int rot : {0, 90, 180, 270}) {
                    ManifestRecord r;
                    r.image_path = "img.png";
                    r.content_id = "content" + std::to_string(c);
                    r.viewpoint_id = "v" + std::to_string(v);
                    r.algorithm_id = "A" + std::to_string(a);
                    r.rotation = rot;
                    records.push_back(r);
                }
    const SplitPlan plan = make_split(records, 31);
    const auto folds = make_folds(plan.eval_ids, records, 1000, 31);
    long long violations = 0, coverage_errors = 0;
    std::set<std::vector<std::size_t>> distinct;
    for (const auto& f : folds) {
        std::set<std::string> train_views;
        for (auto id : f.train_ids)
            train_views.insert(records[id].view_key());
        for (auto id : f.test_ids)
            if (train_views.count(records[id].view_key()))
                ++violations;
        std::vector<std::size_t> all = f.train_ids;
        all.insert(all.end(), f.test_ids.begin(), f.test_ids.end());
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expect = plan.eval_ids;
        std::sort(expect.begin(), expect.end());
        if (all != expect)
            ++coverage_errors;
        std::vector<std::size_t> t = f.test_ids;
        std::sort(t.begin(), t.end());
        distinct.insert(t);
    }
    const bool ok = folds.size() == 1000 && violations == 0 && coverage_errors == 0;
    return {ok, std::to_string(folds.size()) + " folds over " + std::to_string(plan.eval_ids.size()) +
                    " eval records: " + std::to_string(violations) + " violations, " +
                    std::to_string(coverage_errors) + " partition errors, " + std::to_string(distinct.size()) +
                    " distinct test sets"};
}

Outcome criterion9(const fs::path& work) {
    const auto a = recovery_run(2024, work / "c9_c5_a");
    const auto b = recovery_run(2024, work / "c9_c5_b");
    const bool c5_same = a.report_json == b.report_json && a.scores_csv == b.scores_csv;

    if (!g_planted_done)
        g_planted_first = planted::run(work / "c7_run1", planted::Options{});
    const auto second = planted::run(work / "c7_run2", planted::Options{});
    const auto& first = g_planted_first;
    const bool scores_same = read_bytes(first.scores) == read_bytes(second.scores);
    const bool report_same = read_bytes(first.report) == read_bytes(second.report);
    const bool bundle_same = read_bytes(first.bundle) == read_bytes(second.bundle);
    const bool ckpt_same = read_bytes(first.checkpoint) == read_bytes(second.checkpoint);
    const bool ok = c5_same && scores_same && report_same && bundle_same && ckpt_same;
    auto yn = [](bool v) { return v ? "identical" : "DIFFERENT"; };
    return {ok, std::string("criterion 5 report+scores ") + yn(c5_same) + "; criterion 7 scores " + yn(scores_same) +
                    ", report " + yn(report_same) + ", bundle " + yn(bundle_same) + ", checkpoint " + yn(ckpt_same)};
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    fs::path work = fs::temp_directory_path() / "dibrqa_acceptance";
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string tok;
            while (std::getline(ss, tok, ','))
                only.insert(std::stoi(tok));
        } else if (std::strcmp(argv[i], "--workdir") == 0 && i + 1 < argc) {
            work = argv[++i];
        } else {
            std::cerr << "usage: acceptance [--only 1,2,...] [--workdir DIR]\n";
            return 2;
        }
    }
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", criterion1},
        {"architecture conformance", criterion2},
        {"histogram algebra", criterion3},
        {"codebook oracle equivalence", criterion4},
        {"regression recovery", [&] { return criterion5(work); }},
        {"statistics oracle", criterion6},
        {"end-to-end planted quality", [&] { return criterion7(work); }},
        {"split-protocol law", criterion8},
        {"reproducibility", [&] { return criterion9(work); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && !only.count(id))
            continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << "criterion " << id << " [" << criteria[i].first << "]: " << (o.pass ? "PASS" : "FAIL") << " | "
                  << o.detail << " | " << fmt(secs, 3) << " s" << std::endl;
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
