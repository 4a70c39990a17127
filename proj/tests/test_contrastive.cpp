// SPDX-License-Identifier: Apache-2.0
//
// InfoNCE against a brute-force enumeration oracle, positive-set conformance
// against exhaustive filters, and the invariances the loss must satisfy.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cap/contrastive.hpp"

using namespace cap;

namespace {

// Independent brute-force evaluation with plain loops: every exponent is
// enumerated explicitly, no shared code with the implementation.
double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double oracle_info_nce(const std::vector<double>& anchor,
                       const std::vector<std::vector<double>>& entries,
                       const std::vector<int>& positives, double tau) {
    std::vector<double> sims;
    for (const auto& e : entries) sims.push_back(oracle_cosine(anchor, e));
    double denom = 0;
    for (double s : sims) denom += std::exp(s / tau);
    double acc = 0;
    for (int j : positives) acc += std::log(std::exp(sims[static_cast<std::size_t>(j)] / tau) / denom);
    return -acc / static_cast<double>(positives.size());
}

Vec to_vec(const std::vector<double>& v) {
    Vec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
    return out;
}

Mat to_mat(const std::vector<std::vector<double>>& rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = to_vec(rows[r]).transpose();
    return out;
}

PositiveSet ps_of(std::vector<int> idx) {
    PositiveSet ps;
    ps.positive_indices = std::move(idx);
    return ps;
}

std::vector<double> random_unit_free(Rng& rng, int d) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(d));
    for (auto& x : v) x = nd(rng);
    return v;
}

}  // namespace

TEST_CASE("cosine similarity basics") {
    Rng rng = make_rng(100, "cos");
    for (int t = 0; t < 10; ++t) {
        const Vec z = to_vec(random_unit_free(rng, 6));
        REQUIRE(cosine_similarity(z, z) == Catch::Approx(1.0).margin(1e-12));
    }
    REQUIRE(cosine_similarity(to_vec({1, 0}), to_vec({0, 1})) == 0.0);
    const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
    REQUIRE(cosine_similarity(to_vec(a), to_vec(b)) ==
            Catch::Approx(oracle_cosine(a, b)).epsilon(1e-12));
    REQUIRE_THROWS_AS(cosine_similarity(to_vec({0, 0}), to_vec({1, 0})), NumericalError);

    // Scale invariance under positive rescaling of either argument.
    Rng srng = make_rng(101, "cos.scale");
    std::uniform_real_distribution<double> scale(0.01, 50.0);
    for (int t = 0; t < 20; ++t) {
        const Vec x = to_vec(random_unit_free(srng, 5));
        const Vec y = to_vec(random_unit_free(srng, 5));
        const double base = cosine_similarity(x, y);
        REQUIRE(cosine_similarity(scale(srng) * x, y) == Catch::Approx(base).margin(1e-12));
        REQUIRE(cosine_similarity(x, scale(srng) * y) == Catch::Approx(base).margin(1e-12));
        REQUIRE(std::abs(base) <= 1.0 + 1e-12);
    }
}

TEST_CASE("info_nce degenerate and closed-form cases") {
    // One entry that is the positive: softmax over a single element.
    REQUIRE(info_nce(to_vec({1, 1}), to_mat({{2, 2}}), ps_of({0}), 0.1) ==
            Catch::Approx(0.0).margin(1e-12));

    // All similarities equal with one positive: loss = log N.
    const int n = 7;
    std::vector<std::vector<double>> same(static_cast<std::size_t>(n), {3, 0, 0});
    REQUIRE(info_nce(to_vec({1, 0, 0}), to_mat(same), ps_of({2}), 0.2) ==
            Catch::Approx(std::log(static_cast<double>(n))).epsilon(1e-12));

    // Spec's three-entry case against the enumeration oracle.
    const std::vector<double> anchor{1, 0};
    const std::vector<std::vector<double>> bank{{1, 0}, {0, 1}, {-1, 0}};
    REQUIRE(info_nce(to_vec(anchor), to_mat(bank), ps_of({0}), 0.1) ==
            Catch::Approx(oracle_info_nce(anchor, bank, {0}, 0.1)).epsilon(1e-9));

    REQUIRE_THROWS_AS(info_nce(to_vec(anchor), to_mat(bank), ps_of({0}), 0.0), ConfigError);
    REQUIRE_THROWS_AS(info_nce(to_vec(anchor), to_mat(bank), ps_of({}), 0.1), StateError);
}

TEST_CASE("info_nce matches the enumeration oracle on random cases") {
    Rng rng = make_rng(102, "nce.random");
    std::uniform_int_distribution<int> nd(1, 64), dd(2, 16), taud(0, 3);
    const double taus[] = {0.05, 0.1, 0.2, 0.3};
    for (int t = 0; t < 200; ++t) {
        const int n = nd(rng), d = dd(rng);
        std::vector<std::vector<double>> entries;
        for (int k = 0; k < n; ++k) entries.push_back(random_unit_free(rng, d));
        const std::vector<double> anchor = random_unit_free(rng, d);
        std::uniform_int_distribution<int> pd(1, std::min(8, n));
        const int n_pos = pd(rng);
        std::vector<int> pool(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) pool[static_cast<std::size_t>(k)] = k;
        std::shuffle(pool.begin(), pool.end(), rng);
        const std::vector<int> pos(pool.begin(), pool.begin() + n_pos);
        const double tau = taus[taud(rng)];

        const double got = info_nce(to_vec(anchor), to_mat(entries), ps_of(pos), tau);
        const double want = oracle_info_nce(anchor, entries, pos, tau);
        REQUIRE(got >= 0.0);
        REQUIRE(got == Catch::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("info_nce invariances: permutation and positive rescaling") {
    Rng rng = make_rng(103, "nce.inv");
    std::uniform_real_distribution<double> scale(0.05, 20.0);
    for (int t = 0; t < 30; ++t) {
        const int n = 12, d = 6;
        std::vector<std::vector<double>> entries;
        for (int k = 0; k < n; ++k) entries.push_back(random_unit_free(rng, d));
        const std::vector<double> anchor = random_unit_free(rng, d);
        const std::vector<int> pos{1, 5, 9};
        const double base = info_nce(to_vec(anchor), to_mat(entries), ps_of(pos), 0.1);

        // Permute entries, remap the positive indices accordingly.
        std::vector<int> perm(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) perm[static_cast<std::size_t>(k)] = k;
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::vector<double>> shuffled(static_cast<std::size_t>(n));
        std::vector<int> where(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
            shuffled[static_cast<std::size_t>(k)] = entries[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])];
            where[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = k;
        }
        std::vector<int> pos2;
        for (int j : pos) pos2.push_back(where[static_cast<std::size_t>(j)]);
        REQUIRE(info_nce(to_vec(shuffled[0].empty() ? anchor : anchor), to_mat(shuffled),
                         ps_of(pos2), 0.1) == Catch::Approx(base).epsilon(1e-12));

        // Rescale the anchor and every entry by positive factors.
        std::vector<std::vector<double>> scaled = entries;
        for (auto& e : scaled) {
            const double c = scale(rng);
            for (auto& x : e) x *= c;
        }
        std::vector<double> anchor2 = anchor;
        const double ca = scale(rng);
        for (auto& x : anchor2) x *= ca;
        REQUIRE(info_nce(to_vec(anchor2), to_mat(scaled), ps_of(pos), 0.1) ==
                Catch::Approx(base).margin(1e-9));
    }
}

TEST_CASE("info_nce analytic anchor gradient matches central differences") {
    Rng rng = make_rng(104, "nce.grad");
    const double h = 1e-6;
    for (int t = 0; t < 25; ++t) {
        const int n = 10, d = 5;
        std::vector<std::vector<double>> entries;
        for (int k = 0; k < n; ++k) entries.push_back(random_unit_free(rng, d));
        std::vector<double> anchor = random_unit_free(rng, d);
        const std::vector<int> pos{0, 4};
        const Mat bank = to_mat(entries);

        const InfoNceGrad g = info_nce_with_grad(to_vec(anchor), bank, ps_of(pos), 0.1);
        for (int i = 0; i < d; ++i) {
            std::vector<double> up = anchor, dn = anchor;
            up[static_cast<std::size_t>(i)] += h;
            dn[static_cast<std::size_t>(i)] -= h;
            const double fd = (info_nce(to_vec(up), bank, ps_of(pos), 0.1) -
                               info_nce(to_vec(dn), bank, ps_of(pos), 0.1)) /
                              (2 * h);
            REQUIRE(std::abs(fd - g.d_anchor(i)) <
                    1e-4 * std::max(std::abs(fd), std::abs(g.d_anchor(i))) + 1e-7);
        }
    }
}

TEST_CASE("single-positive loss never increases when the positive gets more similar") {
    // Entry j is parametrized as cos(theta)*u + sin(theta)*w with w
    // orthogonal to the anchor direction, so only s_j changes.
    Rng rng = make_rng(105, "nce.mono");
    for (int t = 0; t < 20; ++t) {
        const int n = 8, d = 4;
        std::vector<std::vector<double>> entries;
        for (int k = 0; k < n; ++k) entries.push_back(random_unit_free(rng, d));
        const Vec anchor = to_vec(random_unit_free(rng, d));
        const Vec u = anchor.normalized();
        Vec w = to_vec(random_unit_free(rng, d));
        w -= w.dot(u) * u;
        w.normalize();

        double prev = std::numeric_limits<double>::infinity();
        for (double theta = 3.0; theta >= 0.0; theta -= 0.25) {
            Mat bank = to_mat(entries);
            bank.row(3) = (std::cos(theta) * u + std::sin(theta) * w).transpose();
            const double loss = info_nce(anchor, bank, ps_of({3}), 0.1);
            REQUIRE(loss <= prev + 1e-12);
            prev = loss;
        }
    }
}

TEST_CASE("positive sets follow the per-module filters") {
    std::vector<BankEntryMeta> meta;
    auto add = [&](std::int64_t idx, int label, SourceRole role, double sp) {
        meta.push_back({idx, label, role, sp});
    };

    SECTION("unsup prc keys on the anchor example index") {
        add(3, 0, SourceRole::pretrained, 0.0);
        add(7, 1, SourceRole::pretrained, 0.0);
        add(9, 0, SourceRole::pretrained, 0.0);
        const PositiveSet ps =
            build_positive_set(ContrastModule::prc, ContrastMode::unsup, 7, 1, meta);
        REQUIRE(ps.positive_indices == std::vector<int>{1});
    }

    SECTION("sup filter degenerates to the full set when all labels match") {
        for (int k = 0; k < 5; ++k) add(k, 2, SourceRole::finetuned, 0.0);
        const PositiveSet ps =
            build_positive_set(ContrastModule::fic, ContrastMode::sup, 99, 2, meta);
        REQUIRE(ps.positive_indices.size() == 5);
    }

    SECTION("sup filter keeps exactly the label matches") {
        for (int k = 0; k < 4; ++k) add(k, k == 1 ? 1 : (k == 3 ? 2 : 0), SourceRole::pretrained, 0.0);
        // labels are (0, 1, 0, 2); anchor label 0 selects entries 0 and 2
        const PositiveSet ps =
            build_positive_set(ContrastModule::prc, ContrastMode::sup, 99, 0, meta);
        REQUIRE(ps.positive_indices == std::vector<int>{0, 2});
    }

    SECTION("snc keeps only strictly sparser-than-anchor snapshots") {
        add(5, 0, SourceRole::snapshot, 10.0);
        add(5, 0, SourceRole::snapshot, 30.0);
        add(5, 0, SourceRole::snapshot, 50.0);
        add(5, 0, SourceRole::pretrained, 0.0);
        const PositiveSet ps =
            build_positive_set(ContrastModule::snc, ContrastMode::unsup, 5, 0, meta, 30.0);
        REQUIRE(ps.positive_indices == std::vector<int>{0});
    }
}

TEST_CASE("positive sets equal an exhaustive filter on random configurations") {
    Rng rng = make_rng(106, "ps.random");
    std::uniform_int_distribution<int> idx_d(0, 9), lab_d(0, 2), role_d(0, 2), sp_d(0, 9);
    const SourceRole roles[] = {SourceRole::pretrained, SourceRole::finetuned,
                                SourceRole::snapshot};
    for (int t = 0; t < 100; ++t) {
        std::vector<BankEntryMeta> meta;
        for (int k = 0; k < 24; ++k) {
            meta.push_back({idx_d(rng), lab_d(rng), roles[role_d(rng)], 10.0 * sp_d(rng)});
        }
        const std::int64_t anchor_idx = idx_d(rng);
        const int anchor_label = lab_d(rng);
        const double anchor_sp = 10.0 * sp_d(rng);

        for (ContrastModule module :
             {ContrastModule::prc, ContrastModule::snc, ContrastModule::fic}) {
            for (ContrastMode mode : {ContrastMode::sup, ContrastMode::unsup}) {
                const PositiveSet got = build_positive_set(module, mode, anchor_idx, anchor_label,
                                                           meta, anchor_sp);
                std::vector<int> want;
                for (int k = 0; k < 24; ++k) {
                    const auto& e = meta[static_cast<std::size_t>(k)];
                    const SourceRole need = module == ContrastModule::prc ? SourceRole::pretrained
                                            : module == ContrastModule::fic
                                                ? SourceRole::finetuned
                                                : SourceRole::snapshot;
                    if (e.role != need) continue;
                    if (module == ContrastModule::snc && e.sparsity >= anchor_sp) continue;
                    if (mode == ContrastMode::unsup ? (e.example_index == anchor_idx)
                                                    : (e.label == anchor_label)) {
                        want.push_back(k);
                    }
                }
                REQUIRE(got.positive_indices == want);
            }
        }
    }
}

TEST_CASE("module_loss aggregation") {
    ContrastiveConfig cfg;
    cfg.temperature = 0.1;

    Mat anchors(2, 3);
    anchors << 1, 0, 0, 0.2, 0.9, 0.1;
    const std::vector<std::int64_t> idx{0, 1};
    const std::vector<int> labels{0, 1};

    SECTION("no snapshot views means exactly zero") {
        const auto r = module_loss(ContrastModule::snc, anchors, idx, labels, {}, cfg, 50.0, true);
        REQUIRE(r.loss == 0.0);
        REQUIRE(r.d_anchors.cwiseAbs().maxCoeff() == 0.0);
    }

    SECTION("both parts disabled means exactly zero") {
        ContrastiveConfig off = cfg;
        off.sup_enabled = false;
        off.unsup_enabled = false;
        FetchedView view;
        view.vectors = Mat::Random(4, 3);
        view.meta = {{0, 0, SourceRole::pretrained, 0.0}, {1, 1, SourceRole::pretrained, 0.0},
                     {2, 0, SourceRole::pretrained, 0.0}, {3, 1, SourceRole::pretrained, 0.0}};
        const auto r = module_loss(ContrastModule::prc, anchors, idx, labels, {view}, off, 0.0, true);
        REQUIRE(r.loss == 0.0);
    }

    SECTION("two anchors, one snapshot, N=4 matches the enumeration oracle") {
        FetchedView view;
        view.vectors.resize(4, 3);
        view.vectors << 0.9, 0.1, 0.0, 0.1, 1.0, 0.0, -0.5, 0.2, 0.8, 0.3, 0.3, 0.9;
        view.meta = {{0, 0, SourceRole::snapshot, 10.0},
                     {1, 1, SourceRole::snapshot, 10.0},
                     {2, 0, SourceRole::snapshot, 10.0},
                     {3, 1, SourceRole::snapshot, 10.0}};

        auto entry = [&](int k) {
            return std::vector<double>{view.vectors(k, 0), view.vectors(k, 1),
                                       view.vectors(k, 2)};
        };
        const std::vector<std::vector<double>> bank{entry(0), entry(1), entry(2), entry(3)};
        const std::vector<double> a0{1, 0, 0}, a1{0.2, 0.9, 0.1};
        // Anchor 0: unsup positive {0}, sup positives {0, 2}; anchor 1: {1}, {1, 3}.
        const double want = ((oracle_info_nce(a0, bank, {0}, 0.1) +
                              oracle_info_nce(a1, bank, {1}, 0.1)) /
                                 2.0 +
                             (oracle_info_nce(a0, bank, {0, 2}, 0.1) +
                              oracle_info_nce(a1, bank, {1, 3}, 0.1)) /
                                 2.0);
        const auto r =
            module_loss(ContrastModule::snc, anchors, idx, labels, {view}, cfg, 50.0, false);
        REQUIRE(r.loss == Catch::Approx(want).epsilon(1e-12));
    }

    SECTION("disabled module returns exactly zero") {
        ContrastiveConfig no_prc = cfg;
        no_prc.prc = false;
        FetchedView view;
        view.vectors = Mat::Random(4, 3);
        view.meta = {{0, 0, SourceRole::pretrained, 0.0}, {1, 1, SourceRole::pretrained, 0.0},
                     {2, 0, SourceRole::pretrained, 0.0}, {3, 1, SourceRole::pretrained, 0.0}};
        const auto r =
            module_loss(ContrastModule::prc, anchors, idx, labels, {view}, no_prc, 0.0, false);
        REQUIRE(r.loss == 0.0);
    }
}
