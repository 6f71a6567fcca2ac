// Synthetic data geometry and plumbing: the pulled-back prototype/shift
// construction, its decorrelation properties, sampling, the leave-one-out
// split, and client partitioning.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "fedprompt/datagen.hpp"
#include "fedprompt/encoders.hpp"
#include "fedprompt/numerics.hpp"
#include "fedprompt/prompts.hpp"
#include "fedprompt/rng.hpp"

using namespace fedprompt;

namespace {

struct Fixture {
    Rng base{11};
    TokenVocab vocab{16, 4, 4, base};
    FrozenEncoders enc{16, 12, 12, 0.07, base};
    DataConfig cfg{.num_domains_total = 4,
                   .num_classes = 4,
                   .feature_dim = 12,
                   .samples_per_domain_class = 10,
                   .shift_strength = 1.5,
                   .noise_sigma = 0.4};
    DomainSpec spec = make_domain_spec(cfg, vocab, enc, 3);
};

double norm(const Vec& v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
}

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("make_domain_spec produces distinct unit directions deterministically") {
    Fixture f;
    REQUIRE(f.spec.prototypes.size() == 4);
    REQUIRE(f.spec.shifts.size() == 4);
    for (const Vec& u : f.spec.prototypes) {
        CHECK(norm(u) == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (const Vec& t : f.spec.shifts) {
        CHECK(norm(t) == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (std::size_t a = 0; a < 4; ++a) {
        for (std::size_t b = a + 1; b < 4; ++b) {
            CHECK(std::abs(dot(f.spec.prototypes[a], f.spec.prototypes[b])) < 0.99);
            CHECK(std::abs(dot(f.spec.shifts[a], f.spec.shifts[b])) < 0.99);
        }
    }

    DomainSpec again = make_domain_spec(f.cfg, f.vocab, f.enc, 3);
    CHECK(again.prototypes == f.spec.prototypes);
    CHECK(again.shifts == f.spec.shifts);
}

TEST_CASE("make_domain_spec validates its inputs") {
    Fixture f;
    DataConfig bad = f.cfg;
    bad.feature_dim = 10;
    CHECK_THROWS_AS((void)make_domain_spec(bad, f.vocab, f.enc, 3), ConfigError);
    DataConfig tiny = f.cfg;
    tiny.num_classes = 1;
    CHECK_THROWS_AS((void)make_domain_spec(tiny, f.vocab, f.enc, 3), ConfigError);
    DataConfig wide = f.cfg;
    wide.num_classes = 5;  // vocabulary only carries 4
    CHECK_THROWS_AS((void)make_domain_spec(wide, f.vocab, f.enc, 3), ConfigError);
}

TEST_CASE("class and style directions decorrelate through the image map") {
    Fixture f;
    const std::size_t C = 4, M = 4, L = 3;

    // Re-derive the template-query embedding geometry through public calls:
    // an untouched bank's query rows are exactly the cycled template words.
    PromptDims dims{.prompt_len = L, .embed_dim = 16, .num_domains = M, .num_classes = C};
    PromptBank bank = init_prompt_bank(dims, {0, 1, 2, 3}, f.vocab, Rng(999));
    std::vector<Vec> z(C * M);
    for (std::size_t j = 0; j < C; ++j) {
        for (std::size_t m = 0; m < M; ++m) {
            z[j * M + m] =
                f.enc.encode_text(assemble_text_input(bank, PromptKind::query, j, m, f.vocab));
        }
    }
    const std::size_t d = f.enc.embed_dim();
    std::vector<Vec> anchor(C, Vec(d, 0.0));
    Vec grand(d, 0.0);
    for (std::size_t j = 0; j < C; ++j) {
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t i = 0; i < d; ++i) anchor[j][i] += z[j * M + m][i] / M;
        }
        for (std::size_t i = 0; i < d; ++i) grand[i] += anchor[j][i] / C;
    }
    std::vector<Vec> class_diff(C, Vec(d));
    for (std::size_t j = 0; j < C; ++j) {
        for (std::size_t i = 0; i < d; ++i) class_diff[j][i] = anchor[j][i] - grand[i];
    }
    std::vector<Vec> offset(M, Vec(d, 0.0));
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t j = 0; j < C; ++j) {
            for (std::size_t i = 0; i < d; ++i) {
                offset[m][i] += (z[j * M + m][i] - anchor[j][i]) / C;
            }
        }
    }

    auto coupling = [&](const Vec& feature_dir, const Vec& emb_dir) {
        return dot(matvec(f.enc.image_weights(), feature_dir), emb_dir);
    };

    SUBCASE("prototypes excite class differentials with equal margins") {
        for (std::size_t j = 0; j < C; ++j) {
            double self = coupling(f.spec.prototypes[j], class_diff[j]);
            CHECK(self > 0.0);
            for (std::size_t i = 0; i < C; ++i) {
                if (i == j) continue;
                double cross = coupling(f.spec.prototypes[j], class_diff[i]);
                CHECK(cross < 0.0);
                CHECK(self > 1.5 * std::abs(cross));
            }
        }
    }

    SUBCASE("prototypes are silent along every domain offset") {
        for (std::size_t j = 0; j < C; ++j) {
            for (std::size_t m = 0; m < M; ++m) {
                CHECK(std::abs(coupling(f.spec.prototypes[j], offset[m])) < 1e-8);
            }
        }
    }

    SUBCASE("shifts excite their own domain offset and no class differential") {
        for (std::size_t m = 0; m < M; ++m) {
            double self = coupling(f.spec.shifts[m], offset[m]);
            CHECK(self > 0.0);
            for (std::size_t k = 0; k < M; ++k) {
                if (k == m) continue;
                double cross = coupling(f.spec.shifts[m], offset[k]);
                CHECK(cross < 0.0);
                CHECK(self > 1.5 * std::abs(cross));
            }
            for (std::size_t j = 0; j < C; ++j) {
                CHECK(std::abs(coupling(f.spec.shifts[m], class_diff[j])) < 1e-8);
            }
        }
    }
}

TEST_CASE("generate draws clouds around the specified means") {
    Fixture f;

    SUBCASE("shapes, labels, and the 80/20 split") {
        auto datasets = generate(f.spec, Rng(3));
        REQUIRE(datasets.size() == 4);
        for (std::size_t m = 0; m < 4; ++m) {
            CHECK(datasets[m].domain_id == m);
            CHECK(datasets[m].train.size() == 4 * 8);
            CHECK(datasets[m].test.size() == 4 * 2);
            std::vector<std::size_t> train_counts(4, 0), test_counts(4, 0);
            for (const Sample& s : datasets[m].train) {
                CHECK(s.domain == m);
                CHECK(s.x.size() == 12);
                train_counts.at(s.label) += 1;
            }
            for (const Sample& s : datasets[m].test) test_counts.at(s.label) += 1;
            for (std::size_t j = 0; j < 4; ++j) {
                CHECK(train_counts[j] == 8);
                CHECK(test_counts[j] == 2);
            }
        }
    }

    SUBCASE("same seed reproduces every sample bit for bit") {
        auto a = generate(f.spec, Rng(3));
        auto b = generate(f.spec, Rng(3));
        for (std::size_t m = 0; m < a.size(); ++m) {
            REQUIRE(a[m].train.size() == b[m].train.size());
            for (std::size_t i = 0; i < a[m].train.size(); ++i) {
                CHECK(a[m].train[i].x == b[m].train[i].x);
                CHECK(a[m].train[i].label == b[m].train[i].label);
            }
        }
        auto c = generate(f.spec, Rng(4));
        CHECK(a[0].train[0].x != c[0].train[0].x);
    }

    SUBCASE("vanishing noise collapses samples onto their means") {
        DomainSpec tight = f.spec;
        tight.cfg.noise_sigma = 1e-9;
        auto datasets = generate(tight, Rng(5));
        for (const auto& ds : datasets) {
            for (const Sample& s : ds.train) {
                for (std::size_t i = 0; i < s.x.size(); ++i) {
                    double mu = tight.prototypes[s.label][i] +
                                tight.cfg.shift_strength * tight.shifts[ds.domain_id][i];
                    CHECK(std::abs(s.x[i] - mu) < 1e-6);
                }
            }
        }
    }

    SUBCASE("zero shift strength makes domains statistically identical") {
        DomainSpec flat = f.spec;
        flat.cfg.shift_strength = 0.0;
        flat.cfg.noise_sigma = 0.05;
        flat.cfg.samples_per_domain_class = 60;
        auto datasets = generate(flat, Rng(6));
        for (std::size_t j = 0; j < 4; ++j) {
            Vec mean0(12, 0.0), mean1(12, 0.0);
            auto accumulate = [&](const DomainDataset& ds, Vec& mean) {
                std::size_t count = 0;
                for (const auto* list : {&ds.train, &ds.test}) {
                    for (const Sample& s : *list) {
                        if (s.label != j) continue;
                        for (std::size_t i = 0; i < 12; ++i) mean[i] += s.x[i];
                        ++count;
                    }
                }
                for (double& e : mean) e /= static_cast<double>(count);
            };
            accumulate(datasets[0], mean0);
            accumulate(datasets[1], mean1);
            Vec diff(12);
            for (std::size_t i = 0; i < 12; ++i) diff[i] = mean0[i] - mean1[i];
            CHECK(norm(diff) < 0.12);  // noise floor: sigma sqrt(2 p / n) ~ 0.03
        }
    }

    SUBCASE("too few samples for the split is rejected") {
        DomainSpec tiny = f.spec;
        tiny.cfg.samples_per_domain_class = 1;
        CHECK_THROWS_AS((void)generate(tiny, Rng(1)), ConfigError);
    }
}

TEST_CASE("leave_one_out removes exactly the target") {
    Fixture f;
    auto datasets = generate(f.spec, Rng(3));

    LeaveOneOut split = leave_one_out(datasets, 2);
    CHECK(split.target_id == 2);
    CHECK(split.source_ids == std::vector<std::size_t>{0, 1, 3});
    REQUIRE(split.target_test.size() == datasets[2].test.size());
    for (std::size_t i = 0; i < split.target_test.size(); ++i) {
        CHECK(split.target_test[i].x == datasets[2].test[i].x);
    }

    CHECK(leave_one_out(datasets, 0).source_ids == std::vector<std::size_t>{1, 2, 3});
    CHECK_THROWS_AS((void)leave_one_out(datasets, 4), ConfigError);
}

TEST_CASE("partition deals source training data across clients") {
    Fixture f;
    DomainSpec spec = f.spec;
    spec.cfg.samples_per_domain_class = 20;  // 16 train per (domain, class)
    auto datasets = generate(spec, Rng(3));
    std::vector<std::size_t> sources = {0, 1, 3};

    auto all_source_train = [&]() {
        std::vector<Vec> xs;
        for (std::size_t src : sources) {
            for (const Sample& s : datasets[src].train) xs.push_back(s.x);
        }
        std::sort(xs.begin(), xs.end());
        return xs;
    };

    SUBCASE("one client per domain") {
        auto shards = partition(datasets, sources, 3, PartitionMode::one_domain_iid, Rng(8));
        REQUIRE(shards.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(shards[i].client_id == i);
            CHECK(shards[i].domains_present == std::vector<std::size_t>{sources[i]});
            CHECK(shards[i].samples.size() == 4 * 16);
        }
    }

    SUBCASE("uneven client counts split domains 3-3-2 for eight clients") {
        auto shards = partition(datasets, sources, 8, PartitionMode::one_domain_iid, Rng(8));
        std::vector<std::size_t> per_domain(4, 0);
        for (const auto& sh : shards) {
            REQUIRE(sh.domains_present.size() == 1);
            per_domain.at(sh.domains_present[0]) += 1;
        }
        CHECK(per_domain[0] == 3);
        CHECK(per_domain[1] == 3);
        CHECK(per_domain[3] == 2);
        CHECK(per_domain[2] == 0);  // held-out target serves no client
    }

    SUBCASE("shards exactly re-cover the source training data") {
        for (PartitionMode mode : {PartitionMode::one_domain_iid, PartitionMode::mixed}) {
            auto shards = partition(datasets, sources, 5, mode, Rng(8));
            std::vector<Vec> dealt;
            for (const auto& sh : shards) {
                for (const Sample& s : sh.samples) dealt.push_back(s.x);
            }
            std::sort(dealt.begin(), dealt.end());
            CHECK(dealt == all_source_train());
        }
    }

    SUBCASE("mixed mode reaches every source domain") {
        auto shards = partition(datasets, sources, 4, PartitionMode::mixed, Rng(8));
        std::vector<std::size_t> seen;
        for (const auto& sh : shards) {
            for (std::size_t m : sh.domains_present) seen.push_back(m);
        }
        std::sort(seen.begin(), seen.end());
        seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
        CHECK(seen == sources);
    }

    SUBCASE("deterministic in the partition seed") {
        auto a = partition(datasets, sources, 5, PartitionMode::mixed, Rng(8));
        auto b = partition(datasets, sources, 5, PartitionMode::mixed, Rng(8));
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(a[i].samples.size() == b[i].samples.size());
            for (std::size_t s = 0; s < a[i].samples.size(); ++s) {
                CHECK(a[i].samples[s].x == b[i].samples[s].x);
            }
        }
    }

    SUBCASE("fewer clients than domains is rejected in one-domain mode") {
        CHECK_THROWS_AS(
            (void)partition(datasets, sources, 2, PartitionMode::one_domain_iid, Rng(8)),
            ConfigError);
        CHECK_THROWS_AS((void)partition(datasets, sources, 0, PartitionMode::mixed, Rng(8)),
                        ConfigError);
    }
}
