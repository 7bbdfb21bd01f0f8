#include "volformer/checkpoint.hpp"
#include "volformer/cohort.hpp"
#include "volformer/error.hpp"
#include "volformer/rng.hpp"
#include "volformer/synth.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

using namespace volformer;

namespace {

Subject subject(std::string id, double age, double bmi, int label, std::string sex = "M",
                std::string eth = "A") {
    Subject s;
    s.id = std::move(id);
    s.age = age;
    s.bmi = bmi;
    s.label = label;
    s.sex = std::move(sex);
    s.ethnicity = std::move(eth);
    s.volume_path = "mem://" + s.id;
    return s;
}

double oracle_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 1.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    return sd > 0.0 ? sd : 1.0;
}

// Literal restatement of the documented greedy matching rule, written
// independently of the implementation.
MatchResult oracle_match(std::vector<Subject> subjects) {
    std::vector<double> ages, bmis;
    for (const auto& s : subjects) {
        ages.push_back(s.age);
        bmis.push_back(s.bmi);
    }
    const double sd_age = oracle_sd(ages), sd_bmi = oracle_sd(bmis);
    std::sort(subjects.begin(), subjects.end(),
              [](const Subject& a, const Subject& b) { return a.id < b.id; });
    std::set<std::string> used;
    MatchResult out;
    for (const auto& c : subjects) {
        if (c.label != 1) continue;
        std::string best_id;
        double best = std::numeric_limits<double>::infinity();
        for (const auto& k : subjects) {
            if (k.label != 0 || used.count(k.id)) continue;
            if (k.sex != c.sex || k.ethnicity != c.ethnicity) continue;
            if (std::fabs(k.age - c.age) > 5.0 || std::fabs(k.bmi - c.bmi) > 3.0) continue;
            const double d = std::fabs(k.age - c.age) / sd_age + std::fabs(k.bmi - c.bmi) / sd_bmi;
            if (d < best) { // ids ascending, strict <: ties keep the smaller id
                best = d;
                best_id = k.id;
            }
        }
        if (best_id.empty()) {
            out.excluded.push_back(c.id);
        } else {
            used.insert(best_id);
            out.pairs.push_back({c.id, best_id});
        }
    }
    for (const auto& s : subjects) {
        if (s.label == 0 && !used.count(s.id)) out.excluded.push_back(s.id);
    }
    std::sort(out.excluded.begin(), out.excluded.end());
    return out;
}

bool same_result(const MatchResult& a, const MatchResult& b) {
    if (a.pairs.size() != b.pairs.size() || a.excluded != b.excluded) return false;
    for (std::size_t i = 0; i < a.pairs.size(); ++i) {
        if (a.pairs[i].case_id != b.pairs[i].case_id ||
            a.pairs[i].control_id != b.pairs[i].control_id) {
            return false;
        }
    }
    return true;
}

ViTConfig tiny_vit() {
    ViTConfig cfg;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.depth = 1;
    return cfg;
}

std::vector<std::uint8_t> param_bytes(const ModelParams& p) {
    return serialize_archive(params_to_tensors(p));
}

Volume block_volume(float background, float block_level) {
    std::vector<float> vals(16 * 16, background);
    for (int y = 4; y < 12; ++y) {
        for (int x = 4; x < 12; ++x) vals[static_cast<std::size_t>(y * 16 + x)] = block_level;
    }
    return make_volume(1, 16, 16, std::move(vals));
}

} // namespace

TEST_CASE("greedy matching: first case claims its nearest control") {
    // Optimal assignment would pair case_01 with ctrl_02 (total cost 1.4 vs
    // 2.6), but the documented rule is greedy in ascending case id.
    std::vector<Subject> s = {
        subject("case_01", 50.0, 25.0, 1),
        subject("case_02", 51.0, 25.0, 1),
        subject("ctrl_01", 50.6, 25.0, 0),
        subject("ctrl_02", 49.0, 25.0, 0),
    };
    const MatchResult r = match_case_controls(s);
    REQUIRE(r.pairs.size() == 2);
    CHECK(r.pairs[0].case_id == "case_01");
    CHECK(r.pairs[0].control_id == "ctrl_01");
    CHECK(r.pairs[1].case_id == "case_02");
    CHECK(r.pairs[1].control_id == "ctrl_02");
    CHECK(r.excluded.empty());
}

TEST_CASE("matching enforces exact sex and ethnicity and the calipers") {
    std::vector<Subject> s = {
        subject("case_01", 50, 25, 1, "F", "A"),
        subject("ctrl_m", 50, 25, 0, "M", "A"),   // wrong sex
        subject("ctrl_eth", 50, 25, 0, "F", "B"), // wrong ethnicity
        subject("ctrl_age", 56, 25, 0, "F", "A"), // |dAge| = 6 > 5
        subject("ctrl_bmi", 50, 28.5, 0, "F", "A"), // |dBMI| = 3.5 > 3
    };
    const MatchResult r = match_case_controls(s);
    CHECK(r.pairs.empty());
    CHECK(r.excluded.size() == 5);
    CHECK(std::is_sorted(r.excluded.begin(), r.excluded.end()));

    // Boundary values are inside the calipers.
    std::vector<Subject> edge = {
        subject("case_01", 50, 25, 1),
        subject("ctrl_01", 55, 28, 0), // exactly 5 years, 3 BMI away
    };
    const MatchResult re = match_case_controls(edge);
    REQUIRE(re.pairs.size() == 1);
    CHECK(re.pairs[0].control_id == "ctrl_01");
}

TEST_CASE("matching distance ties break toward the smaller control id") {
    std::vector<Subject> s = {
        subject("case_01", 50.0, 25.0, 1),
        subject("ctrl_a", 50.4, 25.0, 0),
        subject("ctrl_b", 49.6, 25.0, 0), // same |dAge|, same |dBMI|
    };
    const MatchResult r = match_case_controls(s);
    REQUIRE(r.pairs.size() == 1);
    CHECK(r.pairs[0].control_id == "ctrl_a");
    CHECK(r.excluded == std::vector<std::string>{"ctrl_b"});
}

TEST_CASE("matching agrees with the documented-rule oracle on random cohorts") {
    SeededRng rng(31);
    const std::vector<std::string> eths = {"A", "B"};
    for (int rep = 0; rep < 60; ++rep) {
        std::vector<Subject> s;
        const int n = 10 + static_cast<int>(rng.next_below(40));
        for (int i = 0; i < n; ++i) {
            char id[16];
            std::snprintf(id, sizeof(id), "s%03d", i);
            s.push_back(subject(id, 45.0 + 20.0 * rng.next_double(),
                                20.0 + 12.0 * rng.next_double(),
                                rng.next_below(2) == 0 ? 0 : 1,
                                rng.next_below(2) == 0 ? "M" : "F",
                                eths[rng.next_below(2)]));
        }
        CHECK(same_result(match_case_controls(s), oracle_match(s)));
    }
}

TEST_CASE("each control is claimed at most once") {
    std::vector<Subject> s = {
        subject("case_01", 50, 25, 1),
        subject("case_02", 50.1, 25, 1),
        subject("ctrl_01", 50, 25, 0),
    };
    const MatchResult r = match_case_controls(s);
    REQUIRE(r.pairs.size() == 1);
    CHECK(r.pairs[0].case_id == "case_01");
    CHECK(r.excluded == std::vector<std::string>{"case_02"});
}

TEST_CASE("six-fold split: pairs stay atomic, sizes balance, seed fixes the deal") {
    std::vector<MatchedPair> pairs;
    for (int i = 0; i < 302; ++i) {
        pairs.push_back({"case_" + std::to_string(i), "ctrl_" + std::to_string(i)});
    }
    const FoldSplit a = split_six_folds(pairs, 7);
    std::multiset<std::size_t> sizes;
    std::set<std::size_t> seen;
    for (const auto& f : a.folds) {
        sizes.insert(f.size());
        for (std::size_t idx : f) CHECK(seen.insert(idx).second); // disjoint
    }
    CHECK(seen.size() == 302); // complete
    CHECK(sizes == std::multiset<std::size_t>{50, 50, 50, 50, 51, 51});

    const FoldSplit b = split_six_folds(pairs, 7);
    for (int f = 0; f < 6; ++f) CHECK(a.folds[static_cast<std::size_t>(f)] == b.folds[static_cast<std::size_t>(f)]);
    const FoldSplit c = split_six_folds(pairs, 8);
    bool any_diff = false;
    for (int f = 0; f < 6; ++f) {
        any_diff = any_diff || a.folds[static_cast<std::size_t>(f)] != c.folds[static_cast<std::size_t>(f)];
    }
    CHECK(any_diff);

    std::vector<MatchedPair> few(pairs.begin(), pairs.begin() + 5);
    CHECK_THROWS_AS(split_six_folds(few, 0), Error);
    // Exactly six pairs: one per fold.
    std::vector<MatchedPair> six(pairs.begin(), pairs.begin() + 6);
    const FoldSplit d = split_six_folds(six, 1);
    for (const auto& f : d.folds) CHECK(f.size() == 1);
}

TEST_CASE("train config validation") {
    TrainConfig ok;
    CHECK_NOTHROW(ok.validate());
    TrainConfig bad = ok;
    bad.learning_rate = -1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = ok;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = ok;
    bad.batch_size = 3;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = ok;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = ok;
    bad.weight_decay = -0.1;
    try {
        bad.validate();
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
    }
}

TEST_CASE("volume store caches puts and rejects unknown paths") {
    VolumeStore store;
    store.put("mem://a", make_volume(1, 2, 2, {0.1f, 0.2f, 0.3f, 0.4f}));
    const Volume& v = store.get("mem://a");
    CHECK(v.voxels.at(0, 0, 1) == 0.2f);
    CHECK(&store.get("mem://a") == &v); // cached, same object
    CHECK_THROWS_AS(store.get("/nonexistent/path.nta"), Error);
}

TEST_CASE("find_subject names the missing id") {
    std::vector<Subject> s = {subject("a", 50, 25, 1)};
    CHECK(find_subject(s, "a").id == "a");
    try {
        find_subject(s, "zz");
        FAIL("expected data error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
        CHECK(std::string(e.what()).find("zz") != std::string::npos);
    }
}

TEST_CASE("training with zero learning rate leaves parameters bit-identical") {
    ViTConfig vit = tiny_vit();
    const NamedTensors pre = synthetic_pretrained_2d(vit, 1, 1, 5);
    auto [params, report] = import_2d_vit(pre, 1, 1, 1, vit, 6);
    const auto before = param_bytes(params);

    std::vector<Subject> subjects = {subject("case_01", 50, 25, 1),
                                     subject("ctrl_01", 51, 26, 0)};
    VolumeStore store;
    store.put("mem://case_01", block_volume(0.3f, 0.9f));
    store.put("mem://ctrl_01", block_volume(0.3f, 0.3f));
    std::vector<MatchedPair> pairs = {{"case_01", "ctrl_01"}};

    TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.epochs = 3;
    tc.batch_size = 2;
    tc.weight_decay = 0.5; // decoupled decay is also scaled by lr
    tc.seed = 1;
    const TrainHistory h = train(params, subjects, pairs, tc, store);
    CHECK(h.epoch_mean_loss.size() == 3);
    CHECK(param_bytes(params) == before);
    // All epochs saw the same loss (nothing moved).
    CHECK(h.epoch_mean_loss[0] == doctest::Approx(h.epoch_mean_loss[2]));
}

TEST_CASE("a single pair is driven to separation (overfit check)") {
    ViTConfig vit = tiny_vit();
    const NamedTensors pre = synthetic_pretrained_2d(vit, 1, 1, 7);
    auto [params, report] = import_2d_vit(pre, 1, 1, 1, vit, 8);

    std::vector<Subject> subjects = {subject("case_01", 50, 25, 1),
                                     subject("ctrl_01", 51, 26, 0)};
    VolumeStore store;
    store.put("mem://case_01", block_volume(0.3f, 0.9f));
    store.put("mem://ctrl_01", block_volume(0.3f, 0.3f));
    std::vector<MatchedPair> pairs = {{"case_01", "ctrl_01"}};

    TrainConfig tc;
    tc.learning_rate = 5e-3;
    tc.epochs = 150;
    tc.batch_size = 2;
    tc.weight_decay = 0.0;
    tc.seed = 2;
    const TrainHistory h = train(params, subjects, pairs, tc, store);
    REQUIRE(h.epoch_mean_loss.size() == 150);
    CHECK(h.epoch_mean_loss.front() > h.epoch_mean_loss.back());
    CHECK(h.epoch_mean_loss.back() < 0.1);

    const double p_case = forward(store.get("mem://case_01"), params).first;
    const double p_ctrl = forward(store.get("mem://ctrl_01"), params).first;
    CHECK(p_case > 0.7);
    CHECK(p_ctrl < 0.3);
}

TEST_CASE("training is deterministic in the seed") {
    ViTConfig vit = tiny_vit();
    const NamedTensors pre = synthetic_pretrained_2d(vit, 1, 1, 9);

    std::vector<Subject> subjects;
    std::vector<MatchedPair> pairs;
    VolumeStore store;
    SeededRng rng(10);
    for (int i = 0; i < 4; ++i) {
        const std::string c = "case_" + std::to_string(i), k = "ctrl_" + std::to_string(i);
        subjects.push_back(subject(c, 50, 25, 1));
        subjects.push_back(subject(k, 50, 25, 0));
        store.put("mem://" + c, block_volume(0.3f, 0.6f + 0.05f * static_cast<float>(i)));
        store.put("mem://" + k, block_volume(0.3f, 0.3f));
        pairs.push_back({c, k});
    }

    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.epochs = 2;
    tc.batch_size = 4;
    tc.seed = 11;
    auto run = [&](std::uint64_t seed) {
        TrainConfig t2 = tc;
        t2.seed = seed;
        auto [p, rep] = import_2d_vit(pre, 1, 1, 1, vit, 12);
        const TrainHistory h = train(p, subjects, pairs, t2, store);
        return std::make_pair(param_bytes(p), h.epoch_mean_loss);
    };
    const auto [bytes_a, hist_a] = run(11);
    const auto [bytes_b, hist_b] = run(11);
    CHECK(bytes_a == bytes_b);
    CHECK(hist_a == hist_b);
    const auto [bytes_c, hist_c] = run(99);
    CHECK(bytes_a != bytes_c); // different batch order changes float rounding
}

TEST_CASE("train validates pair membership") {
    ViTConfig vit = tiny_vit();
    const NamedTensors pre = synthetic_pretrained_2d(vit, 1, 1, 13);
    auto [params, report] = import_2d_vit(pre, 1, 1, 1, vit, 14);
    std::vector<Subject> subjects = {subject("case_01", 50, 25, 1),
                                     subject("ctrl_01", 51, 26, 0)};
    VolumeStore store;
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 2;
    std::vector<MatchedPair> ghost = {{"case_01", "nope"}};
    CHECK_THROWS_AS(train(params, subjects, ghost, tc, store), Error);
    std::vector<MatchedPair> twisted = {{"ctrl_01", "case_01"}};
    try {
        train(params, subjects, twisted, tc, store);
        FAIL("expected data error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
    }
    CHECK_THROWS_AS(train(params, subjects, {}, tc, store), Error);
}

TEST_CASE("non-finite parameters surface as a numeric training error") {
    ViTConfig vit = tiny_vit();
    const NamedTensors pre = synthetic_pretrained_2d(vit, 1, 1, 15);
    auto [params, report] = import_2d_vit(pre, 1, 1, 1, vit, 16);
    params.blocks[0].qkv_w[0] = std::numeric_limits<float>::quiet_NaN();
    std::vector<Subject> subjects = {subject("case_01", 50, 25, 1),
                                     subject("ctrl_01", 51, 26, 0)};
    VolumeStore store;
    store.put("mem://case_01", block_volume(0.3f, 0.9f));
    store.put("mem://ctrl_01", block_volume(0.3f, 0.3f));
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 2;
    try {
        train(params, subjects, {{"case_01", "ctrl_01"}}, tc, store);
        FAIL("expected numeric error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::numeric);
    }
}

TEST_CASE("cross_validate: per-fold import seeds and zero-lr round trip") {
    ViTConfig vit = tiny_vit();
    const NamedTensors pre = synthetic_pretrained_2d(vit, 1, 1, 17);

    std::vector<Subject> subjects;
    std::vector<MatchedPair> pairs;
    VolumeStore store;
    for (int i = 0; i < 6; ++i) {
        const std::string c = "case_" + std::to_string(i), k = "ctrl_" + std::to_string(i);
        subjects.push_back(subject(c, 50, 25, 1));
        subjects.push_back(subject(k, 50, 25, 0));
        store.put("mem://" + c, block_volume(0.3f, 0.9f));
        store.put("mem://" + k, block_volume(0.3f, 0.3f));
        pairs.push_back({c, k});
    }
    const FoldSplit split = split_six_folds(pairs, 3);

    TrainConfig tc;
    tc.learning_rate = 0.0; // training must not move the imported weights
    tc.epochs = 1;
    tc.batch_size = 2;
    tc.seed = 20;
    const auto results = cross_validate(pre, subjects, pairs, split, tc, vit, store, 1);
    REQUIRE(results.size() == 6);
    for (std::size_t f = 0; f < 6; ++f) {
        auto [want, rep] = import_2d_vit(pre, 1, 1, 1, vit, tc.seed + f);
        CHECK(param_bytes(results[f].params) == param_bytes(want));
        // Validation holds exactly the fold's pairs: case then control.
        REQUIRE(results[f].subject_ids.size() == 2 * split.folds[f].size());
        REQUIRE(results[f].validation.labels.size() == results[f].subject_ids.size());
        for (std::size_t i = 0; i < split.folds[f].size(); ++i) {
            const MatchedPair& p = pairs[split.folds[f][i]];
            CHECK(results[f].subject_ids[2 * i] == p.case_id);
            CHECK(results[f].subject_ids[2 * i + 1] == p.control_id);
            CHECK(results[f].validation.labels[2 * i] == 1);
            CHECK(results[f].validation.labels[2 * i + 1] == 0);
        }
    }
}

TEST_CASE("cross_validate is identical under single- and multi-threaded runs") {
    ViTConfig vit = tiny_vit();
    const NamedTensors pre = synthetic_pretrained_2d(vit, 1, 1, 21);
    std::vector<Subject> subjects;
    std::vector<MatchedPair> pairs;
    VolumeStore store;
    for (int i = 0; i < 7; ++i) {
        const std::string c = "case_" + std::to_string(i), k = "ctrl_" + std::to_string(i);
        subjects.push_back(subject(c, 50, 25, 1));
        subjects.push_back(subject(k, 50, 25, 0));
        store.put("mem://" + c, block_volume(0.3f, 0.85f));
        store.put("mem://" + k, block_volume(0.3f, 0.35f));
        pairs.push_back({c, k});
    }
    const FoldSplit split = split_six_folds(pairs, 4);
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.epochs = 1;
    tc.batch_size = 2;
    tc.seed = 22;
    const auto seq = cross_validate(pre, subjects, pairs, split, tc, vit, store, 1);
    const auto par = cross_validate(pre, subjects, pairs, split, tc, vit, store, 3);
    REQUIRE(seq.size() == par.size());
    for (std::size_t f = 0; f < 6; ++f) {
        CHECK(param_bytes(seq[f].params) == param_bytes(par[f].params));
        CHECK(seq[f].validation.scores == par[f].validation.scores);
        CHECK(seq[f].subject_ids == par[f].subject_ids);
    }

    // A split that does not cover the pair list is rejected.
    FoldSplit broken = split;
    broken.folds[0].pop_back();
    CHECK_THROWS_AS(cross_validate(pre, subjects, pairs, broken, tc, vit, store, 1), Error);
}

TEST_CASE("synthetic cohorts are deterministic and well-formed") {
    SynthConfig cfg;
    cfg.n_pairs = 6;
    cfg.depth = 4;
    cfg.height = 32;
    cfg.width = 32;
    cfg.seed = 40;
    const SynthDataset a = synthesize_cohort(cfg);
    const SynthDataset b = synthesize_cohort(cfg);
    CHECK(manifest_to_json(a.manifest) == manifest_to_json(b.manifest));
    REQUIRE(a.volumes.size() == 12);
    REQUIRE(a.manifest.subjects.size() == 12);
    bool all_equal = true;
    for (std::size_t i = 0; i < a.volumes.size(); ++i) {
        all_equal = all_equal && (a.volumes[i].voxels.data == b.volumes[i].voxels.data);
    }
    CHECK(all_equal);

    SynthConfig other = cfg;
    other.seed = 41;
    const SynthDataset c = synthesize_cohort(other);
    CHECK(manifest_to_json(c.manifest) != manifest_to_json(a.manifest));

    for (std::size_t i = 0; i < a.manifest.subjects.size(); ++i) {
        const Subject& s = a.manifest.subjects[i];
        const Volume& v = a.volumes[i];
        CHECK(v.depth == 4);
        CHECK(v.height == 32);
        CHECK(v.width == 32);
        for (float x : v.voxels.data) {
            CHECK(x >= 0.0f);
            CHECK(x <= 1.0f);
        }
        CHECK(s.volume_path == "volumes/" + s.id + ".nta");
        CHECK(s.age >= 40.0);
        CHECK(s.age <= 80.0);
        CHECK(s.bmi >= 18.0);
        CHECK(s.bmi <= 37.0);
        REQUIRE(a.manifest.regions.count(s.id) == 1);
        CHECK(a.manifest.regions.at(s.id).applied == (s.label == 1));
    }
    // Pairs alternate case, control with aligned demographics.
    for (int i = 0; i < 6; ++i) {
        const Subject& cs = a.manifest.subjects[static_cast<std::size_t>(2 * i)];
        const Subject& ks = a.manifest.subjects[static_cast<std::size_t>(2 * i + 1)];
        CHECK(cs.label == 1);
        CHECK(ks.label == 0);
        CHECK(cs.sex == ks.sex);
        CHECK(cs.ethnicity == ks.ethnicity);
        CHECK(std::fabs(cs.age - ks.age) <= 2.0 + 1e-9);
        CHECK(std::fabs(cs.bmi - ks.bmi) <= 1.5 + 1e-9);
    }
}

TEST_CASE("lesions raise the region mean for cases but not controls") {
    SynthConfig cfg;
    cfg.n_pairs = 10;
    cfg.depth = 6;
    cfg.height = 48;
    cfg.width = 48;
    cfg.lesion_delta = 0.4;
    cfg.noise_sd = 0.1;
    cfg.seed = 50;
    const SynthDataset d = synthesize_cohort(cfg);
    int correct = 0;
    for (int i = 0; i < 10; ++i) {
        const Subject& cs = d.manifest.subjects[static_cast<std::size_t>(2 * i)];
        const Subject& ks = d.manifest.subjects[static_cast<std::size_t>(2 * i + 1)];
        const double mc = region_mean(d.volumes[static_cast<std::size_t>(2 * i)],
                                      d.manifest.regions.at(cs.id));
        const double mk = region_mean(d.volumes[static_cast<std::size_t>(2 * i + 1)],
                                      d.manifest.regions.at(ks.id));
        if (mc > mk) ++correct;
    }
    CHECK(correct == 10); // delta 0.4 dwarfs noise_sd 0.1 averaged over a region

    // Zero delta removes the signal everywhere (cases == controls in law).
    SynthConfig null_cfg = cfg;
    null_cfg.lesion_delta = 0.0;
    const SynthDataset n = synthesize_cohort(null_cfg);
    for (const auto& [id, region] : n.manifest.regions) CHECK(region.applied == false);
}

TEST_CASE("matched synthetic cohorts stay balanced under a paired t-test") {
    SynthConfig cfg;
    cfg.n_pairs = 100;
    cfg.depth = 1;
    cfg.height = 16;
    cfg.width = 16;
    cfg.seed = 60;
    const SynthDataset d = synthesize_cohort(cfg);
    const MatchResult m = match_case_controls(d.manifest.subjects);
    CHECK(m.pairs.size() >= 95); // tight jitter: nearly everything matches

    // Paired differences of age and BMI over the matched pairs should carry
    // no systematic shift: |t| < the 95% critical value.
    std::vector<double> d_age, d_bmi;
    for (const auto& p : m.pairs) {
        const Subject& cs = find_subject(d.manifest.subjects, p.case_id);
        const Subject& ks = find_subject(d.manifest.subjects, p.control_id);
        d_age.push_back(cs.age - ks.age);
        d_bmi.push_back(cs.bmi - ks.bmi);
    }
    auto t_stat = [](const std::vector<double>& diff) {
        double mean = 0.0;
        for (double x : diff) mean += x;
        mean /= static_cast<double>(diff.size());
        double ss = 0.0;
        for (double x : diff) ss += (x - mean) * (x - mean);
        const double sd = std::sqrt(ss / static_cast<double>(diff.size() - 1));
        return mean / (sd / std::sqrt(static_cast<double>(diff.size())));
    };
    CHECK(std::fabs(t_stat(d_age)) < 1.984); // t crit (two-sided 95%, df ~99)
    CHECK(std::fabs(t_stat(d_bmi)) < 1.984);
}

TEST_CASE("manifest JSON round trip preserves subjects and regions") {
    Manifest m;
    m.subjects.push_back(subject("case_0001", 52.25, 27.5, 1, "F", "B"));
    m.subjects.push_back(subject("ctrl_0001", 53.0, 26.75, 0, "F", "B"));
    RegionInfo r;
    r.center = {2.0, 16.5, 17.25};
    r.radii = {1.5, 4.0, 5.0};
    r.applied = true;
    m.regions["case_0001"] = r;
    r.applied = false;
    m.regions["ctrl_0001"] = r;

    const std::string text = manifest_to_json(m);
    const Manifest back = manifest_from_json(text);
    REQUIRE(back.subjects.size() == 2);
    CHECK(back.subjects[0].id == "case_0001");
    CHECK(back.subjects[0].age == doctest::Approx(52.25));
    CHECK(back.subjects[0].sex == "F");
    CHECK(back.subjects[0].ethnicity == "B");
    CHECK(back.subjects[0].label == 1);
    CHECK(back.subjects[1].label == 0);
    CHECK(back.subjects[0].volume_path == "mem://case_0001");
    REQUIRE(back.regions.count("case_0001") == 1);
    CHECK(back.regions.at("case_0001").applied);
    CHECK(back.regions.at("case_0001").center[1] == doctest::Approx(16.5));
    CHECK_FALSE(back.regions.at("ctrl_0001").applied);

    // Round trip through text is a fixed point.
    CHECK(manifest_to_json(back) == text);
}

TEST_CASE("manifest validation rejects malformed entries") {
    auto expect_data_error = [](const std::string& text) {
        try {
            manifest_from_json(text);
            FAIL("expected data error for: " << text);
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::data);
        }
    };
    expect_data_error("not json at all");
    expect_data_error(R"({"no_subjects": []})");
    expect_data_error(
        R"({"subjects":[{"id":"a","age":50,"sex":"M","ethnicity":"A","bmi":25,"label":"CASE","volume":"v"}]})");
    expect_data_error(
        R"({"subjects":[{"id":"a","age":-1,"sex":"M","ethnicity":"A","bmi":25,"label":"case","volume":"v"}]})");
    expect_data_error(
        R"({"subjects":[{"id":"a","age":50,"sex":"X","ethnicity":"A","bmi":25,"label":"case","volume":"v"}]})");
    expect_data_error(
        R"({"subjects":[{"id":"a","age":50,"sex":"M","ethnicity":"A","bmi":25,"label":"case","volume":"v"},
                        {"id":"a","age":51,"sex":"M","ethnicity":"A","bmi":26,"label":"control","volume":"w"}]})");
    expect_data_error(
        R"({"subjects":[{"id":"a","age":"old","sex":"M","ethnicity":"A","bmi":25,"label":"case","volume":"v"}]})");
    expect_data_error(
        R"({"subjects":[{"id":"a","sex":"M","ethnicity":"A","bmi":25,"label":"case","volume":"v"}]})");
    expect_data_error(
        R"({"subjects":[{"id":"a","age":50,"sex":"M","ethnicity":"A","bmi":25,"label":"case","volume":"v",
                         "region":{"center":[1,2],"radii":[1,2,3],"applied":true}}]})");
}
