#include "volformer/cohort.hpp"

#include "volformer/error.hpp"
#include "volformer/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace volformer {

namespace {

double sample_sd_or_one(const std::vector<double>& v) {
    if (v.size() < 2) return 1.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    return sd > 0.0 ? sd : 1.0;
}

} // namespace

MatchResult match_case_controls(const std::vector<Subject>& subjects) {
    std::vector<double> ages, bmis;
    for (const auto& s : subjects) {
        ages.push_back(s.age);
        bmis.push_back(s.bmi);
    }
    const double sd_age = sample_sd_or_one(ages);
    const double sd_bmi = sample_sd_or_one(bmis);

    std::vector<const Subject*> cases, controls;
    for (const auto& s : subjects) (s.label == 1 ? cases : controls).push_back(&s);
    std::sort(cases.begin(), cases.end(),
              [](const Subject* a, const Subject* b) { return a->id < b->id; });
    std::sort(controls.begin(), controls.end(),
              [](const Subject* a, const Subject* b) { return a->id < b->id; });

    std::vector<bool> taken(controls.size(), false);
    MatchResult out;
    for (const Subject* c : cases) {
        std::size_t best = controls.size();
        double best_dist = 0.0;
        for (std::size_t k = 0; k < controls.size(); ++k) {
            if (taken[k]) continue;
            const Subject* ctl = controls[k];
            if (ctl->sex != c->sex || ctl->ethnicity != c->ethnicity) continue;
            const double d_age = std::fabs(ctl->age - c->age);
            const double d_bmi = std::fabs(ctl->bmi - c->bmi);
            if (d_age > 5.0 || d_bmi > 3.0) continue;
            const double dist = d_age / sd_age + d_bmi / sd_bmi;
            // Controls are scanned in ascending id, so strict < breaks
            // distance ties toward the smaller id.
            if (best == controls.size() || dist < best_dist) {
                best = k;
                best_dist = dist;
            }
        }
        if (best == controls.size()) {
            out.excluded.push_back(c->id);
        } else {
            taken[best] = true;
            out.pairs.push_back({c->id, controls[best]->id});
        }
    }
    for (std::size_t k = 0; k < controls.size(); ++k) {
        if (!taken[k]) out.excluded.push_back(controls[k]->id);
    }
    std::sort(out.excluded.begin(), out.excluded.end());
    return out;
}

FoldSplit split_six_folds(const std::vector<MatchedPair>& pairs, std::uint64_t seed) {
    if (pairs.size() < 6) {
        fail(ErrorKind::data, "six-fold split needs at least 6 pairs, got " +
                                  std::to_string(pairs.size()));
    }
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SeededRng rng(seed);
    rng.shuffle(order);
    FoldSplit split;
    for (std::size_t i = 0; i < order.size(); ++i) split.folds[i % 6].push_back(order[i]);
    return split;
}

void TrainConfig::validate() const {
    if (learning_rate < 0.0 || !std::isfinite(learning_rate)) {
        fail(ErrorKind::config, "learning_rate must be finite and >= 0");
    }
    if (epochs < 1) fail(ErrorKind::config, "epochs must be >= 1");
    if (batch_size < 2 || batch_size % 2 != 0) {
        fail(ErrorKind::config, "batch_size must be even and >= 2 (pair-balanced batches)");
    }
    if (weight_decay < 0.0 || !std::isfinite(weight_decay)) {
        fail(ErrorKind::config, "weight_decay must be finite and >= 0");
    }
}

const Volume& VolumeStore::get(const std::string& path) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(path);
    if (it == cache_.end()) it = cache_.emplace(path, load_volume(path)).first;
    return it->second;
}

void VolumeStore::put(const std::string& path, Volume v) {
    std::lock_guard<std::mutex> lock(mu_);
    cache_.insert_or_assign(path, std::move(v));
}

const Subject& find_subject(const std::vector<Subject>& subjects, const std::string& id) {
    for (const auto& s : subjects) {
        if (s.id == id) return s;
    }
    fail(ErrorKind::data, "subject '" + id + "' not found in the cohort");
}

namespace {

std::vector<std::vector<float>*> collect_buffers(ModelParams& p) {
    std::vector<std::vector<float>*> out;
    visit_params(p, [&](const std::string&, std::vector<float>& buf,
                        const std::vector<std::int64_t>&) { out.push_back(&buf); });
    return out;
}

} // namespace

TrainHistory train(ModelParams& params, const std::vector<Subject>& subjects,
                   const std::vector<MatchedPair>& pairs, const TrainConfig& cfg,
                   VolumeStore& store) {
    cfg.validate();
    params.cfg.validate();
    if (pairs.empty()) fail(ErrorKind::data, "train: no pairs given");

    std::map<std::string, const Subject*> by_id;
    for (const auto& s : subjects) by_id[s.id] = &s;
    auto subject = [&](const std::string& id) -> const Subject& {
        auto it = by_id.find(id);
        if (it == by_id.end()) fail(ErrorKind::data, "subject '" + id + "' not found in the cohort");
        return *it->second;
    };
    for (const auto& p : pairs) {
        if (subject(p.case_id).label != 1 || subject(p.control_id).label != 0) {
            fail(ErrorKind::data, "pair (" + p.case_id + ", " + p.control_id +
                                      ") does not hold one case and one control");
        }
    }

    ModelParams m_state = make_zero_params<float>(params.cfg, params.pos_depth, params.pos_grid_h,
                                                  params.pos_grid_w);
    ModelParams v_state = m_state;
    auto theta = collect_buffers(params);
    auto m_buf = collect_buffers(m_state);
    auto v_buf = collect_buffers(v_state);

    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    SeededRng rng(cfg.seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainHistory history;
    std::int64_t step = 0;
    const std::size_t pairs_per_batch = static_cast<std::size_t>(cfg.batch_size) / 2;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t n_samples = 0;
        for (std::size_t start = 0, batch = 0; start < order.size();
             start += pairs_per_batch, ++batch) {
            const std::size_t end = std::min(start + pairs_per_batch, order.size());
            ModelParams grad_sum = make_zero_params<float>(params.cfg, params.pos_depth,
                                                           params.pos_grid_h, params.pos_grid_w);
            auto g_buf = collect_buffers(grad_sum);
            std::size_t batch_samples = 0;
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const MatchedPair& pr = pairs[order[i]];
                for (int side = 0; side < 2; ++side) {
                    const Subject& subj = subject(side == 0 ? pr.case_id : pr.control_id);
                    const Volume& vol = store.get(subj.volume_path);
                    LossGrads lg = loss_and_grads(vol, subj.label, params);
                    if (!std::isfinite(lg.loss)) {
                        fail(ErrorKind::numeric, "training diverged at epoch " +
                                                     std::to_string(epoch) + ", batch " +
                                                     std::to_string(batch) + ": non-finite loss");
                    }
                    batch_loss += lg.loss;
                    ++batch_samples;
                    auto lg_buf = collect_buffers(lg.grads);
                    for (std::size_t bi = 0; bi < g_buf.size(); ++bi) {
                        float* g = g_buf[bi]->data();
                        const float* src = lg_buf[bi]->data();
                        for (std::size_t j = 0; j < g_buf[bi]->size(); ++j) g[j] += src[j];
                    }
                }
            }
            loss_sum += batch_loss;
            n_samples += batch_samples;
            ++step;
            const double inv_n = 1.0 / static_cast<double>(batch_samples);
            const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
            for (std::size_t bi = 0; bi < theta.size(); ++bi) {
                float* t = theta[bi]->data();
                float* m = m_buf[bi]->data();
                float* v = v_buf[bi]->data();
                const float* g = g_buf[bi]->data();
                for (std::size_t j = 0; j < theta[bi]->size(); ++j) {
                    const double gj = static_cast<double>(g[j]) * inv_n;
                    const double mj = kBeta1 * static_cast<double>(m[j]) + (1.0 - kBeta1) * gj;
                    const double vj = kBeta2 * static_cast<double>(v[j]) + (1.0 - kBeta2) * gj * gj;
                    m[j] = static_cast<float>(mj);
                    v[j] = static_cast<float>(vj);
                    const double update =
                        (mj / bc1) / (std::sqrt(vj / bc2) + kEps) +
                        cfg.weight_decay * static_cast<double>(t[j]);
                    t[j] = static_cast<float>(static_cast<double>(t[j]) -
                                              cfg.learning_rate * update);
                }
            }
            if (!std::isfinite(batch_loss)) {
                fail(ErrorKind::numeric, "training diverged at epoch " + std::to_string(epoch) +
                                             ", batch " + std::to_string(batch));
            }
        }
        check_params_finite(params, "parameters after epoch " + std::to_string(epoch));
        history.epoch_mean_loss.push_back(loss_sum / static_cast<double>(n_samples));
    }
    return history;
}

namespace {

FoldResult run_fold(const NamedTensors& pretrained, const std::vector<Subject>& subjects,
                    const std::vector<MatchedPair>& pairs, const FoldSplit& split,
                    const TrainConfig& cfg, const ViTConfig& vit, VolumeStore& store,
                    std::size_t fold, const PatchGeometry& geom) {
    // Fresh import per fold; head and shuffle seeds are disjoint per fold.
    auto imported = import_2d_vit(pretrained, geom.depth, geom.grid_h, geom.grid_w, vit,
                                  cfg.seed + fold);
    FoldResult result;
    result.params = std::move(imported.first);

    std::vector<MatchedPair> train_pairs;
    for (std::size_t f = 0; f < 6; ++f) {
        if (f == fold) continue;
        for (std::size_t idx : split.folds[f]) train_pairs.push_back(pairs[idx]);
    }
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed + 6 + fold;
    result.history = train(result.params, subjects, train_pairs, fold_cfg, store);

    for (std::size_t idx : split.folds[fold]) {
        for (int side = 0; side < 2; ++side) {
            const std::string& id = side == 0 ? pairs[idx].case_id : pairs[idx].control_id;
            const Subject& subj = find_subject(subjects, id);
            const double prob = forward(store.get(subj.volume_path), result.params).first;
            result.validation.scores.push_back(prob);
            result.validation.labels.push_back(subj.label);
            result.subject_ids.push_back(id);
        }
    }
    return result;
}

} // namespace

std::vector<FoldResult> cross_validate(const NamedTensors& pretrained,
                                       const std::vector<Subject>& subjects,
                                       const std::vector<MatchedPair>& pairs,
                                       const FoldSplit& split, const TrainConfig& cfg,
                                       const ViTConfig& vit, VolumeStore& store, int threads) {
    cfg.validate();
    vit.validate();
    std::size_t n_pairs = 0;
    for (const auto& f : split.folds) n_pairs += f.size();
    if (n_pairs != pairs.size()) {
        fail(ErrorKind::data, "fold split covers " + std::to_string(n_pairs) + " pairs but " +
                                  std::to_string(pairs.size()) + " were given");
    }
    if (pairs.empty()) fail(ErrorKind::data, "cross_validate: no pairs given");

    const Subject& first = find_subject(subjects, pairs.front().case_id);
    const Volume probe = pad_to_patch_multiple(store.get(first.volume_path));
    const PatchGeometry geom = patch_geometry(probe.depth, probe.height, probe.width);

    std::vector<FoldResult> results(6);
    const int n_workers = std::max(1, std::min(threads, 6));
    if (n_workers == 1) {
        for (std::size_t f = 0; f < 6; ++f) {
            results[f] = run_fold(pretrained, subjects, pairs, split, cfg, vit, store, f, geom);
        }
        return results;
    }
    std::vector<std::thread> workers;
    std::exception_ptr error;
    std::mutex error_mu;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < n_workers; ++w) {
        workers.emplace_back([&]() {
            for (;;) {
                const std::size_t f = next.fetch_add(1);
                if (f >= 6) return;
                try {
                    results[f] = run_fold(pretrained, subjects, pairs, split, cfg, vit, store, f,
                                          geom);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    if (error) std::rethrow_exception(error);
    return results;
}

namespace {

using nlohmann::json;

json subject_to_json(const Subject& s, const RegionInfo* region) {
    json j;
    j["id"] = s.id;
    j["age"] = s.age;
    j["sex"] = s.sex;
    j["ethnicity"] = s.ethnicity;
    j["bmi"] = s.bmi;
    j["label"] = s.label == 1 ? "case" : "control";
    j["volume"] = s.volume_path;
    if (region) {
        j["region"] = {{"center", region->center},
                       {"radii", region->radii},
                       {"applied", region->applied}};
    }
    return j;
}

template <class T>
T get_field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) {
        fail(ErrorKind::data, "manifest entry " + where + " is missing field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const std::exception&) {
        fail(ErrorKind::data, "manifest entry " + where + " field '" + key + "' has the wrong type");
    }
}

} // namespace

std::string manifest_to_json(const Manifest& m) {
    json doc;
    doc["subjects"] = json::array();
    for (const auto& s : m.subjects) {
        auto it = m.regions.find(s.id);
        doc["subjects"].push_back(subject_to_json(s, it == m.regions.end() ? nullptr : &it->second));
    }
    return doc.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const std::exception& e) {
        fail(ErrorKind::data, std::string("manifest is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("subjects") || !doc["subjects"].is_array()) {
        fail(ErrorKind::data, "manifest must be an object with a \"subjects\" array");
    }
    Manifest m;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < doc["subjects"].size(); ++i) {
        const json& j = doc["subjects"][i];
        const std::string where = "#" + std::to_string(i);
        Subject s;
        s.id = get_field<std::string>(j, "id", where);
        s.age = get_field<double>(j, "age", where);
        s.sex = get_field<std::string>(j, "sex", where);
        s.ethnicity = get_field<std::string>(j, "ethnicity", where);
        s.bmi = get_field<double>(j, "bmi", where);
        const std::string label = get_field<std::string>(j, "label", where);
        s.volume_path = get_field<std::string>(j, "volume", where);
        if (label == "case") {
            s.label = 1;
        } else if (label == "control") {
            s.label = 0;
        } else {
            fail(ErrorKind::data, "subject '" + s.id + "' label must be \"case\" or \"control\"");
        }
        if (s.age <= 0.0 || s.bmi <= 0.0) {
            fail(ErrorKind::data, "subject '" + s.id + "' must have positive age and bmi");
        }
        if (s.sex != "M" && s.sex != "F") {
            fail(ErrorKind::data, "subject '" + s.id + "' sex must be \"M\" or \"F\"");
        }
        if (!ids.insert(s.id).second) {
            fail(ErrorKind::data, "duplicate subject id '" + s.id + "'");
        }
        if (j.contains("region")) {
            const json& r = j["region"];
            RegionInfo info;
            const auto center = get_field<std::vector<double>>(r, "center", where + " region");
            const auto radii = get_field<std::vector<double>>(r, "radii", where + " region");
            if (center.size() != 3 || radii.size() != 3) {
                fail(ErrorKind::data, "subject '" + s.id + "' region needs 3 center and 3 radii values");
            }
            std::copy(center.begin(), center.end(), info.center.begin());
            std::copy(radii.begin(), radii.end(), info.radii.begin());
            info.applied = get_field<bool>(r, "applied", where + " region");
            m.regions[s.id] = info;
        }
        m.subjects.push_back(std::move(s));
    }
    return m;
}

void write_manifest(const std::string& path, const Manifest& m) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
    f << manifest_to_json(m);
    if (!f) fail(ErrorKind::io, "write to '" + path + "' failed");
}

Manifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::io, "cannot open '" + path + "' for reading");
    std::stringstream ss;
    ss << f.rdbuf();
    return manifest_from_json(ss.str());
}

} // namespace volformer
