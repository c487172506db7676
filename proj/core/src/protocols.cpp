#include "imma/protocols.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace imma {

namespace {

using nlohmann::json;

void expect_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [key, val] : j.items()) {
        (void)val;
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* a) { return key == a; }) == allowed.end())
            throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

const std::vector<std::string> kProtocols = {"relearn", "personalize", "crossed", "ablation",
                                             "erasure-only"};

AdaptMethod method_from_name(const std::string& name) {
    const auto kind = adapt_kind_from_string(name);
    if (!kind) throw ConfigError("unknown adaptation method '" + name + "'");
    switch (*kind) {
        case AdaptKind::TokenInversion: return AdaptMethod::token_inversion();
        case AdaptKind::SubsetFineTune: return AdaptMethod::subset_finetune();
        case AdaptKind::LoRA: return AdaptMethod::lora(true);
    }
    throw ConfigError("unknown adaptation method '" + name + "'");
}

struct BranchSamples {
    std::vector<PointSet> per_epoch; // one sample set per adapter checkpoint
};

BranchSamples sample_branch(const ParamStore& model, const std::vector<AdapterSet>& ckpts, int token,
                            int n, const NoiseSchedule& sched, std::uint64_t eval_seed) {
    BranchSamples out;
    for (const auto& c : ckpts)
        out.per_epoch.push_back(sample_effective(model, &c, token, n, sched, eval_seed));
    return out;
}

constexpr SimilarityMetric kMetrics[] = {SimilarityMetric::Energy, SimilarityMetric::RbfMmd};

} // namespace

// ---------------------------------------------------------------------------
// configuration

ProtocolConfig parse_protocol_config_text(const std::string& text, const std::string& where) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(where + ": invalid JSON (" + std::string(e.what()) + ")");
    }
    expect_keys(j, where,
                {"protocol", "target", "other", "methods", "out", "pretrained_ckpt", "seeds", "data",
                 "eval_samples", "pretrain", "erase", "adapt", "imma"});

    ProtocolConfig c;
    read_if(j, "protocol", c.protocol);
    read_if(j, "target", c.target);
    read_if(j, "other", c.other);
    read_if(j, "methods", c.methods);
    read_if(j, "out", c.out_dir);
    read_if(j, "pretrained_ckpt", c.pretrained_ckpt);
    read_if(j, "eval_samples", c.eval_samples);

    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        expect_keys(s, where + ".seeds", {"train", "eval", "data"});
        read_if(s, "train", c.seeds.train);
        read_if(s, "eval", c.seeds.eval);
        read_if(s, "data", c.seeds.data);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        expect_keys(d, where + ".data", {"train", "reference"});
        read_if(d, "train", c.data.train);
        read_if(d, "reference", c.data.reference);
    }
    if (j.contains("pretrain")) {
        const auto& p = j.at("pretrain");
        expect_keys(p, where + ".pretrain", {"steps", "batch_size", "lr", "cf_dropout_p"});
        read_if(p, "steps", c.pretrain.steps);
        read_if(p, "batch_size", c.pretrain.batch_size);
        read_if(p, "lr", c.pretrain.lr);
        read_if(p, "cf_dropout_p", c.pretrain.cf_dropout_p);
    }
    if (j.contains("erase")) {
        const auto& e = j.at("erase");
        expect_keys(e, where + ".erase", {"steps", "lr", "batch_size"});
        read_if(e, "steps", c.erase.steps);
        read_if(e, "lr", c.erase.lr);
        read_if(e, "batch_size", c.erase.batch_size);
    }
    if (j.contains("adapt")) {
        const auto& a = j.at("adapt");
        expect_keys(a, where + ".adapt", {"epochs", "batch_size", "lr", "token"});
        read_if(a, "epochs", c.adapt.epochs);
        read_if(a, "batch_size", c.adapt.batch_size);
        read_if(a, "lr", c.adapt.lr);
        read_if(a, "token", c.adapt.token);
    }
    if (j.contains("imma")) {
        const auto& i = j.at("imma");
        expect_keys(i, where + ".imma",
                    {"iterations", "inner_steps", "upper_lr", "inner_lr", "batch_adapt", "batch_upper",
                     "imma_token"});
        read_if(i, "iterations", c.imma.iterations);
        read_if(i, "inner_steps", c.imma.inner_steps);
        read_if(i, "upper_lr", c.imma.upper_lr);
        read_if(i, "inner_lr", c.imma.inner_lr);
        read_if(i, "batch_adapt", c.imma.batch_adapt);
        read_if(i, "batch_upper", c.imma.batch_upper);
        read_if(i, "imma_token", c.imma.imma_token);
    }

    if (std::find(kProtocols.begin(), kProtocols.end(), c.protocol) == kProtocols.end())
        throw ConfigError(where + ": unknown protocol '" + c.protocol + "'");
    if (!concept_kind_from_string(c.target))
        throw ConfigError(where + ": unknown target concept '" + c.target + "'");
    if (!c.other.empty() && !concept_kind_from_string(c.other))
        throw ConfigError(where + ": unknown other concept '" + c.other + "'");
    for (const auto& m : c.methods) method_from_name(m); // validates
    return c;
}

ProtocolConfig parse_protocol_config_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("config not found: " + path.string());
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_protocol_config_text(buf.str(), path.string());
}

std::string canonical_config_json(const ProtocolConfig& c) {
    json j;
    j["protocol"] = c.protocol;
    j["target"] = c.target;
    j["other"] = c.other;
    j["methods"] = c.methods;
    j["out"] = c.out_dir;
    j["pretrained_ckpt"] = c.pretrained_ckpt;
    j["eval_samples"] = c.eval_samples;
    j["seeds"] = {{"train", c.seeds.train}, {"eval", c.seeds.eval}, {"data", c.seeds.data}};
    j["data"] = {{"train", c.data.train}, {"reference", c.data.reference}};
    j["pretrain"] = {{"steps", c.pretrain.steps},
                     {"batch_size", c.pretrain.batch_size},
                     {"lr", c.pretrain.lr},
                     {"cf_dropout_p", c.pretrain.cf_dropout_p}};
    j["erase"] = {{"steps", c.erase.steps}, {"lr", c.erase.lr}, {"batch_size", c.erase.batch_size}};
    j["adapt"] = {{"epochs", c.adapt.epochs},
                  {"batch_size", c.adapt.batch_size},
                  {"lr", c.adapt.lr},
                  {"token", c.adapt.token}};
    j["imma"] = {{"iterations", c.imma.iterations},   {"inner_steps", c.imma.inner_steps},
                 {"upper_lr", c.imma.upper_lr},       {"inner_lr", c.imma.inner_lr},
                 {"batch_adapt", c.imma.batch_adapt}, {"batch_upper", c.imma.batch_upper},
                 {"imma_token", c.imma.imma_token}};
    return j.dump(1) + "\n";
}

std::string run_id_of(const ProtocolConfig& cfg) {
    const std::string text = canonical_config_json(cfg);
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// context

const ConceptDataset& LabContext::dataset(const std::string& name) const {
    for (const auto& ds : concepts)
        if (to_string(ds.spec.kind) == name) return ds;
    throw ConfigError("unknown concept '" + name + "'");
}

const ConceptDataset& LabContext::dataset_by_id(int concept_id) const {
    for (const auto& ds : concepts)
        if (ds.spec.concept_id == concept_id) return ds;
    throw ConfigError("unknown concept id " + std::to_string(concept_id));
}

LabContext build_context(const ProtocolConfig& cfg) {
    LabContext ctx;
    ctx.sched = default_schedule();
    for (const auto& spec : default_concepts())
        ctx.concepts.push_back(generate(spec, cfg.data.train, cfg.data.reference, cfg.seeds.data));

    const std::vector<ConceptDataset> pre(ctx.concepts.begin(),
                                          ctx.concepts.begin() + kNumPretrainConcepts);
    if (!cfg.pretrained_ckpt.empty()) {
        if (!std::filesystem::exists(cfg.pretrained_ckpt))
            throw MissingArtifactError("pretrained checkpoint not found: " + cfg.pretrained_ckpt);
        auto lc = load_checkpoint(cfg.pretrained_ckpt);
        if (lc.meta.role != "pretrained")
            throw ConfigError(cfg.pretrained_ckpt + ": role is '" + lc.meta.role +
                              "', expected 'pretrained'");
        ctx.pretrained = std::move(lc.store);
    } else {
        TrainConfig tc = cfg.pretrain;
        tc.seed = derive_seed(cfg.seeds.train, "pretrain");
        ctx.pretrained = pretrain(pre, tc, ctx.sched).params;
    }

    ClassifierConfig cc;
    cc.seed = derive_seed(cfg.seeds.data, "classifier");
    ctx.classifier = train_classifier(pre, cc);
    if (ctx.classifier.holdout_accuracy < 0.95)
        throw std::runtime_error("evaluation classifier reached only " +
                                 format_value(ctx.classifier.holdout_accuracy) +
                                 " held-out accuracy; concepts are not separable enough");
    return ctx;
}

bool ProtocolResult::all_passed() const {
    for (const auto& c : checks)
        if (!c.passed) return false;
    return true;
}

// ---------------------------------------------------------------------------
// erasure report

std::vector<ReportRow> erasure_report(const ParamStore& base, const ParamStore& erased,
                                      const std::vector<ConceptDataset>& datasets,
                                      const EvalClassifier& clf, int target_id,
                                      const NoiseSchedule& sched, int n_samples,
                                      std::uint64_t eval_seed, const std::string& run_id) {
    std::vector<ReportRow> rows;
    for (const auto& ds : datasets) {
        const int id = ds.spec.concept_id;
        if (id > clf.classes) continue;
        const std::string name = to_string(ds.spec.kind);
        const std::uint64_t seed = derive_seed(eval_seed, "erasure-report/" + name);
        const PointSet gen_base = sample(base, id, n_samples, sched, seed);
        const PointSet gen_erased = sample(erased, id, n_samples, sched, seed);

        auto push = [&](const std::string& metric, double v) {
            rows.push_back({run_id, "erasure-only", name, "esd", 0, metric, v});
        };
        push("acc_base", concept_accuracy(gen_base, clf, id));
        push("acc_erased", concept_accuracy(gen_erased, clf, id));
        for (const auto m : kMetrics) {
            const double sb = similarity(ds.reference, gen_base, m);
            const double se = similarity(ds.reference, gen_erased, m);
            push("sim_" + to_string(m) + "_base", sb);
            push("sim_" + to_string(m) + "_erased", se);
            push("sgr_" + to_string(m), sgr(sb, se));
        }
        (void)target_id;
    }
    return rows;
}

// ---------------------------------------------------------------------------
// relearn

ProtocolResult run_relearn(const ProtocolConfig& cfg, const LabContext& ctx) {
    const ConceptDataset& ds = ctx.dataset(cfg.target);
    const int target_id = ds.spec.concept_id;
    if (target_id < 1 || target_id > kNumPretrainConcepts)
        throw ConfigError("relearn: target must be a pretraining concept");

    const std::string run_id = run_id_of(cfg);
    const std::string method_name = "lora";
    ProtocolResult res;

    // stage: erase the target
    ErasureConfig ec;
    ec.target_row = target_id;
    ec.steps = cfg.erase.steps;
    ec.lr = cfg.erase.lr;
    ec.batch_size = cfg.erase.batch_size;
    ec.seed = derive_seed(cfg.seeds.train, "erase/" + cfg.target);
    const ParamStore erased = erase(ctx.pretrained, ds, ec, ctx.sched);

    // stage: immunize the erased model with the relearning method
    ImmaConfig ic;
    ic.iterations = cfg.imma.iterations;
    ic.inner_steps = cfg.imma.inner_steps;
    ic.upper_lr = cfg.imma.upper_lr;
    ic.inner_lr = cfg.imma.inner_lr;
    ic.batch_adapt = cfg.imma.batch_adapt;
    ic.batch_upper = cfg.imma.batch_upper;
    ic.method = AdaptMethod::lora(false); // the erased concept's row already exists
    ic.seed = derive_seed(cfg.seeds.train, "imma/" + cfg.target);
    const ImmunizeResult immu = immunize(erased, ds, ic, ctx.sched);

    // stage: LoRA adaptation on both branches, identical seeds
    const std::uint64_t adapter_seed = derive_seed(cfg.seeds.train, "adapter/" + cfg.target);
    AdaptConfig ac;
    ac.steps = steps_for_epochs(cfg.adapt.epochs, point_count(ds.train), cfg.adapt.batch_size);
    ac.lr = cfg.adapt.lr;
    ac.batch_size = cfg.adapt.batch_size;
    ac.seed = derive_seed(cfg.seeds.train, "adapt/" + cfg.target);
    ac.token_id = target_id;

    const AdaptResult branchA =
        adapt(erased, init_adapter(ic.method, erased, adapter_seed), ds, ac, ctx.sched);
    const AdaptResult branchB =
        adapt(immu.params, init_adapter(ic.method, immu.params, adapter_seed), ds, ac, ctx.sched);

    // evaluation: one sample set per epoch per branch, fixed eval seed
    const std::uint64_t eval_seed = derive_seed(cfg.seeds.eval, "relearn/" + cfg.target);
    const BranchSamples genA =
        sample_branch(erased, branchA.epoch_checkpoints, target_id, cfg.eval_samples, ctx.sched, eval_seed);
    const BranchSamples genB = sample_branch(immu.params, branchB.epoch_checkpoints, target_id,
                                             cfg.eval_samples, ctx.sched, eval_seed);

    auto push = [&](const std::string& concept_name, int epoch, const std::string& metric, double v) {
        res.rows.push_back({run_id, "relearn", concept_name, method_name, epoch, metric, v});
    };

    const PointSet pre_erasure = sample(ctx.pretrained, target_id, cfg.eval_samples, ctx.sched, eval_seed);
    std::map<std::string, double> final_sim_A, final_sim_B, pre_sim;
    for (const auto m : kMetrics) {
        pre_sim[to_string(m)] = similarity(ds.reference, pre_erasure, m);
        push(cfg.target, 0, "sim_" + to_string(m) + "_pre_erasure", pre_sim[to_string(m)]);
        for (std::size_t e = 0; e < genA.per_epoch.size(); ++e) {
            const double sa = similarity(ds.reference, genA.per_epoch[e], m);
            const double sb = similarity(ds.reference, genB.per_epoch[e], m);
            push(cfg.target, static_cast<int>(e), "sim_" + to_string(m) + "_noimma", sa);
            push(cfg.target, static_cast<int>(e), "sim_" + to_string(m) + "_imma", sb);
            if (e + 1 == genA.per_epoch.size()) {
                final_sim_A[to_string(m)] = sa;
                final_sim_B[to_string(m)] = sb;
                push(cfg.target, static_cast<int>(e), "sgr_" + to_string(m), sgr(sa, sb));
            }
        }
    }

    const double acc_erased = concept_accuracy(genA.per_epoch.front(), ctx.classifier, target_id);
    push(cfg.target, 0, "acc_target_erased", acc_erased);
    for (std::size_t e = 0; e < genA.per_epoch.size(); ++e) {
        push(cfg.target, static_cast<int>(e), "acc_target_noimma",
             concept_accuracy(genA.per_epoch[e], ctx.classifier, target_id));
        push(cfg.target, static_cast<int>(e), "acc_target_imma",
             concept_accuracy(genB.per_epoch[e], ctx.classifier, target_id));
    }
    const double acc_final_A = concept_accuracy(genA.per_epoch.back(), ctx.classifier, target_id);
    const double acc_final_B = concept_accuracy(genB.per_epoch.back(), ctx.classifier, target_id);

    // other-concept accuracy before/after immunization
    double min_other_erased = 1.0, min_other_immunized = 1.0;
    double max_other_drop = 0.0;
    for (int oid = 1; oid <= kNumPretrainConcepts; ++oid) {
        if (oid == target_id) continue;
        const auto& od = ctx.dataset_by_id(oid);
        const std::string oname = to_string(od.spec.kind);
        const std::uint64_t oseed = derive_seed(cfg.seeds.eval, "relearn-others/" + oname);
        const double a_er = concept_accuracy(sample(erased, oid, cfg.eval_samples, ctx.sched, oseed),
                                             ctx.classifier, oid);
        const double a_im = concept_accuracy(sample(immu.params, oid, cfg.eval_samples, ctx.sched, oseed),
                                             ctx.classifier, oid);
        const double a_ad =
            concept_accuracy(sample_effective(immu.params, &branchB.adapter, oid, cfg.eval_samples,
                                              ctx.sched, oseed),
                             ctx.classifier, oid);
        push(oname, cfg.adapt.epochs, "acc_other_erased", a_er);
        push(oname, cfg.adapt.epochs, "acc_other_immunized", a_im);
        push(oname, cfg.adapt.epochs, "acc_other_adapted_imma", a_ad);
        min_other_erased = std::min(min_other_erased, a_er);
        min_other_immunized = std::min(min_other_immunized, a_im);
        max_other_drop = std::max(max_other_drop, a_er - a_im);
    }

    auto check = [&](const std::string& name, bool ok, const std::string& detail) {
        res.checks.push_back({name, ok, detail});
    };
    check("erased_target_acc<=0.10", acc_erased <= 0.10, "acc=" + format_value(acc_erased));
    check("erased_others_acc>=0.80", min_other_erased >= 0.80, "min=" + format_value(min_other_erased));
    check("relearn_acc>=0.60", acc_final_A >= 0.60, "acc=" + format_value(acc_final_A));
    check("relearn_sim>=0.8*pre",
          final_sim_A["energy"] >= 0.8 * pre_sim["energy"],
          format_value(final_sim_A["energy"]) + " vs pre " + format_value(pre_sim["energy"]));
    check("imma_target_acc<=0.15", acc_final_B <= 0.15, "acc=" + format_value(acc_final_B));
    for (const auto m : kMetrics) {
        const double g = sgr(final_sim_A[to_string(m)], final_sim_B[to_string(m)]);
        check("sgr>0(" + to_string(m) + ")", g > 0.0, "sgr=" + format_value(g));
    }
    check("other_acc_drop<=0.30", max_other_drop <= 0.30, "max drop=" + format_value(max_other_drop));
    return res;
}

// ---------------------------------------------------------------------------
// personalization

namespace {

struct PersonalizeTokens {
    int imma_token;
    int adapt_token;
};

PersonalizeTokens resolve_tokens(const ProtocolConfig& cfg, const ParamStore& model) {
    const int rows = embed_rows(model);
    PersonalizeTokens t;
    t.imma_token = cfg.imma.imma_token >= 0 ? cfg.imma.imma_token : rows;
    t.adapt_token = cfg.adapt.token >= 0 ? cfg.adapt.token : rows + 1;
    if (t.imma_token == t.adapt_token)
        throw ConfigError("the immunization token and the adaptation token must be distinct rows");
    return t;
}

std::string auto_other(const std::string& target) {
    const auto held = held_out_concepts();
    for (std::size_t i = 0; i < held.size(); ++i)
        if (to_string(held[i].kind) == target) return to_string(held[(i + 1) % held.size()].kind);
    return to_string(held.front().kind);
}

} // namespace

ProtocolResult run_personalize(const ProtocolConfig& cfg, const LabContext& ctx) {
    const ConceptDataset& ds_t = ctx.dataset(cfg.target);
    if (ds_t.spec.concept_id <= kNumPretrainConcepts)
        throw ConfigError("personalize: target must be a held-out concept");
    const std::string other = cfg.other.empty() ? auto_other(cfg.target) : cfg.other;
    if (other == cfg.target) throw ConfigError("personalize: other concept must differ from the target");
    const ConceptDataset& ds_o = ctx.dataset(other);

    const auto tokens = resolve_tokens(cfg, ctx.pretrained);
    const std::string run_id = run_id_of(cfg);
    std::vector<std::string> methods = cfg.methods;
    if (methods.empty()) methods = {"token_inversion", "subset_finetune", "lora"};

    ProtocolResult res;
    for (const auto& mname : methods) {
        const AdaptMethod method = method_from_name(mname);

        ImmaConfig ic;
        ic.iterations = cfg.imma.iterations;
        ic.inner_steps = cfg.imma.inner_steps;
        ic.upper_lr = cfg.imma.upper_lr;
        ic.inner_lr = cfg.imma.inner_lr;
        ic.batch_adapt = cfg.imma.batch_adapt;
        ic.batch_upper = cfg.imma.batch_upper;
        ic.method = method;
        ic.imma_token = tokens.imma_token;
        ic.seed = derive_seed(cfg.seeds.train, "imma/" + mname + "/" + cfg.target);
        const ImmunizeResult immu = immunize(ctx.pretrained, ds_t, ic, ctx.sched);

        auto run_branch = [&](const ParamStore& model, const ConceptDataset& dset,
                              const std::string& tag) {
            AdaptConfig ac;
            ac.steps = steps_for_epochs(cfg.adapt.epochs, point_count(dset.train), cfg.adapt.batch_size);
            ac.lr = cfg.adapt.lr;
            ac.batch_size = cfg.adapt.batch_size;
            ac.seed = derive_seed(cfg.seeds.train, "adapt/" + mname + "/" + tag);
            ac.token_id = tokens.adapt_token;
            const std::uint64_t aseed = derive_seed(cfg.seeds.train, "adapter/" + mname + "/" + tag);
            const AdaptResult r =
                adapt(model, init_adapter(method, model, aseed, tokens.adapt_token), dset, ac, ctx.sched);
            const std::uint64_t eseed = derive_seed(cfg.seeds.eval, "personalize/" + mname + "/" + tag);
            return sample_effective(model, &r.adapter, tokens.adapt_token, cfg.eval_samples, ctx.sched,
                                    eseed);
        };

        const PointSet xA = run_branch(ctx.pretrained, ds_t, cfg.target);
        const PointSet xI = run_branch(immu.params, ds_t, cfg.target);
        const PointSet xAo = run_branch(ctx.pretrained, ds_o, other);
        const PointSet xIo = run_branch(immu.params, ds_o, other);

        auto push = [&](const std::string& concept_name, const std::string& metric, double v) {
            res.rows.push_back({run_id, "personalize", concept_name, mname, cfg.adapt.epochs, metric, v});
        };
        for (const auto m : kMetrics) {
            const std::string ms = to_string(m);
            const double sA = similarity(ds_t.reference, xA, m);
            const double sI = similarity(ds_t.reference, xI, m);
            const double cross_t = similarity(xA, xI, m);
            const double cross_o = similarity(xAo, xIo, m);
            push(cfg.target, "sim_" + ms + "_adapt", sA);
            push(cfg.target, "sim_" + ms + "_imma", sI);
            push(cfg.target, "sgr_" + ms, sgr(sA, sI));
            push(cfg.target, "xsim_" + ms + "_target", cross_t);
            push(other, "xsim_" + ms + "_other", cross_o);
            push(other, "sim_" + ms + "_other_adapt", similarity(ds_o.reference, xAo, m));
            push(other, "sim_" + ms + "_other_imma", similarity(ds_o.reference, xIo, m));
            push(cfg.target, "rsgr_" + ms, rsgr(cross_o, cross_t));

            res.checks.push_back({"sgr>0(" + ms + "," + mname + ")", sgr(sA, sI) > 0.0,
                                  "sgr=" + format_value(sgr(sA, sI))});
            res.checks.push_back({"rsgr>0(" + ms + "," + mname + ")", rsgr(cross_o, cross_t) > 0.0,
                                  "rsgr=" + format_value(rsgr(cross_o, cross_t))});
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// crossed adaptation

ProtocolResult run_crossed(const ProtocolConfig& cfg, const LabContext& ctx) {
    const ConceptDataset& ds_t = ctx.dataset(cfg.target);
    if (ds_t.spec.concept_id <= kNumPretrainConcepts)
        throw ConfigError("crossed: target must be a held-out concept");
    const auto tokens = resolve_tokens(cfg, ctx.pretrained);
    const std::string run_id = run_id_of(cfg);

    std::vector<std::string> grid = cfg.methods;
    if (grid.empty()) grid = {"subset_finetune", "token_inversion"};
    if (grid.size() != 2) throw ConfigError("crossed: exactly two methods are required");

    ProtocolResult res;

    // branch A per adaptation method (shared across immunization rows)
    std::map<std::string, PointSet> xA;
    auto adapt_on = [&](const ParamStore& model, const std::string& mname) {
        const AdaptMethod method = method_from_name(mname);
        AdaptConfig ac;
        ac.steps = steps_for_epochs(cfg.adapt.epochs, point_count(ds_t.train), cfg.adapt.batch_size);
        ac.lr = cfg.adapt.lr;
        ac.batch_size = cfg.adapt.batch_size;
        ac.seed = derive_seed(cfg.seeds.train, "adapt/" + mname + "/" + cfg.target);
        ac.token_id = tokens.adapt_token;
        const std::uint64_t aseed = derive_seed(cfg.seeds.train, "adapter/" + mname + "/" + cfg.target);
        const AdaptResult r =
            adapt(model, init_adapter(method, model, aseed, tokens.adapt_token), ds_t, ac, ctx.sched);
        const std::uint64_t eseed = derive_seed(cfg.seeds.eval, "crossed/" + mname + "/" + cfg.target);
        return sample_effective(model, &r.adapter, tokens.adapt_token, cfg.eval_samples, ctx.sched, eseed);
    };
    for (const auto& m2 : grid) xA[m2] = adapt_on(ctx.pretrained, m2);

    double best_offdiag_sgr = -1.0;
    for (const auto& m1 : grid) {
        ImmaConfig ic;
        ic.iterations = cfg.imma.iterations;
        ic.inner_steps = cfg.imma.inner_steps;
        ic.upper_lr = cfg.imma.upper_lr;
        ic.inner_lr = cfg.imma.inner_lr;
        ic.batch_adapt = cfg.imma.batch_adapt;
        ic.batch_upper = cfg.imma.batch_upper;
        ic.method = method_from_name(m1);
        ic.imma_token = tokens.imma_token;
        ic.seed = derive_seed(cfg.seeds.train, "imma/" + m1 + "/" + cfg.target);
        const ImmunizeResult immu = immunize(ctx.pretrained, ds_t, ic, ctx.sched);

        for (const auto& m2 : grid) {
            const PointSet xI = adapt_on(immu.params, m2);
            const std::string cell = m1 + "->" + m2;
            for (const auto m : kMetrics) {
                const std::string ms = to_string(m);
                const double sA = similarity(ds_t.reference, xA[m2], m);
                const double sI = similarity(ds_t.reference, xI, m);
                const double g = sgr(sA, sI);
                res.rows.push_back(
                    {run_id, "crossed", cfg.target, cell, cfg.adapt.epochs, "sim_" + ms + "_adapt", sA});
                res.rows.push_back(
                    {run_id, "crossed", cfg.target, cell, cfg.adapt.epochs, "sim_" + ms + "_imma", sI});
                res.rows.push_back(
                    {run_id, "crossed", cfg.target, cell, cfg.adapt.epochs, "sgr_" + ms, g});
                if (m1 != m2 && m == SimilarityMetric::Energy)
                    best_offdiag_sgr = std::max(best_offdiag_sgr, g);
            }
        }
    }
    res.checks.push_back({"offdiag_sgr>0", best_offdiag_sgr > 0.0,
                          "best off-diagonal sgr=" + format_value(best_offdiag_sgr)});
    return res;
}

// ---------------------------------------------------------------------------
// ablation

ProtocolResult run_ablation(const ProtocolConfig& cfg, const LabContext& ctx) {
    const ConceptDataset& ds_t = ctx.dataset(cfg.target);
    if (ds_t.spec.concept_id <= kNumPretrainConcepts)
        throw ConfigError("ablation: target must be a held-out concept");
    const std::string other = cfg.other.empty() ? auto_other(cfg.target) : cfg.other;
    if (other == cfg.target) throw ConfigError("ablation: other concept must differ from the target");
    const ConceptDataset& ds_o = ctx.dataset(other);

    const auto tokens = resolve_tokens(cfg, ctx.pretrained);
    const std::string run_id = run_id_of(cfg);
    const std::string mname = cfg.methods.empty() ? "subset_finetune" : cfg.methods.front();
    const AdaptMethod method = method_from_name(mname);

    struct Arm {
        const char* name;
        bool no_ws, no_oa, direct;
    };
    const Arm arms[] = {{"full", false, false, false},
                        {"no_warm_start", true, false, false},
                        {"no_overlap_assign", false, true, false},
                        {"direct_max", false, false, true}};

    const std::uint64_t start_hash = store_hash(ctx.pretrained);
    ProtocolResult res;
    std::map<std::string, double> target_sim, other_sim; // energy metric per arm

    for (const auto& arm : arms) {
        ImmaConfig ic;
        ic.iterations = cfg.imma.iterations;
        ic.inner_steps = cfg.imma.inner_steps;
        ic.upper_lr = cfg.imma.upper_lr;
        ic.inner_lr = cfg.imma.inner_lr;
        ic.batch_adapt = cfg.imma.batch_adapt;
        ic.batch_upper = cfg.imma.batch_upper;
        ic.method = method;
        ic.imma_token = tokens.imma_token;
        ic.no_warm_start = arm.no_ws;
        ic.no_overlap_assign = arm.no_oa;
        ic.direct_max = arm.direct;
        ic.seed = derive_seed(cfg.seeds.train, "imma-ablation/" + cfg.target);
        if (store_hash(ctx.pretrained) != start_hash)
            throw std::runtime_error("ablation: shared starting checkpoint was mutated");
        const ImmunizeResult immu = immunize(ctx.pretrained, ds_t, ic, ctx.sched);

        auto adapted_samples = [&](const ConceptDataset& dset, const std::string& tag) {
            AdaptConfig ac;
            ac.steps = steps_for_epochs(cfg.adapt.epochs, point_count(dset.train), cfg.adapt.batch_size);
            ac.lr = cfg.adapt.lr;
            ac.batch_size = cfg.adapt.batch_size;
            ac.seed = derive_seed(cfg.seeds.train, "ablation-adapt/" + tag);
            ac.token_id = tokens.adapt_token;
            const std::uint64_t aseed = derive_seed(cfg.seeds.train, "ablation-adapter/" + tag);
            const AdaptResult r = adapt(immu.params, init_adapter(method, immu.params, aseed,
                                                                  tokens.adapt_token),
                                        dset, ac, ctx.sched);
            const std::uint64_t eseed = derive_seed(cfg.seeds.eval, "ablation/" + tag);
            return sample_effective(immu.params, &r.adapter, tokens.adapt_token, cfg.eval_samples,
                                    ctx.sched, eseed);
        };

        const PointSet gen_t = adapted_samples(ds_t, cfg.target);
        const PointSet gen_o = adapted_samples(ds_o, other);

        for (const auto m : kMetrics) {
            const std::string ms = to_string(m);
            const double st = similarity(ds_t.reference, gen_t, m);
            const double so = similarity(ds_o.reference, gen_o, m);
            res.rows.push_back(
                {run_id, "ablation", cfg.target, arm.name, cfg.adapt.epochs, "target_adapted_sim_" + ms, st});
            res.rows.push_back(
                {run_id, "ablation", other, arm.name, cfg.adapt.epochs, "other_adapted_sim_" + ms, so});
            if (m == SimilarityMetric::Energy) {
                target_sim[arm.name] = st;
                other_sim[arm.name] = so;
            }
        }
    }

    const double dm_other = other_sim["direct_max"];
    const bool direct_worst = dm_other <= other_sim["full"] && dm_other <= other_sim["no_warm_start"] &&
                              dm_other <= other_sim["no_overlap_assign"];
    res.checks.push_back({"direct_max_worst_other", direct_worst,
                          "direct=" + format_value(dm_other) + " full=" + format_value(other_sim["full"])});
    res.checks.push_back({"no_line7_raises_target_sim",
                          target_sim["no_overlap_assign"] > target_sim["full"],
                          format_value(target_sim["no_overlap_assign"]) + " vs full " +
                              format_value(target_sim["full"])});
    res.checks.push_back({"no_line5_raises_target_sim",
                          target_sim["no_warm_start"] > target_sim["full"],
                          format_value(target_sim["no_warm_start"]) + " vs full " +
                              format_value(target_sim["full"])});
    return res;
}

// ---------------------------------------------------------------------------
// erasure only

ProtocolResult run_erasure_only(const ProtocolConfig& cfg, const LabContext& ctx) {
    const ConceptDataset& ds = ctx.dataset(cfg.target);
    const int target_id = ds.spec.concept_id;
    if (target_id < 1 || target_id > kNumPretrainConcepts)
        throw ConfigError("erasure-only: target must be a pretraining concept");

    ErasureConfig ec;
    ec.target_row = target_id;
    ec.steps = cfg.erase.steps;
    ec.lr = cfg.erase.lr;
    ec.batch_size = cfg.erase.batch_size;
    ec.seed = derive_seed(cfg.seeds.train, "erase/" + cfg.target);
    const ParamStore erased = erase(ctx.pretrained, ds, ec, ctx.sched);

    const std::vector<ConceptDataset> pre(ctx.concepts.begin(),
                                          ctx.concepts.begin() + kNumPretrainConcepts);
    ProtocolResult res;
    res.rows = erasure_report(ctx.pretrained, erased, pre, ctx.classifier, target_id, ctx.sched,
                              cfg.eval_samples, cfg.seeds.eval, run_id_of(cfg));

    double target_acc = 1.0, min_other = 1.0;
    for (const auto& r : res.rows) {
        if (r.metric != "acc_erased") continue;
        if (r.concept_name == cfg.target)
            target_acc = r.value;
        else
            min_other = std::min(min_other, r.value);
    }
    res.checks.push_back(
        {"erased_target_acc<=0.10", target_acc <= 0.10, "acc=" + format_value(target_acc)});
    res.checks.push_back(
        {"erased_others_acc>=0.80", min_other >= 0.80, "min=" + format_value(min_other)});
    return res;
}

// ---------------------------------------------------------------------------

ProtocolResult run_protocol(const ProtocolConfig& cfg, const LabContext& ctx) {
    if (cfg.protocol == "relearn") return run_relearn(cfg, ctx);
    if (cfg.protocol == "personalize") return run_personalize(cfg, ctx);
    if (cfg.protocol == "crossed") return run_crossed(cfg, ctx);
    if (cfg.protocol == "ablation") return run_ablation(cfg, ctx);
    if (cfg.protocol == "erasure-only") return run_erasure_only(cfg, ctx);
    throw ConfigError("unknown protocol '" + cfg.protocol + "'");
}

ProtocolResult execute_protocol(const ProtocolConfig& cfg) {
    const LabContext ctx = build_context(cfg);
    ProtocolResult res = run_protocol(cfg, ctx);
    if (!cfg.out_dir.empty()) {
        const std::filesystem::path dir(cfg.out_dir);
        std::filesystem::create_directories(dir);
        std::ofstream f(dir / "config.json", std::ios::binary);
        f << canonical_config_json(cfg);
        write_report_csv(res.rows, dir / "report.csv");
        if (cfg.pretrained_ckpt.empty()) {
            CheckpointMeta meta;
            meta.role = "pretrained";
            meta.seed = cfg.seeds.train;
            meta.command = "protocol " + cfg.protocol;
            save_checkpoint(ctx.pretrained, meta, dir / "pretrained.json");
        }
    }
    return res;
}

} // namespace imma
