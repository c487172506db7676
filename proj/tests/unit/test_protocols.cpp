#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "imma/protocols.hpp"

using namespace imma;

namespace {

const std::filesystem::path kTmp = std::filesystem::temp_directory_path() / "imma-protocol-test";

// Deliberately tiny context: untrained model, short schedule. Exercises the
// protocol plumbing, not the science.
LabContext tiny_ctx() {
    LabContext ctx;
    ctx.sched = schedule_linear(20, 1e-4f, 0.02f);
    for (const auto& spec : default_concepts()) ctx.concepts.push_back(generate(spec, 128, 64, 7));
    ctx.pretrained = init_denoiser(kNumPretrainConcepts, 5);
    ClassifierConfig cc;
    cc.steps = 300;
    ctx.classifier = train_classifier(
        std::vector<ConceptDataset>(ctx.concepts.begin(), ctx.concepts.begin() + kNumPretrainConcepts),
        cc);
    return ctx;
}

ProtocolConfig tiny_config(const std::string& protocol, const std::string& target) {
    ProtocolConfig cfg;
    cfg.protocol = protocol;
    cfg.target = target;
    cfg.eval_samples = 32;
    cfg.data.train = 128;
    cfg.data.reference = 64;
    cfg.erase.steps = 5;
    cfg.erase.batch_size = 32;
    cfg.adapt.epochs = 1;
    cfg.adapt.batch_size = 64;
    cfg.imma.iterations = 2;
    cfg.imma.batch_adapt = 16;
    cfg.imma.batch_upper = 16;
    return cfg;
}

} // namespace

TEST_CASE("config parsing accepts minimal documents and fills defaults") {
    const auto cfg = parse_protocol_config_text(R"({"protocol":"relearn","target":"ring"})", "t");
    CHECK(cfg.protocol == "relearn");
    CHECK(cfg.target == "ring");
    CHECK(cfg.adapt.epochs == 20);
    CHECK(cfg.imma.iterations == 500);
    CHECK(cfg.pretrain.steps == 4000);
    CHECK(cfg.seeds.eval == 9001);
}

TEST_CASE("unknown keys are rejected, at any level") {
    CHECK_THROWS_WITH_AS(
        parse_protocol_config_text(R"({"protocol":"relearn","target":"ring","oops":1})", "t"),
        doctest::Contains("oops"), ConfigError);
    CHECK_THROWS_WITH_AS(
        parse_protocol_config_text(
            R"({"protocol":"relearn","target":"ring","imma":{"iterations":5,"typo":2}})", "t"),
        doctest::Contains("typo"), ConfigError);
    CHECK_THROWS_AS(parse_protocol_config_text(R"({"protocol":"noop","target":"ring"})", "t"),
                    ConfigError);
    CHECK_THROWS_AS(parse_protocol_config_text(R"({"protocol":"relearn","target":"nope"})", "t"),
                    ConfigError);
    CHECK_THROWS_AS(
        parse_protocol_config_text(R"({"protocol":"relearn","target":"ring","methods":["x"]})", "t"),
        ConfigError);
    CHECK_THROWS_AS(parse_protocol_config_text("not json", "t"), ConfigError);
}

TEST_CASE("run ids are deterministic and config-sensitive") {
    const auto a = parse_protocol_config_text(R"({"protocol":"relearn","target":"ring"})", "t");
    auto b = a;
    CHECK(run_id_of(a) == run_id_of(b));
    b.seeds.train = 2;
    CHECK(run_id_of(a) != run_id_of(b));
    CHECK(run_id_of(a).size() == 16);
}

TEST_CASE("identical tokens for immunization and adaptation are rejected") {
    const LabContext ctx = tiny_ctx();
    auto cfg = tiny_config("personalize", "star");
    cfg.methods = {"token_inversion"};
    cfg.imma.imma_token = 9;
    cfg.adapt.token = 9;
    CHECK_THROWS_AS(run_personalize(cfg, ctx), ConfigError);
}

TEST_CASE("target domain is validated per protocol") {
    const LabContext ctx = tiny_ctx();
    CHECK_THROWS_AS(run_relearn(tiny_config("relearn", "star"), ctx), ConfigError);
    CHECK_THROWS_AS(run_personalize(tiny_config("personalize", "ring"), ctx), ConfigError);
    CHECK_THROWS_AS(run_ablation(tiny_config("ablation", "ring"), ctx), ConfigError);
    CHECK_THROWS_AS(run_erasure_only(tiny_config("erasure-only", "pinwheel"), ctx), ConfigError);
}

TEST_CASE("personalize with immunization disabled gives exactly zero SGR") {
    const LabContext ctx = tiny_ctx();
    auto cfg = tiny_config("personalize", "star");
    cfg.methods = {"token_inversion"};
    cfg.imma.iterations = 0; // theta^I == theta^p, branches identical under same seeds
    const ProtocolResult res = run_personalize(cfg, ctx);
    int seen = 0;
    for (const auto& r : res.rows)
        if (r.metric.rfind("sgr_", 0) == 0 || r.metric.rfind("rsgr_", 0) == 0) {
            CHECK(r.value == 0.0);
            ++seen;
        }
    CHECK(seen == 4);
}

TEST_CASE("relearn report is byte-identical across repeated runs") {
    const LabContext ctx = tiny_ctx();
    const auto cfg = tiny_config("relearn", "ring");
    std::filesystem::create_directories(kTmp);

    auto render = [&](const std::filesystem::path& p) {
        write_report_csv(run_relearn(cfg, ctx).rows, p);
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    const std::string a = render(kTmp / "a.csv");
    const std::string b = render(kTmp / "b.csv");
    CHECK(a == b);
    CHECK(!a.empty());
    CHECK(a.find("\r") == std::string::npos); // LF only
}

TEST_CASE("relearn with zero immunization iterations collapses the branches") {
    const LabContext ctx = tiny_ctx();
    auto cfg = tiny_config("relearn", "ring");
    cfg.imma.iterations = 0;
    const ProtocolResult res = run_relearn(cfg, ctx);
    for (const auto& r : res.rows)
        if (r.metric.rfind("sgr_", 0) == 0) CHECK(r.value == 0.0);
    // curves coincide epoch by epoch
    std::map<int, double> a, b;
    for (const auto& r : res.rows) {
        if (r.metric == "sim_energy_noimma") a[r.epoch] = r.value;
        if (r.metric == "sim_energy_imma") b[r.epoch] = r.value;
    }
    CHECK(a == b);
}

TEST_CASE("crossed grid reports exactly four cells") {
    const LabContext ctx = tiny_ctx();
    const auto cfg = tiny_config("crossed", "star");
    const ProtocolResult res = run_crossed(cfg, ctx);
    int cells = 0;
    for (const auto& r : res.rows)
        if (r.metric == "sgr_energy") ++cells;
    CHECK(cells == 4);
}

TEST_CASE("ablation reports all four arms") {
    const LabContext ctx = tiny_ctx();
    const auto cfg = tiny_config("ablation", "star");
    const ProtocolResult res = run_ablation(cfg, ctx);
    std::set<std::string> arms;
    for (const auto& r : res.rows)
        if (r.metric == "target_adapted_sim_energy") arms.insert(r.method);
    CHECK(arms == std::set<std::string>{"full", "no_warm_start", "no_overlap_assign", "direct_max"});
}

TEST_CASE("base-vs-base erasure self-report: equal accuracy, zero gap ratios") {
    const LabContext ctx = tiny_ctx();
    const std::vector<ConceptDataset> pre(ctx.concepts.begin(),
                                          ctx.concepts.begin() + kNumPretrainConcepts);
    const auto rows = erasure_report(ctx.pretrained, ctx.pretrained, pre, ctx.classifier, 1,
                                     ctx.sched, 32, 9001, "self");
    std::map<std::string, double> base_acc, erased_acc;
    for (const auto& r : rows) {
        if (r.metric == "acc_base") base_acc[r.concept_name] = r.value;
        if (r.metric == "acc_erased") erased_acc[r.concept_name] = r.value;
        if (r.metric.rfind("sgr_", 0) == 0) CHECK(r.value == 0.0);
    }
    CHECK(base_acc == erased_acc);
}

TEST_CASE("protocol dispatch rejects unknown names") {
    const LabContext ctx = tiny_ctx();
    ProtocolConfig cfg = tiny_config("relearn", "ring");
    cfg.protocol = "bogus";
    CHECK_THROWS_AS(run_protocol(cfg, ctx), ConfigError);
}
