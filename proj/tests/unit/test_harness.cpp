#include "doctest.h"

#include "adaptids/error.hpp"
#include "adaptids/harness.hpp"

#include "support/scenario.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace adaptids;
using namespace adaptids::harness;

namespace {

ScenarioConfig tiny_config(ScenarioKind kind, std::size_t classes = 4) {
    ScenarioConfig c;
    c.kind = kind;
    c.seed = 3;
    ingest::SyntheticSpec s;
    s.classes = classes;
    s.flows_per_class = 60;
    s.min_packets = 5;
    s.max_packets = 14;
    s.seed = 3;
    c.data.synthetic = s;
    c.architecture = nn::cnn_architecture(6, 64, {2, 2}, {6, 4, 2});
    c.initial = {3, 16, 0.1};
    c.continual.k = 2;
    c.continual.epochs = 2;
    c.continual.learning_rate = 0.05;
    c.federated.epochs = 1;
    c.compress = {2, 16, 0.05, 2.0};
    c.train_per_class = 30;
    c.update_flows = 20;
    c.eval_per_class = 15;
    c.permutations = 2;
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream b;
    b << in.rdbuf();
    return b.str();
}

}  // namespace

TEST_CASE("config parsing") {
    auto c = tiny_config(ScenarioKind::federated);
    c.known_classes = {2};
    c.output_dir = "somewhere";
    const auto text = config_to_json(c);
    const auto back = parse_config(text);
    CHECK(config_to_json(back) == text);
    CHECK(back.kind == ScenarioKind::federated);
    CHECK(back.known_classes == std::vector<std::uint32_t>{2});
    CHECK(*back.architecture == *c.architecture);

    SUBCASE("defaults follow the evaluation table") {
        const auto d = parse_config(R"({"scenario": "pairwise", "seed": 1})");
        CHECK(d.continual.k == 10);
        CHECK(d.continual.epochs == 20);
        CHECK(d.continual.batch_size == 16);
        CHECK(d.continual.lambda1 == 1.0);
        CHECK(d.initial.epochs == 50);
        CHECK(d.initial.batch_size == 32);
        CHECK(d.permutations == 3);
        CHECK(d.update_flows == 128);
    }
    SUBCASE("synthetic seed defaults to the scenario seed") {
        const auto d = parse_config(R"({"scenario": "pairwise", "seed": 42, "data": {"synthetic": {"classes": 3}}})");
        CHECK(d.data.synthetic->seed == 42);
    }
    CHECK_THROWS_AS(parse_config(R"({"scenario": "pairwise", "sed": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"scenario": "bogus", "seed": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"seed": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"scenario": "pairwise", "continual": {"k": "ten"}})"), ConfigError);

    auto bad = tiny_config(ScenarioKind::pairwise);
    bad.seed.reset();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny_config(ScenarioKind::early_detection);
    CHECK_THROWS_AS(bad.validate(), ConfigError);  // needs an LSTM
    bad = tiny_config(ScenarioKind::pairwise);
    bad.data.files = {"/definitely/missing.flwm"};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.data.synthetic.reset();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny_config(ScenarioKind::pairwise);
    bad.continual.tau = 2.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny_config(ScenarioKind::pairwise);
    bad.model = ModelKind::lstm;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("class split") {
    const auto data = testing::synth({0, 1, 2}, 40, 9);
    const auto split = split_classes(data, 10, {{0, 20}, {1, 30}}, 5);
    CHECK(split.eval.at(1).size() == 10);
    CHECK(split.train.at(1).size() == 30);
    CHECK(split.attack_labels() == std::vector<std::uint32_t>{1, 2});
    const auto again = split_classes(data, 10, {{0, 20}}, 5);
    CHECK(ingest::same_content(split.eval.at(2), again.eval.at(2)));
    const auto other = split_classes(data, 10, {{0, 20}}, 6);
    CHECK_FALSE(ingest::same_content(split.eval.at(2), other.eval.at(2)));
    for (const auto& e : split.eval.at(0).samples) {
        for (const auto& t : split.train.at(0).samples) CHECK(e.matrix != t.matrix);
    }
    try {
        split_classes(data, 10, {{2, 31}}, 5);
        FAIL("expected InsufficientPool");
    } catch (const InsufficientPool& e) {
        const std::string msg = e.what();
        CHECK(msg.find("has 40 flows") != std::string::npos);
        CHECK(msg.find("needs 41") != std::string::npos);
    }
    CHECK_THROWS_AS(split_classes(data, 10, {{7, 1}}, 5), InsufficientPool);
}

TEST_CASE("compress_model") {
    // The base knows class 1; the teacher's added units also learn class 2,
    // so the student has to absorb knowledge the base lacks.
    const auto arch = nn::cnn_architecture(6, 64, {4, 4}, {12, 6, 2});
    const auto old_set = nn::make_training_set(arch, testing::synth({0, 1}, 80, 21));
    const auto new_set = nn::make_training_set(arch, testing::synth({0, 1, 2}, 60, 22));
    auto base = nn::build_model(arch, 2);
    nn::OptimizerState opt;
    opt.learning_rate = 0.1;
    nn::train(base, old_set, nn::all_trainable(base), {40, 16, 1}, opt, nn::cross_entropy_objective(old_set.targets));
    const CompressConfig cc{20, 16, 0.02, 2.0};

    SUBCASE("student keeps the original architecture and agrees with the teacher") {
        auto teacher = continual::expand(base, 4, 4);
        continual::ContinualConfig cfg;
        cfg.epochs = 20;
        cfg.learning_rate = 0.05;
        continual::train_added_only(teacher, new_set, cfg);
        const auto student = compress_model(teacher, arch, new_set, cc, 8);
        CHECK(student.param_count() == base.param_count());
        CHECK(student.architecture() == arch);
        std::size_t agree = 0;
        for (const auto& x : new_set.inputs) agree += nn::predict(student, x) == nn::predict(teacher.model, x);
        CHECK(static_cast<double>(agree) / static_cast<double>(new_set.size()) >= 0.95);
    }
    SUBCASE("self-distillation preserves detection") {
        const auto student = compress_model(continual::expand(base, 0), arch, old_set, cc, 8);
        CHECK(std::abs(nn::evaluate(student, old_set).detection_rate - nn::evaluate(base, old_set).detection_rate) <=
              0.02);
    }
    const auto teacher = continual::expand(base, 1);
    CHECK_THROWS_AS(compress_model(teacher, nn::cnn_architecture(6, 64, {4, 4}, {8, 2}), old_set, {}, 1), InvalidInput);
    CHECK_THROWS_AS(compress_model(teacher, arch, nn::TrainingSet{}, {}, 1), InvalidInput);
}

TEST_CASE("pairwise scenario shape") {
    auto c = tiny_config(ScenarioKind::pairwise);
    c.known_classes = {1, 2};
    const auto r = scenario_pairwise(c);
    CHECK(r.initial_accuracy.size() == 2);
    CHECK(r.pairs.size() == 4);  // each known class against the two others
    for (const auto& p : r.pairs) CHECK(p.known != p.zero_day);
    const auto table = table_csv(r);
    std::istringstream lines(table);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "known,known_accuracy,state,attack-1,attack-2,attack-3");
    std::vector<std::string> rows;
    for (std::string l; std::getline(lines, l);) rows.push_back(l);
    REQUIRE(rows.size() == 6);
    CHECK(rows[0].find(kBeforeZeroDay) != std::string::npos);
    CHECK(rows[1].find(kAfterZeroDay) != std::string::npos);
    CHECK(rows[2].find(kAfterInitial) != std::string::npos);
    CHECK(rows[0].find("attack-1,0.") == 0);
    CHECK(rows[0].find(",-,") != std::string::npos);  // diagonal left blank
    c.known_classes = {9};
    CHECK_THROWS_AS(scenario_pairwise(c), ConfigError);
    auto small = tiny_config(ScenarioKind::pairwise);
    small.train_per_class = 100;
    CHECK_THROWS_AS(scenario_pairwise(small), InsufficientPool);
}

TEST_CASE("sequential scenario grows the known set") {
    const auto c = tiny_config(ScenarioKind::sequential);
    const auto r = scenario_sequential(c);
    CHECK(r.orders.size() == 2);
    CHECK(r.steps.size() == 6);
    for (const auto& s : r.steps) CHECK(s.known_classes == s.step + 1);
    CHECK(r.mean_known.size() == 3);
    std::istringstream lines(table_csv(r));
    std::string header;
    std::getline(lines, header);
    CHECK(header == "step,known_classes,mean_before_zero_day,mean_after_zero_day,mean_known");
}

TEST_CASE("federated scenario is reproducible and writes its artifacts") {
    auto c = tiny_config(ScenarioKind::federated);
    c.known_classes = {1};
    const auto dir = std::filesystem::temp_directory_path() / "adaptids_harness_fed";
    std::filesystem::remove_all(dir);
    c.output_dir = dir / "a";
    const auto m1 = run_scenario(c);
    c.output_dir = dir / "b";
    const auto m2 = run_scenario(c);
    CHECK(slurp(dir / "a" / "main-1.ckpt") == slurp(dir / "b" / "main-1.ckpt"));
    CHECK(slurp(dir / "a" / "table.csv") == slurp(dir / "b" / "table.csv"));
    CHECK(std::filesystem::exists(dir / "a" / "transcript-1.jsonl"));
    CHECK(std::filesystem::exists(dir / "a" / "metrics.json"));
    const auto table = slurp(dir / "a" / "table.csv");
    CHECK(table.rfind("known,known_before,Unknowns-Before,Unknowns-After,Known-After\n", 0) == 0);

    SUBCASE("replaying the transcript reproduces the checkpoint") {
        c.output_dir = dir / "replay";
        c.replay = dir / "a" / "transcript-1.jsonl";
        run_scenario(c);
        CHECK(slurp(dir / "replay" / "main-1.ckpt") == slurp(dir / "a" / "main-1.ckpt"));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("early-detection scenario") {
    auto c = tiny_config(ScenarioKind::early_detection, 3);
    c.model = ModelKind::lstm;
    c.architecture = nn::lstm_architecture(64, 12, 6, {6, 2});
    const auto r = scenario_early_detection(c);
    CHECK(r.curve.size() <= 12);
    CHECK(r.curve.n_flows.front() == 2 * c.eval_per_class);
    CHECK(r.decided_fraction >= 0.0);
    CHECK(r.decided_fraction <= 1.0);
}
