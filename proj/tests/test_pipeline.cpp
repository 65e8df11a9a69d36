#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <kdclip/pipeline.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace kdclip;

namespace {

// Small but structurally complete config; fast enough for unit tests.
TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.families = 3;
    cfg.values = 4;
    cfg.pairs = 120;
    cfg.dimImage = 16;
    cfg.embedDim = 12;
    cfg.teacherDim = 32;
    cfg.hidden = 24;
    cfg.clusters = 6;
    cfg.classifierEpochs = 40;
    cfg.epochs = 5;
    cfg.batchSize = 32;
    cfg.probeEpochs = 40;
    cfg.validate();
    return cfg;
}

struct Fixture {
    TrainConfig cfg;
    AttributeSchema schema;
    Vocabulary vocab;
    Dataset data;
    Matrix teacherEmb;

    explicit Fixture(TrainConfig c = tiny_config())
        : cfg(std::move(c)),
          schema(default_schema(cfg.families, cfg.values, cfg.dimImage)),
          vocab(Vocabulary::build(schema)) {
        data = generate_dataset(schema, cfg.pairs, cfg.sigmaImage, cfg.seeds.data);
        TeacherOptions topt;
        topt.dPrime = cfg.teacherDim;
        topt.sigmaT = cfg.sigmaT;
        topt.contentWeight = cfg.contentWeight;
        topt.seed = cfg.seeds.teacher;
        auto teacher = make_teacher(cfg.teacher, schema, vocab, topt);
        teacherEmb = teacher->embed(data);
    }
};

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("config validation names the offending field") {
    TrainConfig cfg;
    cfg.batchSize = 0;
    try {
        cfg.validate();
        FAIL("expected a validation error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("batch") != std::string::npos);
    }
}

TEST_CASE("json config round-trips and rejects unknown keys") {
    TrainConfig cfg = tiny_config();
    cfg.alpha = 0.5;
    cfg.promptStyle = "awa2";
    cfg.seeds.shuffle = 99;
    std::string text = config_to_json_text(cfg);
    TrainConfig back = config_from_json_text(text, "inline");
    CHECK(back.alpha == cfg.alpha);
    CHECK(back.promptStyle == cfg.promptStyle);
    CHECK(back.seeds.shuffle == cfg.seeds.shuffle);
    CHECK(back.embedDim == cfg.embedDim);

    try {
        config_from_json_text("{\"learning_rate\": 0.1}", "inline");
        FAIL("expected unknown-key error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
    }
}

TEST_CASE("toml configs load through the same path") {
    const std::string path = "test_pipeline_cfg.toml";
    {
        std::ofstream out(path);
        out << "# comment line\n";
        out << "d = 12\n";
        out << "lr = 1e-3\n";
        out << "teacher = \"degenerate\"\n";
        out << "enable_conc = false\n";
        out << "\n";
    }
    TrainConfig cfg = load_config(path);
    CHECK(cfg.embedDim == 12);
    CHECK(cfg.lr == 1e-3);
    CHECK(cfg.teacher == "degenerate");
    CHECK_FALSE(cfg.enableConc);
    std::remove(path.c_str());

    const std::string bad = "test_pipeline_bad.toml";
    {
        std::ofstream out(bad);
        out << "d = 12\n";
        out << "mystery = 3\n";
    }
    try {
        load_config(bad);
        FAIL("expected unknown-key error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("mystery") != std::string::npos);
    }
    std::remove(bad.c_str());

    const std::string broken = "test_pipeline_broken.toml";
    {
        std::ofstream out(broken);
        out << "d = 12\n";
        out << "this line has no assignment\n";
    }
    try {
        load_config(broken);
        FAIL("expected syntax error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
    std::remove(broken.c_str());
}

TEST_CASE("adam skips frozen tensors and leaves them bit-identical") {
    Rng rng(3);
    ParamTensor free(Matrix(2, 2, 1.0), "free");
    ParamTensor iced(Matrix(2, 2, 1.0), "iced");
    iced.frozen = true;
    std::vector<ParamTensor*> params = {&free, &iced};
    AdamOptimizer adam(params, 0.1);
    free.grad.fill(1.0);
    iced.grad.fill(1.0);
    adam.step();
    CHECK(free.value(0, 0) != 1.0);
    CHECK(iced.value == Matrix(2, 2, 1.0));
    CHECK(adam.step_count() == 1);
}

TEST_CASE("adam restore rejects mismatched shapes") {
    ParamTensor p(Matrix(2, 3, 0.0), "p");
    std::vector<ParamTensor*> params = {&p};
    AdamOptimizer adam(params, 0.1);
    std::vector<Matrix> wrong = {Matrix(3, 2, 0.0)};
    CHECK_THROWS(adam.restore(1, wrong, wrong));
}

TEST_CASE("concept stage separates a noiseless oracle at k equal to cells") {
    TrainConfig cfg = tiny_config();
    cfg.families = 2;
    cfg.values = 3;
    cfg.sigmaT = 0.0;
    cfg.clusters = 9;  // one per concept cell
    cfg.pairs = 300;
    cfg.classifierEpochs = 300;
    cfg.classifierLr = 1e-2;
    Fixture fx(cfg);
    ModelSet models(fx.cfg, fx.vocab.size());
    ConceptStageResult stage = run_concept_stage(fx.cfg, fx.teacherEmb, models);
    CHECK(stage.kmeans.inertia == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(stage.finalAccuracy >= 0.99);
    CHECK_FALSE(models.classifier.is_frozen());
    CHECK(stage.accuracy.size() == static_cast<std::size_t>(cfg.classifierEpochs));
}

TEST_CASE("concept stage with one cluster is trivially learned") {
    TrainConfig cfg = tiny_config();
    cfg.clusters = 1;
    Fixture fx(cfg);
    ModelSet models(fx.cfg, fx.vocab.size());
    ConceptStageResult stage = run_concept_stage(fx.cfg, fx.teacherEmb, models);
    CHECK(stage.finalAccuracy == 1.0);
}

TEST_CASE("concept stage is deterministic") {
    Fixture fx;
    ModelSet m1(fx.cfg, fx.vocab.size());
    ModelSet m2(fx.cfg, fx.vocab.size());
    ConceptStageResult a = run_concept_stage(fx.cfg, fx.teacherEmb, m1);
    ConceptStageResult b = run_concept_stage(fx.cfg, fx.teacherEmb, m2);
    CHECK(a.labels.labels == b.labels.labels);
    CHECK(a.kmeans.centroids == b.kmeans.centroids);
    CHECK(m1.checksum() == m2.checksum());
}

TEST_CASE("joint training requires a frozen classifier") {
    Fixture fx;
    ModelSet models(fx.cfg, fx.vocab.size());
    ConceptStageResult stage = run_concept_stage(fx.cfg, fx.teacherEmb, models);
    AdamOptimizer adam(models.params(), fx.cfg.lr);
    CHECK_THROWS_AS(run_joint_training(fx.cfg, fx.vocab, fx.data, fx.teacherEmb,
                                       stage.labels, models, adam, 0, 1),
                    std::logic_error);
}

TEST_CASE("disabling every loss leaves parameters untouched") {
    TrainConfig cfg = tiny_config();
    cfg.enableEmb = cfg.enableConc = cfg.enableCont = false;
    Fixture fx(cfg);
    ModelSet models(fx.cfg, fx.vocab.size());
    ConceptStageResult stage = run_concept_stage(fx.cfg, fx.teacherEmb, models);
    models.classifier.freeze();
    std::uint64_t before = models.checksum();
    AdamOptimizer adam(models.params(), fx.cfg.lr);
    run_joint_training(fx.cfg, fx.vocab, fx.data, fx.teacherEmb, stage.labels,
                       models, adam, 0, fx.cfg.epochs);
    CHECK(models.checksum() == before);
}

TEST_CASE("distillation-only loss decreases over the first epochs") {
    TrainConfig cfg = tiny_config();
    cfg.beta = 0.0;
    cfg.gamma = 0.0;
    cfg.epochs = 20;
    Fixture fx(cfg);
    ModelSet models(fx.cfg, fx.vocab.size());
    TrainReport report = run_full_training(fx.cfg, fx.schema, fx.vocab, fx.data,
                                           models);
    REQUIRE(report.epochLosses.size() == 20);
    for (std::size_t e = 1; e < report.epochLosses.size(); ++e)
        CHECK(report.epochLosses[e].emb < report.epochLosses[e - 1].emb);
}

TEST_CASE("plain contrastive training leaves projectors and classifier alone") {
    TrainConfig cfg = tiny_config();
    cfg.alpha = 0.0;
    cfg.beta = 0.0;
    Fixture fx(cfg);
    ModelSet models(fx.cfg, fx.vocab.size());
    ConceptStageResult stage = run_concept_stage(fx.cfg, fx.teacherEmb, models);
    models.classifier.freeze();

    std::uint64_t weBefore = checksum(models.teacherProj.weight.value);
    std::uint64_t wiBefore = checksum(models.imageProj.weight.value);
    std::uint64_t clsBefore =
        params_checksum(static_cast<const Classifier&>(models.classifier).params());
    std::uint64_t textBefore = params_checksum(
        static_cast<const TwoLayerMlp&>(models.text.mlp).params());

    AdamOptimizer adam(models.params(), fx.cfg.lr);
    run_joint_training(fx.cfg, fx.vocab, fx.data, fx.teacherEmb, stage.labels,
                       models, adam, 0, fx.cfg.epochs);

    CHECK(checksum(models.teacherProj.weight.value) == weBefore);
    CHECK(checksum(models.imageProj.weight.value) == wiBefore);
    CHECK(params_checksum(static_cast<const Classifier&>(models.classifier).params()) ==
          clsBefore);
    // The encoders do train under the contrastive term.
    CHECK(params_checksum(static_cast<const TwoLayerMlp&>(models.text.mlp).params()) !=
          textBefore);
}

TEST_CASE("total loss equals the weighted component sum at every epoch") {
    Fixture fx;
    ModelSet models(fx.cfg, fx.vocab.size());
    TrainReport report = run_full_training(fx.cfg, fx.schema, fx.vocab, fx.data,
                                           models);
    for (const LossBreakdown& b : report.epochLosses) {
        double expected = b.alpha * b.emb + b.beta * b.conc + b.gamma * b.cont;
        CHECK(std::abs(b.total - expected) <= 1e-12);
    }
}

TEST_CASE("frozen classifier survives a full run bit for bit") {
    Fixture fx;
    ModelSet models(fx.cfg, fx.vocab.size());
    ConceptStageResult stage = run_concept_stage(fx.cfg, fx.teacherEmb, models);
    models.classifier.freeze();
    std::uint64_t before =
        params_checksum(static_cast<const Classifier&>(models.classifier).params());
    AdamOptimizer adam(models.params(), fx.cfg.lr);
    run_joint_training(fx.cfg, fx.vocab, fx.data, fx.teacherEmb, stage.labels,
                       models, adam, 0, fx.cfg.epochs);
    CHECK(params_checksum(static_cast<const Classifier&>(models.classifier).params()) ==
          before);
}

TEST_CASE("full training twice gives identical reports and parameters") {
    Fixture fx;
    ModelSet m1(fx.cfg, fx.vocab.size());
    ModelSet m2(fx.cfg, fx.vocab.size());
    TrainReport r1 = run_full_training(fx.cfg, fx.schema, fx.vocab, fx.data, m1);
    TrainReport r2 = run_full_training(fx.cfg, fx.schema, fx.vocab, fx.data, m2);
    CHECK(m1.checksum() == m2.checksum());
    CHECK(r1.paramsChecksum == r2.paramsChecksum);
    REQUIRE(r1.epochLosses.size() == r2.epochLosses.size());
    for (std::size_t e = 0; e < r1.epochLosses.size(); ++e)
        CHECK(r1.epochLosses[e].total == r2.epochLosses[e].total);
}

TEST_CASE("checkpoints round-trip bit for bit") {
    TempDir dir("kdclip_test_ckpt");
    Fixture fx;
    ModelSet models(fx.cfg, fx.vocab.size());
    run_full_training(fx.cfg, fx.schema, fx.vocab, fx.data, models, dir.str());

    LoadedCheckpoint ck = load_checkpoint(dir.str());
    CHECK(ck.models->checksum() == models.checksum());
    CHECK(ck.epochsCompleted == fx.cfg.epochs);
    CHECK(ck.models->classifier.is_frozen());

    // Saving the loaded state again reproduces the parameter bytes.
    TempDir dir2("kdclip_test_ckpt2");
    AdamOptimizer adam(ck.models->params(), ck.cfg.lr);
    adam.restore(ck.adamStep, ck.adamM, ck.adamV);
    save_checkpoint(dir2.str(), *ck.models, adam, ck.cfg, ck.schema, ck.kmeans,
                    ck.labels, ck.epochsCompleted);
    for (const char* name : {"params.bin", "adam.bin", "manifest.json"}) {
        std::ifstream a(dir.path / name, std::ios::binary);
        std::ifstream b(dir2.path / name, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)),
                       std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)),
                       std::istreambuf_iterator<char>());
        CHECK(sa == sb);
    }
}

TEST_CASE("loading a checkpoint into the wrong shape fails naming the field") {
    TempDir dir("kdclip_test_ckpt3");
    Fixture fx;
    ModelSet models(fx.cfg, fx.vocab.size());
    run_full_training(fx.cfg, fx.schema, fx.vocab, fx.data, models, dir.str());

    // Corrupt the manifest's recorded shape for one parameter.
    std::ifstream in(dir.path / "manifest.json");
    std::string manifest((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
    in.close();
    auto pos = manifest.find("\"rows\": ");
    REQUIRE(pos != std::string::npos);
    manifest.replace(pos, 8, "\"rows\": 9");  // prepends a digit, always wrong
    std::ofstream(dir.path / "manifest.json") << manifest;

    CHECK_THROWS(load_checkpoint(dir.str()));
}

TEST_CASE("a resumed run matches an unbroken one exactly") {
    Fixture fx;

    ModelSet unbroken(fx.cfg, fx.vocab.size());
    TrainReport full = run_full_training(fx.cfg, fx.schema, fx.vocab, fx.data,
                                         unbroken);

    // Same stages by hand, pausing after epoch cfg.epochs - 1.
    ModelSet paused(fx.cfg, fx.vocab.size());
    ConceptStageResult stage = run_concept_stage(fx.cfg, fx.teacherEmb, paused);
    paused.classifier.freeze();
    AdamOptimizer adam(paused.params(), fx.cfg.lr);
    run_joint_training(fx.cfg, fx.vocab, fx.data, fx.teacherEmb, stage.labels,
                       paused, adam, 0, fx.cfg.epochs - 1);

    TempDir dir("kdclip_test_resume");
    save_checkpoint(dir.str(), paused, adam, fx.cfg, fx.schema, stage.kmeans,
                    stage.labels, fx.cfg.epochs - 1);

    LoadedCheckpoint ck = load_checkpoint(dir.str());
    AdamOptimizer adam2(ck.models->params(), ck.cfg.lr);
    adam2.restore(ck.adamStep, ck.adamM, ck.adamV);
    JointTrainResult tail = run_joint_training(
        ck.cfg, fx.vocab, fx.data, fx.teacherEmb, ck.labels, *ck.models, adam2,
        ck.epochsCompleted, fx.cfg.epochs);

    CHECK(ck.models->checksum() == unbroken.checksum());
    REQUIRE(tail.epochLosses.size() == 1);
    CHECK(tail.epochLosses[0].total ==
          full.epochLosses[fx.cfg.epochs - 1].total);
}

TEST_CASE("ablation suite trains three variants against a shared teacher") {
    TrainConfig cfg = tiny_config();
    cfg.epochs = 3;
    cfg.probeEpochs = 30;
    Fixture fx(cfg);
    AblationTable table = run_ablation_suite(fx.cfg, fx.schema, fx.vocab, fx.data);

    REQUIRE(table.rows.size() == 3);
    CHECK(table.rows[0].name == "cont");
    CHECK(table.rows[1].name == "cont+emb");
    CHECK(table.rows[2].name == "cont+emb+conc");
    CHECK(table.rows[0].finalLoss.emb == 0.0);
    CHECK(table.rows[1].finalLoss.conc == 0.0);
    CHECK(table.rows[2].finalLoss.conc > 0.0);
    for (const AblationRow& row : table.rows) {
        CHECK(row.probeExactMatch >= 0.0);
        CHECK(row.probeExactMatch <= 1.0);
        CHECK(row.zeroShotOverall >= 0.0);
        CHECK(row.zeroShotOverall <= 1.0);
        CHECK(row.zeroShotPerFamily.size() == fx.cfg.families - 1);
    }
    CHECK(table.teacherProbeExactMatch > 0.5);

    // The distilled variants share data and teacher with the baseline, so
    // their reports are comparable; the table serializes for the CLI.
    std::string js = table.to_json();
    CHECK(js.find("cont+emb+conc") != std::string::npos);
}

TEST_CASE("report json carries the config echo and loss series") {
    TrainConfig cfg = tiny_config();
    cfg.epochs = 2;
    Fixture fx(cfg);
    ModelSet models(fx.cfg, fx.vocab.size());
    TrainReport report = run_full_training(fx.cfg, fx.schema, fx.vocab, fx.data,
                                           models);
    std::string js = report.to_json(fx.cfg);
    CHECK(js.find("\"epoch_losses\"") != std::string::npos);
    CHECK(js.find("\"config\"") != std::string::npos);
    CHECK(js.find("\"params_checksum\"") != std::string::npos);

    const std::string csv = "test_pipeline_losses.csv";
    report.write_loss_csv(csv);
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,emb,conc,cont,total");
    int lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 2);
    in.close();
    std::remove(csv.c_str());
}
