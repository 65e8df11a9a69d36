// Single-binary front end. Every subcommand is deterministic given its
// flags and prints one JSON summary line on stdout when it succeeds.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kdclip/clustering.hpp"
#include "kdclip/dataset.hpp"
#include "kdclip/evaluation.hpp"
#include "kdclip/matrix.hpp"
#include "kdclip/pipeline.hpp"
#include "kdclip/teacher.hpp"

namespace {

using nlohmann::json;
using namespace kdclip;

std::string hex_u64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void print_summary(const json& j) { std::cout << j.dump() << "\n"; }

void set_all_seeds(TrainConfig& cfg, std::uint64_t seed) {
    cfg.seeds.data = seed;
    cfg.seeds.init = seed;
    cfg.seeds.shuffle = seed;
    cfg.seeds.kmeans = seed;
    cfg.seeds.teacher = seed;
}

struct DataBundle {
    Dataset data;
    AttributeSchema schema;
};

DataBundle load_data(const std::string& path) {
    DataBundle b;
    b.data = load_jsonl(path);
    b.schema = load_schema(schema_sidecar_path(path));
    return b;
}

bool schemas_equal(const AttributeSchema& a, const AttributeSchema& b) {
    if (a.classFamily != b.classFamily || a.dimImage != b.dimImage ||
        a.families.size() != b.families.size())
        return false;
    for (std::size_t i = 0; i < a.families.size(); ++i) {
        if (a.families[i].name != b.families[i].name ||
            a.families[i].values != b.families[i].values)
            return false;
    }
    return true;
}

// Aligns the config echo (and the model input dims) with the dataset
// actually being trained on.
void sync_config_to_data(TrainConfig& cfg, const DataBundle& b) {
    cfg.families = b.schema.families.size();
    cfg.values = b.schema.families.empty() ? cfg.values
                                           : b.schema.families[0].values.size();
    cfg.pairs = b.data.size();
    cfg.dimImage = b.schema.dimImage;
}

TeacherOptions teacher_options_from(const TrainConfig& cfg) {
    TeacherOptions t;
    t.dPrime = cfg.teacherDim;
    t.sigmaT = cfg.sigmaT;
    t.contentWeight = cfg.contentWeight;
    t.degenerateContentWeight = cfg.degenerateContentWeight;
    t.seed = cfg.seeds.teacher;
    t.dominantFamily = cfg.dominantFamily;
    return t;
}

Matrix student_text_embeddings(const ModelSet& models, const Vocabulary& vocab,
                               const Dataset& data) {
    return models.text.mlp.forward(encode_caption_batch(vocab, data));
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << content;
    if (!f) throw std::runtime_error("write failed for " + path);
}

json cluster_stats_summary(const ClusterStats& s) {
    json j;
    j["normalized_size_entropy"] = s.normalizedSizeEntropy;
    if (s.hasGroundTruth) {
        j["mean_top_label_fraction"] = s.meanTopLabelFraction;
        j["purity"] = s.purity;
    }
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "kdclip: synthetic caption-image distillation pipeline "
        "(data generation, teacher embedding, clustering, training, evaluation)"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* genCmd = app.add_subcommand("gen-data", "Generate a synthetic caption-image dataset");
    std::size_t genFamilies = 4, genValues = 6, genN = 2000, genDimImage = 32;
    double genSigmaImage = 1.0;
    std::uint64_t genSeed = 1;
    std::string genOut;
    genCmd->add_option("--families", genFamilies, "Number of attribute families (incl. class)");
    genCmd->add_option("--values", genValues, "Values per family");
    genCmd->add_option("--n", genN, "Number of caption-image pairs");
    genCmd->add_option("--dim-image", genDimImage, "Image feature dimension");
    genCmd->add_option("--sigma-image", genSigmaImage, "Image noise level");
    genCmd->add_option("--seed", genSeed, "Data seed");
    genCmd->add_option("--out", genOut, "Output JSONL path")->required();
    genCmd->callback([&] {
        AttributeSchema schema = default_schema(genFamilies, genValues, genDimImage);
        Dataset data = generate_dataset(schema, genN, genSigmaImage, genSeed);
        save_jsonl(genOut, data);
        const std::string schemaPath = schema_sidecar_path(genOut);
        save_schema(schemaPath, schema);
        json j;
        j["command"] = "gen-data";
        j["families"] = schema.families.size();
        j["values"] = genValues;
        j["n"] = data.size();
        j["concept_cells"] = num_concept_codes(schema);
        j["out"] = genOut;
        j["schema"] = schemaPath;
        print_summary(j);
    });

    // ---- teacher-embed ----
    auto* teachCmd = app.add_subcommand("teacher-embed",
                                        "Embed all captions with a teacher provider");
    std::string teachData, teachOut, teachSpec = "oracle", teachDominant;
    std::size_t teachDPrime = 128;
    double teachSigmaT = 0.05, teachContent = 1.0, teachDegenContent = 0.0;
    std::uint64_t teachSeed = 5;
    teachCmd->add_option("--data", teachData, "Dataset JSONL")->required();
    teachCmd->add_option("--teacher", teachSpec, "oracle | degenerate | file:PATH");
    teachCmd->add_option("--d-prime", teachDPrime, "Teacher embedding dimension");
    teachCmd->add_option("--sigma-t", teachSigmaT, "Teacher noise level");
    teachCmd->add_option("--content-weight", teachContent, "Oracle content block weight");
    teachCmd->add_option("--degenerate-content-weight", teachDegenContent,
                         "Degenerate content block weight");
    teachCmd->add_option("--dominant-family", teachDominant,
                         "Degenerate teacher's populated family (default: class family)");
    teachCmd->add_option("--seed", teachSeed, "Teacher seed");
    teachCmd->add_option("--out", teachOut, "Output matrix path (.ids sidecar added)")
        ->required();
    teachCmd->callback([&] {
        DataBundle b = load_data(teachData);
        Vocabulary vocab = Vocabulary::build(b.schema);
        TeacherOptions opts;
        opts.dPrime = teachDPrime;
        opts.sigmaT = teachSigmaT;
        opts.contentWeight = teachContent;
        opts.degenerateContentWeight = teachDegenContent;
        opts.seed = teachSeed;
        opts.dominantFamily = teachDominant;
        auto teacher = make_teacher(teachSpec, b.schema, vocab, opts);
        Matrix emb = teacher->embed(b.data);
        save_matrix(teachOut, emb);
        std::string ids;
        for (const auto& p : b.data) ids += std::to_string(p.id) + "\n";
        write_text_file(teachOut + ".ids", ids);
        json j;
        j["command"] = "teacher-embed";
        j["teacher"] = teachSpec;
        j["rows"] = emb.rows();
        j["cols"] = emb.cols();
        j["checksum"] = hex_u64(checksum(emb));
        j["out"] = teachOut;
        print_summary(j);
    });

    // ---- cluster ----
    auto* clusterCmd = app.add_subcommand("cluster", "Fit k-means on an embedding matrix");
    std::string clusterEmb, clusterOut;
    std::size_t clusterK = 16;
    int clusterMaxIters = 100;
    double clusterTol = 1e-8;
    std::uint64_t clusterSeed = 4;
    clusterCmd->add_option("--embeddings", clusterEmb, "Embedding matrix (.kdm)")->required();
    clusterCmd->add_option("--k", clusterK, "Number of clusters")->required();
    clusterCmd->add_option("--max-iters", clusterMaxIters, "Lloyd iteration cap");
    clusterCmd->add_option("--tol", clusterTol, "Centroid displacement tolerance");
    clusterCmd->add_option("--seed", clusterSeed, "Seeding RNG seed");
    clusterCmd->add_option("--out", clusterOut,
                           "Output prefix (writes PREFIX.centroids.kdm, PREFIX.labels.txt)");
    clusterCmd->callback([&] {
        Matrix emb = load_matrix(clusterEmb);
        auto fitted = kmeans_fit(emb, clusterK, clusterMaxIters, clusterTol, clusterSeed);
        const KMeansModel& model = fitted.first;
        const SoftConceptLabels& labels = fitted.second;
        ClusterStats stats = cluster_stats(labels);
        if (!clusterOut.empty()) {
            save_matrix(clusterOut + ".centroids.kdm", model.centroids);
            save_labels(clusterOut + ".labels.txt", labels);
        }
        json j;
        j["command"] = "cluster";
        j["k"] = model.k;
        j["n"] = emb.rows();
        j["inertia"] = model.inertia;
        j["iterations"] = model.iterations;
        j["normalized_size_entropy"] = stats.normalizedSizeEntropy;
        if (!clusterOut.empty()) j["out"] = clusterOut;
        print_summary(j);
    });

    // Shared training-style flags (train / ablate / eval / analyze).
    struct CommonFlags {
        std::string config, data, out, teacher;
        std::uint64_t seed = 0;
        double lr = 0, alpha = 0, beta = 0, gamma = 0;
        int epochs = 0;
        std::size_t batch = 0, k = 0;
        bool disableEmb = false, disableConc = false, disableCont = false;
        std::string promptStyle;
    };

    auto add_train_flags = [](CLI::App* cmd, CommonFlags& f, bool withOut) {
        cmd->add_option("--config", f.config, "TrainConfig file (.json or .toml)");
        cmd->add_option("--data", f.data, "Dataset JSONL")->required();
        if (withOut) cmd->add_option("--out", f.out, "Output directory")->required();
        cmd->add_option("--seed", f.seed, "Override every config seed with this value");
        cmd->add_option("--lr", f.lr, "Joint-stage learning rate");
        cmd->add_option("--epochs", f.epochs, "Joint-stage epochs");
        cmd->add_option("--batch", f.batch, "Mini-batch size");
        cmd->add_option("--k", f.k, "Cluster count for soft labels");
        cmd->add_option("--alpha", f.alpha, "Distillation loss weight");
        cmd->add_option("--beta", f.beta, "Concept loss weight");
        cmd->add_option("--gamma", f.gamma, "Contrastive loss weight");
        cmd->add_option("--teacher", f.teacher, "oracle | degenerate | file:PATH");
        cmd->add_option("--prompt-style", f.promptStyle, "cub | awa2");
        cmd->add_flag("--disable-emb", f.disableEmb, "Drop the distillation loss");
        cmd->add_flag("--disable-conc", f.disableConc, "Drop the concept loss");
        cmd->add_flag("--disable-cont", f.disableCont, "Drop the contrastive loss");
    };

    auto apply_overrides = [](TrainConfig& cfg, const CommonFlags& f, const CLI::App* cmd) {
        if (cmd->count("--seed")) set_all_seeds(cfg, f.seed);
        if (cmd->count("--lr")) cfg.lr = f.lr;
        if (cmd->count("--epochs")) cfg.epochs = f.epochs;
        if (cmd->count("--batch")) cfg.batchSize = f.batch;
        if (cmd->count("--k")) cfg.clusters = f.k;
        if (cmd->count("--alpha")) cfg.alpha = f.alpha;
        if (cmd->count("--beta")) cfg.beta = f.beta;
        if (cmd->count("--gamma")) cfg.gamma = f.gamma;
        if (cmd->count("--teacher")) cfg.teacher = f.teacher;
        if (cmd->count("--prompt-style")) cfg.promptStyle = f.promptStyle;
        if (f.disableEmb) cfg.enableEmb = false;
        if (f.disableConc) cfg.enableConc = false;
        if (f.disableCont) cfg.enableCont = false;
        cfg.validate();
    };

    // ---- train ----
    auto* trainCmd = app.add_subcommand("train", "Run the two-stage training pipeline");
    CommonFlags trainFlags;
    add_train_flags(trainCmd, trainFlags, /*withOut=*/true);
    trainCmd->callback([&] {
        TrainConfig cfg =
            trainFlags.config.empty() ? TrainConfig{} : load_config(trainFlags.config);
        DataBundle b = load_data(trainFlags.data);
        sync_config_to_data(cfg, b);
        apply_overrides(cfg, trainFlags, trainCmd);
        Vocabulary vocab = Vocabulary::build(b.schema);
        ModelSet models(cfg, vocab.size());
        TrainReport report = run_full_training(cfg, b.schema, vocab, b.data, models,
                                               trainFlags.out);
        write_text_file(trainFlags.out + "/report.json", report.to_json(cfg));
        report.write_loss_csv(trainFlags.out + "/loss_curves.csv");
        json j;
        j["command"] = "train";
        j["epochs"] = report.epochLosses.size();
        j["classifier_final_accuracy"] = report.classifierFinalAccuracy;
        if (!report.epochLosses.empty()) {
            const LossBreakdown& fin = report.epochLosses.back();
            j["final_loss"] = {{"emb", fin.emb},
                               {"conc", fin.conc},
                               {"cont", fin.cont},
                               {"total", fin.total}};
        }
        j["params_checksum"] = hex_u64(report.paramsChecksum);
        j["checkpoint"] = trainFlags.out;
        print_summary(j);
    });

    // ---- eval ----
    auto* evalCmd = app.add_subcommand("eval", "Evaluate a trained checkpoint");
    CommonFlags evalFlags;
    std::string evalCheckpoint, evalOut;
    bool evalNoDistribution = false;
    add_train_flags(evalCmd, evalFlags, /*withOut=*/false);
    evalCmd->add_option("--checkpoint", evalCheckpoint, "Checkpoint directory")->required();
    evalCmd->add_option("--out", evalOut, "Write the full report JSON here");
    evalCmd->add_flag("--no-distribution", evalNoDistribution,
                      "Skip the embedding-distribution comparison");
    evalCmd->callback([&] {
        LoadedCheckpoint ck = load_checkpoint(evalCheckpoint);
        DataBundle b = load_data(evalFlags.data);
        if (!schemas_equal(b.schema, ck.schema))
            throw std::runtime_error("dataset schema does not match checkpoint schema");
        TrainConfig cfg = ck.cfg;
        apply_overrides(cfg, evalFlags, evalCmd);
        Vocabulary vocab = Vocabulary::build(ck.schema);

        EvalReport report;
        const PromptSpec prompt{prompt_style_from_string(cfg.promptStyle)};
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t f = 0; f < b.schema.families.size(); ++f) {
            if (f == b.schema.classFamily) continue;
            const double acc = zero_shot_attribute_eval(ck.models->text, ck.models->image,
                                                        b.schema, vocab, b.data, f, prompt);
            report.familyNames.push_back(b.schema.families[f].name);
            report.perFamilyAccuracy.push_back(acc);
            sum += acc;
            ++count;
        }
        report.overallAccuracy = count == 0 ? 0.0 : sum / static_cast<double>(count);

        const Matrix studentText = student_text_embeddings(*ck.models, vocab, b.data);
        const ProbeOptions popts{cfg.probeEpochs, cfg.probeLr, cfg.probeEvalFraction,
                                 cfg.probeSeed};
        report.probeExactMatch = probe_exact_match_for(studentText, b.schema, b.data, popts);

        if (!evalNoDistribution) {
            auto teacher = make_teacher(cfg.teacher, b.schema, vocab,
                                        teacher_options_from(cfg));
            const Matrix teacherEmb = teacher->embed(b.data);
            report.distribution = distribution_analysis(
                teacherEmb, studentText, cfg.distributionClusters,
                class_labels(b.schema, b.data), cfg.seeds.kmeans);
            report.hasDistribution = true;
        }

        if (!evalOut.empty()) write_text_file(evalOut, report.to_json());
        json j;
        j["command"] = "eval";
        j["overall_accuracy"] = report.overallAccuracy;
        j["probe_exact_match"] = report.probeExactMatch;
        json perFamily;
        for (std::size_t i = 0; i < report.familyNames.size(); ++i)
            perFamily[report.familyNames[i]] = report.perFamilyAccuracy[i];
        j["per_family_accuracy"] = perFamily;
        if (report.hasDistribution) {
            j["distribution"] = {{"teacher", cluster_stats_summary(report.distribution.a)},
                                 {"student", cluster_stats_summary(report.distribution.b)}};
        }
        if (!evalOut.empty()) j["out"] = evalOut;
        print_summary(j);
    });

    // ---- ablate ----
    auto* ablateCmd = app.add_subcommand(
        "ablate", "Train and evaluate the three loss subsets with shared seeds");
    CommonFlags ablateFlags;
    std::string ablateOut;
    add_train_flags(ablateCmd, ablateFlags, /*withOut=*/false);
    ablateCmd->add_option("--out", ablateOut, "Write the comparison table JSON here");
    ablateCmd->callback([&] {
        TrainConfig cfg =
            ablateFlags.config.empty() ? TrainConfig{} : load_config(ablateFlags.config);
        DataBundle b = load_data(ablateFlags.data);
        sync_config_to_data(cfg, b);
        apply_overrides(cfg, ablateFlags, ablateCmd);
        Vocabulary vocab = Vocabulary::build(b.schema);
        AblationTable table = run_ablation_suite(cfg, b.schema, vocab, b.data);
        if (!ablateOut.empty()) write_text_file(ablateOut, table.to_json());
        json j;
        j["command"] = "ablate";
        j["teacher_probe_exact_match"] = table.teacherProbeExactMatch;
        json rows = json::array();
        for (const AblationRow& row : table.rows) {
            rows.push_back({{"name", row.name},
                            {"probe_exact_match", row.probeExactMatch},
                            {"zero_shot_overall", row.zeroShotOverall}});
        }
        j["rows"] = rows;
        if (!ablateOut.empty()) j["out"] = ablateOut;
        print_summary(j);
    });

    // ---- analyze ----
    auto* analyzeCmd = app.add_subcommand(
        "analyze", "Compare embedding distributions under k-means");
    std::string anData, anTeacherA = "oracle", anTeacherB = "degenerate", anCheckpoint,
                anOut, anDominant;
    std::size_t anK = 50, anDPrime = 128;
    std::uint64_t anSeed = 4;
    double anSigmaT = 0.05, anContent = 1.0, anDegenContent = 0.0;
    analyzeCmd->add_option("--data", anData, "Dataset JSONL")->required();
    analyzeCmd->add_option("--k", anK, "Cluster count");
    analyzeCmd->add_option("--seed", anSeed, "Seed for teacher noise and k-means");
    analyzeCmd->add_option("--teacher", anTeacherA, "First embedding source");
    analyzeCmd->add_option("--teacher2", anTeacherB,
                           "Second embedding source (ignored with --checkpoint)");
    analyzeCmd->add_option("--checkpoint", anCheckpoint,
                           "Use this checkpoint's text encoder as the second source");
    analyzeCmd->add_option("--d-prime", anDPrime, "Teacher embedding dimension");
    analyzeCmd->add_option("--sigma-t", anSigmaT, "Teacher noise level");
    analyzeCmd->add_option("--content-weight", anContent, "Oracle content block weight");
    analyzeCmd->add_option("--degenerate-content-weight", anDegenContent,
                           "Degenerate content block weight");
    analyzeCmd->add_option("--dominant-family", anDominant,
                           "Degenerate teacher's populated family");
    analyzeCmd->add_option("--out", anOut, "Write the full report JSON here");
    analyzeCmd->callback([&] {
        DataBundle b = load_data(anData);
        Vocabulary vocab = Vocabulary::build(b.schema);
        TeacherOptions opts;
        opts.dPrime = anDPrime;
        opts.sigmaT = anSigmaT;
        opts.contentWeight = anContent;
        opts.degenerateContentWeight = anDegenContent;
        opts.seed = anSeed;
        opts.dominantFamily = anDominant;

        auto teacherA = make_teacher(anTeacherA, b.schema, vocab, opts);
        const Matrix embA = teacherA->embed(b.data);
        Matrix embB;
        std::string sourceB;
        if (!anCheckpoint.empty()) {
            LoadedCheckpoint ck = load_checkpoint(anCheckpoint);
            if (!schemas_equal(b.schema, ck.schema))
                throw std::runtime_error("dataset schema does not match checkpoint schema");
            embB = student_text_embeddings(*ck.models, vocab, b.data);
            sourceB = "checkpoint:" + anCheckpoint;
        } else {
            auto teacherB = make_teacher(anTeacherB, b.schema, vocab, opts);
            embB = teacherB->embed(b.data);
            sourceB = anTeacherB;
        }

        DistributionReport report = distribution_analysis(
            embA, embB, anK, class_labels(b.schema, b.data), anSeed);
        if (!anOut.empty()) write_text_file(anOut, report.to_json());
        json j;
        j["command"] = "analyze";
        j["k"] = anK;
        j["a"] = cluster_stats_summary(report.a);
        j["a"]["source"] = anTeacherA;
        j["b"] = cluster_stats_summary(report.b);
        j["b"]["source"] = sourceB;
        if (!anOut.empty()) j["out"] = anOut;
        print_summary(j);
    });

    // ---- export-viz ----
    auto* vizCmd = app.add_subcommand(
        "export-viz", "Project embeddings to 2D and export a cluster scatter");
    std::string vizEmb, vizLabels, vizData, vizFamily, vizCsv, vizSvg;
    std::size_t vizK = 0;
    vizCmd->add_option("--embeddings", vizEmb, "Embedding matrix (.kdm)")->required();
    vizCmd->add_option("--labels", vizLabels, "Cluster labels file")->required();
    vizCmd->add_option("--k", vizK, "Cluster count (0 = infer from the labels)");
    vizCmd->add_option("--data", vizData, "Dataset JSONL (attribute values per point)")
        ->required();
    vizCmd->add_option("--family", vizFamily, "Attribute family to color by")->required();
    vizCmd->add_option("--out", vizCsv, "Output CSV path")->required();
    vizCmd->add_option("--svg", vizSvg, "Optional SVG scatter path");
    vizCmd->callback([&] {
        Matrix emb = load_matrix(vizEmb);
        DataBundle b = load_data(vizData);
        const std::size_t f = b.schema.familyIndex(vizFamily);
        SoftConceptLabels labels =
            load_labels(vizLabels, vizK > 0 ? vizK : std::size_t(1) << 31);
        if (vizK == 0) {
            std::uint32_t maxLabel = 0;
            for (std::uint32_t l : labels.labels) maxLabel = std::max(maxLabel, l);
            labels.k = labels.labels.empty() ? 1 : maxLabel + 1;
        }
        std::vector<std::string> values;
        values.reserve(b.data.size());
        for (const auto& p : b.data)
            values.push_back(b.schema.families[f].values[p.tuple[f]]);
        cluster_viz_export(emb, labels, values, vizCsv, vizSvg);
        json j;
        j["command"] = "export-viz";
        j["rows"] = emb.rows();
        j["csv"] = vizCsv;
        if (!vizSvg.empty()) j["svg"] = vizSvg;
        print_summary(j);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
    return 0;
}
