#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "kdclip/clustering.hpp"
#include "kdclip/dataset.hpp"
#include "kdclip/losses.hpp"
#include "kdclip/matrix.hpp"
#include "kdclip/models.hpp"
#include "kdclip/teacher.hpp"

namespace kdclip {

struct Seeds {
    std::uint64_t data = 1;
    std::uint64_t init = 2;
    std::uint64_t shuffle = 3;
    std::uint64_t kmeans = 4;
    std::uint64_t teacher = 5;
};

struct TrainConfig {
    // dataset
    std::size_t families = 4;
    std::size_t values = 6;
    std::size_t pairs = 2000;
    std::size_t dimImage = 32;
    double sigmaImage = 1.0;

    // model dims
    std::size_t embedDim = 64;    // student embedding width
    std::size_t teacherDim = 128; // teacher embedding width
    std::size_t hidden = 128;

    // teacher
    std::string teacher = "oracle";
    double sigmaT = 0.05;
    double contentWeight = 1.0;
    double degenerateContentWeight = 0.0;
    std::string dominantFamily;  // empty = class family

    // clustering / classifier stage
    std::size_t clusters = 16;
    int kmeansMaxIters = 100;
    double kmeansTol = 1e-8;
    int classifierEpochs = 100;
    double classifierLr = 1e-3;

    // joint stage
    int epochs = 200;
    std::size_t batchSize = 64;
    double lr = 5e-5;
    double alpha = 1.0;
    double beta = 0.01;
    double gamma = 1.0;
    bool enableEmb = true;
    bool enableConc = true;
    bool enableCont = true;
    Reduction embReduction = Reduction::Sum;
    Reduction concReduction = Reduction::Sum;

    // evaluation
    int probeEpochs = 300;
    double probeLr = 0.05;
    double probeEvalFraction = 0.2;
    std::uint64_t probeSeed = 11;
    std::size_t distributionClusters = 50;
    std::string promptStyle = "cub";

    Seeds seeds;

    void validate() const;  // throws invalid_argument naming the field
};

// Reads a config file; ".json" or ".toml" (flat key = value lines) by
// extension. Unknown keys are errors.
TrainConfig load_config(const std::string& path);
TrainConfig config_from_json_text(const std::string& text, const std::string& origin);
std::string config_to_json_text(const TrainConfig& cfg);

// Everything trained jointly plus the frozen classifier.
struct ModelSet {
    TextEncoder text;
    ImageEncoder image;
    LinearProjector teacherProj;  // embedDim -> teacherDim, distillation target map
    LinearProjector imageProj;    // embedDim -> teacherDim, classifier input map
    Classifier classifier;        // teacherDim -> K
    ParamTensor temperature;

    ModelSet(const TrainConfig& cfg, std::size_t vocabSize);

    std::vector<ParamTensor*> params();
    std::vector<const ParamTensor*> params() const;
    void zero_grads();
    std::uint64_t checksum() const;
};

// Adam with bias correction; frozen tensors are skipped. Moment state is
// exposed so checkpoints can resume a run exactly.
class AdamOptimizer {
  public:
    AdamOptimizer(std::vector<ParamTensor*> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    void step();
    void zero_grad();

    std::int64_t step_count() const { return t_; }
    std::size_t size() const { return params_.size(); }
    const std::vector<Matrix>& moments1() const { return m_; }
    const std::vector<Matrix>& moments2() const { return v_; }

    // Installs saved state; shapes must match the registered params.
    void restore(std::int64_t stepCount, std::vector<Matrix> m, std::vector<Matrix> v);

  private:
    std::vector<ParamTensor*> params_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Matrix> m_, v_;
};

struct ConceptStageResult {
    KMeansModel kmeans;
    SoftConceptLabels labels;
    std::vector<double> accuracy;  // classifier train accuracy per epoch (pre-step)
    double finalAccuracy = 0.0;
};

// K-means over the teacher embeddings, then classifier training on
// (teacher embedding -> cluster label) cross-entropy, full batch.
// The classifier comes back unfrozen; freezing is the joint stage's
// first act.
ConceptStageResult run_concept_stage(const TrainConfig& cfg, const Matrix& teacherEmb,
                                     ModelSet& models);

struct JointTrainResult {
    std::vector<LossBreakdown> epochLosses;  // per-epoch mean over batches
    int epochsRun = 0;
};

// Mini-batch Adam over epochs [startEpoch, endEpoch). The classifier must
// already be frozen. Shuffle order is derived from (seeds.shuffle, epoch),
// so a resumed run replays the same batches as an unbroken one.
JointTrainResult run_joint_training(const TrainConfig& cfg, const Vocabulary& vocab,
                                    const Dataset& data, const Matrix& teacherEmb,
                                    const SoftConceptLabels& labels, ModelSet& models,
                                    AdamOptimizer& adam, int startEpoch, int endEpoch);

struct TrainReport {
    std::vector<double> classifierAccuracy;
    double classifierFinalAccuracy = 0.0;
    std::vector<LossBreakdown> epochLosses;
    double kmeansInertia = 0.0;
    int kmeansIterations = 0;
    std::uint64_t paramsChecksum = 0;
    double wallSeconds = 0.0;

    std::string to_json(const TrainConfig& cfg) const;
    void write_loss_csv(const std::string& path) const;
};

// Both stages end to end. Teacher embeddings are computed once. When
// checkpointDir is nonempty the final state (including optimizer moments)
// is written there.
TrainReport run_full_training(const TrainConfig& cfg, const AttributeSchema& schema,
                              const Vocabulary& vocab, const Dataset& data,
                              ModelSet& models, const std::string& checkpointDir = "",
                              ConceptStageResult* conceptOut = nullptr);

void save_checkpoint(const std::string& dir, const ModelSet& models,
                     const AdamOptimizer& adam, const TrainConfig& cfg,
                     const AttributeSchema& schema, const KMeansModel& kmeans,
                     const SoftConceptLabels& labels, int epochsCompleted);

struct LoadedCheckpoint {
    TrainConfig cfg;
    AttributeSchema schema;
    std::unique_ptr<ModelSet> models;
    KMeansModel kmeans;
    SoftConceptLabels labels;
    int epochsCompleted = 0;
    std::int64_t adamStep = 0;
    std::vector<Matrix> adamM, adamV;
};

// Rebuilds models from manifest + parameter blocks; any name or shape
// mismatch is an error naming the field.
LoadedCheckpoint load_checkpoint(const std::string& dir);

struct AblationRow {
    std::string name;
    LossBreakdown finalLoss;
    double probeExactMatch = 0.0;
    double zeroShotOverall = 0.0;
    std::vector<double> zeroShotPerFamily;  // non-class families, schema order
};

struct AblationTable {
    double teacherProbeExactMatch = 0.0;
    std::vector<AblationRow> rows;  // cont / cont+emb / cont+emb+conc
    std::string to_json() const;
};

// Trains the three loss subsets with shared seeds and evaluates each
// (probe exact match on the student text embeddings, zero-shot attribute
// accuracy). The teacher row gives the probe ceiling.
AblationTable run_ablation_suite(const TrainConfig& cfg, const AttributeSchema& schema,
                                 const Vocabulary& vocab, const Dataset& data);

}  // namespace kdclip
