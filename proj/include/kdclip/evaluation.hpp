#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kdclip/clustering.hpp"
#include "kdclip/dataset.hpp"
#include "kdclip/matrix.hpp"
#include "kdclip/models.hpp"

namespace kdclip {

enum class PromptStyle { CubStyle, Awa2Style };

PromptStyle prompt_style_from_string(const std::string& s);  // "cub" | "awa2"

// Prompt templates, rendered as token sequences over the dataset
// vocabulary (punctuation is dropped at tokenization):
//   CubStyle:  a photo of a <class> that <family> <value>
//   Awa2Style: a photo of a <class> with attribute <value>
struct PromptSpec {
    PromptStyle style = PromptStyle::CubStyle;

    std::vector<std::string> render(const AttributeSchema& schema, std::size_t family,
                                    std::size_t classValue, std::size_t value) const;
};

// For each image: build one prompt per value of the family (using the
// image's known class label), encode with the text encoder, l2-normalize,
// rank by cosine similarity against the normalized image embedding,
// softmax, argmax (ties to the lowest value index). Returns the fraction
// of images whose predicted value matches the latent concept.
double zero_shot_attribute_eval(const TextEncoder& text, const ImageEncoder& image,
                                const AttributeSchema& schema, const Vocabulary& vocab,
                                const Dataset& data, std::size_t family,
                                const PromptSpec& prompt);

struct ProbeOptions {
    int epochs = 300;
    double lr = 0.05;
    double evalFraction = 0.2;
    std::uint64_t seed = 11;
};

// One affine+softmax head per attribute family, trained with full-batch
// Adam cross-entropy on a seeded 80/20 row split of the embeddings.
struct ReconstructionProbe {
    std::vector<ParamTensor> w;  // per family: dim x |values|
    std::vector<ParamTensor> b;  // per family: 1 x |values|
    std::vector<std::size_t> trainIdx, evalIdx;
    std::size_t inputDim = 0;
};

ReconstructionProbe train_reconstruction_probe(const Matrix& emb,
                                               const AttributeSchema& schema,
                                               const Dataset& data,
                                               const ProbeOptions& opt);

// Fraction of eval-split rows where every family head predicts the true
// value (all caption slots recovered).
double probe_exact_match(const ReconstructionProbe& probe, const Matrix& emb,
                         const Dataset& data);

// Convenience: train + evaluate with one call.
double probe_exact_match_for(const Matrix& emb, const AttributeSchema& schema,
                             const Dataset& data, const ProbeOptions& opt);

// Per-point ground-truth labels for cluster statistics. The class reduction
// keeps "most common label per cluster" meaningful at small K; the tuple
// variant is the full concept identity.
std::vector<int> class_labels(const AttributeSchema& schema, const Dataset& data);
std::vector<int> tuple_labels(const AttributeSchema& schema, const Dataset& data);

struct DistributionReport {
    ClusterStats a, b;
    std::string to_json() const;
};

// Fits k-means with the same K and seed on both embedding sets and reports
// ClusterStats side by side. Swapping the inputs swaps the reports.
DistributionReport distribution_analysis(const Matrix& embA, const Matrix& embB,
                                         std::size_t k,
                                         const std::vector<int>& groundTruth,
                                         std::uint64_t seed, int maxIters = 100,
                                         double tol = 1e-8);

// PCA-2D scatter of the embeddings as CSV (x,y,cluster,attribute_value);
// optional SVG colored by attribute value. Output bytes are deterministic.
void cluster_viz_export(const Matrix& emb, const SoftConceptLabels& labels,
                        const std::vector<std::string>& attributeValues,
                        const std::string& csvPath, const std::string& svgPath = "");

struct EvalReport {
    std::vector<std::string> familyNames;     // non-class families
    std::vector<double> perFamilyAccuracy;    // aligned with familyNames
    double overallAccuracy = 0.0;
    double probeExactMatch = 0.0;
    bool hasDistribution = false;
    DistributionReport distribution;          // teacher (a) vs student (b)

    std::string to_json() const;
};

}  // namespace kdclip
