#include "kdclip/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "kdclip/numerics.hpp"
#include "kdclip/pipeline.hpp"
#include "kdclip/rng.hpp"

namespace kdclip {

using nlohmann::json;

namespace {

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::size_t argmax_row(const double* p, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

}  // namespace

PromptStyle prompt_style_from_string(const std::string& s) {
    if (s == "cub") return PromptStyle::CubStyle;
    if (s == "awa2") return PromptStyle::Awa2Style;
    throw std::invalid_argument("prompt style must be \"cub\" or \"awa2\", got \"" + s +
                                "\"");
}

std::vector<std::string> PromptSpec::render(const AttributeSchema& schema,
                                            std::size_t family, std::size_t classValue,
                                            std::size_t value) const {
    if (family >= schema.families.size())
        throw std::invalid_argument("prompt: unknown family index " +
                                    std::to_string(family));
    const AttributeFamily& cls = schema.families[schema.classFamily];
    const AttributeFamily& fam = schema.families[family];
    if (classValue >= cls.values.size() || value >= fam.values.size())
        throw std::invalid_argument("prompt: value index out of range");
    if (style == PromptStyle::CubStyle)
        return {"a", "photo", "of", "a", cls.values[classValue],
                "that", fam.name, fam.values[value]};
    return {"a", "photo", "of", "a", cls.values[classValue],
            "with", "attribute", fam.values[value]};
}

double zero_shot_attribute_eval(const TextEncoder& text, const ImageEncoder& image,
                                const AttributeSchema& schema, const Vocabulary& vocab,
                                const Dataset& data, std::size_t family,
                                const PromptSpec& prompt) {
    if (family >= schema.families.size())
        throw std::invalid_argument("zero_shot: unknown family index " +
                                    std::to_string(family));
    if (data.empty()) throw std::invalid_argument("zero_shot: empty dataset");

    const std::size_t numClasses = schema.families[schema.classFamily].values.size();
    const std::size_t numValues = schema.families[family].values.size();

    // One prompt per (class label, candidate value), encoded in one batch.
    Matrix promptMh(numClasses * numValues, vocab.size());
    for (std::size_t c = 0; c < numClasses; ++c)
        for (std::size_t v = 0; v < numValues; ++v) {
            const auto tokens = prompt.render(schema, family, c, v);
            const auto enc = encode_caption_multihot(vocab, tokens);
            std::copy(enc.begin(), enc.end(), promptMh.row(c * numValues + v));
        }
    const Matrix promptEmb = l2_normalize_rows(encode_text(text, promptMh));

    const std::size_t n = data.size();
    const std::size_t dImg = data[0].imageFeat.size();
    Matrix imgs(n, dImg);
    for (std::size_t i = 0; i < n; ++i)
        std::copy(data[i].imageFeat.begin(), data[i].imageFeat.end(), imgs.row(i));
    const Matrix imgEmb = l2_normalize_rows(encode_image(image, imgs));

    std::size_t hits = 0;
    std::vector<double> sims(numValues), probs(numValues);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = data[i].tuple[schema.classFamily];
        const std::size_t truth = data[i].tuple[family];
        for (std::size_t v = 0; v < numValues; ++v) {
            const double* p = promptEmb.row(c * numValues + v);
            const double* q = imgEmb.row(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < promptEmb.cols(); ++j) dot += p[j] * q[j];
            sims[v] = dot;
        }
        const std::size_t rawArg = argmax_row(sims.data(), numValues);
        double maxSim = sims[rawArg], sum = 0.0;
        for (std::size_t v = 0; v < numValues; ++v) {
            probs[v] = std::exp(sims[v] - maxSim);
            sum += probs[v];
        }
        for (std::size_t v = 0; v < numValues; ++v) probs[v] /= sum;
        std::size_t pred = argmax_row(probs.data(), numValues);
        // softmax is monotone, so the two argmaxes must agree (up to exact
        // probability ties, which resolve to the lowest index).
        if (pred != rawArg) {
            if (probs[pred] == probs[rawArg]) pred = std::min(pred, rawArg);
            else throw std::logic_error("zero_shot: softmax changed the argmax");
        }
        if (pred == truth) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Reconstruction probe

ReconstructionProbe train_reconstruction_probe(const Matrix& emb,
                                               const AttributeSchema& schema,
                                               const Dataset& data,
                                               const ProbeOptions& opt) {
    const std::size_t n = emb.rows();
    if (n != data.size())
        throw std::invalid_argument("probe: " + std::to_string(n) + " embedding rows for " +
                                    std::to_string(data.size()) + " pairs");
    if (n < 2) throw std::invalid_argument("probe: need at least 2 rows to split");

    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng = Rng::derive(opt.seed, 0x9e);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.index(i + 1)]);

    const std::size_t nEval = static_cast<std::size_t>(
        static_cast<double>(n) * opt.evalFraction);
    if (nEval == 0) throw std::runtime_error("probe: empty eval split");
    if (nEval == n) throw std::runtime_error("probe: empty train split");

    ReconstructionProbe probe;
    probe.inputDim = emb.cols();
    probe.evalIdx.assign(idx.begin(), idx.begin() + nEval);
    probe.trainIdx.assign(idx.begin() + nEval, idx.end());

    const std::size_t nTrain = probe.trainIdx.size();
    Matrix x(nTrain, emb.cols());
    for (std::size_t r = 0; r < nTrain; ++r) {
        const double* src = emb.row(probe.trainIdx[r]);
        std::copy(src, src + emb.cols(), x.row(r));
    }

    const std::size_t numFamilies = schema.families.size();
    std::vector<Matrix> targets;
    targets.reserve(numFamilies);
    probe.w.reserve(numFamilies);
    probe.b.reserve(numFamilies);
    for (std::size_t f = 0; f < numFamilies; ++f) {
        const std::size_t vals = schema.families[f].values.size();
        probe.w.emplace_back(Matrix(emb.cols(), vals),
                             "probe." + schema.families[f].name + ".w");
        probe.b.emplace_back(Matrix(1, vals), "probe." + schema.families[f].name + ".b");
        Matrix t(nTrain, vals);
        for (std::size_t r = 0; r < nTrain; ++r)
            t(r, data[probe.trainIdx[r]].tuple[f]) = 1.0;
        targets.push_back(std::move(t));
    }

    std::vector<ParamTensor*> params;
    for (std::size_t f = 0; f < numFamilies; ++f) {
        params.push_back(&probe.w[f]);
        params.push_back(&probe.b[f]);
    }
    AdamOptimizer adam(params, opt.lr);
    const double invN = 1.0 / static_cast<double>(nTrain);
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        adam.zero_grad();
        for (std::size_t f = 0; f < numFamilies; ++f) {
            const Matrix probs = softmax_rows(affine_forward(x, probe.w[f], probe.b[f]));
            Matrix dLogits(nTrain, probs.cols());
            for (std::size_t e = 0; e < probs.size(); ++e)
                dLogits.data()[e] = (probs.data()[e] - targets[f].data()[e]) * invN;
            affine_backward(x, probe.w[f], probe.b[f], dLogits);
        }
        adam.step();
    }
    return probe;
}

double probe_exact_match(const ReconstructionProbe& probe, const Matrix& emb,
                         const Dataset& data) {
    if (emb.cols() != probe.inputDim)
        throw std::invalid_argument("probe: embedding width " +
                                    std::to_string(emb.cols()) + " != trained width " +
                                    std::to_string(probe.inputDim));
    if (emb.rows() != data.size())
        throw std::invalid_argument("probe: embedding rows do not match dataset");

    const std::size_t nEval = probe.evalIdx.size();
    Matrix x(nEval, emb.cols());
    for (std::size_t r = 0; r < nEval; ++r) {
        const double* src = emb.row(probe.evalIdx[r]);
        std::copy(src, src + emb.cols(), x.row(r));
    }

    std::vector<bool> allCorrect(nEval, true);
    for (std::size_t f = 0; f < probe.w.size(); ++f) {
        const Matrix logits = affine_forward(x, probe.w[f], probe.b[f]);
        for (std::size_t r = 0; r < nEval; ++r) {
            const std::size_t pred = argmax_row(logits.row(r), logits.cols());
            if (pred != data[probe.evalIdx[r]].tuple[f]) allCorrect[r] = false;
        }
    }
    std::size_t hits = 0;
    for (bool ok : allCorrect)
        if (ok) ++hits;
    return static_cast<double>(hits) / static_cast<double>(nEval);
}

double probe_exact_match_for(const Matrix& emb, const AttributeSchema& schema,
                             const Dataset& data, const ProbeOptions& opt) {
    const ReconstructionProbe probe = train_reconstruction_probe(emb, schema, data, opt);
    return probe_exact_match(probe, emb, data);
}

// ---------------------------------------------------------------------------
// Distribution analysis

std::vector<int> class_labels(const AttributeSchema& schema, const Dataset& data) {
    std::vector<int> out;
    out.reserve(data.size());
    for (const CaptionImagePair& p : data)
        out.push_back(static_cast<int>(p.tuple[schema.classFamily]));
    return out;
}

std::vector<int> tuple_labels(const AttributeSchema& schema, const Dataset& data) {
    std::vector<int> out;
    out.reserve(data.size());
    for (const CaptionImagePair& p : data)
        out.push_back(static_cast<int>(concept_code(schema, p.tuple)));
    return out;
}

std::string DistributionReport::to_json() const {
    json j;
    j["a"] = json::parse(a.to_json());
    j["b"] = json::parse(b.to_json());
    return j.dump(2) + "\n";
}

DistributionReport distribution_analysis(const Matrix& embA, const Matrix& embB,
                                         std::size_t k,
                                         const std::vector<int>& groundTruth,
                                         std::uint64_t seed, int maxIters, double tol) {
    if (embA.rows() != embB.rows())
        throw std::invalid_argument("distribution analysis: row counts differ (" +
                                    std::to_string(embA.rows()) + " vs " +
                                    std::to_string(embB.rows()) + ")");
    if (k > embA.rows())
        throw std::invalid_argument("distribution analysis: k exceeds n");
    if (!groundTruth.empty() && groundTruth.size() != embA.rows())
        throw std::invalid_argument("distribution analysis: ground-truth length " +
                                    std::to_string(groundTruth.size()) +
                                    " does not match n");

    const std::vector<int>* gt = groundTruth.empty() ? nullptr : &groundTruth;
    DistributionReport report;
    const auto fitA = kmeans_fit(embA, k, maxIters, tol, seed);
    report.a = cluster_stats(fitA.second, gt);
    const auto fitB = kmeans_fit(embB, k, maxIters, tol, seed);
    report.b = cluster_stats(fitB.second, gt);
    return report;
}

// ---------------------------------------------------------------------------
// Visualization export

void cluster_viz_export(const Matrix& emb, const SoftConceptLabels& labels,
                        const std::vector<std::string>& attributeValues,
                        const std::string& csvPath, const std::string& svgPath) {
    const std::size_t n = emb.rows();
    if (labels.labels.size() != n || attributeValues.size() != n)
        throw std::invalid_argument("viz export: lengths differ (points " +
                                    std::to_string(n) + ", clusters " +
                                    std::to_string(labels.labels.size()) + ", values " +
                                    std::to_string(attributeValues.size()) + ")");

    const PcaResult pca = pca_project_2d(emb);

    std::ofstream csv(csvPath);
    if (!csv) throw std::runtime_error("viz export: cannot open " + csvPath);
    csv << "x,y,cluster,attribute_value\n";
    for (std::size_t i = 0; i < n; ++i) {
        csv << fmt_g17(pca.projected(i, 0)) << "," << fmt_g17(pca.projected(i, 1)) << ","
            << labels.labels[i] << "," << attributeValues[i] << "\n";
    }
    if (!csv) throw std::runtime_error("viz export: write failed for " + csvPath);

    if (svgPath.empty()) return;

    static const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                                     "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
                                     "#ccb974", "#64b5cd", "#2f4b7c", "#ffa600"};
    constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);
    std::map<std::string, std::size_t> colorOf;  // sorted, so deterministic
    for (const std::string& v : attributeValues) colorOf.emplace(v, 0);
    std::size_t next = 0;
    for (auto& [value, color] : colorOf) color = next++;

    double minX = pca.projected(0, 0), maxX = minX;
    double minY = pca.projected(0, 1), maxY = minY;
    for (std::size_t i = 0; i < n; ++i) {
        minX = std::min(minX, pca.projected(i, 0));
        maxX = std::max(maxX, pca.projected(i, 0));
        minY = std::min(minY, pca.projected(i, 1));
        maxY = std::max(maxY, pca.projected(i, 1));
    }
    const double spanX = maxX - minX > 0 ? maxX - minX : 1.0;
    const double spanY = maxY - minY > 0 ? maxY - minY : 1.0;
    const double side = 600.0, margin = 20.0;

    std::ofstream svg(svgPath);
    if (!svg) throw std::runtime_error("viz export: cannot open " + svgPath);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 640\">\n"
        << "<rect width=\"640\" height=\"640\" fill=\"white\"/>\n";
    char buf[160];
    for (std::size_t i = 0; i < n; ++i) {
        const double cx = margin + (pca.projected(i, 0) - minX) / spanX * side;
        const double cy = margin + (maxY - pca.projected(i, 1)) / spanY * side;
        const std::size_t color = colorOf[attributeValues[i]] % kPaletteSize;
        std::snprintf(buf, sizeof buf,
                      "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" "
                      "fill-opacity=\"0.8\"/>\n",
                      cx, cy, kPalette[color]);
        svg << buf;
    }
    svg << "</svg>\n";
    if (!svg) throw std::runtime_error("viz export: write failed for " + svgPath);
}

std::string EvalReport::to_json() const {
    json j;
    j["family_names"] = familyNames;
    j["per_family_accuracy"] = perFamilyAccuracy;
    j["overall_accuracy"] = overallAccuracy;
    j["probe_exact_match"] = probeExactMatch;
    if (hasDistribution) j["distribution"] = json::parse(distribution.to_json());
    return j.dump(2) + "\n";
}

}  // namespace kdclip
