#include "kdclip/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "kdclip/evaluation.hpp"
#include "kdclip/numerics.hpp"
#include "kdclip/rng.hpp"

namespace kdclip {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string hex_u64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

Reduction reduction_from_string(const std::string& s, const std::string& key) {
    if (s == "sum") return Reduction::Sum;
    if (s == "mean") return Reduction::Mean;
    throw std::invalid_argument("config: " + key + " must be \"sum\" or \"mean\", got \"" +
                                s + "\"");
}

std::string reduction_to_string(Reduction r) {
    return r == Reduction::Sum ? "sum" : "mean";
}

void apply_config_key(TrainConfig& cfg, const std::string& key, const json& v) {
    auto sz = [&] { return v.get<std::size_t>(); };
    auto u64 = [&] { return v.get<std::uint64_t>(); };
    auto num = [&] { return v.get<double>(); };
    auto bl = [&] { return v.get<bool>(); };
    auto str = [&] { return v.get<std::string>(); };
    auto iv = [&] { return v.get<int>(); };

    if (key == "families") cfg.families = sz();
    else if (key == "values") cfg.values = sz();
    else if (key == "pairs") cfg.pairs = sz();
    else if (key == "dim_image") cfg.dimImage = sz();
    else if (key == "sigma_image") cfg.sigmaImage = num();
    else if (key == "d") cfg.embedDim = sz();
    else if (key == "d_prime") cfg.teacherDim = sz();
    else if (key == "hidden") cfg.hidden = sz();
    else if (key == "teacher") cfg.teacher = str();
    else if (key == "sigma_t") cfg.sigmaT = num();
    else if (key == "content_weight") cfg.contentWeight = num();
    else if (key == "degenerate_content_weight") cfg.degenerateContentWeight = num();
    else if (key == "dominant_family") cfg.dominantFamily = str();
    else if (key == "k") cfg.clusters = sz();
    else if (key == "kmeans_max_iters") cfg.kmeansMaxIters = iv();
    else if (key == "kmeans_tol") cfg.kmeansTol = num();
    else if (key == "classifier_epochs") cfg.classifierEpochs = iv();
    else if (key == "classifier_lr") cfg.classifierLr = num();
    else if (key == "epochs") cfg.epochs = iv();
    else if (key == "batch") cfg.batchSize = sz();
    else if (key == "lr") cfg.lr = num();
    else if (key == "alpha") cfg.alpha = num();
    else if (key == "beta") cfg.beta = num();
    else if (key == "gamma") cfg.gamma = num();
    else if (key == "enable_emb") cfg.enableEmb = bl();
    else if (key == "enable_conc") cfg.enableConc = bl();
    else if (key == "enable_cont") cfg.enableCont = bl();
    else if (key == "emb_reduction") cfg.embReduction = reduction_from_string(str(), key);
    else if (key == "conc_reduction") cfg.concReduction = reduction_from_string(str(), key);
    else if (key == "probe_epochs") cfg.probeEpochs = iv();
    else if (key == "probe_lr") cfg.probeLr = num();
    else if (key == "probe_eval_fraction") cfg.probeEvalFraction = num();
    else if (key == "probe_seed") cfg.probeSeed = u64();
    else if (key == "distribution_k") cfg.distributionClusters = sz();
    else if (key == "prompt_style") cfg.promptStyle = str();
    else if (key == "seed_data") cfg.seeds.data = u64();
    else if (key == "seed_init") cfg.seeds.init = u64();
    else if (key == "seed_shuffle") cfg.seeds.shuffle = u64();
    else if (key == "seed_kmeans") cfg.seeds.kmeans = u64();
    else if (key == "seed_teacher") cfg.seeds.teacher = u64();
    else throw std::invalid_argument("unknown config key \"" + key + "\"");
}

TrainConfig config_from_json_object(const json& j, const std::string& origin) {
    if (!j.is_object())
        throw std::invalid_argument(origin + ": config must be a JSON object");
    TrainConfig cfg;
    for (const auto& [key, value] : j.items()) {
        try {
            apply_config_key(cfg, key, value);
        } catch (const json::exception& e) {
            throw std::invalid_argument(origin + ": bad value for \"" + key +
                                        "\": " + e.what());
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(origin + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

json config_json(const TrainConfig& cfg) {
    json j;
    j["families"] = cfg.families;
    j["values"] = cfg.values;
    j["pairs"] = cfg.pairs;
    j["dim_image"] = cfg.dimImage;
    j["sigma_image"] = cfg.sigmaImage;
    j["d"] = cfg.embedDim;
    j["d_prime"] = cfg.teacherDim;
    j["hidden"] = cfg.hidden;
    j["teacher"] = cfg.teacher;
    j["sigma_t"] = cfg.sigmaT;
    j["content_weight"] = cfg.contentWeight;
    j["degenerate_content_weight"] = cfg.degenerateContentWeight;
    j["dominant_family"] = cfg.dominantFamily;
    j["k"] = cfg.clusters;
    j["kmeans_max_iters"] = cfg.kmeansMaxIters;
    j["kmeans_tol"] = cfg.kmeansTol;
    j["classifier_epochs"] = cfg.classifierEpochs;
    j["classifier_lr"] = cfg.classifierLr;
    j["epochs"] = cfg.epochs;
    j["batch"] = cfg.batchSize;
    j["lr"] = cfg.lr;
    j["alpha"] = cfg.alpha;
    j["beta"] = cfg.beta;
    j["gamma"] = cfg.gamma;
    j["enable_emb"] = cfg.enableEmb;
    j["enable_conc"] = cfg.enableConc;
    j["enable_cont"] = cfg.enableCont;
    j["emb_reduction"] = reduction_to_string(cfg.embReduction);
    j["conc_reduction"] = reduction_to_string(cfg.concReduction);
    j["probe_epochs"] = cfg.probeEpochs;
    j["probe_lr"] = cfg.probeLr;
    j["probe_eval_fraction"] = cfg.probeEvalFraction;
    j["probe_seed"] = cfg.probeSeed;
    j["distribution_k"] = cfg.distributionClusters;
    j["prompt_style"] = cfg.promptStyle;
    j["seed_data"] = cfg.seeds.data;
    j["seed_init"] = cfg.seeds.init;
    j["seed_shuffle"] = cfg.seeds.shuffle;
    j["seed_kmeans"] = cfg.seeds.kmeans;
    j["seed_teacher"] = cfg.seeds.teacher;
    return j;
}

// Flat "key = value" lines; # comments; quoted strings, booleans, numbers.
json toml_subset_to_json(const std::string& text, const std::string& origin) {
    json out = json::object();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = origin + ":" + std::to_string(lineno);
        std::string s;
        bool inQuote = false;
        for (char c : line) {
            if (c == '"') inQuote = !inQuote;
            if (c == '#' && !inQuote) break;
            s += c;
        }
        s = trim(s);
        if (s.empty()) continue;
        if (s.front() == '[')
            throw std::invalid_argument(where +
                                        ": sections are not supported (flat key = value only)");
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(where + ": expected key = value");
        const std::string key = trim(s.substr(0, eq));
        const std::string val = trim(s.substr(eq + 1));
        if (key.empty() || val.empty())
            throw std::invalid_argument(where + ": expected key = value");
        if (val.front() == '"') {
            if (val.size() < 2 || val.back() != '"')
                throw std::invalid_argument(where + ": unterminated string");
            out[key] = val.substr(1, val.size() - 2);
        } else if (val == "true") {
            out[key] = true;
        } else if (val == "false") {
            out[key] = false;
        } else {
            try {
                std::size_t pos = 0;
                if (val.find_first_of(".eE") == std::string::npos) {
                    const long long n = std::stoll(val, &pos);
                    if (pos != val.size()) throw std::invalid_argument("");
                    out[key] = n;
                } else {
                    const double d = std::stod(val, &pos);
                    if (pos != val.size()) throw std::invalid_argument("");
                    out[key] = d;
                }
            } catch (const std::exception&) {
                throw std::invalid_argument(where + ": value \"" + val +
                                            "\" is not a string, boolean, or number");
            }
        }
    }
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::size_t argmax_row(const double* p, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

json breakdown_json(const LossBreakdown& b) {
    json j;
    j["emb"] = b.emb;
    j["conc"] = b.conc;
    j["cont"] = b.cont;
    j["total"] = b.total;
    return j;
}

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) {
        throw std::invalid_argument("config: " + msg);
    };
    if (families < 2) fail("families must be >= 2");
    if (values < 2) fail("values must be >= 2");
    if (pairs < 1) fail("pairs must be >= 1");
    if (dimImage < 1 || embedDim < 1 || teacherDim < 1 || hidden < 1)
        fail("model dimensions must be >= 1");
    if (sigmaImage < 0 || sigmaT < 0) fail("noise levels must be >= 0");
    if (contentWeight < 0 || degenerateContentWeight < 0)
        fail("content weights must be >= 0");
    if (teacher.empty()) fail("teacher must be set");
    if (clusters < 1) fail("k must be >= 1");
    if (kmeansMaxIters < 1) fail("kmeans_max_iters must be >= 1");
    if (kmeansTol < 0) fail("kmeans_tol must be >= 0");
    if (classifierEpochs < 0) fail("classifier_epochs must be >= 0");
    if (classifierLr < 0 || lr < 0 || probeLr < 0) fail("learning rates must be >= 0");
    if (epochs < 0) fail("epochs must be >= 0");
    if (batchSize < 1) fail("batch must be >= 1");
    if (alpha < 0 || beta < 0 || gamma < 0) fail("loss weights must be >= 0");
    if (probeEpochs < 0) fail("probe_epochs must be >= 0");
    if (probeEvalFraction <= 0 || probeEvalFraction >= 1)
        fail("probe_eval_fraction must be in (0, 1)");
    if (distributionClusters < 1) fail("distribution_k must be >= 1");
    if (promptStyle != "cub" && promptStyle != "awa2")
        fail("prompt_style must be \"cub\" or \"awa2\"");
}

TrainConfig config_from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(origin + ": " + e.what());
    }
    return config_from_json_object(j, origin);
}

std::string config_to_json_text(const TrainConfig& cfg) {
    return config_json(cfg).dump(2) + "\n";
}

TrainConfig load_config(const std::string& path) {
    const std::string text = read_file(path);
    if (ends_with(path, ".json")) return config_from_json_text(text, path);
    if (ends_with(path, ".toml"))
        return config_from_json_object(toml_subset_to_json(text, path), path);
    throw std::invalid_argument("config file " + path +
                                " must end in .json or .toml");
}

// ---------------------------------------------------------------------------
// Models

namespace {

TextEncoder make_text_encoder(const TrainConfig& cfg, std::size_t vocabSize) {
    Rng rng = Rng::derive(cfg.seeds.init, 0x11);
    return TextEncoder(vocabSize, cfg.hidden, cfg.embedDim, rng);
}

ImageEncoder make_image_encoder(const TrainConfig& cfg) {
    Rng rng = Rng::derive(cfg.seeds.init, 0x12);
    return ImageEncoder(cfg.dimImage, cfg.hidden, cfg.embedDim, rng);
}

LinearProjector make_projector(const TrainConfig& cfg, std::uint64_t stream,
                               const std::string& name) {
    Rng rng = Rng::derive(cfg.seeds.init, stream);
    return LinearProjector(cfg.embedDim, cfg.teacherDim, rng, name);
}

Classifier make_classifier(const TrainConfig& cfg) {
    Rng rng = Rng::derive(cfg.seeds.init, 0x15);
    return Classifier(cfg.teacherDim, cfg.clusters, rng);
}

}  // namespace

ModelSet::ModelSet(const TrainConfig& cfg, std::size_t vocabSize)
    : text(make_text_encoder(cfg, vocabSize)),
      image(make_image_encoder(cfg)),
      teacherProj(make_projector(cfg, 0x13, "teacher_proj.w")),
      imageProj(make_projector(cfg, 0x14, "image_proj.w")),
      classifier(make_classifier(cfg)),
      temperature(make_temperature()) {}

std::vector<ParamTensor*> ModelSet::params() {
    std::vector<ParamTensor*> out;
    for (auto* p : text.mlp.params()) out.push_back(p);
    for (auto* p : image.mlp.params()) out.push_back(p);
    out.push_back(&teacherProj.weight);
    out.push_back(&imageProj.weight);
    for (auto* p : classifier.params()) out.push_back(p);
    out.push_back(&temperature);
    return out;
}

std::vector<const ParamTensor*> ModelSet::params() const {
    std::vector<const ParamTensor*> out;
    for (const auto* p : text.mlp.params()) out.push_back(p);
    for (const auto* p : image.mlp.params()) out.push_back(p);
    out.push_back(&teacherProj.weight);
    out.push_back(&imageProj.weight);
    for (const auto* p : classifier.params()) out.push_back(p);
    out.push_back(&temperature);
    return out;
}

void ModelSet::zero_grads() {
    for (auto* p : params()) p->zero_grad();
}

std::uint64_t ModelSet::checksum() const { return params_checksum(params()); }

// ---------------------------------------------------------------------------
// Optimizer

AdamOptimizer::AdamOptimizer(std::vector<ParamTensor*> params, double lr, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ParamTensor* p : params_) {
        m_.emplace_back(p->value.rows(), p->value.cols());
        v_.emplace_back(p->value.rows(), p->value.cols());
    }
}

void AdamOptimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        ParamTensor& p = *params_[i];
        if (p.frozen) continue;
        double* val = p.value.data();
        const double* g = p.grad.data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        const std::size_t n = p.value.size();
        for (std::size_t e = 0; e < n; ++e) {
            m[e] = beta1_ * m[e] + (1.0 - beta1_) * g[e];
            v[e] = beta2_ * v[e] + (1.0 - beta2_) * g[e] * g[e];
            val[e] -= lr_ * (m[e] / bc1) / (std::sqrt(v[e] / bc2) + eps_);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (ParamTensor* p : params_) p->zero_grad();
}

void AdamOptimizer::restore(std::int64_t stepCount, std::vector<Matrix> m,
                            std::vector<Matrix> v) {
    if (m.size() != params_.size() || v.size() != params_.size())
        throw std::runtime_error("optimizer restore: moment count " +
                                 std::to_string(m.size()) + "/" + std::to_string(v.size()) +
                                 " does not match " + std::to_string(params_.size()) +
                                 " params");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!m[i].same_shape(params_[i]->value) || !v[i].same_shape(params_[i]->value))
            throw std::runtime_error("optimizer restore: moment shape mismatch for " +
                                     params_[i]->name);
    }
    t_ = stepCount;
    m_ = std::move(m);
    v_ = std::move(v);
}

// ---------------------------------------------------------------------------
// Stage A + B: clustering and classifier training

ConceptStageResult run_concept_stage(const TrainConfig& cfg, const Matrix& teacherEmb,
                                     ModelSet& models) {
    if (teacherEmb.rows() == 0)
        throw std::invalid_argument("concept stage: empty embedding set");
    if (cfg.clusters > teacherEmb.rows())
        throw std::invalid_argument("concept stage: k=" + std::to_string(cfg.clusters) +
                                    " exceeds n=" + std::to_string(teacherEmb.rows()));
    if (teacherEmb.cols() != models.classifier.w.value.rows())
        throw std::invalid_argument("concept stage: teacher dim " +
                                    std::to_string(teacherEmb.cols()) +
                                    " does not match classifier input " +
                                    std::to_string(models.classifier.w.value.rows()));

    ConceptStageResult res;
    auto fitted = kmeans_fit(teacherEmb, cfg.clusters, cfg.kmeansMaxIters, cfg.kmeansTol,
                             cfg.seeds.kmeans);
    res.kmeans = std::move(fitted.first);
    res.labels = std::move(fitted.second);

    const std::size_t n = teacherEmb.rows();
    const std::size_t k = res.labels.k;
    const Matrix targets = one_hot(res.labels);

    auto accuracy_of = [&](const Matrix& probs) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (argmax_row(probs.row(i), k) == res.labels.labels[i]) ++hits;
        return static_cast<double>(hits) / static_cast<double>(n);
    };

    AdamOptimizer adam(models.classifier.params(), cfg.classifierLr);
    const double invN = 1.0 / static_cast<double>(n);
    for (int epoch = 0; epoch < cfg.classifierEpochs; ++epoch) {
        adam.zero_grad();
        const Matrix probs = models.classifier.classify(teacherEmb);
        res.accuracy.push_back(accuracy_of(probs));
        // d(mean CE)/dlogits with softmax folded in
        Matrix dLogits(n, k);
        for (std::size_t i = 0; i < probs.size(); ++i)
            dLogits.data()[i] = (probs.data()[i] - targets.data()[i]) * invN;
        models.classifier.backward_from_logits(teacherEmb, dLogits);
        adam.step();
    }
    res.finalAccuracy = accuracy_of(models.classifier.classify(teacherEmb));
    return res;
}

// ---------------------------------------------------------------------------
// Stage C: joint training

JointTrainResult run_joint_training(const TrainConfig& cfg, const Vocabulary& vocab,
                                    const Dataset& data, const Matrix& teacherEmb,
                                    const SoftConceptLabels& labels, ModelSet& models,
                                    AdamOptimizer& adam, int startEpoch, int endEpoch) {
    if (!models.classifier.is_frozen())
        throw std::logic_error(
            "joint training: classifier must be frozen before the first step");
    const std::size_t n = data.size();
    if (n == 0) throw std::invalid_argument("joint training: empty dataset");
    if (labels.labels.size() != n)
        throw std::invalid_argument("joint training: " + std::to_string(labels.labels.size()) +
                                    " labels for " + std::to_string(n) + " pairs");
    if (teacherEmb.rows() != n)
        throw std::invalid_argument("joint training: teacher rows " +
                                    std::to_string(teacherEmb.rows()) + " != n " +
                                    std::to_string(n));

    const Matrix multihot = encode_caption_batch(vocab, data);
    const std::size_t dImg = data[0].imageFeat.size();
    Matrix imageFeat(n, dImg);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dImg; ++j) imageFeat(i, j) = data[i].imageFeat[j];
    const Matrix targets = one_hot(labels);
    const std::size_t k = labels.k;
    const std::size_t dPrime = teacherEmb.cols();

    JointTrainResult res;
    std::vector<std::size_t> perm(n);
    for (int epoch = startEpoch; epoch < endEpoch; ++epoch) {
        Rng shuffleRng = Rng::derive(cfg.seeds.shuffle, static_cast<std::uint64_t>(epoch));
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = n - 1; i > 0; --i)
            std::swap(perm[i], perm[shuffleRng.index(i + 1)]);

        double sumEmb = 0.0, sumConc = 0.0, sumCont = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batchSize) {
            const std::size_t nb = std::min(cfg.batchSize, n - start);
            Matrix mh(nb, multihot.cols());
            Matrix img(nb, dImg);
            Matrix tb(nb, dPrime);
            Matrix tgt(nb, k);
            for (std::size_t r = 0; r < nb; ++r) {
                const std::size_t src = perm[start + r];
                std::copy(multihot.row(src), multihot.row(src) + multihot.cols(), mh.row(r));
                std::copy(imageFeat.row(src), imageFeat.row(src) + dImg, img.row(r));
                std::copy(teacherEmb.row(src), teacherEmb.row(src) + dPrime, tb.row(r));
                std::copy(targets.row(src), targets.row(src) + k, tgt.row(r));
            }

            adam.zero_grad();
            TwoLayerMlp::Cache textCache, imageCache;
            const Matrix textEmb = models.text.mlp.forward(mh, textCache);
            const Matrix imgEmb = models.image.mlp.forward(img, imageCache);
            Matrix dText(nb, textEmb.cols());
            Matrix dImg(nb, imgEmb.cols());

            auto ensure_finite = [&](double v, const char* component) {
                if (!std::isfinite(v))
                    throw std::runtime_error(
                        "joint training aborted: non-finite " + std::string(component) +
                        " loss at epoch " + std::to_string(epoch) + " batch " +
                        std::to_string(batches));
            };

            double embV = 0.0, concV = 0.0, contV = 0.0;
            if (cfg.enableEmb) {
                embV = loss_emb(textEmb, models.teacherProj, tb, cfg.embReduction,
                                cfg.alpha, &dText);
                ensure_finite(embV, "embedding");
            }
            if (cfg.enableConc) {
                const Matrix projImg = models.imageProj.project(imgEmb);
                const Matrix probs = models.classifier.classify(projImg);
                Matrix dProbs(nb, k);
                concV = loss_conc(probs, tgt, kProbClamp, cfg.concReduction, cfg.beta,
                                  &dProbs);
                ensure_finite(concV, "concept");
                const Matrix dLogits = softmax_backward_rows(probs, dProbs);
                const Matrix dProjImg =
                    models.classifier.backward_from_logits(projImg, dLogits);
                add_scaled(dImg, models.imageProj.backward(imgEmb, dProjImg), 1.0);
            }
            if (cfg.enableCont) {
                contV = loss_contrastive(textEmb, imgEmb, models.temperature, cfg.gamma,
                                         &dText, &dImg);
                ensure_finite(contV, "contrastive");
            }

            models.text.mlp.backward(textCache, dText);
            models.image.mlp.backward(imageCache, dImg);
            adam.step();

            sumEmb += embV;
            sumConc += concV;
            sumCont += contV;
            ++batches;
        }
        const double inv = 1.0 / static_cast<double>(batches);
        res.epochLosses.push_back(loss_total(sumEmb * inv, sumConc * inv, sumCont * inv,
                                             cfg.alpha, cfg.beta, cfg.gamma));
        ++res.epochsRun;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Reports

std::string TrainReport::to_json(const TrainConfig& cfg) const {
    json j;
    j["classifier_accuracy"] = classifierAccuracy;
    j["classifier_final_accuracy"] = classifierFinalAccuracy;
    j["config"] = config_json(cfg);
    json epochs = json::array();
    for (const LossBreakdown& b : epochLosses) epochs.push_back(breakdown_json(b));
    j["epoch_losses"] = epochs;
    j["kmeans"] = {{"inertia", kmeansInertia}, {"iterations", kmeansIterations}};
    j["params_checksum"] = hex_u64(paramsChecksum);
    j["wall_seconds"] = wallSeconds;
    return j.dump(2) + "\n";
}

void TrainReport::write_loss_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "epoch,emb,conc,cont,total\n";
    for (std::size_t i = 0; i < epochLosses.size(); ++i) {
        const LossBreakdown& b = epochLosses[i];
        f << i << "," << fmt_g17(b.emb) << "," << fmt_g17(b.conc) << ","
          << fmt_g17(b.cont) << "," << fmt_g17(b.total) << "\n";
    }
    if (!f) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Full run

TrainReport run_full_training(const TrainConfig& cfg, const AttributeSchema& schema,
                              const Vocabulary& vocab, const Dataset& data,
                              ModelSet& models, const std::string& checkpointDir,
                              ConceptStageResult* conceptOut) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();

    TeacherOptions topts;
    topts.dPrime = cfg.teacherDim;
    topts.sigmaT = cfg.sigmaT;
    topts.contentWeight = cfg.contentWeight;
    topts.degenerateContentWeight = cfg.degenerateContentWeight;
    topts.seed = cfg.seeds.teacher;
    topts.dominantFamily = cfg.dominantFamily;
    const auto teacher = make_teacher(cfg.teacher, schema, vocab, topts);
    const Matrix teacherEmb = teacher->embed(data);
    if (teacherEmb.cols() != cfg.teacherDim)
        throw std::runtime_error("teacher dimension " + std::to_string(teacherEmb.cols()) +
                                 " does not match configured d_prime " +
                                 std::to_string(cfg.teacherDim));

    ConceptStageResult stage = run_concept_stage(cfg, teacherEmb, models);
    models.classifier.freeze();
    AdamOptimizer adam(models.params(), cfg.lr);
    JointTrainResult joint = run_joint_training(cfg, vocab, data, teacherEmb,
                                                stage.labels, models, adam, 0,
                                                cfg.epochs);

    TrainReport report;
    report.classifierAccuracy = stage.accuracy;
    report.classifierFinalAccuracy = stage.finalAccuracy;
    report.epochLosses = std::move(joint.epochLosses);
    report.kmeansInertia = stage.kmeans.inertia;
    report.kmeansIterations = stage.kmeans.iterations;
    report.paramsChecksum = models.checksum();
    report.wallSeconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!checkpointDir.empty())
        save_checkpoint(checkpointDir, models, adam, cfg, schema, stage.kmeans,
                        stage.labels, cfg.epochs);
    if (conceptOut) *conceptOut = std::move(stage);
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kCheckpointFormat = "kdclip-checkpoint-1";
}

void save_checkpoint(const std::string& dir, const ModelSet& models,
                     const AdamOptimizer& adam, const TrainConfig& cfg,
                     const AttributeSchema& schema, const KMeansModel& kmeans,
                     const SoftConceptLabels& labels, int epochsCompleted) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto params = models.params();
    if (adam.size() != params.size())
        throw std::logic_error("save_checkpoint: optimizer tracks " +
                               std::to_string(adam.size()) + " params, model has " +
                               std::to_string(params.size()));

    save_schema(dir + "/schema.json", schema);
    {
        std::ofstream os(dir + "/params.bin", std::ios::binary);
        if (!os) throw std::runtime_error("save_checkpoint: cannot open " + dir +
                                          "/params.bin");
        for (const ParamTensor* p : params) write_matrix(os, p->value);
    }
    {
        std::ofstream os(dir + "/adam.bin", std::ios::binary);
        if (!os) throw std::runtime_error("save_checkpoint: cannot open " + dir +
                                          "/adam.bin");
        for (std::size_t i = 0; i < params.size(); ++i) {
            write_matrix(os, adam.moments1()[i]);
            write_matrix(os, adam.moments2()[i]);
        }
    }
    save_labels(dir + "/labels.txt", labels);
    save_matrix(dir + "/centroids.kdm", kmeans.centroids);

    json manifest;
    manifest["format"] = kCheckpointFormat;
    manifest["epochs_completed"] = epochsCompleted;
    manifest["adam_step"] = adam.step_count();
    manifest["config"] = config_json(cfg);
    json jp = json::array();
    for (const ParamTensor* p : params) {
        jp.push_back({{"name", p->name},
                      {"rows", p->value.rows()},
                      {"cols", p->value.cols()},
                      {"frozen", p->frozen}});
    }
    manifest["params"] = jp;
    manifest["kmeans"] = {{"k", kmeans.k},
                          {"inertia", kmeans.inertia},
                          {"iterations", kmeans.iterations},
                          {"seed", kmeans.seed}};
    manifest["files"] = {{"params", "params.bin"},
                         {"adam", "adam.bin"},
                         {"labels", "labels.txt"},
                         {"centroids", "centroids.kdm"},
                         {"schema", "schema.json"}};
    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw std::runtime_error("save_checkpoint: cannot open " + dir +
                                      "/manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw std::runtime_error("save_checkpoint: write failed for " + dir +
                                      "/manifest.json");
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    const std::string manifestPath = dir + "/manifest.json";
    json manifest;
    try {
        manifest = json::parse(read_file(manifestPath));
    } catch (const json::exception& e) {
        throw std::runtime_error("load_checkpoint: " + manifestPath + ": " + e.what());
    }
    if (manifest.value("format", "") != kCheckpointFormat)
        throw std::runtime_error("load_checkpoint: " + manifestPath +
                                 ": unknown format \"" +
                                 manifest.value("format", "") + "\"");

    LoadedCheckpoint out;
    out.cfg = config_from_json_object(manifest.at("config"), manifestPath);
    out.schema = load_schema(dir + "/schema.json");
    const Vocabulary vocab = Vocabulary::build(out.schema);
    out.models = std::make_unique<ModelSet>(out.cfg, vocab.size());

    const auto params = out.models->params();
    const json& jp = manifest.at("params");
    if (jp.size() != params.size())
        throw std::runtime_error("load_checkpoint: manifest lists " +
                                 std::to_string(jp.size()) + " params, model has " +
                                 std::to_string(params.size()));

    std::ifstream ps(dir + "/params.bin", std::ios::binary);
    if (!ps) throw std::runtime_error("load_checkpoint: cannot open " + dir +
                                      "/params.bin");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string name = jp[i].at("name").get<std::string>();
        if (name != params[i]->name)
            throw std::runtime_error("load_checkpoint: field \"" + name +
                                     "\": expected parameter \"" + params[i]->name +
                                     "\"");
        Matrix m = read_matrix(ps);
        if (m.rows() != jp[i].at("rows").get<std::size_t>() ||
            m.cols() != jp[i].at("cols").get<std::size_t>())
            throw std::runtime_error("load_checkpoint: field \"" + name +
                                     "\": stored block " + m.shape_str() +
                                     " does not match manifest");
        if (!m.same_shape(params[i]->value))
            throw std::runtime_error("load_checkpoint: field \"" + name + "\": shape " +
                                     m.shape_str() + " does not match model " +
                                     params[i]->value.shape_str());
        params[i]->value = std::move(m);
        params[i]->frozen = jp[i].at("frozen").get<bool>();
        params[i]->zero_grad();
    }

    std::ifstream as(dir + "/adam.bin", std::ios::binary);
    if (!as) throw std::runtime_error("load_checkpoint: cannot open " + dir +
                                      "/adam.bin");
    out.adamM.reserve(params.size());
    out.adamV.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix m = read_matrix(as);
        Matrix v = read_matrix(as);
        if (!m.same_shape(params[i]->value) || !v.same_shape(params[i]->value))
            throw std::runtime_error("load_checkpoint: optimizer moment shape for \"" +
                                     params[i]->name + "\" does not match model");
        out.adamM.push_back(std::move(m));
        out.adamV.push_back(std::move(v));
    }
    out.adamStep = manifest.at("adam_step").get<std::int64_t>();

    out.kmeans.centroids = load_matrix(dir + "/centroids.kdm");
    out.kmeans.k = manifest.at("kmeans").at("k").get<std::size_t>();
    out.kmeans.inertia = manifest.at("kmeans").at("inertia").get<double>();
    out.kmeans.iterations = manifest.at("kmeans").at("iterations").get<int>();
    out.kmeans.seed = manifest.at("kmeans").at("seed").get<std::uint64_t>();
    if (out.kmeans.centroids.rows() != out.kmeans.k)
        throw std::runtime_error("load_checkpoint: field \"centroids\": " +
                                 out.kmeans.centroids.shape_str() + " for k=" +
                                 std::to_string(out.kmeans.k));
    out.labels = load_labels(dir + "/labels.txt", out.kmeans.k);
    out.epochsCompleted = manifest.at("epochs_completed").get<int>();
    return out;
}

// ---------------------------------------------------------------------------
// Ablations

std::string AblationTable::to_json() const {
    json j;
    j["teacher_probe_exact_match"] = teacherProbeExactMatch;
    json r = json::array();
    for (const AblationRow& row : rows) {
        r.push_back({{"name", row.name},
                     {"final_loss", breakdown_json(row.finalLoss)},
                     {"probe_exact_match", row.probeExactMatch},
                     {"zero_shot_overall", row.zeroShotOverall},
                     {"zero_shot_per_family", row.zeroShotPerFamily}});
    }
    j["rows"] = r;
    return j.dump(2) + "\n";
}

AblationTable run_ablation_suite(const TrainConfig& cfg, const AttributeSchema& schema,
                                 const Vocabulary& vocab, const Dataset& data) {
    cfg.validate();
    TeacherOptions topts;
    topts.dPrime = cfg.teacherDim;
    topts.sigmaT = cfg.sigmaT;
    topts.contentWeight = cfg.contentWeight;
    topts.degenerateContentWeight = cfg.degenerateContentWeight;
    topts.seed = cfg.seeds.teacher;
    topts.dominantFamily = cfg.dominantFamily;
    const auto teacher = make_teacher(cfg.teacher, schema, vocab, topts);
    const Matrix teacherEmb = teacher->embed(data);

    const ProbeOptions popts{cfg.probeEpochs, cfg.probeLr, cfg.probeEvalFraction,
                             cfg.probeSeed};
    AblationTable table;
    table.teacherProbeExactMatch = probe_exact_match_for(teacherEmb, schema, data, popts);

    const Matrix multihot = encode_caption_batch(vocab, data);
    const PromptSpec prompt{prompt_style_from_string(cfg.promptStyle)};

    struct Variant {
        const char* name;
        bool emb, conc;
    };
    const Variant variants[] = {{"cont", false, false},
                                {"cont+emb", true, false},
                                {"cont+emb+conc", true, true}};
    for (const Variant& variant : variants) {
        TrainConfig c = cfg;
        c.enableCont = true;
        c.enableEmb = variant.emb;
        c.enableConc = variant.conc;

        ModelSet models(c, vocab.size());
        ConceptStageResult stage = run_concept_stage(c, teacherEmb, models);
        models.classifier.freeze();
        AdamOptimizer adam(models.params(), c.lr);
        JointTrainResult joint = run_joint_training(c, vocab, data, teacherEmb,
                                                    stage.labels, models, adam, 0,
                                                    c.epochs);

        AblationRow row;
        row.name = variant.name;
        if (!joint.epochLosses.empty()) row.finalLoss = joint.epochLosses.back();
        const Matrix studentText = models.text.mlp.forward(multihot);
        row.probeExactMatch = probe_exact_match_for(studentText, schema, data, popts);
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t f = 0; f < schema.families.size(); ++f) {
            if (f == schema.classFamily) continue;
            const double acc = zero_shot_attribute_eval(models.text, models.image, schema,
                                                        vocab, data, f, prompt);
            row.zeroShotPerFamily.push_back(acc);
            sum += acc;
            ++count;
        }
        row.zeroShotOverall = count == 0 ? 0.0 : sum / static_cast<double>(count);
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace kdclip
