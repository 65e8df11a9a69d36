#include "kdclip/models.hpp"

#include <cmath>
#include <stdexcept>

#include "kdclip/numerics.hpp"

namespace kdclip {

namespace {

Matrix init_weight(std::size_t fanIn, std::size_t fanOut, Rng& rng) {
    Matrix w(fanIn, fanOut);
    const double std = 1.0 / std::sqrt(static_cast<double>(fanIn));
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = std * rng.gaussian();
    return w;
}

}  // namespace

TwoLayerMlp::TwoLayerMlp(std::size_t inDim, std::size_t hidden, std::size_t outDim,
                         Rng& rng, const std::string& namePrefix)
    : w1(init_weight(inDim, hidden, rng), namePrefix + ".w1"),
      b1(Matrix(1, hidden), namePrefix + ".b1"),
      w2(init_weight(hidden, outDim, rng), namePrefix + ".w2"),
      b2(Matrix(1, outDim), namePrefix + ".b2") {}

Matrix TwoLayerMlp::forward(const Matrix& x) const {
    return affine_forward(tanh_map(affine_forward(x, w1, b1)), w2, b2);
}

Matrix TwoLayerMlp::forward(const Matrix& x, Cache& cache) const {
    cache.input = x;
    cache.hiddenAct = tanh_map(affine_forward(x, w1, b1));
    cache.output = affine_forward(cache.hiddenAct, w2, b2);
    return cache.output;
}

Matrix TwoLayerMlp::backward(const Cache& cache, const Matrix& dOut) {
    Matrix dHidden = affine_backward(cache.hiddenAct, w2, b2, dOut);
    Matrix dPre = tanh_backward(cache.hiddenAct, dHidden);
    return affine_backward(cache.input, w1, b1, dPre);
}

std::vector<ParamTensor*> TwoLayerMlp::params() { return {&w1, &b1, &w2, &b2}; }
std::vector<const ParamTensor*> TwoLayerMlp::params() const {
    return {&w1, &b1, &w2, &b2};
}

Matrix encode_text(const TextEncoder& e, const Matrix& multihotBatch) {
    if (multihotBatch.cols() != e.mlp.inDim())
        throw std::invalid_argument("encode_text: input dim " +
                                    multihotBatch.shape_str() + " != vocab size " +
                                    std::to_string(e.mlp.inDim()));
    return e.mlp.forward(multihotBatch);
}

Matrix encode_image(const ImageEncoder& e, const Matrix& imageFeatBatch) {
    if (imageFeatBatch.cols() != e.mlp.inDim())
        throw std::invalid_argument("encode_image: input dim " +
                                    imageFeatBatch.shape_str() + " != d_img " +
                                    std::to_string(e.mlp.inDim()));
    return e.mlp.forward(imageFeatBatch);
}

LinearProjector::LinearProjector(std::size_t inDim, std::size_t outDim, Rng& rng,
                                 const std::string& name)
    : weight(init_weight(inDim, outDim, rng), name) {}

Matrix LinearProjector::project(const Matrix& emb) const {
    if (emb.cols() != weight.value.rows())
        throw std::invalid_argument("project: emb " + emb.shape_str() +
                                    " incompatible with " + weight.value.shape_str());
    return matmul(emb, weight.value);
}

Matrix LinearProjector::backward(const Matrix& emb, const Matrix& dOut) {
    if (!weight.frozen) par::matmul_atb_acc(emb, dOut, 1.0, weight.grad);
    return par::matmul_abt(dOut, weight.value);
}

Classifier::Classifier(std::size_t inDim, std::size_t numClasses, Rng& rng)
    : w(init_weight(inDim, numClasses, rng), "classifier.w"),
      b(Matrix(1, numClasses), "classifier.b") {}

Matrix Classifier::logits(const Matrix& emb) const {
    if (emb.cols() != w.value.rows())
        throw std::invalid_argument("classify: emb " + emb.shape_str() +
                                    " incompatible with " + w.value.shape_str());
    return affine_forward(emb, w, b);
}

Matrix Classifier::classify(const Matrix& emb) const {
    return softmax_rows(logits(emb));
}

Matrix Classifier::backward_from_logits(const Matrix& emb, const Matrix& dLogits) {
    return affine_backward(emb, w, b, dLogits);
}

void Classifier::freeze() {
    w.frozen = true;
    b.frozen = true;
}

bool Classifier::is_frozen() const { return w.frozen && b.frozen; }

std::vector<ParamTensor*> Classifier::params() { return {&w, &b}; }
std::vector<const ParamTensor*> Classifier::params() const { return {&w, &b}; }

void freeze(Classifier& c) { c.freeze(); }
bool is_frozen(const Classifier& c) { return c.is_frozen(); }

std::uint64_t params_checksum(const std::vector<const ParamTensor*>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const ParamTensor* p : params) {
        const std::uint64_t c = checksum(p->value);
        const auto* bytes = reinterpret_cast<const unsigned char*>(&c);
        for (std::size_t i = 0; i < sizeof c; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace kdclip
