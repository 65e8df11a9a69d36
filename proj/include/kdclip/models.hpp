#pragma once

#include <cstdint>
#include <vector>

#include "kdclip/matrix.hpp"
#include "kdclip/rng.hpp"

namespace kdclip {

// Two affine layers with tanh between. Weights ~ N(0, 1/sqrt(fan_in)),
// biases zero, seeded.
class TwoLayerMlp {
  public:
    TwoLayerMlp(std::size_t inDim, std::size_t hidden, std::size_t outDim,
                Rng& rng, const std::string& namePrefix);

    struct Cache {
        Matrix input;
        Matrix hiddenAct;  // tanh output
        Matrix output;
    };

    Matrix forward(const Matrix& x) const;
    Matrix forward(const Matrix& x, Cache& cache) const;

    // Accumulates parameter grads (unless frozen) and returns dInput.
    Matrix backward(const Cache& cache, const Matrix& dOut);

    std::vector<ParamTensor*> params();
    std::vector<const ParamTensor*> params() const;

    std::size_t inDim() const { return w1.value.rows(); }
    std::size_t outDim() const { return w2.value.cols(); }

    ParamTensor w1, b1, w2, b2;
};

struct TextEncoder {
    TextEncoder(std::size_t vocabSize, std::size_t hidden, std::size_t outDim, Rng& rng)
        : mlp(vocabSize, hidden, outDim, rng, "text_encoder") {}
    TwoLayerMlp mlp;
};

struct ImageEncoder {
    ImageEncoder(std::size_t dimImage, std::size_t hidden, std::size_t outDim, Rng& rng)
        : mlp(dimImage, hidden, outDim, rng, "image_encoder") {}
    TwoLayerMlp mlp;
};

Matrix encode_text(const TextEncoder& e, const Matrix& multihotBatch);
Matrix encode_image(const ImageEncoder& e, const Matrix& imageFeatBatch);

// Learnable linear map between embedding spaces (no bias).
class LinearProjector {
  public:
    LinearProjector(std::size_t inDim, std::size_t outDim, Rng& rng,
                    const std::string& name);

    Matrix project(const Matrix& emb) const;
    // Accumulates weight.grad += emb^T dOut (unless frozen), returns dEmb.
    Matrix backward(const Matrix& emb, const Matrix& dOut);

    ParamTensor weight;  // inDim x outDim
};

// One affine layer followed by row softmax; supports freezing.
class Classifier {
  public:
    Classifier(std::size_t inDim, std::size_t numClasses, Rng& rng);

    Matrix classify(const Matrix& emb) const;  // probability rows
    Matrix logits(const Matrix& emb) const;
    // Propagates dLogits to the input; param grads accumulate unless frozen.
    Matrix backward_from_logits(const Matrix& emb, const Matrix& dLogits);

    void freeze();
    bool is_frozen() const;
    std::size_t numClasses() const { return w.value.cols(); }

    std::vector<ParamTensor*> params();
    std::vector<const ParamTensor*> params() const;

    ParamTensor w, b;
};

void freeze(Classifier& c);
bool is_frozen(const Classifier& c);

// Bit-exact checksum over every parameter value of a module, in order.
std::uint64_t params_checksum(const std::vector<const ParamTensor*>& params);

}  // namespace kdclip
