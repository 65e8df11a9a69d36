#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "kdclip/dataset.hpp"
#include "kdclip/matrix.hpp"

namespace kdclip {

// Source of fixed d'-dimensional caption embeddings. Embeddings are a pure
// function of (provider, caption) - per-caption noise is seeded from a hash
// of the caption, so repeated and permuted calls are reproducible.
class TeacherProvider {
  public:
    virtual ~TeacherProvider() = default;
    virtual std::size_t dim() const = 0;
    virtual void embed_row(const CaptionImagePair& pair, double* out) const = 0;

    // n x d' matrix, row per pair; parallel over pairs.
    Matrix embed(const Dataset& pairs) const;
};

// d' split into one block per family plus a content block (the remainder).
// Each family block carries a unit-gaussian signature of the pair's value;
// the content block carries a fixed random projection of the caption
// multihot, scaled by contentWeight; additive N(0, sigmaT) noise on top.
class StructuredOracleTeacher : public TeacherProvider {
  public:
    StructuredOracleTeacher(const AttributeSchema& schema, const Vocabulary& vocab,
                            std::size_t dPrime, double sigmaT, double contentWeight,
                            std::uint64_t seed);

    std::size_t dim() const override { return dPrime_; }
    void embed_row(const CaptionImagePair& pair, double* out) const override;

    std::size_t attrBlockDim() const { return attrBlock_; }
    std::size_t contentDim() const { return contentDim_; }

  protected:
    AttributeSchema schema_;
    Vocabulary vocab_;
    std::size_t dPrime_;
    double sigmaT_;
    double contentWeight_;
    std::uint64_t seed_;
    std::size_t attrBlock_;
    std::size_t contentDim_;
    std::vector<Matrix> signatures_;  // per family: values x attrBlock
    Matrix contentMap_;               // contentDim x |V|

    void add_content_and_noise(const CaptionImagePair& pair, double* out) const;
};

// Weak baseline: only the dominant family's block is populated (plus the
// optional content block); every other family block stays zero.
class DegenerateTeacher : public StructuredOracleTeacher {
  public:
    DegenerateTeacher(const AttributeSchema& schema, const Vocabulary& vocab,
                      std::size_t dPrime, double sigmaT, double contentWeight,
                      std::size_t dominantFamily, std::uint64_t seed);

    void embed_row(const CaptionImagePair& pair, double* out) const override;

  private:
    std::size_t dominantFamily_;
};

// Row lookup by pair id into an externally produced embedding matrix.
class FileBackedTeacher : public TeacherProvider {
  public:
    FileBackedTeacher(Matrix embeddings, const std::vector<std::int64_t>& ids);

    // Reads the matrix binary plus a sidecar id list (one integer per line).
    static FileBackedTeacher from_files(const std::string& matrixPath,
                                        const std::string& idsPath);

    std::size_t dim() const override { return embeddings_.cols(); }
    void embed_row(const CaptionImagePair& pair, double* out) const override;

  private:
    Matrix embeddings_;
    std::unordered_map<std::int64_t, std::size_t> rowById_;
};

struct TeacherOptions {
    std::size_t dPrime = 128;
    double sigmaT = 0.05;
    double contentWeight = 1.0;            // structured oracle default
    double degenerateContentWeight = 0.0;  // degenerate default: blocks only
    std::uint64_t seed = 5;
    std::string dominantFamily;  // empty = class family
};

// Builds a provider from a CLI-style spec: "oracle", "degenerate", or
// "file:PATH" (expects PATH plus PATH.ids).
std::unique_ptr<TeacherProvider> make_teacher(const std::string& spec,
                                              const AttributeSchema& schema,
                                              const Vocabulary& vocab,
                                              const TeacherOptions& opts);

}  // namespace kdclip
