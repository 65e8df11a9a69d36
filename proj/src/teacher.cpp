#include "kdclip/teacher.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "kdclip/rng.hpp"

namespace kdclip {

namespace {

constexpr std::uint64_t kStreamBlockSignatures = 0x71;
constexpr std::uint64_t kStreamContentMap = 0x72;
constexpr std::uint64_t kStreamCaptionNoise = 0x73;

std::string join_caption(const std::vector<std::string>& caption) {
    std::string out;
    for (std::size_t i = 0; i < caption.size(); ++i) {
        if (i > 0) out += ' ';
        out += caption[i];
    }
    return out;
}

}  // namespace

Matrix TeacherProvider::embed(const Dataset& pairs) const {
    Matrix out(pairs.size(), dim());
    const auto n = static_cast<std::int64_t>(pairs.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) embed_row(pairs[i], out.row(i));
    return out;
}

StructuredOracleTeacher::StructuredOracleTeacher(const AttributeSchema& schema,
                                                 const Vocabulary& vocab,
                                                 std::size_t dPrime, double sigmaT,
                                                 double contentWeight,
                                                 std::uint64_t seed)
    : schema_(schema),
      vocab_(vocab),
      dPrime_(dPrime),
      sigmaT_(sigmaT),
      contentWeight_(contentWeight),
      seed_(seed) {
    schema_.validate();
    const std::size_t nFamilies = schema_.families.size();
    if (dPrime_ < nFamilies + 1)
        throw std::invalid_argument("teacher: dPrime must be at least families+1");
    attrBlock_ = dPrime_ / (nFamilies + 1);
    contentDim_ = dPrime_ - nFamilies * attrBlock_;

    Rng sigRng = Rng::derive(seed_, kStreamBlockSignatures);
    signatures_.reserve(nFamilies);
    for (const auto& fam : schema_.families) {
        Matrix m(fam.values.size(), attrBlock_);
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = sigRng.gaussian();
        signatures_.push_back(std::move(m));
    }

    Rng mapRng = Rng::derive(seed_, kStreamContentMap);
    contentMap_ = Matrix(contentDim_, vocab_.size());
    for (std::size_t i = 0; i < contentMap_.size(); ++i)
        contentMap_.data()[i] = mapRng.gaussian();
}

void StructuredOracleTeacher::add_content_and_noise(const CaptionImagePair& pair,
                                                    double* out) const {
    const std::size_t contentOff = schema_.families.size() * attrBlock_;
    if (contentWeight_ != 0.0) {
        // contentMap * multihot, scaled by 1/sqrt(tokens) to keep the block O(1).
        std::vector<std::size_t> present;
        present.reserve(pair.caption.size());
        for (const auto& tok : pair.caption) present.push_back(vocab_.at(tok));
        const double scale =
            contentWeight_ / std::sqrt(static_cast<double>(std::max<std::size_t>(1, present.size())));
        for (std::size_t j = 0; j < contentDim_; ++j) {
            double acc = 0.0;
            const double* mrow = contentMap_.row(j);
            for (std::size_t tok : present) acc += mrow[tok];
            out[contentOff + j] = acc * scale;
        }
    }
    if (sigmaT_ > 0.0) {
        Rng noise(splitmix64(seed_ ^ fnv1a64(join_caption(pair.caption)) ^
                             kStreamCaptionNoise));
        for (std::size_t j = 0; j < dPrime_; ++j) out[j] += sigmaT_ * noise.gaussian();
    }
}

void StructuredOracleTeacher::embed_row(const CaptionImagePair& pair,
                                        double* out) const {
    for (std::size_t j = 0; j < dPrime_; ++j) out[j] = 0.0;
    if (pair.tuple.size() != schema_.families.size())
        throw std::invalid_argument("teacher: concept arity mismatch");
    for (std::size_t f = 0; f < schema_.families.size(); ++f) {
        const double* s = signatures_[f].row(pair.tuple[f]);
        double* block = out + f * attrBlock_;
        for (std::size_t j = 0; j < attrBlock_; ++j) block[j] = s[j];
    }
    add_content_and_noise(pair, out);
}

DegenerateTeacher::DegenerateTeacher(const AttributeSchema& schema,
                                     const Vocabulary& vocab, std::size_t dPrime,
                                     double sigmaT, double contentWeight,
                                     std::size_t dominantFamily, std::uint64_t seed)
    : StructuredOracleTeacher(schema, vocab, dPrime, sigmaT, contentWeight, seed),
      dominantFamily_(dominantFamily) {
    if (dominantFamily_ >= schema_.families.size())
        throw std::invalid_argument("teacher: dominant family out of range");
}

void DegenerateTeacher::embed_row(const CaptionImagePair& pair, double* out) const {
    for (std::size_t j = 0; j < dPrime_; ++j) out[j] = 0.0;
    if (pair.tuple.size() != schema_.families.size())
        throw std::invalid_argument("teacher: concept arity mismatch");
    const double* s = signatures_[dominantFamily_].row(pair.tuple[dominantFamily_]);
    double* block = out + dominantFamily_ * attrBlock_;
    for (std::size_t j = 0; j < attrBlock_; ++j) block[j] = s[j];
    add_content_and_noise(pair, out);
}

FileBackedTeacher::FileBackedTeacher(Matrix embeddings,
                                     const std::vector<std::int64_t>& ids)
    : embeddings_(std::move(embeddings)) {
    if (ids.size() != embeddings_.rows())
        throw std::invalid_argument("file teacher: id count " +
                                    std::to_string(ids.size()) + " != rows " +
                                    std::to_string(embeddings_.rows()));
    for (std::size_t i = 0; i < ids.size(); ++i) rowById_[ids[i]] = i;
}

FileBackedTeacher FileBackedTeacher::from_files(const std::string& matrixPath,
                                                const std::string& idsPath) {
    Matrix m = load_matrix(matrixPath);
    std::ifstream f(idsPath);
    if (!f) throw std::runtime_error("file teacher: cannot open " + idsPath);
    std::vector<std::int64_t> ids;
    std::int64_t id = 0;
    while (f >> id) ids.push_back(id);
    return FileBackedTeacher(std::move(m), ids);
}

void FileBackedTeacher::embed_row(const CaptionImagePair& pair, double* out) const {
    auto it = rowById_.find(pair.id);
    if (it == rowById_.end())
        throw std::runtime_error("file teacher: missing id " + std::to_string(pair.id));
    const double* src = embeddings_.row(it->second);
    for (std::size_t j = 0; j < embeddings_.cols(); ++j) out[j] = src[j];
}

std::unique_ptr<TeacherProvider> make_teacher(const std::string& spec,
                                              const AttributeSchema& schema,
                                              const Vocabulary& vocab,
                                              const TeacherOptions& opts) {
    if (spec == "oracle") {
        return std::make_unique<StructuredOracleTeacher>(
            schema, vocab, opts.dPrime, opts.sigmaT, opts.contentWeight, opts.seed);
    }
    if (spec == "degenerate") {
        const std::size_t dominant = opts.dominantFamily.empty()
                                         ? schema.classFamily
                                         : schema.familyIndex(opts.dominantFamily);
        return std::make_unique<DegenerateTeacher>(
            schema, vocab, opts.dPrime, opts.sigmaT, opts.degenerateContentWeight,
            dominant, opts.seed);
    }
    if (spec.rfind("file:", 0) == 0) {
        const std::string path = spec.substr(5);
        return std::make_unique<FileBackedTeacher>(
            FileBackedTeacher::from_files(path, path + ".ids"));
    }
    throw std::invalid_argument("unknown teacher spec '" + spec +
                                "' (expected oracle, degenerate, or file:PATH)");
}

}  // namespace kdclip
