#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kdclip/matrix.hpp"

namespace kdclip {

struct AttributeFamily {
    std::string name;
    std::vector<std::string> values;
};

// Compositional attribute space. One family is the designated class family
// (its values act as class labels in prompts and analyses).
struct AttributeSchema {
    std::vector<AttributeFamily> families;
    std::size_t classFamily = 0;
    std::size_t dimImage = 32;

    void validate() const;  // >=2 families, >=2 values each, unique names
    std::size_t familyIndex(const std::string& name) const;  // throws if unknown
};

// Built-in lexicon: nFamilies-1 attribute families plus a class family
// (always last). Falls back to synthesized names past the lexicon.
AttributeSchema default_schema(std::size_t nFamilies, std::size_t nValues,
                               std::size_t dimImage = 32);

void save_schema(const std::string& path, const AttributeSchema& schema);
AttributeSchema load_schema(const std::string& path);

// One value index per family, in family order.
using ConceptTuple = std::vector<std::uint32_t>;

// Mixed-radix code of a concept tuple (stable point identity for stats).
std::size_t concept_code(const AttributeSchema& schema, const ConceptTuple& t);
std::size_t num_concept_codes(const AttributeSchema& schema);

struct CaptionImagePair {
    std::int64_t id = 0;
    std::vector<std::string> caption;
    std::vector<double> imageFeat;
    ConceptTuple tuple;

    bool operator==(const CaptionImagePair&) const = default;
};

using Dataset = std::vector<CaptionImagePair>;

// Token list with a stable order: prompt scaffold words, family names,
// then every family's values. Built deterministically from the schema so
// it never needs to be persisted separately.
class Vocabulary {
  public:
    static Vocabulary build(const AttributeSchema& schema);
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    std::size_t at(const std::string& token) const;  // throws naming the token
    bool contains(const std::string& token) const;

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Caption template: "a <v_1> ... <v_F>", one slot per family in order.
std::vector<std::string> concept_to_caption(const AttributeSchema& schema,
                                            const ConceptTuple& t);

// Concepts uniform at random; image = sum of per-value signature vectors
// (unit gaussian, drawn once per schema from the seed) + N(0, sigmaImage)
// noise. Fully deterministic given (schema, n, sigmaImage, seed).
Dataset generate_dataset(const AttributeSchema& schema, std::size_t n,
                         double sigmaImage, std::uint64_t seed);

// The per-value image signatures for a given seed (families concatenated,
// row per (family, value) in schema order). Exposed for tests.
Matrix image_signatures(const AttributeSchema& schema, std::uint64_t seed);

// Binary presence vector over the vocabulary.
std::vector<double> encode_caption_multihot(const Vocabulary& v,
                                            const std::vector<std::string>& caption);

// n x |V| multihot matrix for a batch of pairs.
Matrix encode_caption_batch(const Vocabulary& v, const Dataset& pairs);

// One JSON record per line: id, caption (space-joined), concept, image_feat.
void save_jsonl(const std::string& path, const Dataset& dataset);
Dataset load_jsonl(const std::string& path);

// Conventional sidecar path for the schema of a .jsonl dataset.
std::string schema_sidecar_path(const std::string& datasetPath);

}  // namespace kdclip
