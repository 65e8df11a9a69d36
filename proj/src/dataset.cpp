#include "kdclip/dataset.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "kdclip/rng.hpp"

namespace kdclip {

using nlohmann::json;

namespace {

// Seed streams within a dataset seed.
constexpr std::uint64_t kStreamSignatures = 0x51;
constexpr std::uint64_t kStreamConcepts = 0x52;
constexpr std::uint64_t kStreamNoise = 0x53;

const std::vector<std::string> kScaffoldTokens = {"a",    "photo",    "of",
                                                  "that", "with",     "attribute"};

struct Lexeme {
    const char* family;
    std::vector<const char*> values;
};

const std::vector<Lexeme> kAttributeLexicon = {
    {"color", {"red", "blue", "green", "yellow", "orange", "purple", "black", "white",
               "pink", "brown", "gray", "teal"}},
    {"shape", {"square", "round", "triangular", "star", "hexagonal", "oval", "flat",
               "curved", "spiky", "twisted", "braided", "forked"}},
    {"texture", {"smooth", "rough", "striped", "dotted", "glossy", "matte", "furry",
                 "shiny", "woolly", "scaly", "ridged", "bumpy"}},
    {"size", {"tiny", "small", "large", "huge", "giant", "mini", "slim", "wide",
              "tall", "short", "narrow", "broad"}},
    {"material", {"wooden", "metal", "plastic", "glass", "stone", "paper", "cloth",
                  "rubber", "clay", "wax", "leather", "ceramic"}},
};

const Lexeme kClassLexicon = {"animal", {"cat", "dog", "bird", "fish", "horse", "frog",
                                         "bear", "mouse", "deer", "fox", "wolf", "owl"}};

std::vector<std::string> family_values(const Lexeme& lex, const std::string& name,
                                       std::size_t count) {
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (i < lex.values.size())
            out.emplace_back(lex.values[i]);
        else
            out.push_back(name + std::to_string(i));
    }
    return out;
}

}  // namespace

void AttributeSchema::validate() const {
    if (families.size() < 2)
        throw std::invalid_argument("schema: need at least 2 families");
    if (classFamily >= families.size())
        throw std::invalid_argument("schema: classFamily out of range");
    if (dimImage == 0) throw std::invalid_argument("schema: dimImage must be > 0");
    for (const auto& fam : families) {
        if (fam.values.size() < 2)
            throw std::invalid_argument("schema: family '" + fam.name +
                                        "' needs at least 2 values");
        std::set<std::string> seen(fam.values.begin(), fam.values.end());
        if (seen.size() != fam.values.size())
            throw std::invalid_argument("schema: duplicate value in family '" +
                                        fam.name + "'");
    }
    std::set<std::string> famNames;
    for (const auto& fam : families) famNames.insert(fam.name);
    if (famNames.size() != families.size())
        throw std::invalid_argument("schema: duplicate family name");
}

std::size_t AttributeSchema::familyIndex(const std::string& name) const {
    for (std::size_t f = 0; f < families.size(); ++f)
        if (families[f].name == name) return f;
    throw std::invalid_argument("schema: unknown family '" + name + "'");
}

AttributeSchema default_schema(std::size_t nFamilies, std::size_t nValues,
                               std::size_t dimImage) {
    if (nFamilies < 2)
        throw std::invalid_argument("default_schema: need at least 2 families");
    AttributeSchema schema;
    schema.dimImage = dimImage;
    for (std::size_t f = 0; f + 1 < nFamilies; ++f) {
        std::string name = f < kAttributeLexicon.size()
                               ? kAttributeLexicon[f].family
                               : "attr" + std::to_string(f);
        const Lexeme& lex =
            f < kAttributeLexicon.size() ? kAttributeLexicon[f] : Lexeme{"", {}};
        schema.families.push_back({name, family_values(lex, name, nValues)});
    }
    schema.families.push_back(
        {kClassLexicon.family, family_values(kClassLexicon, kClassLexicon.family, nValues)});
    schema.classFamily = schema.families.size() - 1;
    schema.validate();
    return schema;
}

void save_schema(const std::string& path, const AttributeSchema& schema) {
    json j;
    j["class_family"] = schema.classFamily;
    j["dim_image"] = schema.dimImage;
    j["families"] = json::array();
    for (const auto& fam : schema.families)
        j["families"].push_back({{"name", fam.name}, {"values", fam.values}});
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_schema: cannot open " + path);
    f << j.dump(2) << "\n";
}

AttributeSchema load_schema(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_schema: cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("load_schema: parse error in " + path + ": " + e.what());
    }
    AttributeSchema schema;
    schema.classFamily = j.at("class_family").get<std::size_t>();
    schema.dimImage = j.at("dim_image").get<std::size_t>();
    for (const auto& fam : j.at("families")) {
        schema.families.push_back({fam.at("name").get<std::string>(),
                                   fam.at("values").get<std::vector<std::string>>()});
    }
    schema.validate();
    return schema;
}

std::size_t concept_code(const AttributeSchema& schema, const ConceptTuple& t) {
    if (t.size() != schema.families.size())
        throw std::invalid_argument("concept_code: tuple arity mismatch");
    std::size_t code = 0;
    for (std::size_t f = 0; f < t.size(); ++f) {
        if (t[f] >= schema.families[f].values.size())
            throw std::invalid_argument("concept_code: value index out of range in '" +
                                        schema.families[f].name + "'");
        code = code * schema.families[f].values.size() + t[f];
    }
    return code;
}

std::size_t num_concept_codes(const AttributeSchema& schema) {
    std::size_t n = 1;
    for (const auto& fam : schema.families) n *= fam.values.size();
    return n;
}

Vocabulary Vocabulary::build(const AttributeSchema& schema) {
    std::vector<std::string> tokens = kScaffoldTokens;
    for (const auto& fam : schema.families) tokens.push_back(fam.name);
    for (const auto& fam : schema.families)
        for (const auto& v : fam.values) tokens.push_back(v);
    return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        if (!v.index_.emplace(v.tokens_[i], i).second)
            throw std::invalid_argument("vocabulary: duplicate token '" + v.tokens_[i] + "'");
    }
    return v;
}

std::size_t Vocabulary::at(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end())
        throw std::invalid_argument("vocabulary: unknown token '" + token + "'");
    return it->second;
}

bool Vocabulary::contains(const std::string& token) const {
    return index_.count(token) > 0;
}

std::vector<std::string> concept_to_caption(const AttributeSchema& schema,
                                            const ConceptTuple& t) {
    std::vector<std::string> caption;
    caption.reserve(schema.families.size() + 1);
    caption.emplace_back("a");
    for (std::size_t f = 0; f < schema.families.size(); ++f)
        caption.push_back(schema.families[f].values.at(t[f]));
    return caption;
}

Matrix image_signatures(const AttributeSchema& schema, std::uint64_t seed) {
    std::size_t totalValues = 0;
    for (const auto& fam : schema.families) totalValues += fam.values.size();
    Matrix sig(totalValues, schema.dimImage);
    Rng rng = Rng::derive(seed, kStreamSignatures);
    for (std::size_t i = 0; i < sig.size(); ++i) sig.data()[i] = rng.gaussian();
    return sig;
}

Dataset generate_dataset(const AttributeSchema& schema, std::size_t n,
                         double sigmaImage, std::uint64_t seed) {
    schema.validate();
    if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
    if (sigmaImage < 0)
        throw std::invalid_argument("generate_dataset: sigmaImage must be >= 0");

    const Matrix sig = image_signatures(schema, seed);
    std::vector<std::size_t> famOffset(schema.families.size(), 0);
    for (std::size_t f = 1; f < schema.families.size(); ++f)
        famOffset[f] = famOffset[f - 1] + schema.families[f - 1].values.size();

    Rng conceptRng = Rng::derive(seed, kStreamConcepts);
    Rng noiseRng = Rng::derive(seed, kStreamNoise);

    Dataset out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        CaptionImagePair pair;
        pair.id = static_cast<std::int64_t>(i);
        pair.tuple.resize(schema.families.size());
        for (std::size_t f = 0; f < schema.families.size(); ++f)
            pair.tuple[f] = static_cast<std::uint32_t>(
                conceptRng.index(schema.families[f].values.size()));
        pair.caption = concept_to_caption(schema, pair.tuple);
        pair.imageFeat.assign(schema.dimImage, 0.0);
        for (std::size_t f = 0; f < schema.families.size(); ++f) {
            const double* s = sig.row(famOffset[f] + pair.tuple[f]);
            for (std::size_t j = 0; j < schema.dimImage; ++j) pair.imageFeat[j] += s[j];
        }
        for (std::size_t j = 0; j < schema.dimImage; ++j)
            pair.imageFeat[j] += sigmaImage * noiseRng.gaussian();
        out.push_back(std::move(pair));
    }
    return out;
}

std::vector<double> encode_caption_multihot(const Vocabulary& v,
                                            const std::vector<std::string>& caption) {
    std::vector<double> out(v.size(), 0.0);
    for (const auto& tok : caption) out[v.at(tok)] = 1.0;
    return out;
}

Matrix encode_caption_batch(const Vocabulary& v, const Dataset& pairs) {
    Matrix out(pairs.size(), v.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        for (const auto& tok : pairs[i].caption) out(i, v.at(tok)) = 1.0;
    }
    return out;
}

void save_jsonl(const std::string& path, const Dataset& dataset) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_jsonl: cannot open " + path);
    for (const auto& pair : dataset) {
        std::string joined;
        for (std::size_t t = 0; t < pair.caption.size(); ++t) {
            if (t > 0) joined += ' ';
            joined += pair.caption[t];
        }
        json j;
        j["id"] = pair.id;
        j["caption"] = joined;
        j["concept"] = pair.tuple;
        j["image_feat"] = pair.imageFeat;
        f << j.dump() << "\n";
    }
    if (!f) throw std::runtime_error("save_jsonl: write failed for " + path);
}

Dataset load_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_jsonl: cannot open " + path);
    Dataset out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("load_jsonl: parse error at line " +
                                     std::to_string(lineno) + " of " + path + ": " +
                                     e.what());
        }
        try {
            CaptionImagePair pair;
            pair.id = j.at("id").get<std::int64_t>();
            std::istringstream caption(j.at("caption").get<std::string>());
            std::string tok;
            while (caption >> tok) pair.caption.push_back(tok);
            pair.tuple = j.at("concept").get<ConceptTuple>();
            pair.imageFeat = j.at("image_feat").get<std::vector<double>>();
            out.push_back(std::move(pair));
        } catch (const json::exception& e) {
            throw std::runtime_error("load_jsonl: bad record at line " +
                                     std::to_string(lineno) + " of " + path + ": " +
                                     e.what());
        }
    }
    return out;
}

std::string schema_sidecar_path(const std::string& datasetPath) {
    const auto dot = datasetPath.rfind('.');
    const std::string stem =
        dot == std::string::npos ? datasetPath : datasetPath.substr(0, dot);
    return stem + ".schema.json";
}

}  // namespace kdclip
