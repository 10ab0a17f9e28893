#pragma once

#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace selfheal::embedding {

/// Default embedding dimension. Constant for the lifetime of a pipeline
/// instance; the knowledge base rejects vectors of a different size.
inline constexpr std::size_t kDefaultDim = 256;

/// Published hash seed for trigram bucketing. Changing it invalidates every
/// stored embedding, so it is part of the on-disk schema.
inline constexpr std::uint64_t kBucketSeed = 0x9E3779B97F4A7C15ull;

struct EmbeddingVector {
    std::vector<double> values;
    double norm = 0.0;  // L2 norm before normalization (cached)

    std::size_t dim() const { return values.size(); }
};

class EmbeddingError : public std::runtime_error {
public:
    explicit EmbeddingError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Hashed character-trigram term-frequency embedding of normalized text.
/// Each contiguous 3-char substring is hashed into one of `dim` buckets and
/// counted; the result is L2-normalized. Texts shorter than 3 chars
/// contribute the whole text as a single gram so non-empty input always
/// yields a unit vector. Deterministic across runs and platforms.
EmbeddingVector embed(std::string_view normalized_text, std::size_t dim = kDefaultDim);

/// Cosine similarity of two vectors. Throws EmbeddingError on dimension
/// mismatch or a zero vector. For the nonnegative TF vectors produced by
/// embed() the result lies in [0, 1].
double cosine_sim(const EmbeddingVector& a, const EmbeddingVector& b);

}  // namespace selfheal::embedding
