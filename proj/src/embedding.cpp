#include "selfheal/embedding.hpp"

#include <cmath>

#include "selfheal/text.hpp"

namespace selfheal::embedding {

EmbeddingVector embed(std::string_view normalized_text, std::size_t dim) {
    if (normalized_text.empty()) throw EmbeddingError("embed: empty text");
    if (dim == 0) throw EmbeddingError("embed: zero dimension");

    EmbeddingVector v;
    v.values.assign(dim, 0.0);

    auto bucket = [dim](std::string_view gram) {
        return static_cast<std::size_t>(text::fnv1a64(gram, text::kFnvOffset ^ kBucketSeed) % dim);
    };

    if (normalized_text.size() < 3) {
        v.values[bucket(normalized_text)] += 1.0;
    } else {
        for (std::size_t i = 0; i + 3 <= normalized_text.size(); ++i) {
            v.values[bucket(normalized_text.substr(i, 3))] += 1.0;
        }
    }

    double sq = 0.0;
    for (double x : v.values) sq += x * x;
    v.norm = std::sqrt(sq);
    if (v.norm > 0.0) {
        for (double& x : v.values) x /= v.norm;
    }
    return v;
}

double cosine_sim(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) throw EmbeddingError("cosine_sim: dimension mismatch");
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na <= 0.0 || nb <= 0.0) throw EmbeddingError("cosine_sim: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace selfheal::embedding
