#pragma once

// Cross-attention between latent cells and text tokens.
//
// Queries come from the latent (average-pooled to the 16x16 attention grid),
// keys from the text features. Every spatial cell owns a distribution over the
// N+1 tokens; the start token is always index 0.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "instmask/error.hpp"
#include "instmask/numerics.hpp"
#include "instmask/rng.hpp"
#include "instmask/schedule.hpp"

namespace instmask {

inline constexpr std::size_t kAttentionSize = 16;
inline constexpr std::string_view kStartToken = "<|startoftext|>";

struct TokenSequence {
    std::vector<std::string> words;  // content tokens, start excluded

    TokenSequence() = default;
    explicit TokenSequence(std::vector<std::string> w) : words(std::move(w)) {}

    // Whitespace tokenizer.
    static TokenSequence parse(std::string_view text)
    {
        TokenSequence seq;
        std::istringstream in{std::string(text)};
        for (std::string w; in >> w;)
            seq.words.push_back(w);
        return seq;
    }

    std::size_t content_count() const { return words.size(); }
    std::size_t size() const { return words.size() + 1; }

    // Token strings including the start token at index 0.
    std::vector<std::string> with_start() const
    {
        std::vector<std::string> out;
        out.reserve(size());
        out.emplace_back(kStartToken);
        out.insert(out.end(), words.begin(), words.end());
        return out;
    }

    std::uint64_t id(std::size_t content_index) const { return fnv1a(words.at(content_index)); }
};

// (N+1) x dim feature rows; row 0 is the start token.
struct TextFeatures {
    Matrix vectors;

    std::size_t tokens() const { return vectors.rows; }
    std::size_t dim() const { return vectors.cols; }
};

// Deterministic stand-in for the text encoder. Content rows are seeded per
// token id; the start row is the content mean plus a fixed offset.
inline TextFeatures encode_text(const TokenSequence& tokens, std::size_t d_k, std::uint64_t seed)
{
    if (tokens.content_count() == 0)
        throw ConfigError("encode_text: token sequence has no content tokens");
    if (d_k == 0)
        throw ConfigError("encode_text: feature dimension must be positive");
    const std::size_t n = tokens.content_count();
    TextFeatures f{Matrix(n + 1, d_k)};
    for (std::size_t i = 0; i < n; ++i) {
        NormalStream rng(seed, Stream::text_embedding, tokens.id(i));
        for (std::size_t k = 0; k < d_k; ++k)
            f.vectors(i + 1, k) = rng.next();
    }
    NormalStream offset(seed, Stream::text_embedding, fnv1a(kStartToken));
    for (std::size_t k = 0; k < d_k; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            mean += f.vectors(i + 1, k);
        f.vectors(0, k) = mean / static_cast<double>(n) + offset.next();
    }
    return f;
}

// Frozen query/key/value maps. Each weight is (heads*d_k) x input_dim.
struct ProjectionSet {
    std::size_t heads = 0;
    std::size_t d_k = 0;
    std::size_t latent_dim = 0;
    std::size_t text_dim = 0;
    Matrix w_q;
    Matrix w_k;
    Matrix w_v;

    static ProjectionSet make(std::size_t latent_dim, std::size_t text_dim, std::size_t d_k, std::size_t heads,
                              std::uint64_t seed)
    {
        if (latent_dim == 0 || text_dim == 0 || d_k == 0 || heads == 0)
            throw ConfigError("ProjectionSet: all dimensions must be positive");
        ProjectionSet p{heads, d_k, latent_dim, text_dim, Matrix(heads * d_k, latent_dim),
                        Matrix(heads * d_k, text_dim), Matrix(heads * d_k, text_dim)};
        auto fill = [](Matrix& m, NormalStream rng, double scale) {
            for (double& v : m.values)
                v = rng.next() * scale;
        };
        fill(p.w_q, NormalStream(seed, Stream::projections, 0), 1.0 / std::sqrt(static_cast<double>(latent_dim)));
        fill(p.w_k, NormalStream(seed, Stream::projections, 1), 1.0 / std::sqrt(static_cast<double>(text_dim)));
        fill(p.w_v, NormalStream(seed, Stream::projections, 2), 1.0 / std::sqrt(static_cast<double>(text_dim)));
        return p;
    }
};

struct AttentionStack {
    std::vector<Grid2D> maps;  // one per token, index 0 = start
    std::size_t timestep = 0;
    std::size_t round = 0;

    std::size_t tokens() const { return maps.size(); }
    std::size_t height() const { return maps.empty() ? 0 : maps.front().height; }
    std::size_t width() const { return maps.empty() ? 0 : maps.front().width; }

    // Largest deviation of a per-cell token sum from 1.
    double stochastic_error() const
    {
        double worst = 0.0;
        for (std::size_t c = 0; c < height() * width(); ++c) {
            double s = 0.0;
            for (const Grid2D& m : maps)
                s += m.values[c];
            worst = std::max(worst, std::abs(s - 1.0));
        }
        return worst;
    }

    void validate_shape() const
    {
        if (maps.empty())
            throw ShapeError("AttentionStack: no maps");
        for (const Grid2D& m : maps)
            if (!m.same_shape(maps.front()))
                throw ShapeError("AttentionStack: maps differ in shape");
    }

    bool operator==(const AttentionStack&) const = default;
};

// Reshapes a (cells x tokens) probability matrix into per-token grids.
inline AttentionStack stack_from_probs(const Matrix& probs, std::size_t h, std::size_t w, std::size_t timestep,
                                       std::size_t round = 0)
{
    if (probs.rows != h * w)
        throw ShapeError("stack_from_probs: row count does not match grid size");
    AttentionStack s;
    s.timestep = timestep;
    s.round = round;
    s.maps.assign(probs.cols, Grid2D(h, w));
    for (std::size_t cell = 0; cell < probs.rows; ++cell)
        for (std::size_t tok = 0; tok < probs.cols; ++tok)
            s.maps[tok].values[cell] = probs(cell, tok);
    return s;
}

// softmax(Q K^T / sqrt(d_k)); rows of Q are cells, rows of K are tokens.
inline Matrix attention_probs(const Matrix& q, const Matrix& k)
{
    if (q.cols != k.cols || q.cols == 0)
        throw ShapeError("attention_probs: query and key widths differ");
    Matrix logits(q.rows, k.rows);
    for (std::size_t i = 0; i < q.rows; ++i)
        for (std::size_t j = 0; j < k.rows; ++j)
            logits(i, j) = detail::dot(q.row(i), k.row(j));
    return softmax_rows(logits, std::sqrt(static_cast<double>(q.cols)));
}

// Average-pools a latent down to (channels, 16, 16) cell features.
inline Matrix pool_latent_cells(const LatentImage& latent, std::size_t size = kAttentionSize)
{
    if (latent.height < size || latent.width < size || latent.height % size != 0 || latent.width % size != 0)
        throw ShapeError("cross_attention: latent " + std::to_string(latent.height) + "x" +
                         std::to_string(latent.width) + " is not reducible to " + std::to_string(size) + "x" +
                         std::to_string(size));
    const std::size_t fy = latent.height / size;
    const std::size_t fx = latent.width / size;
    Matrix cells(size * size, latent.channels);
    for (std::size_t c = 0; c < latent.channels; ++c)
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                double s = 0.0;
                for (std::size_t dy = 0; dy < fy; ++dy)
                    for (std::size_t dx = 0; dx < fx; ++dx)
                        s += latent(c, y * fy + dy, x * fx + dx);
                cells(y * size + x, c) = s / static_cast<double>(fy * fx);
            }
    return cells;
}

namespace detail {

// rows(in) x (head slice of w)^T
inline Matrix project(const Matrix& in, const Matrix& w, std::size_t head, std::size_t d_k)
{
    Matrix out(in.rows, d_k);
    for (std::size_t r = 0; r < in.rows; ++r)
        for (std::size_t k = 0; k < d_k; ++k)
            out(r, k) = dot(in.row(r), w.row(head * d_k + k));
    return out;
}

}  // namespace detail

// Multi-head cross-attention; heads are averaged into one map per token.
inline AttentionStack cross_attention(const LatentImage& latent, const TextFeatures& feats, const ProjectionSet& proj,
                                      std::size_t timestep = 0)
{
    if (latent.channels != proj.latent_dim)
        throw ShapeError("cross_attention: latent channels do not match the query projection");
    if (feats.dim() != proj.text_dim)
        throw ShapeError("cross_attention: text feature width does not match the key projection");
    const Matrix cells = pool_latent_cells(latent);
    Matrix mean(cells.rows, feats.tokens());
    for (std::size_t h = 0; h < proj.heads; ++h) {
        const Matrix q = detail::project(cells, proj.w_q, h, proj.d_k);
        const Matrix k = detail::project(feats.vectors, proj.w_k, h, proj.d_k);
        const Matrix a = attention_probs(q, k);
        for (std::size_t i = 0; i < a.values.size(); ++i)
            mean.values[i] += a.values[i];
    }
    for (double& v : mean.values)
        v /= static_cast<double>(proj.heads);
    return stack_from_probs(mean, kAttentionSize, kAttentionSize, timestep);
}

// Elementwise mean over rounds of the same step.
inline AttentionStack aggregate_rounds(const std::vector<AttentionStack>& stacks)
{
    if (stacks.empty())
        throw ShapeError("aggregate_rounds: no stacks");
    const AttentionStack& first = stacks.front();
    first.validate_shape();
    for (const AttentionStack& s : stacks) {
        s.validate_shape();
        if (s.tokens() != first.tokens() || s.height() != first.height() || s.width() != first.width())
            throw ShapeError("aggregate_rounds: stacks differ in token count or grid shape");
        if (s.timestep != first.timestep)
            throw ShapeError("aggregate_rounds: stacks come from different timesteps");
    }
    if (stacks.size() == 1)
        return first;
    AttentionStack out;
    out.timestep = first.timestep;
    out.maps.assign(first.tokens(), Grid2D(first.height(), first.width()));
    for (const AttentionStack& s : stacks)
        for (std::size_t t = 0; t < s.tokens(); ++t)
            for (std::size_t c = 0; c < s.maps[t].size(); ++c)
                out.maps[t].values[c] += s.maps[t].values[c];
    const auto n = static_cast<double>(stacks.size());
    for (Grid2D& m : out.maps)
        for (double& v : m.values)
            v /= n;
    return out;
}

}  // namespace instmask
