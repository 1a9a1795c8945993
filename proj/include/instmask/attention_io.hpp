#pragma once

// Attention dump container.
//
//   offset  size  field
//   0       4     magic "ATNS"
//   4       2     version (u16, currently 1)
//   6       4     timestep (u32)
//   10      2     rounds (u16)
//   12      2     tokens (u16, start token included)
//   14      2     h (u16)
//   16      2     w (u16)
//   18      ...   rounds*tokens*h*w float32, round-major then token-major,
//                 each map row-major
//
// All integers and floats are little-endian. A JSON sidecar carries the token
// strings: {"version":1,"timestep":t,"rounds":n,"tokens":[...]}.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "instmask/attention.hpp"
#include "instmask/error.hpp"
#include "instmask/io.hpp"

namespace instmask::io {

inline constexpr std::array<char, 4> kAttentionMagic{'A', 'T', 'N', 'S'};
inline constexpr std::uint16_t kAttentionVersion = 1;
inline constexpr std::size_t kAttentionHeaderSize = 18;

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v)
{
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_le(const std::string& in, std::size_t off, std::size_t n)
{
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < n; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
    return v;
}

template <typename T>
std::uint16_t narrow_u16(T v, const char* what)
{
    if (v > 0xffff)
        throw ShapeError(std::string("attention dump: ") + what + " exceeds u16");
    return static_cast<std::uint16_t>(v);
}

}  // namespace detail

// All stacks must share timestep, token count and grid shape.
inline std::string encode_attention(const std::vector<AttentionStack>& rounds)
{
    if (rounds.empty())
        throw ShapeError("encode_attention: no stacks");
    const AttentionStack& first = rounds.front();
    first.validate_shape();
    for (const AttentionStack& s : rounds) {
        s.validate_shape();
        if (s.tokens() != first.tokens() || s.height() != first.height() || s.width() != first.width() ||
            s.timestep != first.timestep)
            throw ShapeError("encode_attention: stacks are not from one step");
    }
    std::string out(kAttentionMagic.begin(), kAttentionMagic.end());
    detail::put_u16(out, kAttentionVersion);
    if (first.timestep > 0xffffffffULL)
        throw ShapeError("attention dump: timestep exceeds u32");
    detail::put_u32(out, static_cast<std::uint32_t>(first.timestep));
    detail::put_u16(out, detail::narrow_u16(rounds.size(), "rounds"));
    detail::put_u16(out, detail::narrow_u16(first.tokens(), "tokens"));
    detail::put_u16(out, detail::narrow_u16(first.height(), "h"));
    detail::put_u16(out, detail::narrow_u16(first.width(), "w"));
    for (const AttentionStack& s : rounds)
        for (const Grid2D& m : s.maps)
            for (double v : m.values)
                detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

inline std::vector<AttentionStack> decode_attention(const std::string& bytes)
{
    if (bytes.size() < kAttentionHeaderSize || std::memcmp(bytes.data(), kAttentionMagic.data(), 4) != 0)
        throw IoError("attention dump: bad magic");
    const auto version = detail::get_le(bytes, 4, 2);
    if (version != kAttentionVersion)
        throw IoError("attention dump: unsupported version " + std::to_string(version));
    const std::size_t timestep = detail::get_le(bytes, 6, 4);
    const std::size_t rounds = detail::get_le(bytes, 10, 2);
    const std::size_t tokens = detail::get_le(bytes, 12, 2);
    const std::size_t h = detail::get_le(bytes, 14, 2);
    const std::size_t w = detail::get_le(bytes, 16, 2);
    if (rounds == 0 || tokens == 0 || h == 0 || w == 0)
        throw IoError("attention dump: zero-sized dimension");
    const std::size_t expected = kAttentionHeaderSize + rounds * tokens * h * w * 4;
    if (bytes.size() != expected)
        throw IoError("attention dump: payload size " + std::to_string(bytes.size()) + " != expected " +
                      std::to_string(expected));
    std::vector<AttentionStack> out(rounds);
    std::size_t off = kAttentionHeaderSize;
    for (std::size_t r = 0; r < rounds; ++r) {
        out[r].timestep = timestep;
        out[r].round = r;
        out[r].maps.assign(tokens, Grid2D(h, w));
        for (Grid2D& m : out[r].maps)
            for (double& v : m.values) {
                v = static_cast<double>(std::bit_cast<float>(detail::get_le(bytes, off, 4)));
                off += 4;
            }
    }
    return out;
}

inline nlohmann::json attention_sidecar(const std::vector<AttentionStack>& rounds, const TokenSequence& tokens)
{
    return {{"version", 1},
            {"timestep", rounds.empty() ? 0 : rounds.front().timestep},
            {"rounds", rounds.size()},
            {"tokens", tokens.with_start()}};
}

// Writes "<stem>.atns" and "<stem>.json".
inline void write_attention(const std::filesystem::path& stem, const std::vector<AttentionStack>& rounds,
                            const TokenSequence& tokens)
{
    if (!rounds.empty() && rounds.front().tokens() != tokens.size())
        throw ShapeError("write_attention: token list does not match the stack");
    write_atomic(stem.string() + ".atns", encode_attention(rounds));
    write_atomic(stem.string() + ".json", attention_sidecar(rounds, tokens).dump(2) + "\n");
}

inline std::vector<AttentionStack> read_attention(const std::filesystem::path& path)
{
    return decode_attention(read_file(path));
}

}  // namespace instmask::io
