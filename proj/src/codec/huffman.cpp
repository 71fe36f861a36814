// SPDX-License-Identifier: Apache-2.0
#include "moec/codec/huffman.hpp"

#include <algorithm>
#include <queue>
#include <stdexcept>
#include <tuple>

#include "moec/error.hpp"

namespace moec::codec {

namespace {

constexpr int kMaxCodeLength = 63;

/// Symbols with a code, sorted by (length, value).
std::vector<int> canonical_order(const CodeLengths& lengths) {
  std::vector<int> order;
  for (int s = 0; s < 256; ++s)
    if (lengths[s] > 0) order.push_back(s);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return lengths[a] < lengths[b]; });
  return order;
}

int lone_symbol(const CodeLengths& lengths) {
  int found = -1;
  for (int s = 0; s < 256; ++s) {
    if (lengths[s] == 0) continue;
    if (found >= 0) return -1;
    found = s;
  }
  return found;
}

}  // namespace

Frequencies count_bytes(std::span<const std::uint8_t> bytes) {
  Frequencies f{};
  for (auto b : bytes) ++f[b];
  return f;
}

std::size_t HuffmanTree::symbol_count() const {
  return static_cast<std::size_t>(std::count_if(lengths.begin(), lengths.end(),
                                                [](std::uint8_t l) { return l > 0; }));
}

std::uint64_t HuffmanTree::weighted_length() const {
  std::uint64_t total = 0;
  for (int s = 0; s < 256; ++s) total += freq[s] * lengths[s];
  return total;
}

HuffmanTree huffman_build(const Frequencies& freq) {
  HuffmanTree t;
  t.freq = freq;
  // (freq, smallest symbol, node); the smallest tuple is extracted first
  using Entry = std::tuple<std::uint64_t, std::uint8_t, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> q;
  for (int s = 0; s < 256; ++s) {
    if (freq[s] == 0) continue;
    t.nodes.push_back({freq[s], static_cast<std::uint8_t>(s), s, -1, -1});
    q.emplace(freq[s], static_cast<std::uint8_t>(s), static_cast<int>(t.nodes.size()) - 1);
  }
  if (q.empty()) throw std::invalid_argument("huffman_build: no symbols");
  while (q.size() > 1) {
    const auto [fx, sx, x] = q.top();
    q.pop();
    const auto [fy, sy, y] = q.top();
    q.pop();
    const auto min_symbol = std::min(sx, sy);
    t.nodes.push_back({fx + fy, min_symbol, -1, x, y});
    q.emplace(fx + fy, min_symbol, static_cast<int>(t.nodes.size()) - 1);
  }
  t.root = std::get<2>(q.top());

  if (t.nodes[static_cast<std::size_t>(t.root)].symbol >= 0) {
    t.lengths[static_cast<std::size_t>(t.nodes[static_cast<std::size_t>(t.root)].symbol)] = 1;
  } else {
    std::vector<std::pair<int, int>> stack{{t.root, 0}};
    while (!stack.empty()) {
      const auto [node, depth] = stack.back();
      stack.pop_back();
      const auto& n = t.nodes[static_cast<std::size_t>(node)];
      if (n.symbol >= 0) {
        if (depth > kMaxCodeLength) throw std::length_error("huffman_build: code too long");
        t.lengths[static_cast<std::size_t>(n.symbol)] = static_cast<std::uint8_t>(depth);
      } else {
        stack.emplace_back(n.left, depth + 1);
        stack.emplace_back(n.right, depth + 1);
      }
    }
  }
  t.codes = canonical_codes(t.lengths);
  return t;
}

std::array<std::uint64_t, 256> canonical_codes(const CodeLengths& lengths) {
  std::array<std::uint64_t, 256> codes{};
  std::uint64_t code = 0;
  int prev_len = 0;
  for (int s : canonical_order(lengths)) {
    const int len = lengths[s];
    if (len > kMaxCodeLength) throw CorruptArtifactError("huffman code length above 63");
    code <<= (len - prev_len);
    if (code >> len != 0) throw CorruptArtifactError("huffman code lengths violate Kraft");
    codes[s] = code++;
    prev_len = len;
  }
  return codes;
}

EncodedStream huffman_encode(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw std::invalid_argument("huffman_encode: empty input");
  const HuffmanTree t = huffman_build(count_bytes(bytes));
  EncodedStream out;
  out.lengths = t.lengths;
  out.symbol_count = bytes.size();
  // a lone symbol is implied by the table; its bits would carry no information
  if (t.symbol_count() == 1) return out;
  std::uint8_t acc = 0;
  int filled = 0;
  for (auto b : bytes) {
    const int len = t.lengths[b];
    const std::uint64_t code = t.codes[b];
    for (int i = len - 1; i >= 0; --i) {
      acc = static_cast<std::uint8_t>((acc << 1) | ((code >> i) & 1U));
      if (++filled == 8) {
        out.bits.push_back(acc);
        acc = 0;
        filled = 0;
      }
    }
    out.bit_count += static_cast<std::size_t>(len);
  }
  if (filled > 0) out.bits.push_back(static_cast<std::uint8_t>(acc << (8 - filled)));
  return out;
}

std::vector<std::uint8_t> huffman_decode(const CodeLengths& lengths,
                                         std::span<const std::uint8_t> bits, std::size_t count) {
  const int lone = lone_symbol(lengths);
  if (lone >= 0) return std::vector<std::uint8_t>(count, static_cast<std::uint8_t>(lone));

  const auto codes = canonical_codes(lengths);
  const auto order = canonical_order(lengths);
  if (order.empty()) throw CorruptArtifactError("huffman table is empty");
  // first code and first index in `order` of every length
  std::array<std::uint64_t, kMaxCodeLength + 2> first_code{};
  std::array<std::size_t, kMaxCodeLength + 2> first_index{};
  std::array<std::size_t, kMaxCodeLength + 2> per_len{};
  for (std::size_t i = order.size(); i-- > 0;) {
    const int len = lengths[order[i]];
    first_code[len] = codes[order[i]];
    first_index[len] = i;
    ++per_len[len];
  }
  const int max_len = lengths[order.back()];

  std::vector<std::uint8_t> out;
  out.reserve(count);
  std::size_t bit = 0;
  const std::size_t total_bits = bits.size() * 8;
  while (out.size() < count) {
    std::uint64_t code = 0;
    int len = 0;
    while (true) {
      if (bit >= total_bits) throw CorruptArtifactError("huffman stream ends early");
      code = (code << 1) | ((bits[bit / 8] >> (7 - bit % 8)) & 1U);
      ++bit;
      ++len;
      if (per_len[len] > 0 && code >= first_code[len] && code - first_code[len] < per_len[len]) {
        out.push_back(static_cast<std::uint8_t>(order[first_index[len] + (code - first_code[len])]));
        break;
      }
      if (len >= max_len) throw CorruptArtifactError("huffman stream holds an unknown code");
    }
  }
  return out;
}

}  // namespace moec::codec
