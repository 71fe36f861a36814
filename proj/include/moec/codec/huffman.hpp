// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace moec::codec {

/// Byte-symbol counts; zero means the symbol is absent.
using Frequencies = std::array<std::uint64_t, 256>;
using CodeLengths = std::array<std::uint8_t, 256>;

Frequencies count_bytes(std::span<const std::uint8_t> bytes);

struct HuffmanNode {
  std::uint64_t freq = 0;
  /// Smallest symbol in the subtree.
  std::uint8_t min_symbol = 0;
  /// Leaf symbol, or -1 for internal nodes.
  int symbol = -1;
  int left = -1;
  int right = -1;
};

struct HuffmanTree {
  Frequencies freq{};
  std::vector<HuffmanNode> nodes;
  int root = -1;
  CodeLengths lengths{};
  /// Canonical codes, right-aligned in `lengths[s]` bits.
  std::array<std::uint64_t, 256> codes{};

  std::size_t symbol_count() const;
  /// Σ freq·len over all symbols.
  std::uint64_t weighted_length() const;
};

/// Greedy merge of the two least-frequent subtrees until one remains; ties
/// go to the subtree holding the smaller symbol. A lone symbol gets the
/// one-bit code "0". Throws std::invalid_argument when no count is nonzero.
HuffmanTree huffman_build(const Frequencies& freq);

/// Canonical codes for the given lengths: symbols sorted by (length, value)
/// receive consecutive codes. Throws CorruptArtifactError when the lengths
/// violate the Kraft inequality.
std::array<std::uint64_t, 256> canonical_codes(const CodeLengths& lengths);

struct EncodedStream {
  CodeLengths lengths{};
  /// MSB-first bitstream padded with zero bits to a whole byte.
  std::vector<std::uint8_t> bits;
  std::size_t bit_count = 0;
  std::size_t symbol_count = 0;

  /// Length table plus padded bitstream.
  std::size_t stored_size() const { return lengths.size() + bits.size(); }
};

EncodedStream huffman_encode(std::span<const std::uint8_t> bytes);

/// Decodes exactly `count` symbols. Throws CorruptArtifactError when the
/// stream ends early or holds a bit pattern with no code.
std::vector<std::uint8_t> huffman_decode(const CodeLengths& lengths,
                                         std::span<const std::uint8_t> bits, std::size_t count);

}  // namespace moec::codec
