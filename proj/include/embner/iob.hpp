#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace embner {

/// Untyped boundary labels. The numeric order is the state order used by the
/// Gaussian HMM and the tie-break order of every decoder.
enum class Iob : int { O = 0, I = 1, B = 2 };

inline constexpr int kNumIob = 3;

char iob_char(Iob tag);
Iob parse_iob(std::string_view label);

/// A typed label such as "B-PER" split into prefix and type ("" for O).
struct TypedLabel {
  Iob prefix = Iob::O;
  std::string type;
};

TypedLabel parse_typed(std::string_view label);
std::string format_typed(const TypedLabel& label);

/// True when no I-X follows O, the sentence start, or an entity of another type.
bool is_valid_iob(const std::vector<std::string>& labels);

/// Rewrites IOB1-style chunk starts (I-X after O or after another type) as B-X.
std::vector<std::string> to_iob2(const std::vector<std::string>& labels);

/// Half-open-free chunk: tokens [start, end] inclusive.
struct Chunk {
  int start = 0;
  int end = 0;
  std::string type;

  friend bool operator==(const Chunk&, const Chunk&) = default;
  friend auto operator<=>(const Chunk&, const Chunk&) = default;
};

/// conlleval-style chunk extraction; stray I-X starts a new chunk.
std::vector<Chunk> chunks(const std::vector<std::string>& labels);

/// Inverse of chunks() for disjoint, sorted chunks.
std::vector<std::string> labels_from_chunks(const std::vector<Chunk>& chunks, int length);

}  // namespace embner
