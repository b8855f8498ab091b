#include "embner/iob.hpp"

#include "embner/error.hpp"

namespace embner {

char iob_char(Iob tag) {
  switch (tag) {
    case Iob::O: return 'O';
    case Iob::I: return 'I';
    case Iob::B: return 'B';
  }
  return 'O';
}

Iob parse_iob(std::string_view label) {
  if (label.empty()) throw ValidationError("empty IOB label");
  switch (label.front()) {
    case 'O': return Iob::O;
    case 'I': return Iob::I;
    case 'B': return Iob::B;
    default: break;
  }
  throw ValidationError("not an IOB label: '" + std::string(label) + "'");
}

TypedLabel parse_typed(std::string_view label) {
  TypedLabel out;
  out.prefix = parse_iob(label);
  if (out.prefix == Iob::O) {
    if (label.size() != 1) throw ValidationError("malformed O label: '" + std::string(label) + "'");
    return out;
  }
  if (label.size() > 2 && label[1] == '-') out.type = std::string(label.substr(2));
  else if (label.size() != 1) throw ValidationError("malformed label: '" + std::string(label) + "'");
  return out;
}

std::string format_typed(const TypedLabel& label) {
  if (label.prefix == Iob::O) return "O";
  std::string out(1, iob_char(label.prefix));
  if (!label.type.empty()) out += "-" + label.type;
  return out;
}

bool is_valid_iob(const std::vector<std::string>& labels) {
  TypedLabel prev;
  for (const auto& raw : labels) {
    TypedLabel cur = parse_typed(raw);
    if (cur.prefix == Iob::I && (prev.prefix == Iob::O || prev.type != cur.type)) return false;
    prev = std::move(cur);
  }
  return true;
}

std::vector<std::string> to_iob2(const std::vector<std::string>& labels) {
  std::vector<std::string> out;
  out.reserve(labels.size());
  TypedLabel prev;
  for (const auto& raw : labels) {
    TypedLabel cur = parse_typed(raw);
    if (cur.prefix == Iob::I && (prev.prefix == Iob::O || prev.type != cur.type)) cur.prefix = Iob::B;
    out.push_back(format_typed(cur));
    prev = std::move(cur);
  }
  return out;
}

std::vector<Chunk> chunks(const std::vector<std::string>& labels) {
  std::vector<Chunk> out;
  TypedLabel prev;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    TypedLabel cur = parse_typed(labels[i]);
    bool starts = cur.prefix == Iob::B ||
                  (cur.prefix == Iob::I && (prev.prefix == Iob::O || prev.type != cur.type));
    if (starts) {
      out.push_back({i, i, cur.type});
    } else if (cur.prefix == Iob::I) {
      out.back().end = i;
    }
    prev = std::move(cur);
  }
  return out;
}

std::vector<std::string> labels_from_chunks(const std::vector<Chunk>& chunks, int length) {
  std::vector<std::string> out(length, "O");
  for (const auto& c : chunks) {
    std::string suffix = c.type.empty() ? "" : "-" + c.type;
    out[c.start] = "B" + suffix;
    for (int i = c.start + 1; i <= c.end; ++i) out[i] = "I" + suffix;
  }
  return out;
}

}  // namespace embner
