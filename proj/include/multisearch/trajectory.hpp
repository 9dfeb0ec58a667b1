// SPDX-License-Identifier: Apache-2.0
//
// Tag-delimited trajectory protocol: parsing, validation, rendering.
//
// The wire format is five literal tag pairs -- <think>, <search>,
// <information>, <merge>, <answer> -- matched case-sensitively, with no
// attributes and no nesting. Text outside any tag pair becomes an implicit
// think step so that untagged prose in model output is preserved.

#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace multisearch {

enum class BlockKind { Think, Search, Information, Merge, Answer };

inline constexpr std::array<std::string_view, 5> kBlockTags = {
    "think", "search", "information", "merge", "answer"};

inline constexpr std::string_view block_tag(BlockKind kind) {
  return kBlockTags[static_cast<std::size_t>(kind)];
}

/// One tagged block. `queries` is populated only for Search steps.
struct Step {
  BlockKind kind = BlockKind::Think;
  std::string text;
  std::vector<std::string> queries;

  friend bool operator==(const Step&, const Step&) = default;
};

/// An ordered block sequence for one rollout. `truncated` is true when the
/// sequence does not end in an answer block.
struct Trajectory {
  std::string question;
  std::vector<Step> steps;
  bool truncated = false;

  bool has_answer() const {
    return !steps.empty() && steps.back().kind == BlockKind::Answer;
  }
  const Step* answer() const { return has_answer() ? &steps.back() : nullptr; }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

class ParseError : public std::runtime_error {
 public:
  enum class Code { UnclosedTag, NestedTag, MisorderedBlocks, EmptySearchBlock };

  ParseError(Code code, std::size_t offset, const std::string& message)
      : std::runtime_error(message + " (byte " + std::to_string(offset) + ")"),
        code_(code),
        offset_(offset) {}

  Code code() const noexcept { return code_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  Code code_;
  std::size_t offset_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const char* ws = " \t\r\n\f\v";
  std::size_t begin = s.find_first_not_of(ws);
  if (begin == std::string_view::npos) return {};
  std::size_t end = s.find_last_not_of(ws);
  return s.substr(begin, end - begin + 1);
}

struct TagToken {
  BlockKind kind;
  bool closing;
  std::size_t length;  // full token length including the angle brackets
};

inline std::optional<TagToken> match_tag(std::string_view text, std::size_t pos) {
  if (pos >= text.size() || text[pos] != '<') return std::nullopt;
  std::size_t name_pos = pos + 1;
  const bool closing = name_pos < text.size() && text[name_pos] == '/';
  if (closing) ++name_pos;
  for (std::size_t i = 0; i < kBlockTags.size(); ++i) {
    const std::string_view name = kBlockTags[i];
    const std::size_t gt = name_pos + name.size();
    if (gt >= text.size() || text[gt] != '>') continue;
    if (text.substr(name_pos, name.size()) != name) continue;
    return TagToken{static_cast<BlockKind>(i), closing, gt + 1 - pos};
  }
  return std::nullopt;
}

inline void validate_steps(const std::vector<Step>& steps,
                           const std::vector<std::size_t>& offsets) {
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i > 0 && steps[i - 1].kind == BlockKind::Answer) {
      throw ParseError(ParseError::Code::MisorderedBlocks, offsets[i],
                       "block after the answer block");
    }
    switch (steps[i].kind) {
      case BlockKind::Information:
        if (i == 0 || steps[i - 1].kind != BlockKind::Search) {
          throw ParseError(ParseError::Code::MisorderedBlocks, offsets[i],
                           "information block without a preceding search block");
        }
        break;
      case BlockKind::Search:
        if (i + 1 >= steps.size() || steps[i + 1].kind != BlockKind::Information) {
          throw ParseError(ParseError::Code::MisorderedBlocks, offsets[i],
                           "search block without a following information block");
        }
        break;
      default:
        break;
    }
  }
}

}  // namespace detail

/// Splits the inner text of a search block into trimmed, non-empty queries.
/// Throws ParseError{EmptySearchBlock} when nothing survives trimming.
inline std::vector<std::string> split_queries(std::string_view search_text,
                                              char delimiter = '\n') {
  std::vector<std::string> queries;
  std::size_t pos = 0;
  while (pos <= search_text.size()) {
    std::size_t end = search_text.find(delimiter, pos);
    const bool last = end == std::string_view::npos;
    if (last) end = search_text.size();
    std::string_view segment = detail::trim(search_text.substr(pos, end - pos));
    if (!segment.empty()) queries.emplace_back(segment);
    if (last) break;
    pos = end + 1;
  }
  if (queries.empty()) {
    throw ParseError(ParseError::Code::EmptySearchBlock, 0,
                     "search block contains no queries");
  }
  return queries;
}

/// Parses raw model output into an ordered, validated block sequence.
///
/// Rules: open tags start a block that runs to the first matching close tag;
/// any open tag inside a block is a NestedTag error; a close tag with no
/// open block is reported as MisorderedBlocks; interstitial text becomes an
/// implicit think step (whitespace-only runs are dropped). After assembly the
/// structural invariants are enforced: the answer block, if present, is final
/// and unique, and search/information blocks pair up adjacently.
inline Trajectory parse_trajectory(std::string_view text,
                                   char query_delimiter = '\n') {
  std::vector<Step> steps;
  std::vector<std::size_t> offsets;

  auto flush_plain = [&](std::size_t from, std::size_t to) {
    if (to <= from) return;
    std::string_view run = text.substr(from, to - from);
    if (detail::trim(run).empty()) return;
    steps.push_back(Step{BlockKind::Think, std::string(run), {}});
    offsets.push_back(from);
  };

  std::size_t plain_start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '<') {
      ++i;
      continue;
    }
    auto tag = detail::match_tag(text, i);
    if (!tag) {
      ++i;
      continue;
    }
    if (tag->closing) {
      throw ParseError(ParseError::Code::MisorderedBlocks, i,
                       "close tag </" + std::string(block_tag(tag->kind)) +
                           "> without a matching open tag");
    }
    flush_plain(plain_start, i);
    const std::size_t open_pos = i;
    const std::size_t inner_start = i + tag->length;
    std::size_t j = inner_start;
    std::optional<std::size_t> close_pos;
    while (j < text.size()) {
      if (text[j] != '<') {
        ++j;
        continue;
      }
      auto inner = detail::match_tag(text, j);
      if (!inner) {
        ++j;
        continue;
      }
      if (!inner->closing) {
        throw ParseError(ParseError::Code::NestedTag, j,
                         "<" + std::string(block_tag(inner->kind)) +
                             "> opened inside <" +
                             std::string(block_tag(tag->kind)) + ">");
      }
      if (inner->kind == tag->kind) {
        close_pos = j;
        break;
      }
      // A close tag of another kind carries no structure here; keep it as text.
      j += inner->length;
    }
    if (!close_pos) {
      throw ParseError(ParseError::Code::UnclosedTag, open_pos,
                       "<" + std::string(block_tag(tag->kind)) +
                           "> is never closed");
    }
    Step step{tag->kind, std::string(text.substr(inner_start, *close_pos - inner_start)), {}};
    if (step.kind == BlockKind::Search) {
      try {
        step.queries = split_queries(step.text, query_delimiter);
      } catch (const ParseError&) {
        throw ParseError(ParseError::Code::EmptySearchBlock, open_pos,
                         "search block contains no queries");
      }
    }
    steps.push_back(std::move(step));
    offsets.push_back(open_pos);
    i = *close_pos + block_tag(tag->kind).size() + 3;
    plain_start = i;
  }
  flush_plain(plain_start, text.size());
  detail::validate_steps(steps, offsets);

  Trajectory t;
  t.steps = std::move(steps);
  t.truncated = !t.has_answer();
  return t;
}

/// Canonical textual form; parse_trajectory(render_trajectory(t)) == t for
/// any trajectory satisfying the invariants. Inner text is emitted byte-exact.
inline std::string render_trajectory(const Trajectory& t) {
  std::string out;
  for (const Step& step : t.steps) {
    const std::string_view tag = block_tag(step.kind);
    out += '<';
    out += tag;
    out += '>';
    out += step.text;
    out += "</";
    out += tag;
    out += '>';
  }
  return out;
}

/// All steps of the given kind, in trajectory order.
inline std::vector<Step> extract_blocks(const Trajectory& t, BlockKind kind) {
  std::vector<Step> out;
  for (const Step& step : t.steps) {
    if (step.kind == kind) out.push_back(step);
  }
  return out;
}

}  // namespace multisearch
