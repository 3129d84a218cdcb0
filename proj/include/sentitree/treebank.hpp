#pragma once

// Labeled binary constituency trees and their line-oriented text format:
//
//   (LABEL#CATEGORY#E left right)   internal node
//   (LABEL#CATEGORY#E token)        leaf
//
// LABEL is 0..4 or `_` when absent, E is 0/1 (entity-of-interest in span).

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sentitree/error.hpp"
#include "sentitree/io.hpp"

namespace sentitree {

inline constexpr int kNumClasses = 5;

struct TreeNode {
  std::string token;  // leaves only
  int left = -1;      // child indices into the owning tree, -1 for leaves
  int right = -1;
  std::optional<int> label;
  std::string category;
  bool entity = false;

  bool is_leaf() const noexcept { return left < 0 && right < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// A binary tree stored as a post-order arena: children precede parents and
/// the root is the last node. Leaves appear in sentence order.
class ParseTree {
 public:
  ParseTree() = default;

  static ParseTree leaf(std::string token, std::string category, std::optional<int> label = std::nullopt,
                        bool entity = false) {
    ParseTree t;
    TreeNode n;
    n.token = std::move(token);
    n.category = std::move(category);
    n.label = label;
    n.entity = entity;
    t.nodes_.push_back(std::move(n));
    return t;
  }

  /// Joins two subtrees under a new root. The root's entity flag defaults to
  /// the OR of its children.
  static ParseTree join(const ParseTree& left, const ParseTree& right, std::string category,
                        std::optional<int> label = std::nullopt, std::optional<bool> entity = std::nullopt) {
    ParseTree t;
    t.nodes_.reserve(left.size() + right.size() + 1);
    t.nodes_ = left.nodes_;
    const int offset = static_cast<int>(left.size());
    for (TreeNode n : right.nodes_) {
      if (!n.is_leaf()) {
        n.left += offset;
        n.right += offset;
      }
      t.nodes_.push_back(std::move(n));
    }
    TreeNode root;
    root.left = offset - 1;
    root.right = static_cast<int>(t.nodes_.size()) - 1;
    root.category = std::move(category);
    root.label = label;
    root.entity = entity.value_or(left.root().entity || right.root().entity);
    t.nodes_.push_back(std::move(root));
    return t;
  }

  bool empty() const noexcept { return nodes_.empty(); }
  std::size_t size() const noexcept { return nodes_.size(); }
  int root_index() const noexcept { return static_cast<int>(nodes_.size()) - 1; }
  const TreeNode& root() const { return nodes_.back(); }
  const TreeNode& node(std::size_t i) const { return nodes_[i]; }
  TreeNode& node(std::size_t i) { return nodes_[i]; }
  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }

  std::size_t leaf_count() const {
    std::size_t n = 0;
    for (const auto& node : nodes_) n += node.is_leaf();
    return n;
  }

  std::vector<std::string> tokens() const {
    std::vector<std::string> out;
    for (const auto& node : nodes_)
      if (node.is_leaf()) out.push_back(node.token);
    return out;
  }

  /// Internal use by the parser: append a node whose children are already present.
  int push(TreeNode n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  friend bool operator==(const ParseTree&, const ParseTree&) = default;

 private:
  std::vector<TreeNode> nodes_;
};

struct Treebank {
  std::vector<ParseTree> trees;
  std::string source;
};

enum class TreeRule { BadLabel, EntityFlagInconsistent, NonBinaryNode, BadIndex, BadToken, BadCategory };

constexpr std::string_view to_string(TreeRule r) noexcept {
  switch (r) {
    case TreeRule::BadLabel: return "BadLabel";
    case TreeRule::EntityFlagInconsistent: return "EntityFlagInconsistent";
    case TreeRule::NonBinaryNode: return "NonBinaryNode";
    case TreeRule::BadIndex: return "BadIndex";
    case TreeRule::BadToken: return "BadToken";
    case TreeRule::BadCategory: return "BadCategory";
  }
  return "Unknown";
}

struct Violation {
  std::string path;  // "root", "root.L", "root.L.R", ...
  TreeRule rule;

  std::string to_string() const { return std::string(sentitree::to_string(rule)) + "@" + path; }
  friend bool operator==(const Violation&, const Violation&) = default;
};

namespace detail {

inline bool is_space(char c) noexcept { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

inline bool is_atom_char(char c) noexcept { return !is_space(c) && c != '(' && c != ')'; }

inline bool valid_atom(std::string_view s, bool allow_hash) {
  if (s.empty()) return false;
  for (char c : s)
    if (!is_atom_char(c) || (!allow_hash && c == '#')) return false;
  return true;
}

class PtbParser {
 public:
  explicit PtbParser(std::string_view text) : text_(text) {}

  ParseTree parse() {
    skip_ws();
    if (pos_ == text_.size()) fail(Errc::EmptyInput, "no tree in input");
    parse_node(0);
    skip_ws();
    if (pos_ != text_.size()) {
      if (text_[pos_] == ')') fail(Errc::UnbalancedParens, at("unmatched ')'"));
      fail(Errc::SyntaxError, at("trailing input after tree"));
    }
    return std::move(tree_);
  }

 private:
  static constexpr int kMaxDepth = 4096;

  std::string at(const std::string& msg) const { return msg + " at offset " + std::to_string(pos_); }

  void skip_ws() {
    while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
  }

  std::string_view read_atom() {
    std::size_t start = pos_;
    while (pos_ < text_.size() && is_atom_char(text_[pos_])) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  void parse_header(TreeNode& node) {
    std::string_view header = read_atom();
    if (header.empty()) fail(Errc::BadHeader, at("missing node header"));
    auto parts = io::split(header, '#');
    if (parts.size() != 3) fail(Errc::BadHeader, at("header '" + std::string(header) + "' is not LABEL#CATEGORY#E"));
    std::string_view label = parts[0];
    if (label == "_") {
      node.label.reset();
    } else if (label.size() == 1 && label[0] >= '0' && label[0] <= '9') {
      int v = label[0] - '0';
      if (v >= kNumClasses) fail(Errc::BadLabel, at("label " + std::string(label) + " outside 0..4"));
      node.label = v;
    } else {
      bool numeric = !label.empty();
      for (char c : label) numeric = numeric && ((c >= '0' && c <= '9') || c == '-');
      if (numeric) fail(Errc::BadLabel, at("label " + std::string(label) + " outside 0..4"));
      fail(Errc::BadHeader, at("bad label field '" + std::string(label) + "'"));
    }
    if (parts[1].empty()) fail(Errc::BadHeader, at("empty category"));
    node.category = std::string(parts[1]);
    if (parts[2] == "0") {
      node.entity = false;
    } else if (parts[2] == "1") {
      node.entity = true;
    } else {
      fail(Errc::BadHeader, at("entity field must be 0 or 1"));
    }
  }

  int parse_node(int depth) {
    if (depth > kMaxDepth) fail(Errc::SyntaxError, at("tree too deep"));
    skip_ws();
    if (pos_ == text_.size()) fail(Errc::UnbalancedParens, at("unexpected end of input"));
    if (text_[pos_] != '(') {
      if (text_[pos_] == ')') fail(Errc::UnbalancedParens, at("unmatched ')'"));
      fail(Errc::SyntaxError, at("expected '('"));
    }
    ++pos_;
    skip_ws();
    TreeNode node;
    parse_header(node);
    skip_ws();
    if (pos_ == text_.size()) fail(Errc::UnbalancedParens, at("unexpected end of input"));

    if (text_[pos_] == '(') {
      std::vector<int> children;
      while (true) {
        skip_ws();
        if (pos_ == text_.size()) fail(Errc::UnbalancedParens, at("unexpected end of input"));
        if (text_[pos_] == ')') break;
        if (text_[pos_] != '(') fail(Errc::SyntaxError, at("token mixed with child nodes"));
        if (children.size() == 2) fail(Errc::NonBinaryNode, at("internal node with more than two children"));
        children.push_back(parse_node(depth + 1));
      }
      ++pos_;
      if (children.size() != 2) fail(Errc::NonBinaryNode, at("internal node with one child"));
      node.left = children[0];
      node.right = children[1];
      bool child_entity = tree_.node(node.left).entity || tree_.node(node.right).entity;
      if (node.entity != child_entity)
        fail(Errc::EntityFlagInconsistent, at("entity flag differs from OR of children"));
      return tree_.push(std::move(node));
    }

    if (text_[pos_] == ')') fail(Errc::SyntaxError, at("node without token or children"));
    std::string_view token = read_atom();
    skip_ws();
    if (pos_ == text_.size()) fail(Errc::UnbalancedParens, at("unexpected end of input"));
    if (text_[pos_] != ')') fail(Errc::SyntaxError, at("leaf with more than one token"));
    ++pos_;
    node.token = std::string(token);
    return tree_.push(std::move(node));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  ParseTree tree_;
};

}  // namespace detail

/// Parses a single s-expression. Accepted trees always satisfy validate().
inline ParseTree parse_ptb(std::string_view text) { return detail::PtbParser(text).parse(); }

/// Canonical single-line form.
inline std::string to_ptb(const ParseTree& tree) {
  std::string out;
  if (tree.empty()) return out;
  // Iterative pre-order emission; post-order arena makes recursion unnecessary.
  struct Frame {
    int node;
    int stage;
  };
  std::vector<Frame> stack{{tree.root_index(), 0}};
  while (!stack.empty()) {
    Frame& f = stack.back();
    const TreeNode& n = tree.node(static_cast<std::size_t>(f.node));
    if (f.stage == 0) {
      out += '(';
      out += n.label ? std::to_string(*n.label) : std::string("_");
      out += '#';
      out += n.category;
      out += '#';
      out += n.entity ? '1' : '0';
      if (n.is_leaf()) {
        out += ' ';
        out += n.token;
        out += ')';
        stack.pop_back();
        continue;
      }
      f.stage = 1;
      out += ' ';
      stack.push_back({n.left, 0});
    } else if (f.stage == 1) {
      f.stage = 2;
      out += ' ';
      stack.push_back({n.right, 0});
    } else {
      out += ')';
      stack.pop_back();
    }
  }
  return out;
}

/// Lists every invariant violation; empty iff the tree is valid.
inline std::vector<Violation> validate(const ParseTree& tree) {
  std::vector<Violation> out;
  if (tree.empty()) return out;
  const int n = static_cast<int>(tree.size());
  std::vector<std::string> paths(tree.size());
  std::vector<char> seen(tree.size(), 0);
  std::vector<int> stack{tree.root_index()};
  paths[tree.size() - 1] = "root";
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    if (seen[static_cast<std::size_t>(i)]) {
      out.push_back({paths[static_cast<std::size_t>(i)], TreeRule::BadIndex});
      continue;
    }
    seen[static_cast<std::size_t>(i)] = 1;
    const TreeNode& node = tree.node(static_cast<std::size_t>(i));
    const std::string& path = paths[static_cast<std::size_t>(i)];
    if (node.label && (*node.label < 0 || *node.label >= kNumClasses)) out.push_back({path, TreeRule::BadLabel});
    if (!detail::valid_atom(node.category, false)) out.push_back({path, TreeRule::BadCategory});
    if (node.is_leaf()) {
      if (!detail::valid_atom(node.token, true)) out.push_back({path, TreeRule::BadToken});
      continue;
    }
    if (node.left < 0 || node.right < 0) {
      out.push_back({path, TreeRule::NonBinaryNode});
      continue;
    }
    if (node.left >= i || node.right >= i || node.left >= n || node.right >= n || node.left == node.right) {
      out.push_back({path, TreeRule::BadIndex});
      continue;
    }
    if (!node.token.empty()) out.push_back({path, TreeRule::BadToken});
    bool child_entity = tree.node(static_cast<std::size_t>(node.left)).entity ||
                        tree.node(static_cast<std::size_t>(node.right)).entity;
    if (node.entity != child_entity) out.push_back({path, TreeRule::EntityFlagInconsistent});
    paths[static_cast<std::size_t>(node.left)] = path + ".L";
    paths[static_cast<std::size_t>(node.right)] = path + ".R";
    stack.push_back(node.right);
    stack.push_back(node.left);
  }
  for (int i = 0; i < n; ++i)
    if (!seen[static_cast<std::size_t>(i)]) out.push_back({"#" + std::to_string(i), TreeRule::BadIndex});
  return out;
}

/// Reads one tree per line; blank lines are ignored. Errors carry the line number.
inline Treebank read_treebank(std::istream& in, std::string source = "<stream>") {
  Treebank bank;
  bank.source = std::move(source);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    try {
      bank.trees.push_back(parse_ptb(line));
    } catch (const Error& e) {
      throw Error(e.code(), bank.source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return bank;
}

inline Treebank load_treebank(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  return read_treebank(in, path.string());
}

inline std::string write_treebank(const Treebank& bank) {
  std::string out;
  for (const auto& t : bank.trees) {
    out += to_ptb(t);
    out += '\n';
  }
  return out;
}

}  // namespace sentitree
