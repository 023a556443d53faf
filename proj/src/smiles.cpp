// Copyright 2026 The molspace Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <map>
#include <optional>
#include <string>

#include "molspace/chem.hpp"
#include "molspace/error.hpp"

namespace molspace::chem {

std::vector<std::vector<std::pair<int, int>>> MolGraph::adjacency() const {
  std::vector<std::vector<std::pair<int, int>>> adj(atoms.size());
  for (std::size_t i = 0; i < bonds.size(); ++i) {
    adj[static_cast<std::size_t>(bonds[i].a)].emplace_back(bonds[i].b, static_cast<int>(i));
    adj[static_cast<std::size_t>(bonds[i].b)].emplace_back(bonds[i].a, static_cast<int>(i));
  }
  return adj;
}

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }

/// Normal valences for the elements the valence rules cover; empty otherwise.
std::vector<int> normal_valences(int z) {
  switch (z) {
    case 1: return {1};
    case 5: return {3};
    case 6: return {4};
    case 7: return {3, 5};
    case 8: return {2};
    case 15: return {3, 5};
    case 16: return {2, 4, 6};
    case 9: case 17: case 35: case 53: return {1};
    default: return {};
  }
}

/// Largest admissible valence once the formal charge is applied. Carbon and
/// boron lose a bond per unit of charge either way; the others gain one per
/// positive charge and lose one per negative charge.
std::optional<int> max_valence(int z, int charge) {
  const auto normal = normal_valences(z);
  if (normal.empty()) return std::nullopt;
  const int top = normal.back();
  if (z == 5 || z == 6) return top - std::abs(charge);
  return top + charge;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  MolGraph run() {
    if (s_.empty()) throw ParseError(0, "empty SMILES");
    while (pos_ < s_.size()) step();
    if (pending_) throw ParseError(pending_offset_, "bond without a following atom");
    if (!branches_.empty()) throw ParseError(branches_.back().offset, "unmatched '('");
    if (!rings_.empty()) {
      auto first = std::min_element(rings_.begin(), rings_.end(), [](const auto& a, const auto& b) {
        return a.second.offset < b.second.offset;
      });
      throw ParseError(first->second.offset,
                       "unmatched ring closure " + std::to_string(first->first));
    }
    check_valences();
    return std::move(g_);
  }

 private:
  struct Branch {
    int anchor;
    std::size_t atoms_before;
    std::size_t offset;
  };
  struct OpenRing {
    int atom;
    std::optional<BondOrder> order;
    std::size_t offset;
  };

  void step() {
    const char c = s_[pos_];
    if (c == '(') {
      if (prev_ < 0) throw ParseError(pos_, "branch without a preceding atom");
      if (pending_) throw ParseError(pos_, "bond symbol before '('");
      branches_.push_back({prev_, g_.atoms.size(), pos_});
      ++pos_;
      return;
    }
    if (c == ')') {
      if (branches_.empty()) throw ParseError(pos_, "unmatched ')'");
      if (pending_) throw ParseError(pending_offset_, "bond without a following atom");
      if (g_.atoms.size() == branches_.back().atoms_before) throw ParseError(pos_, "empty branch");
      prev_ = branches_.back().anchor;
      branches_.pop_back();
      ++pos_;
      return;
    }
    if (c == '-' || c == '=' || c == '#' || c == ':') {
      if (prev_ < 0) throw ParseError(pos_, "bond without a preceding atom");
      if (pending_) throw ParseError(pos_, "consecutive bond symbols");
      pending_ = c == '-' ? BondOrder::kSingle
                 : c == '=' ? BondOrder::kDouble
                 : c == '#' ? BondOrder::kTriple
                            : BondOrder::kAromatic;
      pending_offset_ = pos_;
      ++pos_;
      return;
    }
    if (is_digit(c) || c == '%') {
      ring_label();
      return;
    }
    if (c == '[') {
      bracket_atom();
      return;
    }
    organic_atom();
  }

  void ring_label() {
    const std::size_t start = pos_;
    if (prev_ < 0) throw ParseError(start, "ring closure without a preceding atom");
    int label;
    if (s_[pos_] == '%') {
      if (pos_ + 2 >= s_.size() || !is_digit(s_[pos_ + 1]) || !is_digit(s_[pos_ + 2]))
        throw ParseError(start, "'%' must be followed by two digits");
      label = (s_[pos_ + 1] - '0') * 10 + (s_[pos_ + 2] - '0');
      pos_ += 3;
    } else {
      label = s_[pos_] - '0';
      ++pos_;
    }
    auto it = rings_.find(label);
    if (it == rings_.end()) {
      rings_[label] = {prev_, pending_, start};
      pending_.reset();
      return;
    }
    const OpenRing open = it->second;
    rings_.erase(it);
    if (open.atom == prev_) throw ParseError(start, "ring closure bonds an atom to itself");
    if (open.order && pending_ && *open.order != *pending_)
      throw ParseError(start, "conflicting ring-closure bond orders");
    const auto order = pending_ ? pending_ : open.order;
    pending_.reset();
    add_bond(open.atom, prev_, order, start);
  }

  void organic_atom() {
    const std::size_t start = pos_;
    const char c = s_[pos_];
    Atom atom;
    if (c == 'C' && pos_ + 1 < s_.size() && s_[pos_ + 1] == 'l') {
      atom.atomic_number = 17;
      pos_ += 2;
    } else if (c == 'B' && pos_ + 1 < s_.size() && s_[pos_ + 1] == 'r') {
      atom.atomic_number = 35;
      pos_ += 2;
    } else {
      switch (c) {
        case 'B': atom.atomic_number = 5; break;
        case 'C': atom.atomic_number = 6; break;
        case 'N': atom.atomic_number = 7; break;
        case 'O': atom.atomic_number = 8; break;
        case 'P': atom.atomic_number = 15; break;
        case 'S': atom.atomic_number = 16; break;
        case 'F': atom.atomic_number = 9; break;
        case 'I': atom.atomic_number = 53; break;
        case 'b': atom.atomic_number = 5; atom.aromatic = true; break;
        case 'c': atom.atomic_number = 6; atom.aromatic = true; break;
        case 'n': atom.atomic_number = 7; atom.aromatic = true; break;
        case 'o': atom.atomic_number = 8; atom.aromatic = true; break;
        case 'p': atom.atomic_number = 15; atom.aromatic = true; break;
        case 's': atom.atomic_number = 16; atom.aromatic = true; break;
        default:
          throw ParseError(start, std::string("unknown symbol '") + c + "'");
      }
      ++pos_;
    }
    add_atom(atom, start);
  }

  void bracket_atom() {
    const std::size_t start = pos_;
    ++pos_;
    auto at_end = [&] { return pos_ >= s_.size(); };
    if (at_end()) throw ParseError(start, "unterminated bracket atom");
    if (is_digit(s_[pos_])) throw ParseError(pos_, "isotopes are not supported");
    Atom atom;
    atom.bracket = true;
    const char c = s_[pos_];
    if (is_lower(c)) {
      atom.aromatic = true;
      std::string_view two = s_.substr(pos_, 2);
      if (two == "se" || two == "as") {
        atom.atomic_number = two == "se" ? 34 : 33;
        pos_ += 2;
      } else {
        const std::string upper(1, static_cast<char>(c - 'a' + 'A'));
        if (std::string_view("bcnops").find(c) == std::string_view::npos)
          throw ParseError(pos_, std::string("unknown aromatic symbol '") + c + "'");
        atom.atomic_number = atomic_number(upper);
        ++pos_;
      }
    } else if (is_upper(c)) {
      int z = 0;
      if (pos_ + 1 < s_.size() && is_lower(s_[pos_ + 1])) z = atomic_number(s_.substr(pos_, 2));
      if (z != 0) {
        pos_ += 2;
      } else {
        z = atomic_number(s_.substr(pos_, 1));
        if (z == 0) throw ParseError(pos_, std::string("unknown element '") + c + "'");
        ++pos_;
      }
      atom.atomic_number = z;
    } else {
      throw ParseError(pos_, "expected an element symbol");
    }
    if (!at_end() && s_[pos_] == '@') throw ParseError(pos_, "chirality is not supported");
    if (!at_end() && s_[pos_] == 'H') {
      ++pos_;
      atom.explicit_h = 1;
      if (!at_end() && is_digit(s_[pos_])) {
        atom.explicit_h = s_[pos_] - '0';
        ++pos_;
      }
    }
    if (!at_end() && (s_[pos_] == '+' || s_[pos_] == '-')) {
      const char sign = s_[pos_];
      const int unit = sign == '+' ? 1 : -1;
      ++pos_;
      int magnitude = 1;
      if (!at_end() && is_digit(s_[pos_])) {
        magnitude = s_[pos_] - '0';
        ++pos_;
      } else {
        while (!at_end() && s_[pos_] == sign) {
          ++magnitude;
          ++pos_;
        }
      }
      atom.charge = unit * magnitude;
    }
    if (at_end()) throw ParseError(start, "unterminated bracket atom");
    if (s_[pos_] != ']') throw ParseError(pos_, "unexpected character in bracket atom");
    ++pos_;
    add_atom(atom, start);
  }

  void add_atom(const Atom& atom, std::size_t offset) {
    const int index = static_cast<int>(g_.atoms.size());
    g_.atoms.push_back(atom);
    atom_offset_.push_back(offset);
    if (prev_ >= 0) add_bond(prev_, index, pending_, pending_ ? pending_offset_ : offset);
    pending_.reset();
    prev_ = index;
  }

  void add_bond(int a, int b, std::optional<BondOrder> order, std::size_t offset) {
    const Atom& x = g_.atoms[static_cast<std::size_t>(a)];
    const Atom& y = g_.atoms[static_cast<std::size_t>(b)];
    const BondOrder o = order ? *order
                        : (x.aromatic && y.aromatic) ? BondOrder::kAromatic
                                                     : BondOrder::kSingle;
    if (o == BondOrder::kAromatic && !(x.aromatic && y.aromatic))
      throw ParseError(offset, "aromatic bond between non-aromatic atoms");
    for (const Bond& e : g_.bonds)
      if ((e.a == a && e.b == b) || (e.a == b && e.b == a))
        throw ParseError(offset, "duplicate bond");
    g_.bonds.push_back({a, b, o});
  }

  void check_valences() {
    std::vector<int> sum(g_.atoms.size(), 0), aromatic_bonds(g_.atoms.size(), 0);
    for (const Bond& e : g_.bonds) {
      const int w = e.order == BondOrder::kAromatic ? 1 : static_cast<int>(e.order);
      for (int end : {e.a, e.b}) {
        sum[static_cast<std::size_t>(end)] += w;
        if (e.order == BondOrder::kAromatic) ++aromatic_bonds[static_cast<std::size_t>(end)];
      }
    }
    for (std::size_t i = 0; i < g_.atoms.size(); ++i) {
      Atom& atom = g_.atoms[i];
      if (atom.aromatic && aromatic_bonds[i] < 2)
        throw ParseError(atom_offset_[i], "aromatic atom outside an aromatic ring");
      // An aromatic carbon or boron contributes one extra bond to the pi system.
      const bool pi = atom.aromatic && (atom.atomic_number == 5 || atom.atomic_number == 6);
      const int used = sum[i] + (pi ? 1 : 0) + atom.explicit_h;
      const auto limit = max_valence(atom.atomic_number, atom.charge);
      if (limit && used > *limit)
        throw ParseError(atom_offset_[i], "valence " + std::to_string(used) + " exceeds " +
                                              std::to_string(*limit) + " for " +
                                              std::string(element_symbol(atom.atomic_number)));
      if (atom.bracket) continue;
      if (atom.aromatic) {
        atom.implicit_h = pi ? std::max(0, normal_valences(atom.atomic_number).front() - used) : 0;
        continue;
      }
      for (int v : normal_valences(atom.atomic_number)) {
        if (v >= used) {
          atom.implicit_h = v - used;
          break;
        }
      }
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  MolGraph g_;
  std::vector<std::size_t> atom_offset_;
  int prev_ = -1;
  std::optional<BondOrder> pending_;
  std::size_t pending_offset_ = 0;
  std::vector<Branch> branches_;
  std::map<int, OpenRing> rings_;
};

}  // namespace

MolGraph parse_smiles(std::string_view text) { return Parser(text).run(); }

std::vector<std::string> tokenize_smiles(std::string_view text) {
  static constexpr std::string_view kSingles = "BCNOPSFIbcnops0123456789()=#-:";
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '[') {
      const std::size_t close = text.find(']', i);
      if (close == std::string_view::npos) throw ParseError(i, "unterminated bracket expression");
      out.emplace_back(text.substr(i, close - i + 1));
      i = close + 1;
    } else if (c == '%') {
      if (i + 2 >= text.size() || !is_digit(text[i + 1]) || !is_digit(text[i + 2]))
        throw ParseError(i, "'%' must be followed by two digits");
      out.emplace_back(text.substr(i, 3));
      i += 3;
    } else if ((c == 'C' || c == 'B') && i + 1 < text.size() &&
               text[i + 1] == (c == 'C' ? 'l' : 'r')) {
      out.emplace_back(text.substr(i, 2));
      i += 2;
    } else if (kSingles.find(c) != std::string_view::npos) {
      out.emplace_back(1, c);
      ++i;
    } else {
      throw ParseError(i, std::string("character '") + c + "' outside the token table");
    }
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) out += t;
  return out;
}

bool is_aromatic_token(std::string_view token) {
  if (token.size() == 1) return std::string_view("bcnops").find(token[0]) != std::string_view::npos;
  if (token.size() >= 3 && token.front() == '[') return is_lower(token[1]);
  return false;
}

}  // namespace molspace::chem
