#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "jmvl/common.hpp"

namespace jmvl {

/// One fully-connected layer atom from the architecture notation.
/// `Dk` is a linear layer with k units; a trailing `R` adds ReLU. The `B`
/// (batch norm) and `S` (sigmoid) suffixes parse but are rejected at build
/// time, since only plain MLPs are executable here.
struct LayerAtom {
    std::size_t units = 0;
    bool relu = false;
    bool batch_norm = false;
    bool sigmoid = false;

    friend bool operator==(const LayerAtom&, const LayerAtom&) = default;
};

/// Parsed architecture string: an optional leading two-branch group whose
/// outputs are concatenated, followed by a chain of atoms.
struct ArchSpec {
    std::optional<std::pair<std::vector<LayerAtom>, std::vector<LayerAtom>>> branches;
    std::vector<LayerAtom> tail;

    bool has_branches() const { return branches.has_value(); }
    std::size_t input_count() const { return has_branches() ? 2 : 1; }

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

namespace detail {

class ArchParser {
public:
    explicit ArchParser(std::string_view text) : text_(text) {}

    ArchSpec parse() {
        if (text_.empty()) throw ParseError("empty architecture string", 0);
        ArchSpec spec;
        skip_ws();
        if (peek() == '(') {
            std::size_t open = pos_;
            ++pos_;
            auto first = parse_chain(true);
            skip_ws();
            if (peek() != ',') throw ParseError("expected ',' in branch group", pos_);
            ++pos_;
            auto second = parse_chain(true);
            skip_ws();
            if (peek() != ')') throw ParseError("unterminated branch group opened", open);
            ++pos_;
            spec.branches = {std::move(first), std::move(second)};
            skip_ws();
            if (!at_end()) {
                if (peek() != '-') throw ParseError("expected '-' or end after branch group", pos_);
                ++pos_;
                spec.tail = parse_chain(false);
            }
        } else {
            spec.tail = parse_chain(false);
        }
        skip_ws();
        if (!at_end()) throw ParseError("unexpected trailing input", pos_);
        if (!spec.has_branches() && spec.tail.empty()) throw ParseError("architecture has no layers", 0);
        return spec;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;

    bool at_end() const { return pos_ >= text_.size(); }
    char peek() const { return at_end() ? '\0' : text_[pos_]; }
    void skip_ws() {
        while (!at_end() && (text_[pos_] == ' ' || text_[pos_] == '\t')) ++pos_;
    }

    std::vector<LayerAtom> parse_chain(bool in_branch) {
        std::vector<LayerAtom> atoms;
        while (true) {
            skip_ws();
            atoms.push_back(parse_atom(in_branch));
            skip_ws();
            if (peek() == '-') {
                ++pos_;
                continue;
            }
            break;
        }
        return atoms;
    }

    LayerAtom parse_atom(bool in_branch) {
        skip_ws();
        if (at_end()) throw ParseError(in_branch ? "empty branch" : "expected layer atom", pos_);
        char c = peek();
        if (c == '(') throw ParseError("nested branch group", pos_);
        if (c == ',' || c == ')')
            throw ParseError(in_branch ? "empty branch" : "unexpected '" + std::string(1, c) + "'", pos_);
        if (c != 'D') throw ParseError("unknown token '" + std::string(1, c) + "'", pos_);
        std::size_t start = pos_;
        ++pos_;
        if (at_end() || !std::isdigit(static_cast<unsigned char>(peek())))
            throw ParseError("expected unit count after 'D'", pos_);
        std::size_t units = 0;
        while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) {
            units = units * 10 + static_cast<std::size_t>(peek() - '0');
            if (units > 1000000) throw ParseError("unit count too large", start);
            ++pos_;
        }
        if (units == 0) throw ParseError("layer must have at least one unit", start);
        LayerAtom atom;
        atom.units = units;
        while (!at_end()) {
            char f = peek();
            if (f == 'B' && !atom.batch_norm) atom.batch_norm = true;
            else if (f == 'R' && !atom.relu) atom.relu = true;
            else if (f == 'S' && !atom.sigmoid) atom.sigmoid = true;
            else break;
            ++pos_;
        }
        return atom;
    }
};

inline std::string render_atom(const LayerAtom& a) {
    std::string out = "D" + std::to_string(a.units);
    if (a.batch_norm) out += 'B';
    if (a.relu) out += 'R';
    if (a.sigmoid) out += 'S';
    return out;
}

inline std::string render_chain(const std::vector<LayerAtom>& atoms) {
    std::string out;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        if (i) out += '-';
        out += render_atom(atoms[i]);
    }
    return out;
}

}  // namespace detail

inline ArchSpec parse_arch(std::string_view text) { return detail::ArchParser(text).parse(); }

/// Canonical form; render(parse(s)) is a fixed point.
inline std::string render_arch(const ArchSpec& spec) {
    std::string out;
    if (spec.has_branches()) {
        out = "(" + detail::render_chain(spec.branches->first) + ", " +
              detail::render_chain(spec.branches->second) + ")";
        if (!spec.tail.empty()) out += "-" + detail::render_chain(spec.tail);
    } else {
        out = detail::render_chain(spec.tail);
    }
    return out;
}

}  // namespace jmvl
