#pragma once

// Boolean composition of generation conditions: parsing, CNF conversion and
// the accept/reject verdict computed from per-condition lift scores.
//
// Grammar (whitespace insignificant):
//   expr  := or
//   or    := and ("|" and)*
//   and   := unary ("&" unary)*
//   unary := "!" unary | "(" expr ")" | IDENT
//   IDENT := [A-Za-z_][A-Za-z0-9_]*

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "complift/error.hpp"

namespace complift::algebra {

enum class node_kind { literal, conjunction, disjunction, negation };

struct expr {
    node_kind kind = node_kind::literal;
    std::string name;            // literal only
    std::vector<expr> children;  // negation: exactly 1; and/or: >= 2

    static expr literal(std::string id) { return {node_kind::literal, std::move(id), {}}; }
    static expr negate(expr e) { return {node_kind::negation, {}, {std::move(e)}}; }
    static expr all_of(std::vector<expr> es) { return {node_kind::conjunction, {}, std::move(es)}; }
    static expr any_of(std::vector<expr> es) { return {node_kind::disjunction, {}, std::move(es)}; }

    friend bool operator==(const expr&, const expr&) = default;
};

struct signed_literal {
    std::string id;
    bool positive = true;
    friend bool operator==(const signed_literal&, const signed_literal&) = default;
};

using clause = std::vector<signed_literal>;

// Conjunction of disjunctions.
struct cnf {
    std::vector<clause> clauses;
    friend bool operator==(const cnf&, const cnf&) = default;
};

namespace detail {

class parser {
public:
    explicit parser(std::string_view text) : text_(text) {}

    expr parse_all() {
        expr e = parse_or();
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected character '" + std::string(1, text_[pos_]) + "'");
        return e;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& msg) const { throw parse_error(msg, pos_); }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    expr parse_or() {
        std::vector<expr> terms;
        terms.push_back(parse_and());
        while (accept('|')) terms.push_back(parse_and());
        if (terms.size() == 1) return std::move(terms.front());
        return expr::any_of(std::move(terms));
    }

    expr parse_and() {
        std::vector<expr> terms;
        terms.push_back(parse_unary());
        while (accept('&')) terms.push_back(parse_unary());
        if (terms.size() == 1) return std::move(terms.front());
        return expr::all_of(std::move(terms));
    }

    expr parse_unary() {
        if (accept('!')) return expr::negate(parse_unary());
        if (accept('(')) {
            expr inner = parse_or();
            if (!accept(')')) fail("expected ')'");
            return inner;
        }
        skip_ws();
        if (pos_ >= text_.size()) fail("unexpected end of expression");
        const auto is_head = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
        const auto is_tail = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
        if (!is_head(text_[pos_])) fail("expected identifier, '!' or '('");
        const std::size_t start = pos_;
        while (pos_ < text_.size() && is_tail(text_[pos_])) ++pos_;
        return expr::literal(std::string(text_.substr(start, pos_ - start)));
    }
};

inline void to_string_impl(const expr& e, std::string& out) {
    const auto child = [&out](const expr& c, bool parens) {
        if (parens) out += '(';
        to_string_impl(c, out);
        if (parens) out += ')';
    };
    switch (e.kind) {
    case node_kind::literal:
        out += e.name;
        break;
    case node_kind::negation:
        out += '!';
        child(e.children.front(), e.children.front().kind == node_kind::conjunction ||
                                      e.children.front().kind == node_kind::disjunction);
        break;
    case node_kind::conjunction:
        for (std::size_t i = 0; i < e.children.size(); ++i) {
            if (i) out += " & ";
            const auto k = e.children[i].kind;
            child(e.children[i], k == node_kind::conjunction || k == node_kind::disjunction);
        }
        break;
    case node_kind::disjunction:
        for (std::size_t i = 0; i < e.children.size(); ++i) {
            if (i) out += " | ";
            child(e.children[i], e.children[i].kind == node_kind::disjunction);
        }
        break;
    }
}

// Negation normal form pushed into CNF. `negated` tracks an odd number of
// enclosing negations (De Morgan).
inline std::vector<clause> cnf_impl(const expr& e, bool negated) {
    switch (e.kind) {
    case node_kind::literal:
        return {clause{signed_literal{e.name, !negated}}};
    case node_kind::negation:
        return cnf_impl(e.children.front(), !negated);
    case node_kind::conjunction:
    case node_kind::disjunction: {
        const bool as_and = (e.kind == node_kind::conjunction) != negated;
        if (as_and) {
            std::vector<clause> out;
            for (const auto& c : e.children) {
                auto part = cnf_impl(c, negated);
                out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
            }
            return out;
        }
        // OR distributes over AND: cross product of the children's clause sets.
        std::vector<clause> acc{clause{}};
        for (const auto& c : e.children) {
            const auto part = cnf_impl(c, negated);
            std::vector<clause> next;
            next.reserve(acc.size() * part.size());
            for (const auto& left : acc) {
                for (const auto& right : part) {
                    clause merged = left;
                    merged.insert(merged.end(), right.begin(), right.end());
                    next.push_back(std::move(merged));
                }
            }
            acc = std::move(next);
        }
        return acc;
    }
    }
    return {};
}

}  // namespace detail

inline expr parse(std::string_view text) { return detail::parser(text).parse_all(); }

// Canonical form: parse(to_string(e)) == e for every well-formed e.
inline std::string to_string(const expr& e) {
    std::string out;
    detail::to_string_impl(e, out);
    return out;
}

inline std::string to_string(const cnf& form) {
    std::string out;
    for (std::size_t k = 0; k < form.clauses.size(); ++k) {
        if (k) out += " & ";
        out += '(';
        for (std::size_t m = 0; m < form.clauses[k].size(); ++m) {
            if (m) out += " | ";
            if (!form.clauses[k][m].positive) out += '!';
            out += form.clauses[k][m].id;
        }
        out += ')';
    }
    return out;
}

// Throws config_error if the tree violates arity rules.
inline void validate(const expr& e) {
    switch (e.kind) {
    case node_kind::literal:
        if (e.name.empty() || !e.children.empty()) throw config_error("malformed literal node");
        return;
    case node_kind::negation:
        if (e.children.size() != 1) throw config_error("negation must have exactly one child");
        break;
    case node_kind::conjunction:
    case node_kind::disjunction:
        if (e.children.size() < 2) throw config_error("and/or nodes need at least two children");
        break;
    }
    for (const auto& c : e.children) validate(c);
}

inline cnf to_cnf(const expr& e) {
    validate(e);
    return cnf{detail::cnf_impl(e, false)};
}

// Distinct identifiers in order of first appearance.
inline std::vector<std::string> identifiers(const expr& e) {
    std::vector<std::string> out;
    const auto walk = [&out](const auto& self, const expr& node) -> void {
        if (node.kind == node_kind::literal) {
            if (std::find(out.begin(), out.end(), node.name) == out.end()) out.push_back(node.name);
            return;
        }
        for (const auto& c : node.children) self(self, c);
    };
    walk(walk, e);
    return out;
}

inline bool evaluate(const expr& e, const std::map<std::string, bool>& truth) {
    switch (e.kind) {
    case node_kind::literal: {
        const auto it = truth.find(e.name);
        if (it == truth.end()) throw config_error("no truth value for condition '" + e.name + "'");
        return it->second;
    }
    case node_kind::negation:
        return !evaluate(e.children.front(), truth);
    case node_kind::conjunction:
        return std::all_of(e.children.begin(), e.children.end(),
                           [&](const expr& c) { return evaluate(c, truth); });
    case node_kind::disjunction:
        return std::any_of(e.children.begin(), e.children.end(),
                           [&](const expr& c) { return evaluate(c, truth); });
    }
    return false;
}

// CNF with identifiers resolved to positions in a condition list.
struct indexed_cnf {
    struct literal {
        std::size_t index;
        bool positive;
    };
    std::vector<std::vector<literal>> clauses;
};

inline indexed_cnf bind(const cnf& form, std::span<const std::string> conditions) {
    indexed_cnf out;
    out.clauses.reserve(form.clauses.size());
    for (const auto& cl : form.clauses) {
        auto& dst = out.clauses.emplace_back();
        for (const auto& lit : cl) {
            const auto it = std::find(conditions.begin(), conditions.end(), lit.id);
            if (it == conditions.end()) throw config_error("unknown condition '" + lit.id + "'");
            dst.push_back({static_cast<std::size_t>(it - conditions.begin()), lit.positive});
        }
    }
    return out;
}

// min over clauses of (max over literals of the signed lift), without the
// zero floor. This is the composed lift plotted in histograms.
inline double composed_lift(std::span<const double> lifts, const indexed_cnf& form) {
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& cl : form.clauses) {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& lit : cl) {
            if (lit.index >= lifts.size()) throw config_error("missing lift score for condition index");
            best = std::max(best, lit.positive ? lifts[lit.index] : -lifts[lit.index]);
        }
        worst = std::min(worst, best);
    }
    return worst;
}

// Each clause score starts at 0 and takes the max of its signed lifts; the
// sample is accepted iff the smallest clause score is strictly positive.
inline bool compose_verdict(std::span<const double> lifts, const indexed_cnf& form) {
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& cl : form.clauses) {
        double s = 0.0;
        for (const auto& lit : cl) {
            if (lit.index >= lifts.size()) throw config_error("missing lift score for condition index");
            s = std::max(s, lit.positive ? lifts[lit.index] : -lifts[lit.index]);
        }
        worst = std::min(worst, s);
    }
    return worst > 0.0;
}

inline bool compose_verdict(const std::map<std::string, double>& lifts, const cnf& form) {
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& cl : form.clauses) {
        double s = 0.0;
        for (const auto& lit : cl) {
            const auto it = lifts.find(lit.id);
            if (it == lifts.end()) throw config_error("missing lift score for condition '" + lit.id + "'");
            s = std::max(s, lit.positive ? it->second : -it->second);
        }
        worst = std::min(worst, s);
    }
    return worst > 0.0;
}

}  // namespace complift::algebra
