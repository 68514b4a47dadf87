#pragma once

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latoracle/error.hpp"
#include "latoracle/lattice.hpp"
#include "latoracle/symbols.hpp"

namespace latoracle {

namespace detail {

// Recursive-descent reader for Moses' Python Lattice Format:
//   lattice := '(' node {',' node} [','] ')'
//   node    := '(' edge {',' edge} [','] ')'
//   edge    := '(' quoted-label ',' cost ',' offset ')'
class PlfReader {
public:
    explicit PlfReader(std::string_view text) : text_(text) {}

    struct RawEdge {
        std::string label;
        double cost;
        long offset;
    };

    std::vector<std::vector<RawEdge>> read() {
        std::vector<std::vector<RawEdge>> nodes;
        expect('(');
        while (!peek_is(')')) {
            nodes.push_back(read_node());
            if (!accept(',')) break;
        }
        expect(')');
        skip_ws();
        if (pos_ != text_.size()) fail("trailing characters after lattice");
        return nodes;
    }

private:
    std::vector<RawEdge> read_node() {
        std::vector<RawEdge> edges;
        expect('(');
        while (!peek_is(')')) {
            edges.push_back(read_edge());
            if (!accept(',')) break;
        }
        expect(')');
        return edges;
    }

    RawEdge read_edge() {
        RawEdge e;
        expect('(');
        e.label = read_string();
        expect(',');
        e.cost = read_number();
        expect(',');
        const double off = read_number();
        if (off != static_cast<double>(static_cast<long>(off))) fail("edge offset must be an integer");
        e.offset = static_cast<long>(off);
        accept(',');
        expect(')');
        return e;
    }

    std::string read_string() {
        skip_ws();
        if (pos_ >= text_.size() || (text_[pos_] != '\'' && text_[pos_] != '"'))
            fail("expected quoted edge label");
        const char quote = text_[pos_++];
        std::string out;
        while (pos_ < text_.size() && text_[pos_] != quote) {
            char c = text_[pos_++];
            if (c == '\\') {
                if (pos_ >= text_.size()) fail("dangling escape in label");
                c = text_[pos_++];
            }
            out += c;
        }
        if (pos_ >= text_.size()) fail("unterminated label string");
        ++pos_;
        return out;
    }

    double read_number() {
        skip_ws();
        std::size_t end = pos_;
        while (end < text_.size() &&
               (std::isdigit(static_cast<unsigned char>(text_[end])) || text_[end] == '-' ||
                text_[end] == '+' || text_[end] == '.' || text_[end] == 'e' || text_[end] == 'E'))
            ++end;
        double value = 0.0;
        const char* first = text_.data() + pos_;
        const char* last = text_.data() + end;
        if (first != last && *first == '+') ++first;
        auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec != std::errc() || ptr != last || end == pos_) fail("expected a number");
        pos_ = end;
        return value;
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    bool peek_is(char c) {
        skip_ws();
        return pos_ < text_.size() && text_[pos_] == c;
    }
    bool accept(char c) {
        if (!peek_is(c)) return false;
        ++pos_;
        return true;
    }
    void expect(char c) {
        if (!accept(c)) fail(std::string("expected '") + c + "'");
    }
    [[noreturn]] void fail(const std::string& what) const {
        throw InputError("PLF column " + std::to_string(pos_ + 1) + ": " + what);
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

inline std::string format_double(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, ptr);
}

}  // namespace detail

/// Parses one PLF lattice. Node i's edges lead to node i + offset; the state
/// after the last node is the single final state.
inline Lattice parse_plf(std::string_view text, SymbolTable& symtab) {
    const auto nodes = detail::PlfReader(text).read();
    if (nodes.empty()) throw InputError("PLF lattice has zero nodes");
    const std::size_t n = nodes.size();
    std::vector<Transition> transitions;
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& e : nodes[i]) {
            if (e.offset < 1) throw InputError("PLF edge offset must be >= 1");
            if (i + static_cast<std::size_t>(e.offset) > n)
                throw InputError("PLF edge offset points beyond the last node");
            auto labels = symtab.intern_all(e.label);
            if (labels.empty()) throw InputError("PLF edge with empty label");
            transitions.push_back({static_cast<StateId>(i),
                                   static_cast<StateId>(i + static_cast<std::size_t>(e.offset)),
                                   std::move(labels), e.cost});
        }
    }
    return Lattice::build(n + 1, std::move(transitions), {static_cast<StateId>(n)});
}

/// Serializes a lattice whose only final state is last in topological order.
inline std::string write_plf(const Lattice& l, const SymbolTable& symtab) {
    const auto& order = l.topo_order();
    if (l.finals().size() != 1 || l.finals().front() != order.back())
        throw InputError("PLF requires a single final state that is last in topological order");
    std::vector<std::size_t> pos(l.num_states());
    for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;

    std::string out = "(";
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        out += '(';
        for (auto id : l.out()[order[i]]) {
            const auto& t = l.transitions()[id];
            std::string label = symtab.join(t.labels);
            out += "('";
            for (char c : label) {
                if (c == '\'' || c == '\\') out += '\\';
                out += c;
            }
            out += "', " + detail::format_double(t.model_cost) + ", " + std::to_string(pos[t.to] - i) + "),";
        }
        out += "),";
    }
    out += ')';
    return out;
}

/// JSON mirror format:
///   {"states": N, "finals": [..], "edges": [{"from":i,"to":j,"labels":["a"],"cost":x}]}
inline Lattice parse_json_lattice(const nlohmann::json& j, SymbolTable& symtab) {
    try {
        const auto n = j.at("states").get<std::size_t>();
        std::vector<StateId> finals = j.at("finals").get<std::vector<StateId>>();
        std::vector<Transition> transitions;
        for (const auto& e : j.at("edges")) {
            Transition t;
            t.from = e.at("from").get<StateId>();
            t.to = e.at("to").get<StateId>();
            const auto& labels = e.at("labels");
            if (labels.is_string()) {
                t.labels = symtab.intern_all(labels.get<std::string>());
            } else {
                for (const auto& w : labels) {
                    auto toks = symtab.intern_all(w.get<std::string>());
                    t.labels.insert(t.labels.end(), toks.begin(), toks.end());
                }
            }
            t.model_cost = e.value("cost", 0.0);
            transitions.push_back(std::move(t));
        }
        return Lattice::build(n, std::move(transitions), std::move(finals));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("JSON lattice: ") + e.what());
    }
}

inline Lattice parse_json_lattice(std::string_view text, SymbolTable& symtab) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("JSON lattice: ") + e.what());
    }
    return parse_json_lattice(j, symtab);
}

inline nlohmann::json to_json(const Lattice& l, const SymbolTable& symtab) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& t : l.transitions()) {
        std::vector<std::string> labels;
        for (auto id : t.labels) labels.push_back(symtab.str(id));
        edges.push_back({{"from", t.from}, {"to", t.to}, {"labels", labels}, {"cost", t.model_cost}});
    }
    return {{"states", l.num_states()}, {"finals", l.finals()}, {"edges", edges}};
}

/// Dispatches on the first non-blank character: '(' is PLF, '{' is JSON.
inline Lattice parse_lattice(std::string_view text, SymbolTable& symtab) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) throw InputError("empty lattice");
    if (text[first] == '{') return parse_json_lattice(text.substr(first), symtab);
    return parse_plf(text.substr(first), symtab);
}

/// One lattice per line. Errors carry the 1-based line number.
inline std::vector<Lattice> read_lattices(std::istream& in, SymbolTable& symtab) {
    std::vector<Lattice> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        try {
            out.push_back(parse_lattice(line, symtab));
        } catch (const InputError& e) {
            throw InputError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<Lattice> read_lattice_file(const std::string& path, SymbolTable& symtab) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open lattice file '" + path + "'");
    try {
        return read_lattices(in, symtab);
    } catch (const InputError& e) {
        throw InputError(path + ": " + e.what());
    }
}

/// Token lines (references, prefixes); an empty line is an empty sequence.
inline std::vector<TokenSeq> read_token_lines(const std::string& path, SymbolTable& symtab) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open token file '" + path + "'");
    std::vector<TokenSeq> out;
    std::string line;
    while (std::getline(in, line)) out.push_back(symtab.intern_all(line));
    return out;
}

}  // namespace latoracle
