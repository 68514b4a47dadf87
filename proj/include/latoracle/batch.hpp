#pragma once

#include <cstdio>
#include <memory>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "latoracle/lattice_io.hpp"
#include "latoracle/oracle.hpp"
#include "latoracle/parallel.hpp"

namespace latoracle {

inline constexpr const char* kVersion = "1.0.0";

inline std::string format_fixed(double x, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

inline constexpr const char* kOracleTsvHeader =
    "matched_prefix\tcontinuation\tlinear_cost\texact_bleu\treward_to_go";

/// One TSV row of oracle output. Token sequences are space-joined.
struct OracleRecord {
    std::vector<std::string> matched_prefix;
    std::vector<std::string> continuation;
    double linear_cost = 0.0;
    double exact_bleu = 0.0;
    double reward_to_go = 0.0;

    std::string tsv() const {
        auto join = [](const std::vector<std::string>& words) {
            std::string out;
            for (std::size_t i = 0; i < words.size(); ++i) {
                if (i) out += ' ';
                out += words[i];
            }
            return out;
        };
        return join(matched_prefix) + '\t' + join(continuation) + '\t' + format_fixed(linear_cost) +
               '\t' + format_fixed(exact_bleu) + '\t' + format_fixed(reward_to_go);
    }
};

inline OracleRecord to_record(const OracleResult& r, const SymbolTable& symtab) {
    OracleRecord rec;
    for (auto t : r.matched_prefix) rec.matched_prefix.push_back(symtab.str(t));
    for (auto t : r.continuation) rec.continuation.push_back(symtab.str(t));
    rec.linear_cost = r.linear_cost;
    rec.exact_bleu = r.exact_bleu;
    rec.reward_to_go = r.reward_to_go;
    return rec;
}

/// Batch oracle: line i of `refs` (and `prefixes`, when given) belongs to
/// lattice i. An empty prefix list means decoding from scratch.
inline std::vector<OracleResult> run_oracle_batch(const std::vector<Lattice>& lattices,
                                                  const std::vector<TokenSeq>& refs,
                                                  const std::vector<TokenSeq>* prefixes,
                                                  const ThetaParams& th, unsigned jobs) {
    if (refs.size() != lattices.size())
        throw InputError("got " + std::to_string(lattices.size()) + " lattices but " +
                         std::to_string(refs.size()) + " references");
    if (prefixes && prefixes->size() != lattices.size())
        throw InputError("got " + std::to_string(lattices.size()) + " lattices but " +
                         std::to_string(prefixes->size()) + " prefixes");
    for (std::size_t i = 0; i < refs.size(); ++i)
        if (refs[i].empty()) throw InputError("reference line " + std::to_string(i + 1) + " is empty");

    std::vector<OracleResult> results(lattices.size());
    parallel_for(lattices.size(), jobs, [&](std::size_t i) {
        const Oracle oracle(lattices[i]);
        results[i] = prefixes ? oracle.continue_prefix((*prefixes)[i], refs[i], th)
                              : oracle.decode(refs[i], th);
    });
    return results;
}

inline void write_oracle_tsv(std::ostream& out, const std::vector<OracleResult>& results,
                             const SymbolTable& symtab) {
    out << kOracleTsvHeader << '\n';
    for (const auto& r : results) out << to_record(r, symtab).tsv() << '\n';
}

/// Loaded lattice set for repeated token-level queries (the surface scripting
/// bindings wrap). Lattices are parsed and expanded once at load time and the
/// handle is immutable afterwards; `query` may be called concurrently.
class OracleHandle {
public:
    static OracleHandle load(const std::string& path, double p, double r) {
        OracleHandle h;
        h.theta_ = ThetaParams(p, r);
        h.symtab_ = std::make_shared<SymbolTable>();
        for (const auto& l : read_lattice_file(path, *h.symtab_)) h.oracles_.emplace_back(l);
        return h;
    }

    std::size_t size() const { return oracles_.size(); }
    const ThetaParams& theta() const { return theta_; }

    OracleRecord query(std::size_t example_id, const std::vector<std::string>& prefix,
                       const std::vector<std::string>& ref) const {
        if (example_id >= oracles_.size())
            throw InputError("unknown example id " + std::to_string(example_id));
        if (ref.empty()) throw InputError("reference is empty");
        // Words the lattices never saw get ids past the shared table; they
        // cannot match any arc, so the shared table stays read-only.
        std::unordered_map<std::string, TokenId> extra;
        auto lookup = [&](const std::string& w) {
            const TokenId id = symtab_->find(w);
            if (id != kBos) return id;
            auto [it, inserted] =
                extra.try_emplace(w, static_cast<TokenId>(symtab_->size() + extra.size()));
            return it->second;
        };
        TokenSeq p, rf;
        for (const auto& w : prefix) p.push_back(lookup(w));
        for (const auto& w : ref) rf.push_back(lookup(w));
        return to_record(oracles_[example_id].continue_prefix(p, rf, theta_), *symtab_);
    }

private:
    OracleHandle() = default;

    ThetaParams theta_;
    std::shared_ptr<SymbolTable> symtab_;
    std::vector<Oracle> oracles_;
};

}  // namespace latoracle
