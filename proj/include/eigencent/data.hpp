// Corpus ingestion (TSV formats for sentence, document and pair tasks),
// vocabulary construction and the seeded synthetic keyword task.
#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "eigencent/model.hpp"
#include "eigencent/numerics.hpp"

namespace eigencent {

struct Vocab {
    std::vector<std::string> tokens;  // index == id
    std::unordered_map<std::string, TokenId> index;
    TokenId pad{0}, unk{1};

    static Vocab base() {
        Vocab v;
        v.add("<pad>");
        v.add("<unk>");
        return v;
    }

    TokenId add(const std::string& tok) {
        auto it = index.find(tok);
        if (it != index.end()) return it->second;
        const TokenId id = static_cast<TokenId>(tokens.size());
        tokens.push_back(tok);
        index.emplace(tok, id);
        return id;
    }

    TokenId id_of(const std::string& tok) const {
        auto it = index.find(tok);
        return it == index.end() ? unk : it->second;
    }

    std::optional<TokenId> find(const std::string& tok) const {
        auto it = index.find(tok);
        if (it == index.end()) return std::nullopt;
        return it->second;
    }

    std::size_t size() const { return tokens.size(); }
};

/// One training example. parts holds 1 sentence (sentence/synthetic task),
/// all sentences of a document, or exactly {premise, hypothesis}.
struct Example {
    std::vector<std::vector<TokenId>> parts;
    int label{0};

    std::size_t max_part_len() const {
        std::size_t m = 0;
        for (const auto& p : parts) m = std::max(m, p.size());
        return m;
    }
};

struct Dataset {
    TaskKind task{TaskKind::sentence};
    std::size_t n_classes{0};
    std::vector<Example> examples;

    std::size_t size() const { return examples.size(); }
};

// ---------------------------------------------------------------------------
// TSV ingestion
// ---------------------------------------------------------------------------

struct RawExample {
    std::vector<std::vector<std::string>> parts;
    int label{0};
};

namespace detail {

inline std::vector<std::string> split_whitespace(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream iss(s);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

inline std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

}  // namespace detail

/// Reads one of the line formats:
///   sentence:  label<TAB>token token ...
///   document:  label<TAB>tok tok ||| tok tok ...
///   pair:      label<TAB>premise tokens<TAB>hypothesis tokens
inline std::vector<RawExample> read_tsv(std::istream& in, TaskKind task) {
    std::vector<RawExample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = detail::split_on(line, '\t');
        require(fields.size() >= 2,
                "read_tsv: line " + std::to_string(lineno) + " has no tab separator");
        RawExample ex;
        try {
            ex.label = std::stoi(fields[0]);
        } catch (...) {
            throw ContractViolation("read_tsv: bad label on line " + std::to_string(lineno));
        }
        require(ex.label >= 0, "read_tsv: negative label on line " + std::to_string(lineno));
        if (task == TaskKind::pair) {
            require(fields.size() >= 3, "read_tsv: pair line " + std::to_string(lineno) +
                                            " needs premise and hypothesis fields");
            ex.parts.push_back(detail::split_whitespace(fields[1]));
            ex.parts.push_back(detail::split_whitespace(fields[2]));
        } else if (task == TaskKind::document) {
            std::size_t start = 0;
            const std::string& body = fields[1];
            for (;;) {
                const std::size_t pos = body.find(" ||| ", start);
                const std::string chunk =
                    pos == std::string::npos ? body.substr(start) : body.substr(start, pos - start);
                auto toks = detail::split_whitespace(chunk);
                if (!toks.empty()) ex.parts.push_back(std::move(toks));
                if (pos == std::string::npos) break;
                start = pos + 5;
            }
        } else {
            ex.parts.push_back(detail::split_whitespace(fields[1]));
        }
        out.push_back(std::move(ex));
    }
    return out;
}

inline std::vector<RawExample> read_tsv_file(const std::string& path, TaskKind task) {
    std::ifstream in(path);
    require(in.good(), "cannot open corpus file: " + path);
    return read_tsv(in, task);
}

/// Frequency-threshold vocabulary over the training split.
inline Vocab build_vocab(const std::vector<RawExample>& raws, std::size_t min_freq) {
    std::unordered_map<std::string, std::size_t> counts;
    std::vector<std::string> order;  // first-seen order keeps ids reproducible
    for (const auto& ex : raws)
        for (const auto& part : ex.parts)
            for (const auto& tok : part) {
                auto it = counts.find(tok);
                if (it == counts.end()) {
                    counts.emplace(tok, 1);
                    order.push_back(tok);
                } else {
                    ++it->second;
                }
            }
    Vocab v = Vocab::base();
    for (const auto& tok : order)
        if (counts[tok] >= min_freq) v.add(tok);
    return v;
}

/// Encodes raw examples against a vocabulary; drops examples that end up with
/// no non-empty part.
inline Dataset encode_dataset(const std::vector<RawExample>& raws, const Vocab& vocab,
                              TaskKind task) {
    Dataset ds;
    ds.task = task;
    int max_label = -1;
    for (const auto& raw : raws) {
        Example ex;
        ex.label = raw.label;
        for (const auto& part : raw.parts) {
            std::vector<TokenId> ids;
            ids.reserve(part.size());
            for (const auto& tok : part) ids.push_back(vocab.id_of(tok));
            if (!ids.empty()) ex.parts.push_back(std::move(ids));
        }
        if (ex.parts.empty()) continue;
        if (task == TaskKind::pair && ex.parts.size() != 2) continue;
        max_label = std::max(max_label, ex.label);
        ds.examples.push_back(std::move(ex));
    }
    ds.n_classes = static_cast<std::size_t>(max_label + 1);
    return ds;
}

// ---------------------------------------------------------------------------
// synthetic keyword task
// ---------------------------------------------------------------------------

struct SyntheticTask {
    Vocab vocab;
    Dataset data;
};

/// Seeded keyword-detection task: each example contains exactly one class
/// keyword type scattered among distractor tokens; the label is the keyword's
/// class. Labels cycle through the classes so the distribution is uniform.
inline SyntheticTask make_synthetic_task(std::uint64_t seed, std::size_t n_classes,
                                         std::size_t vocab_size, double distractor_rate,
                                         std::size_t len_lo, std::size_t len_hi,
                                         std::size_t count) {
    require(n_classes >= 2, "make_synthetic_task: need at least two classes");
    require(vocab_size > n_classes, "make_synthetic_task: vocab must exceed class count");
    require(len_lo >= 1 && len_hi >= len_lo, "make_synthetic_task: bad length range");
    require(distractor_rate >= 0.0 && distractor_rate < 1.0,
            "make_synthetic_task: distractor_rate in [0,1)");

    SyntheticTask task;
    task.vocab = Vocab::base();
    std::vector<TokenId> keyword_ids, distractor_ids;
    for (std::size_t c = 0; c < n_classes; ++c)
        keyword_ids.push_back(task.vocab.add("kw" + std::to_string(c)));
    for (std::size_t w = 0; w + n_classes < vocab_size; ++w)
        distractor_ids.push_back(task.vocab.add("w" + std::to_string(w)));

    task.data.task = TaskKind::synthetic;
    task.data.n_classes = n_classes;
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t label = i % n_classes;
        const std::size_t len = len_lo + rng.uniform_below(len_hi - len_lo + 1);
        Example ex;
        ex.label = static_cast<int>(label);
        std::vector<TokenId> toks(len);
        bool has_keyword = false;
        for (std::size_t t = 0; t < len; ++t) {
            if (rng.uniform() >= distractor_rate) {
                toks[t] = keyword_ids[label];
                has_keyword = true;
            } else {
                toks[t] = distractor_ids[rng.uniform_below(distractor_ids.size())];
            }
        }
        if (!has_keyword) toks[rng.uniform_below(len)] = keyword_ids[label];
        ex.parts.push_back(std::move(toks));
        task.data.examples.push_back(std::move(ex));
    }
    rng.shuffle(task.data.examples);
    return task;
}

inline Dataset slice_dataset(const Dataset& ds, std::size_t begin, std::size_t end) {
    Dataset out;
    out.task = ds.task;
    out.n_classes = ds.n_classes;
    out.examples.assign(ds.examples.begin() + static_cast<std::ptrdiff_t>(begin),
                        ds.examples.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
}

}  // namespace eigencent
