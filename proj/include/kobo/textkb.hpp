#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "kobo/common.hpp"

namespace kobo {

// Rule-based concept extraction with negation marks. This is the desk-scale
// concept detector: a lexicon scan with longest-match wins plus a NegEx-style
// trigger window (6 preceding tokens, blocked by sentence boundaries).

// Lowercased, punctuation-separated token list. Alphanumeric runs are words;
// any other non-space character is a single-character token.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&]() {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    for (char raw : text) {
        const unsigned char c = static_cast<unsigned char>(raw);
        if (std::isalnum(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
            if (!std::isspace(c)) tokens.push_back(std::string(1, raw));
        }
    }
    flush();
    return tokens;
}

// Default trigger phrases; an occurrence before a mention marks it negated.
inline const std::vector<std::string>& negation_triggers() {
    static const std::vector<std::string> triggers = {
        "no", "not", "without", "free of", "absence of", "negative for", "clear of", "resolved"};
    return triggers;
}

// True iff a trigger starts within the 6 tokens preceding the mention and no
// sentence boundary (period) falls between trigger end and mention start.
inline bool detect_negation(const std::vector<std::string>& tokens, std::size_t mention_start,
                            std::size_t mention_len,
                            const std::vector<std::string>& triggers = negation_triggers()) {
    if (mention_start + mention_len > tokens.size() || mention_len == 0)
        throw contract_error("detect_negation: mention span outside token list");
    constexpr std::size_t kWindow = 6;
    const std::size_t lo = mention_start > kWindow ? mention_start - kWindow : 0;
    std::vector<std::vector<std::string>> trig_tokens;
    trig_tokens.reserve(triggers.size());
    for (const auto& t : triggers) trig_tokens.push_back(tokenize(t));
    for (std::size_t pos = lo; pos < mention_start; ++pos) {
        for (const auto& trig : trig_tokens) {
            if (trig.empty() || pos + trig.size() > mention_start) continue;
            bool match = true;
            for (std::size_t k = 0; k < trig.size(); ++k)
                if (tokens[pos + k] != trig[k]) {
                    match = false;
                    break;
                }
            if (!match) continue;
            bool blocked = false;
            for (std::size_t k = pos + trig.size(); k < mention_start; ++k)
                if (tokens[k] == ".") {
                    blocked = true;
                    break;
                }
            if (!blocked) return true;
        }
    }
    return false;
}

// Surface form -> concept id. Surfaces are stored tokenized so multi-word
// entries match across whitespace variants.
class Lexicon {
public:
    void add(const std::string& surface, std::size_t concept_id) {
        auto toks = tokenize(surface);
        if (toks.empty()) throw parse_error("lexicon: empty surface form");
        auto [it, inserted] = entries_.try_emplace(std::move(toks), concept_id);
        if (!inserted) it->second = std::min(it->second, concept_id);  // ties keep lower id
    }

    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }

    // Longest entry matching tokens[pos..]; returns length 0 when none.
    std::pair<std::size_t, std::size_t> longest_match(const std::vector<std::string>& tokens,
                                                      std::size_t pos) const {
        std::size_t best_len = 0, best_id = 0;
        for (const auto& [surface, id] : entries_) {
            if (surface.size() <= best_len || pos + surface.size() > tokens.size()) continue;
            bool match = true;
            for (std::size_t k = 0; k < surface.size(); ++k)
                if (tokens[pos + k] != surface[k]) {
                    match = false;
                    break;
                }
            if (match) {
                best_len = surface.size();
                best_id = id;
            }
        }
        return {best_id, best_len};
    }

    std::size_t max_concept_id() const {
        std::size_t mx = 0;
        for (const auto& [_, id] : entries_) mx = std::max(mx, id);
        return mx;
    }

    // TSV rows: surface_form <TAB> concept_id.
    static Lexicon load_tsv(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw io_error("cannot open lexicon file: " + path);
        Lexicon lex;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw parse_error(path + ":" + std::to_string(line_no) + ": expected 2 fields");
            const std::string surface = line.substr(0, tab);
            const std::string id_str = line.substr(tab + 1);
            try {
                lex.add(surface, static_cast<std::size_t>(std::stoul(id_str)));
            } catch (const std::logic_error&) {
                throw parse_error(path + ":" + std::to_string(line_no) +
                                  ": bad concept id '" + id_str + "'");
            }
        }
        return lex;
    }

private:
    std::map<std::vector<std::string>, std::size_t> entries_;
};

// One extracted pathology concept occurrence with its negation mark.
struct ConceptMention {
    std::size_t concept_id = 0;
    bool negated = false;
    std::size_t span_begin = 0;  // token index range [begin, end)
    std::size_t span_end = 0;
};

enum class ConceptView { report, sentence };

struct ConceptSet {
    std::vector<ConceptMention> mentions;  // deduplicated by (concept_id, negated)
    ConceptView view = ConceptView::report;

    bool contains(std::size_t concept_id, bool negated) const {
        return std::any_of(mentions.begin(), mentions.end(), [&](const ConceptMention& m) {
            return m.concept_id == concept_id && m.negated == negated;
        });
    }
};

// Longest-match lexicon scan; each hit is paired with a negation verdict and
// the result is deduplicated by (concept_id, negated) keeping first spans.
inline ConceptSet extract_concepts(const std::string& text, const Lexicon& lexicon,
                                   ConceptView view = ConceptView::report) {
    if (lexicon.empty()) throw contract_error("extract_concepts: empty lexicon");
    const auto tokens = tokenize(text);
    ConceptSet out;
    out.view = view;
    std::size_t pos = 0;
    while (pos < tokens.size()) {
        const auto [id, len] = lexicon.longest_match(tokens, pos);
        if (len == 0) {
            ++pos;
            continue;
        }
        const bool negated = detect_negation(tokens, pos, len);
        if (!out.contains(id, negated))
            out.mentions.push_back(ConceptMention{id, negated, pos, pos + len});
        pos += len;
    }
    return out;
}

}  // namespace kobo
