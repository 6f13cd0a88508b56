#include "morphotok/corpus.hpp"

#include "morphotok/errors.hpp"
#include "morphotok/rng.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"

namespace morphotok {

// --- UTF-8 -------------------------------------------------------------------

std::u32string decode_utf8(std::string_view bytes) {
    std::u32string out;
    out.reserve(bytes.size());
    std::size_t i = 0;
    const auto fail = [&](const char* what) {
        throw DecodeError(std::string(what) + " at byte offset " + std::to_string(i));
    };
    while (i < bytes.size()) {
        const unsigned char c0 = static_cast<unsigned char>(bytes[i]);
        std::uint32_t cp = 0;
        std::size_t len = 0;
        if (c0 < 0x80) {
            cp = c0;
            len = 1;
        } else if ((c0 & 0xe0) == 0xc0) {
            cp = c0 & 0x1f;
            len = 2;
        } else if ((c0 & 0xf0) == 0xe0) {
            cp = c0 & 0x0f;
            len = 3;
        } else if ((c0 & 0xf8) == 0xf0) {
            cp = c0 & 0x07;
            len = 4;
        } else {
            fail("invalid UTF-8 lead byte");
        }
        if (i + len > bytes.size()) fail("truncated UTF-8 sequence");
        for (std::size_t k = 1; k < len; ++k) {
            const unsigned char c = static_cast<unsigned char>(bytes[i + k]);
            if ((c & 0xc0) != 0x80) fail("invalid UTF-8 continuation byte");
            cp = (cp << 6) | (c & 0x3f);
        }
        static constexpr std::uint32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
        if (len > 1 && cp < kMin[len]) fail("overlong UTF-8 encoding");
        if (cp >= 0xd800 && cp <= 0xdfff) fail("UTF-8 encoded surrogate");
        if (cp > 0x10ffff) fail("code point above U+10FFFF");
        out.push_back(static_cast<char32_t>(cp));
        i += len;
    }
    return out;
}

std::string encode_utf8(std::u32string_view units) {
    std::string out;
    out.reserve(units.size());
    for (char32_t u : units) {
        const std::uint32_t cp = static_cast<std::uint32_t>(u);
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        } else {
            out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        }
    }
    return out;
}

// --- normalize ---------------------------------------------------------------

namespace {

std::u32string nfc(std::u32string_view text) {
    UErrorCode ec = U_ZERO_ERROR;
    const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(ec);
    if (U_FAILURE(ec)) throw Error("ICU NFC instance unavailable");
    icu::UnicodeString in = icu::UnicodeString::fromUTF32(
        reinterpret_cast<const UChar32*>(text.data()), static_cast<int32_t>(text.size()));
    icu::UnicodeString out = norm->normalize(in, ec);
    if (U_FAILURE(ec)) throw Error("ICU NFC normalization failed");
    std::u32string result(static_cast<std::size_t>(out.countChar32()), U'\0');
    out.toUTF32(reinterpret_cast<UChar32*>(result.data()),
                static_cast<int32_t>(result.size()), ec);
    if (U_FAILURE(ec)) throw Error("ICU UTF-32 conversion failed");
    return result;
}

bool is_space(char32_t u) {
    return u_isUWhiteSpace(static_cast<UChar32>(u)) != 0;
}

} // namespace

std::u32string normalize(std::u32string_view text, bool lowercase) {
    std::u32string composed = nfc(text);

    std::u32string out;
    out.reserve(composed.size());
    bool pending_space = false;
    for (char32_t u : composed) {
        if (is_space(u)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(U' ');
            pending_space = false;
        }
        out.push_back(lowercase ? static_cast<char32_t>(u_tolower(static_cast<UChar32>(u)))
                                : u);
    }

    // Lowercasing can denormalize in rare cases; restore NFC.
    if (lowercase) out = nfc(out);
    return out;
}

std::string normalize_utf8(std::string_view text, bool lowercase) {
    return encode_utf8(normalize(decode_utf8(text), lowercase));
}

// --- corpus ------------------------------------------------------------------

void Corpus::validate() const {
    if (sequences.empty()) throw EmptyCorpusError("corpus has no sequences");
    if (domain_label.empty()) throw MixedDomainError("empty domain label");
    if (gold) {
        if (gold->size() != sequences.size())
            throw LengthMismatch("gold list does not align with sequences");
        for (std::size_t s = 0; s < sequences.size(); ++s) {
            std::size_t prev = 0;
            for (std::size_t p : (*gold)[s]) {
                if (p == 0 || p >= sequences[s].size())
                    throw Error("gold boundary out of range");
                if (p <= prev && prev != 0)
                    throw Error("gold boundaries not strictly increasing");
                prev = p;
            }
        }
    }
}

Corpus load_corpus(const std::vector<RawDocument>& docs, bool lowercase,
                   bool whitespace_gold) {
    Corpus corpus;
    if (whitespace_gold) corpus.gold.emplace();
    for (const auto& doc : docs) {
        if (doc.domain_label.empty())
            throw MixedDomainError("document '" + doc.path + "' has empty domain label");
        if (corpus.domain_label.empty()) {
            corpus.domain_label = doc.domain_label;
        } else if (corpus.domain_label != doc.domain_label) {
            throw MixedDomainError("'" + corpus.domain_label + "' vs '" +
                                   doc.domain_label + "'");
        }
        const std::u32string units = decode_utf8(doc.bytes);
        std::size_t start = 0;
        for (std::size_t i = 0; i <= units.size(); ++i) {
            if (i != units.size() && units[i] != U'\n') continue;
            std::u32string line = normalize(
                std::u32string_view(units).substr(start, i - start), lowercase);
            start = i + 1;
            if (line.empty()) continue;
            if (!whitespace_gold) {
                corpus.sequences.push_back(std::move(line));
                continue;
            }
            // Drop spaces, remember where they were. Normalization guarantees
            // no leading/trailing/doubled spaces, so positions are interior.
            std::u32string seq;
            std::vector<std::size_t> bounds;
            seq.reserve(line.size());
            for (char32_t u : line) {
                if (u == U' ')
                    bounds.push_back(seq.size());
                else
                    seq.push_back(u);
            }
            corpus.sequences.push_back(std::move(seq));
            corpus.gold->push_back(std::move(bounds));
        }
    }
    if (corpus.sequences.empty())
        throw EmptyCorpusError("no nonempty lines in input documents");
    corpus.validate();
    return corpus;
}

std::pair<Corpus, Corpus> split(const Corpus& corpus, const SplitSpec& spec) {
    const std::size_t n = corpus.sequences.size();
    if (n < 2) throw TooFewSequences("need at least 2 sequences to split");
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw ConfigError("train_fraction must be in (0,1)");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(spec.seed);
    fisher_yates(order, rng);

    // ceil(f*n) computed with a small backoff so representable fractions like
    // 0.8 * 10 land on the mathematical value.
    auto n_train = static_cast<std::size_t>(
        std::ceil(spec.train_fraction * static_cast<double>(n) - 1e-9));
    n_train = std::min(std::max<std::size_t>(n_train, 1), n);

    Corpus train, eval;
    train.domain_label = eval.domain_label = corpus.domain_label;
    if (corpus.gold) {
        train.gold.emplace();
        eval.gold.emplace();
    }
    for (std::size_t k = 0; k < n; ++k) {
        Corpus& dst = (k < n_train) ? train : eval;
        dst.sequences.push_back(corpus.sequences[order[k]]);
        if (corpus.gold) dst.gold->push_back((*corpus.gold)[order[k]]);
    }
    return {std::move(train), std::move(eval)};
}

// --- JSON cache --------------------------------------------------------------

std::string corpus_to_json(const Corpus& corpus) {
    nlohmann::json j;
    j["domain"] = corpus.domain_label;
    auto& seqs = j["sequences"] = nlohmann::json::array();
    for (const auto& s : corpus.sequences) seqs.push_back(encode_utf8(s));
    if (corpus.gold) {
        auto& gold = j["gold"] = nlohmann::json::array();
        for (const auto& g : *corpus.gold) gold.push_back(g);
    }
    return j.dump(2) + "\n";
}

Corpus corpus_from_json(std::string_view json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(std::string("corpus cache is not valid JSON: ") + e.what());
    }
    Corpus corpus;
    try {
        corpus.domain_label = j.at("domain").get<std::string>();
        for (const auto& s : j.at("sequences"))
            corpus.sequences.push_back(decode_utf8(s.get<std::string>()));
        if (j.contains("gold") && !j["gold"].is_null()) {
            corpus.gold.emplace();
            for (const auto& g : j["gold"])
                corpus.gold->push_back(g.get<std::vector<std::size_t>>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(std::string("corpus cache schema mismatch: ") + e.what());
    }
    corpus.validate();
    return corpus;
}

// --- synthetic corpora ---------------------------------------------------------

std::string generate_planted_text(const SyntheticSpec& spec) {
    if (spec.alphabet_size == 0 || spec.alphabet_size > 26)
        throw ConfigError("alphabet_size must be in [1,26]");
    if (spec.word_len_min == 0 || spec.word_len_min > spec.word_len_max)
        throw ConfigError("word length bounds invalid");
    if (spec.num_words == 0 || spec.words_per_sequence == 0)
        throw ConfigError("num_words and words_per_sequence must be positive");

    SplitMix64 rng(derive_seed(spec.seed, "synthetic-corpus"));

    // Distinct vocabulary, rejection-sampled.
    std::set<std::string> seen;
    std::vector<std::string> words;
    while (words.size() < spec.num_words) {
        const std::size_t len =
            spec.word_len_min +
            static_cast<std::size_t>(rng.next_below(spec.word_len_max - spec.word_len_min + 1));
        std::string w;
        for (std::size_t k = 0; k < len; ++k)
            w.push_back(static_cast<char>('a' + rng.next_below(spec.alphabet_size)));
        if (seen.insert(w).second) words.push_back(std::move(w));
    }

    // Optional Zipf weights over the vocabulary, else uniform.
    std::vector<double> cdf(words.size());
    double acc = 0.0;
    for (std::size_t r = 0; r < words.size(); ++r) {
        acc += spec.zipf ? 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_s) : 1.0;
        cdf[r] = acc;
    }

    const auto draw_word = [&]() -> const std::string& {
        const double u = rng.next_unit() * acc;
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        return words[static_cast<std::size_t>(it - cdf.begin())];
    };

    std::string text;
    std::size_t units = 0;
    while (units < spec.total_units) {
        for (std::size_t k = 0; k < spec.words_per_sequence; ++k) {
            const std::string& w = draw_word();
            if (k > 0) text.push_back(' ');
            text += w;
            units += w.size();
        }
        text.push_back('\n');
    }
    return text;
}

Corpus generate_planted_corpus(const SyntheticSpec& spec,
                               const std::string& domain_label) {
    RawDocument doc{"<synthetic>", generate_planted_text(spec), domain_label};
    return load_corpus({doc}, /*lowercase=*/false, /*whitespace_gold=*/true);
}

} // namespace morphotok
