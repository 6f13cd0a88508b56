#include "morphotok/bpe.hpp"

#include "morphotok/errors.hpp"

#include <algorithm>
#include <map>

#include "json.hpp"

namespace morphotok {

BpeVocab train_bpe(const Corpus& corpus, std::size_t num_merges) {
    if (corpus.sequences.empty()) throw EmptyCorpusError("cannot train BPE on empty corpus");

    BpeVocab vocab;
    std::vector<std::u32string> forms; // id -> form
    std::map<std::u32string, std::uint32_t> ids;
    const auto intern = [&](const std::u32string& f) {
        const auto [it, fresh] = ids.emplace(f, static_cast<std::uint32_t>(forms.size()));
        if (fresh) forms.push_back(f);
        return it->second;
    };

    std::vector<std::vector<std::uint32_t>> seqs;
    seqs.reserve(corpus.sequences.size());
    for (const auto& s : corpus.sequences) {
        auto& row = seqs.emplace_back();
        row.reserve(s.size());
        for (char32_t u : s) {
            vocab.alphabet.insert(u);
            row.push_back(intern(std::u32string(1, u)));
        }
    }

    for (std::size_t step = 0; step < num_merges; ++step) {
        // Adjacent pair counts over the whole working corpus.
        std::unordered_map<std::uint64_t, std::uint64_t> counts;
        for (const auto& row : seqs)
            for (std::size_t i = 0; i + 1 < row.size(); ++i)
                ++counts[(static_cast<std::uint64_t>(row[i]) << 32) | row[i + 1]];

        // Most frequent pair; ties resolved by (left, right) form order, so
        // the scan order over the hash map cannot matter.
        bool found = false;
        std::uint64_t best_count = 0;
        std::uint32_t best_l = 0, best_r = 0;
        for (const auto& [key, count] : counts) {
            if (count < 2) continue;
            const auto l = static_cast<std::uint32_t>(key >> 32);
            const auto r = static_cast<std::uint32_t>(key & 0xffffffffu);
            const bool better =
                !found || count > best_count ||
                (count == best_count &&
                 (forms[l] < forms[best_l] ||
                  (forms[l] == forms[best_l] && forms[r] < forms[best_r])));
            if (better) {
                found = true;
                best_count = count;
                best_l = l;
                best_r = r;
            }
        }
        if (!found) break;

        const std::uint32_t merged = intern(forms[best_l] + forms[best_r]);
        vocab.merges.emplace_back(forms[best_l], forms[best_r]);

        for (auto& row : seqs) {
            std::size_t w = 0;
            for (std::size_t r = 0; r < row.size();) {
                if (r + 1 < row.size() && row[r] == best_l && row[r + 1] == best_r) {
                    row[w++] = merged;
                    r += 2;
                } else {
                    row[w++] = row[r++];
                }
            }
            row.resize(w);
        }
    }
    return vocab;
}

// --- encoder ---------------------------------------------------------------------

namespace {
constexpr std::uint32_t kUnknownId = 0;
}

BpeEncoder::BpeEncoder(const BpeVocab& vocab) {
    std::map<std::u32string, std::uint32_t> ids;
    id_length_.push_back(1); // unknown slot, always one unit long
    const auto intern = [&](const std::u32string& f) {
        const auto it = ids.find(f);
        if (it != ids.end()) return it->second;
        const auto id = static_cast<std::uint32_t>(id_length_.size());
        ids.emplace(f, id);
        id_length_.push_back(static_cast<std::uint32_t>(f.size()));
        return id;
    };
    for (char32_t u : vocab.alphabet)
        unit_ids_.emplace(u, intern(std::u32string(1, u)));
    for (const auto& [l, r] : vocab.merges) {
        Rule rule;
        rule.left = intern(l);
        rule.right = intern(r);
        rule.merged = intern(l + r);
        rules_.push_back(rule);
    }
}

Segmentation BpeEncoder::encode(std::u32string_view sequence) const {
    std::vector<std::uint32_t> toks;
    toks.reserve(sequence.size());
    for (char32_t u : sequence) {
        const auto it = unit_ids_.find(u);
        toks.push_back(it == unit_ids_.end() ? kUnknownId : it->second);
    }

    for (const Rule& rule : rules_) {
        std::size_t w = 0;
        bool changed = false;
        for (std::size_t r = 0; r < toks.size();) {
            if (r + 1 < toks.size() && toks[r] == rule.left && toks[r + 1] == rule.right) {
                toks[w++] = rule.merged;
                r += 2;
                changed = true;
            } else {
                toks[w++] = toks[r++];
            }
        }
        if (changed) toks.resize(w);
    }

    Segmentation seg;
    seg.length = sequence.size();
    std::size_t pos = 0;
    for (std::size_t t = 0; t + 1 < toks.size(); ++t) {
        pos += id_length_[toks[t]];
        seg.boundaries.push_back(pos);
    }
    return seg;
}

Segmentation bpe_encode(const BpeVocab& vocab, std::u32string_view sequence) {
    return BpeEncoder(vocab).encode(sequence);
}

// --- JSON ------------------------------------------------------------------------

std::string bpe_vocab_to_json(const BpeVocab& vocab) {
    nlohmann::json j;
    auto& alpha = j["alphabet"] = nlohmann::json::array();
    for (char32_t u : vocab.alphabet) alpha.push_back(encode_utf8(std::u32string(1, u)));
    auto& merges = j["merges"] = nlohmann::json::array();
    for (const auto& [l, r] : vocab.merges)
        merges.push_back({encode_utf8(l), encode_utf8(r)});
    return j.dump(2) + "\n";
}

BpeVocab bpe_vocab_from_json(std::string_view json_text) {
    try {
        nlohmann::json j = nlohmann::json::parse(json_text);
        BpeVocab vocab;
        for (const auto& a : j.at("alphabet")) {
            const std::u32string u = decode_utf8(a.get<std::string>());
            if (u.size() != 1) throw DecodeError("alphabet entry is not one unit");
            vocab.alphabet.insert(u[0]);
        }
        for (const auto& m : j.at("merges")) {
            if (!m.is_array() || m.size() != 2) throw DecodeError("merge entry is not a pair");
            vocab.merges.emplace_back(decode_utf8(m[0].get<std::string>()),
                                      decode_utf8(m[1].get<std::string>()));
        }
        return vocab;
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(std::string("BPE vocab JSON: ") + e.what());
    }
}

} // namespace morphotok
