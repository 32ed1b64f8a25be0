#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tsim/model.hpp"

namespace tsim::learn {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (const unsigned char c : text) {
        const bool word_char = (c >= 0x80) || std::isalnum(c);
        if (word_char) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vocab build_vocab(const std::vector<std::string>& captions) {
    if (captions.empty()) throw EmptyCorpus();
    std::set<std::string> unique;
    for (const auto& c : captions)
        for (auto& w : split_words(c)) unique.insert(std::move(w));
    Vocab v;
    v.words.assign(unique.begin(), unique.end());
    for (std::size_t i = 0; i < v.words.size(); ++i)
        v.index[v.words[i]] = static_cast<std::uint16_t>(i + 2);
    return v;
}

std::uint16_t Vocab::id(const std::string& word) const {
    const auto it = index.find(word);
    return it == index.end() ? kUnk : it->second;
}

std::uint64_t Vocab::hash() const {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (const auto& w : words) {
        for (const char c : w) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        h ^= '\n';
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<std::uint16_t> tokenize(const std::string& text, const Vocab& vocab) {
    std::vector<std::uint16_t> out;
    for (const auto& w : split_words(text)) out.push_back(vocab.id(w));
    return out;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
    nlohmann::json j;
    j["words"] = vocab.words;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocab file: " + path);
    out << j.dump(2) << "\n";
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read vocab file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    const auto j = nlohmann::json::parse(os.str());
    Vocab v;
    for (const auto& w : j.at("words")) v.words.push_back(w.get<std::string>());
    for (std::size_t i = 0; i < v.words.size(); ++i)
        v.index[v.words[i]] = static_cast<std::uint16_t>(i + 2);
    return v;
}

}  // namespace tsim::learn
