#include <cctype>
#include <cmath>
#include <sstream>

#include "tsim/scenegen.hpp"

namespace tsim::scenegen {

namespace {

// Reference footprint areas (full extents, m^2) per category, used by the
// level-5 relative-size clause. An asset is compared against its category.
double reference_area(const std::string& category) {
    if (category == "sofa") return 1.85;
    if (category == "armchair") return 0.92;
    if (category == "dining_table") return 1.95;
    if (category == "coffee_table") return 0.82;
    if (category == "bin") return 0.14;
    if (category == "tv_stand") return 0.80;
    if (category == "bookshelf") return 0.38;
    if (category == "plant") return 0.23;
    return 1.0;
}

std::string category_noun(const std::string& category) {
    std::string noun = category;
    for (char& c : noun)
        if (c == '_') c = ' ';
    return noun;
}

std::string en_article(const std::string& next_word) {
    if (next_word.empty()) return "a";
    switch (next_word.front()) {
        case 'a': case 'e': case 'i': case 'o': case 'u':
            return "an";
        default:
            return "a";
    }
}

enum class SizeClass { Smaller, Typical, Larger };

SizeClass size_class(const AssetSpec& asset) {
    const double area = 4.0 * asset.half_w * asset.half_d;
    const double ratio = area / reference_area(asset.category);
    if (ratio > 1.15) return SizeClass::Larger;
    if (ratio < 0.85) return SizeClass::Smaller;
    return SizeClass::Typical;
}

const std::string& lex(const Lexicon& lexicon, const std::string& tag) {
    const auto it = lexicon.find(tag);
    if (it == lexicon.end()) throw MissingLexiconEntry(tag);
    return it->second;
}

// Italian adjective lookup with feminine override ("f:<tag>") when present.
std::string lex_adj(const Lexicon& lexicon, const std::string& tag, bool feminine) {
    if (feminine) {
        const auto it = lexicon.find("f:" + tag);
        if (it != lexicon.end()) return it->second;
    }
    return lex(lexicon, tag);
}

CaptionSet english_captions(const AssetSpec& asset) {
    CaptionSet out;
    out.language = Language::EN;
    const std::string noun = category_noun(asset.category);

    out.levels[0] = noun;
    out.levels[1] = en_article(asset.color) + " " + asset.color + " " + noun;
    out.levels[2] = en_article(asset.color) + " " + asset.color + " " + asset.material + " " + noun;

    std::string styled;
    if (asset.style_attrs.empty()) {
        styled = out.levels[2];
    } else {
        std::ostringstream os;
        os << en_article(asset.style_attrs.front());
        for (const auto& s : asset.style_attrs) os << " " << s;
        os << " " << asset.color << " " << asset.material << " " << noun;
        styled = os.str();
    }
    out.levels[3] = styled;

    std::string clause;
    switch (size_class(asset)) {
        case SizeClass::Larger:  clause = "larger than a typical " + noun; break;
        case SizeClass::Smaller: clause = "smaller than a typical " + noun; break;
        case SizeClass::Typical: clause = "about the size of a typical " + noun; break;
    }
    out.levels[4] = styled + ", " + clause;
    return out;
}

CaptionSet italian_captions(const AssetSpec& asset, const Lexicon& lexicon) {
    CaptionSet out;
    out.language = Language::IT;
    const std::string noun = lex(lexicon, asset.category);
    const std::string article = lex(lexicon, "article:" + asset.category);
    const bool feminine = lex(lexicon, "gender:" + asset.category) == "f";

    const std::string color = lex_adj(lexicon, asset.color, feminine);
    const std::string material = lex(lexicon, asset.material);

    out.levels[0] = noun;
    out.levels[1] = article + " " + noun + " " + color;
    out.levels[2] = out.levels[1] + " in " + material;

    // Style adjectives agree with "stile" (masculine), not with the noun.
    std::string styled = out.levels[2];
    if (!asset.style_attrs.empty()) {
        styled += " dallo stile";
        for (const auto& s : asset.style_attrs) styled += " " + lex(lexicon, s);
    }
    out.levels[3] = styled;

    std::string clause;
    switch (size_class(asset)) {
        case SizeClass::Larger:
            clause = lex(lexicon, "larger") + " di " + article + " " + noun + " " +
                     lex_adj(lexicon, "typical", feminine);
            break;
        case SizeClass::Smaller:
            clause = lex_adj(lexicon, "smaller", feminine) + " di " + article + " " + noun +
                     " " + lex_adj(lexicon, "typical", feminine);
            break;
        case SizeClass::Typical:
            clause = lex(lexicon, "typical_size") + " " + article + " " + noun;
            break;
    }
    out.levels[4] = styled + ", " + clause;
    return out;
}

}  // namespace

std::string language_name(Language lang) {
    return lang == Language::EN ? "en" : "it";
}

Language language_from_name(const std::string& name) {
    if (name == "en" || name == "EN") return Language::EN;
    if (name == "it" || name == "IT") return Language::IT;
    throw UnsupportedLanguage("unsupported language: " + name);
}

CaptionSet generate_captions(const AssetSpec& asset, Language lang, const Lexicon& lexicon) {
    switch (lang) {
        case Language::EN: return english_captions(asset);
        case Language::IT: return italian_captions(asset, lexicon);
    }
    throw UnsupportedLanguage("unsupported language id");
}

LevelSets level_sets(const std::vector<CaptionSet>& captions) {
    LevelSets out;
    for (const auto& cs : captions)
        for (int l = 0; l < 5; ++l) out[l].insert(cs.levels[l]);
    return out;
}

double description_overlap(const LevelSets& train, const LevelSets& test, int level) {
    if (level < 1 || level > 5) throw std::invalid_argument("caption level must be 1..5");
    const auto& tr = train[level - 1];
    const auto& te = test[level - 1];
    if (tr.empty() || te.empty()) throw EmptyLevelSet();
    std::size_t common = 0;
    for (const auto& s : te)
        if (tr.count(s)) ++common;
    return static_cast<double>(common) / static_cast<double>(te.size());
}

}  // namespace tsim::scenegen
