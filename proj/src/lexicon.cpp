#include "kgd/lexicon.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "kgd/error.hpp"

namespace kgd {

using nlohmann::json;

namespace {

std::string line_and_column(std::string_view text, std::size_t byte) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

[[noreturn]] void schema_error(std::size_t entry, const std::string& what) {
    throw Error(ErrorCode::LexiconParseError, "entry " + std::to_string(entry) + ": " + what);
}

std::string required_string(const json& obj, const char* key, std::size_t entry) {
    auto it = obj.find(key);
    if (it == obj.end()) schema_error(entry, std::string("missing key '") + key + "'");
    if (!it->is_string()) schema_error(entry, std::string("'") + key + "' must be a string");
    std::string value = it->get<std::string>();
    if (value.empty()) schema_error(entry, std::string("'") + key + "' must be nonempty");
    return value;
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed, std::size_t entry) {
    for (const auto& [key, _] : obj.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) schema_error(entry, "unknown key '" + key + "'");
    }
}

}  // namespace

std::string_view to_string(PromptMode mode) {
    switch (mode) {
        case PromptMode::Names: return "names";
        case PromptMode::Definitions: return "definitions";
        case PromptMode::Hierarchy: return "hierarchy";
    }
    return "hierarchy";
}

PromptMode parse_prompt_mode(std::string_view text) {
    if (text == "names") return PromptMode::Names;
    if (text == "definitions") return PromptMode::Definitions;
    if (text == "hierarchy") return PromptMode::Hierarchy;
    throw Error(ErrorCode::InvalidConfig, "unknown prompt mode '" + std::string(text) + "'");
}

std::string_view to_string(HyponymText h) { return h == HyponymText::Name ? "name" : "definition"; }

HyponymText parse_hyponym_text(std::string_view text) {
    if (text == "definition") return HyponymText::Definition;
    if (text == "name") return HyponymText::Name;
    throw Error(ErrorCode::InvalidConfig, "unknown hyponym text '" + std::string(text) + "'");
}

std::vector<LexiconEntry> parse_lexicon_text(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::LexiconParseError,
                    line_and_column(text, e.byte == 0 ? 0 : e.byte - 1) + ": malformed JSON");
    }
    if (!doc.is_array()) throw Error(ErrorCode::LexiconParseError, "top-level value must be an array");

    std::vector<LexiconEntry> entries;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const json& obj = doc[i];
        if (!obj.is_object()) schema_error(i, "must be an object");
        reject_unknown_keys(obj, {"category", "definition", "hyponyms"}, i);

        LexiconEntry entry;
        entry.category = required_string(obj, "category", i);
        entry.definition = required_string(obj, "definition", i);

        auto hyp = obj.find("hyponyms");
        if (hyp == obj.end()) schema_error(i, "missing key 'hyponyms'");
        if (!hyp->is_array()) schema_error(i, "'hyponyms' must be an array");
        std::set<std::string> names;
        for (const json& h : *hyp) {
            if (!h.is_object()) schema_error(i, "hyponym must be an object");
            reject_unknown_keys(h, {"name", "definition"}, i);
            Hyponym parsed{required_string(h, "name", i), required_string(h, "definition", i)};
            if (!names.insert(parsed.name).second) schema_error(i, "duplicate hyponym '" + parsed.name + "'");
            entry.hyponyms.push_back(std::move(parsed));
        }

        if (!seen.insert(entry.category).second) {
            throw Error(ErrorCode::DuplicateCategory,
                        "category '" + entry.category + "' repeated at entry " + std::to_string(i));
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

std::vector<LexiconEntry> parse_lexicon(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open lexicon '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_lexicon_text(buf.str());
}

std::string serialize_lexicon(const std::vector<LexiconEntry>& entries) {
    json doc = json::array();
    for (const auto& e : entries) {
        json hyps = json::array();
        for (const auto& h : e.hyponyms) hyps.push_back({{"name", h.name}, {"definition", h.definition}});
        doc.push_back({{"category", e.category}, {"definition", e.definition}, {"hyponyms", std::move(hyps)}});
    }
    return doc.dump(2) + "\n";
}

PromptSet expand_prompts(const std::vector<LexiconEntry>& entries, PromptMode mode, HyponymText hyponym_text) {
    if (entries.empty()) throw Error(ErrorCode::EmptyInput, "lexicon has no entries");
    PromptSet set;
    set.mode = mode;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        set.categories.push_back(e.category);
        switch (mode) {
            case PromptMode::Names:
                set.prompts.push_back(e.category);
                set.owner.push_back(i);
                break;
            case PromptMode::Definitions:
                set.prompts.push_back(e.definition);
                set.owner.push_back(i);
                break;
            case PromptMode::Hierarchy:
                set.prompts.push_back(e.definition);
                set.owner.push_back(i);
                for (const auto& h : e.hyponyms) {
                    set.prompts.push_back(hyponym_text == HyponymText::Definition ? h.definition : h.name);
                    set.owner.push_back(i);
                }
                break;
        }
    }
    return set;
}

}  // namespace kgd
