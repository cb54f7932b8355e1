#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace kgd {

struct Hyponym {
    std::string name;
    std::string definition;
};

struct LexiconEntry {
    std::string category;
    std::string definition;
    std::vector<Hyponym> hyponyms;
};

/// Which text becomes an LKG node.
enum class PromptMode { Names, Definitions, Hierarchy };

/// In Hierarchy mode, whether a hyponym contributes its definition or its name.
enum class HyponymText { Definition, Name };

std::string_view to_string(PromptMode mode);
PromptMode parse_prompt_mode(std::string_view text);
std::string_view to_string(HyponymText h);
HyponymText parse_hyponym_text(std::string_view text);

/// Expanded prompt list. owner[k] is the category index of prompts[k].
struct PromptSet {
    std::vector<std::string> categories;
    std::vector<std::string> prompts;
    std::vector<std::size_t> owner;
    PromptMode mode = PromptMode::Hierarchy;

    std::size_t num_categories() const { return categories.size(); }
    std::size_t size() const { return prompts.size(); }
};

/// Parses a lexicon JSON document. Throws LexiconParseError (with line and
/// column for syntax errors, entry index for schema errors) or DuplicateCategory.
std::vector<LexiconEntry> parse_lexicon_text(std::string_view text);
std::vector<LexiconEntry> parse_lexicon(const std::filesystem::path& path);

std::string serialize_lexicon(const std::vector<LexiconEntry>& entries);

/// Emits prompts in entry order; in Hierarchy mode the definition comes first,
/// then each hyponym in file order.
PromptSet expand_prompts(const std::vector<LexiconEntry>& entries, PromptMode mode,
                         HyponymText hyponym_text = HyponymText::Definition);

}  // namespace kgd
