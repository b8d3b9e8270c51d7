#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "duet/attrspace.hpp"

namespace duet {

/// What a sequence position realizes.
enum class SegTag : std::uint8_t { PromptName, Separator, Attribute, Mask };

struct TokenSequence {
    std::vector<int> ids;
    std::vector<SegTag> tags;
    std::vector<int> attr_ids;  // attribute id at the position, -1 elsewhere

    size_t size() const { return ids.size(); }
    bool operator==(const TokenSequence&) const = default;
};

/// Closed word-level vocabulary: pad + special tokens + every word occurring
/// in prompt names or attribute surfaces, sorted. Construction is a pure
/// function of the attribute space.
class Vocabulary {
public:
    static constexpr int kPad = 0;

    static Vocabulary build(const AttributeSpace& space);

    int size() const { return static_cast<int>(tokens_.size()); }
    int id(const std::string& token) const;
    const std::string& token(int id) const;
    bool contains(const std::string& token) const { return ids_.count(token) > 0; }

    int cls_id() const { return cls_; }
    int mask_id() const { return mask_; }
    int sep_id() const { return sep_; }
    int bar_id() const { return bar_; }
    int colon_id() const { return colon_; }
    int comma_id() const { return comma_; }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> ids_;
    int cls_ = 0, mask_ = 0, sep_ = 0, bar_ = 0, colon_ = 0, comma_ = 0;
};

/// Semi-serializes an attribute set: for every prompt set in id order emits
/// "| <prompt name> :" followed by the member attributes present in `attrs`
/// (ascending id, comma-separated). Prompt sets without members keep their
/// empty slot so the layout matches the test-time template.
TokenSequence serialize(const std::vector<int>& attrs, const AttributeSpace& space,
                        const Vocabulary& vocab);

/// serialize() for the attribute set of a class.
TokenSequence serialize_class(int class_id, const ClassAttributeMatrix& matrix,
                              const AttributeSpace& space, const Vocabulary& vocab);

/// The fixed single-modal template: every prompt name with an empty slot.
/// Identical to serialize({}).
TokenSequence prompt_template(const AttributeSpace& space, const Vocabulary& vocab);

struct MaskedSequence {
    TokenSequence seq;
    std::vector<std::pair<int, int>> targets;  // (position, original token id)
};

/// Whole-phrase masking: every position realizing `target_attr` becomes
/// [MASK]; targets record the original ids for reconstruction loss.
MaskedSequence mask_attribute(const TokenSequence& seq, int target_attr,
                              const Vocabulary& vocab);

struct GroundingTemplate {
    TokenSequence seq;
    std::vector<int> mask_pos;  // one [MASK] position per prompt set, in id order
};

/// "| <prompt name> : [MASK]" for every prompt set; the probe input for
/// attribute grounding.
GroundingTemplate grounding_template(const AttributeSpace& space, const Vocabulary& vocab);

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);
std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);

}  // namespace duet
