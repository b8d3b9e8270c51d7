#include "duet/fst.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace duet {

Vocabulary Vocabulary::build(const AttributeSpace& space) {
    space.validate();
    Vocabulary v;
    v.tokens_ = {"[PAD]", "[CLS]", "[MASK]", "[SEP]", "|", ":", ","};
    std::set<std::string> words;
    for (const auto& ps : space.prompts)
        words.insert(ps.name_words.begin(), ps.name_words.end());
    for (const auto& a : space.attributes)
        words.insert(a.surface_words.begin(), a.surface_words.end());
    for (const auto& w : words) v.tokens_.push_back(w);  // std::set iterates sorted
    for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i) v.ids_[v.tokens_[static_cast<size_t>(i)]] = i;
    v.cls_ = v.ids_.at("[CLS]");
    v.mask_ = v.ids_.at("[MASK]");
    v.sep_ = v.ids_.at("[SEP]");
    v.bar_ = v.ids_.at("|");
    v.colon_ = v.ids_.at(":");
    v.comma_ = v.ids_.at(",");
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw DataError("unknown token: '" + token + "'");
    return it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw DataError("token id out of range");
    return tokens_[static_cast<size_t>(id)];
}

namespace {

void push(TokenSequence& seq, int id, SegTag tag, int attr_id = -1) {
    seq.ids.push_back(id);
    seq.tags.push_back(tag);
    seq.attr_ids.push_back(attr_id);
}

}  // namespace

TokenSequence serialize(const std::vector<int>& attrs, const AttributeSpace& space,
                        const Vocabulary& vocab) {
    std::vector<char> present(static_cast<size_t>(space.n_attributes()), 0);
    for (int a : attrs) {
        if (a < 0 || a >= space.n_attributes())
            throw DataError("serialize: attribute id " + std::to_string(a) + " not in space");
        present[static_cast<size_t>(a)] = 1;
    }
    TokenSequence seq;
    for (const auto& ps : space.prompts) {
        push(seq, vocab.bar_id(), SegTag::Separator);
        for (const auto& w : ps.name_words) push(seq, vocab.id(w), SegTag::PromptName);
        push(seq, vocab.colon_id(), SegTag::Separator);
        bool first = true;
        for (int a : ps.member_ids) {  // member_ids are ascending
            if (!present[static_cast<size_t>(a)]) continue;
            if (!first) push(seq, vocab.comma_id(), SegTag::Separator);
            first = false;
            for (const auto& w : space.attributes[static_cast<size_t>(a)].surface_words)
                push(seq, vocab.id(w), SegTag::Attribute, a);
        }
    }
    return seq;
}

TokenSequence serialize_class(int class_id, const ClassAttributeMatrix& matrix,
                              const AttributeSpace& space, const Vocabulary& vocab) {
    return serialize(attribute_set_of(class_id, matrix), space, vocab);
}

TokenSequence prompt_template(const AttributeSpace& space, const Vocabulary& vocab) {
    return serialize({}, space, vocab);
}

MaskedSequence mask_attribute(const TokenSequence& seq, int target_attr,
                              const Vocabulary& vocab) {
    MaskedSequence out;
    out.seq = seq;
    for (size_t i = 0; i < seq.size(); ++i) {
        if (seq.attr_ids[i] == target_attr && seq.tags[i] == SegTag::Attribute) {
            out.targets.emplace_back(static_cast<int>(i), seq.ids[i]);
            out.seq.ids[i] = vocab.mask_id();
            out.seq.tags[i] = SegTag::Mask;
        }
    }
    if (out.targets.empty())
        throw DataError("mask_attribute: attribute " + std::to_string(target_attr) +
                        " is not realized in the sequence");
    return out;
}

GroundingTemplate grounding_template(const AttributeSpace& space, const Vocabulary& vocab) {
    GroundingTemplate out;
    for (const auto& ps : space.prompts) {
        push(out.seq, vocab.bar_id(), SegTag::Separator);
        for (const auto& w : ps.name_words) push(out.seq, vocab.id(w), SegTag::PromptName);
        push(out.seq, vocab.colon_id(), SegTag::Separator);
        out.mask_pos.push_back(static_cast<int>(out.seq.size()));
        push(out.seq, vocab.mask_id(), SegTag::Mask);
    }
    return out;
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
    std::string s;
    for (size_t i = 0; i < seq.size(); ++i) {
        if (i) s += ' ';
        s += vocab.token(seq.ids[i]);
    }
    return s;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
    std::istringstream in(text);
    std::vector<int> ids;
    std::string w;
    while (in >> w) ids.push_back(vocab.id(w));
    return ids;
}

}  // namespace duet
