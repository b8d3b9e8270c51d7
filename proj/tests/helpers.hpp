#pragma once

// Shared fixtures for unit tests: hand-built attribute spaces and matrices.

#include <string>
#include <vector>

#include "duet/attrspace.hpp"

namespace duet::testing {

struct PromptSpec {
    std::string name;
    std::vector<std::string> surfaces;
};

inline AttributeSpace build_space(const std::vector<PromptSpec>& specs) {
    AttributeSpace space;
    int next = 0;
    for (size_t p = 0; p < specs.size(); ++p) {
        PromptSet ps;
        ps.id = static_cast<int>(p);
        ps.name_words = normalize_words(specs[p].name);
        for (const auto& surf : specs[p].surfaces) {
            Attribute a;
            a.id = next++;
            a.surface_words = normalize_words(surf);
            a.prompt_id = ps.id;
            ps.member_ids.push_back(a.id);
            space.attributes.push_back(std::move(a));
        }
        space.prompts.push_back(std::move(ps));
    }
    space.validate();
    return space;
}

inline ClassAttributeMatrix build_matrix(const std::vector<std::string>& names,
                                         const std::vector<std::vector<double>>& rows,
                                         double theta = 0.0) {
    ClassAttributeMatrix m;
    m.class_names = names;
    m.theta_mem = theta;
    m.z = Mat::Zero(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < rows[r].size(); ++c)
            m.z(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
    return m;
}

}  // namespace duet::testing
