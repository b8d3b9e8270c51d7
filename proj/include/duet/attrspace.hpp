#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "duet/errors.hpp"
#include "duet/tensor.hpp"

namespace duet {

/// One attribute: an id into the global attribute list, a surface word
/// sequence, and the single prompt set the id belongs to. Surfaces may repeat
/// across prompt sets under distinct ids.
struct Attribute {
    int id = -1;
    std::vector<std::string> surface_words;
    int prompt_id = -1;

    std::string surface() const;
};

/// A cluster of attributes describing one aspect ("wing pattern").
struct PromptSet {
    int id = -1;
    std::vector<std::string> name_words;
    std::vector<int> member_ids;  // ascending attribute ids

    std::string name() const;
};

struct AttributeSpace {
    std::vector<PromptSet> prompts;      // index == prompt id
    std::vector<Attribute> attributes;   // index == attribute id

    int n_attributes() const { return static_cast<int>(attributes.size()); }
    int n_prompts() const { return static_cast<int>(prompts.size()); }

    /// Checks id contiguity and that prompt members partition the attributes.
    void validate() const;
};

/// Per-class degree scores z in [0,1]; membership means z > theta_mem.
struct ClassAttributeMatrix {
    std::vector<std::string> class_names;  // index == class id
    Mat z;                                 // |C| x |A|
    double theta_mem = 0.0;

    int n_classes() const { return static_cast<int>(class_names.size()); }
    int n_attributes() const { return static_cast<int>(z.cols()); }
    bool member(int class_id, int attr_id) const { return z(class_id, attr_id) > theta_mem; }
};

struct Split {
    std::vector<int> seen;    // ascending class ids
    std::vector<int> unseen;  // ascending class ids

    void validate(int n_classes) const;
    bool is_seen(int class_id) const;
};

/// { a_i : z_i^c > theta_mem }, ascending. Empty result violates the matrix
/// invariant and raises DataError.
std::vector<int> attribute_set_of(int class_id, const ClassAttributeMatrix& matrix);

/// Percentage of `classes` whose attribute set contains `attr_id`.
double freq(int attr_id, const ClassAttributeMatrix& matrix, const std::vector<int>& classes);

struct CoOccurrence {
    enum class Kind { Finite, AlwaysCoOccurring, Undefined };
    Kind kind = Kind::Finite;
    double ratio = 0.0;  // meaningful only when finite
};

/// R(a_i <- a_j): #classes holding both over #classes holding a_j but not a_i.
/// Zero denominator yields the AlwaysCoOccurring (+infinity) sentinel, or
/// Undefined when the numerator is zero as well.
CoOccurrence co_occurrence(int attr_i, int attr_j, const ClassAttributeMatrix& matrix,
                           const std::vector<int>& classes);

struct ClassDistance {
    double dist = 0.0;
    std::optional<double> sim;  // 1/dist; empty when dist == 0 (degenerate)
};

/// Manhattan distance between degree rows and its reciprocal similarity.
ClassDistance class_distance(int c, int c2, const ClassAttributeMatrix& matrix);

struct Triple {
    std::string subject, relation, object;
};

/// Builds an attribute space and a binary matrix from KG triples. Classes are
/// subjects that never appear as objects; prompts are the (normalized)
/// relations; a class holds an attribute entity when the shortest
/// same-direction path between them has length exactly `hops`.
std::pair<AttributeSpace, ClassAttributeMatrix> kg_to_matrix(const std::vector<Triple>& triples,
                                                             int hops);

/// Lowercases and splits an identifier on whitespace, '_' and camelCase
/// boundaries: "hasPart" -> {"has","part"}, "Four_legs" -> {"four","legs"}.
std::vector<std::string> normalize_words(const std::string& raw);

// ---- attribute-matrix file format ----
// UTF-8 text; a header of "theta" and "prompt" lines, then one line per
// class: name, tab, |A| space-separated decimal degrees.
//   theta<TAB>0
//   prompt<TAB>color<TAB>brown, still water, ...
//   Otter<TAB>1 0 0.5 ...
std::string format_space(const AttributeSpace& space, const ClassAttributeMatrix& matrix);
std::pair<AttributeSpace, ClassAttributeMatrix> parse_space(const std::string& text);
void write_space_file(const std::string& path, const AttributeSpace& space,
                      const ClassAttributeMatrix& matrix);
std::pair<AttributeSpace, ClassAttributeMatrix> read_space_file(const std::string& path);

// split.txt: two lines of space-separated class ids (seen, then unseen).
std::string format_split(const Split& split);
Split parse_split(const std::string& text, int n_classes);
void write_split_file(const std::string& path, const Split& split);
Split read_split_file(const std::string& path, int n_classes);

// KG file: one triple per line, tab-separated (subject, relation, object).
std::vector<Triple> parse_triples(const std::string& text);
std::vector<Triple> read_triples_file(const std::string& path);

}  // namespace duet
