#include "duet/attrspace.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <deque>
#include <map>
#include <set>
#include <sstream>

#include "duet/ioutil.hpp"

namespace duet {

namespace {

std::string join_words(const std::vector<std::string>& words, const char* sep = " ") {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out += sep;
        out += words[i];
    }
    return out;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    parts.push_back(cur);
    return parts;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_degree(const std::string& tok, int line_no) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
        throw DataError("line " + std::to_string(line_no) + ": bad degree value '" + tok + "'");
    if (!(v >= 0.0 && v <= 1.0))
        throw DataError("line " + std::to_string(line_no) + ": degree outside [0,1]");
    return v;
}

std::string format_degree(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

}  // namespace

std::string Attribute::surface() const { return join_words(surface_words); }
std::string PromptSet::name() const { return join_words(name_words); }

void AttributeSpace::validate() const {
    const int na = n_attributes();
    std::vector<int> owner(static_cast<size_t>(na), -1);
    std::set<std::string> names;
    for (int p = 0; p < n_prompts(); ++p) {
        const auto& ps = prompts[static_cast<size_t>(p)];
        if (ps.id != p) throw DataError("prompt ids must be contiguous");
        if (ps.name_words.empty()) throw DataError("empty prompt name");
        if (!names.insert(ps.name()).second) throw DataError("duplicate prompt name: " + ps.name());
        if (ps.member_ids.empty()) throw DataError("prompt set '" + ps.name() + "' has no members");
        for (int a : ps.member_ids) {
            if (a < 0 || a >= na) throw DataError("prompt member id out of range");
            if (owner[static_cast<size_t>(a)] != -1)
                throw DataError("attribute id in more than one prompt set");
            owner[static_cast<size_t>(a)] = p;
        }
    }
    for (int a = 0; a < na; ++a) {
        const auto& at = attributes[static_cast<size_t>(a)];
        if (at.id != a) throw DataError("attribute ids must be contiguous");
        if (at.surface_words.empty()) throw DataError("empty attribute surface");
        if (owner[static_cast<size_t>(a)] != at.prompt_id)
            throw DataError("attribute/prompt membership mismatch");
    }
}

void Split::validate(int n_classes) const {
    std::vector<char> hit(static_cast<size_t>(n_classes), 0);
    auto mark = [&](const std::vector<int>& ids) {
        for (int c : ids) {
            if (c < 0 || c >= n_classes) throw DataError("split: class id out of range");
            if (hit[static_cast<size_t>(c)]) throw DataError("split: class id repeated");
            hit[static_cast<size_t>(c)] = 1;
        }
    };
    mark(seen);
    mark(unseen);
    for (char h : hit)
        if (!h) throw DataError("split: class missing from both sides");
}

bool Split::is_seen(int class_id) const {
    return std::binary_search(seen.begin(), seen.end(), class_id);
}

std::vector<int> attribute_set_of(int class_id, const ClassAttributeMatrix& matrix) {
    if (class_id < 0 || class_id >= matrix.n_classes())
        throw DataError("attribute_set_of: class id out of range");
    std::vector<int> out;
    for (int a = 0; a < matrix.n_attributes(); ++a)
        if (matrix.member(class_id, a)) out.push_back(a);
    if (out.empty())
        throw DataError("class '" + matrix.class_names[static_cast<size_t>(class_id)] +
                        "' has no attribute above theta_mem");
    return out;
}

double freq(int attr_id, const ClassAttributeMatrix& matrix, const std::vector<int>& classes) {
    if (classes.empty()) throw DataError("freq: empty class set");
    int count = 0;
    for (int c : classes)
        if (matrix.member(c, attr_id)) ++count;
    return 100.0 * static_cast<double>(count) / static_cast<double>(classes.size());
}

CoOccurrence co_occurrence(int attr_i, int attr_j, const ClassAttributeMatrix& matrix,
                           const std::vector<int>& classes) {
    if (attr_i == attr_j) throw DataError("co_occurrence: identical attributes");
    int both = 0, j_only = 0;
    for (int c : classes) {
        const bool has_i = matrix.member(c, attr_i);
        const bool has_j = matrix.member(c, attr_j);
        if (has_i && has_j) ++both;
        if (!has_i && has_j) ++j_only;
    }
    CoOccurrence r;
    if (j_only > 0) {
        r.kind = CoOccurrence::Kind::Finite;
        r.ratio = static_cast<double>(both) / static_cast<double>(j_only);
    } else {
        r.kind = both > 0 ? CoOccurrence::Kind::AlwaysCoOccurring : CoOccurrence::Kind::Undefined;
    }
    return r;
}

ClassDistance class_distance(int c, int c2, const ClassAttributeMatrix& matrix) {
    ClassDistance out;
    out.dist = (matrix.z.row(c) - matrix.z.row(c2)).cwiseAbs().sum();
    if (out.dist > 0.0) out.sim = 1.0 / out.dist;
    return out;
}

std::vector<std::string> normalize_words(const std::string& raw) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    };
    for (size_t i = 0; i < raw.size(); ++i) {
        const char ch = raw[i];
        if (ch == '_' || ch == ' ' || ch == '-') {
            flush();
        } else if (std::isupper(static_cast<unsigned char>(ch))) {
            flush();
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        } else {
            cur += ch;
        }
    }
    flush();
    if (words.empty()) throw DataError("empty identifier: '" + raw + "'");
    return words;
}

std::pair<AttributeSpace, ClassAttributeMatrix> kg_to_matrix(const std::vector<Triple>& triples,
                                                             int hops) {
    if (hops < 1) throw ConfigError("kg_to_matrix: hops must be >= 1");
    if (triples.empty()) throw DataError("kg_to_matrix: no triples (no classes)");

    // Entity graph: subject -(relation)-> object.
    std::map<std::string, int> entity_id;
    auto intern = [&](const std::string& name) {
        auto [it, fresh] = entity_id.emplace(name, static_cast<int>(entity_id.size()));
        (void)fresh;
        return it->second;
    };
    struct Edge {
        int to;
        std::string rel;
    };
    std::vector<std::vector<Edge>> adj;
    std::set<std::string> subjects, objects;
    for (const auto& t : triples) {
        if (t.subject.empty() || t.relation.empty() || t.object.empty())
            throw DataError("kg_to_matrix: triple with empty field (dangling reference)");
        const int s = intern(t.subject);
        const int o = intern(t.object);
        if (static_cast<int>(adj.size()) < static_cast<int>(entity_id.size()))
            adj.resize(entity_id.size());
        adj[static_cast<size_t>(s)].push_back({o, t.relation});
        subjects.insert(t.subject);
        objects.insert(t.object);
    }
    adj.resize(entity_id.size());

    // Same-direction cycles make shortest path lengths ill-defined.
    {
        const int n = static_cast<int>(entity_id.size());
        std::vector<int> color(static_cast<size_t>(n), 0);  // 0 new, 1 open, 2 done
        std::vector<std::pair<int, size_t>> stack;
        for (int s = 0; s < n; ++s) {
            if (color[static_cast<size_t>(s)] != 0) continue;
            stack.emplace_back(s, 0);
            color[static_cast<size_t>(s)] = 1;
            while (!stack.empty()) {
                auto& [u, next] = stack.back();
                if (next < adj[static_cast<size_t>(u)].size()) {
                    const int v = adj[static_cast<size_t>(u)][next++].to;
                    if (color[static_cast<size_t>(v)] == 1)
                        throw DataError("kg_to_matrix: cyclic same-direction path");
                    if (color[static_cast<size_t>(v)] == 0) {
                        color[static_cast<size_t>(v)] = 1;
                        stack.emplace_back(v, 0);
                    }
                } else {
                    color[static_cast<size_t>(u)] = 2;
                    stack.pop_back();
                }
            }
        }
    }

    // Classes: subjects that never appear as an object.
    std::vector<std::string> class_names;
    for (const auto& s : subjects)
        if (!objects.count(s)) class_names.push_back(s);
    if (class_names.empty()) throw DataError("kg_to_matrix: no class entities found");

    // BFS per class; membership = entities at distance exactly `hops`, with
    // the prompt taken from the first relation on a shortest path (ties pick
    // the lexicographically smallest relation).
    std::map<std::pair<std::string, std::string>, std::set<std::string>> members_by_attr;
    for (const auto& cname : class_names) {
        const int src = entity_id.at(cname);
        std::vector<int> dist(entity_id.size(), -1);
        std::vector<std::string> first_rel(entity_id.size());
        std::deque<int> queue{src};
        dist[static_cast<size_t>(src)] = 0;
        bool any = false;
        while (!queue.empty()) {
            const int u = queue.front();
            queue.pop_front();
            const int du = dist[static_cast<size_t>(u)];
            if (du == hops) continue;
            for (const auto& e : adj[static_cast<size_t>(u)]) {
                const std::string& cand =
                    (du == 0) ? e.rel : first_rel[static_cast<size_t>(u)];
                auto& dv = dist[static_cast<size_t>(e.to)];
                auto& fv = first_rel[static_cast<size_t>(e.to)];
                if (dv == -1) {
                    dv = du + 1;
                    fv = cand;
                    queue.push_back(e.to);
                } else if (dv == du + 1 && cand < fv) {
                    fv = cand;
                }
            }
        }
        for (const auto& [name, id] : entity_id) {
            if (dist[static_cast<size_t>(id)] == hops) {
                members_by_attr[{first_rel[static_cast<size_t>(id)], name}].insert(cname);
                any = true;
            }
        }
        if (!any)
            throw DataError("kg_to_matrix: class '" + cname + "' reaches no attribute at h=" +
                            std::to_string(hops));
    }

    // Assemble prompts (sorted relations) and attributes (sorted within prompt).
    AttributeSpace space;
    std::map<std::string, int> prompt_ids;
    for (const auto& [key, cls] : members_by_attr) {
        (void)cls;
        if (!prompt_ids.count(key.first)) {
            const int pid = static_cast<int>(prompt_ids.size());
            prompt_ids.emplace(key.first, pid);
            PromptSet ps;
            ps.id = pid;
            ps.name_words = normalize_words(key.first);
            space.prompts.push_back(std::move(ps));
        }
    }
    ClassAttributeMatrix matrix;
    matrix.class_names = class_names;
    matrix.z = Mat::Zero(static_cast<int>(class_names.size()),
                         static_cast<int>(members_by_attr.size()));
    std::map<std::string, int> class_ids;
    for (size_t i = 0; i < class_names.size(); ++i)
        class_ids[class_names[i]] = static_cast<int>(i);

    int next_attr = 0;
    for (const auto& [key, cls] : members_by_attr) {
        Attribute a;
        a.id = next_attr++;
        a.surface_words = normalize_words(key.second);
        a.prompt_id = prompt_ids.at(key.first);
        space.prompts[static_cast<size_t>(a.prompt_id)].member_ids.push_back(a.id);
        for (const auto& cname : cls) matrix.z(class_ids.at(cname), a.id) = 1.0;
        space.attributes.push_back(std::move(a));
    }
    space.validate();
    return {std::move(space), std::move(matrix)};
}

// ---- file format ----

std::string format_space(const AttributeSpace& space, const ClassAttributeMatrix& matrix) {
    if (matrix.n_attributes() != space.n_attributes())
        throw DataError("format_space: matrix/space attribute count mismatch");
    std::string out;
    out += "theta\t" + format_degree(matrix.theta_mem) + "\n";
    for (const auto& ps : space.prompts) {
        out += "prompt\t" + ps.name() + "\t";
        for (size_t i = 0; i < ps.member_ids.size(); ++i) {
            if (i) out += ", ";
            out += space.attributes[static_cast<size_t>(ps.member_ids[i])].surface();
        }
        out += "\n";
    }
    for (int c = 0; c < matrix.n_classes(); ++c) {
        out += matrix.class_names[static_cast<size_t>(c)] + "\t";
        for (int a = 0; a < matrix.n_attributes(); ++a) {
            if (a) out += " ";
            out += format_degree(matrix.z(c, a));
        }
        out += "\n";
    }
    return out;
}

std::pair<AttributeSpace, ClassAttributeMatrix> parse_space(const std::string& text) {
    AttributeSpace space;
    ClassAttributeMatrix matrix;
    std::vector<std::vector<double>> rows;
    int line_no = 0;
    std::istringstream in(text);
    std::string line;
    int next_attr = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto fields = split_on(line, '\t');
        if (fields[0] == "theta") {
            if (fields.size() != 2)
                throw DataError("line " + std::to_string(line_no) + ": bad theta line");
            matrix.theta_mem = parse_degree(trim(fields[1]), line_no);
        } else if (fields[0] == "prompt") {
            if (!rows.empty())
                throw DataError("line " + std::to_string(line_no) +
                                ": prompt line after class rows");
            if (fields.size() != 3)
                throw DataError("line " + std::to_string(line_no) + ": bad prompt line");
            PromptSet ps;
            ps.id = space.n_prompts();
            ps.name_words = split_ws(trim(fields[1]));
            if (ps.name_words.empty())
                throw DataError("line " + std::to_string(line_no) + ": empty prompt name");
            for (auto& surf : split_on(fields[2], ',')) {
                Attribute a;
                a.id = next_attr++;
                a.surface_words = split_ws(trim(surf));
                if (a.surface_words.empty())
                    throw DataError("line " + std::to_string(line_no) +
                                    ": empty attribute surface");
                a.prompt_id = ps.id;
                ps.member_ids.push_back(a.id);
                space.attributes.push_back(std::move(a));
            }
            space.prompts.push_back(std::move(ps));
        } else {
            if (fields.size() != 2)
                throw DataError("line " + std::to_string(line_no) +
                                ": class line wants 'name<TAB>degrees'");
            matrix.class_names.push_back(fields[0]);
            std::vector<double> degs;
            for (const auto& tok : split_ws(fields[1])) degs.push_back(parse_degree(tok, line_no));
            if (static_cast<int>(degs.size()) != next_attr)
                throw DataError("line " + std::to_string(line_no) + ": expected " +
                                std::to_string(next_attr) + " degrees, got " +
                                std::to_string(degs.size()));
            rows.push_back(std::move(degs));
        }
    }
    if (space.prompts.empty()) throw DataError("space file has no prompt lines");
    if (rows.empty()) throw DataError("space file has no class rows");
    space.validate();
    matrix.z = Mat::Zero(static_cast<int>(rows.size()), next_attr);
    for (size_t r = 0; r < rows.size(); ++r)
        for (int a = 0; a < next_attr; ++a) matrix.z(static_cast<int>(r), a) = rows[r][static_cast<size_t>(a)];
    for (int c = 0; c < matrix.n_classes(); ++c) attribute_set_of(c, matrix);  // invariant check
    return {std::move(space), std::move(matrix)};
}

void write_space_file(const std::string& path, const AttributeSpace& space,
                      const ClassAttributeMatrix& matrix) {
    write_text_file(path, format_space(space, matrix));
}

std::pair<AttributeSpace, ClassAttributeMatrix> read_space_file(const std::string& path) {
    return parse_space(read_text_file(path));
}

std::string format_split(const Split& split) {
    std::string out;
    for (size_t i = 0; i < split.seen.size(); ++i)
        out += (i ? " " : "") + std::to_string(split.seen[i]);
    out += "\n";
    for (size_t i = 0; i < split.unseen.size(); ++i)
        out += (i ? " " : "") + std::to_string(split.unseen[i]);
    out += "\n";
    return out;
}

Split parse_split(const std::string& text, int n_classes) {
    std::istringstream in(text);
    std::string l1, l2;
    if (!std::getline(in, l1) || !std::getline(in, l2))
        throw DataError("split: expected two lines of class ids");
    Split s;
    for (const auto& tok : split_ws(l1)) s.seen.push_back(std::stoi(tok));
    for (const auto& tok : split_ws(l2)) s.unseen.push_back(std::stoi(tok));
    std::sort(s.seen.begin(), s.seen.end());
    std::sort(s.unseen.begin(), s.unseen.end());
    s.validate(n_classes);
    return s;
}

void write_split_file(const std::string& path, const Split& split) {
    write_text_file(path, format_split(split));
}

Split read_split_file(const std::string& path, int n_classes) {
    return parse_split(read_text_file(path), n_classes);
}

std::vector<Triple> parse_triples(const std::string& text) {
    std::vector<Triple> out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto fields = split_on(line, '\t');
        if (fields.size() != 3)
            throw DataError("line " + std::to_string(line_no) +
                            ": triple wants subject<TAB>relation<TAB>object");
        out.push_back({trim(fields[0]), trim(fields[1]), trim(fields[2])});
    }
    return out;
}

std::vector<Triple> read_triples_file(const std::string& path) {
    return parse_triples(read_text_file(path));
}

}  // namespace duet
