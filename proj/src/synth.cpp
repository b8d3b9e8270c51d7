#include "duet/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "duet/ioutil.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset blobs are defined little-endian");

namespace duet {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::uint64_t kPatternTag = 0x7061747465726eULL;  // pattern stream
constexpr std::uint64_t kImageTag = 0x696d616765ULL;        // image noise stream
constexpr std::uint64_t kClassTag = 0x636c617373ULL;        // class structure stream

const char* kPromptWords[] = {"color",   "pattern", "shape",  "texture", "material", "finish",
                              "trim",    "style",   "surface", "tone",    "accent",   "motif"};

const char* kAttrWords[] = {
    "crimson", "azure",  "amber",  "jade",   "ivory",  "onyx",   "coral",  "slate",
    "ochre",   "teal",   "umber",  "pearl",  "rust",   "sage",   "plum",   "flax",
    "ebony",   "lilac",  "maroon", "mint",   "navy",   "olive",  "peach",  "quartz",
    "rose",    "sand",   "topaz",  "violet", "wheat",  "cobalt", "copper", "denim",
    "fawn",    "garnet", "hazel",  "indigo", "jasper", "khaki",  "lemon",  "mauve",
    "nickel",  "opal",   "pine",   "ruby",   "sepia",  "tan",    "ultramarine", "zinc"};

std::string prompt_word(int p) {
    constexpr int n = static_cast<int>(std::size(kPromptWords));
    if (p < n) return kPromptWords[p];
    return std::string(kPromptWords[p % n]) + std::to_string(p / n);
}

std::string attr_word(int global_index) {
    constexpr int n = static_cast<int>(std::size(kAttrWords));
    if (global_index < n) return kAttrWords[global_index];
    return std::string(kAttrWords[global_index % n]) + std::to_string(global_index / n);
}

}  // namespace

void GeneratorConfig::validate() const {
    if (n_classes < 2 || n_prompts < 1 || attributes_per_prompt < 2)
        throw ConfigError("generator: need >=2 classes and >=2 attributes per prompt");
    if (images_per_class < 1) throw ConfigError("generator: images_per_class must be positive");
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
        throw ConfigError("generator: image size must be a positive multiple of patch size");
    if (channels < 1) throw ConfigError("generator: channels must be positive");
    if (noise_sigma < 0.0) throw ConfigError("generator: negative noise sigma");
    if (skew < 0.0) throw ConfigError("generator: negative skew");
    if (!(coupling >= 0.0 && coupling <= 1.0)) throw ConfigError("generator: coupling outside [0,1]");
    if (!(unseen_fraction >= 0.0 && unseen_fraction < 1.0))
        throw ConfigError("generator: unseen fraction outside [0,1)");
    const double combos = std::pow(static_cast<double>(attributes_per_prompt), n_prompts);
    if (combos < static_cast<double>(n_classes))
        throw ConfigError("generator: fewer attribute combinations than requested classes");
}

PatchRegion region_of_prompt(int prompt_id, const GeneratorConfig& config) {
    const int p = config.n_prompts;
    if (prompt_id < 0 || prompt_id >= p) throw ConfigError("region_of_prompt: bad prompt id");
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p))));
    const int rows = (p + cols - 1) / cols;
    const int r = prompt_id / cols;
    const int c = prompt_id % cols;
    PatchRegion reg;
    reg.y0 = r * config.image_size / rows;
    reg.y1 = (r + 1) * config.image_size / rows;
    reg.x0 = c * config.image_size / cols;
    reg.x1 = (c + 1) * config.image_size / cols;
    return reg;
}

std::tuple<AttributeSpace, ClassAttributeMatrix, Split> gen_classes(const GeneratorConfig& config) {
    config.validate();
    const int P = config.n_prompts, A = config.attributes_per_prompt;

    AttributeSpace space;
    for (int p = 0; p < P; ++p) {
        PromptSet ps;
        ps.id = p;
        ps.name_words = {prompt_word(p)};
        for (int j = 0; j < A; ++j) {
            Attribute a;
            a.id = p * A + j;
            a.surface_words = {attr_word(p * A + j)};
            a.prompt_id = p;
            ps.member_ids.push_back(a.id);
            space.attributes.push_back(std::move(a));
        }
        space.prompts.push_back(std::move(ps));
    }
    space.validate();

    // Zipf-like categorical over per-prompt choices.
    std::vector<double> weights(static_cast<size_t>(A));
    double total = 0.0;
    for (int j = 0; j < A; ++j) {
        weights[static_cast<size_t>(j)] = 1.0 / std::pow(static_cast<double>(j + 1), config.skew);
        total += weights[static_cast<size_t>(j)];
    }

    SeededRng rng = SeededRng::derive(config.seed, {kClassTag});
    auto pick = [&]() {
        const double r = rng.uniform() * total;
        double cum = 0.0;
        for (int j = 0; j < A; ++j) {
            cum += weights[static_cast<size_t>(j)];
            if (r < cum) return j;
        }
        return A - 1;
    };

    std::set<std::vector<int>> taken;
    std::vector<std::vector<int>> choices;
    const int max_attempts = 1000 * config.n_classes;
    int attempts = 0;
    while (static_cast<int>(choices.size()) < config.n_classes) {
        if (++attempts > max_attempts)
            throw DataError("gen_classes: could not draw " + std::to_string(config.n_classes) +
                            " distinct classes; lower skew/coupling or class count");
        std::vector<int> v(static_cast<size_t>(P));
        for (int p = 0; p < P; ++p) {
            if (p % 2 == 1 && rng.uniform() < config.coupling)
                v[static_cast<size_t>(p)] = v[static_cast<size_t>(p - 1)];
            else
                v[static_cast<size_t>(p)] = pick();
        }
        if (taken.insert(v).second) choices.push_back(std::move(v));
    }

    ClassAttributeMatrix matrix;
    matrix.z = Mat::Zero(config.n_classes, P * A);
    for (int c = 0; c < config.n_classes; ++c) {
        std::string name = "class_" + std::string(c < 10 ? "0" : "") + std::to_string(c);
        matrix.class_names.push_back(name);
        for (int p = 0; p < P; ++p)
            matrix.z(c, p * A + choices[static_cast<size_t>(c)][static_cast<size_t>(p)]) = 1.0;
    }

    // Unseen pick: a seeded subset where knowledge transfer stays possible.
    const int n_unseen =
        std::min(config.n_classes - 1,
                 static_cast<int>(std::llround(config.unseen_fraction * config.n_classes)));
    Split split;
    if (n_unseen == 0) {
        for (int c = 0; c < config.n_classes; ++c) split.seen.push_back(c);
    } else {
        std::vector<int> ids(static_cast<size_t>(config.n_classes));
        for (int c = 0; c < config.n_classes; ++c) ids[static_cast<size_t>(c)] = c;
        bool ok = false;
        for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
            for (size_t i = ids.size(); i > 1; --i)
                std::swap(ids[i - 1], ids[rng.uniform_int(i)]);
            split.unseen.assign(ids.begin(), ids.begin() + n_unseen);
            split.seen.assign(ids.begin() + n_unseen, ids.end());
            std::sort(split.unseen.begin(), split.unseen.end());
            std::sort(split.seen.begin(), split.seen.end());
            ok = true;
            for (int u : split.unseen) {
                bool shares = false;
                for (int s : split.seen)
                    for (int p = 0; p < P && !shares; ++p)
                        shares = choices[static_cast<size_t>(u)][static_cast<size_t>(p)] ==
                                 choices[static_cast<size_t>(s)][static_cast<size_t>(p)];
                ok = ok && shares;
            }
        }
        if (!ok)
            throw DataError("gen_classes: no unseen split with shared attributes; "
                            "increase class count or attributes per prompt");
    }
    split.validate(config.n_classes);
    return {std::move(space), std::move(matrix), std::move(split)};
}

Image render_image(int class_id, int image_idx, const ClassAttributeMatrix& matrix,
                   const GeneratorConfig& config) {
    if (class_id < 0 || class_id >= matrix.n_classes())
        throw DataError("render_image: class id out of range");
    if (image_idx < 0 || image_idx >= config.images_per_class)
        throw DataError("render_image: image index out of range");
    const int H = config.image_size, W = config.image_size, C = config.channels;
    const int A = config.attributes_per_prompt;

    std::vector<double> base(static_cast<size_t>(H * W * C), 0.0);
    for (int p = 0; p < config.n_prompts; ++p) {
        int attr = -1;
        for (int j = 0; j < A; ++j) {
            if (matrix.member(class_id, p * A + j)) {
                if (attr != -1)
                    throw DataError("render_image: class holds several attributes in one prompt");
                attr = p * A + j;
            }
        }
        if (attr == -1) throw DataError("render_image: class holds no attribute in a prompt");
        const PatchRegion reg = region_of_prompt(p, config);
        SeededRng pattern =
            SeededRng::derive(config.seed, {kPatternTag, static_cast<std::uint64_t>(attr)});
        for (int y = reg.y0; y < reg.y1; ++y)
            for (int x = reg.x0; x < reg.x1; ++x)
                for (int ch = 0; ch < C; ++ch)
                    base[static_cast<size_t>((y * W + x) * C + ch)] = pattern.uniform();
    }

    SeededRng noise = SeededRng::derive(
        config.seed,
        {kImageTag, static_cast<std::uint64_t>(class_id), static_cast<std::uint64_t>(image_idx)});
    Image img;
    img.h = H;
    img.w = W;
    img.c = C;
    img.px.resize(base.size());
    for (size_t i = 0; i < base.size(); ++i) {
        double v = base[i];
        if (config.noise_sigma > 0.0) v += config.noise_sigma * noise.normal();
        img.px[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return img;
}

PatchWorldDataset PatchWorldDataset::generate(const GeneratorConfig& config) {
    PatchWorldDataset ds;
    std::tie(ds.space, ds.matrix, ds.split) = gen_classes(config);
    ds.config = config;
    ds.images_.resize(static_cast<size_t>(config.n_classes));
    for (int c = 0; c < config.n_classes; ++c) {
        ds.images_[static_cast<size_t>(c)].reserve(static_cast<size_t>(config.images_per_class));
        for (int i = 0; i < config.images_per_class; ++i)
            ds.images_[static_cast<size_t>(c)].push_back(render_image(c, i, ds.matrix, config));
    }
    return ds;
}

const Image& PatchWorldDataset::image(int class_id, int image_idx) const {
    if (class_id < 0 || class_id >= static_cast<int>(images_.size()))
        throw DataError("dataset: class id out of range");
    const auto& v = images_[static_cast<size_t>(class_id)];
    if (image_idx < 0 || image_idx >= static_cast<int>(v.size()))
        throw DataError("dataset: image index out of range");
    return v[static_cast<size_t>(image_idx)];
}

namespace {

json generator_to_json(const GeneratorConfig& g) {
    return json{{"n_classes", g.n_classes},
                {"n_prompts", g.n_prompts},
                {"attributes_per_prompt", g.attributes_per_prompt},
                {"images_per_class", g.images_per_class},
                {"image_size", g.image_size},
                {"patch_size", g.patch_size},
                {"channels", g.channels},
                {"noise_sigma", g.noise_sigma},
                {"skew", g.skew},
                {"coupling", g.coupling},
                {"unseen_fraction", g.unseen_fraction},
                {"seed", g.seed}};
}

GeneratorConfig generator_from_json(const json& j) {
    GeneratorConfig g;
    g.n_classes = j.at("n_classes").get<int>();
    g.n_prompts = j.at("n_prompts").get<int>();
    g.attributes_per_prompt = j.at("attributes_per_prompt").get<int>();
    g.images_per_class = j.at("images_per_class").get<int>();
    g.image_size = j.at("image_size").get<int>();
    g.patch_size = j.at("patch_size").get<int>();
    g.channels = j.at("channels").get<int>();
    g.noise_sigma = j.at("noise_sigma").get<double>();
    g.skew = j.at("skew").get<double>();
    g.coupling = j.at("coupling").get<double>();
    g.unseen_fraction = j.at("unseen_fraction").get<double>();
    g.seed = j.at("seed").get<std::uint64_t>();
    return g;
}

}  // namespace

void write_dataset(const std::string& dir, const PatchWorldDataset& dataset) {
    if (dir.empty()) throw IoError("write_dataset: empty path");
    fs::create_directories(dir);
    write_space_file(dir + "/space.txt", dataset.space, dataset.matrix);
    write_split_file(dir + "/split.txt", dataset.split);

    const auto& cfg = dataset.config;
    const size_t per_image = static_cast<size_t>(cfg.image_size) * cfg.image_size * cfg.channels;
    std::vector<float> blob;
    blob.reserve(per_image * static_cast<size_t>(cfg.n_classes) * cfg.images_per_class);
    for (const auto& cls : dataset.store())
        for (const auto& img : cls) blob.insert(blob.end(), img.px.begin(), img.px.end());
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(blob.data());
    const size_t n_bytes = blob.size() * sizeof(float);
    write_binary_file(dir + "/images.bin", bytes, n_bytes);

    json manifest{{"format", "duet-patchworld"},
                  {"version", 1},
                  {"dtype", "float32"},
                  {"byte_order", "little-endian"},
                  {"image_shape", {cfg.image_size, cfg.image_size, cfg.channels}},
                  {"n_classes", cfg.n_classes},
                  {"images_per_class", cfg.images_per_class},
                  {"layout", "class-major"},
                  {"images_hash", "fnv1a64:" + hex64(fnv1a64(bytes, n_bytes))},
                  {"generator", generator_to_json(cfg)}};
    write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

PatchWorldDataset read_dataset(const std::string& dir) {
    if (dir.empty()) throw IoError("read_dataset: empty path");
    json manifest;
    try {
        manifest = json::parse(read_text_file(dir + "/manifest.json"));
    } catch (const json::parse_error& e) {
        throw DataError(std::string("manifest.json: ") + e.what());
    }
    if (manifest.value("format", "") != "duet-patchworld")
        throw DataError("manifest.json: not a patch-world dataset");
    if (manifest.value("dtype", "") != "float32" ||
        manifest.value("byte_order", "") != "little-endian")
        throw DataError("manifest.json: unsupported dtype/byte order");

    PatchWorldDataset ds;
    ds.config = generator_from_json(manifest.at("generator"));
    std::tie(ds.space, ds.matrix) = read_space_file(dir + "/space.txt");
    ds.split = read_split_file(dir + "/split.txt", ds.matrix.n_classes());

    const int n_classes = manifest.at("n_classes").get<int>();
    const int per_class = manifest.at("images_per_class").get<int>();
    if (n_classes != ds.matrix.n_classes())
        throw DataError("manifest class count does not match the matrix rows");
    if (n_classes != ds.config.n_classes || per_class != ds.config.images_per_class)
        throw DataError("manifest counts do not match the generator record");

    auto bytes = read_binary_file(dir + "/images.bin");
    const std::string want = manifest.at("images_hash").get<std::string>();
    const std::string got = "fnv1a64:" + hex64(fnv1a64(bytes.data(), bytes.size()));
    if (want != got) throw DataError("images.bin: checksum mismatch (corrupt dataset)");

    const auto shape = manifest.at("image_shape");
    const int h = shape.at(0).get<int>(), w = shape.at(1).get<int>(), c = shape.at(2).get<int>();
    const size_t per_image = static_cast<size_t>(h) * w * c;
    const size_t expect = per_image * static_cast<size_t>(n_classes) * per_class * sizeof(float);
    if (bytes.size() != expect) throw DataError("images.bin: unexpected size");

    const float* f = reinterpret_cast<const float*>(bytes.data());
    ds.store().resize(static_cast<size_t>(n_classes));
    for (int cls = 0; cls < n_classes; ++cls) {
        for (int i = 0; i < per_class; ++i) {
            Image img;
            img.h = h;
            img.w = w;
            img.c = c;
            img.px.assign(f, f + per_image);
            f += per_image;
            ds.store()[static_cast<size_t>(cls)].push_back(std::move(img));
        }
    }
    return ds;
}

}  // namespace duet
