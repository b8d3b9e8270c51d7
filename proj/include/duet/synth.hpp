#pragma once

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "duet/attrspace.hpp"
#include "duet/image.hpp"
#include "duet/rng.hpp"

namespace duet {

/// Patch-world generator settings. Classes pick one attribute per prompt set
/// from a skewed categorical (imbalance); odd prompts copy their left
/// neighbour's choice index with probability `coupling` (co-occurrence).
struct GeneratorConfig {
    int n_classes = 20;
    int n_prompts = 4;
    int attributes_per_prompt = 4;
    int images_per_class = 40;
    int image_size = 32;
    int patch_size = 8;
    int channels = 1;
    double noise_sigma = 0.1;
    double skew = 0.0;
    double coupling = 0.0;
    double unseen_fraction = 0.2;
    std::uint64_t seed = 0;

    void validate() const;
};

struct PatchRegion {
    int y0 = 0, y1 = 0, x0 = 0, x1 = 0;
    bool contains(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

/// The image rectangle owned by a prompt set.
PatchRegion region_of_prompt(int prompt_id, const GeneratorConfig& config);

/// Class structure: a binary categorical matrix (one attribute per prompt per
/// class, all class vectors distinct) plus a seen/unseen split where every
/// unseen class shares at least one attribute with a seen class and no unseen
/// vector appears among the seen ones.
std::tuple<AttributeSpace, ClassAttributeMatrix, Split> gen_classes(const GeneratorConfig& config);

/// Deterministic render: each prompt's region shows its attribute's fixed
/// base pattern plus Gaussian noise from a stream keyed by
/// (seed, class, index); pixels clipped to [0,1] and quantized to float32.
Image render_image(int class_id, int image_idx, const ClassAttributeMatrix& matrix,
                   const GeneratorConfig& config);

class PatchWorldDataset {
public:
    AttributeSpace space;
    ClassAttributeMatrix matrix;
    Split split;
    GeneratorConfig config;

    static PatchWorldDataset generate(const GeneratorConfig& config);

    const Image& image(int class_id, int image_idx) const;
    int images_per_class() const { return config.images_per_class; }
    int n_classes() const { return matrix.n_classes(); }

    std::vector<std::vector<Image>>& store() { return images_; }
    const std::vector<std::vector<Image>>& store() const { return images_; }

private:
    std::vector<std::vector<Image>> images_;  // [class][index]
};

/// Dataset directory: space.txt, split.txt, images.bin (little-endian
/// float32, row-major, class-major order) and manifest.json with a content
/// hash of the blob.
void write_dataset(const std::string& dir, const PatchWorldDataset& dataset);
PatchWorldDataset read_dataset(const std::string& dir);

}  // namespace duet
