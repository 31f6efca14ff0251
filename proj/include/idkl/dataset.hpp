#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "idkl/tensor.hpp"
#include "json.hpp"

namespace idkl::data {

enum class Modality : int { visible = 0, infrared = 1 };

std::string modality_name(Modality m);
Modality parse_modality(const std::string& s);

// P identities x K images x 2 modalities. Rows [0, N) are visible and rows
// [N, 2N) infrared, with identities in the same order in both halves, so
// row i and row N + i always share an identity.
struct Batch {
    Tensor x;                       // [2N x C x H x W]
    std::vector<std::size_t> y;     // identity labels
    std::vector<int> t;             // modality labels, 0 then 1
    std::size_t P = 0;
    std::size_t K = 0;

    std::size_t half() const { return P * K; }
    /// Throws ContractError unless the layout above holds.
    void validate() const;
};

/// Generator parameters for the synthetic two-modality identity set.
struct SyntheticSpec {
    std::size_t n_identities = 16;
    std::size_t images_per_modality = 8;
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 16;
    double identity_signal = 1.0;  // prototype amplitude
    double style_shift = 1.0;      // 0 = infrared equals visible, 1 = full infrared transform
    double noise = 0.5;            // per-pixel Gaussian noise std
    std::uint64_t seed = 0;        // prototypes and modality style
    std::int64_t sample_seed = -1; // per-image noise; -1 reuses `seed`
};

void validate(const SyntheticSpec& spec);
nlohmann::json to_json(const SyntheticSpec& spec);
/// Missing keys keep their defaults; unknown keys are rejected.
SyntheticSpec spec_from_json(const nlohmann::json& j);

struct Sample {
    std::string file;
    std::size_t identity = 0;
    Modality modality = Modality::visible;
    std::size_t index = 0;  // position among this identity's images of this modality
    Tensor image;           // [C x H x W]
};

struct Dataset {
    std::vector<Sample> samples;

    std::size_t n_identities() const;
    Shape image_shape() const;
    /// Samples of one identity and modality, ordered by index.
    std::vector<const Sample*> images_of(std::size_t identity, Modality m) const;
};

Dataset generate(const SyntheticSpec& spec);

/// Writes one IDKT file per sample, `manifest.csv` (file,identity,modality)
/// and `spec.json` into `dir`.
void save(const Dataset& ds, const SyntheticSpec& spec, const std::filesystem::path& dir);
Dataset load(const std::filesystem::path& dir);

/// Uniform choice of P identities without replacement, then K images per
/// modality without replacement.
Batch sample_batch(const Dataset& ds, std::size_t P, std::size_t K, std::mt19937_64& rng);

struct RetrievalSplit {
    std::vector<Sample> gallery;
    std::vector<Sample> query;
};

/// Per identity, a random `query_fraction` of image indices forms the query
/// set (taken from `query_modality`); the remaining indices form the gallery
/// (taken from the other modality).
RetrievalSplit split(const Dataset& ds, double query_fraction, std::mt19937_64& rng,
                     Modality query_modality = Modality::infrared);

/// Stacks [C x H x W] images into [n x C x H x W].
Tensor stack_images(const std::vector<Sample>& samples);

}  // namespace idkl::data
