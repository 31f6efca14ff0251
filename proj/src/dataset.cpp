#include "idkl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "idkl/io.hpp"

namespace idkl::data {
namespace {

using Plane = std::vector<double>;

// Smooth random field: Gaussian values on a coarse grid, bilinearly upsampled.
Plane smooth_field(std::size_t h, std::size_t w, std::mt19937_64& rng) {
    const std::size_t gh = std::max<std::size_t>(1, h / 4), gw = std::max<std::size_t>(1, w / 4);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> grid(gh * gw);
    for (double& v : grid) v = normal(rng);
    auto coord = [](std::size_t i, std::size_t n, std::size_t g) {
        const double u = (static_cast<double>(i) + 0.5) * static_cast<double>(g) / static_cast<double>(n) - 0.5;
        return std::clamp(u, 0.0, static_cast<double>(g - 1));
    };
    Plane out(h * w);
    for (std::size_t i = 0; i < h; ++i) {
        const double u = coord(i, h, gh);
        const auto i0 = static_cast<std::size_t>(u);
        const std::size_t i1 = std::min(i0 + 1, gh - 1);
        const double fu = u - static_cast<double>(i0);
        for (std::size_t j = 0; j < w; ++j) {
            const double v = coord(j, w, gw);
            const auto j0 = static_cast<std::size_t>(v);
            const std::size_t j1 = std::min(j0 + 1, gw - 1);
            const double fv = v - static_cast<double>(j0);
            out[i * w + j] = (1 - fu) * ((1 - fv) * grid[i0 * gw + j0] + fv * grid[i0 * gw + j1]) +
                             fu * ((1 - fv) * grid[i1 * gw + j0] + fv * grid[i1 * gw + j1]);
        }
    }
    return out;
}

std::string sample_file(std::size_t identity, Modality m, std::size_t index) {
    std::ostringstream os;
    os << "id" << identity << '_' << (m == Modality::visible ? 'v' : 'i') << index << ".idkt";
    return os.str();
}

template <typename T>
T take(const nlohmann::json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

std::string modality_name(Modality m) { return m == Modality::visible ? "visible" : "infrared"; }

Modality parse_modality(const std::string& s) {
    if (s == "visible") return Modality::visible;
    if (s == "infrared") return Modality::infrared;
    throw ContractError("unknown modality '" + s + "'");
}

void Batch::validate() const {
    const std::size_t n = half();
    if (P == 0 || K == 0) {
        throw ContractError("batch needs P >= 1 and K >= 1");
    }
    if (x.rank() != 4 || x.dim(0) != 2 * n || y.size() != 2 * n || t.size() != 2 * n) {
        throw ContractError("batch is not laid out as P x K x 2 rows (P=" + std::to_string(P) +
                            ", K=" + std::to_string(K) + ", x " + shape_str(x.shape()) + ")");
    }
    for (std::size_t i = 0; i < 2 * n; ++i) {
        if (t[i] != (i < n ? 0 : 1)) {
            throw ContractError("batch modality labels must be N visible rows then N infrared rows");
        }
    }
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t i = 0; i < n; ++i) {
        if (y[i] != y[n + i]) {
            throw ContractError("batch halves must list identities in the same order");
        }
        ++counts[y[i]];
    }
    if (counts.size() != P) {
        throw ContractError("batch must hold exactly P distinct identities");
    }
    for (const auto& [id, c] : counts) {
        if (c != K) {
            throw ContractError("identity " + std::to_string(id) + " has " + std::to_string(c) +
                                " images per modality, expected K=" + std::to_string(K));
        }
    }
}

void validate(const SyntheticSpec& s) {
    if (s.n_identities < 1 || s.images_per_modality < 1 || s.channels < 1 || s.height < 1 || s.width < 1) {
        throw ContractError("synthetic spec counts must all be >= 1");
    }
    if (!(s.noise >= 0.0) || !(s.identity_signal >= 0.0) || !(s.style_shift >= 0.0)) {
        throw ContractError("synthetic spec noise, identity_signal and style_shift must be >= 0");
    }
}

nlohmann::json to_json(const SyntheticSpec& s) {
    return {{"n_identities", s.n_identities},
            {"images_per_modality", s.images_per_modality},
            {"channels", s.channels},
            {"height", s.height},
            {"width", s.width},
            {"identity_signal", s.identity_signal},
            {"style_shift", s.style_shift},
            {"noise", s.noise},
            {"seed", s.seed},
            {"sample_seed", s.sample_seed}};
}

SyntheticSpec spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ContractError("synthetic spec must be a JSON object");
    }
    static const std::set<std::string> known{"n_identities", "images_per_modality", "channels", "height", "width",
                                             "identity_signal", "style_shift", "noise", "seed", "sample_seed"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) {
            throw ContractError("unknown synthetic spec key '" + key + "'");
        }
    }
    SyntheticSpec d;
    SyntheticSpec s;
    try {
        s.n_identities = take<std::size_t>(j, "n_identities", d.n_identities);
        s.images_per_modality = take<std::size_t>(j, "images_per_modality", d.images_per_modality);
        s.channels = take<std::size_t>(j, "channels", d.channels);
        s.height = take<std::size_t>(j, "height", d.height);
        s.width = take<std::size_t>(j, "width", d.width);
        s.identity_signal = take<double>(j, "identity_signal", d.identity_signal);
        s.style_shift = take<double>(j, "style_shift", d.style_shift);
        s.noise = take<double>(j, "noise", d.noise);
        s.seed = take<std::uint64_t>(j, "seed", d.seed);
        s.sample_seed = take<std::int64_t>(j, "sample_seed", d.sample_seed);
    } catch (const nlohmann::json::exception& e) {
        throw ContractError(std::string("synthetic spec: ") + e.what());
    }
    validate(s);
    return s;
}

std::size_t Dataset::n_identities() const {
    std::set<std::size_t> ids;
    for (const auto& s : samples) ids.insert(s.identity);
    return ids.size();
}

Shape Dataset::image_shape() const {
    if (samples.empty()) {
        throw ContractError("empty dataset");
    }
    return samples.front().image.shape();
}

std::vector<const Sample*> Dataset::images_of(std::size_t identity, Modality m) const {
    std::vector<const Sample*> out;
    for (const auto& s : samples) {
        if (s.identity == identity && s.modality == m) out.push_back(&s);
    }
    std::sort(out.begin(), out.end(), [](const Sample* a, const Sample* b) { return a->index < b->index; });
    return out;
}

Dataset generate(const SyntheticSpec& spec) {
    validate(spec);
    const std::size_t c = spec.channels, h = spec.height, w = spec.width, hw = h * w;

    std::mt19937_64 proto_rng(spec.seed);
    std::vector<std::vector<Plane>> prototypes(spec.n_identities);
    for (auto& proto : prototypes) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            Plane p = smooth_field(h, w, proto_rng);
            for (double& v : p) v *= spec.identity_signal;
            proto.push_back(std::move(p));
        }
    }

    // Infrared style: per-channel gain and offset on the channel-collapsed
    // image plus a fixed additive pattern.
    std::mt19937_64 style_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> gain_dist(0.5, 1.5);
    std::normal_distribution<double> offset_dist(0.0, 0.5);
    std::vector<double> gain(c), offset(c);
    std::vector<Plane> pattern(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        gain[ch] = gain_dist(style_rng);
        offset[ch] = offset_dist(style_rng);
        pattern[ch] = smooth_field(h, w, style_rng);
        for (double& v : pattern[ch]) v *= 0.5;
    }

    const std::uint64_t noise_seed =
        spec.sample_seed < 0 ? spec.seed : static_cast<std::uint64_t>(spec.sample_seed);
    std::mt19937_64 noise_rng(noise_seed + 0x5851f42d4c957f2dULL);
    std::normal_distribution<double> normal(0.0, 1.0);

    Dataset ds;
    for (std::size_t id = 0; id < spec.n_identities; ++id) {
        const auto& proto = prototypes[id];
        Plane gray(hw, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < hw; ++i) gray[i] += proto[ch][i] / static_cast<double>(c);
        }
        for (Modality m : {Modality::visible, Modality::infrared}) {
            for (std::size_t k = 0; k < spec.images_per_modality; ++k) {
                std::vector<double> img(c * hw);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    for (std::size_t i = 0; i < hw; ++i) {
                        double v = proto[ch][i];
                        if (m == Modality::infrared) {
                            const double styled = gain[ch] * gray[i] + offset[ch] + pattern[ch][i];
                            v = (1.0 - spec.style_shift) * v + spec.style_shift * styled;
                        }
                        img[ch * hw + i] = v;
                    }
                }
                if (spec.noise > 0.0) {
                    for (double& v : img) v += spec.noise * normal(noise_rng);
                }
                ds.samples.push_back({sample_file(id, m, k), id, m, k, Tensor({c, h, w}, std::move(img))});
            }
        }
    }
    return ds;
}

void save(const Dataset& ds, const SyntheticSpec& spec, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::ofstream manifest(dir / "manifest.csv");
    if (ec || !manifest) {
        throw std::runtime_error("cannot write dataset to " + dir.string());
    }
    manifest << "file,identity,modality\n";
    for (const auto& s : ds.samples) {
        io::save_tensor(dir / s.file, s.image);
        manifest << s.file << ',' << s.identity << ',' << modality_name(s.modality) << '\n';
    }
    std::ofstream(dir / "spec.json") << to_json(spec).dump(2) << '\n';
}

Dataset load(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.csv");
    if (!manifest) {
        throw std::runtime_error("no manifest.csv in " + dir.string());
    }
    std::string line;
    if (!std::getline(manifest, line) || line != "file,identity,modality") {
        throw io::FormatError("bad manifest header in " + dir.string());
    }
    Dataset ds;
    std::map<std::pair<std::size_t, int>, std::size_t> next_index;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string file, identity, modality;
        if (!std::getline(row, file, ',') || !std::getline(row, identity, ',') || !std::getline(row, modality)) {
            throw io::FormatError("malformed manifest row: " + line);
        }
        Sample s;
        s.file = file;
        s.identity = std::stoul(identity);
        s.modality = parse_modality(modality);
        s.index = next_index[{s.identity, static_cast<int>(s.modality)}]++;
        s.image = io::load_tensor(dir / file);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Tensor stack_images(const std::vector<Sample>& samples) {
    if (samples.empty()) {
        throw ContractError("stack_images: no samples");
    }
    const Shape shape = samples.front().image.shape();
    std::vector<double> data;
    data.reserve(samples.size() * shape_numel(shape));
    for (const auto& s : samples) {
        if (s.image.shape() != shape) {
            throw DimensionError("stack_images: mixed image shapes");
        }
        data.insert(data.end(), s.image.vec().begin(), s.image.vec().end());
    }
    Shape out{samples.size()};
    out.insert(out.end(), shape.begin(), shape.end());
    return Tensor(std::move(out), std::move(data));
}

Batch sample_batch(const Dataset& ds, std::size_t P, std::size_t K, std::mt19937_64& rng) {
    std::vector<std::size_t> ids;
    for (const auto& s : ds.samples) ids.push_back(s.identity);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (P == 0 || K == 0 || ids.size() < P) {
        throw ContractError("sample_batch: dataset has " + std::to_string(ids.size()) + " identities, need P=" +
                            std::to_string(P));
    }
    // Partial Fisher-Yates for P identities without replacement.
    for (std::size_t i = 0; i < P; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(P);

    std::vector<Sample> rows[2];
    for (std::size_t id : ids) {
        for (Modality m : {Modality::visible, Modality::infrared}) {
            auto imgs = ds.images_of(id, m);
            if (imgs.size() < K) {
                throw ContractError("sample_batch: identity " + std::to_string(id) + " has " +
                                    std::to_string(imgs.size()) + " " + modality_name(m) + " images, need K=" +
                                    std::to_string(K));
            }
            for (std::size_t i = 0; i < K; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, imgs.size() - 1);
                std::swap(imgs[i], imgs[pick(rng)]);
                rows[static_cast<int>(m)].push_back(*imgs[i]);
            }
        }
    }
    std::vector<Sample> all = rows[0];
    all.insert(all.end(), rows[1].begin(), rows[1].end());

    Batch b;
    b.P = P;
    b.K = K;
    b.x = stack_images(all);
    for (const auto& s : all) {
        b.y.push_back(s.identity);
        b.t.push_back(static_cast<int>(s.modality));
    }
    b.validate();
    return b;
}

RetrievalSplit split(const Dataset& ds, double query_fraction, std::mt19937_64& rng, Modality query_modality) {
    if (!(query_fraction > 0.0 && query_fraction < 1.0)) {
        throw ContractError("split: query fraction must lie in (0, 1)");
    }
    const Modality gallery_modality =
        query_modality == Modality::visible ? Modality::infrared : Modality::visible;
    std::set<std::size_t> ids;
    for (const auto& s : ds.samples) ids.insert(s.identity);

    RetrievalSplit out;
    for (std::size_t id : ids) {
        const auto q_imgs = ds.images_of(id, query_modality);
        const auto g_imgs = ds.images_of(id, gallery_modality);
        const std::size_t n = std::min(q_imgs.size(), g_imgs.size());
        const auto n_query = static_cast<std::size_t>(std::llround(query_fraction * static_cast<double>(n)));
        if (n_query == 0 || n_query >= n) {
            throw ContractError("split: identity " + std::to_string(id) + " has too few images to split");
        }
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(order[i], order[pick(rng)]);
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (i < n_query) {
                out.query.push_back(*q_imgs[order[i]]);
            } else {
                out.gallery.push_back(*g_imgs[order[i]]);
            }
        }
    }
    return out;
}

}  // namespace idkl::data
