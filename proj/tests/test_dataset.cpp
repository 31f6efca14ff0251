#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "idkl/dataset.hpp"
#include "support.hpp"

using namespace idkl;
using namespace idkl::data;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.n_identities = 4;
    s.images_per_modality = 4;
    s.height = 8;
    s.width = 6;
    return s;
}

}  // namespace

TEST(Generate, NoNoiseNoShiftMakesModalitiesIdentical) {
    SyntheticSpec s = small_spec();
    s.noise = 0.0;
    s.style_shift = 0.0;
    const Dataset ds = generate(s);
    for (std::size_t id = 0; id < s.n_identities; ++id) {
        const auto v = ds.images_of(id, Modality::visible);
        const auto i = ds.images_of(id, Modality::infrared);
        ASSERT_EQ(v.size(), i.size());
        for (std::size_t k = 0; k < v.size(); ++k) EXPECT_EQ(v[k]->image.vec(), i[k]->image.vec());
    }
}

TEST(Generate, StyleShiftSeparatesModalities) {
    SyntheticSpec s = small_spec();
    s.noise = 0.0;
    const Dataset ds = generate(s);
    EXPECT_NE(ds.images_of(0, Modality::visible)[0]->image.vec(), ds.images_of(0, Modality::infrared)[0]->image.vec());
}

TEST(Generate, DefaultScaleCounts) {
    const SyntheticSpec s;
    const Dataset ds = generate(s);
    EXPECT_EQ(ds.samples.size(), 256u);
    EXPECT_EQ(ds.n_identities(), 16u);
    EXPECT_EQ(ds.image_shape(), (Shape{3, 32, 16}));
}

TEST(Generate, SameSeedIsByteIdenticalOnDisk) {
    test::TempDir a("ds"), b("ds");
    const SyntheticSpec s = small_spec();
    save(generate(s), s, a.path());
    save(generate(s), s, b.path());
    std::size_t files = 0;
    for (const auto& e : std::filesystem::directory_iterator(a.path())) {
        EXPECT_EQ(slurp(e.path()), slurp(b.path() / e.path().filename())) << e.path();
        ++files;
    }
    EXPECT_EQ(files, s.n_identities * s.images_per_modality * 2 + 2);
}

TEST(Generate, SampleSeedChangesOnlyNoise) {
    SyntheticSpec s = small_spec();
    const Dataset base = generate(s);
    s.sample_seed = 1000;
    const Dataset other = generate(s);
    EXPECT_NE(base.samples[0].image.vec(), other.samples[0].image.vec());
    s.noise = 0.0;
    s.sample_seed = -1;
    const Dataset clean_a = generate(s);
    s.sample_seed = 5;
    const Dataset clean_b = generate(s);
    EXPECT_EQ(clean_a.samples[3].image.vec(), clean_b.samples[3].image.vec());
}

TEST(Generate, Validation) {
    SyntheticSpec s;
    s.n_identities = 0;
    EXPECT_THROW(generate(s), ContractError);
    s = {};
    s.noise = -0.1;
    EXPECT_THROW(generate(s), ContractError);
    EXPECT_THROW(spec_from_json({{"colour", 1}}), ContractError);
    EXPECT_EQ(spec_from_json(to_json(small_spec())).height, 8u);
}

TEST(SaveLoad, RoundTripIsBitExact) {
    test::TempDir dir("ds");
    const SyntheticSpec s = small_spec();
    const Dataset ds = generate(s);
    save(ds, s, dir.path());
    std::ifstream manifest(dir.path() / "manifest.csv");
    std::string header;
    std::getline(manifest, header);
    EXPECT_EQ(header, "file,identity,modality");
    std::size_t rows = 0;
    for (std::string line; std::getline(manifest, line);) ++rows;
    EXPECT_EQ(rows, ds.samples.size());
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "spec.json"));

    const Dataset back = load(dir.path());
    ASSERT_EQ(back.samples.size(), ds.samples.size());
    for (const auto& s0 : ds.samples) {
        const auto imgs = back.images_of(s0.identity, s0.modality);
        ASSERT_GT(imgs.size(), s0.index);
        EXPECT_EQ(imgs[s0.index]->image.vec(), s0.image.vec());
        EXPECT_EQ(imgs[s0.index]->file, s0.file);
    }
}

TEST(SaveLoad, MissingOrMalformedManifest) {
    test::TempDir dir("ds");
    EXPECT_THROW(load(dir.path()), std::runtime_error);
    std::ofstream(dir.path() / "manifest.csv") << "path,label\n";
    EXPECT_THROW(load(dir.path()), io::FormatError);
}

TEST(SampleBatch, FullSizeBatchShape) {
    SyntheticSpec s;
    s.n_identities = 12;
    s.images_per_modality = 10;
    s.height = 4;
    s.width = 4;
    const Dataset ds = generate(s);
    std::mt19937_64 rng(0);
    const Batch b = sample_batch(ds, 12, 10, rng);
    EXPECT_EQ(b.x.dim(0), 240u);
    EXPECT_EQ(b.half(), 120u);
    EXPECT_EQ(std::count(b.t.begin(), b.t.end(), 0), 120);
}

TEST(SampleBatch, SmallBatchLayout) {
    const Dataset ds = generate(small_spec());
    std::mt19937_64 rng(1);
    const Batch b = sample_batch(ds, 2, 2, rng);
    ASSERT_EQ(b.y.size(), 8u);
    EXPECT_EQ(b.t, (std::vector<int>{0, 0, 0, 0, 1, 1, 1, 1}));
    std::multiset<std::size_t> vis(b.y.begin(), b.y.begin() + 4), ir(b.y.begin() + 4, b.y.end());
    EXPECT_EQ(vis, ir);
    EXPECT_EQ(std::set<std::size_t>(vis.begin(), vis.end()).size(), 2u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(b.y[i], b.y[4 + i]);
    b.validate();
}

TEST(SampleBatch, DeterministicForFixedSeed) {
    const Dataset ds = generate(small_spec());
    std::mt19937_64 r1(7), r2(7);
    for (int i = 0; i < 5; ++i) {
        const Batch a = sample_batch(ds, 2, 3, r1);
        const Batch b = sample_batch(ds, 2, 3, r2);
        EXPECT_EQ(a.y, b.y);
        EXPECT_EQ(a.x.vec(), b.x.vec());
    }
}

TEST(SampleBatch, InsufficientData) {
    const Dataset ds = generate(small_spec());
    std::mt19937_64 rng(0);
    EXPECT_THROW(sample_batch(ds, 5, 2, rng), ContractError);
    EXPECT_THROW(sample_batch(ds, 2, 5, rng), ContractError);
}

TEST(SampleBatch, IdentityFrequencyIsUniform) {
    const Dataset ds = generate(SyntheticSpec{.height = 2, .width = 2});
    std::mt19937_64 rng(11);
    std::map<std::size_t, double> count;
    const std::size_t batches = 1000, P = 4;
    for (std::size_t i = 0; i < batches; ++i) {
        const Batch b = sample_batch(ds, P, 2, rng);
        for (std::size_t r = 0; r < b.half(); r += 2) count[b.y[r]] += 1.0;
    }
    const double p = static_cast<double>(P) / 16.0;
    const double expected = batches * p;
    const double sigma = std::sqrt(batches * p * (1.0 - p));
    double chi2 = 0.0;
    ASSERT_EQ(count.size(), 16u);
    for (const auto& [id, c] : count) {
        EXPECT_LT(std::abs(c - expected), 3.0 * sigma) << "identity " << id;
        chi2 += (c - expected) * (c - expected) / expected;
    }
    // 15 degrees of freedom, 0.1% upper tail.
    EXPECT_LT(chi2, 37.70);
}

TEST(Split, HalfSplitIsCrossModalAndDisjoint) {
    const Dataset ds = generate(SyntheticSpec{.height = 4, .width = 4});
    std::mt19937_64 rng(3);
    const RetrievalSplit sp = split(ds, 0.5, rng);
    EXPECT_EQ(sp.query.size(), 16u * 4);
    EXPECT_EQ(sp.gallery.size(), 16u * 4);
    std::map<std::size_t, std::set<std::size_t>> q_idx;
    std::set<std::string> q_files;
    for (const auto& s : sp.query) {
        EXPECT_EQ(s.modality, Modality::infrared);
        q_idx[s.identity].insert(s.index);
        q_files.insert(s.file);
    }
    for (const auto& s : sp.gallery) {
        EXPECT_EQ(s.modality, Modality::visible);
        EXPECT_FALSE(q_files.contains(s.file));
        EXPECT_FALSE(q_idx[s.identity].contains(s.index));
    }
    std::mt19937_64 rng2(3);
    const RetrievalSplit vis = split(ds, 0.5, rng2, Modality::visible);
    for (const auto& s : vis.query) EXPECT_EQ(s.modality, Modality::visible);
}

TEST(Split, Errors) {
    const Dataset ds = generate(small_spec());
    std::mt19937_64 rng(0);
    EXPECT_THROW(split(ds, 0.0, rng), ContractError);
    EXPECT_THROW(split(ds, 1.0, rng), ContractError);
    SyntheticSpec one = small_spec();
    one.images_per_modality = 1;
    EXPECT_THROW(split(generate(one), 0.5, rng), ContractError);
}

TEST(Modality, Names) {
    EXPECT_EQ(modality_name(Modality::infrared), "infrared");
    EXPECT_EQ(parse_modality("visible"), Modality::visible);
    EXPECT_THROW(parse_modality("thermal"), ContractError);
}
