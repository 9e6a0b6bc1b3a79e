#include <doctest.h>

#include <Eigen/Dense>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "admc/dataset.hpp"
#include "admc/tensor_io.hpp"

using namespace admc;
namespace fs = std::filesystem;

namespace {

DatasetSpec small_spec() {
    DatasetSpec sp;
    sp.train_samples = 240;
    sp.val_samples = 60;
    sp.test_samples = 60;
    sp.seed = 33;
    return sp;
}

bool same_bytes(const Tensor<float>& a, const Tensor<float>& b) {
    return a.dims() == b.dims() &&
           std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * 4) == 0;
}

} // namespace

TEST_CASE("generation is deterministic per seed and class-balanced") {
    auto sp = small_spec();
    Dataset d1 = generate_dataset(sp);
    Dataset d2 = generate_dataset(sp);
    REQUIRE(d1.train.size() == 240);
    REQUIRE(d1.val.size() == 60);
    REQUIRE(d1.test.size() == 60);
    for (size_t i = 0; i < d1.train.size(); ++i) {
        CHECK(d1.train[i].label == d2.train[i].label);
        for (Modality m : kModalities)
            CHECK(same_bytes(d1.train[i].of(m), d2.train[i].of(m)));
    }
    std::vector<int> counts(4, 0);
    for (const auto& s : d1.train) ++counts[static_cast<size_t>(s.label)];
    for (int c : counts) CHECK(c == 60);

    sp.seed = 34;
    Dataset d3 = generate_dataset(sp);
    CHECK_FALSE(same_bytes(d1.train[0].of(Modality::Text), d3.train[0].of(Modality::Text)));
}

TEST_CASE("sequence lengths honor the configured ranges") {
    Dataset ds = generate_dataset(small_spec());
    bool saw_varied = false;
    int64_t first = ds.train[0].of(Modality::Text).dim(0);
    for (const auto& s : ds.train) {
        for (Modality m : kModalities) {
            const auto& spec_m = ds.spec.modality(m);
            CHECK(s.of(m).dim(0) >= spec_m.min_len);
            CHECK(s.of(m).dim(0) <= spec_m.max_len);
            CHECK(s.of(m).dim(1) == spec_m.frame_dim);
        }
        if (s.of(Modality::Text).dim(0) != first) saw_varied = true;
    }
    CHECK(saw_varied);
}

TEST_CASE("noiseless latent: centroid oracle is perfect") {
    auto sp = small_spec();
    sp.feature_noise = 0.0;
    sp.latent_noise = 0.0;
    Dataset ds = generate_dataset(sp);
    CHECK(centroid_oracle_accuracy(ds.train, ds.test, sp.num_classes) == doctest::Approx(1.0));
}

TEST_CASE("default difficulty: centroid oracle at or above 0.9") {
    Dataset ds = generate_dataset(small_spec());
    const double acc = centroid_oracle_accuracy(ds.train, ds.test, ds.spec.num_classes);
    CHECK(acc >= 0.90);
    CHECK(acc < 1.0); // not degenerate either
}

TEST_CASE("per-modality frame covariance is non-degenerate") {
    Dataset ds = generate_dataset(small_spec());
    for (Modality m : kModalities) {
        const int64_t dim = ds.spec.modality(m).frame_dim;
        std::vector<double> rows;
        int64_t n = 0;
        for (size_t i = 0; i < 40; ++i) {
            const auto& t = ds.train[i].of(m);
            for (int64_t r = 0; r < t.dim(0); ++r) {
                for (int64_t j = 0; j < dim; ++j)
                    rows.push_back(static_cast<double>(t.data()[r * dim + j]));
                ++n;
            }
        }
        Eigen::MatrixXd mat = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                       Eigen::RowMajor>>(rows.data(), n, dim);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat);
        CHECK(svd.singularValues()(dim - 1) > 1e-6);
    }
}

TEST_CASE("invalid specs are rejected") {
    DatasetSpec sp = small_spec();
    sp.num_classes = 1;
    CHECK_THROWS_AS(generate_dataset(sp), Error);
    sp = small_spec();
    sp.feature_noise = sp.centroid_scale;
    CHECK_THROWS_AS(generate_dataset(sp), Error);
    sp = small_spec();
    sp.text.min_len = 9;
    sp.text.max_len = 8;
    CHECK_THROWS_AS(generate_dataset(sp), Error);
    sp = small_spec();
    sp.train_samples = 0;
    CHECK_THROWS_AS(generate_dataset(sp), Error);
}

TEST_CASE("stratified split: exact arithmetic and determinism") {
    // 100 balanced samples over 2 classes.
    DatasetSpec sp = small_spec();
    sp.num_classes = 2;
    sp.train_samples = 100;
    sp.val_samples = 1;
    sp.test_samples = 1;
    Dataset ds = generate_dataset(sp);

    auto parts = split_dataset(ds.train, {0.8, 0.1, 0.1}, 5);
    CHECK(parts[0].size() == 80);
    CHECK(parts[1].size() == 10);
    CHECK(parts[2].size() == 10);
    int train_c0 = 0;
    for (const auto& s : parts[0])
        if (s.label == 0) ++train_c0;
    CHECK(train_c0 == 40);

    auto parts2 = split_dataset(ds.train, {0.8, 0.1, 0.1}, 5);
    for (size_t i = 0; i < parts[0].size(); ++i) CHECK(parts[0][i].id == parts2[0][i].id);

    auto all = split_dataset(ds.train, {1.0, 0.0, 0.0}, 5);
    CHECK(all[0].size() == 100);
    CHECK(all[1].empty());
    CHECK(all[2].empty());

    CHECK_THROWS_AS(split_dataset(ds.train, {0.5, 0.2, 0.2}, 5), Error);

    // Disjoint and covering.
    std::vector<int64_t> ids;
    for (const auto& part : parts)
        for (const auto& s : part) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    CHECK(ids.size() == 100);
    CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
}

TEST_CASE("save/load round-trips tensors bit-exactly with spec metadata") {
    auto dir = fs::temp_directory_path() / "admc_ds_test";
    fs::remove_all(dir);
    auto sp = small_spec();
    sp.train_samples = 8;
    sp.val_samples = 4;
    sp.test_samples = 4;
    Dataset ds = generate_dataset(sp);
    save_dataset(ds, dir);

    Dataset back = load_dataset(dir);
    CHECK(back.spec.num_classes == sp.num_classes);
    CHECK(back.spec.seed == sp.seed);
    CHECK(back.spec.latent_dim == sp.latent_dim);
    CHECK(back.spec.text.frame_dim == sp.text.frame_dim);
    REQUIRE(back.train.size() == ds.train.size());
    REQUIRE(back.val.size() == ds.val.size());
    for (size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(back.train[i].label == ds.train[i].label);
        for (Modality m : kModalities)
            CHECK(same_bytes(back.train[i].of(m), ds.train[i].of(m)));
    }

    // Manifest corruption: unknown key.
    {
        std::ofstream f(dir / "manifest.txt", std::ios::app);
        f << "garbage line here\n";
    }
    CHECK_THROWS_AS(load_dataset(dir), Error);
    fs::remove_all(dir);
    CHECK_THROWS_AS(load_dataset(dir), Error);
}

TEST_CASE("pad_batch zero-pads to the longest sequence and tracks lengths") {
    auto sp = small_spec();
    sp.train_samples = 6;
    sp.val_samples = 2;
    sp.test_samples = 2;
    Dataset ds = generate_dataset(sp);
    std::vector<size_t> idx = {0, 1, 2, 3};
    PaddedBatch b = pad_batch(ds.train, idx, Modality::Acoustic);
    CHECK(b.frames.dim(0) == 4);
    CHECK(b.frames.dim(2) == ds.spec.acoustic.frame_dim);
    int64_t max_len = 0;
    for (size_t i = 0; i < idx.size(); ++i) {
        const auto& t = ds.train[idx[i]].of(Modality::Acoustic);
        CHECK(b.lengths[i] == t.dim(0));
        CHECK(b.labels[i] == ds.train[idx[i]].label);
        max_len = std::max(max_len, t.dim(0));
        // Content matches up to the true length; padding is zero after it.
        for (int64_t r = 0; r < t.dim(0); ++r)
            CHECK(b.frames.data()[(static_cast<int64_t>(i) * b.frames.dim(1) + r) * t.dim(1)] ==
                  t.data()[r * t.dim(1)]);
        for (int64_t r = t.dim(0); r < b.frames.dim(1); ++r)
            for (int64_t j = 0; j < t.dim(1); ++j)
                CHECK(b.frames.data()[(static_cast<int64_t>(i) * b.frames.dim(1) + r) * t.dim(1) + j] ==
                      0.0f);
    }
    CHECK(b.frames.dim(1) == max_len);
    CHECK_THROWS_AS(pad_batch(ds.train, {}, Modality::Text), Error);
}
