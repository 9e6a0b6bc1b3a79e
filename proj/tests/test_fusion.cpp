#include <cmath>
#include <cstring>

#include "admc/fusion.hpp"
#include "admc/ops.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace admc;

namespace {

// Deterministic parameter fill shared with the frozen oracle: tensor k,
// element i -> vals[(5k + 3i) % 11], vals[j] = (j % 7 - 2.5) * 0.2.
template <typename T>
void fill_pattern(Tensor<T>& t, int k) {
    T* d = t.mutable_data();
    for (int64_t i = 0; i < t.numel(); ++i) {
        const int j = (5 * k + 3 * static_cast<int>(i)) % 11;
        d[i] = static_cast<T>((j % 7 - 2.5) * 0.2);
    }
}

FusionConfig oracle_config() {
    FusionConfig cfg;
    cfg.input_width = 2;
    cfg.model_dim = 4;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.ff_hidden = 4;
    cfg.dropout = 0.0;
    cfg.head_hidden = 3;
    cfg.num_classes = 2;
    return cfg;
}

template <typename T>
FusionModel<T> oracle_model() {
    FusionModel<T> model(oracle_config(), ModalityMask::from_bits(7), rng::Key(9));
    nn::ParamMap<T> params;
    model.collect("mf", params);
    REQUIRE(params.size() == 24);
    int k = 0;
    for (auto& [_, t] : params.items()) fill_pattern(t, k++);
    return model;
}

bool same_bytes(const Tensor<float>& a, const Tensor<float>& b) {
    return a.dims() == b.dims() &&
           std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<size_t>(a.numel())) == 0;
}

// Rounding-tolerant comparison for generated features produced under
// different denoiser batch groupings.
bool close_values(const float* a, const float* b, int64_t n, float tol = 1e-4f) {
    for (int64_t i = 0; i < n; ++i) {
        const float scale = std::max(1.0f, std::max(std::abs(a[i]), std::abs(b[i])));
        if (std::abs(a[i] - b[i]) > tol * scale) return false;
    }
    return true;
}

bool close_tensors(const Tensor<float>& a, const Tensor<float>& b, float tol = 1e-4f) {
    return a.dims() == b.dims() && close_values(a.data(), b.data(), a.numel(), tol);
}

Tensor<float> random_stack(rng::Key key, int64_t width) {
    Tensor<float> t = Tensor<float>::zeros({3, width});
    auto s = key.stream();
    s.fill_normal(t.mutable_data(), static_cast<size_t>(t.numel()));
    return t;
}

DenoiserConfig tiny_denoiser_config(int64_t width, int64_t max_steps) {
    DenoiserConfig cfg;
    cfg.feature_dim = width;
    cfg.model_dim = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ff_hidden = 16;
    cfg.max_steps = max_steps;
    return cfg;
}

FusionConfig tiny_fusion_config(int64_t width, int64_t classes) {
    FusionConfig cfg;
    cfg.input_width = width;
    cfg.model_dim = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ff_hidden = 16;
    cfg.dropout = 0.1;
    cfg.head_hidden = 8;
    cfg.num_classes = classes;
    return cfg;
}

// Linearly separable stacks: one centroid per class plus small noise.
void separable_stacks(rng::Key key, size_t count, int64_t width, int64_t classes,
                      std::vector<Tensor<float>>& stacks, std::vector<int64_t>& labels) {
    std::vector<Tensor<float>> protos;
    for (int64_t c = 0; c < classes; ++c)
        protos.push_back(random_stack(key.child("proto").child(static_cast<uint64_t>(c)), width));
    auto s = key.child("noise").stream();
    for (size_t i = 0; i < count; ++i) {
        const int64_t c = static_cast<int64_t>(i) % classes;
        Tensor<float> t = Tensor<float>::zeros({3, width});
        float* d = t.mutable_data();
        const float* p = protos[static_cast<size_t>(c)].data();
        for (int64_t j = 0; j < t.numel(); ++j)
            d[j] = p[j] + 0.15f * static_cast<float>(s.next_normal());
        stacks.push_back(std::move(t));
        labels.push_back(c);
    }
}

} // namespace

TEST_CASE("modality mask: string and bit conversions") {
    ModalityMask m = ModalityMask::from_string("101");
    CHECK(m.available == std::array<bool, 3>{true, false, true});
    CHECK(m.to_string() == "101");
    CHECK(m.bits() == 5);
    CHECK(m.count() == 2);
    CHECK_FALSE(m.all());
    CHECK_FALSE(m.none());
    CHECK(ModalityMask::from_bits(5) == m);

    CHECK(ModalityMask::from_string("111").all());
    CHECK(ModalityMask::from_string("000").none());

    for (const char* bad : {"", "11", "1111", "1a1", "210"}) {
        CHECK_THROWS_AS(ModalityMask::from_string(bad), Error);
    }
    CHECK_THROWS_AS(ModalityMask::from_bits(8), Error);
    try {
        ModalityMask::from_string("x11");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::Config);
    }
}

TEST_CASE("supported patterns: seven masks, each non-empty, full included") {
    const auto patterns = supported_patterns();
    REQUIRE(patterns.size() == 7);
    bool has_full = false;
    for (size_t i = 0; i < patterns.size(); ++i) {
        CHECK_FALSE(patterns[i].none());
        if (patterns[i].all()) has_full = true;
        for (size_t j = i + 1; j < patterns.size(); ++j) CHECK(!(patterns[i] == patterns[j]));
    }
    CHECK(has_full);
}

TEST_CASE("fusion config: validation") {
    FusionConfig cfg = oracle_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.heads = 3; // does not divide model_dim 4
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = oracle_config();
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = oracle_config();
    cfg.num_classes = 1;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("fuse_classify: frozen scalar oracle on a one-layer one-head model") {
    FusionModel<double> model = oracle_model<double>();

    Tensor<double> x1 = Tensor<double>::zeros({3, 2});
    fill_pattern(x1, 24);
    Tensor<double> logits1 = fuse_classify(model, x1);
    REQUIRE(logits1.dims() == Shape{2});
    CHECK(logits1.data()[0] == doctest::Approx(0.10394322319988891).epsilon(1e-12));
    CHECK(logits1.data()[1] == doctest::Approx(-0.22078864463997783).epsilon(1e-12));

    Tensor<double> x2 = Tensor<double>::zeros({3, 2});
    fill_pattern(x2, 25);
    {
        double* d = x2.mutable_data();
        for (int64_t i = 0; i < x2.numel(); ++i) d[i] = -d[i] + 0.15;
    }
    Tensor<double> logits2 = fuse_classify(model, x2);
    CHECK(logits2.data()[0] == doctest::Approx(0.10489401994333025).epsilon(1e-12));
    CHECK(logits2.data()[1] == doctest::Approx(-0.22097880398866609).epsilon(1e-12));

    // batched forward agrees with the single-stack path
    Tensor<double> batch = Tensor<double>::zeros({2, 3, 2});
    std::copy_n(x1.data(), 6, batch.mutable_data());
    std::copy_n(x2.data(), 6, batch.mutable_data() + 6);
    Tensor<double> both = model.forward(batch);
    REQUIRE(both.dims() == Shape{2, 2});
    for (int64_t j = 0; j < 2; ++j) {
        CHECK(both.data()[j] == doctest::Approx(logits1.data()[j]).epsilon(1e-12));
        CHECK(both.data()[2 + j] == doctest::Approx(logits2.data()[j]).epsilon(1e-12));
    }
}

TEST_CASE("fusion model: shape validation and dropout behaviour") {
    FusionConfig cfg = tiny_fusion_config(6, 3);
    FusionModel<float> model(cfg, ModalityMask::from_bits(7), rng::Key(11));

    Tensor<float> stack = random_stack(rng::Key(12), 6);
    CHECK_THROWS_AS(fuse_classify(model, random_stack(rng::Key(13), 5)), Error);
    Tensor<float> bad = Tensor<float>::zeros({2, 6});
    CHECK_THROWS_AS(fuse_classify(model, bad), Error);

    // eval path is deterministic; dropout path differs and is keyed
    Tensor<float> a = fuse_classify(model, stack);
    Tensor<float> b = fuse_classify(model, stack);
    CHECK(same_bytes(a, b));

    Tensor<float> batch = Tensor<float>::zeros({1, 3, 6});
    std::copy_n(stack.data(), 18, batch.mutable_data());
    auto s1 = rng::Key(44).stream();
    auto s2 = rng::Key(44).stream();
    auto s3 = rng::Key(45).stream();
    Tensor<float> d1 = model.forward(batch, &s1);
    Tensor<float> d2 = model.forward(batch, &s2);
    Tensor<float> d3 = model.forward(batch, &s3);
    CHECK(std::memcmp(d1.data(), d2.data(), sizeof(float) * 3) == 0);
    bool differs = false;
    for (int64_t i = 0; i < 3; ++i)
        if (d1.data()[i] != d3.data()[i]) differs = true;
    CHECK(differs);
}

TEST_CASE("fusion model: loss gradients match finite differences") {
    FusionConfig cfg;
    cfg.input_width = 3;
    cfg.model_dim = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ff_hidden = 8;
    cfg.dropout = 0.0;
    cfg.head_hidden = 4;
    cfg.num_classes = 3;
    FusionModel<double> model(cfg, ModalityMask::from_bits(7), rng::Key(31));
    nn::ParamMap<double> params;
    model.collect("mf", params);

    Tensor<double> x = Tensor<double>::zeros({2, 3, 3});
    {
        auto s = rng::Key(32).stream();
        s.fill_normal(x.mutable_data(), static_cast<size_t>(x.numel()));
    }
    const std::vector<int64_t> labels = {2, 0};
    std::vector<Tensor<double>> leaves;
    for (const auto& [_, t] : params.items()) leaves.push_back(t);
    auto result = testing::check_gradients(
        leaves, [&] { return ops::softmax_cross_entropy(model.forward(x), labels); });
    CHECK_MESSAGE(bool(result), result.detail);
}

TEST_CASE("pattern registry: routing, tags, and unknown patterns") {
    std::map<uint8_t, FusionModel<float>> models;
    for (const auto& p : supported_patterns())
        models.emplace(p.bits(),
                       FusionModel<float>(tiny_fusion_config(4, 2), p,
                                          rng::Key(50).child(p.bits())));
    PatternRegistry reg(std::move(models));

    CHECK(reg.size() == 7);
    CHECK(reg.enhanced() == nullptr);
    for (const auto& p : supported_patterns()) {
        REQUIRE(reg.has(p));
        CHECK(reg.model_for(p).pattern() == p);
    }
    CHECK_FALSE(reg.has(ModalityMask::from_string("000")));
    CHECK_THROWS_AS(reg.model_for(ModalityMask::from_string("000")), Error);
    try {
        reg.model_for(ModalityMask::from_string("000"));
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::Registry);
        CHECK(std::string(e.what()).find("000") != std::string::npos);
    }

    std::map<uint8_t, FusionModel<float>> partial;
    partial.emplace(7, FusionModel<float>(tiny_fusion_config(4, 2), ModalityMask::from_bits(7),
                                          rng::Key(51)));
    PatternRegistry small(std::move(partial),
                          FusionModel<float>(tiny_fusion_config(8, 2),
                                             ModalityMask::from_bits(7), rng::Key(52)));
    CHECK(small.enhanced() != nullptr);
    CHECK(small.enhanced()->config().input_width == 8);
    CHECK_THROWS_AS(small.model_for(ModalityMask::from_string("100")), Error);
}

TEST_CASE("completer: identity on full masks, preservation elsewhere") {
    const int64_t width = 6;
    NoiseSchedule sched(20, 0.01, 0.2);
    DenoiserModel<float> denoiser(tiny_denoiser_config(width, 20), rng::Key(60));
    Completer comp(denoiser, sched, 8);

    Tensor<float> stack = random_stack(rng::Key(61), width);
    Tensor<float> full = comp.complete(stack, ModalityMask::from_string("111"), rng::Key(62));
    CHECK(same_bytes(full, stack));
    CHECK(comp.predictor_calls() == 0);

    Tensor<float> part = comp.complete(stack, ModalityMask::from_string("101"), rng::Key(62));
    CHECK(comp.predictor_calls() == 8);
    REQUIRE(part.dims() == Shape{3, width});
    CHECK(std::memcmp(part.data(), stack.data(), sizeof(float) * width) == 0);
    CHECK(std::memcmp(part.data() + 2 * width, stack.data() + 2 * width,
                      sizeof(float) * width) == 0);
    bool row1_differs = false;
    for (int64_t j = 0; j < width; ++j)
        if (part.data()[width + j] != stack.data()[width + j]) row1_differs = true;
    CHECK(row1_differs);

    // same key reproduces; different key moves the generated row
    Tensor<float> again = comp.complete(stack, ModalityMask::from_string("101"), rng::Key(62));
    CHECK(same_bytes(again, part));
    Tensor<float> moved = comp.complete(stack, ModalityMask::from_string("101"), rng::Key(63));
    CHECK_FALSE(same_bytes(moved, part));

    CHECK_THROWS_AS(Completer(denoiser, sched, 0), Error);
    CHECK_THROWS_AS(Completer(denoiser, sched, 21), Error);
}

TEST_CASE("completer: complete_many matches per-index completion bitwise") {
    const int64_t width = 6;
    NoiseSchedule sched(20, 0.01, 0.2);
    DenoiserModel<float> denoiser(tiny_denoiser_config(width, 20), rng::Key(64));
    Completer comp(denoiser, sched, 6);

    std::vector<Tensor<float>> stacks;
    std::vector<ModalityMask> masks;
    const char* mask_strings[4] = {"110", "011", "111", "100"};
    for (int i = 0; i < 4; ++i) {
        stacks.push_back(random_stack(rng::Key(65).child(static_cast<uint64_t>(i)), width));
        masks.push_back(ModalityMask::from_string(mask_strings[i]));
    }
    const rng::Key base(66);
    const auto batched = comp.complete_many(stacks, masks, base);
    REQUIRE(batched.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
        Tensor<float> solo = comp.complete(stacks[i], masks[i], base.child(i));
        // available rows are copied, so they agree bitwise regardless of
        // batch grouping; generated rows agree up to denoiser rounding
        for (int64_t m = 0; m < 3; ++m)
            if (masks[i].available[static_cast<size_t>(m)])
                CHECK(std::memcmp(batched[i].data() + m * width, solo.data() + m * width,
                                  sizeof(float) * width) == 0);
        CHECK(close_tensors(batched[i], solo));
    }
    // identical call, identical grouping: bitwise reproduction
    const auto rerun = comp.complete_many(stacks, masks, base);
    for (size_t i = 0; i < 4; ++i) CHECK(same_bytes(rerun[i], batched[i]));
    CHECK_THROWS_AS(comp.complete_many(stacks, {masks[0]}, base), Error);
}

TEST_CASE("mmcr: full-availability path equals plain fusion bitwise") {
    const int64_t width = 6;
    NoiseSchedule sched(20, 0.01, 0.2);
    DenoiserModel<float> denoiser(tiny_denoiser_config(width, 20), rng::Key(70));
    Completer comp(denoiser, sched, 10);

    std::map<uint8_t, FusionModel<float>> models;
    for (const auto& p : supported_patterns())
        models.emplace(p.bits(), FusionModel<float>(tiny_fusion_config(width, 3), p,
                                                    rng::Key(71).child(p.bits())));
    PatternRegistry reg(std::move(models));

    const ModalityMask full = ModalityMask::from_string("111");
    for (int i = 0; i < 5; ++i) {
        Tensor<float> stack = random_stack(rng::Key(72).child(static_cast<uint64_t>(i)), width);
        Tensor<float> through = mmcr_logits(reg, comp, stack, full, rng::Key(73));
        Tensor<float> plain = fuse_classify(reg.model_for(full), stack);
        CHECK(same_bytes(through, plain));
    }
    CHECK(comp.predictor_calls() == 0);

    CHECK_THROWS_AS(mmcr_logits(reg, comp, random_stack(rng::Key(74), width),
                                ModalityMask::from_string("000"), rng::Key(75)),
                    Error);
    try {
        mmcr_logits(reg, comp, random_stack(rng::Key(74), width),
                    ModalityMask::from_string("000"), rng::Key(75));
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::Usage);
    }
}

TEST_CASE("mmcr: partial masks route through the pattern model and the sampler") {
    const int64_t width = 6;
    NoiseSchedule sched(20, 0.01, 0.2);
    DenoiserModel<float> denoiser(tiny_denoiser_config(width, 20), rng::Key(80));
    Completer comp(denoiser, sched, 4);

    // registry holding only {T}: routing must find it for "100" and fail for "010"
    std::map<uint8_t, FusionModel<float>> models;
    models.emplace(ModalityMask::from_string("100").bits(),
                   FusionModel<float>(tiny_fusion_config(width, 3),
                                      ModalityMask::from_string("100"), rng::Key(81)));
    PatternRegistry reg(std::move(models));

    Tensor<float> stack = random_stack(rng::Key(82), width);
    Tensor<float> logits =
        mmcr_logits(reg, comp, stack, ModalityMask::from_string("100"), rng::Key(83));
    CHECK(logits.dims() == Shape{3});
    CHECK(comp.predictor_calls() == 4);

    // the classifier sees the completed stack, not the raw one
    Tensor<float> completed =
        comp.complete(stack, ModalityMask::from_string("100"), rng::Key(83));
    CHECK(same_bytes(logits,
                     fuse_classify(reg.model_for(ModalityMask::from_string("100")), completed)));

    CHECK_THROWS_AS(
        mmcr_logits(reg, comp, stack, ModalityMask::from_string("010"), rng::Key(84)), Error);
}

TEST_CASE("mmer_enhance: layout, determinism, and usage errors") {
    const int64_t width = 6;
    NoiseSchedule sched(20, 0.01, 0.2);
    DenoiserModel<float> denoiser(tiny_denoiser_config(width, 20), rng::Key(90));
    Completer comp(denoiser, sched, 5);

    Tensor<float> stack = random_stack(rng::Key(91), width);
    const ModalityMask full = ModalityMask::from_string("111");
    Tensor<float> enh = mmer_enhance(comp, stack, full, rng::Key(92));
    REQUIRE(enh.dims() == Shape{3, 2 * width});

    // original features occupy the first half of every row, bit for bit
    for (int64_t m = 0; m < 3; ++m)
        CHECK(std::memcmp(enh.data() + m * 2 * width, stack.data() + m * width,
                          sizeof(float) * width) == 0);

    // generated halves come from leave-one-out completion of the same row
    // (solo completion regroups the denoiser batch, hence rounding tolerance)
    for (int64_t m = 0; m < 3; ++m) {
        ModalityMask loo = full;
        loo.available[static_cast<size_t>(m)] = false;
        Tensor<float> completed =
            comp.complete(stack, loo, rng::Key(92).child(static_cast<uint64_t>(m)));
        CHECK(close_values(enh.data() + m * 2 * width + width,
                           completed.data() + m * width, width));
    }

    Tensor<float> again = mmer_enhance(comp, stack, full, rng::Key(92));
    CHECK(same_bytes(again, enh));

    CHECK_THROWS_AS(mmer_enhance(comp, stack, ModalityMask::from_string("110"), rng::Key(93)),
                    Error);
    try {
        mmer_enhance(comp, stack, ModalityMask::from_string("110"), rng::Key(93));
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::Usage);
    }
}

TEST_CASE("mmer_enhance_many: batched output matches per-sample calls bitwise") {
    const int64_t width = 6;
    NoiseSchedule sched(20, 0.01, 0.2);
    DenoiserModel<float> denoiser(tiny_denoiser_config(width, 20), rng::Key(95));
    Completer comp(denoiser, sched, 5);

    std::vector<Tensor<float>> stacks;
    for (int i = 0; i < 3; ++i)
        stacks.push_back(random_stack(rng::Key(96).child(static_cast<uint64_t>(i)), width));
    const rng::Key base(97);
    const auto many = mmer_enhance_many(comp, stacks, base);
    REQUIRE(many.size() == 3);
    const ModalityMask full = ModalityMask::from_string("111");
    for (size_t i = 0; i < 3; ++i) {
        Tensor<float> solo = mmer_enhance(comp, stacks[i], full, base.child(i));
        // originals land bitwise in both paths; generated halves share keys
        // but not batch grouping
        for (int64_t m = 0; m < 3; ++m)
            CHECK(std::memcmp(many[i].data() + m * 2 * width, stacks[i].data() + m * width,
                              sizeof(float) * width) == 0);
        CHECK(close_tensors(many[i], solo));
    }
    const auto rerun = mmer_enhance_many(comp, stacks, base);
    for (size_t i = 0; i < 3; ++i) CHECK(same_bytes(rerun[i], many[i]));
}

TEST_CASE("train_mf: learns separable stacks, reproducibly") {
    std::vector<Tensor<float>> train_stacks, val_stacks;
    std::vector<int64_t> train_labels, val_labels;
    separable_stacks(rng::Key(100), 90, 6, 3, train_stacks, train_labels);
    separable_stacks(rng::Key(100), 30, 6, 3, val_stacks, val_labels);

    FusionTrainConfig cfg;
    cfg.arch = tiny_fusion_config(6, 3);
    cfg.batch_size = 16;
    cfg.max_epochs = 30;
    cfg.patience = 6;
    cfg.lr = 3e-3;
    cfg.seed = 7;

    const ModalityMask pattern = ModalityMask::from_string("110");
    FusionTrainResult r =
        train_mf(pattern, train_stacks, train_labels, val_stacks, val_labels, cfg);
    CHECK(r.model.pattern() == pattern);
    CHECK(r.best_val_wa >= 0.9);
    REQUIRE(!r.history.empty());
    double best = 0.0;
    for (const auto& e : r.history) best = std::max(best, e.val_wa);
    CHECK(r.best_val_wa == doctest::Approx(best).epsilon(1e-12));
    if (static_cast<int64_t>(r.history.size()) < cfg.max_epochs)
        CHECK(static_cast<int64_t>(r.history.size()) == r.best_epoch + 1 + cfg.patience);

    FusionTrainResult r2 =
        train_mf(pattern, train_stacks, train_labels, val_stacks, val_labels, cfg);
    nn::ParamMap<float> p1, p2;
    r.model.collect("mf", p1);
    r2.model.collect("mf", p2);
    REQUIRE(p1.size() == p2.size());
    for (size_t i = 0; i < p1.size(); ++i)
        CHECK(std::memcmp(p1.items()[i].second.data(), p2.items()[i].second.data(),
                          sizeof(float) *
                              static_cast<size_t>(p1.items()[i].second.numel())) == 0);
}

TEST_CASE("train_mf: input validation") {
    std::vector<Tensor<float>> stacks;
    std::vector<int64_t> labels;
    separable_stacks(rng::Key(101), 12, 6, 2, stacks, labels);
    FusionTrainConfig cfg;
    cfg.arch = tiny_fusion_config(6, 2);
    cfg.max_epochs = 1;
    const ModalityMask p = ModalityMask::from_string("111");

    CHECK_THROWS_AS(train_mf(p, {}, {}, stacks, labels, cfg), Error);

    std::vector<int64_t> short_labels(labels.begin(), labels.end() - 1);
    CHECK_THROWS_AS(train_mf(p, stacks, short_labels, stacks, labels, cfg), Error);

    std::vector<int64_t> bad_labels = labels;
    bad_labels[0] = 2;
    CHECK_THROWS_AS(train_mf(p, stacks, bad_labels, stacks, labels, cfg), Error);

    std::vector<Tensor<float>> bad_stacks = stacks;
    bad_stacks[3] = Tensor<float>::zeros({3, 5});
    CHECK_THROWS_AS(train_mf(p, bad_stacks, labels, stacks, labels, cfg), Error);
}

TEST_CASE("train_fusion_registry: builds all patterns and keeps upstream frozen") {
    DatasetSpec sp;
    sp.num_classes = 2;
    sp.train_samples = 24;
    sp.val_samples = 12;
    sp.test_samples = 6;
    sp.text = {8, 5, 7};
    sp.visual = {6, 4, 6};
    sp.acoustic = {6, 4, 6};
    sp.latent_dim = 4;
    sp.latent_noise = 0.5;
    sp.jitter_drift = 0.5;
    sp.feature_noise = 0.2;
    sp.seed = 123;
    Dataset data = generate_dataset(sp);

    UnimodalTrainConfig ucfg;
    ucfg.encoder_width = 12;
    ucfg.head_hidden = 8;
    ucfg.batch_size = 12;
    ucfg.max_epochs = 2;
    ucfg.patience = 2;
    ucfg.seed = 3;
    auto text = train_unimodal(Modality::Text, data.train, data.val, 2, ucfg);
    auto visual = train_unimodal(Modality::Visual, data.train, data.val, 2, ucfg);
    auto acoustic = train_unimodal(Modality::Acoustic, data.train, data.val, 2, ucfg);
    FrozenExtractors frozen(text.model, visual.model, acoustic.model, data.train);

    NoiseSchedule sched(10, 0.01, 0.2);
    DenoiserModel<float> denoiser(tiny_denoiser_config(12, 10), rng::Key(110));
    Completer comp(denoiser, sched, 3);

    const uint64_t itfn_hash = frozen.params_hash();
    const uint64_t adn_hash = denoiser_fingerprint(denoiser);

    RegistryTrainOptions opt;
    opt.fusion.arch = tiny_fusion_config(12, 2);
    opt.fusion.batch_size = 12;
    opt.fusion.max_epochs = 2;
    opt.fusion.patience = 2;
    opt.fusion.seed = 5;
    opt.include_enhanced = true;
    opt.completion_key = rng::Key(111);

    std::vector<PatternTrainSummary> summaries;
    PatternRegistry reg = train_fusion_registry(frozen, &comp, data.train, data.val, 2, opt,
                                                &summaries);

    CHECK(reg.size() == 7);
    for (const auto& p : supported_patterns()) {
        REQUIRE(reg.has(p));
        CHECK(reg.model_for(p).pattern() == p);
        CHECK(reg.model_for(p).config().input_width == 12);
    }
    REQUIRE(reg.enhanced() != nullptr);
    CHECK(reg.enhanced()->config().input_width == 24);

    REQUIRE(summaries.size() == 8);
    CHECK(summaries.back().enhanced);
    for (const auto& s : summaries) CHECK(s.epochs_run >= 1);

    // the freezing contract: fingerprints unchanged by the whole stage
    CHECK(frozen.params_hash() == itfn_hash);
    CHECK(denoiser_fingerprint(denoiser) == adn_hash);

    // a trained registry classifies through mmcr_infer end to end
    const Sample& s0 = data.test[0];
    const int64_t label = mmcr_infer(reg, frozen, comp, s0, ModalityMask::from_string("110"),
                                     rng::Key(112));
    CHECK(label >= 0);
    CHECK(label < 2);
}

TEST_CASE("denoiser_fingerprint: sensitive to any parameter change") {
    DenoiserModel<float> model(tiny_denoiser_config(6, 10), rng::Key(120));
    const uint64_t h0 = denoiser_fingerprint(model);
    CHECK(h0 == denoiser_fingerprint(model));

    nn::ParamMap<float> params;
    model.collect("adn", params);
    params.items()[2].second.mutable_data()[0] += 0.5f;
    CHECK(denoiser_fingerprint(model) != h0);
}
