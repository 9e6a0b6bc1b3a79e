#pragma once

#include <cmath>
#include <string>
#include <unordered_set>
#include <vector>

#include "admc/adam.hpp"
#include "admc/hash.hpp"
#include "admc/ops.hpp"
#include "admc/rng.hpp"
#include "admc/tensor.hpp"

// Model building blocks over the autodiff tensor. Every module exposes
// collect(prefix, params) so optimizers and checkpoints see a flat, ordered,
// uniquely-named view of its parameters.

namespace admc::nn {

template <typename T>
class ParamMap {
public:
    void add(const std::string& name, Tensor<T> t) {
        if (!names_.insert(name).second)
            raise(ErrorCategory::Registry, "duplicate parameter name '" + name + "'");
        items_.emplace_back(name, std::move(t));
    }

    const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }
    std::vector<std::pair<std::string, Tensor<T>>>& items() { return items_; }
    size_t size() const { return items_.size(); }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& [_, t] : items_) n += t.numel();
        return n;
    }

    void register_into(Adam<T>& opt) const {
        for (const auto& [name, t] : items_) opt.add_param(name, t);
    }

    void set_requires_grad(bool v) {
        for (auto& [_, t] : items_) t.set_requires_grad(v);
    }

    void zero_grads() {
        for (auto& [_, t] : items_) t.zero_grad();
    }

    const Tensor<T>& at(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return t;
        raise(ErrorCategory::Registry, "unknown parameter '" + name + "'");
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> items_;
    std::unordered_set<std::string> names_;
};

// Order-sensitive fingerprint over parameter names and raw bytes; chains from
// `seed` so callers can scope fingerprints to a model family.
template <typename T>
uint64_t params_fingerprint(const ParamMap<T>& params, uint64_t seed) {
    uint64_t h = seed;
    for (const auto& [name, t] : params.items()) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.data(), static_cast<size_t>(t.numel()) * sizeof(T), h);
    }
    return h;
}

namespace detail {

// U(-k, k) with k = 1/sqrt(fan_in).
template <typename T>
Tensor<T> uniform_init(Shape dims, int64_t fan_in, rng::Stream& s) {
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<T> t = Tensor<T>::zeros(std::move(dims));
    s.fill_uniform(t.mutable_data(), static_cast<size_t>(t.numel()), -k, k);
    t.set_requires_grad(true);
    return t;
}

} // namespace detail

template <typename T>
struct Linear {
    Tensor<T> weight; // (in, out)
    Tensor<T> bias;   // (out)

    Linear() = default;
    Linear(int64_t in, int64_t out, rng::Key key) {
        auto ws = key.child("w").stream();
        auto bs = key.child("b").stream();
        weight = detail::uniform_init<T>({in, out}, in, ws);
        bias = detail::uniform_init<T>({out}, in, bs);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return ops::add_bias(ops::matmul(x, weight), bias);
    }

    void collect(const std::string& prefix, ParamMap<T>& out) {
        out.add(prefix + ".weight", weight);
        out.add(prefix + ".bias", bias);
    }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma;
    Tensor<T> beta;

    LayerNorm() = default;
    explicit LayerNorm(int64_t dim) {
        gamma = Tensor<T>::full({dim}, T(1));
        beta = Tensor<T>::zeros({dim});
        gamma.set_requires_grad(true);
        beta.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return ops::layer_norm(x, gamma, beta); }

    void collect(const std::string& prefix, ParamMap<T>& out) {
        out.add(prefix + ".gamma", gamma);
        out.add(prefix + ".beta", beta);
    }
};

// Multi-head self-attention block: q/k/v/output projections around the fused
// attention op. Accepts (M, d) or (B, M, d).
template <typename T>
struct SelfAttention {
    Linear<T> q, k, v, out;
    int64_t heads = 1;

    SelfAttention() = default;
    SelfAttention(int64_t dim, int64_t heads_, rng::Key key)
        : q(dim, dim, key.child("q")),
          k(dim, dim, key.child("k")),
          v(dim, dim, key.child("v")),
          out(dim, dim, key.child("out")),
          heads(heads_) {
        if (dim % heads_ != 0)
            raise(ErrorCategory::Config, "attention heads must divide model dim");
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return out.forward(ops::attention(q.forward(x), k.forward(x), v.forward(x), heads));
    }

    void collect(const std::string& prefix, ParamMap<T>& out_map) {
        q.collect(prefix + ".q", out_map);
        k.collect(prefix + ".k", out_map);
        v.collect(prefix + ".v", out_map);
        out.collect(prefix + ".out", out_map);
    }
};

template <typename T>
struct FeedForward {
    Linear<T> up, down;

    FeedForward() = default;
    FeedForward(int64_t dim, int64_t hidden, rng::Key key)
        : up(dim, hidden, key.child("up")), down(hidden, dim, key.child("down")) {}

    Tensor<T> forward(const Tensor<T>& x) const {
        return down.forward(ops::relu(up.forward(x)));
    }

    void collect(const std::string& prefix, ParamMap<T>& out) {
        up.collect(prefix + ".up", out);
        down.collect(prefix + ".down", out);
    }
};

// Post-norm transformer encoder layer:
//   x = LN1(x + Dropout(SelfAttn(x))); x = LN2(x + Dropout(FF(x))).
// Dropout is active only when a stream is supplied.
template <typename T>
struct EncoderLayer {
    SelfAttention<T> attn;
    FeedForward<T> ff;
    LayerNorm<T> norm1, norm2;
    double dropout = 0.0;

    EncoderLayer() = default;
    EncoderLayer(int64_t dim, int64_t heads, int64_t ff_hidden, double dropout_, rng::Key key)
        : attn(dim, heads, key.child("attn")),
          ff(dim, ff_hidden, key.child("ff")),
          norm1(dim),
          norm2(dim),
          dropout(dropout_) {}

    Tensor<T> forward(const Tensor<T>& x, rng::Stream* drop) const {
        Tensor<T> a = attn.forward(x);
        if (drop) a = ops::dropout(a, dropout, *drop, true);
        Tensor<T> h = norm1.forward(ops::add(x, a));
        Tensor<T> f = ff.forward(h);
        if (drop) f = ops::dropout(f, dropout, *drop, true);
        return norm2.forward(ops::add(h, f));
    }

    void collect(const std::string& prefix, ParamMap<T>& out) {
        attn.collect(prefix + ".attn", out);
        ff.collect(prefix + ".ff", out);
        norm1.collect(prefix + ".norm1", out);
        norm2.collect(prefix + ".norm2", out);
    }
};

// Gated recurrent cell with fused gate projections, gate layout [r | z | n]:
//   r = sig(xWr + hUr), z = sig(xWz + hUz), n = tanh(xWn + r*(hUn)),
//   h' = (1-z)*n + z*h.
template <typename T>
struct GruCell {
    Tensor<T> w_ih; // (in, 3h)
    Tensor<T> w_hh; // (h, 3h)
    Tensor<T> b_ih; // (3h)
    Tensor<T> b_hh; // (3h)
    int64_t hidden = 0;

    GruCell() = default;
    GruCell(int64_t in, int64_t hidden_, rng::Key key) : hidden(hidden_) {
        auto s1 = key.child("w_ih").stream();
        auto s2 = key.child("w_hh").stream();
        auto s3 = key.child("b_ih").stream();
        auto s4 = key.child("b_hh").stream();
        w_ih = detail::uniform_init<T>({in, 3 * hidden_}, hidden_, s1);
        w_hh = detail::uniform_init<T>({hidden_, 3 * hidden_}, hidden_, s2);
        b_ih = detail::uniform_init<T>({3 * hidden_}, hidden_, s3);
        b_hh = detail::uniform_init<T>({3 * hidden_}, hidden_, s4);
    }

    Tensor<T> step(const Tensor<T>& x, const Tensor<T>& h) const {
        Tensor<T> gx = ops::add_bias(ops::matmul(x, w_ih), b_ih);
        Tensor<T> gh = ops::add_bias(ops::matmul(h, w_hh), b_hh);
        Tensor<T> r = ops::sigmoid(ops::add(ops::slice_last(gx, 0, hidden),
                                            ops::slice_last(gh, 0, hidden)));
        Tensor<T> z = ops::sigmoid(ops::add(ops::slice_last(gx, hidden, hidden),
                                            ops::slice_last(gh, hidden, hidden)));
        Tensor<T> n = ops::tanh_op(ops::add(ops::slice_last(gx, 2 * hidden, hidden),
                                            ops::mul(r, ops::slice_last(gh, 2 * hidden, hidden))));
        // h' = n + z*(h - n)
        return ops::add(n, ops::mul(z, ops::add(h, ops::scale(n, T(-1)))));
    }

    void collect(const std::string& prefix, ParamMap<T>& out) {
        out.add(prefix + ".w_ih", w_ih);
        out.add(prefix + ".w_hh", w_hh);
        out.add(prefix + ".b_ih", b_ih);
        out.add(prefix + ".b_hh", b_hh);
    }
};

// Splits a padded (B, L, d) batch into L leaf tensors of (B, d) for stepwise
// recurrent processing. Input must be constant (data prep).
template <typename T>
std::vector<Tensor<T>> split_time_steps(const Tensor<T>& x) {
    if (x.rank() != 3) raise(ErrorCategory::Shape, "split_time_steps: need (B,L,d)");
    if (x.requires_grad()) raise(ErrorCategory::Usage, "split_time_steps expects constant input");
    const int64_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
    std::vector<Tensor<T>> steps;
    steps.reserve(static_cast<size_t>(len));
    for (int64_t t = 0; t < len; ++t) {
        Tensor<T> s = Tensor<T>::zeros({batch, d});
        T* o = s.mutable_data();
        for (int64_t b = 0; b < batch; ++b)
            std::copy_n(x.data() + (b * len + t) * d, d, o + b * d);
        steps.push_back(std::move(s));
    }
    return steps;
}

// Recurrent sequence encoder: gated cell over time, temporal max-pool over
// each sample's valid steps. Output (B, hidden).
template <typename T>
struct RecurrentEncoder {
    GruCell<T> cell;
    int64_t input_dim = 0;

    RecurrentEncoder() = default;
    RecurrentEncoder(int64_t in, int64_t hidden, rng::Key key)
        : cell(in, hidden, key), input_dim(in) {}

    Tensor<T> forward(const Tensor<T>& padded, const std::vector<int64_t>& lengths) const {
        const int64_t len = padded.dim(1);
        for (int64_t l : lengths)
            if (l < 1 || l > len)
                raise(ErrorCategory::Input, "recurrent encoder: invalid sequence length " +
                                                std::to_string(l));
        auto steps = split_time_steps(padded);
        Tensor<T> h = Tensor<T>::zeros({padded.dim(0), cell.hidden});
        std::vector<Tensor<T>> hs;
        hs.reserve(steps.size());
        for (const auto& x : steps) {
            h = cell.step(x, h);
            hs.push_back(h);
        }
        return ops::temporal_max(hs, lengths);
    }

    void collect(const std::string& prefix, ParamMap<T>& out) {
        cell.collect(prefix + ".cell", out);
    }
};

// Convolutional sequence encoder: parallel 1-D conv banks (kernel widths with
// per-bank channel counts), ReLU, max over valid windows, concatenated.
template <typename T>
struct ConvEncoder {
    struct Bank {
        int64_t width = 0;
        Linear<T> conv; // (width * in, channels) applied to unfolded windows
    };

    std::vector<Bank> banks;
    int64_t input_dim = 0;
    int64_t min_length = 0;

    ConvEncoder() = default;
    ConvEncoder(int64_t in, const std::vector<std::pair<int64_t, int64_t>>& width_channels,
                rng::Key key)
        : input_dim(in) {
        if (width_channels.empty())
            raise(ErrorCategory::Config, "conv encoder needs at least one bank");
        for (size_t i = 0; i < width_channels.size(); ++i) {
            auto [w, ch] = width_channels[i];
            if (w < 1 || ch < 1) raise(ErrorCategory::Config, "conv bank width/channels must be >= 1");
            banks.push_back({w, Linear<T>(w * in, ch, key.child(static_cast<uint64_t>(i)))});
            min_length = std::max(min_length, w);
        }
    }

    Tensor<T> forward(const Tensor<T>& padded, const std::vector<int64_t>& lengths) const {
        for (int64_t l : lengths)
            if (l < min_length)
                raise(ErrorCategory::Input,
                      "conv encoder: sequence length " + std::to_string(l) +
                          " shorter than minimum kernel width " + std::to_string(min_length));
        std::vector<Tensor<T>> pooled;
        pooled.reserve(banks.size());
        for (const auto& bank : banks) {
            Tensor<T> windows = ops::unfold_windows(padded, bank.width);
            Tensor<T> conv = ops::relu(bank.conv.forward(windows));
            std::vector<int64_t> valid;
            valid.reserve(lengths.size());
            for (int64_t l : lengths) valid.push_back(l - bank.width + 1);
            pooled.push_back(ops::rows_max_pool(conv, valid));
        }
        return ops::concat_last(pooled);
    }

    void collect(const std::string& prefix, ParamMap<T>& out) {
        for (size_t i = 0; i < banks.size(); ++i)
            banks[i].conv.collect(prefix + ".bank" + std::to_string(i), out);
    }
};

// Two-layer classifier head: in -> hidden (ReLU) -> classes.
template <typename T>
struct MlpHead {
    Linear<T> fc1, fc2;

    MlpHead() = default;
    MlpHead(int64_t in, int64_t hidden, int64_t classes, rng::Key key)
        : fc1(in, hidden, key.child("fc1")), fc2(hidden, classes, key.child("fc2")) {}

    Tensor<T> forward(const Tensor<T>& x) const {
        return fc2.forward(ops::relu(fc1.forward(x)));
    }

    void collect(const std::string& prefix, ParamMap<T>& out) {
        fc1.collect(prefix + ".fc1", out);
        fc2.collect(prefix + ".fc2", out);
    }
};

} // namespace admc::nn
