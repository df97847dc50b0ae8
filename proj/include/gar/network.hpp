// Feed-forward regression network: ELU after every hidden layer, linear
// T-wide output layer. Parameters live in one flat array so optimizers can
// treat them as a single vector.
#pragma once

#include "gar/autodiff.hpp"
#include "gar/random.hpp"
#include "gar/tensor.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gar {

struct NetworkSpec {
    std::size_t input_dim = 1;
    std::vector<std::size_t> hidden_dims; // empty: linear model
    std::size_t output_dim = 1;

    void validate() const
    {
        if (input_dim == 0 || output_dim == 0)
            throw std::invalid_argument("network: input and output dims must be positive");
        for (auto h : hidden_dims)
            if (h == 0)
                throw std::invalid_argument("network: hidden widths must be positive");
    }

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct LayerView {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    std::size_t weight_offset = 0; // [fan_in x fan_out], row-major
    std::size_t bias_offset = 0;   // [fan_out]
};

class ParameterStore {
public:
    ParameterStore() = default;

    explicit ParameterStore(NetworkSpec spec, std::uint64_t seed = 0) : spec_(std::move(spec)), seed_(seed)
    {
        spec_.validate();
        std::size_t offset = 0;
        std::size_t prev = spec_.input_dim;
        auto add_layer = [&](std::size_t out) {
            LayerView l{prev, out, offset, offset + prev * out};
            offset = l.bias_offset + out;
            layers_.push_back(l);
            prev = out;
        };
        for (auto h : spec_.hidden_dims)
            add_layer(h);
        add_layer(spec_.output_dim);
        values_.assign(offset, 0.0);
    }

    const NetworkSpec& spec() const noexcept { return spec_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<LayerView>& layers() const noexcept { return layers_; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

    Tensor weight(std::size_t layer) const
    {
        const auto& l = layers_.at(layer);
        auto first = values_.begin() + static_cast<std::ptrdiff_t>(l.weight_offset);
        return Tensor({l.fan_in, l.fan_out},
                      std::vector<double>(first, first + static_cast<std::ptrdiff_t>(l.fan_in * l.fan_out)));
    }

    Tensor bias(std::size_t layer) const
    {
        const auto& l = layers_.at(layer);
        auto first = values_.begin() + static_cast<std::ptrdiff_t>(l.bias_offset);
        return Tensor({l.fan_out}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(l.fan_out)));
    }

    friend bool operator==(const ParameterStore& a, const ParameterStore& b)
    {
        return a.spec_ == b.spec_ && a.seed_ == b.seed_ && a.values_ == b.values_;
    }

private:
    NetworkSpec spec_;
    std::uint64_t seed_ = 0;
    std::vector<LayerView> layers_;
    std::vector<double> values_;
};

/// Glorot-uniform weights, zero biases.
inline ParameterStore init(const NetworkSpec& spec, std::uint64_t seed)
{
    ParameterStore p(spec, seed);
    std::mt19937_64 rng(seed);
    auto v = p.values();
    for (const auto& l : p.layers()) {
        const double limit = std::sqrt(6.0 / static_cast<double>(l.fan_in + l.fan_out));
        for (std::size_t i = 0; i < l.fan_in * l.fan_out; ++i)
            v[l.weight_offset + i] = -limit + 2.0 * limit * uniform01(rng);
    }
    return p;
}

/// Parameters placed on a graph as leaf nodes.
struct BoundParameters {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
};

inline BoundParameters bind(ad::Graph& g, const ParameterStore& p, bool trainable = true)
{
    BoundParameters b;
    for (std::size_t i = 0; i < p.layers().size(); ++i) {
        b.weights.push_back(trainable ? g.variable(p.weight(i)) : g.constant(p.weight(i)));
        b.biases.push_back(trainable ? g.variable(p.bias(i)) : g.constant(p.bias(i)));
    }
    return b;
}

/// x [N x input_dim] -> [N x output_dim].
inline ad::Var forward(const BoundParameters& params, const Tensor& x)
{
    if (params.weights.empty())
        throw std::invalid_argument("forward: no layers bound");
    auto& g = params.weights.front().graph();
    const auto input_dim = params.weights.front().value().rows();
    if (x.rank() != 2 || x.cols() != input_dim)
        throw ShapeError("forward: input of shape " + shape_string(x.shape()) + " does not match input_dim " +
                         std::to_string(input_dim));
    ad::Var h = g.constant(x);
    const std::size_t last = params.weights.size() - 1;
    for (std::size_t i = 0; i <= last; ++i) {
        h = ad::add_bias(ad::matmul(h, params.weights[i]), params.biases[i]);
        if (i != last)
            h = ad::elu(h);
    }
    return h;
}

inline ad::Var forward(ad::Graph& g, const ParameterStore& p, const Tensor& x)
{
    return forward(bind(g, p, false), x);
}

/// Value-only prediction.
inline Tensor predict(const ParameterStore& p, const Tensor& x)
{
    ad::Graph g;
    return forward(g, p, x).value();
}

/// Flat gradient in ParameterStore layout, after backward() on the graph
/// the parameters were bound to.
inline std::vector<double> gather_gradients(const BoundParameters& bound, const ParameterStore& p)
{
    std::vector<double> out(p.size(), 0.0);
    for (std::size_t i = 0; i < p.layers().size(); ++i) {
        const auto& l = p.layers()[i];
        const Tensor gw = bound.weights[i].grad();
        const Tensor gb = bound.biases[i].grad();
        std::copy(gw.values().begin(), gw.values().end(), out.begin() + static_cast<std::ptrdiff_t>(l.weight_offset));
        std::copy(gb.values().begin(), gb.values().end(), out.begin() + static_cast<std::ptrdiff_t>(l.bias_offset));
    }
    return out;
}

/// Central-difference slope (f(x0 + h) - f(x0 - h)) / 2h of a scalar model.
inline double gradient_alignment_probe(const ParameterStore& p, double x0, double h)
{
    if (p.spec().input_dim != 1 || p.spec().output_dim != 1)
        throw std::invalid_argument("gradient_alignment_probe: model must be scalar-in, scalar-out");
    if (!(h > 0.0))
        throw std::invalid_argument("gradient_alignment_probe: h must be positive");
    const Tensor out = predict(p, Tensor::matrix(2, 1, {x0 + h, x0 - h}));
    return (out[0] - out[1]) / (2.0 * h);
}

// Checkpoint format, little-endian throughout:
//   "GARM" | u8 version | u32 input_dim | u32 output_dim | u32 n_hidden |
//   u32 hidden[n_hidden] | u64 seed | u64 n_params | f64 params[n_params]

inline constexpr std::array<char, 4> kCheckpointMagic{'G', 'A', 'R', 'M'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::string& out, T v)
{
    std::uint64_t bits = 0;
    if constexpr (std::is_floating_point_v<T>)
        bits = std::bit_cast<std::uint64_t>(v);
    else
        bits = static_cast<std::uint64_t>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class LeReader {
public:
    explicit LeReader(const std::string& buf) : buf_(buf) {}

    template <class T>
    T get()
    {
        if (pos_ + sizeof(T) > buf_.size())
            throw std::runtime_error("checkpoint truncated");
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        if constexpr (std::is_floating_point_v<T>)
            return std::bit_cast<T>(bits);
        else
            return static_cast<T>(bits);
    }

    bool done() const { return pos_ == buf_.size(); }

private:
    const std::string& buf_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string serialize(const ParameterStore& p)
{
    std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    out.push_back(static_cast<char>(kCheckpointVersion));
    const auto& s = p.spec();
    detail::put_le(out, static_cast<std::uint32_t>(s.input_dim));
    detail::put_le(out, static_cast<std::uint32_t>(s.output_dim));
    detail::put_le(out, static_cast<std::uint32_t>(s.hidden_dims.size()));
    for (auto h : s.hidden_dims)
        detail::put_le(out, static_cast<std::uint32_t>(h));
    detail::put_le(out, p.seed());
    detail::put_le(out, static_cast<std::uint64_t>(p.size()));
    for (double v : p.values())
        detail::put_le(out, v);
    return out;
}

inline ParameterStore deserialize(const std::string& buf)
{
    if (buf.size() < 5 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), buf.begin()))
        throw std::runtime_error("not a model checkpoint (bad magic)");
    if (static_cast<std::uint8_t>(buf[4]) != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(static_cast<int>(buf[4])));
    detail::LeReader r(buf);
    for (int i = 0; i < 5; ++i)
        r.get<std::uint8_t>();
    NetworkSpec spec;
    spec.input_dim = r.get<std::uint32_t>();
    spec.output_dim = r.get<std::uint32_t>();
    const auto n_hidden = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_hidden; ++i)
        spec.hidden_dims.push_back(r.get<std::uint32_t>());
    const auto seed = r.get<std::uint64_t>();
    ParameterStore p(spec, seed);
    const auto n = r.get<std::uint64_t>();
    if (n != p.size())
        throw std::runtime_error("checkpoint parameter count does not match its network shape");
    for (auto& v : p.values())
        v = r.get<double>();
    if (!r.done())
        throw std::runtime_error("trailing bytes in checkpoint");
    return p;
}

inline void save_checkpoint(const ParameterStore& p, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open " + path + " for writing");
    const auto bytes = serialize(p);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline ParameterStore load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open checkpoint " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

} // namespace gar
