// SPDX-License-Identifier: Apache-2.0

#include "moelens/checkpoint.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "moelens/error.hpp"

namespace moelens {

namespace {

constexpr std::array<char, 8> kMagic{'M', 'O', 'E', 'L', 'E', 'N', 'S', '\0'};

template <typename U>
void put_le(std::ostream& out, U v) {
    char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const char* what) {
    unsigned char buf[sizeof(U)];
    in.read(reinterpret_cast<char*>(buf), sizeof(U));
    require(in.gcount() == static_cast<std::streamsize>(sizeof(U)), ErrorCode::Malformed,
            std::string("checkpoint truncated while reading ") + what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

void put_matrix(std::ostream& out, const Matrix& m, const std::string& name) {
    for (double v : m.data()) {
        const auto f = static_cast<float>(v);
        require(std::isfinite(f), ErrorCode::InvalidInput, name + " has a weight that is not finite in float32");
        put_le(out, std::bit_cast<std::uint32_t>(f));
    }
}

void get_matrix(std::istream& in, Matrix& m, const std::string& name) {
    for (auto& v : m.data()) v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in, name.c_str())));
}

template <typename F>
void for_each_matrix(F&& f, auto& model) {
    f(model.embed, std::string("embed"));
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& layer = model.layers[l];
        const auto p = "layer " + std::to_string(l);
        f(layer.gate, p + " gate");
        for (std::size_t e = 0; e < layer.experts.size(); ++e) {
            f(layer.experts[e].w1, p + " expert " + std::to_string(e) + " w1");
            f(layer.experts[e].w2, p + " expert " + std::to_string(e) + " w2");
        }
    }
    f(model.unembed, std::string("unembed"));
}

}  // namespace

void save_checkpoint(const MoEModel& model, std::ostream& out) {
    model.validate();
    out.put(static_cast<char>(kCheckpointVersion));
    out.write(kMagic.data(), kMagic.size());
    const auto& s = model.spec;
    for (std::uint32_t v : {s.n_layers, s.n_experts, s.top_k, s.d_model, s.d_ff, s.vocab_size}) put_le(out, v);
    put_le(out, s.seed);
    const std::string act = kNonlinearity;
    put_le(out, static_cast<std::uint32_t>(act.size()));
    out.write(act.data(), static_cast<std::streamsize>(act.size()));
    for_each_matrix([&](const Matrix& m, const std::string& name) { put_matrix(out, m, name); }, model);
    require(out.good(), ErrorCode::Io, "checkpoint write failed");
}

void save_checkpoint(const MoEModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::Io, "cannot create '" + path + "'");
    save_checkpoint(model, out);
    out.close();
    require(!out.fail(), ErrorCode::Io, "write failed for '" + path + "'");
}

MoEModel load_checkpoint(std::istream& in) {
    const int version = in.get();
    require(version != std::char_traits<char>::eof(), ErrorCode::Malformed, "checkpoint is empty");
    require(version == kCheckpointVersion, ErrorCode::Schema,
            "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                std::to_string(kCheckpointVersion) + ")");
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    require(in.gcount() == 8 && magic == kMagic, ErrorCode::Malformed, "not a moelens checkpoint (bad magic)");

    ModelSpec s;
    s.n_layers = get_le<std::uint32_t>(in, "n_layers");
    s.n_experts = get_le<std::uint32_t>(in, "n_experts");
    s.top_k = get_le<std::uint32_t>(in, "top_k");
    s.d_model = get_le<std::uint32_t>(in, "d_model");
    s.d_ff = get_le<std::uint32_t>(in, "d_ff");
    s.vocab_size = get_le<std::uint32_t>(in, "vocab_size");
    s.seed = get_le<std::uint64_t>(in, "seed");
    const auto len = get_le<std::uint32_t>(in, "nonlinearity length");
    require(len <= 64, ErrorCode::Malformed, "nonlinearity name too long");
    std::string act(len, '\0');
    in.read(act.data(), len);
    require(in.gcount() == static_cast<std::streamsize>(len), ErrorCode::Malformed, "checkpoint truncated in header");
    require(act == kNonlinearity, ErrorCode::Malformed,
            "checkpoint uses nonlinearity '" + act + "', this build supports '" + kNonlinearity + "'");

    MoEModel model = MoEModel::zeros(s);
    for_each_matrix([&](Matrix& m, const std::string& name) { get_matrix(in, m, name); }, model);
    require(in.peek() == std::char_traits<char>::eof(), ErrorCode::Malformed, "trailing bytes after checkpoint");
    model.validate();
    return model;
}

MoEModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::Io, "cannot open '" + path + "'");
    try {
        return load_checkpoint(in);
    } catch (const Error& e) {
        fail(e.code(), path + ": " + e.what());
    }
}

}  // namespace moelens
