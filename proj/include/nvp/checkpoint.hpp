#pragma once

#include <cinttypes>
#include <fstream>
#include <map>

#include "nvp/training.hpp"

namespace nvp {

// Checkpoint container. On disk (all little-endian):
//   magic "NVCK", u16 version,
//   u32 record count, records of
//     (u16 name length, name bytes, u8 dtype code {0=f32, 1=f64}, u8 rank,
//      u32 extents, raw payload),
//   u32 line count, length-prefixed (u16) UTF-8 "key=value" lines.
// Loading then saving reproduces the file byte for byte.
template <typename T>
struct Checkpoint {
    std::vector<std::pair<std::string, TensorT<T>>> tensors;
    std::vector<std::pair<std::string, std::string>> config;

    const TensorT<T>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }

    const TensorT<T>& require(const std::string& name) const {
        const auto* t = find(name);
        if (!t) throw DataError("checkpoint: missing tensor " + name);
        return *t;
    }

    std::string value(const std::string& key) const {
        for (const auto& [k, v] : config)
            if (k == key) return v;
        throw DataError("checkpoint: missing config key " + key);
    }

    std::string value_or(const std::string& key, const std::string& fallback) const {
        for (const auto& [k, v] : config)
            if (k == key) return v;
        return fallback;
    }
};

namespace detail {

template <typename T>
constexpr std::uint8_t dtype_code() {
    return std::is_same_v<T, float> ? 0 : 1;
}

inline void write_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline std::uint16_t read_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    if (!is) throw DataError("checkpoint: truncated");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

template <typename T>
void write_scalar_le(std::ostream& os, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));  // little-endian host
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T read_scalar_le(std::istream& is) {
    unsigned char b[sizeof(T)];
    is.read(reinterpret_cast<char*>(b), sizeof(T));
    if (!is) throw DataError("checkpoint: truncated payload");
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
    os.write("NVCK", 4);
    detail::write_u16(os, 1);  // version
    detail::write_u32(os, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, tensor] : ck.tensors) {
        if (name.size() > 0xffff) throw DataError("checkpoint: tensor name too long");
        detail::write_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(detail::dtype_code<T>()));
        if (tensor.rank() > 0xff) throw DataError("checkpoint: rank too large");
        os.put(static_cast<char>(tensor.rank()));
        for (std::size_t d = 0; d < tensor.rank(); ++d)
            detail::write_u32(os, static_cast<std::uint32_t>(tensor.extent(d)));
        for (T v : tensor.data()) detail::write_scalar_le(os, v);
    }
    detail::write_u32(os, static_cast<std::uint32_t>(ck.config.size()));
    for (const auto& [key, value] : ck.config) {
        const std::string line = key + "=" + value;
        if (line.size() > 0xffff) throw DataError("checkpoint: config line too long");
        detail::write_u16(os, static_cast<std::uint16_t>(line.size()));
        os.write(line.data(), static_cast<std::streamsize>(line.size()));
    }
    if (!os) throw DataError("checkpoint: write failed: " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "NVCK", 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    const std::uint16_t version = detail::read_u16(is);
    if (version != 1) throw DataError("checkpoint: unsupported version");

    Checkpoint<T> ck;
    const std::uint32_t n_records = detail::read_u32(is);
    for (std::uint32_t r = 0; r < n_records; ++r) {
        const std::uint16_t name_len = detail::read_u16(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const int dtype = is.get();
        const int rank = is.get();
        if (!is || rank < 0 || rank > 8) throw DataError("checkpoint: bad tensor header");
        if (dtype != detail::dtype_code<T>())
            throw DataError("checkpoint: dtype mismatch for " + name);
        Shape shape(static_cast<std::size_t>(rank));
        std::int64_t count = 1;
        for (auto& e : shape) {
            e = detail::read_u32(is);
            count *= e;
        }
        std::vector<T> data(static_cast<std::size_t>(count));
        for (auto& v : data) v = detail::read_scalar_le<T>(is);
        ck.tensors.emplace_back(std::move(name), TensorT<T>::from(std::move(shape),
                                                                  std::move(data)));
    }
    const std::uint32_t n_lines = detail::read_u32(is);
    for (std::uint32_t l = 0; l < n_lines; ++l) {
        const std::uint16_t len = detail::read_u16(is);
        std::string line(len, '\0');
        is.read(line.data(), len);
        if (!is) throw DataError("checkpoint: truncated config");
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint: malformed config line");
        ck.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint binding.

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

template <typename T>
Checkpoint<T> build_checkpoint(GenerativeModel<T>& gen, std::vector<CriticModel<T>>& critics,
                               AdamState<T>& adam_g, AdamState<T>* adam_d,
                               const TrainConfig& cfg, std::int64_t iteration,
                               std::int64_t data_cursor, const NormScale& norm) {
    Checkpoint<T> ck;
    auto gen_named = named_params(gen);
    for (auto& [name, p] : gen_named) ck.tensors.emplace_back(name, p);
    for (std::size_t c = 0; c < critics.size(); ++c) {
        for (auto& [name, p] : named_params(critics[c], "d" + std::to_string(c)))
            ck.tensors.emplace_back(name, p);
        for (auto& [name, vec] : named_bn_state(critics[c], "d" + std::to_string(c)))
            ck.tensors.emplace_back(name, TensorT<T>::from(
                                              {static_cast<std::int64_t>(vec->size())},
                                              std::vector<T>(*vec)));
    }
    auto add_adam = [&](const std::string& prefix, AdamState<T>& adam,
                        std::vector<std::pair<std::string, TensorT<T>>>& params) {
        for (std::size_t k = 0; k < params.size(); ++k) {
            const Shape& shape = params[k].second.shape();
            ck.tensors.emplace_back(prefix + ".m." + params[k].first,
                                    TensorT<T>::from(shape, std::vector<T>(adam.m[k])));
            ck.tensors.emplace_back(prefix + ".v." + params[k].first,
                                    TensorT<T>::from(shape, std::vector<T>(adam.v[k])));
        }
    };
    add_adam("adam_g", adam_g, gen_named);
    if (adam_d) {
        std::vector<std::pair<std::string, TensorT<T>>> critic_named;
        for (std::size_t c = 0; c < critics.size(); ++c)
            for (auto& [name, p] : named_params(critics[c], "d" + std::to_string(c)))
                critic_named.emplace_back(name, p);
        add_adam("adam_d", *adam_d, critic_named);
    }

    const auto& s = gen.spec;
    ck.config.emplace_back("format", "nvck");
    ck.config.emplace_back("generator.kind", to_string(s.kind));
    ck.config.emplace_back("generator.channels1", std::to_string(s.channels1));
    ck.config.emplace_back("generator.channels2", std::to_string(s.channels2));
    ck.config.emplace_back("generator.height", std::to_string(s.height));
    ck.config.emplace_back("generator.width", std::to_string(s.width));
    ck.config.emplace_back("generator.input_channels", std::to_string(s.input_channels));
    ck.config.emplace_back("generator.obs_len", std::to_string(s.obs_len));
    ck.config.emplace_back("generator.pred_len", std::to_string(s.pred_len));
    ck.config.emplace_back("critics", std::to_string(critics.size()));
    bool bn_ready = false;
    for (auto& critic : critics)
        for (auto& layer : critic.encoder)
            if (layer.has_norm && layer.bn_stats.initialized) bn_ready = true;
    ck.config.emplace_back("critics.bn_initialized", bn_ready ? "1" : "0");
    ck.config.emplace_back("train.lambda_rec", detail::fmt_double(cfg.lambda_rec));
    ck.config.emplace_back("train.lambda_pred", detail::fmt_double(cfg.lambda_pred));
    ck.config.emplace_back("train.lambda_adv", detail::fmt_double(cfg.lambda_adv));
    ck.config.emplace_back("train.learning_rate", detail::fmt_double(cfg.learning_rate));
    ck.config.emplace_back("train.total_iterations", std::to_string(cfg.total_iterations));
    ck.config.emplace_back("train.clip_norm", detail::fmt_double(cfg.clip_norm));
    ck.config.emplace_back("train.critic_period", std::to_string(cfg.critic_period));
    ck.config.emplace_back("train.adversarial", cfg.adversarial ? "1" : "0");
    ck.config.emplace_back("train.seed", std::to_string(cfg.seed));
    ck.config.emplace_back("train.batch_size", std::to_string(cfg.batch_size));
    ck.config.emplace_back("adam_g.step", std::to_string(adam_g.step));
    ck.config.emplace_back("adam_d.step", adam_d ? std::to_string(adam_d->step) : "0");
    ck.config.emplace_back("iteration", std::to_string(iteration));
    ck.config.emplace_back("data.cursor", std::to_string(data_cursor));
    ck.config.emplace_back("norm.lo", detail::fmt_double(norm.lo));
    ck.config.emplace_back("norm.hi", detail::fmt_double(norm.hi));
    return ck;
}

template <typename T>
struct RestoredState {
    GenerativeModel<T> generator;
    std::vector<CriticModel<T>> critics;
    AdamState<T> adam_g;
    AdamState<T> adam_d;
    TrainConfig config;
    std::int64_t iteration = 0;
    std::int64_t data_cursor = 0;
    NormScale norm;
};

template <typename T>
RestoredState<T> restore_checkpoint(const Checkpoint<T>& ck) {
    RestoredState<T> st;
    GeneratorSpec spec;
    spec.kind = generator_kind_from(ck.value("generator.kind"));
    spec.channels1 = std::stoll(ck.value("generator.channels1"));
    spec.channels2 = std::stoll(ck.value("generator.channels2"));
    spec.height = std::stoll(ck.value("generator.height"));
    spec.width = std::stoll(ck.value("generator.width"));
    spec.input_channels = std::stoll(ck.value("generator.input_channels"));
    spec.obs_len = std::stoll(ck.value("generator.obs_len"));
    spec.pred_len = std::stoll(ck.value("generator.pred_len"));
    st.generator = init_generator<T>(spec, 0);

    auto load_into = [&](const std::string& name, TensorT<T>& param) {
        const TensorT<T>& stored = ck.require(name);
        if (stored.shape() != param.shape())
            throw DataError("checkpoint: shape mismatch for " + name);
        param.mutable_data() = stored.data();
    };

    for (auto& [name, p] : named_params(st.generator)) load_into(name, p);

    const std::size_t n_critics = static_cast<std::size_t>(std::stoll(ck.value("critics")));
    const bool bn_ready = ck.value_or("critics.bn_initialized", "0") == "1";
    for (std::size_t c = 0; c < n_critics; ++c) {
        const CriticSpec cspec = c == 0 ? CriticSpec::full_scale(spec.input_channels)
                                        : CriticSpec::half_scale(spec.input_channels);
        st.critics.push_back(init_critic<T>(cspec, 0));
        for (auto& [name, p] : named_params(st.critics[c], "d" + std::to_string(c)))
            load_into(name, p);
        for (auto& [name, vec] : named_bn_state(st.critics[c], "d" + std::to_string(c))) {
            const TensorT<T>& stored = ck.require(name);
            *vec = stored.data();
        }
        if (bn_ready)
            for (auto* layers : {&st.critics[c].encoder, &st.critics[c].decoder})
                for (auto& layer : *layers)
                    if (layer.has_norm) layer.bn_stats.initialized = true;
    }

    st.config.lambda_rec = std::stod(ck.value("train.lambda_rec"));
    st.config.lambda_pred = std::stod(ck.value("train.lambda_pred"));
    st.config.lambda_adv = std::stod(ck.value("train.lambda_adv"));
    st.config.learning_rate = std::stod(ck.value("train.learning_rate"));
    st.config.total_iterations = std::stoll(ck.value("train.total_iterations"));
    st.config.clip_norm = std::stod(ck.value("train.clip_norm"));
    st.config.critic_period = std::stoll(ck.value("train.critic_period"));
    st.config.adversarial = ck.value("train.adversarial") == "1";
    st.config.seed = std::stoull(ck.value("train.seed"));
    st.config.batch_size = std::stoll(ck.value("train.batch_size"));
    st.iteration = std::stoll(ck.value("iteration"));
    st.data_cursor = std::stoll(ck.value("data.cursor"));
    st.norm.lo = std::stod(ck.value("norm.lo"));
    st.norm.hi = std::stod(ck.value("norm.hi"));

    // Rebuild optimizer state in registry order.
    auto gen_params = collect_generator_params(st.generator);
    st.adam_g.init(gen_params);
    st.adam_g.step = std::stoll(ck.value("adam_g.step"));
    {
        std::size_t k = 0;
        for (auto& [name, p] : named_params(st.generator)) {
            st.adam_g.m[k] = ck.require("adam_g.m." + name).data();
            st.adam_g.v[k] = ck.require("adam_g.v." + name).data();
            ++k;
        }
    }
    auto critic_params = collect_critic_params(st.critics);
    st.adam_d.init(critic_params);
    st.adam_d.step = std::stoll(ck.value_or("adam_d.step", "0"));
    {
        std::size_t k = 0;
        for (std::size_t c = 0; c < st.critics.size(); ++c)
            for (auto& [name, p] : named_params(st.critics[c], "d" + std::to_string(c))) {
                if (const auto* m = ck.find("adam_d.m." + name)) st.adam_d.m[k] = m->data();
                if (const auto* v = ck.find("adam_d.v." + name)) st.adam_d.v[k] = v->data();
                ++k;
            }
    }
    return st;
}

}  // namespace nvp
