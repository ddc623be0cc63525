#include "emoe/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace emoe {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

const std::array<std::uint32_t, 256>& crc_table() {
    static const auto table = make_crc_table();
    return table;
}

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f64(std::vector<unsigned char>& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(buf, bits);
}

struct Reader {
    const std::vector<unsigned char>& buf;
    std::size_t pos = 0;
    const std::string& name;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw std::runtime_error("checkpoint " + name + ": truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

std::vector<std::uint32_t> geometry_fields(const UNetGeometry& g, std::size_t num_experts) {
    return {static_cast<std::uint32_t>(g.latent_c),   static_cast<std::uint32_t>(g.latent_h),
            static_cast<std::uint32_t>(g.latent_w),   static_cast<std::uint32_t>(g.d_model),
            static_cast<std::uint32_t>(g.d_attn),     static_cast<std::uint32_t>(g.d_txt),
            static_cast<std::uint32_t>(g.d_ff),       static_cast<std::uint32_t>(g.mid_hidden),
            static_cast<std::uint32_t>(g.timesteps),  static_cast<std::uint32_t>(num_experts)};
}

void write_component(const std::filesystem::path& file, const UNetWeights& weights,
                     std::uint32_t kind, std::size_t expert_index) {
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), {'E', 'M', 'O', 'E'});
    put_u32(buf, kCheckpointVersion);
    put_u32(buf, kind);
    put_u32(buf, static_cast<std::uint32_t>(expert_index));
    for (std::uint32_t field : geometry_fields(weights.geom, weights.num_experts()))
        put_u32(buf, field);
    auto params = kind == 0
                      ? parameter_list(weights, ParamScope::backbone_only)
                      : parameter_list(weights, ParamScope::expert_only, expert_index);
    std::uint64_t count = 0;
    for (const Tensor* t : params) count += t->size();
    put_u64(buf, count);
    for (const Tensor* t : params)
        for (std::size_t i = 0; i < t->size(); ++i) put_f64(buf, (*t)[i]);
    put_u32(buf, crc32(buf.data(), buf.size()));

    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + file.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed for " + file.string());
}

std::vector<unsigned char> read_all(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + file.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    return buf;
}

void read_component(const std::filesystem::path& file, UNetWeights& target, std::uint32_t kind,
                    std::size_t expert_slot) {
    std::string name = file.filename().string();
    std::vector<unsigned char> buf = read_all(file);
    if (buf.size() < 4 + 4)
        throw std::runtime_error("checkpoint " + name + ": truncated file");
    std::uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<std::uint32_t>(buf[buf.size() - 4 + static_cast<std::size_t>(i)])
                      << (8 * i);
    if (crc32(buf.data(), buf.size() - 4) != stored_crc)
        throw std::runtime_error("checkpoint " + name + ": CRC mismatch (corrupted file)");

    Reader r{buf, 0, name};
    r.need(4);
    if (std::memcmp(buf.data(), "EMOE", 4) != 0)
        throw std::runtime_error("checkpoint " + name + ": bad magic");
    r.pos = 4;
    if (r.u32() != kCheckpointVersion)
        throw std::runtime_error("checkpoint " + name + ": unsupported format version");
    if (r.u32() != kind)
        throw std::runtime_error("checkpoint " + name + ": unexpected component kind");
    std::uint32_t file_expert = r.u32();
    auto expected = geometry_fields(target.geom, target.num_experts());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        std::uint32_t v = r.u32();
        // the expert-count field may differ when loading subsets
        if (i != expected.size() - 1 && v != expected[i])
            throw std::runtime_error("checkpoint " + name +
                                     ": geometry does not match the run configuration");
    }
    (void)file_expert;
    auto params = kind == 0 ? parameter_list(target, ParamScope::backbone_only)
                            : parameter_list(target, ParamScope::expert_only, expert_slot);
    std::uint64_t count = r.u64();
    std::uint64_t expected_count = 0;
    for (const Tensor* t : params) expected_count += t->size();
    if (count != expected_count)
        throw std::runtime_error("checkpoint " + name + ": weight count mismatch");
    for (Tensor* t : params)
        for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = r.f64();
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) c = crc_table()[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void save_backbone(const std::filesystem::path& file, const UNetWeights& weights) {
    write_component(file, weights, 0, 0);
}

void save_expert(const std::filesystem::path& file, const UNetWeights& weights,
                 std::size_t expert_index) {
    if (expert_index >= weights.num_experts())
        throw std::invalid_argument("save_expert: index out of range");
    write_component(file, weights, 1, expert_index);
}

void save_unet(const std::filesystem::path& dir, const UNetWeights& weights) {
    std::filesystem::create_directories(dir);
    save_backbone(dir / "backbone.emoe", weights);
    for (std::size_t i = 0; i < weights.num_experts(); ++i)
        save_expert(dir / ("expert_" + std::to_string(i) + ".emoe"), weights, i);
}

UNetWeights load_unet(const std::filesystem::path& dir, const UNetGeometry& expected_geom,
                      const std::vector<std::size_t>& expert_indices) {
    if (expert_indices.empty()) throw std::invalid_argument("load_unet: no experts requested");
    RngStream unused(0, 0);
    UNetWeights weights = init_unet(expected_geom, expert_indices.size(), unused);
    read_component(dir / "backbone.emoe", weights, 0, 0);
    for (std::size_t slot = 0; slot < expert_indices.size(); ++slot)
        read_component(dir / ("expert_" + std::to_string(expert_indices[slot]) + ".emoe"),
                       weights, 1, slot);
    return weights;
}

UNetWeights load_unet(const std::filesystem::path& dir, const UNetGeometry& expected_geom,
                      std::size_t num_experts) {
    std::vector<std::size_t> all(num_experts);
    for (std::size_t i = 0; i < num_experts; ++i) all[i] = i;
    return load_unet(dir, expected_geom, all);
}

}  // namespace emoe
