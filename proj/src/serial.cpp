#include "rmm/serial.hpp"

#include <cstring>
#include <fstream>

namespace rmm::serial {

namespace {

void put(std::ofstream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get(std::ifstream& is, void* p, size_t n, const std::string& path) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    require(is.gcount() == static_cast<std::streamsize>(n), ErrorCode::Io, "truncated file: ", path);
}

void put_u32(std::ofstream& os, uint32_t v) { put(os, &v, 4); }
void put_u64(std::ofstream& os, uint64_t v) { put(os, &v, 8); }
uint32_t get_u32(std::ifstream& is, const std::string& path) {
    uint32_t v;
    get(is, &v, 4, path);
    return v;
}
uint64_t get_u64(std::ifstream& is, const std::string& path) {
    uint64_t v;
    get(is, &v, 8, path);
    return v;
}

void put_string(std::ofstream& os, const std::string& s) {
    put_u64(os, s.size());
    put(os, s.data(), s.size());
}

std::string get_string(std::ifstream& is, const std::string& path) {
    const uint64_t n = get_u64(is, path);
    require(n <= (1ull << 32), ErrorCode::Io, "corrupt string length in ", path);
    std::string s(n, '\0');
    get(is, s.data(), n, path);
    return s;
}

void check_magic(std::ifstream& is, const char* magic, const std::string& path) {
    char buf[8];
    get(is, buf, 8, path);
    require(std::memcmp(buf, magic, 8) == 0, ErrorCode::Io, "bad magic in ", path, " (expected ", magic, ")");
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), ErrorCode::Io, "cannot open for writing: ", path);
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), ErrorCode::Io, "cannot open: ", path);
    return is;
}

void put_tensor_body(std::ofstream& os, const Tensor& t) {
    put(os, "MMTENSR1", 8);
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int e : t.shape) put_u64(os, static_cast<uint64_t>(e));
    std::vector<float> payload(t.data.size());
    for (size_t i = 0; i < t.data.size(); ++i) payload[i] = static_cast<float>(t.data[i]);
    put(os, payload.data(), payload.size() * 4);
}

Tensor get_tensor_body(std::ifstream& is, const std::string& path) {
    check_magic(is, "MMTENSR1", path);
    const uint32_t rank = get_u32(is, path);
    require(rank <= 8, ErrorCode::Io, "implausible tensor rank ", rank, " in ", path);
    std::vector<int> shape(rank);
    for (auto& e : shape) {
        const uint64_t v = get_u64(is, path);
        require(v >= 1 && v <= (1u << 24), ErrorCode::Io, "implausible extent in ", path);
        e = static_cast<int>(v);
    }
    Tensor t(std::move(shape));
    std::vector<float> payload(t.data.size());
    get(is, payload.data(), payload.size() * 4, path);
    for (size_t i = 0; i < payload.size(); ++i) t.data[i] = static_cast<double>(payload[i]);
    return t;
}

}  // namespace

void write_tensor(const std::string& path, const Tensor& t) {
    auto os = open_out(path);
    put_tensor_body(os, t);
    require(os.good(), ErrorCode::Io, "write failed: ", path);
}

Tensor read_tensor(const std::string& path) {
    auto is = open_in(path);
    return get_tensor_body(is, path);
}

void write_bank(const std::string& path, const memory::MemoryBank& bank) {
    auto os = open_out(path);
    put(os, "MMBANK01", 8);
    put_u32(os, static_cast<uint32_t>(bank.capacity()));
    put_u32(os, static_cast<uint32_t>(bank.key_dim()));
    put_u32(os, static_cast<uint32_t>(bank.value_dim()));
    for (int i = 0; i < bank.capacity(); ++i) {
        const uint8_t occ = bank.is_occupied(i) ? 1 : 0;
        put(os, &occ, 1);
        put_u64(os, bank.last_access(i));
        std::vector<float> kf(static_cast<size_t>(bank.key_dim()));
        const auto k = bank.key(i);
        for (size_t j = 0; j < kf.size(); ++j) kf[j] = static_cast<float>(k[j]);
        put(os, kf.data(), kf.size() * 4);
        std::vector<float> vf(static_cast<size_t>(bank.value_dim()));
        const auto v = bank.value(i);
        for (size_t j = 0; j < vf.size(); ++j) vf[j] = static_cast<float>(v[j]);
        put(os, vf.data(), vf.size() * 4);
    }
    require(os.good(), ErrorCode::Io, "write failed: ", path);
}

memory::MemoryBank read_bank(const std::string& path) {
    auto is = open_in(path);
    check_magic(is, "MMBANK01", path);
    const uint32_t capacity = get_u32(is, path);
    const uint32_t key_dim = get_u32(is, path);
    const uint32_t value_dim = get_u32(is, path);
    require(capacity >= 1 && capacity <= (1u << 24) && key_dim >= 1 && value_dim >= 1, ErrorCode::Io,
            "implausible bank header in ", path);
    memory::MemoryBank bank(static_cast<int>(capacity), static_cast<int>(key_dim),
                            static_cast<int>(value_dim));
    std::vector<float> kf(key_dim), vf(value_dim);
    std::vector<double> kd(key_dim), vd(value_dim);
    for (uint32_t i = 0; i < capacity; ++i) {
        uint8_t occ;
        get(is, &occ, 1, path);
        const uint64_t access = get_u64(is, path);
        get(is, kf.data(), kf.size() * 4, path);
        get(is, vf.data(), vf.size() * 4, path);
        if (!occ) continue;
        for (size_t j = 0; j < kf.size(); ++j) kd[j] = static_cast<double>(kf[j]);
        for (size_t j = 0; j < vf.size(); ++j) vd[j] = static_cast<double>(vf[j]);
        // set_slot renormalizes, restoring the unit-norm invariant after the
        // float32 round trip
        bank.set_slot(static_cast<int>(i), kd, vd, access);
    }
    return bank;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    auto os = open_out(path);
    put(os, "MMCKPT01", 8);
    put_string(os, ckpt.config_echo);
    put_string(os, ckpt.bank_path);
    put_u64(os, ckpt.bank_hash);
    put_u32(os, static_cast<uint32_t>(ckpt.params.size()));
    for (const auto& [name, tensor] : ckpt.params) {
        put_string(os, name);
        put_tensor_body(os, tensor);
    }
    require(os.good(), ErrorCode::Io, "write failed: ", path);
}

Checkpoint read_checkpoint(const std::string& path) {
    auto is = open_in(path);
    check_magic(is, "MMCKPT01", path);
    Checkpoint ckpt;
    ckpt.config_echo = get_string(is, path);
    ckpt.bank_path = get_string(is, path);
    ckpt.bank_hash = get_u64(is, path);
    const uint32_t count = get_u32(is, path);
    require(count <= (1u << 20), ErrorCode::Io, "implausible param count in ", path);
    ckpt.params.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = get_string(is, path);
        ckpt.params.emplace_back(std::move(name), get_tensor_body(is, path));
    }
    return ckpt;
}

Checkpoint checkpoint_from_store(const ParamStore& store, std::string config_echo,
                                 std::string bank_path, uint64_t bank_hash) {
    Checkpoint ckpt;
    ckpt.config_echo = std::move(config_echo);
    ckpt.bank_path = std::move(bank_path);
    ckpt.bank_hash = bank_hash;
    ckpt.params.reserve(store.count());
    for (size_t i = 0; i < store.count(); ++i) ckpt.params.emplace_back(store.name(i), store.value(i));
    return ckpt;
}

void load_into_store(const Checkpoint& ckpt, ParamStore& store) {
    require(ckpt.params.size() == store.count(), ErrorCode::Contract,
            "checkpoint has ", ckpt.params.size(), " params, store expects ", store.count());
    for (const auto& [name, tensor] : ckpt.params) {
        Tensor& dst = store.value(name);
        require(dst.shape == tensor.shape, ErrorCode::Contract, "checkpoint shape mismatch for ", name);
        dst.data = tensor.data;
    }
}

uint64_t fnv1a64_file(const std::string& path) {
    auto is = open_in(path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (is.good()) {
        is.read(buf, sizeof buf);
        const std::streamsize n = is.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<uint8_t>(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (n < static_cast<std::streamsize>(sizeof buf)) break;
    }
    return h;
}

}  // namespace rmm::serial
