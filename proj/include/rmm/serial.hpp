#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmm/memory.hpp"
#include "rmm/optim.hpp"
#include "rmm/tensor.hpp"

namespace rmm::serial {

// Tensor container: magic "MMTENSR1", u32 rank, rank x u64 extents,
// little-endian float32 payload, row major.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

// Bank snapshot: magic "MMBANK01", u32 capacity, u32 key dim, u32 value dim,
// then per slot: u8 occupied, u64 last_access, key floats, value floats.
void write_bank(const std::string& path, const memory::MemoryBank& bank);
memory::MemoryBank read_bank(const std::string& path);

// Checkpoint: magic "MMCKPT01", config echo (u64 length + bytes), bank
// reference (path + fnv1a64 content hash; empty path when absent), u32 param
// count, then per parameter: name + embedded tensor container payload.
struct Checkpoint {
    std::string config_echo;
    std::string bank_path;       // empty if no bank reference
    uint64_t bank_hash = 0;
    std::vector<std::pair<std::string, Tensor>> params;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

Checkpoint checkpoint_from_store(const ParamStore& store, std::string config_echo,
                                 std::string bank_path, uint64_t bank_hash);
// Copies parameter tensors back into an identically laid out store.
void load_into_store(const Checkpoint& ckpt, ParamStore& store);

uint64_t fnv1a64_file(const std::string& path);

}  // namespace rmm::serial
