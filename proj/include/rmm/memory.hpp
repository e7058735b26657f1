#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rmm/error.hpp"

namespace rmm::memory {

// Key-value store of unit-norm spatial keys and wavelet-code values.
// Retrieval is exact cosine top-k; updates follow the merge-or-write rule
// gated by the wavelet KL divergence, with LRU eviction when full.
class MemoryBank {
public:
    MemoryBank(int capacity, int key_dim, int value_dim)
        : capacity_(capacity), key_dim_(key_dim), value_dim_(value_dim) {
        require(capacity >= 1 && key_dim >= 1 && value_dim >= 1, ErrorCode::Contract,
                "memory bank: capacity/dims must be positive");
        keys_.assign(static_cast<size_t>(capacity) * key_dim, 0.0);
        values_.assign(static_cast<size_t>(capacity) * value_dim, 0.0);
        last_access_.assign(static_cast<size_t>(capacity), 0);
        occupied_.assign(static_cast<size_t>(capacity), 0);
    }

    int capacity() const { return capacity_; }
    int key_dim() const { return key_dim_; }
    int value_dim() const { return value_dim_; }

    int occupied_count() const {
        int n = 0;
        for (uint8_t o : occupied_) n += o;
        return n;
    }
    bool is_occupied(int slot) const { return occupied_[static_cast<size_t>(slot)] != 0; }
    uint64_t last_access(int slot) const { return last_access_[static_cast<size_t>(slot)]; }

    std::span<const double> key(int slot) const {
        return {keys_.data() + static_cast<size_t>(slot) * key_dim_, static_cast<size_t>(key_dim_)};
    }
    std::span<const double> value(int slot) const {
        return {values_.data() + static_cast<size_t>(slot) * value_dim_, static_cast<size_t>(value_dim_)};
    }

    // Direct slot write; normalizes the key. Used by loading code and tests.
    void set_slot(int slot, std::span<const double> key, std::span<const double> value, uint64_t access);
    void clear_slot(int slot) { occupied_[static_cast<size_t>(slot)] = 0; }

private:
    friend struct UpdateAccess;
    int capacity_, key_dim_, value_dim_;
    std::vector<double> keys_;
    std::vector<double> values_;
    std::vector<uint64_t> last_access_;
    std::vector<uint8_t> occupied_;
};

struct Query {
    std::vector<double> vector;  // unit L2 norm

    static Query normalized(std::vector<double> raw);
    void validate() const;
};

struct Retrieved {
    int index;
    double similarity;
};

// Exactly the k occupied slots with largest cosine similarity, descending,
// ties broken toward the lower index.
std::vector<Retrieved> knn_retrieve(const MemoryBank& bank, const Query& q, int k);

// KL(softmax(v/t) || softmax(z/t)); zero iff v - z is constant.
double wavelet_kl(std::span<const double> v, std::span<const double> z, double temperature);

struct WmmLossResult {
    double loss = 0.0;
    std::optional<int> positive;
    std::optional<int> negative;
    double sim_positive = 0.0;
    double sim_negative = 0.0;
};

// Hinge on cosine distances: max((1 - sim_p) - (1 - sim_n) + margin, 0).
// Positive/negative are the most similar occupied keys passing/failing the
// KL gate at eta; either side may be absent, in which case the loss is zero.
WmmLossResult wmm_loss(const MemoryBank& bank, const Query& q, std::span<const double> z_w,
                       double margin, double eta);

struct UpdateReport {
    enum class Kind { Merged, Written } kind;
    int slot;
};

// Top-1 merge when its value passes the KL gate (key becomes the normalized
// mean of query and stored key; value kept); otherwise writes to the first
// empty slot or, when full, evicts the least recently used slot.
UpdateReport memory_update(MemoryBank& bank, const Query& q, std::span<const double> z_w,
                           double eta, uint64_t step);

constexpr double kKlTemperature = 1.0;
constexpr int kDefaultCapacity = 982;
constexpr double kDefaultMargin = 0.1;
constexpr double kDefaultEta = 0.7;

}  // namespace rmm::memory
