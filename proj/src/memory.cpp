#include "rmm/memory.hpp"

#include <algorithm>
#include <cmath>

namespace rmm::memory {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::vector<double> softmax_scaled(std::span<const double> x, double temperature) {
    std::vector<double> p(x.size());
    double m = -1e308;
    for (double v : x) m = std::max(m, v / temperature);
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        p[i] = std::exp(x[i] / temperature - m);
        s += p[i];
    }
    for (auto& v : p) v /= s;
    return p;
}

}  // namespace

void MemoryBank::set_slot(int slot, std::span<const double> key, std::span<const double> value,
                          uint64_t access) {
    require(slot >= 0 && slot < capacity_, ErrorCode::Contract, "set_slot: slot ", slot, " out of range");
    require(static_cast<int>(key.size()) == key_dim_ && static_cast<int>(value.size()) == value_dim_,
            ErrorCode::Contract, "set_slot: dim mismatch");
    const double n = norm(key);
    require(n > 1e-12, ErrorCode::Contract, "set_slot: zero key");
    for (int i = 0; i < key_dim_; ++i)
        keys_[static_cast<size_t>(slot) * key_dim_ + i] = key[static_cast<size_t>(i)] / n;
    for (int i = 0; i < value_dim_; ++i)
        values_[static_cast<size_t>(slot) * value_dim_ + i] = value[static_cast<size_t>(i)];
    last_access_[static_cast<size_t>(slot)] = access;
    occupied_[static_cast<size_t>(slot)] = 1;
}

Query Query::normalized(std::vector<double> raw) {
    const double n = norm(raw);
    require(n > 1e-12, ErrorCode::Contract, "query: zero vector");
    for (auto& v : raw) v /= n;
    return Query{std::move(raw)};
}

void Query::validate() const {
    require(std::fabs(norm(vector) - 1.0) <= 1e-9, ErrorCode::Contract,
            "query: norm ", norm(vector), " is not 1");
}

std::vector<Retrieved> knn_retrieve(const MemoryBank& bank, const Query& q, int k) {
    require(k >= 1, ErrorCode::Contract, "knn_retrieve: k must be >= 1");
    require(static_cast<int>(q.vector.size()) == bank.key_dim(), ErrorCode::Contract,
            "knn_retrieve: query dim ", q.vector.size(), " != key dim ", bank.key_dim());
    const int occupied = bank.occupied_count();
    require(occupied >= 1, ErrorCode::Contract, "knn_retrieve: bank is empty");
    require(occupied >= k, ErrorCode::Contract, "knn_retrieve: only ", occupied, " occupied slots for k=", k);

    std::vector<Retrieved> hits;
    hits.reserve(static_cast<size_t>(occupied));
    for (int i = 0; i < bank.capacity(); ++i)
        if (bank.is_occupied(i)) hits.push_back({i, dot(q.vector, bank.key(i))});
    std::sort(hits.begin(), hits.end(), [](const Retrieved& a, const Retrieved& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.index < b.index;
    });
    hits.resize(static_cast<size_t>(k));
    return hits;
}

double wavelet_kl(std::span<const double> v, std::span<const double> z, double temperature) {
    require(v.size() == z.size(), ErrorCode::Contract, "wavelet_kl: length mismatch ", v.size(), " vs ", z.size());
    require(temperature > 0.0, ErrorCode::Contract, "wavelet_kl: temperature must be positive");
    const auto p = softmax_scaled(v, temperature);
    const auto q = softmax_scaled(z, temperature);
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
    return std::max(kl, 0.0);  // clip the tiny negative round-off at v == z
}

WmmLossResult wmm_loss(const MemoryBank& bank, const Query& q, std::span<const double> z_w,
                       double margin, double eta) {
    require(margin >= 0.0, ErrorCode::Contract, "wmm_loss: margin must be >= 0");
    WmmLossResult res;
    double best_pos = -2.0, best_neg = -2.0;
    for (int i = 0; i < bank.capacity(); ++i) {
        if (!bank.is_occupied(i)) continue;
        const double sim = dot(q.vector, bank.key(i));
        const double kl = wavelet_kl(bank.value(i), z_w, kKlTemperature);
        if (kl < eta) {
            if (sim > best_pos) {
                best_pos = sim;
                res.positive = i;
            }
        } else if (kl > eta) {
            if (sim > best_neg) {
                best_neg = sim;
                res.negative = i;
            }
        }
    }
    if (res.positive && res.negative) {
        res.sim_positive = best_pos;
        res.sim_negative = best_neg;
        res.loss = std::max((1.0 - best_pos) - (1.0 - best_neg) + margin, 0.0);
    }
    return res;
}

UpdateReport memory_update(MemoryBank& bank, const Query& q, std::span<const double> z_w,
                           double eta, uint64_t step) {
    require(static_cast<int>(z_w.size()) == bank.value_dim(), ErrorCode::Contract,
            "memory_update: value dim mismatch");
    if (bank.occupied_count() > 0) {
        const auto top = knn_retrieve(bank, q, 1);
        const int t1 = top[0].index;
        if (wavelet_kl(bank.value(t1), z_w, kKlTemperature) < eta) {
            std::vector<double> merged(static_cast<size_t>(bank.key_dim()));
            const auto old = bank.key(t1);
            for (size_t i = 0; i < merged.size(); ++i) merged[i] = 0.5 * (q.vector[i] + old[i]);
            double n = 0.0;
            for (double v : merged) n += v * v;
            if (std::sqrt(n) > 1e-9) {
                bank.set_slot(t1, merged, bank.value(t1), step);
            } else {
                // q ~= -key: the mean degenerates, keep the stored key
                bank.set_slot(t1, old, bank.value(t1), step);
            }
            return {UpdateReport::Kind::Merged, t1};
        }
    }
    int slot = -1;
    for (int i = 0; i < bank.capacity(); ++i)
        if (!bank.is_occupied(i)) {
            slot = i;
            break;
        }
    if (slot < 0) {
        uint64_t oldest = UINT64_MAX;
        for (int i = 0; i < bank.capacity(); ++i)
            if (bank.last_access(i) < oldest) {
                oldest = bank.last_access(i);
                slot = i;
            }
    }
    bank.set_slot(slot, q.vector, z_w, step);
    return {UpdateReport::Kind::Written, slot};
}

}  // namespace rmm::memory
