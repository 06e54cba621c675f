#ifndef CORRGROUP_RANDOM_HPP
#define CORRGROUP_RANDOM_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace corrgroup {

using Rng = std::mt19937_64;

/**
 * Derive an independent stream seed from a master seed and a path of indices,
 * so that e.g. replicate 17, fold 3 always sees the same numbers no matter
 * which thread runs it or in what order.
 */
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    auto mix = [](std::uint64_t z) {
        // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::uint64_t state = mix(master);
    for (auto p : path) {
        state = mix(state ^ mix(p + 0x632be59bd9b4e019ULL));
    }
    return state;
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    return Rng(derive_seed(master, path));
}

}

#endif
