#pragma once

#include <cstddef>
#include <new>
#include <vector>

namespace ssp {

/// Allocator with a fixed 64-byte alignment. Vectorized Eigen kernels peel
/// leading elements up to the next aligned address, so the summation order
/// of a reduction depends on where its buffer starts; a fixed alignment
/// makes results bitwise reproducible from run to run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

} // namespace ssp
