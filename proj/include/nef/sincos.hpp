#pragma once

#include <cmath>
#include <cstdint>
#include <type_traits>

// Branch-free sine/cosine that the compiler can vectorize across array lanes.
// Quadrant reduction by pi/2 in three exact parts followed by minimax
// polynomials on [-pi/4, pi/4] (Cephes coefficients). Used on every code path
// that evaluates a NeF, so scalar and vectorized evaluation agree bit-for-bit.

namespace nef {

namespace detail {

template <class T>
struct SinCosConstants;

template <>
struct SinCosConstants<double> {
    static constexpr double two_over_pi = 0.63661977236758134308;
    static constexpr double p1 = 1.57079625129699707031e0;
    static constexpr double p2 = 7.54978941586159635336e-8;
    static constexpr double p3 = 5.39030285815811905290e-15;
};

template <>
struct SinCosConstants<float> {
    static constexpr float two_over_pi = 0.636619772367581343f;
    static constexpr float p1 = 1.5703125f;
    static constexpr float p2 = 4.837512969970703125e-4f;
    static constexpr float p3 = 7.54978995489188216e-8f;
};

inline void sincos_poly(double r, double& s, double& c) noexcept
{
    const double z = r * r;
    const double ps = ((((1.58962301576546568060e-10 * z - 2.50507477628578072866e-8) * z + 2.75573136213857245213e-6) * z
                        - 1.98412698295895385996e-4) * z + 8.33333333332211858878e-3) * z - 1.66666666666666307295e-1;
    const double pc = ((((-1.13585365213876817300e-11 * z + 2.08757008419747316778e-9) * z - 2.75573141792967388112e-7) * z
                        + 2.48015872888517045348e-5) * z - 1.38888888888730564116e-3) * z + 4.16666666666665929218e-2;
    s = r + r * z * ps;
    c = 1.0 - 0.5 * z + z * z * pc;
}

inline void sincos_poly(float r, float& s, float& c) noexcept
{
    const float z = r * r;
    s = ((-1.9515295891e-4f * z + 8.3321608736e-3f) * z - 1.6666654611e-1f) * z * r + r;
    c = ((2.443315711809948e-5f * z - 1.388731625493765e-3f) * z + 4.166664568298827e-2f) * z * z - 0.5f * z + 1.0f;
}

template <class T>
using QuadrantInt = std::conditional_t<sizeof(T) == 8, std::int64_t, std::int32_t>;

} // namespace detail

template <class T>
inline void sincos(T x, T& s, T& c) noexcept
{
    using K = detail::SinCosConstants<T>;
    const T qf = std::nearbyint(x * K::two_over_pi);
    const T r = ((x - qf * K::p1) - qf * K::p2) - qf * K::p3;
    T ps, pc;
    detail::sincos_poly(r, ps, pc);
    const auto q = static_cast<detail::QuadrantInt<T>>(qf);
    const bool swap = (q & 1) != 0;
    const T sin_abs = swap ? pc : ps;
    const T cos_abs = swap ? ps : pc;
    s = (q & 2) != 0 ? -sin_abs : sin_abs;
    c = ((q + 1) & 2) != 0 ? -cos_abs : cos_abs;
}

template <class T>
inline T sin(T x) noexcept
{
    T s, c;
    sincos(x, s, c);
    return s;
}

template <class T>
inline T cos(T x) noexcept
{
    T s, c;
    sincos(x, s, c);
    return c;
}

} // namespace nef
