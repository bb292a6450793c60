/*
 * Copyright 2026 The mfserve Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Little-endian u64/f64 stream helpers shared by the matrix and index formats.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

namespace mfserve::detail {

inline std::uint64_t to_little_endian(std::uint64_t v) noexcept {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t out = 0;
        for (int b = 0; b < 8; ++b) out |= ((v >> (8 * b)) & 0xffu) << (8 * (7 - b));
        return out;
    }
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    v = to_little_endian(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline bool read_u64(std::istream& is, std::uint64_t& v) {
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) return false;
    v = to_little_endian(v);
    return true;
}

inline bool read_f64(std::istream& is, double& v) {
    std::uint64_t bits = 0;
    if (!read_u64(is, bits)) return false;
    v = std::bit_cast<double>(bits);
    return true;
}

}  // namespace mfserve::detail
