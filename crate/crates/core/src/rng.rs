//! Counter-based random numbers.
//!
//! Every draw is a pure function of a 64-bit seed, an 8-byte purpose tag and a
//! sequence of 64-bit indices, so results do not depend on evaluation order,
//! thread count or platform. The stream is defined bit-exactly as follows:
//!
//! ```text
//! mix(z):  z = z + 0x9E3779B97F4A7C15            (wrapping)
//!          z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!          z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!          return z ^ (z >> 31)
//!
//! tag(t):  the ASCII bytes of t, zero padded to 8 bytes, read as little-endian u64
//!
//! draw(seed, t, [i0, i1, ...]):
//!          h = mix(seed ^ tag(t))
//!          for each index i: h = mix(h ^ i)
//!          return h
//!
//! unit(seed, t, idx)   = ((draw >> 11) + 0.5) * 2^-53      in (0, 1)
//! signed(seed, t, idx) = 2 * unit - 1                      in (-1, 1)
//! ```
//!
//! `mix` is the SplitMix64 output function.

/// Purpose tags. Distinct tags give independent streams from the same seed.
pub mod tag {
    pub const HIDE: u64 = super::tag(b"hide");
    pub const VALIDATION: u64 = super::tag(b"valid");
    pub const INIT: u64 = super::tag(b"init");
    pub const TIE: u64 = super::tag(b"tie");
    pub const PARAM: u64 = super::tag(b"param");
    pub const EPOCH: u64 = super::tag(b"epoch");
    pub const SYNTH: u64 = super::tag(b"synth");
}

/// Packs up to eight ASCII bytes into a little-endian tag.
pub const fn tag(name: &[u8]) -> u64 {
    assert!(name.len() <= 8);
    let mut out = 0u64;
    let mut i = 0;
    while i < name.len() {
        out |= (name[i] as u64) << (8 * i);
        i += 1;
    }
    out
}

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn draw(seed: u64, tag: u64, indices: &[u64]) -> u64 {
    indices.iter().fold(mix(seed ^ tag), |h, &i| mix(h ^ i))
}

/// Uniform on the open interval (0, 1).
#[inline]
pub fn unit(seed: u64, tag: u64, indices: &[u64]) -> f64 {
    ((draw(seed, tag, indices) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform on the open interval (-1, 1).
#[inline]
pub fn signed(seed: u64, tag: u64, indices: &[u64]) -> f64 {
    2.0 * unit(seed, tag, indices) - 1.0
}

/// Child seed for a sub-computation, e.g. one training epoch.
#[inline]
pub fn derive_seed(seed: u64, tag: u64, indices: &[u64]) -> u64 {
    draw(seed, tag, indices)
}
