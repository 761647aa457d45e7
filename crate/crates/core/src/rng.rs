//! Deterministic random-number streams.
//!
//! Every stochastic routine in this crate takes an explicit generator, and
//! the online loop derives one generator per logical site (component name
//! plus integer tags such as round and target indices) from a single root
//! seed. Two sites with different names or tags get statistically
//! independent streams, so reordering or parallelizing the sites cannot
//! change any result.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives named [`ChaCha8Rng`] substreams from one root seed.
///
/// The derivation hashes `(root, component, tags, tags.len())` through a
/// SplitMix64-style chain into a 256-bit ChaCha key, so stream identity
/// depends only on the *names*, never on the order streams are requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngFactory {
    root: u64,
}

impl RngFactory {
    pub fn new(root_seed: u64) -> Self {
        RngFactory { root: root_seed }
    }

    pub fn root_seed(&self) -> u64 {
        self.root
    }

    /// Generator for the site identified by `component` and `tags`.
    pub fn stream(&self, component: &str, tags: &[u64]) -> ChaCha8Rng {
        let mut acc = mix(self.root ^ 0xA076_1D64_78BD_642F, fnv1a(component.as_bytes()));
        for &t in tags {
            acc = mix(acc, t);
        }
        acc = mix(acc, tags.len() as u64);

        let mut key = [0u8; 32];
        let mut state = acc;
        for chunk in key.chunks_exact_mut(8) {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            chunk.copy_from_slice(&finalize(state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

/// One absorption step: non-commutative so tag order matters.
#[inline]
fn mix(acc: u64, x: u64) -> u64 {
    finalize(acc ^ x.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// SplitMix64 output function.
#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
