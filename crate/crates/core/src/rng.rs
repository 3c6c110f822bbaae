//! Deterministic named random streams.
//!
//! Every random draw in the engine flows from one root seed through
//! hierarchically derived streams: a stream is identified by a label and a
//! list of indices (e.g. `("rollout", [step, group, sample])`), and its
//! state is a pure function of the root seed and that identity. Nothing
//! mutable has to be persisted across a checkpoint: resuming at step `s`
//! re-derives exactly the streams a straight-through run would have used.
//!
//! The generator is splitmix64 — stable output across platforms, not
//! cryptographically secure.

/// A deterministic stream of pseudo-random values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes. Stable across platforms and compiler
/// versions, unlike `DefaultHasher`.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl Stream {
    /// Derive a stream from a root seed, a purpose label, and an index path.
    pub fn derive(root_seed: u64, label: &str, path: &[u64]) -> Self {
        let mut state = root_seed ^ fnv1a(label.as_bytes());
        state = splitmix64(&mut state);
        // One scramble round per path element keeps sibling streams
        // statistically independent even for adjacent indices.
        for &ix in path {
            state ^= ix.wrapping_mul(GOLDEN);
            state = splitmix64(&mut state);
        }
        Self { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Modulo bias is negligible for the desk-scale ranges used here.
        self.next_u64() % n
    }

    pub fn next_bool(&mut self, p_true: f64) -> bool {
        self.next_f64() < p_true
    }

    /// Index drawn from an unnormalized non-negative weight vector.
    pub fn next_weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0);
        let mut u = self.next_f64() * total;
        for (i, &w) in weights.iter().enumerate() {
            u -= w;
            if u < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }
}
