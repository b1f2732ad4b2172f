//! SplitMix64, the generator behind corpus splits and demo draws.
//!
//! Outputs depend only on the seed and integer arithmetic, so shuffles are
//! identical on every platform.
//!
//! ```text
//! state  += 0x9E37_79B9_7F4A_7C15
//! z       = state
//! z       = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
//! z       = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
//! output  = z ^ (z >> 31)
//! ```

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_2: u64 = 0x94D0_49BB_1331_11EB;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
        z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
        z ^ (z >> 31)
    }

    /// Value in `0..bound` by multiply-shift: `(x · bound) >> 64`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// In-place Fisher–Yates: for `i` from `len − 1` down to 1, swap `i` with
    /// `below(i + 1)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Seed of the `index`-th independent sub-stream.
    pub fn derive(seed: u64, index: u64) -> u64 {
        SplitMix64::new(seed ^ index.wrapping_mul(GOLDEN_GAMMA).rotate_left(17)).next_u64()
    }
}
