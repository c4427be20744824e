//! Portable, splittable random streams and Box–Muller normals.
//!
//! Every replication draws from its own SplitMix64 stream seeded by
//! [`rep_seed`], so outputs are bit-identical across platforms and
//! independent of scheduling.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer (full 64-bit avalanche).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep_index` under `base_seed`.
pub fn rep_seed(base_seed: u64, rep_index: u64) -> u64 {
    mix64(base_seed ^ mix64(rep_index.wrapping_add(GOLDEN_GAMMA)))
}

/// SplitMix64 generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Stream for one replication.
    pub fn for_replication(base_seed: u64, rep_index: u64) -> Self {
        Self::new(rep_seed(base_seed, rep_index))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform on `(0, 1]` with 53 random bits.
    #[inline]
    pub fn next_open_closed(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Standard normals by Box–Muller: the first uniform sets the radius, the
/// second the angle; the cosine variate is returned first, then the sine.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(rng: SplitMix64) -> Self {
        Self { rng, spare: None }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.rng.next_open_closed();
        let u2 = self.rng.next_open_closed();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}
