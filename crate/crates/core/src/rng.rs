//! Counter-based deterministic random streams.
//!
//! A stream is a 64-bit key plus a 64-bit counter. Draw `i` of a stream is
//! `mix64(key + (i + 1) * 0x9E3779B97F4A7C15)` where `mix64` is the SplitMix64
//! finalizer, so any draw can be recomputed from `(key, i)` alone. Keys for
//! independent sub-streams are derived by hashing a parent key with tags, e.g.
//! `(seed, NOISE, agent, timestep)`. Normals come from Box–Muller on pairs of
//! uniforms in the open interval (0, 1).

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream purposes; distinct tags give statistically independent streams.
pub mod tag {
    pub const PARAMS: u64 = 1;
    pub const SCENE: u64 = 2;
    pub const FADING: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const SHADOW: u64 = 5;
    pub const TARGETS: u64 = 6;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    spare: Option<u64>,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0, spare: None }
    }

    /// Stream keyed by `seed` and a path of tags.
    pub fn keyed(seed: u64, tags: &[u64]) -> Self {
        let key = tags
            .iter()
            .fold(mix64(seed ^ GOLDEN), |acc, &t| mix64(acc ^ mix64(t.wrapping_add(GOLDEN))));
        Self::new(key)
    }

    /// Child stream of this one; does not advance `self`.
    pub fn derive(&self, tags: &[u64]) -> Self {
        Self::keyed(self.key, tags)
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    #[inline]
    pub fn draw_at(key: u64, index: u64) -> u64 {
        mix64(key.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = Self::draw_at(self.key, self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box–Muller; the sine branch is cached for the next
    /// call.
    pub fn normal(&mut self) -> f64 {
        if let Some(bits) = self.spare.take() {
            return f64::from_bits(bits);
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some((r * theta.sin()).to_bits());
        r * theta.cos()
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.normal()
    }
}
