//! Counter-based deterministic PRNG.
//!
//! The generator is a splitmix64 finalizer applied to `key + i*GOLDEN`,
//! where `i` is the draw counter. Disjoint streams are obtained by mixing a
//! stream id into the key, so parallel data generation can key one stream
//! per record without coordination. Identical (seed, stream, draw sequence)
//! gives bitwise-identical output.

pub const ALGORITHM: &str = "sm64ctr-v1";

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    key: u64,
    counter: u64,
    gaussian_spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng::stream(seed, 0)
    }

    /// Independent stream `stream_id` of the same seed.
    pub fn stream(seed: u64, stream_id: u64) -> Self {
        let key = mix(seed ^ mix(stream_id.wrapping_add(GOLDEN)));
        Rng {
            seed,
            key,
            counter: 0,
            gaussian_spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draws(&self) -> u64 {
        self.counter
    }

    pub fn algorithm(&self) -> &'static str {
        ALGORITHM
    }

    pub fn next_u64(&mut self) -> u64 {
        let z = self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN));
        self.counter += 1;
        mix(z)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is immaterial for n << 2^64.
        (self.next_u64() % n as u64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller; the second value is cached.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(v) = self.gaussian_spare.take() {
            return v;
        }
        // Both draws happen unconditionally so the counter advances the
        // same way regardless of caller interleaving.
        let u1 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.gaussian_spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn gaussian_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.gaussian()).collect()
    }

    /// Geometric count of failures before success, success probability `p`.
    pub fn geometric(&mut self, p: f64) -> u64 {
        let p = p.clamp(1e-9, 1.0);
        if p >= 1.0 {
            return 0;
        }
        let u = self.uniform();
        // Inverse CDF of the geometric distribution on {0, 1, ...}.
        ((1.0 - u).ln() / (1.0 - p).ln()).floor() as u64
    }
}
