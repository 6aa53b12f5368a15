//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, domain, particle, index)`, so the
//! order in which particles or replications are scheduled never changes a
//! value. Brownian increments are defined at a finest dyadic resolution and
//! coarser increments are pairwise sums of finer ones, which makes coarse and
//! fine paths of the same particle exactly consistent.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash an arbitrary list of words into one well-mixed word.
#[inline]
pub fn mix(words: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3_u64;
    for &w in words {
        h = splitmix64(h ^ splitmix64(w));
    }
    h
}

/// Child seed for a named sub-run (replication, reference run, ...).
pub fn child_seed(master: u64, tag: &str, index: u64) -> u64 {
    let tag_hash = tag.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    mix(&[master, tag_hash, index])
}

/// Stream domains keep initial draws and Brownian draws independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Initial = 1,
    Brownian = 2,
    Projection = 3,
}

#[inline]
fn unit_open(bits: u64) -> f64 {
    // (0, 1): 53 random bits, offset by half an ulp so ln() is finite.
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in (0, 1) keyed by `(seed, domain, particle, index)`.
pub fn uniform(seed: u64, domain: Domain, particle: u64, index: u64) -> f64 {
    unit_open(mix(&[seed, domain as u64, particle, index]))
}

/// Standard normal pair via Box–Muller.
pub fn normal_pair(seed: u64, domain: Domain, particle: u64, index: u64) -> (f64, f64) {
    let h = mix(&[seed, domain as u64, particle, index]);
    let u1 = unit_open(h);
    let u2 = unit_open(splitmix64(h));
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Fill `out` with independent standard normals for one `(particle, index)` key.
pub fn normals(seed: u64, domain: Domain, particle: u64, index: u64, out: &mut [f64]) {
    let d = out.len() as u64;
    for (pair, chunk) in out.chunks_mut(2).enumerate() {
        let (a, b) = normal_pair(seed, domain, particle, index * d.div_ceil(2) + pair as u64);
        chunk[0] = a;
        if chunk.len() > 1 {
            chunk[1] = b;
        }
    }
}

/// Brownian increments for a family of particles, defined on the dyadic
/// hierarchy `fine_dt * 2^level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianSource {
    pub seed: u64,
    pub fine_dt: f64,
    pub dim: usize,
}

impl BrownianSource {
    pub fn new(seed: u64, fine_dt: f64, dim: usize) -> Self {
        Self { seed, fine_dt, dim }
    }

    /// Increment of particle `particle` over step `step` at `level`
    /// (step length `fine_dt * 2^level`), written into `out`.
    ///
    /// Level `l` increments are the pairwise sum of the two level `l - 1`
    /// increments they cover, so the refinement hierarchy is exactly
    /// consistent in floating point.
    pub fn increment(&self, particle: usize, level: u32, step: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        if level == 0 {
            normals(self.seed, Domain::Brownian, particle as u64, step, out);
            let scale = self.fine_dt.sqrt();
            out.iter_mut().for_each(|v| *v *= scale);
            return;
        }
        let mut right = [0.0; 3];
        let right = &mut right[..self.dim];
        self.increment(particle, level - 1, 2 * step, out);
        self.increment(particle, level - 1, 2 * step + 1, right);
        for (o, r) in out.iter_mut().zip(right.iter()) {
            *o += *r;
        }
    }

    pub fn step_len(&self, level: u32) -> f64 {
        self.fine_dt * (1u64 << level) as f64
    }
}
