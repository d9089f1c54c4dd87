//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, domain, a, b, c, d)`. Work can be
//! split across any number of threads, in any order, and still reproduce the
//! same numbers.

/// Separates independent uses of the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    EStep = 1,
    Forward = 2,
    Generate = 3,
    Mask = 4,
    Covariates = 5,
    Dump = 6,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// A keyed stream; `uniform(a, b, c, d)` addresses one draw.
///
/// For the E-step the coordinates are (individual, replicate, time, outcome).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    key: u64,
}

impl RngStream {
    pub fn new(seed: u64, domain: Domain) -> Self {
        Self::with_tag(seed, domain, 0)
    }

    /// Stream for one use of a domain, e.g. one EM iteration.
    pub fn with_tag(seed: u64, domain: Domain, tag: u64) -> Self {
        let key = mix(mix(seed ^ GOLDEN).wrapping_add(domain as u64).wrapping_mul(GOLDEN) ^ mix(tag));
        RngStream { key }
    }

    #[inline]
    pub fn bits(&self, a: u64, b: u64, c: u64, d: u64) -> u64 {
        let mut h = self.key;
        for x in [a, b, c, d] {
            h = mix(h.wrapping_add(GOLDEN) ^ mix(x.wrapping_add(h)));
        }
        h
    }

    /// Uniform on [0, 1) with 53 random bits.
    #[inline]
    pub fn uniform(&self, a: u64, b: u64, c: u64, d: u64) -> f64 {
        (self.bits(a, b, c, d) >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    #[inline]
    pub fn bernoulli(&self, p: f64, a: u64, b: u64, c: u64, d: u64) -> bool {
        self.uniform(a, b, c, d) < p
    }
}
