//! Scrambled low-discrepancy sequences on the unit cube.

use rand::Rng;
use sobol::params::JoeKuoD6;
use sobol::Sobol;

use crate::error::{Error, Result};

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Nested uniform (Owen) scramble of a 32-bit binary fraction.
///
/// The flip applied to bit `k` is a pseudo-random function of `seed` and the
/// `k` more significant input bits, so every node of the binary tree gets an
/// independent flip.
pub fn owen_scramble(x: u32, seed: u64) -> u32 {
    let mut out = 0u32;
    for level in 0..32u32 {
        let shift = 31 - level;
        let bit = (x >> shift) & 1;
        let prefix = if level == 0 {
            0
        } else {
            (x >> (32 - level)) as u64
        };
        let node = ((level as u64) << 32) | prefix;
        let flip = (mix64(seed ^ mix64(node.wrapping_add(0x9e37_79b9_7f4a_7c15))) >> 63) as u32;
        out |= (bit ^ flip) << shift;
    }
    out
}

/// Sobol sequence (Joe–Kuo direction numbers) with per-dimension Owen scrambling.
#[derive(Clone)]
pub struct ScrambledSobol {
    seq: Sobol<u32>,
    seeds: Vec<u64>,
}

impl ScrambledSobol {
    pub const MAX_DIM: usize = 1000;

    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 || dim > Self::MAX_DIM {
            return Err(Error::UnsupportedDimension {
                generator: "sobol",
                dim,
                max: Self::MAX_DIM,
            });
        }
        let params = if dim <= 100 {
            JoeKuoD6::minimal()
        } else {
            JoeKuoD6::standard()
        };
        Ok(Self {
            seq: Sobol::new(dim, &params),
            seeds: (0..dim).map(|_| rng.random()).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.seeds.len()
    }

    /// Next point of the sequence in `(0, 1)^d`.
    pub fn next_point(&mut self, out: &mut [f64]) {
        let raw = self.seq.next().expect("sobol sequence exhausted");
        for ((o, &x), &seed) in out.iter_mut().zip(&raw).zip(&self.seeds) {
            *o = (owen_scramble(x, seed) as f64 + 0.5) * (1.0 / 4_294_967_296.0);
        }
    }
}

pub(crate) fn first_primes(n: usize) -> Vec<u32> {
    let mut primes = Vec::with_capacity(n);
    let mut candidate = 2u32;
    while primes.len() < n {
        if primes
            .iter()
            .take_while(|&&p| p * p <= candidate)
            .all(|&p| !candidate.is_multiple_of(p))
        {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Halton sequence with an independent random digit permutation per
/// (dimension, digit position).
#[derive(Clone, Debug)]
pub struct ScrambledHalton {
    bases: Vec<u32>,
    perms: Vec<Vec<Vec<u32>>>,
    index: u64,
}

impl ScrambledHalton {
    pub const MAX_DIM: usize = 1000;

    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 || dim > Self::MAX_DIM {
            return Err(Error::UnsupportedDimension {
                generator: "halton",
                dim,
                max: Self::MAX_DIM,
            });
        }
        let bases = first_primes(dim);
        let perms = bases
            .iter()
            .map(|&b| {
                // digits until b^-k falls below double resolution
                let digits = (53.0 / (b as f64).log2()).ceil() as usize;
                (0..digits)
                    .map(|_| {
                        let mut p: Vec<u32> = (0..b).collect();
                        for i in (1..p.len()).rev() {
                            let j = rng.random_range(0..=i);
                            p.swap(i, j);
                        }
                        p
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            bases,
            perms,
            index: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.bases.len()
    }

    pub fn next_point(&mut self, out: &mut [f64]) {
        let idx = self.index;
        self.index += 1;
        for ((o, &base), perms) in out.iter_mut().zip(&self.bases).zip(&self.perms) {
            let b = base as u64;
            let inv_b = 1.0 / base as f64;
            let mut n = idx;
            let mut scale = inv_b;
            let mut value = 0.0;
            for perm in perms {
                let digit = (n % b) as usize;
                n /= b;
                value += perm[digit] as f64 * scale;
                scale *= inv_b;
            }
            *o = value;
        }
    }
}
