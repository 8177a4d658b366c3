//! Seeding and the small set of random variates the samplers share.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! master seed, a stream name and a counter. Adding a new consumer therefore
//! never shifts the numbers another consumer sees.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

pub type ChainRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from `master`, a stream name and a counter.
pub fn derive_seed(master: u64, name: &str, index: u64) -> u64 {
    splitmix(master ^ splitmix(fnv1a(name.as_bytes()) ^ splitmix(index)))
}

/// Named sub-stream of the master seed.
pub fn stream(master: u64, name: &str, index: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(splitmix(fnv1a(name.as_bytes()) ^ splitmix(index)));
    rng
}

/// Log of a Gamma(shape, 1) variate. Stays finite for shapes far below one,
/// where the plain variate underflows to zero.
pub fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0 && shape.is_finite());
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("shape > 0").sample(rng).ln()
    } else {
        // G(a) = G(a + 1) * U^(1/a)
        let g = Gamma::new(shape + 1.0, 1.0).expect("shape > 0").sample(rng);
        let u: f64 = rng.random::<f64>();
        g.ln() + u.max(f64::MIN_POSITIVE).ln() / shape
    }
}

/// Dirichlet draw written into `out`. Components are kept strictly positive
/// so downstream concentration parameters never hit zero.
pub fn dirichlet_into<R: Rng + ?Sized>(params: &[f64], rng: &mut R, out: &mut [f64]) {
    assert_eq!(params.len(), out.len());
    let mut max = f64::NEG_INFINITY;
    for (o, &a) in out.iter_mut().zip(params) {
        *o = log_gamma_variate(a, rng);
        max = max.max(*o);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp().max(f64::MIN_POSITIVE);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn dirichlet<R: Rng + ?Sized>(params: &[f64], rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; params.len()];
    dirichlet_into(params, rng, &mut out);
    out
}

/// Draws an index with probability proportional to `weights`, using a single
/// uniform against the running sum of unnormalized weights.
pub fn categorical<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return k;
        }
    }
    // rounding can leave target == total; fall back to the last positive weight
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("categorical draw with all weights zero")
}
