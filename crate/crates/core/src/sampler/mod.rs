//! Collapsed Gibbs kernels for the four variants.
//!
//! One sweep resamples every token topic, then draws table counts, the
//! page-topic prior alpha (per site or shared), c_alpha, and, for the
//! hierarchical variants, each base parameter c0 alpha0_k.

mod chain;

pub use chain::{run_chain, Chain, Checkpoint, SweepStats, CHECKPOINT_VERSION};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::corpus::NestedCorpus;
use crate::model::{ConditionalMeans, CountTables, ModelSpec, ModelState, TopicPrior};
use crate::random;

/// Unnormalized conditional weights of every topic for one token of page
/// (site, page) with word `word`. `counts` must already exclude the token.
/// Returns the sum of the weights.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn token_weights(
    counts: &CountTables,
    spec: &ModelSpec,
    alpha: &[f64],
    c_alpha: f64,
    site: usize,
    page: usize,
    word: u32,
    out: &mut [f64],
) -> f64 {
    let k = counts.k;
    let v = counts.v;
    let w = word as usize;
    let beta = spec.beta_scale;
    let beta_total = beta * v as f64;
    let m = &counts.m[site][page];
    let mut total = 0.0;
    for t in 0..k {
        let weight = (m[t] as f64 + c_alpha * alpha[t]) * (counts.n[t * v + w] as f64 + beta)
            / (counts.n_sum[t] as f64 + beta_total);
        out[t] = weight;
        total += weight;
    }
    if spec.variant.has_local_topics() {
        let gamma = spec.gamma_scale;
        let weight = (m[k] as f64 + c_alpha * alpha[k]) * (counts.p[site * v + w] as f64 + gamma)
            / (counts.p_sum[site] as f64 + gamma * v as f64);
        out[k] = weight;
        total += weight;
    }
    total
}

/// Resamples the topic of token `pos` on page (site, page) and returns it.
#[allow(clippy::too_many_arguments)]
pub fn sample_token_topic<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    corpus: &NestedCorpus,
    site: usize,
    page: usize,
    pos: usize,
    scratch: &mut [f64],
    rng: &mut R,
) -> usize {
    let word = corpus.sites[site].pages[page].tokens[pos];
    let old = state.z[site][page][pos] as usize;
    state.counts.remove(site, page, word, old);
    let total = token_weights(
        &state.counts,
        spec,
        state.prior.alpha_for_site(site),
        state.c_alpha,
        site,
        page,
        word,
        scratch,
    );
    assert!(total > 0.0 && total.is_finite(), "token weights sum to {total}");
    let new = random::categorical(&scratch[..spec.topics_per_page()], total, rng);
    state.counts.add(site, page, word, new);
    state.z[site][page][pos] = new as u32;
    new
}

pub fn sweep_tokens<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    corpus: &NestedCorpus,
    rng: &mut R,
) {
    let mut scratch = vec![0.0; spec.topics_per_page()];
    for (i, site) in corpus.sites.iter().enumerate() {
        for (j, page) in site.pages.iter().enumerate() {
            for h in 0..page.tokens.len() {
                sample_token_topic(state, spec, corpus, i, j, h, &mut scratch, rng);
            }
        }
    }
}

/// Number of occupied tables when `customers` are seated by a Chinese
/// restaurant process with concentration `mass`: a sum of independent
/// Bernoulli(mass / (mass + t - 1)) draws for t = 1..=customers.
pub fn sample_table_count<R: Rng + ?Sized>(customers: u32, mass: f64, rng: &mut R) -> u32 {
    debug_assert!(mass > 0.0 && mass.is_finite());
    let mut tables = 0;
    for t in 0..customers {
        if rng.random::<f64>() * (mass + t as f64) < mass {
            tables += 1;
        }
    }
    tables
}

/// Table counts summed over the pages of every site: `out[i][k]` is
/// sum_j lambda_{ij,k}.
pub fn draw_site_tables<R: Rng + ?Sized>(state: &ModelState, rng: &mut R) -> Vec<Vec<u32>> {
    state
        .counts
        .m
        .iter()
        .enumerate()
        .map(|(i, pages)| {
            let alpha = state.prior.alpha_for_site(i);
            let mut totals = vec![0u32; alpha.len()];
            for m in pages {
                for (t, (&count, &a)) in m.iter().zip(alpha).enumerate() {
                    totals[t] += sample_table_count(count, state.c_alpha * a, rng);
                }
            }
            totals
        })
        .collect()
}

/// Draws alpha_i ~ Dirichlet(c0 alpha0 + table totals of site i).
pub fn sample_site_alpha<R: Rng + ?Sized>(
    state: &mut ModelState,
    site: usize,
    tables: &[u32],
    rng: &mut R,
) {
    let TopicPrior::Hierarchical { alpha_site, base } = &mut state.prior else {
        panic!("site alpha requested for a flat prior");
    };
    let params: Vec<f64> = base.iter().zip(tables).map(|(b, &l)| b + l as f64).collect();
    random::dirichlet_into(&params, rng, &mut alpha_site[site]);
}

/// Draws the shared alpha ~ Dirichlet(mass + tables pooled over all sites).
pub fn sample_flat_alpha<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    pooled: &[u32],
    rng: &mut R,
) {
    let mass = spec.flat_alpha_mass();
    let TopicPrior::Flat { alpha } = &mut state.prior else {
        panic!("flat alpha requested for a hierarchical prior");
    };
    let params: Vec<f64> = pooled.iter().map(|&l| mass + l as f64).collect();
    random::dirichlet_into(&params, rng, alpha);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MhOutcome {
    Accepted,
    Rejected,
    /// The proposal's log target was not finite; treated as a rejection.
    NonFinite,
}

impl MhOutcome {
    pub fn accepted(self) -> bool {
        self == MhOutcome::Accepted
    }
}

/// One multiplicative log-normal random-walk Metropolis-Hastings step on a
/// positive scalar. The log(x'/x) term is the proposal's Jacobian correction.
pub fn mh_log_normal_step<R, F>(current: f64, step: f64, rng: &mut R, log_target: F) -> (f64, MhOutcome)
where
    R: Rng + ?Sized,
    F: Fn(f64) -> f64,
{
    let eps: f64 = StandardNormal.sample(rng);
    let proposal = current * (step * eps).exp();
    let proposed = log_target(proposal);
    if !proposed.is_finite() || !(proposal > 0.0 && proposal.is_finite()) {
        return (current, MhOutcome::NonFinite);
    }
    let log_ratio = proposed - log_target(current) + (proposal / current).ln();
    let u: f64 = rng.random();
    if u.ln() < log_ratio {
        (proposal, MhOutcome::Accepted)
    } else {
        (current, MhOutcome::Rejected)
    }
}

/// Log density of Gamma(shape, rate) up to a constant.
fn log_gamma_prior(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (shape - 1.0) * x.ln() - rate * x
}

/// Gamma prior on c_alpha times the collapsed page likelihood
/// prod_ij Gamma(c) / Gamma(c + N_ij) prod_k Gamma(c a_ik + m_ijk) / Gamma(c a_ik).
pub fn log_target_c_alpha(state: &ModelState, spec: &ModelSpec, c: f64) -> f64 {
    let mut total = log_gamma_prior(c, spec.a_alpha, spec.b_alpha);
    let lg_c = ln_gamma(c);
    for (i, pages) in state.counts.m.iter().enumerate() {
        let alpha = state.prior.alpha_for_site(i);
        for m in pages {
            let n: u32 = m.iter().sum();
            total += lg_c - ln_gamma(c + n as f64);
            for (&count, &a) in m.iter().zip(alpha) {
                if count > 0 {
                    let ca = c * a;
                    total += ln_gamma(ca + count as f64) - ln_gamma(ca);
                }
            }
        }
    }
    total
}

pub fn mh_update_c_alpha<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    rng: &mut R,
    step: f64,
) -> MhOutcome {
    let current = state.c_alpha;
    let (next, outcome) = mh_log_normal_step(current, step, rng, |c| log_target_c_alpha(state, spec, c));
    state.c_alpha = next;
    outcome
}

/// Gamma prior on c0 alpha0_k times the Dirichlet densities of every alpha_i,
/// as a function of component `k` alone.
pub fn log_target_base(state: &ModelState, spec: &ModelSpec, k: usize, x: f64) -> f64 {
    let TopicPrior::Hierarchical { alpha_site, base } = &state.prior else {
        panic!("base parameters exist only for the hierarchical variants");
    };
    let mut total = log_gamma_prior(x, spec.base_shape, spec.base_rate);
    if x <= 0.0 {
        return total;
    }
    let rest: f64 = base.iter().enumerate().filter(|&(t, _)| t != k).map(|(_, b)| b).sum();
    let per_site = ln_gamma(rest + x) - ln_gamma(x);
    for alpha in alpha_site {
        total += per_site + (x - 1.0) * alpha[k].ln();
    }
    total
}

pub fn mh_update_base<R: Rng + ?Sized>(
    state: &mut ModelState,
    spec: &ModelSpec,
    k: usize,
    rng: &mut R,
    step: f64,
) -> MhOutcome {
    let current = state.prior.base()[k];
    let (next, outcome) = mh_log_normal_step(current, step, rng, |x| log_target_base(state, spec, k, x));
    if let TopicPrior::Hierarchical { base, .. } = &mut state.prior {
        base[k] = next;
    }
    outcome
}

/// Conditional posterior means of phi, psi and theta given the current counts.
pub fn conditional_means(state: &ModelState, spec: &ModelSpec) -> ConditionalMeans {
    let counts = &state.counts;
    let (k, v) = (counts.k, counts.v);
    let t = spec.topics_per_page();
    let smooth = |row: &[u32], total: u32, prior: f64| -> Vec<f64> {
        let denom = total as f64 + prior * v as f64;
        row.iter().map(|&c| (c as f64 + prior) / denom).collect()
    };
    let mut phi = Vec::with_capacity(k * v);
    for topic in 0..k {
        phi.extend(smooth(&counts.n[topic * v..(topic + 1) * v], counts.n_sum[topic], spec.beta_scale));
    }
    let mut psi = Vec::with_capacity(counts.p.len());
    for (site, &total) in counts.p_sum.iter().enumerate() {
        psi.extend(smooth(&counts.p[site * v..(site + 1) * v], total, spec.gamma_scale));
    }
    let mut theta = Vec::new();
    for (i, pages) in counts.m.iter().enumerate() {
        let alpha = state.prior.alpha_for_site(i);
        for m in pages {
            let n: u32 = m.iter().sum();
            let denom = n as f64 + state.c_alpha;
            theta.extend(m.iter().zip(alpha).map(|(&c, &a)| (c as f64 + state.c_alpha * a) / denom));
        }
    }
    ConditionalMeans {
        k,
        v,
        topics_per_page: t,
        phi,
        psi,
        theta,
    }
}

/// Collapsed log joint density log p(W, Z | c_alpha, alpha), used for
/// progress reporting.
pub fn log_joint(state: &ModelState, spec: &ModelSpec) -> f64 {
    let counts = &state.counts;
    let v = counts.v as f64;
    let word_part = |row: &[u32], total: u32, prior: f64| -> f64 {
        let lg_prior = ln_gamma(prior);
        ln_gamma(prior * v) - ln_gamma(total as f64 + prior * v)
            + row
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| ln_gamma(c as f64 + prior) - lg_prior)
                .sum::<f64>()
    };
    let mut total = 0.0;
    for topic in 0..counts.k {
        total += word_part(
            &counts.n[topic * counts.v..(topic + 1) * counts.v],
            counts.n_sum[topic],
            spec.beta_scale,
        );
    }
    for (site, &n) in counts.p_sum.iter().enumerate() {
        total += word_part(&counts.p[site * counts.v..(site + 1) * counts.v], n, spec.gamma_scale);
    }
    total + log_target_c_alpha(state, spec, state.c_alpha)
        - log_gamma_prior(state.c_alpha, spec.a_alpha, spec.b_alpha)
}
