//! Held-out likelihood by the left-to-right particle algorithm and the
//! repeated random-split cross-validation harness built on it.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_holdout, NestedCorpus};
use crate::error::{Error, Result};
use crate::model::{ChainConfig, ModelSpec, PosteriorSummary, Variant};
use crate::random;
use crate::sampler::run_chain;

/// Point estimates used for held-out evaluation: topic-word distributions
/// and page-topic prior averaged over the saved iterations of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEstimates {
    pub k: usize,
    pub v: usize,
    /// K x V.
    pub phi: Vec<f64>,
    /// M x V, empty without local topics.
    pub psi: Vec<f64>,
    pub c_alpha: f64,
    /// One row per site; the flat variants repeat the shared alpha.
    pub alpha: Vec<Vec<f64>>,
}

impl FitEstimates {
    pub fn from_summary(summary: &PosteriorSummary) -> Self {
        let means = summary.mean_means();
        Self {
            k: summary.k(),
            v: summary.v(),
            phi: means.phi,
            psi: means.psi,
            c_alpha: summary.mean_c_alpha(),
            alpha: summary.mean_alpha(),
        }
    }

    pub fn has_local_topics(&self) -> bool {
        !self.psi.is_empty()
    }

    pub fn topics_per_page(&self) -> usize {
        self.k + usize::from(self.has_local_topics())
    }

    /// Probability of word `w` under topic `t` as seen from `site`.
    #[inline]
    pub fn word_prob(&self, site: usize, t: usize, w: usize) -> f64 {
        if t < self.k {
            self.phi[t * self.v + w]
        } else {
            self.psi[site * self.v + w]
        }
    }
}

/// Particles for a page of `page_len` tokens: 8000 / N rounded, at least 1.
pub fn default_particles(page_len: usize) -> usize {
    assert!(page_len >= 1);
    ((8000.0 / page_len as f64).round() as usize).max(1)
}

/// Left-to-right estimate of log p(page | estimates) for a page of `site`.
///
/// Word h contributes the log of the particle average of
/// sum_k p(w_h, z_h = k | prefix topics), where each particle first
/// resamples every earlier topic once and then draws z_h.
pub fn left_to_right_loglik<R: Rng + ?Sized>(
    tokens: &[u32],
    site: usize,
    est: &FitEstimates,
    particles: usize,
    rng: &mut R,
) -> Result<f64> {
    if particles == 0 {
        return Err(Error::config("at least one particle is required"));
    }
    if site >= est.alpha.len() {
        return Err(Error::Dimension(format!("site {site} has no estimates")));
    }
    if let Some(&w) = tokens.iter().find(|&&w| w as usize >= est.v) {
        return Err(Error::TokenOutOfRange {
            index: w as usize,
            vocab_size: est.v,
        });
    }
    let t = est.topics_per_page();
    let n = tokens.len();
    let prior: Vec<f64> = est.alpha[site].iter().map(|a| est.c_alpha * a).collect();
    let prior_total: f64 = prior.iter().sum();
    let lik: Vec<f64> = tokens
        .iter()
        .flat_map(|&w| (0..t).map(move |k| est.word_prob(site, k, w as usize)))
        .collect();

    let mut z = vec![vec![0usize; n]; particles];
    let mut counts = vec![vec![0u32; t]; particles];
    let mut weights = vec![0.0; t];
    let mut ll = 0.0;
    for h in 0..n {
        let mut p_h = 0.0;
        for (zr, mr) in z.iter_mut().zip(counts.iter_mut()) {
            for hp in 0..h {
                mr[zr[hp]] -= 1;
                let total = fill_weights(&mut weights, mr, &prior, &lik[hp * t..(hp + 1) * t]);
                let k = random::categorical(&weights, total, rng);
                zr[hp] = k;
                mr[k] += 1;
            }
            let total = fill_weights(&mut weights, mr, &prior, &lik[h * t..(h + 1) * t]);
            p_h += total / (h as f64 + prior_total);
            let k = random::categorical(&weights, total, rng);
            zr[h] = k;
            mr[k] += 1;
        }
        ll += (p_h / particles as f64).ln();
    }
    Ok(ll)
}

#[inline]
fn fill_weights(out: &mut [f64], counts: &[u32], prior: &[f64], lik: &[f64]) -> f64 {
    let mut total = 0.0;
    for (((o, &c), &a), &l) in out.iter_mut().zip(counts).zip(prior).zip(lik) {
        *o = (c as f64 + a) * l;
        total += *o;
    }
    total
}

/// Sums left-to-right log-likelihoods over every page of `heldout`, matching
/// sites to the fitted sites by id. `particles` overrides the default count.
pub fn heldout_loglik(
    est: &FitEstimates,
    fitted_sites: &[String],
    heldout: &NestedCorpus,
    particles: Option<usize>,
    seed: u64,
) -> Result<f64> {
    let mut jobs = Vec::new();
    for site in &heldout.sites {
        let i = fitted_sites
            .iter()
            .position(|s| s == &site.id)
            .ok_or_else(|| Error::Dimension(format!("held-out site {} was not fitted", site.id)))?;
        for page in &site.pages {
            jobs.push((i, page));
        }
    }
    let terms = jobs
        .par_iter()
        .enumerate()
        .map(|(n, (i, page))| {
            let r = particles.unwrap_or_else(|| default_particles(page.tokens.len()));
            let mut rng = random::stream(seed, "particles", n as u64);
            left_to_right_loglik(&page.tokens, *i, est, r, &mut rng)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub fraction: f64,
    /// Chain length settings; the chain seed is derived per fold.
    pub chain: ChainConfig,
    pub seed: u64,
    /// Fixed particle count; `None` uses `default_particles`.
    pub particles: Option<usize>,
}

impl CvConfig {
    pub fn new(chain: ChainConfig, seed: u64) -> Self {
        Self {
            folds: 10,
            fraction: 0.2,
            chain,
            seed,
            particles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub variant: Variant,
    pub k: usize,
    pub fold_logliks: Vec<f64>,
    pub mean: f64,
}

/// Fits every spec on each of `folds` independent random splits and scores
/// the held-out pages. Splits, chains and particles draw from sub-streams of
/// the master seed, so results do not depend on scheduling.
pub fn cross_validate(specs: &[ModelSpec], corpus: &NestedCorpus, config: &CvConfig) -> Result<Vec<CvResult>> {
    if config.folds == 0 {
        return Err(Error::config("at least one fold is required"));
    }
    let splits = (0..config.folds)
        .map(|f| split_holdout(corpus, config.fraction, config.seed, f))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|s| (0..config.folds).map(move |f| (s, f)))
        .collect();
    let lls = cells
        .par_iter()
        .map(|&(s, f)| {
            let split = &splits[f];
            let mut chain = config.chain;
            chain.seed = random::derive_seed(config.seed, "chain", f as u64);
            chain.keep_traces = false;
            let summary = run_chain(&specs[s], &split.train, &chain)?;
            let est = FitEstimates::from_summary(&summary);
            let ids: Vec<String> = summary.sites.iter().map(|s| s.id.clone()).collect();
            let particle_seed = random::derive_seed(config.seed, "particles", f as u64);
            log::info!("fold {f} {} K={} fitted", specs[s].variant, specs[s].k);
            heldout_loglik(&est, &ids, &split.heldout, config.particles, particle_seed)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(specs
        .iter()
        .enumerate()
        .map(|(s, spec)| {
            let fold_logliks = lls[s * config.folds..(s + 1) * config.folds].to_vec();
            let mean = fold_logliks.iter().sum::<f64>() / config.folds as f64;
            CvResult {
                variant: spec.variant,
                k: spec.k,
                fold_logliks,
                mean,
            }
        })
        .collect())
}

/// `variant,K,fold,loglik` rows, one per fold.
pub fn cv_csv(results: &[CvResult]) -> String {
    let mut out = String::from("variant,K,fold,loglik\n");
    for r in results {
        for (f, ll) in r.fold_logliks.iter().enumerate() {
            writeln!(out, "{},{},{},{}", r.variant, r.k, f, ll).unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: usize,
    pub fraction: f64,
    pub seed: u64,
    pub results: Vec<CvResult>,
}
