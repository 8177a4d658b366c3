use serde::{Deserialize, Serialize};

use super::{
    conditional_means, draw_site_tables, mh_update_base, mh_update_c_alpha, sample_flat_alpha,
    sample_site_alpha, sweep_tokens, MhOutcome,
};
use crate::corpus::NestedCorpus;
use crate::error::{Error, Result};
use crate::model::{ChainConfig, ModelSpec, ModelState, PosteriorSummary};
use crate::random::{self, ChainRng};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub c_alpha_accepted: bool,
    pub base_accepted: usize,
    pub non_finite: usize,
}

/// Everything needed to continue a chain exactly where it stopped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: ModelSpec,
    pub config: ChainConfig,
    pub iteration: usize,
    pub state: ModelState,
    pub summary: PosteriorSummary,
    pub rng: ChainRng,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cp: Self = serde_json::from_str(text)?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!("unsupported checkpoint version {}", cp.version)));
        }
        Ok(cp)
    }
}

/// A single MCMC chain over one corpus. Sweeps are strictly sequential.
pub struct Chain<'a> {
    spec: ModelSpec,
    corpus: &'a NestedCorpus,
    config: ChainConfig,
    state: ModelState,
    rng: ChainRng,
    iteration: usize,
    summary: PosteriorSummary,
    c_alpha_accepts: usize,
}

impl<'a> Chain<'a> {
    pub fn new(spec: &ModelSpec, corpus: &'a NestedCorpus, config: &ChainConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = random::stream(config.seed, "init", 0);
        let state = ModelState::init(spec, corpus, &mut init_rng)?;
        Ok(Self {
            spec: spec.clone(),
            corpus,
            config: *config,
            state,
            rng: random::stream(config.seed, "chain", 0),
            iteration: 0,
            summary: PosteriorSummary::new(spec, config, corpus),
            c_alpha_accepts: 0,
        })
    }

    pub fn resume(checkpoint: Checkpoint, corpus: &'a NestedCorpus) -> Result<Self> {
        let counts = crate::model::recount(corpus, &checkpoint.state.z, &checkpoint.spec)?;
        if counts != checkpoint.state.counts {
            return Err(Error::Dimension("checkpoint does not match the corpus".into()));
        }
        Ok(Self {
            spec: checkpoint.spec,
            corpus,
            config: checkpoint.config,
            state: checkpoint.state,
            rng: checkpoint.rng,
            iteration: checkpoint.iteration,
            summary: checkpoint.summary,
            c_alpha_accepts: 0,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            config: self.config,
            iteration: self.iteration,
            state: self.state.clone(),
            summary: self.summary.clone(),
            rng: self.rng.clone(),
        }
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut ModelState {
        &mut self.state
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn corpus(&self) -> &NestedCorpus {
        self.corpus
    }

    pub fn summary(&self) -> &PosteriorSummary {
        &self.summary
    }

    /// Completed sweeps.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iters
    }

    /// Fraction of c_alpha proposals accepted so far in this session.
    pub fn c_alpha_acceptance(&self) -> f64 {
        self.c_alpha_accepts as f64 / self.iteration.max(1) as f64
    }

    /// Token topics, then table counts, alpha, c_alpha and the base
    /// parameters. Saved iterations are recorded into the summary.
    pub fn sweep(&mut self) -> SweepStats {
        let mut stats = SweepStats::default();
        let step = self.config.step;
        sweep_tokens(&mut self.state, &self.spec, self.corpus, &mut self.rng);
        self.update_hyperparameters(&mut stats, step);
        self.iteration += 1;
        if stats.c_alpha_accepted {
            self.c_alpha_accepts += 1;
        }
        if self.config.is_saved(self.iteration) {
            let means = conditional_means(&self.state, &self.spec);
            self.summary.record(self.iteration, &self.state, means);
        }
        stats
    }

    /// The hyperparameter half of a sweep, with the token topics held fixed.
    pub fn update_hyperparameters(&mut self, stats: &mut SweepStats, step: f64) {
        let tables = draw_site_tables(&self.state, &mut self.rng);
        if self.spec.variant.is_hierarchical() {
            for (i, t) in tables.iter().enumerate() {
                sample_site_alpha(&mut self.state, i, t, &mut self.rng);
            }
        } else {
            let mut pooled = vec![0u32; self.spec.topics_per_page()];
            for t in &tables {
                for (p, x) in pooled.iter_mut().zip(t) {
                    *p += x;
                }
            }
            sample_flat_alpha(&mut self.state, &self.spec, &pooled, &mut self.rng);
        }
        let outcome = mh_update_c_alpha(&mut self.state, &self.spec, &mut self.rng, step);
        stats.c_alpha_accepted = outcome.accepted();
        stats.non_finite += usize::from(outcome == MhOutcome::NonFinite);
        if self.spec.variant.is_hierarchical() {
            for k in 0..self.spec.topics_per_page() {
                let outcome = mh_update_base(&mut self.state, &self.spec, k, &mut self.rng, step);
                stats.base_accepted += usize::from(outcome.accepted());
                stats.non_finite += usize::from(outcome == MhOutcome::NonFinite);
            }
        }
    }

    /// Runs the remaining sweeps, calling `observer` after each one.
    pub fn run_with<F>(mut self, mut observer: F) -> Result<PosteriorSummary>
    where
        F: FnMut(&Chain<'_>, &SweepStats) -> Result<()>,
    {
        while !self.is_done() {
            let stats = self.sweep();
            observer(&self, &stats)?;
        }
        Ok(self.summary)
    }

    pub fn into_summary(self) -> PosteriorSummary {
        self.summary
    }
}

/// Runs a full chain and returns its posterior summary.
pub fn run_chain(spec: &ModelSpec, corpus: &NestedCorpus, config: &ChainConfig) -> Result<PosteriorSummary> {
    Chain::new(spec, corpus, config)?.run_with(|_, _| Ok(()))
}
