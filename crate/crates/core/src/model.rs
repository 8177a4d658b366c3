//! Model variants, hyperparameters and the sampler state.
//!
//! Topic indices are zero-based: `0..k` are the global topics and, for the
//! local-topic variants, index `k` is the owning site's local topic.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{NestedCorpus, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// LDA with a single asymmetric prior.
    Lda,
    /// LDA plus one local topic per site.
    #[value(name = "lt")]
    #[serde(rename = "lt")]
    LtLda,
    /// Hierarchical asymmetric prior: per-site topic distributions.
    #[value(name = "ha")]
    #[serde(rename = "ha")]
    HaLda,
    /// Hierarchical asymmetric prior plus local topics.
    #[value(name = "halt")]
    #[serde(rename = "halt")]
    HaltLda,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Lda, Variant::LtLda, Variant::HaLda, Variant::HaltLda];

    pub fn has_local_topics(self) -> bool {
        matches!(self, Variant::LtLda | Variant::HaltLda)
    }

    pub fn is_hierarchical(self) -> bool {
        matches!(self, Variant::HaLda | Variant::HaltLda)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lda => "lda",
            Variant::LtLda => "lt",
            Variant::HaLda => "ha",
            Variant::HaltLda => "halt",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "lda" => Ok(Variant::Lda),
            "lt" | "lt-lda" => Ok(Variant::LtLda),
            "ha" | "ha-lda" => Ok(Variant::HaLda),
            "halt" | "halt-lda" => Ok(Variant::HaltLda),
            other => Err(Error::config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Number of global topics.
    pub k: usize,
    /// Gamma(shape, rate) prior on the page concentration c_alpha.
    pub a_alpha: f64,
    pub b_alpha: f64,
    /// Per-word Dirichlet pseudo-count for global topics.
    pub beta_scale: f64,
    /// Per-word Dirichlet pseudo-count for local topics.
    pub gamma_scale: f64,
    /// Gamma(shape, rate) prior on each base parameter c0 alpha0_k.
    pub base_shape: f64,
    pub base_rate: f64,
    /// Symmetric Dirichlet mass on the shared alpha of the flat variants;
    /// `None` means 1 / (topics per page).
    pub alpha_dirichlet_mass: Option<f64>,
}

impl ModelSpec {
    pub fn new(variant: Variant, k: usize) -> Self {
        Self {
            variant,
            k,
            a_alpha: 1.0,
            b_alpha: 1.0,
            beta_scale: 0.05,
            gamma_scale: 0.05,
            base_shape: 1.0,
            base_rate: 1.0,
            alpha_dirichlet_mass: None,
        }
    }

    /// Local topics per site: 1 for the local-topic variants, else 0.
    pub fn local_topics(&self) -> usize {
        usize::from(self.variant.has_local_topics())
    }

    /// Dimension of every page-topic distribution, K + L_i.
    pub fn topics_per_page(&self) -> usize {
        self.k + self.local_topics()
    }

    pub fn flat_alpha_mass(&self) -> f64 {
        self.alpha_dirichlet_mass
            .unwrap_or(1.0 / self.topics_per_page() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("K must be at least 1"));
        }
        let positive = [
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
            ("beta_scale", self.beta_scale),
            ("gamma_scale", self.gamma_scale),
            ("base_shape", self.base_shape),
            ("base_rate", self.base_rate),
            ("alpha_dirichlet_mass", self.flat_alpha_mass()),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }
}

/// Page-topic prior parameters: one shared alpha, or one alpha per site with
/// the base parameters c0 alpha0 above them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TopicPrior {
    Flat { alpha: Vec<f64> },
    Hierarchical { alpha_site: Vec<Vec<f64>>, base: Vec<f64> },
}

impl TopicPrior {
    pub fn alpha_for_site(&self, site: usize) -> &[f64] {
        match self {
            TopicPrior::Flat { alpha } => alpha,
            TopicPrior::Hierarchical { alpha_site, .. } => &alpha_site[site],
        }
    }

    /// Base parameters c0 alpha0, empty for the flat variants.
    pub fn base(&self) -> &[f64] {
        match self {
            TopicPrior::Flat { .. } => &[],
            TopicPrior::Hierarchical { base, .. } => base,
        }
    }
}

/// Sufficient statistics of the topic assignments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTables {
    pub k: usize,
    pub v: usize,
    /// n[k * v + w]: word w in global topic k.
    pub n: Vec<u32>,
    pub n_sum: Vec<u32>,
    /// p[i * v + w]: word w in site i's local topic. Empty without local topics.
    pub p: Vec<u32>,
    pub p_sum: Vec<u32>,
    /// m[i][j][t]: tokens of page (i, j) assigned to topic t.
    pub m: Vec<Vec<Vec<u32>>>,
}

impl CountTables {
    pub fn zeros(spec: &ModelSpec, corpus: &NestedCorpus) -> Self {
        let (k, v, sites) = (spec.k, corpus.vocab_size(), corpus.num_sites());
        let local = spec.variant.has_local_topics();
        let t = spec.topics_per_page();
        Self {
            k,
            v,
            n: vec![0; k * v],
            n_sum: vec![0; k],
            p: if local { vec![0; sites * v] } else { Vec::new() },
            p_sum: if local { vec![0; sites] } else { Vec::new() },
            m: corpus
                .sites
                .iter()
                .map(|s| vec![vec![0; t]; s.pages.len()])
                .collect(),
        }
    }

    #[inline]
    pub fn add(&mut self, site: usize, page: usize, word: u32, topic: usize) {
        let w = word as usize;
        if topic < self.k {
            self.n[topic * self.v + w] += 1;
            self.n_sum[topic] += 1;
        } else {
            self.p[site * self.v + w] += 1;
            self.p_sum[site] += 1;
        }
        self.m[site][page][topic] += 1;
    }

    #[inline]
    pub fn remove(&mut self, site: usize, page: usize, word: u32, topic: usize) {
        let w = word as usize;
        if topic < self.k {
            self.n[topic * self.v + w] -= 1;
            self.n_sum[topic] -= 1;
        } else {
            self.p[site * self.v + w] -= 1;
            self.p_sum[site] -= 1;
        }
        self.m[site][page][topic] -= 1;
    }

    pub fn total(&self) -> u64 {
        self.n_sum.iter().chain(&self.p_sum).map(|&c| c as u64).sum()
    }
}

/// Tallies the count tables from scratch.
pub fn recount(corpus: &NestedCorpus, z: &[Vec<Vec<u32>>], spec: &ModelSpec) -> Result<CountTables> {
    let mismatch = || Error::Dimension("assignments do not mirror the corpus".into());
    if z.len() != corpus.num_sites() {
        return Err(mismatch());
    }
    let t = spec.topics_per_page();
    let mut counts = CountTables::zeros(spec, corpus);
    for (i, (site, zs)) in corpus.sites.iter().zip(z).enumerate() {
        if zs.len() != site.pages.len() {
            return Err(mismatch());
        }
        for (j, (page, zp)) in site.pages.iter().zip(zs).enumerate() {
            if zp.len() != page.tokens.len() {
                return Err(mismatch());
            }
            for (&w, &topic) in page.tokens.iter().zip(zp) {
                if topic as usize >= t {
                    return Err(Error::TopicOutOfRange {
                        topic: topic as usize,
                        topics: t,
                    });
                }
                if w as usize >= counts.v {
                    return Err(Error::TokenOutOfRange {
                        index: w as usize,
                        vocab_size: counts.v,
                    });
                }
                counts.add(i, j, w, topic as usize);
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// Topic of every token, mirroring the corpus layout.
    pub z: Vec<Vec<Vec<u32>>>,
    pub counts: CountTables,
    pub c_alpha: f64,
    pub prior: TopicPrior,
}

impl ModelState {
    /// Uniform random topic assignments with every hyperparameter at its
    /// prior mean.
    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec, corpus: &NestedCorpus, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        corpus.validate()?;
        let t = spec.topics_per_page();
        let z: Vec<Vec<Vec<u32>>> = corpus
            .sites
            .iter()
            .map(|s| {
                s.pages
                    .iter()
                    .map(|p| p.tokens.iter().map(|_| rng.random_range(0..t) as u32).collect())
                    .collect()
            })
            .collect();
        let counts = recount(corpus, &z, spec)?;
        let uniform = vec![1.0 / t as f64; t];
        let prior = if spec.variant.is_hierarchical() {
            TopicPrior::Hierarchical {
                alpha_site: vec![uniform; corpus.num_sites()],
                base: vec![spec.base_shape / spec.base_rate; t],
            }
        } else {
            TopicPrior::Flat { alpha: uniform }
        };
        Ok(Self {
            z,
            counts,
            c_alpha: spec.a_alpha / spec.b_alpha,
            prior,
        })
    }

    pub fn alpha_for_site(&self, site: usize) -> &[f64] {
        self.prior.alpha_for_site(site)
    }
}

/// Conditional posterior means at one iteration. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMeans {
    pub k: usize,
    pub v: usize,
    pub topics_per_page: usize,
    /// K x V.
    pub phi: Vec<f64>,
    /// M x V, empty without local topics.
    pub psi: Vec<f64>,
    /// One row per page in corpus order, each of length `topics_per_page`.
    pub theta: Vec<f64>,
}

impl ConditionalMeans {
    pub fn phi_row(&self, k: usize) -> &[f64] {
        &self.phi[k * self.v..(k + 1) * self.v]
    }

    pub fn psi_row(&self, site: usize) -> &[f64] {
        &self.psi[site * self.v..(site + 1) * self.v]
    }

    pub fn theta_row(&self, page: usize) -> &[f64] {
        let t = self.topics_per_page;
        &self.theta[page * t..(page + 1) * t]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteLayout {
    pub id: String,
    pub pages: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Log-scale step of the multiplicative random-walk proposals.
    pub step: f64,
    /// Keep per-iteration word and page distributions, not just their sums.
    pub keep_traces: bool,
}

impl ChainConfig {
    pub fn new(iters: usize, burnin: usize, seed: u64) -> Self {
        Self {
            iters,
            burnin,
            thin: 1,
            seed,
            step: 0.3,
            keep_traces: true,
        }
    }

    /// 2000 sweeps with 1500 burn-in, the model-comparison run length.
    pub fn comparison(seed: u64) -> Self {
        Self::new(2000, 1500, seed)
    }

    /// 2500 sweeps with 1500 burn-in, the final-analysis run length.
    pub fn final_analysis(seed: u64) -> Self {
        Self::new(2500, 1500, seed)
    }

    pub fn saved_iterations(&self) -> usize {
        (self.iters - self.burnin) / self.thin
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters <= self.burnin {
            return Err(Error::config(format!(
                "iters ({}) must exceed burnin ({})",
                self.iters, self.burnin
            )));
        }
        if self.thin == 0 {
            return Err(Error::config("thin must be at least 1"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config("MH step must be positive"));
        }
        Ok(())
    }

    /// Whether sweep number `iteration` (1-based) is saved.
    pub fn is_saved(&self, iteration: usize) -> bool {
        iteration > self.burnin && (iteration - self.burnin).is_multiple_of(self.thin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarDraw {
    pub iteration: usize,
    pub c_alpha: f64,
    /// One row per site for the hierarchical variants, a single row otherwise.
    pub alpha: Vec<Vec<f64>>,
    pub base: Vec<f64>,
}

pub const SUMMARY_VERSION: u32 = 1;

/// Per-iteration output of a chain plus running sums for the averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub version: u32,
    pub spec: ModelSpec,
    pub chain: ChainConfig,
    pub vocabulary: Vocabulary,
    pub sites: Vec<SiteLayout>,
    pub saved: usize,
    pub scalars: Vec<ScalarDraw>,
    /// Conditional means of every saved iteration when traces are kept.
    pub draws: Vec<ConditionalMeans>,
    phi_sum: Vec<f64>,
    psi_sum: Vec<f64>,
    theta_sum: Vec<f64>,
}

impl PosteriorSummary {
    pub fn new(spec: &ModelSpec, chain: &ChainConfig, corpus: &NestedCorpus) -> Self {
        let (k, v, t) = (spec.k, corpus.vocab_size(), spec.topics_per_page());
        let local = spec.variant.has_local_topics();
        Self {
            version: SUMMARY_VERSION,
            spec: spec.clone(),
            chain: *chain,
            vocabulary: corpus.vocab.clone(),
            sites: corpus
                .sites
                .iter()
                .map(|s| SiteLayout {
                    id: s.id.clone(),
                    pages: s.pages.iter().map(|p| p.id.clone()).collect(),
                })
                .collect(),
            saved: 0,
            scalars: Vec::new(),
            draws: Vec::new(),
            phi_sum: vec![0.0; k * v],
            psi_sum: if local { vec![0.0; corpus.num_sites() * v] } else { Vec::new() },
            theta_sum: vec![0.0; corpus.num_pages() * t],
        }
    }

    pub fn record(&mut self, iteration: usize, state: &ModelState, means: ConditionalMeans) {
        for (s, x) in self.phi_sum.iter_mut().zip(&means.phi) {
            *s += x;
        }
        for (s, x) in self.psi_sum.iter_mut().zip(&means.psi) {
            *s += x;
        }
        for (s, x) in self.theta_sum.iter_mut().zip(&means.theta) {
            *s += x;
        }
        let alpha = match &state.prior {
            TopicPrior::Flat { alpha } => vec![alpha.clone()],
            TopicPrior::Hierarchical { alpha_site, .. } => alpha_site.clone(),
        };
        self.scalars.push(ScalarDraw {
            iteration,
            c_alpha: state.c_alpha,
            alpha,
            base: state.prior.base().to_vec(),
        });
        if self.chain.keep_traces {
            self.draws.push(means);
        }
        self.saved += 1;
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn v(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn topics_per_page(&self) -> usize {
        self.spec.topics_per_page()
    }

    pub fn num_pages(&self) -> usize {
        self.sites.iter().map(|s| s.pages.len()).sum()
    }

    /// Global page indices of every site.
    pub fn site_pages(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.sites
            .iter()
            .map(|s| {
                let r = start..start + s.pages.len();
                start = r.end;
                r
            })
            .collect()
    }

    fn mean_of(&self, sum: &[f64]) -> Vec<f64> {
        let n = self.saved.max(1) as f64;
        sum.iter().map(|s| s / n).collect()
    }

    /// Average of the saved conditional means.
    pub fn mean_means(&self) -> ConditionalMeans {
        ConditionalMeans {
            k: self.k(),
            v: self.v(),
            topics_per_page: self.topics_per_page(),
            phi: self.mean_of(&self.phi_sum),
            psi: self.mean_of(&self.psi_sum),
            theta: self.mean_of(&self.theta_sum),
        }
    }

    pub fn mean_c_alpha(&self) -> f64 {
        self.scalars.iter().map(|s| s.c_alpha).sum::<f64>() / self.scalars.len().max(1) as f64
    }

    /// Per-site alpha averaged over saved iterations. Flat variants repeat the
    /// shared alpha for every site.
    pub fn mean_alpha(&self) -> Vec<Vec<f64>> {
        let t = self.topics_per_page();
        let rows = if self.spec.variant.is_hierarchical() { self.sites.len() } else { 1 };
        let mut acc = vec![vec![0.0; t]; rows];
        for draw in &self.scalars {
            for (a, row) in acc.iter_mut().zip(&draw.alpha) {
                for (x, y) in a.iter_mut().zip(row) {
                    *x += y;
                }
            }
        }
        for row in &mut acc {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
        }
        if rows == 1 {
            vec![acc[0].clone(); self.sites.len()]
        } else {
            acc
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        if s.version != SUMMARY_VERSION {
            return Err(Error::config(format!("unsupported summary version {}", s.version)));
        }
        Ok(s)
    }
}
