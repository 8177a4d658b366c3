//! Synthetic nested corpora with zero, one or two local topics per site, and
//! recovery scoring of fitted local-topic weights against the truth.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{NestedCorpus, Page, Site, Vocabulary};
use crate::error::{Error, Result};
use crate::model::PosteriorSummary;
use crate::random;

/// Normal draw restricted to `[lo, hi]` by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    assert!(lo < hi && sd >= 0.0, "invalid truncated normal ({mean}, {sd}, {lo}, {hi})");
    if sd == 0.0 {
        return mean.clamp(lo, hi);
    }
    let normal = Normal::new(mean, sd).expect("finite parameters");
    for _ in 0..1_000_000 {
        let x = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    panic!("truncated normal ({mean}, {sd}) has negligible mass in [{lo}, {hi}]");
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 10 topics, 200 words, 5 sites of 20 pages with 50 tokens each.
    Desk,
    /// 50 topics, 1000 words, 10 sites of 50 pages with 100 tokens each.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub k: usize,
    pub v: usize,
    pub sites: usize,
    pub pages: usize,
    pub words: usize,
}

impl Scale {
    pub fn dimensions(self) -> Dimensions {
        match self {
            Scale::Desk => Dimensions { k: 10, v: 200, sites: 5, pages: 20, words: 50 },
            Scale::Paper => Dimensions { k: 50, v: 1000, sites: 10, pages: 50, words: 100 },
        }
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

pub const GLOBAL_CONCENTRATION: f64 = 0.04;
pub const WORD_CONCENTRATION: f64 = 0.01;
pub const PAGE_SD: f64 = 0.05;

/// Number of local topics in each site. Scenarios that split the sites
/// give the first half (rounded down) the smaller count.
pub fn local_layout(scenario: u8, sites: usize) -> Result<Vec<usize>> {
    let half = sites / 2;
    let split = |a: usize, b: usize| (0..sites).map(|i| if i < half { a } else { b }).collect();
    Ok(match scenario {
        1 => vec![0; sites],
        2 => split(1, 0),
        3 => vec![1; sites],
        4 => split(1, 2),
        5 => vec![2; sites],
        _ => return Err(Error::config(format!("scenario must be 1 to 5, got {scenario}"))),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub scenario: u8,
    pub dims: Dimensions,
    pub seed: u64,
    pub local_topics: Vec<usize>,
    /// Unstandardized site-level local means, one per local topic.
    pub mu: Vec<Vec<f64>>,
    /// Per page in corpus order: K global weights then the site's local weights.
    pub theta: Vec<Vec<f64>>,
    /// K x V.
    pub phi: Vec<Vec<f64>>,
    /// Per site, one word distribution per local topic.
    pub psi: Vec<Vec<Vec<f64>>>,
}

impl SyntheticTruth {
    /// Site average of the summed local weight of each page.
    pub fn site_local_average(&self, site: usize) -> f64 {
        let pages = self.dims.pages;
        let k = self.dims.k;
        self.theta[site * pages..(site + 1) * pages]
            .iter()
            .map(|row| row[k..].iter().sum::<f64>())
            .sum::<f64>()
            / pages as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn page_theta<R: Rng + ?Sized>(k: usize, mu: &[f64], rng: &mut R) -> Vec<f64> {
    let mut row = random::dirichlet(&vec![GLOBAL_CONCENTRATION; k], rng);
    for &m in mu {
        let w = Normal::new(m, PAGE_SD).expect("finite").sample(rng);
        row.push(w.max(0.0));
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= total);
    row
}

fn cumulative(row: &[f64]) -> Vec<f64> {
    row.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

fn draw(cum: &[f64], rng: &mut impl Rng) -> usize {
    let u = rng.random::<f64>() * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

pub fn generate_scenario(scenario: u8, scale: Scale, seed: u64) -> Result<(NestedCorpus, SyntheticTruth)> {
    generate_with(scenario, scale.dimensions(), seed)
}

pub fn generate_with(scenario: u8, dims: Dimensions, seed: u64) -> Result<(NestedCorpus, SyntheticTruth)> {
    let layout = local_layout(scenario, dims.sites)?;
    let Dimensions { k, v, sites, pages, words } = dims;
    let word_prior = vec![WORD_CONCENTRATION; v];

    let mut rng = random::stream(seed, "topics", 0);
    let phi: Vec<Vec<f64>> = (0..k).map(|_| random::dirichlet(&word_prior, &mut rng)).collect();
    let psi: Vec<Vec<Vec<f64>>> = layout
        .iter()
        .map(|&l| (0..l).map(|_| random::dirichlet(&word_prior, &mut rng)).collect())
        .collect();

    let mut rng = random::stream(seed, "weights", 0);
    let mu: Vec<Vec<f64>> = layout
        .iter()
        .map(|&l| match l {
            0 => Vec::new(),
            1 => vec![truncated_normal(0.25, PAGE_SD, 0.0, 1.0, &mut rng)],
            _ => vec![
                Normal::new(0.15, PAGE_SD).expect("finite").sample(&mut rng),
                Normal::new(0.1, PAGE_SD).expect("finite").sample(&mut rng),
            ],
        })
        .collect();
    let theta: Vec<Vec<f64>> = (0..sites)
        .flat_map(|i| (0..pages).map(|_| page_theta(k, &mu[i], &mut rng)).collect::<Vec<_>>())
        .collect();

    let mut rng = random::stream(seed, "tokens", 0);
    let phi_cum: Vec<Vec<f64>> = phi.iter().map(|r| cumulative(r)).collect();
    let mut out = Vec::with_capacity(sites);
    for i in 0..sites {
        let psi_cum: Vec<Vec<f64>> = psi[i].iter().map(|r| cumulative(r)).collect();
        let mut site_pages = Vec::with_capacity(pages);
        for j in 0..pages {
            let topic_cum = cumulative(&theta[i * pages + j]);
            let tokens = (0..words)
                .map(|_| {
                    let t = draw(&topic_cum, &mut rng);
                    let row = if t < k { &phi_cum[t] } else { &psi_cum[t - k] };
                    draw(row, &mut rng) as u32
                })
                .collect();
            site_pages.push(Page { id: format!("p{}", j + 1), tokens });
        }
        out.push(Site { id: format!("s{}", i + 1), pages: site_pages });
    }
    let vocab = Vocabulary::from((1..=v).map(|w| format!("w{w}")).collect::<Vec<_>>());
    let corpus = NestedCorpus { vocab, sites: out };
    corpus.validate()?;
    let truth = SyntheticTruth { scenario, dims, seed, local_topics: layout, mu, theta, phi, psi };
    Ok((corpus, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecovery {
    pub site: String,
    pub estimate: f64,
    pub truth: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub scenario: u8,
    pub sites: Vec<SiteRecovery>,
}

impl RecoveryReport {
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        let n = self.sites.iter().filter(|s| s.estimate < threshold).count();
        n as f64 / self.sites.len().max(1) as f64
    }

    pub fn fraction_within(&self, tolerance: f64) -> f64 {
        let n = self.sites.iter().filter(|s| s.error.abs() <= tolerance).count();
        n as f64 / self.sites.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("site,estimate,truth,error\n");
        for s in &self.sites {
            out.push_str(&format!("{},{},{},{}\n", s.site, s.estimate, s.truth, s.error));
        }
        out
    }
}

/// Compares each site's average estimated local weight with the truth.
pub fn recovery_score(summary: &PosteriorSummary, truth: &SyntheticTruth) -> Result<RecoveryReport> {
    if !summary.spec.variant.has_local_topics() {
        return Err(Error::config(format!("{} fits have no local topic to score", summary.spec.variant)));
    }
    let d = truth.dims;
    if summary.sites.len() != d.sites || summary.sites.iter().any(|s| s.pages.len() != d.pages) {
        return Err(Error::Dimension("fit and truth have different site or page counts".into()));
    }
    let mean = summary.mean_means();
    let local = summary.k();
    let t = summary.topics_per_page();
    let sites = summary
        .site_pages()
        .into_iter()
        .enumerate()
        .map(|(i, pages)| {
            let estimate = crate::analysis::site_average_theta(&mean.theta, t, pages, local);
            let truth = truth.site_local_average(i);
            SiteRecovery {
                site: summary.sites[i].id.clone(),
                estimate,
                truth,
                error: estimate - truth,
            }
        })
        .collect();
    Ok(RecoveryReport { scenario: truth.scenario, sites })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChainConfig, ConditionalMeans, ModelSpec, ModelState, Variant};

    #[test]
    fn truncated_normal_moments_and_support() {
        let mut rng = random::stream(1, "test", 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = truncated_normal(0.25, 0.05, 0.0, 1.0, &mut rng);
            assert!((0.0..=1.0).contains(&x));
            sum += x;
        }
        assert!((sum / n as f64 - 0.25).abs() < 0.001);
        assert_eq!(truncated_normal(0.4, 0.0, 0.0, 1.0, &mut rng), 0.4);
        let x = truncated_normal(0.4, 1e-9, 0.0, 1.0, &mut rng);
        assert!((x - 0.4).abs() < 1e-6);
        for _ in 0..1000 {
            let x = truncated_normal(0.0, 1.0, 0.5, 0.6, &mut rng);
            assert!((0.5..=0.6).contains(&x));
        }
    }

    #[test]
    fn layouts() {
        assert_eq!(local_layout(1, 4).unwrap(), vec![0; 4]);
        assert_eq!(local_layout(2, 10).unwrap(), [vec![1; 5], vec![0; 5]].concat());
        assert_eq!(local_layout(4, 10).unwrap(), [vec![1; 5], vec![2; 5]].concat());
        assert_eq!(local_layout(2, 5).unwrap(), vec![1, 1, 0, 0, 0]);
        assert_eq!(local_layout(5, 3).unwrap(), vec![2; 3]);
        assert!(local_layout(0, 3).is_err());
        assert!(local_layout(6, 3).is_err());
    }

    #[test]
    fn dimensions_and_simplices() {
        for scenario in 1..=5 {
            let (corpus, truth) = generate_scenario(scenario, Scale::Desk, 7).unwrap();
            let d = Scale::Desk.dimensions();
            assert_eq!(corpus.num_sites(), d.sites);
            assert_eq!(corpus.num_tokens(), d.sites * d.pages * d.words);
            assert!(corpus.sites.iter().all(|s| s.pages.len() == d.pages));
            assert_eq!(corpus.vocab_size(), d.v);
            for (i, site_rows) in truth.theta.chunks(d.pages).enumerate() {
                for row in site_rows {
                    assert_eq!(row.len(), d.k + truth.local_topics[i]);
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                    assert!(row.iter().all(|&x| x >= 0.0));
                }
            }
            for row in truth.phi.iter().chain(truth.psi.iter().flatten()) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            if scenario == 1 {
                assert!((0..d.sites).all(|i| truth.site_local_average(i) == 0.0));
            }
        }
    }

    #[test]
    fn paper_scale_token_count() {
        let (corpus, truth) = generate_scenario(3, Scale::Paper, 2).unwrap();
        assert_eq!(corpus.num_tokens(), 50_000);
        assert_eq!(corpus.num_sites(), 10);
        assert_eq!(truth.local_topics, vec![1; 10]);
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_scenario(4, Scale::Desk, 11).unwrap();
        let b = generate_scenario(4, Scale::Desk, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_scenario(4, Scale::Desk, 12).unwrap();
        assert_ne!(a.0, c.0);
        let json = a.1.to_json().unwrap();
        assert_eq!(SyntheticTruth::from_json(&json).unwrap(), a.1);
    }

    #[test]
    fn sparse_word_rows() {
        let mut rng = random::stream(3, "test", 0);
        let prior = vec![WORD_CONCENTRATION; 1000];
        let n = 2000;
        let (mut top, mut above) = (0.0, 0.0);
        for _ in 0..n {
            let row = random::dirichlet(&prior, &mut rng);
            top += row.iter().cloned().fold(0.0, f64::max);
            above += row.iter().filter(|&&x| x > 0.01).count() as f64;
        }
        let (top, above) = (top / n as f64, above / n as f64);
        assert!((top - 0.20).abs() < 0.05, "mean largest entry {top}");
        assert!((above - 20.0).abs() < 5.0, "mean entries above 0.01 {above}");
    }

    #[test]
    fn oracle_fit_scores_zero_error() {
        let (corpus, truth) = generate_scenario(3, Scale::Desk, 5).unwrap();
        let d = truth.dims;
        let spec = ModelSpec::new(Variant::HaltLda, d.k);
        let config = ChainConfig::new(2, 0, 1);
        let mut summary = PosteriorSummary::new(&spec, &config, &corpus);
        let state = ModelState::init(&spec, &corpus, &mut random::stream(1, "init", 0)).unwrap();
        let means = ConditionalMeans {
            k: d.k,
            v: d.v,
            topics_per_page: d.k + 1,
            phi: truth.phi.concat(),
            psi: truth.psi.iter().map(|p| p[0].clone()).collect::<Vec<_>>().concat(),
            theta: truth.theta.concat(),
        };
        summary.record(1, &state, means);
        let report = recovery_score(&summary, &truth).unwrap();
        assert_eq!(report.sites.len(), d.sites);
        assert!(report.sites.iter().all(|s| s.error.abs() < 1e-12));
        assert_eq!(report.fraction_within(1e-9), 1.0);
        assert!(report.to_csv().starts_with("site,estimate,truth,error\n"));

        let lda = PosteriorSummary::new(&ModelSpec::new(Variant::Lda, d.k), &config, &corpus);
        assert!(recovery_score(&lda, &truth).is_err());
    }
}
