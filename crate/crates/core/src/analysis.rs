//! Post-fit analytics over posterior summaries: top words, prevalence,
//! coverage, local-topic matching and credible intervals.
//!
//! Theta matrices are flat, one row of `t` topic weights per page in corpus
//! order. Topic indices are zero-based; the local topic sits at index K.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{NestedCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{ConditionalMeans, PosteriorSummary};

/// Word indices of the `n` largest entries, ties by ascending index.
pub fn top_word_indices(row: &[f64], n: usize) -> Result<Vec<usize>> {
    if n > row.len() {
        return Err(Error::config(format!("asked for {n} words from a vocabulary of {}", row.len())));
    }
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(n);
    Ok(idx)
}

pub fn top_words(row: &[f64], vocab: &Vocabulary, n: usize) -> Result<Vec<String>> {
    if row.len() != vocab.len() {
        return Err(Error::Dimension(format!("row has {} entries, vocabulary {}", row.len(), vocab.len())));
    }
    Ok(top_word_indices(row, n)?
        .into_iter()
        .map(|v| vocab.word(v as u32).to_owned())
        .collect())
}

/// Rank of every word, 1 for the most probable.
pub fn ranks(row: &[f64]) -> Vec<usize> {
    let order = top_word_indices(row, row.len()).expect("n equals length");
    let mut r = vec![0; row.len()];
    for (pos, v) in order.into_iter().enumerate() {
        r[v] = pos + 1;
    }
    r
}

fn column_mean(theta: &[f64], t: usize, pages: Range<usize>, k: usize) -> f64 {
    let n = pages.len();
    if n == 0 {
        return 0.0;
    }
    pages.map(|j| theta[j * t + k]).sum::<f64>() / n as f64
}

/// Unweighted mean of topic `k` over every page of every site.
pub fn topic_prevalence(theta: &[f64], t: usize, k: usize) -> f64 {
    column_mean(theta, t, 0..theta.len() / t, k)
}

pub fn site_average_theta(theta: &[f64], t: usize, pages: Range<usize>, k: usize) -> f64 {
    column_mean(theta, t, pages, k)
}

/// Largest page-level weight of topic `k` within the site.
pub fn topic_coverage(theta: &[f64], t: usize, pages: Range<usize>, k: usize) -> f64 {
    pages.map(|j| theta[j * t + k]).fold(0.0, f64::max)
}

/// Coverage after removing each page's local share. Pages that are entirely
/// local are skipped; `None` when no page remains.
pub fn adjusted_topic_coverage(
    theta: &[f64],
    t: usize,
    pages: Range<usize>,
    k: usize,
    local: usize,
) -> Option<f64> {
    let mut best: Option<f64> = None;
    for j in pages {
        let row = &theta[j * t..(j + 1) * t];
        let rest = 1.0 - row[local];
        if rest <= 0.0 {
            log::warn!("page {j} is entirely local; excluded from adjusted coverage");
            continue;
        }
        let r = row[k] / rest;
        best = Some(best.map_or(r, |b: f64| b.max(r)));
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MatchMethod {
    /// Sum of absolute rank differences.
    Rank,
    /// Sum of squared probability differences.
    Prob,
}

impl std::fmt::Display for MatchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MatchMethod::Rank => "rank",
            MatchMethod::Prob => "prob",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicMatch {
    pub topic: usize,
    pub distance: f64,
}

fn argmin(distances: impl Iterator<Item = f64>) -> TopicMatch {
    let mut best = TopicMatch { topic: 0, distance: f64::INFINITY };
    for (k, d) in distances.enumerate() {
        if d < best.distance {
            best = TopicMatch { topic: k, distance: d };
        }
    }
    best
}

/// Words the distance is summed over: all, or the `top_m` most probable under psi.
fn support(psi: &[f64], top_m: Option<usize>) -> Result<Vec<usize>> {
    match top_m {
        Some(m) => {
            // index order keeps the sum identical to the full one when m = V
            let mut w = top_word_indices(psi, m)?;
            w.sort_unstable();
            Ok(w)
        }
        None => Ok((0..psi.len()).collect()),
    }
}

fn check_rows(psi: &[f64], phi: &[f64]) -> Result<usize> {
    let v = psi.len();
    if v == 0 || phi.is_empty() || !phi.len().is_multiple_of(v) {
        return Err(Error::Dimension(format!(
            "candidate matrix of {} entries does not split into rows of {v}",
            phi.len()
        )));
    }
    Ok(phi.len() / v)
}

/// Global topic whose word ranking is closest to `psi`. `phi` is K x V.
pub fn match_topic_rank(psi: &[f64], phi: &[f64], top_m: Option<usize>) -> Result<TopicMatch> {
    let k = check_rows(psi, phi)?;
    let words = support(psi, top_m)?;
    let target = ranks(psi);
    let v = psi.len();
    Ok(argmin((0..k).map(|k| {
        let r = ranks(&phi[k * v..(k + 1) * v]);
        words.iter().map(|&w| target[w].abs_diff(r[w]) as f64).sum()
    })))
}

/// Global topic closest to `psi` in squared probability distance.
pub fn match_topic_prob(psi: &[f64], phi: &[f64], top_m: Option<usize>) -> Result<TopicMatch> {
    let k = check_rows(psi, phi)?;
    let words = support(psi, top_m)?;
    let v = psi.len();
    Ok(argmin((0..k).map(|k| {
        let row = &phi[k * v..(k + 1) * v];
        words.iter().map(|&w| (psi[w] - row[w]).powi(2)).sum()
    })))
}

pub fn match_topic(method: MatchMethod, psi: &[f64], phi: &[f64], top_m: Option<usize>) -> Result<TopicMatch> {
    match method {
        MatchMethod::Rank => match_topic_rank(psi, phi, top_m),
        MatchMethod::Prob => match_topic_prob(psi, phi, top_m),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub median: f64,
    pub hi: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn credible_interval(samples: &[f64], level: f64) -> Result<Interval> {
    if samples.len() < 2 {
        return Err(Error::config("a credible interval needs at least two samples"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!("interval level {level} is outside (0, 1)")));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(Interval {
        lo: quantile(&s, tail),
        median: quantile(&s, 0.5),
        hi: quantile(&s, 1.0 - tail),
    })
}

/// Count of word `v` in the site over its mean count in the other sites. The
/// denominator is floored at one occurrence.
pub fn word_count_ratio(corpus: &NestedCorpus, site: usize, v: u32) -> f64 {
    let counts: Vec<usize> = corpus
        .sites
        .iter()
        .map(|s| s.pages.iter().map(|p| p.tokens.iter().filter(|&&w| w == v).count()).sum())
        .collect();
    let others = counts.len() - 1;
    let mean_other = if others == 0 {
        0.0
    } else {
        (counts.iter().sum::<usize>() - counts[site]) as f64 / others as f64
    };
    counts[site] as f64 / mean_other.max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordInterval {
    pub topic: usize,
    pub rank: usize,
    pub word: String,
    pub interval: Interval,
}

fn require_traces(summary: &PosteriorSummary) -> Result<()> {
    if summary.draws.len() < 2 {
        return Err(Error::config(
            "per-iteration traces with at least two saved iterations are required; refit without --no-traces",
        ));
    }
    Ok(())
}

/// Per-iteration spread of the top words of each requested global topic.
pub fn interval_report(summary: &PosteriorSummary, topics: &[usize], n: usize) -> Result<Vec<WordInterval>> {
    require_traces(summary)?;
    let mean = summary.mean_means();
    let mut out = Vec::new();
    for &k in topics {
        if k >= summary.k() {
            return Err(Error::TopicOutOfRange { topic: k, topics: summary.k() });
        }
        for (rank, w) in top_word_indices(mean.phi_row(k), n)?.into_iter().enumerate() {
            let trace: Vec<f64> = summary.draws.iter().map(|d| d.phi_row(k)[w]).collect();
            out.push(WordInterval {
                topic: k,
                rank: rank + 1,
                word: summary.vocabulary.word(w as u32).to_owned(),
                interval: credible_interval(&trace, 0.95)?,
            });
        }
    }
    Ok(out)
}

/// Pairs of topics where some top word of the first has an interval that
/// reaches the second topic's median for that word. Such overlap is the
/// usual symptom of label switching.
pub fn switching_suspects(summary: &PosteriorSummary, topics: &[usize], n: usize) -> Result<Vec<(usize, usize)>> {
    let report = interval_report(summary, topics, n)?;
    let mut pairs = Vec::new();
    for &a in topics {
        for &b in topics {
            if a == b {
                continue;
            }
            let hit = report.iter().filter(|r| r.topic == a).any(|r| {
                let w = summary.vocabulary.get(&r.word).expect("word from vocabulary") as usize;
                let trace: Vec<f64> = summary.draws.iter().map(|d| d.phi_row(b)[w]).collect();
                let other = credible_interval(&trace, 0.95).map(|i| i.median).unwrap_or(f64::NAN);
                r.interval.lo <= other && other <= r.interval.hi
            });
            if hit {
                pairs.push((a, b));
            }
        }
    }
    Ok(pairs)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// One row per global topic, then one per site for its local topic.
/// Topics are numbered from 1 in the output; the local topic is K+1. For
/// local rows the prevalence column is the site's average local weight.
pub fn topics_csv(summary: &PosteriorSummary, n: usize) -> Result<String> {
    let mean = summary.mean_means();
    let t = summary.topics_per_page();
    let mut out = String::from("topic,kind,site,prevalence,top_words\n");
    for k in 0..summary.k() {
        let words = top_words(mean.phi_row(k), &summary.vocabulary, n)?;
        let _ = writeln!(
            out,
            "{},global,,{},{}",
            k + 1,
            topic_prevalence(&mean.theta, t, k),
            csv_field(&words.join(" "))
        );
    }
    if summary.spec.variant.has_local_topics() {
        let local = summary.k();
        for (i, pages) in summary.site_pages().into_iter().enumerate() {
            let words = top_words(mean.psi_row(i), &summary.vocabulary, n)?;
            let _ = writeln!(
                out,
                "{},local,{},{},{}",
                local + 1,
                csv_field(&summary.sites[i].id),
                site_average_theta(&mean.theta, t, pages, local),
                csv_field(&words.join(" "))
            );
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteMatch {
    pub site: String,
    pub method: MatchMethod,
    pub top_m: Option<usize>,
    /// One-based index into the candidate model's global topics.
    pub topic: usize,
    pub distance: f64,
}

/// Matches every local topic of `local` against the global topics of
/// `candidates`. Several sites may match the same topic.
pub fn match_local_topics(
    local: &PosteriorSummary,
    candidates: &PosteriorSummary,
    method: MatchMethod,
    top_m: Option<usize>,
) -> Result<Vec<SiteMatch>> {
    if !local.spec.variant.has_local_topics() {
        return Err(Error::config(format!("{} has no local topics to match", local.spec.variant)));
    }
    if local.vocabulary != candidates.vocabulary {
        return Err(Error::Vocabulary("the two summaries were fitted on different vocabularies".into()));
    }
    let a = local.mean_means();
    let b = candidates.mean_means();
    let mut out = Vec::with_capacity(local.sites.len());
    for (i, site) in local.sites.iter().enumerate() {
        let m = match_topic(method, a.psi_row(i), &b.phi, top_m)?;
        out.push(SiteMatch {
            site: site.id.clone(),
            method,
            top_m,
            topic: m.topic + 1,
            distance: m.distance,
        });
    }
    let mut seen = std::collections::HashMap::new();
    for m in &out {
        *seen.entry(m.topic).or_insert(0usize) += 1;
    }
    for (topic, n) in seen.into_iter().filter(|&(_, n)| n > 1) {
        log::info!("{n} local topics matched global topic {topic}");
    }
    Ok(out)
}

pub fn matching_csv(matches: &[SiteMatch]) -> String {
    let mut out = String::from("site,method,top_m,topic,distance\n");
    for m in matches {
        let top = m.top_m.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", csv_field(&m.site), m.method, top, m.topic, m.distance);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub site: String,
    /// One-based topic index.
    pub topic: usize,
    pub coverage: f64,
    pub atc: Option<Interval>,
}

fn atc_of(means: &ConditionalMeans, pages: Range<usize>, k: usize, local: Option<usize>) -> Option<f64> {
    let t = means.topics_per_page;
    match local {
        Some(l) => adjusted_topic_coverage(&means.theta, t, pages, k, l),
        None => Some(topic_coverage(&means.theta, t, pages, k)),
    }
}

/// Coverage of the averaged fit and the per-iteration spread of the adjusted
/// coverage for each site and requested topic.
pub fn coverage_report(summary: &PosteriorSummary, topics: &[usize], level: f64) -> Result<Vec<CoverageRow>> {
    require_traces(summary)?;
    let mean = summary.mean_means();
    let t = summary.topics_per_page();
    let local = summary.spec.variant.has_local_topics().then_some(summary.k());
    let mut out = Vec::new();
    for (i, pages) in summary.site_pages().into_iter().enumerate() {
        for &k in topics {
            if k >= summary.k() {
                return Err(Error::TopicOutOfRange { topic: k, topics: summary.k() });
            }
            let trace: Vec<f64> = summary
                .draws
                .iter()
                .filter_map(|d| atc_of(d, pages.clone(), k, local))
                .collect();
            out.push(CoverageRow {
                site: summary.sites[i].id.clone(),
                topic: k + 1,
                coverage: topic_coverage(&mean.theta, t, pages.clone(), k),
                atc: credible_interval(&trace, level).ok(),
            });
        }
    }
    Ok(out)
}

pub fn coverage_csv(rows: &[CoverageRow]) -> String {
    let mut out = String::from("site,topic,coverage,atc_lo,atc_median,atc_hi\n");
    for r in rows {
        let (lo, med, hi) = match r.atc {
            Some(i) => (i.lo.to_string(), i.median.to_string(), i.hi.to_string()),
            None => Default::default(),
        };
        let _ = writeln!(out, "{},{},{},{lo},{med},{hi}", csv_field(&r.site), r.topic, r.coverage);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceBar {
    pub topic: usize,
    pub kind: String,
    pub prevalence: f64,
    pub top_words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteLocalWeights {
    pub site: String,
    pub page_weights: Vec<f64>,
}

/// Plot-ready data: prevalence bars, per-site boxplots of page-level local
/// weight, coverage error bars and top-word intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub variant: String,
    pub k: usize,
    pub prevalence: Vec<PrevalenceBar>,
    pub local_weights: Vec<SiteLocalWeights>,
    pub coverage: Vec<CoverageRow>,
    pub word_intervals: Vec<WordInterval>,
}

pub fn plot_data(summary: &PosteriorSummary, n: usize, topics: &[usize]) -> Result<PlotData> {
    let mean = summary.mean_means();
    let t = summary.topics_per_page();
    let mut prevalence = Vec::with_capacity(t);
    for k in 0..summary.k() {
        prevalence.push(PrevalenceBar {
            topic: k + 1,
            kind: "global".into(),
            prevalence: topic_prevalence(&mean.theta, t, k),
            top_words: top_words(mean.phi_row(k), &summary.vocabulary, n)?,
        });
    }
    let mut local_weights = Vec::new();
    if summary.spec.variant.has_local_topics() {
        let local = summary.k();
        prevalence.push(PrevalenceBar {
            topic: local + 1,
            kind: "local".into(),
            prevalence: topic_prevalence(&mean.theta, t, local),
            top_words: Vec::new(),
        });
        for (i, pages) in summary.site_pages().into_iter().enumerate() {
            local_weights.push(SiteLocalWeights {
                site: summary.sites[i].id.clone(),
                page_weights: pages.map(|j| mean.theta_row(j)[local]).collect(),
            });
        }
    }
    let traced = summary.draws.len() >= 2;
    Ok(PlotData {
        variant: summary.spec.variant.to_string(),
        k: summary.k(),
        prevalence,
        local_weights,
        coverage: if traced { coverage_report(summary, topics, 0.95)? } else { Vec::new() },
        word_intervals: if traced { interval_report(summary, topics, n)? } else { Vec::new() },
    })
}
