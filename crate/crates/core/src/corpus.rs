//! Nested document collections: sites containing pages containing tokens.
//!
//! Token indices are zero-based in memory. The token-index file format writes
//! them one-based.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `word`, inserting it at the end if unseen.
    pub fn intern(&mut self, word: &str) -> u32 {
        if let Some(&v) = self.lookup.get(word) {
            return v;
        }
        let v = self.words.len() as u32;
        self.words.push(word.to_owned());
        self.lookup.insert(word.to_owned(), v);
        v
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.lookup.get(word).copied()
    }

    pub fn word(&self, v: u32) -> &str {
        &self.words[v as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let mut vocab = Vocabulary::new();
        for w in &words {
            vocab.intern(w);
        }
        vocab
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub id: String,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub pages: Vec<Page>,
}

impl Site {
    pub fn num_tokens(&self) -> usize {
        self.pages.iter().map(|p| p.tokens.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedCorpus {
    pub vocab: Vocabulary,
    pub sites: Vec<Site>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Jsonl,
    TokenIndex,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "token-index" => Ok(CorpusFormat::TokenIndex),
            other => Err(Error::config(format!("unknown corpus format {other:?}"))),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::TokenIndex => "token-index",
        })
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct JsonPage {
    site: String,
    page: String,
    tokens: Vec<String>,
}

/// Accumulates pages in file order, grouping them by site in order of first
/// appearance.
struct CorpusBuilder {
    sites: Vec<Site>,
    site_index: HashMap<String, usize>,
    seen: HashSet<(String, String)>,
}

impl CorpusBuilder {
    fn new() -> Self {
        Self {
            sites: Vec::new(),
            site_index: HashMap::new(),
            seen: HashSet::new(),
        }
    }

    fn push(&mut self, site: String, page: String, tokens: Vec<u32>) -> Result<()> {
        if !self.seen.insert((site.clone(), page.clone())) {
            return Err(Error::DuplicatePage { site, page });
        }
        let idx = *self.site_index.entry(site.clone()).or_insert_with(|| {
            self.sites.push(Site {
                id: site,
                pages: Vec::new(),
            });
            self.sites.len() - 1
        });
        self.sites[idx].pages.push(Page { id: page, tokens });
        Ok(())
    }
}

impl NestedCorpus {
    /// Builds a corpus from string tokens. The vocabulary is assigned in
    /// first-appearance order.
    pub fn from_pages<S, P, T, I>(pages: I) -> Result<Self>
    where
        S: Into<String>,
        P: Into<String>,
        T: AsRef<str>,
        I: IntoIterator<Item = (S, P, Vec<T>)>,
    {
        let mut vocab = Vocabulary::new();
        let mut builder = CorpusBuilder::new();
        for (site, page, tokens) in pages {
            let ids = tokens.iter().map(|t| vocab.intern(t.as_ref())).collect();
            builder.push(site.into(), page.into(), ids)?;
        }
        let corpus = NestedCorpus {
            vocab,
            sites: builder.sites,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Checks the structural invariants: at least one site, no empty sites or
    /// pages, unique ids and in-range token indices.
    pub fn validate(&self) -> Result<()> {
        if self.sites.is_empty() {
            return Err(Error::EmptyFile);
        }
        let v = self.vocab.len();
        let mut site_ids = HashSet::new();
        for site in &self.sites {
            if !site_ids.insert(site.id.as_str()) {
                return Err(Error::config(format!("duplicate site id {}", site.id)));
            }
            if site.pages.is_empty() {
                return Err(Error::config(format!("site {} has no pages", site.id)));
            }
            let mut page_ids = HashSet::new();
            for page in &site.pages {
                if !page_ids.insert(page.id.as_str()) {
                    return Err(Error::DuplicatePage {
                        site: site.id.clone(),
                        page: page.id.clone(),
                    });
                }
                if page.tokens.is_empty() {
                    return Err(Error::config(format!(
                        "page ({}, {}) has no tokens",
                        site.id, page.id
                    )));
                }
                if let Some(&w) = page.tokens.iter().find(|&&w| w as usize >= v) {
                    return Err(Error::TokenOutOfRange {
                        index: w as usize,
                        vocab_size: v,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn num_pages(&self) -> usize {
        self.sites.iter().map(|s| s.pages.len()).sum()
    }

    pub fn num_tokens(&self) -> usize {
        self.sites.iter().map(Site::num_tokens).sum()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn site_index(&self, id: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.id == id)
    }

    pub fn pages(&self) -> impl Iterator<Item = (usize, &Page)> {
        self.sites
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.pages.iter().map(move |p| (i, p)))
    }

    /// Corpus-wide frequency of every vocabulary entry.
    pub fn word_frequencies(&self) -> Vec<u64> {
        let mut freq = vec![0u64; self.vocab.len()];
        for (_, page) in self.pages() {
            for &w in &page.tokens {
                freq[w as usize] += 1;
            }
        }
        freq
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<NestedCorpus> {
    let path = path.as_ref();
    let text = read_file(path)?;
    match format {
        CorpusFormat::Jsonl => parse_jsonl(&text),
        CorpusFormat::TokenIndex => parse_token_index(&text),
    }
}

pub fn parse_jsonl(text: &str) -> Result<NestedCorpus> {
    if text.trim().is_empty() {
        return Err(Error::EmptyFile);
    }
    let mut vocab = Vocabulary::new();
    let mut builder = CorpusBuilder::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonPage = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.tokens.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "page has no tokens".into(),
            });
        }
        let ids = rec.tokens.iter().map(|t| vocab.intern(t)).collect();
        builder.push(rec.site, rec.page, ids)?;
    }
    Ok(NestedCorpus {
        vocab,
        sites: builder.sites,
    })
}

pub fn parse_token_index(text: &str) -> Result<NestedCorpus> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::EmptyFile)?;
    if header.trim().is_empty() {
        return Err(Error::EmptyFile);
    }
    let bad = |line: usize, message: &str| Error::Parse {
        line,
        message: message.to_owned(),
    };
    let mut head = header.split_whitespace();
    let v: usize = head
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(1, "header must be `V M`"))?;
    let m: usize = head
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(1, "header must be `V M`"))?;
    if head.next().is_some() {
        return Err(bad(1, "header must be `V M`"));
    }

    let mut vocab = Vocabulary::new();
    for _ in 0..v {
        let (n, word) = lines
            .next()
            .ok_or_else(|| bad(text.lines().count() + 1, "truncated vocabulary"))?;
        let word = word.trim();
        if word.is_empty() || word.contains(char::is_whitespace) {
            return Err(bad(n + 1, "vocabulary line must hold one token"));
        }
        if vocab.get(word).is_some() {
            return Err(bad(n + 1, "duplicate vocabulary entry"));
        }
        vocab.intern(word);
    }

    let mut builder = CorpusBuilder::new();
    for (n, line) in lines {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let site = fields.next().ok_or_else(|| bad(line_no, "missing site id"))?;
        let page = fields.next().ok_or_else(|| bad(line_no, "missing page id"))?;
        let count: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(line_no, "missing token count"))?;
        let tokens = fields
            .map(|f| match f.parse::<usize>() {
                Ok(w) if (1..=v).contains(&w) => Ok((w - 1) as u32),
                Ok(w) => Err(bad(
                    line_no,
                    &format!("token index {w} outside 1..={v}"),
                )),
                Err(_) => Err(bad(line_no, &format!("bad token index {f:?}"))),
            })
            .collect::<Result<Vec<u32>>>()?;
        if tokens.len() != count {
            return Err(bad(
                line_no,
                &format!("declared {count} tokens, found {}", tokens.len()),
            ));
        }
        if tokens.is_empty() {
            return Err(bad(line_no, "page has no tokens"));
        }
        builder.push(site.to_owned(), page.to_owned(), tokens)?;
    }
    if builder.sites.is_empty() {
        return Err(Error::EmptyFile);
    }
    if builder.sites.len() != m {
        return Err(bad(
            1,
            &format!("header declares {m} sites, found {}", builder.sites.len()),
        ));
    }
    Ok(NestedCorpus {
        vocab,
        sites: builder.sites,
    })
}

pub fn save_corpus(corpus: &NestedCorpus, path: impl AsRef<Path>, format: CorpusFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        CorpusFormat::Jsonl => to_jsonl(corpus)?,
        CorpusFormat::TokenIndex => to_token_index(corpus)?,
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn to_jsonl(corpus: &NestedCorpus) -> Result<String> {
    let mut out = String::new();
    for site in &corpus.sites {
        for page in &site.pages {
            let rec = JsonPage {
                site: site.id.clone(),
                page: page.id.clone(),
                tokens: page
                    .tokens
                    .iter()
                    .map(|&w| corpus.vocab.word(w).to_owned())
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn to_token_index(corpus: &NestedCorpus) -> Result<String> {
    use std::fmt::Write as _;
    let ws = |s: &str| s.is_empty() || s.contains(char::is_whitespace);
    let mut out = String::new();
    writeln!(out, "{} {}", corpus.vocab.len(), corpus.sites.len()).unwrap();
    for w in corpus.vocab.words() {
        if ws(w) {
            return Err(Error::config(format!("token {w:?} cannot be written as a line")));
        }
        writeln!(out, "{w}").unwrap();
    }
    for site in &corpus.sites {
        for page in &site.pages {
            if ws(&site.id) || ws(&page.id) {
                return Err(Error::config(format!(
                    "ids ({:?}, {:?}) must be non-empty and free of whitespace",
                    site.id, page.id
                )));
            }
            write!(out, "{} {} {}", site.id, page.id, page.tokens.len()).unwrap();
            for &t in &page.tokens {
                write!(out, " {}", t + 1).unwrap();
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Removes rare words and short pages, repeating until neither rule removes
/// anything. Sites left without pages are dropped and the vocabulary is
/// re-indexed densely in first-appearance order.
pub fn filter_corpus(
    corpus: &NestedCorpus,
    min_page_words: usize,
    min_word_pages: usize,
) -> Result<NestedCorpus> {
    if min_page_words == 0 || min_word_pages == 0 {
        return Err(Error::config("filter thresholds must be at least 1"));
    }
    let v = corpus.vocab.len();
    let mut sites: Vec<Site> = corpus.sites.clone();
    loop {
        let mut doc_freq = vec![0usize; v];
        let mut seen = vec![usize::MAX; v];
        for (n, page) in sites.iter().flat_map(|s| &s.pages).enumerate() {
            for &w in &page.tokens {
                if seen[w as usize] != n {
                    seen[w as usize] = n;
                    doc_freq[w as usize] += 1;
                }
            }
        }
        let mut changed = false;
        for site in &mut sites {
            for page in &mut site.pages {
                let before = page.tokens.len();
                page.tokens.retain(|&w| doc_freq[w as usize] >= min_word_pages);
                changed |= page.tokens.len() != before;
            }
            let before = site.pages.len();
            site.pages.retain(|p| p.tokens.len() >= min_page_words);
            changed |= site.pages.len() != before;
        }
        sites.retain(|s| !s.pages.is_empty());
        if !changed {
            break;
        }
    }
    if sites.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }

    let mut vocab = Vocabulary::new();
    for page in sites.iter_mut().flat_map(|s| s.pages.iter_mut()) {
        for w in page.tokens.iter_mut() {
            *w = vocab.intern(corpus.vocab.word(*w));
        }
    }
    Ok(NestedCorpus { vocab, sites })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: NestedCorpus,
    pub heldout: NestedCorpus,
    pub fold_id: usize,
    pub seed: u64,
}

/// Number of pages a site of `pages` pages contributes to the held-out half.
pub fn heldout_count(pages: usize, fraction: f64) -> usize {
    let raw = (fraction * pages as f64 + 0.5).floor() as usize;
    raw.clamp(1, pages.saturating_sub(1).max(1))
}

/// Holds out a fraction of every site's pages, chosen uniformly without
/// replacement. Both halves keep the full vocabulary and the original page
/// order.
pub fn split_holdout(
    corpus: &NestedCorpus,
    fraction: f64,
    seed: u64,
    fold_id: usize,
) -> Result<CorpusSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    if let Some(site) = corpus.sites.iter().find(|s| s.pages.len() < 2) {
        return Err(Error::SiteTooSmall(site.id.clone()));
    }
    let mut rng = random::stream(seed, "split", fold_id as u64);
    let mut train = Vec::with_capacity(corpus.sites.len());
    let mut heldout = Vec::with_capacity(corpus.sites.len());
    for site in &corpus.sites {
        let n = site.pages.len();
        let mut held = vec![false; n];
        for j in index::sample(&mut rng, n, heldout_count(n, fraction)) {
            held[j] = true;
        }
        let (h, t): (Vec<_>, Vec<_>) = site
            .pages
            .iter()
            .cloned()
            .zip(held)
            .partition(|(_, is_held)| *is_held);
        train.push(Site {
            id: site.id.clone(),
            pages: t.into_iter().map(|(p, _)| p).collect(),
        });
        heldout.push(Site {
            id: site.id.clone(),
            pages: h.into_iter().map(|(p, _)| p).collect(),
        });
    }
    Ok(CorpusSplit {
        train: NestedCorpus {
            vocab: corpus.vocab.clone(),
            sites: train,
        },
        heldout: NestedCorpus {
            vocab: corpus.vocab.clone(),
            sites: heldout,
        },
        fold_id,
        seed,
    })
}
