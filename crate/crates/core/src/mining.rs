//! Financial attribute extraction, hard-negative classification and the
//! contrastive retrieval loss.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocMeta, Passage};
use crate::embed::{cosine, EmbedError, Embedding};
use crate::text::terms;

pub const LEXICON_V1: &str = include_str!("../data/financial_terms.v1.txt");

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Metric term list with token-level longest-match lookup.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<Entry>,
    by_first: HashMap<String, Vec<usize>>,
}

#[derive(Debug, Clone)]
struct Entry {
    term: String,
    tokens: Vec<String>,
}

/// A lexicon hit, in token coordinates of the searched text.
#[derive(Debug, Clone, PartialEq)]
pub struct TermMatch {
    pub term: String,
    pub start: usize,
    pub len: usize,
}

impl Lexicon {
    pub fn new<I, S>(terms_in: I) -> Result<Self, MiningError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut entries: Vec<Entry> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for t in terms_in {
            let term = t.as_ref().trim().to_lowercase();
            let tokens = terms(&term);
            if tokens.is_empty() || !seen.insert(tokens.clone()) {
                continue;
            }
            entries.push(Entry { term, tokens });
        }
        if entries.is_empty() {
            return Err(MiningError::EmptyLexicon);
        }
        let mut by_first: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_first.entry(e.tokens[0].clone()).or_default().push(i);
        }
        Ok(Lexicon { entries, by_first })
    }

    /// Parse the line format: one term per line, `#` comments, blanks skipped.
    pub fn parse(text: &str) -> Result<Self, MiningError> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')))
    }

    pub fn builtin() -> &'static Lexicon {
        static LEX: OnceLock<Lexicon> = OnceLock::new();
        LEX.get_or_init(|| Lexicon::parse(LEXICON_V1).expect("bundled lexicon is non-empty"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn longest_at(&self, toks: &[String], pos: usize) -> Option<&Entry> {
        let cands = self.by_first.get(&toks[pos])?;
        cands
            .iter()
            .map(|&i| &self.entries[i])
            .filter(|e| toks.len() - pos >= e.tokens.len() && toks[pos..pos + e.tokens.len()] == e.tokens[..])
            .max_by(|a, b| a.tokens.len().cmp(&b.tokens.len()).then(a.term.len().cmp(&b.term.len())))
    }

    /// Every position's longest match, possibly overlapping.
    pub fn all_matches(&self, text: &str) -> Vec<TermMatch> {
        let toks = terms(text);
        (0..toks.len())
            .filter_map(|p| {
                self.longest_at(&toks, p).map(|e| TermMatch { term: e.term.clone(), start: p, len: e.tokens.len() })
            })
            .collect()
    }

    /// The single best match: most tokens, then most characters, then earliest.
    pub fn best_match(&self, text: &str) -> Option<TermMatch> {
        let mut best: Option<TermMatch> = None;
        for m in self.all_matches(text) {
            let better = match &best {
                None => true,
                Some(b) => (m.len, m.term.len()) > (b.len, b.term.len()),
            };
            if better {
                best = Some(m);
            }
        }
        best
    }

    /// Greedy left-to-right, non-overlapping match count.
    pub fn count_matches(&self, text: &str) -> usize {
        let toks = terms(text);
        let mut pos = 0;
        let mut count = 0;
        while pos < toks.len() {
            match self.longest_at(&toks, pos) {
                Some(e) => {
                    count += 1;
                    pos += e.tokens.len();
                }
                None => pos += 1,
            }
        }
        count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FiscalPeriod {
    pub year: u16,
    pub quarter: Option<u8>,
}

impl fmt::Display for FiscalPeriod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.quarter {
            Some(q) => write!(f, "FY{}Q{}", self.year, q),
            None => write!(f, "FY{}", self.year),
        }
    }
}

impl std::str::FromStr for FiscalPeriod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let re = canonical_re();
        let c = re.captures(s).ok_or_else(|| format!("not a canonical period: {s}"))?;
        Ok(FiscalPeriod {
            year: c[1].parse().unwrap(),
            quarter: c.get(2).map(|m| m.as_str().parse().unwrap()),
        })
    }
}

fn canonical_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^FY(\d{4})(?:Q([1-4]))?$").unwrap())
}

struct PeriodPatterns {
    quarter: Vec<(Regex, usize, usize)>,
    fiscal: Regex,
    year: Regex,
}

fn period_patterns() -> &'static PeriodPatterns {
    static P: OnceLock<PeriodPatterns> = OnceLock::new();
    P.get_or_init(|| PeriodPatterns {
        // (pattern, quarter group, year group)
        quarter: vec![
            (Regex::new(r"(?i)\bFY\s?((?:19|20)\d{2})\s?Q([1-4])\b").unwrap(), 2, 1),
            (Regex::new(r"(?i)\bQ([1-4])\s*(?:of\s+)?(?:fiscal\s+|FY\s?)?'?((?:19|20)\d{2})\b").unwrap(), 1, 2),
            (Regex::new(r"(?i)\b((?:19|20)\d{2})\s?Q([1-4])\b").unwrap(), 2, 1),
            (
                Regex::new(r"(?i)\b(first|second|third|fourth|1st|2nd|3rd|4th)\s+(?:fiscal\s+)?quarter\s+(?:of\s+)?(?:fiscal\s+(?:year\s+)?)?((?:19|20)\d{2})\b")
                    .unwrap(),
                1,
                2,
            ),
        ],
        fiscal: Regex::new(r"(?i)\b(?:fiscal(?:\s+year)?|FY)\s?'?((?:19|20)\d{2})\b").unwrap(),
        year: Regex::new(r"\b((?:19|20)\d{2})\b").unwrap(),
    })
}

fn quarter_number(s: &str) -> Option<u8> {
    match s.to_lowercase().as_str() {
        "1" | "first" | "1st" => Some(1),
        "2" | "second" | "2nd" => Some(2),
        "3" | "third" | "3rd" => Some(3),
        "4" | "fourth" | "4th" => Some(4),
        _ => None,
    }
}

/// First period mention, trying quarter forms before fiscal-year forms before
/// bare years.
pub fn parse_period(text: &str) -> Option<FiscalPeriod> {
    periods(text).into_iter().next()
}

/// All distinct periods in order of first appearance. Years that are part of
/// a quarter or fiscal mention are not reported separately.
pub fn periods(text: &str) -> Vec<FiscalPeriod> {
    let pats = period_patterns();
    let mut found: Vec<(usize, usize, FiscalPeriod)> = Vec::new();
    let overlaps = |found: &[(usize, usize, FiscalPeriod)], s: usize, e: usize| found.iter().any(|&(a, b, _)| s < b && a < e);

    for (re, qg, yg) in &pats.quarter {
        for c in re.captures_iter(text) {
            let m = c.get(0).unwrap();
            if overlaps(&found, m.start(), m.end()) {
                continue;
            }
            let year = c[*yg].parse().unwrap();
            let quarter = quarter_number(&c[*qg]);
            found.push((m.start(), m.end(), FiscalPeriod { year, quarter }));
        }
    }
    for c in pats.fiscal.captures_iter(text) {
        let m = c.get(0).unwrap();
        if !overlaps(&found, m.start(), m.end()) {
            found.push((m.start(), m.end(), FiscalPeriod { year: c[1].parse().unwrap(), quarter: None }));
        }
    }
    for m in pats.year.find_iter(text) {
        if overlaps(&found, m.start(), m.end()) {
            continue;
        }
        // skip amounts such as "$2019", "1,2019" or "3.2019"
        let prev = text[..m.start()].chars().next_back();
        if matches!(prev, Some('$') | Some(',') | Some('.')) {
            continue;
        }
        found.push((m.start(), m.end(), FiscalPeriod { year: m.as_str().parse().unwrap(), quarter: None }));
    }
    found.sort_by_key(|&(s, _, _)| s);
    let mut out: Vec<FiscalPeriod> = Vec::new();
    for (_, _, p) in found {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Segment,
    Consolidated,
    Unknown,
}

const SEGMENT_MARKERS: &[&str] = &[
    "segment",
    "segments",
    "division",
    "divisions",
    "region",
    "regions",
    "regional",
    "north america",
    "south america",
    "latin america",
    "americas",
    "europe",
    "emea",
    "asia",
    "asia pacific",
    "apac",
    "greater china",
    "china",
    "japan",
    "middle east",
    "africa",
];

const CONSOLIDATED_MARKERS: &[&str] = &["total", "consolidated"];

fn contains_phrase(toks: &[String], phrase: &str) -> bool {
    let p = terms(phrase);
    toks.windows(p.len()).any(|w| w == &p[..])
}

pub fn granularity(text: &str) -> Granularity {
    let toks = terms(text);
    if SEGMENT_MARKERS.iter().any(|m| contains_phrase(&toks, m)) {
        Granularity::Segment
    } else if CONSOLIDATED_MARKERS.iter().any(|m| contains_phrase(&toks, m)) {
        Granularity::Consolidated
    } else {
        Granularity::Unknown
    }
}

const NON_ENTITY_WORDS: &[&str] = &[
    "the", "a", "an", "in", "for", "during", "our", "we", "total", "net", "as", "at", "on", "this", "these",
    "year", "fiscal", "q1", "q2", "q3", "q4", "fy", "and", "of", "from", "by",
];

/// Leading run of capitalized words, e.g. "Acme Corp reported ..." gives
/// "Acme Corp". Returns None when the run starts a lexicon term.
pub fn leading_proper_noun(text: &str, lexicon: &Lexicon) -> Option<String> {
    let mut span: Vec<&str> = Vec::new();
    for w in text.split_whitespace() {
        let clean = w.trim_matches(|c: char| !c.is_alphanumeric() && c != '&' && c != '.');
        let clean = clean.trim_end_matches('.').trim_end_matches("'s");
        let starts_upper = clean.chars().next().is_some_and(|c| c.is_uppercase());
        if !starts_upper || clean.chars().any(|c| c.is_ascii_digit()) {
            break;
        }
        if span.is_empty() && NON_ENTITY_WORDS.contains(&clean.to_lowercase().as_str()) {
            return None;
        }
        span.push(clean);
        if w.ends_with(',') || w.ends_with("'s") || span.len() == 4 {
            break;
        }
    }
    if span.is_empty() {
        return None;
    }
    let toks = terms(text);
    if !toks.is_empty() && lexicon.longest_at(&toks, 0).is_some() {
        return None;
    }
    Some(span.join(" "))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageAttributes {
    pub metric: Option<String>,
    pub entity: Option<String>,
    pub period: Option<FiscalPeriod>,
    pub granularity: Granularity,
}

/// Attributes of a passage. The entity comes from document metadata when
/// available and from a leading proper-noun span otherwise.
pub fn extract_attributes(passage: &Passage, meta: Option<&DocMeta>, lexicon: &Lexicon) -> PassageAttributes {
    extract_text_attributes(&passage.text, meta, lexicon)
}

pub fn extract_text_attributes(text: &str, meta: Option<&DocMeta>, lexicon: &Lexicon) -> PassageAttributes {
    let entity = meta
        .and_then(|m| m.get("company"))
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .or_else(|| leading_proper_noun(text, lexicon));
    PassageAttributes {
        metric: lexicon.best_match(text).map(|m| m.term),
        entity,
        period: parse_period(text),
        granularity: granularity(text),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeType {
    Temporal,
    MetricSwap,
    Granularity,
    EntitySwap,
}

impl NegativeType {
    pub const ALL: [NegativeType; 4] =
        [NegativeType::Temporal, NegativeType::MetricSwap, NegativeType::Granularity, NegativeType::EntitySwap];

    pub fn as_str(self) -> &'static str {
        match self {
            NegativeType::Temporal => "temporal",
            NegativeType::MetricSwap => "metric_swap",
            NegativeType::Granularity => "granularity",
            NegativeType::EntitySwap => "entity_swap",
        }
    }
}

fn norm_entity(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Classify `cand` against a fully populated `gold`. Returns None if gold or
/// cand lacks metric, entity or period, or if fewer than two match.
pub fn classify_negative(gold: &PassageAttributes, cand: &PassageAttributes) -> Option<NegativeType> {
    let (gm, ge, gp) = (gold.metric.as_ref()?, gold.entity.as_ref()?, gold.period?);
    let (cm, ce, cp) = (cand.metric.as_ref()?, cand.entity.as_ref()?, cand.period?);
    let same_m = gm == cm;
    let same_e = norm_entity(ge) == norm_entity(ce);
    let same_p = gp == cp;
    match (same_m, same_e, same_p) {
        (true, true, false) => Some(NegativeType::Temporal),
        (false, true, true) => Some(NegativeType::MetricSwap),
        (true, false, true) => Some(NegativeType::EntitySwap),
        (true, true, true) => {
            let (g, c) = (gold.granularity, cand.granularity);
            (g != c && g != Granularity::Unknown && c != Granularity::Unknown).then_some(NegativeType::Granularity)
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldQuery {
    pub query_id: String,
    pub gold_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinedPair {
    pub query_id: String,
    pub gold_id: String,
    pub negative_id: String,
    #[serde(rename = "type")]
    pub kind: NegativeType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedQuery {
    pub query_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub total_pairs: usize,
    pub queries_mined: usize,
    pub mean_pairs_per_query: f64,
    pub counts: BTreeMap<String, usize>,
    pub percentages: BTreeMap<String, f64>,
    pub skipped: Vec<SkippedQuery>,
}

#[derive(Debug, Clone)]
pub struct MiningOutput {
    pub pairs: Vec<MinedPair>,
    pub report: MiningReport,
}

impl MiningOutput {
    pub fn pairs_jsonl(&self) -> String {
        self.pairs.iter().map(|p| serde_json::to_string(p).unwrap() + "\n").collect()
    }
}

/// Classify every corpus passage against each query's gold passage.
/// `metas` maps document ids to their metadata.
pub fn mine_negatives(
    corpus: &[Passage],
    metas: &HashMap<String, DocMeta>,
    queries: &[GoldQuery],
    lexicon: &Lexicon,
) -> MiningOutput {
    let attrs: Vec<PassageAttributes> =
        corpus.iter().map(|p| extract_attributes(p, metas.get(&p.doc_id), lexicon)).collect();
    let by_id: HashMap<&str, usize> = corpus.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();

    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    let mut mined = 0usize;
    for q in queries {
        let Some(&gi) = by_id.get(q.gold_id.as_str()) else {
            skipped.push(SkippedQuery { query_id: q.query_id.clone(), reason: "gold passage not in corpus".into() });
            continue;
        };
        let gold = &attrs[gi];
        let missing: Vec<&str> = [
            ("metric", gold.metric.is_none()),
            ("entity", gold.entity.is_none()),
            ("period", gold.period.is_none()),
        ]
        .iter()
        .filter(|(_, m)| *m)
        .map(|(n, _)| *n)
        .collect();
        if !missing.is_empty() {
            skipped.push(SkippedQuery {
                query_id: q.query_id.clone(),
                reason: format!("gold attributes missing: {}", missing.join(", ")),
            });
            continue;
        }
        mined += 1;
        for (ci, cand) in attrs.iter().enumerate() {
            if ci == gi {
                continue;
            }
            if let Some(kind) = classify_negative(gold, cand) {
                pairs.push(MinedPair {
                    query_id: q.query_id.clone(),
                    gold_id: q.gold_id.clone(),
                    negative_id: corpus[ci].id.clone(),
                    kind,
                });
            }
        }
    }

    let mut counts: BTreeMap<String, usize> = NegativeType::ALL.iter().map(|t| (t.as_str().to_string(), 0)).collect();
    for p in &pairs {
        *counts.get_mut(p.kind.as_str()).unwrap() += 1;
    }
    let total = pairs.len();
    let percentages = counts
        .iter()
        .map(|(k, &c)| (k.clone(), if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 }))
        .collect();
    let report = MiningReport {
        total_pairs: total,
        queries_mined: mined,
        mean_pairs_per_query: if mined == 0 { 0.0 } else { total as f64 / mined as f64 },
        counts,
        percentages,
        skipped,
    };
    MiningOutput { pairs, report }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub tau: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig { tau: 0.05 }
    }
}

/// InfoNCE over cosine similarities:
/// `-ln( e^{s+/t} / (e^{s+/t} + sum e^{s-/t}) ) = ln(1 + sum e^{(s- - s+)/t})`.
pub fn contrastive_loss(
    q: &Embedding,
    pos: &Embedding,
    negs: &[Embedding],
    cfg: &ContrastiveConfig,
) -> Result<f64, MiningError> {
    if cfg.tau.is_nan() || cfg.tau <= 0.0 {
        return Err(MiningError::BadTemperature(cfg.tau));
    }
    let sp = cosine(q, pos)?;
    let sn = negs.iter().map(|n| cosine(q, n)).collect::<Result<Vec<_>, _>>()?;
    Ok(contrastive_loss_from_sims(sp, &sn, cfg.tau))
}

pub fn contrastive_loss_from_sims(sim_pos: f64, sim_negs: &[f64], tau: f64) -> f64 {
    let z: Vec<f64> = sim_negs.iter().map(|s| (s - sim_pos) / tau).collect();
    let m = z.iter().copied().fold(0.0f64, f64::max);
    if m == 0.0 {
        z.iter().map(|v| v.exp()).sum::<f64>().ln_1p()
    } else {
        m + ((-m).exp() + z.iter().map(|v| (v - m).exp()).sum::<f64>()).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> &'static Lexicon {
        Lexicon::builtin()
    }

    fn attrs(metric: &str, entity: &str, year: u16) -> PassageAttributes {
        PassageAttributes {
            metric: Some(metric.into()),
            entity: Some(entity.into()),
            period: Some(FiscalPeriod { year, quarter: None }),
            granularity: Granularity::Unknown,
        }
    }

    #[test]
    fn builtin_lexicon_size() {
        let n = lex().len();
        assert!((800..=900).contains(&n), "lexicon has {n} terms");
    }

    #[test]
    fn quarter_expression() {
        let a = extract_text_attributes("Operating expenses in Q3 2019 were $1.2B", None, lex());
        assert_eq!(a.metric.as_deref(), Some("operating expenses"));
        assert_eq!(a.period.unwrap().to_string(), "FY2019Q3");
    }

    #[test]
    fn no_term_no_metric() {
        let a = extract_text_attributes("The weather was pleasant on the coast.", None, lex());
        assert_eq!(a.metric, None);
    }

    #[test]
    fn longest_match_wins() {
        let a = extract_text_attributes("Revenue rose while cost of revenue fell in 2020.", None, lex());
        assert_eq!(a.metric.as_deref(), Some("cost of revenue"));
    }

    #[test]
    fn period_forms() {
        assert_eq!(parse_period("fiscal 2018 results").unwrap().to_string(), "FY2018");
        assert_eq!(parse_period("in 2019 we").unwrap().to_string(), "FY2019");
        assert_eq!(parse_period("third quarter of 2020").unwrap().to_string(), "FY2020Q3");
        assert_eq!(parse_period("FY2021 Q4 guidance").unwrap().to_string(), "FY2021Q4");
        assert_eq!(parse_period("price of $2019 only"), None);
        assert!("FY2019Q3".parse::<FiscalPeriod>().is_ok());
        assert!("2019".parse::<FiscalPeriod>().is_err());
    }

    #[test]
    fn entity_prefers_meta() {
        let mut meta = DocMeta::new();
        meta.insert("company".into(), "CoX".into());
        let a = extract_text_attributes("Acme Corp revenue in 2019", Some(&meta), lex());
        assert_eq!(a.entity.as_deref(), Some("CoX"));
        let b = extract_text_attributes("Acme Corp revenue in 2019", None, lex());
        assert_eq!(b.entity.as_deref(), Some("Acme Corp"));
        let c = extract_text_attributes("Operating expenses in 2019", None, lex());
        assert_eq!(c.entity, None);
    }

    #[test]
    fn granularity_markers() {
        assert_eq!(granularity("Americas segment revenue"), Granularity::Segment);
        assert_eq!(granularity("consolidated revenue"), Granularity::Consolidated);
        assert_eq!(granularity("revenue"), Granularity::Unknown);
    }

    #[test]
    fn classification_rules() {
        let g = attrs("operating expenses", "CoX", 2019);
        assert_eq!(classify_negative(&g, &attrs("operating expenses", "CoX", 2020)), Some(NegativeType::Temporal));
        let g2 = attrs("revenue", "CoX", 2019);
        assert_eq!(classify_negative(&g2, &attrs("cost of revenue", "CoX", 2019)), Some(NegativeType::MetricSwap));
        assert_eq!(classify_negative(&g2, &attrs("revenue", "CoY", 2019)), Some(NegativeType::EntitySwap));
        assert_eq!(classify_negative(&g2, &attrs("margin", "CoX", 2020)), None);
        assert_eq!(classify_negative(&g2, &g2), None);

        let mut seg = g2.clone();
        seg.granularity = Granularity::Segment;
        let mut cons = g2.clone();
        cons.granularity = Granularity::Consolidated;
        assert_eq!(classify_negative(&seg, &cons), Some(NegativeType::Granularity));
        assert_eq!(classify_negative(&seg, &g2), None);

        let mut missing = g2.clone();
        missing.period = None;
        assert_eq!(classify_negative(&g2, &missing), None);
    }

    #[test]
    fn loss_closed_forms() {
        assert!((contrastive_loss_from_sims(0.3, &[0.3], 0.05) - 2f64.ln()).abs() < 1e-12);
        let l = contrastive_loss_from_sims(1.0, &[0.0], 0.05);
        let expect = (-20f64).exp().ln_1p();
        assert!((l - expect).abs() / expect < 1e-9);
        assert!((l - 2.06e-9).abs() < 0.01e-9);
        assert_eq!(contrastive_loss_from_sims(0.5, &[], 0.05), 0.0);
    }

    #[test]
    fn loss_rejects_bad_inputs() {
        let a = Embedding::new(vec![1.0, 0.0]).unwrap();
        let b = Embedding::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(contrastive_loss(&a, &b, &[], &ContrastiveConfig::default()).is_err());
        assert!(contrastive_loss(&a, &a, &[], &ContrastiveConfig { tau: 0.0 }).is_err());
    }
}
