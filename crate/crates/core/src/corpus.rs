//! Document ingestion: typed segments, table linearization and chunking.
//!
//! Documents arrive pre-structured (see [`RawDocument`]); tables are never
//! guessed from plain text. Every text segment is chunked into passages of at
//! most `chunk_size_tokens` whitespace tokens, and every table row becomes one
//! passage of the form `Header: value | Header: value`.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::word_tokens;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("document `{0}` has no segments")]
    EmptyDocument(String),
    #[error("document id must be non-empty")]
    MissingId,
    #[error("segment {segment}: table row {row} has {found} cells, expected {expected}")]
    RaggedTable {
        segment: usize,
        /// 1-based row number within the table body.
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("segment {0}: table has no headers")]
    EmptyHeaders(usize),
    #[error("segment {segment}: kind `{kind}` requires a `{field}` field")]
    MissingField {
        segment: usize,
        kind: &'static str,
        field: &'static str,
    },
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("invalid chunk config: overlap {overlap} must be smaller than chunk size {size}")]
    InvalidChunkConfig { size: usize, overlap: usize },
    #[error("malformed document json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Text,
    Table,
    Header,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

impl Table {
    fn validate(&self, segment: usize) -> Result<(), CorpusError> {
        if self.headers.is_empty() {
            return Err(CorpusError::EmptyHeaders(segment));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.headers.len() {
                return Err(CorpusError::RaggedTable {
                    segment,
                    row: i + 1,
                    expected: self.headers.len(),
                    found: row.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Text(String),
    Header(String),
    Table(Table),
}

impl Segment {
    pub fn kind(&self) -> SegmentKind {
        match self {
            Segment::Text(_) => SegmentKind::Text,
            Segment::Header(_) => SegmentKind::Header,
            Segment::Table(_) => SegmentKind::Table,
        }
    }
}

/// Source metadata carried by a document (filing id, company, period, ...).
pub type DocMeta = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub segments: Vec<Segment>,
    pub source_meta: DocMeta,
}

impl Document {
    pub fn company(&self) -> Option<&str> {
        self.source_meta.get("company").map(String::as_str)
    }
}

/// Wire form of one ingested document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    #[serde(default)]
    pub meta: DocMeta,
    pub segments: Vec<RawSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSegment {
    pub kind: SegmentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Table>,
}

impl RawSegment {
    pub fn text(text: impl Into<String>) -> Self {
        RawSegment { kind: SegmentKind::Text, text: Some(text.into()), table: None }
    }

    pub fn header(text: impl Into<String>) -> Self {
        RawSegment { kind: SegmentKind::Header, text: Some(text.into()), table: None }
    }

    pub fn table(table: Table) -> Self {
        RawSegment { kind: SegmentKind::Table, text: None, table: Some(table) }
    }
}

impl From<&Document> for RawDocument {
    fn from(doc: &Document) -> Self {
        let segments = doc
            .segments
            .iter()
            .map(|s| match s {
                Segment::Text(t) => RawSegment::text(t.clone()),
                Segment::Header(t) => RawSegment::header(t.clone()),
                Segment::Table(t) => RawSegment::table(t.clone()),
            })
            .collect();
        RawDocument { id: doc.id.clone(), meta: doc.source_meta.clone(), segments }
    }
}

pub fn parse_document(raw: &RawDocument) -> Result<Document, CorpusError> {
    if raw.id.trim().is_empty() {
        return Err(CorpusError::MissingId);
    }
    if raw.segments.is_empty() {
        return Err(CorpusError::EmptyDocument(raw.id.clone()));
    }
    let mut segments = Vec::with_capacity(raw.segments.len());
    for (i, seg) in raw.segments.iter().enumerate() {
        let parsed = match seg.kind {
            SegmentKind::Text | SegmentKind::Header => {
                let text = seg.text.clone().ok_or(CorpusError::MissingField {
                    segment: i,
                    kind: if seg.kind == SegmentKind::Text { "text" } else { "header" },
                    field: "text",
                })?;
                if seg.kind == SegmentKind::Text {
                    Segment::Text(text)
                } else {
                    Segment::Header(text)
                }
            }
            SegmentKind::Table => {
                let table = seg.table.clone().ok_or(CorpusError::MissingField {
                    segment: i,
                    kind: "table",
                    field: "table",
                })?;
                table.validate(i)?;
                Segment::Table(table)
            }
        };
        segments.push(parsed);
    }
    Ok(Document { id: raw.id.clone(), segments, source_meta: raw.meta.clone() })
}

pub fn parse_document_json(json: &str) -> Result<Document, CorpusError> {
    let raw: RawDocument = serde_json::from_str(json).map_err(|e| CorpusError::Json(e.to_string()))?;
    parse_document(&raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageKind {
    TextChunk,
    TableRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
    pub kind: PassageKind,
    pub doc_id: String,
    pub position: usize,
    pub token_count: usize,
}

pub fn passage_id(doc_id: &str, segment_index: usize, position: usize) -> String {
    format!("{doc_id}#{segment_index}#{position}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub chunk_size_tokens: usize,
    pub overlap_tokens: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig { chunk_size_tokens: 512, overlap_tokens: 64 }
    }
}

impl ChunkConfig {
    pub fn new(chunk_size_tokens: usize, overlap_tokens: usize) -> Result<Self, CorpusError> {
        let cfg = ChunkConfig { chunk_size_tokens, overlap_tokens };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.chunk_size_tokens == 0 || self.overlap_tokens >= self.chunk_size_tokens {
            return Err(CorpusError::InvalidChunkConfig {
                size: self.chunk_size_tokens,
                overlap: self.overlap_tokens,
            });
        }
        Ok(())
    }
}

/// Token windows `[start, end)` covering `n` tokens.
pub fn chunk_spans(n: usize, cfg: &ChunkConfig) -> Vec<(usize, usize)> {
    if n == 0 {
        return Vec::new();
    }
    let stride = cfg.chunk_size_tokens - cfg.overlap_tokens;
    let mut spans = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + cfg.chunk_size_tokens).min(n);
        spans.push((start, end));
        if end == n {
            break;
        }
        start += stride;
    }
    spans
}

/// Split a text segment into overlapping word-token windows.
///
/// Non-text segments yield no passages. `segment_index` feeds the passage id.
pub fn chunk_text(doc_id: &str, segment_index: usize, segment: &Segment, cfg: &ChunkConfig) -> Vec<Passage> {
    let Segment::Text(text) = segment else {
        return Vec::new();
    };
    let tokens = word_tokens(text);
    chunk_spans(tokens.len(), cfg)
        .into_iter()
        .enumerate()
        .map(|(position, (start, end))| Passage {
            id: passage_id(doc_id, segment_index, position),
            text: tokens[start..end].join(" "),
            kind: PassageKind::TextChunk,
            doc_id: doc_id.to_string(),
            position,
            token_count: end - start,
        })
        .collect()
}

/// Escape a cell for the linearized row form: every `|` is doubled, and every
/// run of colons that is followed by a space (or ends the cell) is doubled.
pub fn escape_cell(cell: &str) -> String {
    let chars: Vec<char> = cell.chars().collect();
    let mut out = String::with_capacity(cell.len());
    let mut i = 0;
    while i < chars.len() {
        match chars[i] {
            '|' => {
                out.push_str("||");
                i += 1;
            }
            ':' => {
                let start = i;
                while i < chars.len() && chars[i] == ':' {
                    i += 1;
                }
                let run = i - start;
                let needs_escape = i == chars.len() || chars[i] == ' ';
                let width = if needs_escape { run * 2 } else { run };
                out.extend(std::iter::repeat_n(':', width));
            }
            c => {
                out.push(c);
                i += 1;
            }
        }
    }
    out
}

fn unescape_colons(field: &str) -> String {
    let chars: Vec<char> = field.chars().collect();
    let mut out = String::with_capacity(field.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == ':' {
            let start = i;
            while i < chars.len() && chars[i] == ':' {
                i += 1;
            }
            let run = i - start;
            let escaped = i == chars.len() || chars[i] == ' ';
            let width = if escaped { run.div_ceil(2) } else { run };
            out.extend(std::iter::repeat_n(':', width));
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    out
}

/// Render one row as `h1: v1 | h2: v2 | ...`.
pub fn linearize_row(headers: &[String], row: &[String]) -> String {
    headers
        .iter()
        .zip(row)
        .map(|(h, v)| format!("{}: {}", escape_cell(h), escape_cell(v)))
        .collect::<Vec<_>>()
        .join(" | ")
}

/// Recover `(header, value)` pairs from a linearized row.
pub fn parse_linearized_row(text: &str) -> Vec<(String, String)> {
    let chars: Vec<char> = text.chars().collect();
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '|' {
            let start = i;
            while i < chars.len() && chars[i] == '|' {
                i += 1;
            }
            let run = i - start;
            let is_separator = run == 1 && current.ends_with(' ') && i < chars.len() && chars[i] == ' ';
            if is_separator {
                current.pop();
                fields.push(std::mem::take(&mut current));
                i += 1;
            } else {
                current.extend(std::iter::repeat_n('|', run.div_ceil(2)));
            }
        } else {
            current.push(chars[i]);
            i += 1;
        }
    }
    fields.push(current);
    fields.iter().map(|f| split_pair(f)).collect()
}

fn split_pair(field: &str) -> (String, String) {
    let chars: Vec<char> = field.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == ':' {
            let start = i;
            while i < chars.len() && chars[i] == ':' {
                i += 1;
            }
            let run = i - start;
            if run % 2 == 1 && i < chars.len() && chars[i] == ' ' {
                let key: String = chars[..i - 1].iter().collect();
                let value: String = chars[i + 1..].iter().collect();
                return (unescape_colons(&key), unescape_colons(&value));
            }
        } else {
            i += 1;
        }
    }
    (unescape_colons(field), String::new())
}

/// One passage per table row; rows whose linearization exceeds the chunk
/// budget are split at cell boundaries, each piece keeping its headers.
pub fn linearize_table(doc_id: &str, segment_index: usize, table: &Table, cfg: &ChunkConfig) -> Vec<Passage> {
    let mut out = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        for text in split_row(&table.headers, row, cfg) {
            let position = out.len();
            let token_count = crate::text::word_count(&text);
            out.push(Passage {
                id: passage_id(doc_id, segment_index, position),
                text,
                kind: PassageKind::TableRow,
                doc_id: doc_id.to_string(),
                position,
                token_count,
            });
        }
    }
    out
}

fn split_row(headers: &[String], row: &[String], cfg: &ChunkConfig) -> Vec<String> {
    let full = linearize_row(headers, row);
    if crate::text::word_count(&full) <= cfg.chunk_size_tokens {
        return vec![full];
    }
    let mut pieces = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut current_tokens = 0;
    for (h, v) in headers.iter().zip(row) {
        let pair = format!("{}: {}", escape_cell(h), escape_cell(v));
        let pair_tokens = crate::text::word_count(&pair) + 1;
        if pair_tokens > cfg.chunk_size_tokens {
            if !current.is_empty() {
                pieces.push(current.join(" | "));
                current.clear();
                current_tokens = 0;
            }
            let tokens = word_tokens(&pair);
            for (s, e) in chunk_spans(tokens.len(), cfg) {
                pieces.push(tokens[s..e].join(" "));
            }
            continue;
        }
        if current_tokens + pair_tokens > cfg.chunk_size_tokens && !current.is_empty() {
            pieces.push(current.join(" | "));
            current.clear();
            current_tokens = 0;
        }
        current_tokens += pair_tokens;
        current.push(pair);
    }
    if !current.is_empty() {
        pieces.push(current.join(" | "));
    }
    pieces
}

/// Chunk all text segments and linearize all tables. Header segments label
/// structure but are not emitted as passages.
pub fn build_corpus(docs: &[Document], cfg: &ChunkConfig) -> Result<Vec<Passage>, CorpusError> {
    cfg.validate()?;
    let mut seen = HashSet::new();
    for doc in docs {
        if !seen.insert(doc.id.as_str()) {
            return Err(CorpusError::DuplicateDocId(doc.id.clone()));
        }
    }
    let mut passages = Vec::new();
    for doc in docs {
        for (i, seg) in doc.segments.iter().enumerate() {
            match seg {
                Segment::Text(_) => passages.extend(chunk_text(&doc.id, i, seg, cfg)),
                Segment::Table(t) => passages.extend(linearize_table(&doc.id, i, t, cfg)),
                Segment::Header(_) => {}
            }
        }
    }
    Ok(passages)
}

/// Serialize passages as one JSON record per line.
pub fn passages_to_jsonl(passages: &[Passage]) -> String {
    let mut out = String::new();
    for p in passages {
        out.push_str(&serde_json::to_string(p).expect("passage serializes"));
        out.push('\n');
    }
    out
}

pub fn passages_from_jsonl(text: &str) -> Result<Vec<Passage>, CorpusError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CorpusError::Json(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc_with(segments: Vec<RawSegment>) -> RawDocument {
        RawDocument { id: "d1".into(), meta: DocMeta::new(), segments }
    }

    fn table(headers: &[&str], rows: &[&[&str]]) -> Table {
        Table {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
            caption: None,
        }
    }

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn paragraph_and_table_give_two_segments() {
        let raw = doc_with(vec![
            RawSegment::text("Revenue grew strongly."),
            RawSegment::table(table(&["Year", "Revenue", "Net Income"], &[&["2020", "$5.2B", "$1.1B"], &["2019", "$4.8B", "$0.9B"]])),
        ]);
        let doc = parse_document(&raw).unwrap();
        assert_eq!(doc.segments.len(), 2);
        assert_eq!(doc.segments[0].kind(), SegmentKind::Text);
        assert_eq!(doc.segments[1].kind(), SegmentKind::Table);
    }

    #[test]
    fn ragged_row_is_rejected_with_row_number() {
        let raw = doc_with(vec![RawSegment::table(table(&["A", "B", "C"], &[&["1", "2", "3"], &["4", "5"]]))]);
        let err = parse_document(&raw).unwrap_err();
        assert_eq!(err, CorpusError::RaggedTable { segment: 0, row: 2, expected: 3, found: 2 });
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn empty_document_is_an_error() {
        assert_eq!(parse_document(&doc_with(vec![])).unwrap_err(), CorpusError::EmptyDocument("d1".into()));
    }

    #[test]
    fn ten_k_layout_keeps_source_order() {
        let raw = doc_with(vec![
            RawSegment::header("Item 7. Management's Discussion"),
            RawSegment::text("p1"),
            RawSegment::table(table(&["Year", "Revenue"], &[&["2020", "5"]])),
            RawSegment::text("p2"),
            RawSegment::table(table(&["Year", "Opex"], &[&["2020", "3"]])),
            RawSegment::text("p3"),
        ]);
        let kinds: Vec<_> = parse_document(&raw).unwrap().segments.iter().map(Segment::kind).collect();
        use SegmentKind::*;
        assert_eq!(kinds, vec![Header, Text, Table, Text, Table, Text]);
    }

    #[test]
    fn missing_table_payload() {
        let raw = doc_with(vec![RawSegment { kind: SegmentKind::Table, text: Some("x".into()), table: None }]);
        assert!(matches!(parse_document(&raw), Err(CorpusError::MissingField { field: "table", .. })));
    }

    #[test]
    fn linearizes_header_prepended_rows() {
        let t = table(&["Year", "Revenue", "Net Income"], &[&["2020", "$5.2B", "$1.1B"]]);
        let ps = linearize_table("d", 0, &t, &ChunkConfig::default());
        assert_eq!(ps[0].text, "Year: 2020 | Revenue: $5.2B | Net Income: $1.1B");
        let single = linearize_table("d", 0, &table(&["X"], &[&["7"]]), &ChunkConfig::default());
        assert_eq!(single[0].text, "X: 7");
    }

    #[test]
    fn three_rows_three_passages() {
        let t = table(&["A"], &[&["1"], &["2"], &["3"]]);
        let ps = linearize_table("d", 4, &t, &ChunkConfig::default());
        assert_eq!(ps.iter().map(|p| p.position).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(ps.iter().all(|p| p.kind == PassageKind::TableRow));
        assert_eq!(ps[2].id, "d#4#2");
    }

    #[test]
    fn oversized_row_is_split_with_headers() {
        let headers: Vec<String> = (0..10).map(|i| format!("col{i}")).collect();
        let row: Vec<String> = (0..10).map(|i| format!("value {i} with padding words")).collect();
        let t = Table { headers, rows: vec![row], caption: None };
        let cfg = ChunkConfig::new(16, 2).unwrap();
        let ps = linearize_table("d", 0, &t, &cfg);
        assert!(ps.len() > 1);
        for p in &ps {
            assert!(p.token_count <= 16, "{}", p.text);
            assert!(p.text.starts_with("col"));
        }
    }

    #[test]
    fn short_paragraph_is_one_chunk() {
        let seg = Segment::Text(words(300));
        let ps = chunk_text("d", 0, &seg, &ChunkConfig::default());
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].token_count, 300);
    }

    #[test]
    fn long_paragraph_overlaps_and_covers() {
        let seg = Segment::Text(words(1000));
        let cfg = ChunkConfig::default();
        let ps = chunk_text("d", 0, &seg, &cfg);
        // token-index bookkeeping: windows start every 448 tokens
        assert_eq!(chunk_spans(1000, &cfg), vec![(0, 512), (448, 960), (896, 1000)]);
        assert_eq!(ps.iter().map(|p| p.token_count).collect::<Vec<_>>(), vec![512, 512, 104]);
        for pair in ps.windows(2) {
            let a = word_tokens(&pair[0].text);
            let b = word_tokens(&pair[1].text);
            assert_eq!(&a[a.len() - 64..], &b[..64]);
        }
        assert_eq!(ps.last().unwrap().text.split(' ').next_back(), Some("w999"));
    }

    #[test]
    fn empty_text_no_chunks() {
        assert!(chunk_text("d", 0, &Segment::Text("   ".into()), &ChunkConfig::default()).is_empty());
    }

    #[test]
    fn chunk_config_rejects_overlap_at_size() {
        assert!(ChunkConfig::new(64, 64).is_err());
        assert!(ChunkConfig::new(64, 63).is_ok());
    }

    #[test]
    fn corpus_of_two_paragraphs() {
        let a = parse_document(&RawDocument { id: "a".into(), meta: DocMeta::new(), segments: vec![RawSegment::text("alpha beta")] }).unwrap();
        let b = parse_document(&RawDocument { id: "b".into(), meta: DocMeta::new(), segments: vec![RawSegment::text("gamma")] }).unwrap();
        let first = build_corpus(&[a.clone(), b.clone()], &ChunkConfig::default()).unwrap();
        assert_eq!(first.len(), 2);
        let second = build_corpus(&[a.clone(), b], &ChunkConfig::default()).unwrap();
        assert_eq!(passages_to_jsonl(&first), passages_to_jsonl(&second));
        assert_eq!(
            build_corpus(&[a.clone(), a], &ChunkConfig::default()).unwrap_err(),
            CorpusError::DuplicateDocId("a".into())
        );
    }

    #[test]
    fn finqa_page_layout() {
        let raw = RawDocument {
            id: "ETR/2016/page_23.pdf".into(),
            meta: DocMeta::new(),
            segments: vec![
                RawSegment::text("the following table sets forth the provision ."),
                RawSegment::text("amounts in millions ."),
                RawSegment::table(table(&["", "2019", "2018"], &[&["provision", "142", "135"], &["pretax", "600", "580"], &["rate", "23.7%", "23.3%"]])),
                RawSegment::text("see note 7 for details ."),
            ],
        };
        let ps = build_corpus(&[parse_document(&raw).unwrap()], &ChunkConfig::default()).unwrap();
        let text = ps.iter().filter(|p| p.kind == PassageKind::TextChunk).count();
        let rows = ps.iter().filter(|p| p.kind == PassageKind::TableRow).count();
        assert_eq!((text, rows), (3, 3));
        assert_eq!(ps[2].id, "ETR/2016/page_23.pdf#2#0");
        assert_eq!(ps[2].text, ": provision | 2019: 142 | 2018: 135");
    }

    #[test]
    fn delimiter_collisions_are_escaped() {
        let headers = vec!["a: b".to_string(), "x|y".to_string(), "z:".to_string()];
        let row = vec!["1 | 2".to_string(), "t: ".to_string(), "::".to_string()];
        let line = linearize_row(&headers, &row);
        let back = parse_linearized_row(&line);
        assert_eq!(back, headers.into_iter().zip(row).collect::<Vec<_>>());
    }

    #[test]
    fn jsonl_round_trip() {
        let ps = linearize_table("d", 0, &table(&["A", "B"], &[&["1", "2"]]), &ChunkConfig::default());
        assert_eq!(passages_from_jsonl(&passages_to_jsonl(&ps)).unwrap(), ps);
    }

    proptest! {
        #[test]
        fn linearization_round_trips(cells in proptest::collection::vec(("[a-zA-Z0-9 :|$.]{0,8}", "[a-zA-Z0-9 :|$.]{0,8}"), 1..5)) {
            let (headers, row): (Vec<String>, Vec<String>) = cells.into_iter().unzip();
            let back = parse_linearized_row(&linearize_row(&headers, &row));
            prop_assert_eq!(back, headers.into_iter().zip(row).collect::<Vec<_>>());
        }

        #[test]
        fn chunks_partition_tokens(n in 0usize..3000, size in 2usize..600, overlap_frac in 0.0f64..0.9) {
            let overlap = ((size as f64) * overlap_frac) as usize;
            let cfg = ChunkConfig::new(size, overlap.min(size - 1)).unwrap();
            let seg = Segment::Text(words(n));
            let ps = chunk_text("d", 0, &seg, &cfg);
            let mut rebuilt: Vec<String> = Vec::new();
            for (k, p) in ps.iter().enumerate() {
                prop_assert!(p.token_count <= cfg.chunk_size_tokens);
                let toks = word_tokens(&p.text);
                let skip = if k == 0 { 0 } else { cfg.overlap_tokens.min(toks.len()) };
                rebuilt.extend(toks[skip..].iter().map(|s| s.to_string()));
            }
            let original: Vec<String> = word_tokens(&words(n)).iter().map(|s| s.to_string()).collect();
            prop_assert_eq!(rebuilt, original);
        }
    }
}
