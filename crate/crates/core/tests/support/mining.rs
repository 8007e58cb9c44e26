//! A 40-passage corpus whose attributes are known by construction.

use finrag::corpus::Passage;
use finrag::mining::{FiscalPeriod, Granularity, PassageAttributes};
use finrag::PassageKind;

pub fn attrs(metric: &str, entity: &str, year: u16, g: Granularity) -> PassageAttributes {
    PassageAttributes {
        metric: Some(metric.into()),
        entity: Some(entity.into()),
        period: Some(FiscalPeriod { year, quarter: None }),
        granularity: g,
    }
}

pub const METRICS: [&str; 3] = ["revenue", "operating expenses", "net income"];
pub const YEARS: [u16; 3] = [2018, 2019, 2020];

pub struct Built {
    pub passages: Vec<Passage>,
    pub truth: Vec<Option<PassageAttributes>>,
}

fn push(b: &mut Built, text: String, truth: Option<PassageAttributes>) {
    let i = b.passages.len();
    b.passages.push(Passage {
        id: format!("m{i:02}"),
        token_count: text.split_whitespace().count(),
        text,
        kind: PassageKind::TextChunk,
        doc_id: format!("d{i:02}"),
        position: 0,
    });
    b.truth.push(truth);
}

/// Both companies at default granularity, Acme also at consolidated and
/// segment level, and four passages with nothing to match.
pub fn corpus() -> Built {
    let mut b = Built { passages: Vec::new(), truth: Vec::new() };
    for co in ["Acme Corp", "Birch Inc"] {
        for m in METRICS {
            for y in YEARS {
                push(&mut b, format!("{co} reported {m} of 100 in fiscal {y}."), Some(attrs(m, co, y, Granularity::Unknown)));
            }
        }
    }
    for (scope, g) in [("on a consolidated basis", Granularity::Consolidated), ("in its Americas segment", Granularity::Segment)] {
        for m in METRICS {
            for y in YEARS {
                push(&mut b, format!("Acme Corp reported {m} of 100 {scope} in fiscal {y}."), Some(attrs(m, "Acme Corp", y, g)));
            }
        }
    }
    for t in [
        "The board met four times during the year.",
        "Our headquarters moved to a new campus.",
        "Forward looking statements involve risks.",
        "Employees volunteered in local communities.",
    ] {
        push(&mut b, t.to_string(), None);
    }
    b
}

