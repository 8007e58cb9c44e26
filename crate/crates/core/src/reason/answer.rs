use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// A typed answer. Percentages are stored in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnswerValue {
    Number {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
    },
    Percent {
        value: f64,
    },
    Boolean {
        value: bool,
    },
    Text {
        value: String,
    },
}

impl AnswerValue {
    pub fn number(value: f64) -> Self {
        AnswerValue::Number { value, unit: None }
    }

    pub fn numeric(&self) -> Option<f64> {
        match self {
            AnswerValue::Number { value, .. } | AnswerValue::Percent { value } => Some(*value),
            _ => None,
        }
    }

    pub fn is_percent(&self) -> bool {
        matches!(self, AnswerValue::Percent { .. })
    }

    /// Parse a free-form answer string: "5.19%", "$1,200 million", "yes",
    /// "(35)" and so on. Anything unrecognised becomes text.
    pub fn parse(s: &str) -> AnswerValue {
        let t = s.trim().trim_end_matches('.').trim();
        let lower = t.to_lowercase();
        match lower.as_str() {
            "yes" | "true" => return AnswerValue::Boolean { value: true },
            "no" | "false" => return AnswerValue::Boolean { value: false },
            _ => {}
        }
        let Some(c) = number_re().captures(t) else {
            return AnswerValue::Text { value: t.to_string() };
        };
        let open = c.name("open").is_some();
        let close = c.name("close").is_some();
        if open != close {
            return AnswerValue::Text { value: t.to_string() };
        }
        let digits = c["num"].replace(',', "");
        let Ok(mut v) = digits.parse::<f64>() else {
            return AnswerValue::Text { value: t.to_string() };
        };
        if c.name("sign").is_some_and(|m| m.as_str() == "-") || c.name("sign2").is_some() || open {
            v = -v;
        }
        let has_dollar = c.name("cur").is_some();
        let suffix = c.name("suffix").map(|m| m.as_str().to_lowercase());
        let pct = c.name("pct").is_some();
        if pct {
            return AnswerValue::Percent { value: v };
        }
        match suffix.as_deref() {
            Some("million" | "mn" | "m") => v *= 1e6,
            Some("billion" | "bn" | "b") => v *= 1e9,
            Some("thousand" | "k") => v *= 1e3,
            _ => {}
        }
        let rest = c.name("rest").map(|m| m.as_str().trim().to_string()).filter(|r| !r.is_empty());
        let unit = if has_dollar { Some("USD".to_string()) } else { rest };
        AnswerValue::Number { value: v, unit }
    }
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?ix)^
            (?P<sign>[-+−])?\s*
            (?P<open>\()?\s*
            (?P<cur>\$|usd\s*)?\s*
            (?P<sign2>-)?
            (?P<num>\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d*\.\d+|\d+)
            \s*(?P<close>\))?
            \s*(?:(?P<pct>%|\s*percent\b)|(?P<suffix>million|billion|thousand|mn|bn|m|b|k)\b)?
            \s*(?P<rest>[a-z][a-z\s]*)?
            $",
        )
        .unwrap()
    })
}

impl fmt::Display for AnswerValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerValue::Number { value, unit } => {
                write!(f, "{}", fmt_num(*value))?;
                match unit.as_deref() {
                    Some(u) => write!(f, " {u}"),
                    None => Ok(()),
                }
            }
            AnswerValue::Percent { value } => write!(f, "{}%", fmt_num(*value)),
            AnswerValue::Boolean { value } => f.write_str(if *value { "yes" } else { "no" }),
            AnswerValue::Text { value } => f.write_str(value),
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}
