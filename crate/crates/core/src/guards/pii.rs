//! Pattern-based PII detection and span redaction.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::GuardError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum PiiKind {
    Email,
    Phone,
    Ssn,
    CreditCard,
    /// Deployment-defined kind from `guards.pii.custom`.
    Custom(String),
}

impl PiiKind {
    pub fn as_str(&self) -> &str {
        match self {
            Self::Email => "EMAIL",
            Self::Phone => "PHONE",
            Self::Ssn => "SSN",
            Self::CreditCard => "CREDIT_CARD",
            Self::Custom(k) => k,
        }
    }

    pub fn builtin() -> [PiiKind; 4] {
        [Self::Email, Self::Phone, Self::Ssn, Self::CreditCard]
    }
}

impl From<String> for PiiKind {
    fn from(s: String) -> Self {
        match s.as_str() {
            "EMAIL" => Self::Email,
            "PHONE" => Self::Phone,
            "SSN" => Self::Ssn,
            "CREDIT_CARD" => Self::CreditCard,
            _ => Self::Custom(s),
        }
    }
}

impl From<PiiKind> for String {
    fn from(k: PiiKind) -> Self {
        k.as_str().to_string()
    }
}

impl fmt::Display for PiiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A detected PII occurrence; offsets are byte offsets into the scanned text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiSpan {
    pub kind: PiiKind,
    pub start: usize,
    pub end: usize,
    pub matched_text: String,
}

impl PiiSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    fn overlaps(&self, other: &PiiSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Anything that can find PII spans in text.
pub trait PiiDetector: Send + Sync + fmt::Debug {
    /// Spans sorted by start, non-overlapping.
    fn detect(&self, text: &str) -> Vec<PiiSpan>;
}

static EMAIL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}").unwrap()
});
static SSN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[0-9]{3}-[0-9]{2}-[0-9]{4}").unwrap());
static PHONE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?:\+?1[ .\-]?)?(?:\([0-9]{3}\)[ .\-]?|[0-9]{3}[ .\-]?)[0-9]{3}[ .\-]?[0-9]{4}").unwrap()
});
// digit groups joined by single spaces or hyphens
static DIGIT_RUN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[0-9]+(?:[ \-][0-9]+)*").unwrap());

const CARD_MIN_DIGITS: usize = 13;
const CARD_MAX_DIGITS: usize = 19;

/// Luhn (mod 10) checksum over a string of ASCII digits.
pub fn luhn_valid(digits: &str) -> bool {
    let mut sum = 0u32;
    let mut count = 0usize;
    for (i, c) in digits.bytes().rev().enumerate() {
        if !c.is_ascii_digit() {
            return false;
        }
        let mut d = u32::from(c - b'0');
        if i % 2 == 1 {
            d *= 2;
            if d > 9 {
                d -= 9;
            }
        }
        sum += d;
        count += 1;
    }
    count > 0 && sum % 10 == 0
}

fn char_before(text: &str, at: usize) -> Option<char> {
    text[..at].chars().next_back()
}

fn char_after(text: &str, at: usize) -> Option<char> {
    text[at..].chars().next()
}

fn is_sep(c: char) -> bool {
    matches!(c, ' ' | '-' | '.')
}

/// A numeric match must not be glued to letters or digits, nor be the tail
/// or head of a longer separated digit sequence.
fn numeric_boundary_ok(text: &str, start: usize, end: usize) -> bool {
    let before_ok = match char_before(text, start) {
        None => true,
        Some(c) if c.is_alphanumeric() || c == '+' => false,
        Some(c) if is_sep(c) => !char_before(text, start - c.len_utf8()).is_some_and(|p| p.is_ascii_digit()),
        Some(_) => true,
    };
    let after_ok = match char_after(text, end) {
        None => true,
        Some(c) if c.is_alphanumeric() => false,
        Some(c) if is_sep(c) => !char_after(text, end + c.len_utf8()).is_some_and(|n| n.is_ascii_digit()),
        Some(_) => true,
    };
    before_ok && after_ok
}

fn email_boundary_ok(text: &str, start: usize, end: usize) -> bool {
    let local = |c: char| c.is_alphanumeric() || "._%+-@".contains(c);
    !char_before(text, start).is_some_and(local) && !char_after(text, end).is_some_and(|c| c.is_alphanumeric() || c == '@')
}

/// Every accepted match of `re`, retrying one character later after a rejected
/// match so that valid matches overlapping rejected ones are not lost.
fn scan(re: &Regex, text: &str, accept: impl Fn(usize, usize) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos <= text.len() {
        let Some(m) = re.find_at(text, pos) else { break };
        if m.start() == m.end() {
            pos = m.end() + char_after(text, m.end()).map_or(1, char::len_utf8);
            continue;
        }
        if accept(m.start(), m.end()) {
            out.push((m.start(), m.end()));
            pos = m.end();
        } else {
            pos = m.start() + char_after(text, m.start()).map_or(1, char::len_utf8);
        }
    }
    out
}

fn card_candidates(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for run in DIGIT_RUN.find_iter(text) {
        if char_before(text, run.start()).is_some_and(|c| c.is_alphanumeric())
            || char_after(text, run.end()).is_some_and(|c| c.is_alphanumeric())
        {
            continue;
        }
        // (start, end, digit count) per group
        let mut groups = Vec::new();
        let base = run.start();
        let mut group_start = None;
        for (i, c) in run.as_str().char_indices() {
            match (c.is_ascii_digit(), group_start) {
                (true, None) => group_start = Some(i),
                (false, Some(s)) => {
                    groups.push((base + s, base + i));
                    group_start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = group_start {
            groups.push((base + s, run.end()));
        }
        for i in 0..groups.len() {
            let mut digits = String::new();
            for &(gs, ge) in &groups[i..] {
                digits.push_str(&text[gs..ge]);
                if digits.len() > CARD_MAX_DIGITS {
                    break;
                }
                if digits.len() >= CARD_MIN_DIGITS && luhn_valid(&digits) {
                    out.push((groups[i].0, ge));
                }
            }
        }
    }
    out
}

/// Keep the longest candidates first, then the earliest, dropping overlaps.
pub(crate) fn resolve_overlaps(mut candidates: Vec<PiiSpan>) -> Vec<PiiSpan> {
    candidates.sort_by(|a, b| b.len().cmp(&a.len()).then(a.start.cmp(&b.start)));
    let mut kept: Vec<PiiSpan> = Vec::with_capacity(candidates.len());
    for c in candidates {
        if !kept.iter().any(|k| k.overlaps(&c)) {
            kept.push(c);
        }
    }
    kept.sort_by_key(|s| s.start);
    kept
}

#[derive(Debug, Clone)]
pub struct CustomPattern {
    pub kind: PiiKind,
    pub regex: Regex,
}

/// Regex and checksum detector for the built-in kinds plus configured extras.
#[derive(Debug, Clone, Default)]
pub struct PatternPiiDetector {
    custom: Vec<CustomPattern>,
}

impl PatternPiiDetector {
    pub fn new(custom: Vec<CustomPattern>) -> Self {
        Self { custom }
    }
}

impl PiiDetector for PatternPiiDetector {
    fn detect(&self, text: &str) -> Vec<PiiSpan> {
        let span = |kind: PiiKind, (start, end): (usize, usize)| PiiSpan {
            kind,
            start,
            end,
            matched_text: text[start..end].to_string(),
        };
        let mut candidates = Vec::new();
        candidates.extend(scan(&EMAIL, text, |s, e| email_boundary_ok(text, s, e)).into_iter().map(|r| span(PiiKind::Email, r)));
        candidates.extend(scan(&SSN, text, |s, e| numeric_boundary_ok(text, s, e)).into_iter().map(|r| span(PiiKind::Ssn, r)));
        candidates.extend(scan(&PHONE, text, |s, e| numeric_boundary_ok(text, s, e)).into_iter().map(|r| span(PiiKind::Phone, r)));
        candidates.extend(card_candidates(text).into_iter().map(|r| span(PiiKind::CreditCard, r)));
        for pattern in &self.custom {
            candidates.extend(
                scan(&pattern.regex, text, |_, _| true)
                    .into_iter()
                    .map(|r| span(pattern.kind.clone(), r)),
            );
        }
        resolve_overlaps(candidates)
    }
}

/// Detect the built-in PII kinds in `text`.
pub fn detect_pii(text: &str) -> Vec<PiiSpan> {
    PatternPiiDetector::default().detect(text)
}

/// Replace each span with `[PII:<KIND>]`, leaving all other bytes untouched.
pub fn redact(text: &str, spans: &[PiiSpan]) -> Result<String, GuardError> {
    let mut ordered: Vec<&PiiSpan> = spans.iter().collect();
    ordered.sort_by_key(|s| s.start);
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for span in ordered {
        if span.start >= span.end || span.end > text.len() {
            return Err(GuardError::InvalidSpan(format!(
                "span {}..{} is empty or outside text of length {}",
                span.start,
                span.end,
                text.len()
            )));
        }
        if span.start < cursor {
            return Err(GuardError::InvalidSpan(format!("span {}..{} overlaps a previous span", span.start, span.end)));
        }
        if text.get(span.start..span.end) != Some(span.matched_text.as_str()) {
            return Err(GuardError::InvalidSpan(format!(
                "span {}..{} does not cover {:?}",
                span.start, span.end, span.matched_text
            )));
        }
        out.push_str(&text[cursor..span.start]);
        out.push_str("[PII:");
        out.push_str(span.kind.as_str());
        out.push(']');
        cursor = span.end;
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}
