//! Pre-inference screening of intents and taint tagging of context.

use std::fmt;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub const DEFAULT_MAX_CHARS: usize = 4_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceTag {
    User,
    EmailBody,
    External,
    System,
}

impl SourceTag {
    fn untrusted(self) -> bool {
        matches!(self, SourceTag::EmailBody | SourceTag::External)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSegment {
    pub text: String,
    pub source_tag: SourceTag,
    pub tainted: bool,
}

impl ContextSegment {
    pub fn new(text: impl Into<String>, source_tag: SourceTag) -> Self {
        Self {
            text: text.into(),
            source_tag,
            tainted: source_tag.untrusted(),
        }
    }

    /// Taint is sticky: once set it is never cleared.
    pub fn taint(&mut self) {
        self.tainted = true;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictReason {
    Clean,
    InjectionPattern,
    ExcessiveLength,
}

impl fmt::Display for VerdictReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictReason::Clean => "CLEAN",
            VerdictReason::InjectionPattern => "INJECTION_PATTERN",
            VerdictReason::ExcessiveLength => "EXCESSIVE_LENGTH",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirewallVerdict {
    pub allowed: bool,
    pub matched_pattern: Option<String>,
    pub reason: VerdictReason,
}

impl FirewallVerdict {
    fn clean() -> Self {
        Self {
            allowed: true,
            matched_pattern: None,
            reason: VerdictReason::Clean,
        }
    }

    fn blocked(reason: VerdictReason, pattern: Option<String>) -> Self {
        Self {
            allowed: false,
            matched_pattern: pattern,
            reason,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FirewallError {
    #[error("pattern file line {line}: missing regex after pattern id '{id}'")]
    MissingRegex { line: usize, id: String },
    #[error("pattern file line {line}: duplicate pattern id '{id}'")]
    DuplicateId { line: usize, id: String },
    #[error("pattern file line {line}: {source}")]
    BadRegex {
        line: usize,
        #[source]
        source: regex::Error,
    },
}

#[derive(Debug, Clone)]
struct Pattern {
    id: String,
    regex: Regex,
}

#[derive(Debug, Clone)]
pub struct Firewall {
    patterns: Vec<Pattern>,
    max_chars: usize,
}

impl Firewall {
    /// Parses a pattern file: one `<id> <regex>` per line, `#` starts a
    /// comment line, blank lines are ignored.
    pub fn from_pattern_file(text: &str, max_chars: usize) -> Result<Self, FirewallError> {
        let mut patterns: Vec<Pattern> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (id, rest) = match trimmed.split_once(char::is_whitespace) {
                Some((id, rest)) if !rest.trim().is_empty() => (id, rest.trim()),
                _ => {
                    return Err(FirewallError::MissingRegex {
                        line,
                        id: trimmed.to_string(),
                    })
                }
            };
            if patterns.iter().any(|p| p.id == id) {
                return Err(FirewallError::DuplicateId {
                    line,
                    id: id.to_string(),
                });
            }
            let regex = RegexBuilder::new(rest)
                .case_insensitive(true)
                .build()
                .map_err(|source| FirewallError::BadRegex { line, source })?;
            patterns.push(Pattern {
                id: id.to_string(),
                regex,
            });
        }
        Ok(Self {
            patterns,
            max_chars,
        })
    }

    pub fn pattern_count(&self) -> usize {
        self.patterns.len()
    }

    pub fn pattern_ids(&self) -> impl Iterator<Item = &str> {
        self.patterns.iter().map(|p| p.id.as_str())
    }

    pub fn max_chars(&self) -> usize {
        self.max_chars
    }

    pub fn screen_intent(&self, text: &str) -> FirewallVerdict {
        let normalized: String = text.nfc().collect();
        if normalized.chars().count() > self.max_chars {
            return FirewallVerdict::blocked(VerdictReason::ExcessiveLength, None);
        }
        match self.patterns.iter().find(|p| p.regex.is_match(&normalized)) {
            Some(p) => FirewallVerdict::blocked(VerdictReason::InjectionPattern, Some(p.id.clone())),
            None => FirewallVerdict::clean(),
        }
    }
}

pub fn ingest_context<I, S>(segments: I) -> Vec<ContextSegment>
where
    I: IntoIterator<Item = (S, SourceTag)>,
    S: Into<String>,
{
    segments
        .into_iter()
        .map(|(text, tag)| ContextSegment::new(text, tag))
        .collect()
}

pub fn context_is_tainted(segments: &[ContextSegment]) -> bool {
    segments.iter().any(|s| s.tainted)
}
