//! Indicator-of-compromise normalization.
//!
//! Artifacts are rewritten to bracketed placeholders, tried in a fixed order
//! so the most specific structural pattern wins:
//!
//! | order | placeholder | matches |
//! |-------|-------------|---------|
//! | 1 | `[IP]` | four dot-separated decimal octets, each 0-255, no leading zeros |
//! | 2 | `[ADDRESS]` | `0x` followed by 4-16 hex digits |
//! | 3 | `[PATH]` | drive prefix `X:\` or at least two `/` or `\` separators |
//! | 4 | `[MALWARE]` | >= 3 dot-separated alphanumeric segments, one of them a platform name |
//! | 5 | `[EXE]` | name ending in `.exe` |
//! | 6 | `[FILE]` | name ending in a listed document/script extension |
//!
//! Matching is per whitespace token after trimming wrapping punctuation
//! (quotes, brackets, trailing `,.;:!?`). Tokens that a tokenizer split around
//! `.`, `/`, `\` or `:` (`copy . exe`) are re-joined when the joined string
//! matches a rule; the merged span becomes a single placeholder token.
//!
//! Afterwards punctuation and standalone numbers are stripped (placeholders
//! are left intact) and the sentence is dropped when it is empty, numbers
//! only, or fails the ASCII-letter-ratio English heuristic.

use std::fmt;
use std::ops::AddAssign;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BioPrefix, BioTag, Corpus, Document, Sentence, Token};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Placeholder {
    Exe,
    Address,
    Malware,
    File,
    Path,
    Ip,
}

impl Placeholder {
    pub const ALL: [Placeholder; 6] = [
        Placeholder::Exe,
        Placeholder::Address,
        Placeholder::Malware,
        Placeholder::File,
        Placeholder::Path,
        Placeholder::Ip,
    ];

    pub fn surface(self) -> &'static str {
        match self {
            Placeholder::Exe => "[EXE]",
            Placeholder::Address => "[ADDRESS]",
            Placeholder::Malware => "[MALWARE]",
            Placeholder::File => "[FILE]",
            Placeholder::Path => "[PATH]",
            Placeholder::Ip => "[IP]",
        }
    }

    pub fn name(self) -> &'static str {
        let s = self.surface();
        &s[1..s.len() - 1]
    }

    pub fn from_surface(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.surface() == s)
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.surface())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DropReason {
    NotEnglish,
    NumbersOnly,
    Empty,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::NotEnglish => "NotEnglish",
            DropReason::NumbersOnly => "NumbersOnly",
            DropReason::Empty => "Empty",
        })
    }
}

/// Per-placeholder substitution counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionCounts([usize; 6]);

impl SubstitutionCounts {
    pub fn get(&self, kind: Placeholder) -> usize {
        self.0[kind as usize]
    }

    fn bump(&mut self, kind: Placeholder) {
        self.0[kind as usize] += 1;
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

impl AddAssign for SubstitutionCounts {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NormalizeReport {
    pub substitutions: SubstitutionCounts,
    pub dropped: bool,
    pub drop_reason: Option<DropReason>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterDecision {
    pub keep: bool,
    pub reason: Option<DropReason>,
}

impl FilterDecision {
    const KEEP: FilterDecision = FilterDecision {
        keep: true,
        reason: None,
    };

    fn drop(reason: DropReason) -> Self {
        FilterDecision {
            keep: false,
            reason: Some(reason),
        }
    }
}

/// Tunable pieces of the rule set; loadable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleSet {
    /// Extensions (no dot, case-insensitive) mapped to `[FILE]`.
    pub file_extensions: Vec<String>,
    /// Platform segments that mark an AV-style malware name.
    pub malware_platforms: Vec<String>,
    /// Minimum share of ASCII letters among non-space characters.
    pub english_letter_ratio: f64,
    pub address_min_hex: usize,
    pub address_max_hex: usize,
    /// Longest run of tokenizer-split tokens considered for re-joining.
    pub max_merge_tokens: usize,
}

impl Default for RuleSet {
    fn default() -> Self {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        RuleSet {
            file_extensions: owned(&[
                "bat", "doc", "docx", "txt", "dll", "pdf", "js", "vbs", "ps1", "zip", "rar", "tmp", "dat", "xls", "rtf",
            ]),
            malware_platforms: owned(&[
                "Win32", "Win64", "W32", "W97M", "MSIL", "OSX", "Linux", "Android", "JS", "VBS",
            ]),
            english_letter_ratio: 0.60,
            address_min_hex: 4,
            address_max_hex: 16,
            max_merge_tokens: 9,
        }
    }
}

impl FromStr for RuleSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let rules: RuleSet = toml::from_str(s)?;
        rules.validate()?;
        Ok(rules)
    }
}

impl RuleSet {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        text.parse().map_err(|e: Error| e.in_file(path))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.english_letter_ratio) {
            return Err(Error::InvalidConfig("english_letter_ratio must be in [0, 1]".into()));
        }
        if self.address_min_hex == 0 || self.address_min_hex > self.address_max_hex {
            return Err(Error::InvalidConfig("invalid address hex-digit bounds".into()));
        }
        if self.max_merge_tokens == 0 {
            return Err(Error::InvalidConfig("max_merge_tokens must be positive".into()));
        }
        Ok(())
    }
}

const LEADING_WRAP: &[char] = &['"', '\'', '(', '[', '{', '<', '`'];
const TRAILING_WRAP: &[char] = &['"', '\'', ')', ']', '}', '>', ',', '.', ';', ':', '!', '?', '`'];
const JOINERS: &[char] = &['.', '/', '\\', ':'];

/// Splits a token into (leading punctuation, core, trailing punctuation).
fn trim_wrapping(token: &str) -> (&str, &str, &str) {
    let start = token.len() - token.trim_start_matches(LEADING_WRAP).len();
    let rest = &token[start..];
    let core = rest.trim_end_matches(TRAILING_WRAP);
    (&token[..start], core, &rest[core.len()..])
}

fn is_joiner(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| JOINERS.contains(&c))
}

fn is_ip(s: &str) -> bool {
    let parts: Vec<&str> = s.split('.').collect();
    parts.len() == 4
        && parts.iter().all(|p| {
            !p.is_empty()
                && p.len() <= 3
                && p.bytes().all(|b| b.is_ascii_digit())
                && (p.len() == 1 || !p.starts_with('0'))
                && p.parse::<u16>().is_ok_and(|v| v <= 255)
        })
}

/// Compiled rule set.
#[derive(Clone, Debug)]
pub struct Normalizer {
    rules: RuleSet,
    extensions: Vec<String>,
    platforms: Vec<String>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::new(RuleSet::default())
    }
}

/// One output token of the substitution pass.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Span {
    text: String,
    kind: Option<Placeholder>,
    /// Source token range `[start, end)`.
    start: usize,
    end: usize,
}

impl Normalizer {
    pub fn new(rules: RuleSet) -> Self {
        let extensions = rules
            .file_extensions
            .iter()
            .map(|e| format!(".{}", e.trim_start_matches('.').to_ascii_lowercase()))
            .collect();
        let platforms = rules.malware_platforms.iter().map(|p| p.to_ascii_lowercase()).collect();
        Self {
            rules,
            extensions,
            platforms,
        }
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    fn is_address(&self, s: &str) -> bool {
        let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) else {
            return false;
        };
        (self.rules.address_min_hex..=self.rules.address_max_hex).contains(&hex.len())
            && hex.bytes().all(|b| b.is_ascii_hexdigit())
    }

    fn is_path(&self, s: &str) -> bool {
        let b = s.as_bytes();
        let drive = b.len() >= 3 && b[0].is_ascii_alphabetic() && b[1] == b':' && b[2] == b'\\';
        drive || s.chars().filter(|&c| c == '/' || c == '\\').count() >= 2
    }

    fn is_malware(&self, s: &str) -> bool {
        let segments: Vec<&str> = s.split('.').collect();
        segments.len() >= 3
            && segments
                .iter()
                .all(|seg| !seg.is_empty() && seg.chars().all(|c| c.is_ascii_alphanumeric()))
            && segments
                .iter()
                .any(|seg| self.platforms.iter().any(|p| seg.eq_ignore_ascii_case(p)))
    }

    fn has_extension(s: &str, ext: &str) -> bool {
        s.len() > ext.len()
            && s.is_char_boundary(s.len() - ext.len())
            && s[s.len() - ext.len()..].eq_ignore_ascii_case(ext)
    }

    fn is_exe(&self, s: &str) -> bool {
        Self::has_extension(s, ".exe")
    }

    fn is_file(&self, s: &str) -> bool {
        self.extensions.iter().any(|ext| Self::has_extension(s, ext))
    }

    /// Classifies a bare artifact string (no wrapping punctuation).
    pub fn classify(&self, core: &str) -> Option<Placeholder> {
        if core.is_empty() || Placeholder::from_surface(core).is_some() {
            return None;
        }
        if is_ip(core) {
            Some(Placeholder::Ip)
        } else if self.is_address(core) {
            Some(Placeholder::Address)
        } else if self.is_path(core) {
            Some(Placeholder::Path)
        } else if self.is_malware(core) {
            Some(Placeholder::Malware)
        } else if self.is_exe(core) {
            Some(Placeholder::Exe)
        } else if self.is_file(core) {
            Some(Placeholder::File)
        } else {
            None
        }
    }

    fn substitute_token(&self, token: &str) -> (String, Option<Placeholder>) {
        let (lead, core, trail) = trim_wrapping(token);
        match self.classify(core) {
            Some(kind) => (format!("{lead}{}{trail}", kind.surface()), Some(kind)),
            None => (token.to_string(), None),
        }
    }

    /// Longest re-joinable run starting at `i`, if any.
    fn merged_span(&self, tokens: &[&str], i: usize) -> Option<(usize, Placeholder)> {
        let max_end = tokens.len().min(i + self.rules.max_merge_tokens);
        (i + 2..=max_end).rev().find_map(|end| {
            let run = &tokens[i..end];
            // Ends are words; every adjacent pair has a joiner between them.
            if is_joiner(run[0])
                || is_joiner(run[run.len() - 1])
                || run.windows(2).any(|w| !is_joiner(w[0]) && !is_joiner(w[1]))
            {
                return None;
            }
            self.classify(&run.concat()).map(|kind| (end, kind))
        })
    }

    fn substitute_spans(&self, tokens: &[&str]) -> Vec<Span> {
        let mut spans = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            if let Some((end, kind)) = self.merged_span(tokens, i) {
                spans.push(Span {
                    text: kind.surface().to_string(),
                    kind: Some(kind),
                    start: i,
                    end,
                });
                i = end;
            } else {
                let (text, kind) = self.substitute_token(tokens[i]);
                spans.push(Span {
                    text,
                    kind,
                    start: i,
                    end: i + 1,
                });
                i += 1;
            }
        }
        spans
    }

    /// Rewrites every artifact to its placeholder. Whitespace is collapsed to
    /// single spaces.
    pub fn substitute_artifacts(&self, text: &str) -> (String, NormalizeReport) {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let spans = self.substitute_spans(&tokens);
        let mut report = NormalizeReport::default();
        for kind in spans.iter().filter_map(|s| s.kind) {
            report.substitutions.bump(kind);
        }
        let out = spans.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
        (out, report)
    }

    /// Drops punctuation and standalone numbers from a token, keeping any
    /// placeholder surfaces intact. Returns `None` when nothing is left.
    fn strip_token(token: &str) -> Option<String> {
        let mut out = String::with_capacity(token.len());
        let mut has_placeholder = false;
        let mut rest = token;
        while let Some(c) = rest.chars().next() {
            if c == '[' {
                if let Some(p) = Placeholder::ALL.into_iter().find(|p| rest.starts_with(p.surface())) {
                    out.push_str(p.surface());
                    rest = &rest[p.surface().len()..];
                    has_placeholder = true;
                    continue;
                }
            }
            if c.is_alphanumeric() {
                out.push(c);
            }
            rest = &rest[c.len_utf8()..];
        }
        if out.is_empty() || (!has_placeholder && out.chars().all(|c| c.is_numeric())) {
            None
        } else {
            Some(out)
        }
    }

    pub fn strip_punct_numbers(&self, text: &str) -> String {
        strip_punct_numbers(text)
    }

    pub fn filter_sentence(&self, text: &str) -> FilterDecision {
        if text.trim().is_empty() {
            return FilterDecision::drop(DropReason::Empty);
        }
        let mut without = text.to_string();
        for p in Placeholder::ALL {
            without = without.replace(p.surface(), " ");
        }
        let chars: Vec<char> = without.chars().filter(|c| !c.is_whitespace()).collect();
        if chars.iter().all(|c| c.is_ascii_digit()) {
            return FilterDecision::drop(DropReason::NumbersOnly);
        }
        let letters = chars.iter().filter(|c| c.is_ascii_alphabetic()).count();
        if (letters as f64) < self.rules.english_letter_ratio * chars.len() as f64 {
            return FilterDecision::drop(DropReason::NotEnglish);
        }
        FilterDecision::KEEP
    }

    /// substitute -> strip -> filter on a tagged sentence. Surviving tokens
    /// keep their tags; a merged span is tagged `B` (with the first non-`O`
    /// suffix) when any constituent was `B`/`I`, else `O`. The sentence label
    /// is left as it was.
    pub fn normalize_sentence(&self, sentence: &Sentence) -> (Option<Sentence>, NormalizeReport) {
        let words: Vec<&str> = sentence.words().collect();
        let spans = self.substitute_spans(&words);
        let mut report = NormalizeReport::default();
        let mut tokens = Vec::with_capacity(spans.len());
        for span in spans {
            if let Some(kind) = span.kind {
                report.substitutions.bump(kind);
            }
            let Some(text) = Self::strip_token(&span.text) else {
                continue;
            };
            let source = &sentence.tokens[span.start..span.end];
            let bio = if source.len() == 1 {
                source[0].bio.clone()
            } else {
                match source.iter().find(|t| !t.bio.is_outside()) {
                    Some(t) => BioTag::new(BioPrefix::B, t.bio.suffix.clone()),
                    None => BioTag::OUTSIDE,
                }
            };
            tokens.push(Token { text, bio });
        }
        let text = tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
        let decision = self.filter_sentence(&text);
        if !decision.keep {
            report.dropped = true;
            report.drop_reason = decision.reason;
            return (None, report);
        }
        let out = Sentence {
            doc_id: sentence.doc_id.clone(),
            index: sentence.index,
            tokens,
            label: sentence.label,
            gold: sentence.gold,
        };
        (Some(out), report)
    }

    /// Normalizes every document (in parallel); dropped sentences are removed
    /// and the survivors renumbered.
    pub fn normalize_corpus(&self, corpus: &Corpus) -> (Corpus, NormalizeSummary) {
        let per_doc: Vec<(Document, NormalizeSummary)> = corpus
            .documents
            .par_iter()
            .map(|doc| {
                let mut summary = NormalizeSummary::default();
                let mut kept = Vec::new();
                for s in &doc.sentences {
                    let (out, report) = self.normalize_sentence(s);
                    summary.record(&report);
                    kept.extend(out);
                }
                (Document::new(doc.id.clone(), kept), summary)
            })
            .collect();
        let mut summary = NormalizeSummary::default();
        let mut documents = Vec::with_capacity(per_doc.len());
        for (doc, s) in per_doc {
            summary += s;
            documents.push(doc);
        }
        (
            Corpus {
                split: corpus.split,
                documents,
            },
            summary,
        )
    }
}

/// Corpus-level normalization totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NormalizeSummary {
    pub substitutions: SubstitutionCounts,
    pub sentences_in: usize,
    pub dropped_not_english: usize,
    pub dropped_numbers_only: usize,
    pub dropped_empty: usize,
}

impl NormalizeSummary {
    fn record(&mut self, report: &NormalizeReport) {
        self.sentences_in += 1;
        self.substitutions += report.substitutions;
        match report.drop_reason {
            Some(DropReason::NotEnglish) => self.dropped_not_english += 1,
            Some(DropReason::NumbersOnly) => self.dropped_numbers_only += 1,
            Some(DropReason::Empty) => self.dropped_empty += 1,
            None => {}
        }
    }

    pub fn dropped(&self) -> usize {
        self.dropped_not_english + self.dropped_numbers_only + self.dropped_empty
    }

    /// `kind,count` CSV.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["kind", "count"])?;
        for p in Placeholder::ALL {
            w.write_record([p.name(), &self.substitutions.get(p).to_string()])?;
        }
        w.write_record(["sentences_in", &self.sentences_in.to_string()])?;
        w.write_record(["dropped_not_english", &self.dropped_not_english.to_string()])?;
        w.write_record(["dropped_numbers_only", &self.dropped_numbers_only.to_string()])?;
        w.write_record(["dropped_empty", &self.dropped_empty.to_string()])?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

impl AddAssign for NormalizeSummary {
    fn add_assign(&mut self, rhs: Self) {
        self.substitutions += rhs.substitutions;
        self.sentences_in += rhs.sentences_in;
        self.dropped_not_english += rhs.dropped_not_english;
        self.dropped_numbers_only += rhs.dropped_numbers_only;
        self.dropped_empty += rhs.dropped_empty;
    }
}

pub fn substitute_artifacts(text: &str) -> (String, NormalizeReport) {
    Normalizer::default().substitute_artifacts(text)
}

pub fn strip_punct_numbers(text: &str) -> String {
    text.split_whitespace()
        .filter_map(Normalizer::strip_token)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn filter_sentence(text: &str) -> FilterDecision {
    Normalizer::default().filter_sentence(text)
}

pub fn normalize_pipeline(sentence: &Sentence) -> Option<Sentence> {
    Normalizer::default().normalize_sentence(sentence).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn sub(s: &str) -> String {
        substitute_artifacts(s).0
    }

    #[test]
    fn literal_artifacts() {
        assert_eq!(sub("copy.exe"), "[EXE]");
        assert_eq!(sub("0x20000001"), "[ADDRESS]");
        assert_eq!(sub("TrojanDropper.Win32.Agent.life"), "[MALWARE]");
        assert_eq!(sub("192.168.0.1"), "[IP]");
        assert_eq!(sub("999.1.1.1"), "999.1.1.1");
    }

    #[test]
    fn path_beats_exe() {
        assert_eq!(sub(r"C:\Windows\copy.exe"), "[PATH]");
        assert_eq!(sub("/tmp/x/run.sh"), "[PATH]");
    }

    #[test]
    fn wrapping_punctuation_survives_substitution() {
        let (out, report) = substitute_artifacts("dropped (copy.exe), then 10.0.0.1.");
        assert_eq!(out, "dropped ([EXE]), then [IP].");
        assert_eq!(report.substitutions.get(Placeholder::Exe), 1);
        assert_eq!(report.substitutions.get(Placeholder::Ip), 1);
        assert_eq!(report.substitutions.total(), 2);
    }

    #[test]
    fn substitution_is_idempotent() {
        let once = sub(r"copy.exe C:\a\b 0xdeadbeef readme.txt 8.8.8.8");
        assert_eq!(sub(&once), once);
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_punct_numbers("ran, quickly 42 times!"), "ran quickly times");
        assert_eq!(strip_punct_numbers("[ADDRESS] overwritten."), "[ADDRESS] overwritten");
        assert_eq!(strip_punct_numbers(""), "");
        assert_eq!(strip_punct_numbers("([EXE]), 1,000 Win32"), "[EXE] Win32");
    }

    #[test]
    fn filter_examples() {
        assert_eq!(filter_sentence("12 34 56").reason, Some(DropReason::NumbersOnly));
        assert!(filter_sentence("The backdoor contained versioning info").keep);
        assert_eq!(filter_sentence("файл был заражен").reason, Some(DropReason::NotEnglish));
        assert_eq!(filter_sentence("   ").reason, Some(DropReason::Empty));
        assert_eq!(filter_sentence("[IP] [EXE]").reason, Some(DropReason::NumbersOnly));
    }

    fn sentence(tokens: &[(&str, &str)]) -> Sentence {
        let tokens = tokens
            .iter()
            .map(|(t, b)| Token::new(*t, b.parse().unwrap()).unwrap())
            .collect();
        Sentence::from_tokens("d", 0, tokens).unwrap()
    }

    #[test]
    fn pipeline_carries_tags() {
        let s = sentence(&[("It", "O"), ("ran", "O"), ("copy.exe", "B-Action"), (".", "O")]);
        let out = normalize_pipeline(&s).unwrap();
        assert_eq!(out.text(), "It ran [EXE]");
        assert_eq!(out.tokens[2].bio.to_string(), "B-Action");
    }

    #[test]
    fn pipeline_merges_split_artifact() {
        let s = sentence(&[
            ("dropped", "O"),
            ("copy", "O"),
            (".", "I-Entity"),
            ("exe", "I-Entity"),
            ("today", "O"),
        ]);
        let out = normalize_pipeline(&s).unwrap();
        assert_eq!(out.text(), "dropped [EXE] today");
        assert_eq!(out.tokens[1].bio.to_string(), "B-Entity");
        assert_eq!(out.label, Label::Relevant);

        let plain = sentence(&[("saw", "O"), ("copy", "O"), (".", "O"), ("exe", "O")]);
        let out = normalize_pipeline(&plain).unwrap();
        assert_eq!(out.tokens.len(), 2);
        assert!(out.tokens[1].bio.is_outside());

        let only = sentence(&[("copy", "O"), (".", "O"), ("exe", "O")]);
        assert!(normalize_pipeline(&only).is_none());
    }

    #[test]
    fn sentence_end_period_is_not_merged() {
        let s = sentence(&[("the", "O"), ("end", "O"), (".", "O")]);
        assert_eq!(normalize_pipeline(&s).unwrap().text(), "the end");
    }

    #[test]
    fn empty_after_strip_is_dropped() {
        let s = sentence(&[("42", "O"), (",", "O")]);
        let (out, report) = Normalizer::default().normalize_sentence(&s);
        assert!(out.is_none());
        assert_eq!(report.drop_reason, Some(DropReason::Empty));
    }

    #[test]
    fn clean_sentence_is_unchanged() {
        let s = sentence(&[("The", "O"), ("backdoor", "B"), ("ran", "I")]);
        assert_eq!(normalize_pipeline(&s).unwrap(), s);
    }

    #[test]
    fn rules_load_from_toml() {
        let rules: RuleSet = "file_extensions = [\"lnk\"]\nenglish_letter_ratio = 0.5\n"
            .parse()
            .unwrap();
        let n = Normalizer::new(rules);
        assert_eq!(n.classify("a.lnk"), Some(Placeholder::File));
        assert_eq!(n.classify("a.txt"), None);
        assert!("english_letter_ratio = 2.0".parse::<RuleSet>().is_err());
        assert!("bogus = 1".parse::<RuleSet>().is_err());
    }

    #[test]
    fn summary_csv_lists_every_kind() {
        let mut summary = NormalizeSummary::default();
        summary.record(&substitute_artifacts("copy.exe copy2.exe").1);
        let csv = summary.to_csv().unwrap();
        assert!(csv.starts_with("kind,count\nEXE,2\n"));
        assert!(csv.contains("IP,0"));
    }
}
