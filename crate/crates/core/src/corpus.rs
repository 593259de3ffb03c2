//! BIO-annotated threat-report corpora.
//!
//! Annotation files are token-per-line text: `<token>\t<bio-label>`, with a
//! blank line closing each sentence. The label column is optional and
//! defaults to `O`, so unannotated reports ingest the same way. A sentence is
//! [`Label::Relevant`] as soon as one of its tokens carries a `B` or `I` tag.
//!
//! The canonical dump format is JSON lines, one sentence per line:
//! `{"doc_id", "index", "tokens", "bio", "label"}`. `label` is `null` when the
//! source document carried no annotations at all.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Add;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BioPrefix {
    B,
    I,
    O,
}

/// A BIO tag with its attribute suffix (`B-Action`) kept verbatim.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BioTag {
    pub prefix: BioPrefix,
    pub suffix: Option<String>,
}

impl BioTag {
    pub const OUTSIDE: BioTag = BioTag {
        prefix: BioPrefix::O,
        suffix: None,
    };

    pub fn new(prefix: BioPrefix, suffix: Option<String>) -> Self {
        Self { prefix, suffix }
    }

    pub fn is_outside(&self) -> bool {
        self.prefix == BioPrefix::O
    }
}

impl FromStr for BioTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (head, suffix) = match s.split_once('-') {
            Some((head, rest)) => (head, Some(rest.to_string())),
            None => (s, None),
        };
        let prefix = match head {
            "B" => BioPrefix::B,
            "I" => BioPrefix::I,
            "O" => BioPrefix::O,
            _ => return Err(format!("invalid BIO label `{s}`")),
        };
        if matches!(suffix.as_deref(), Some("")) {
            return Err(format!("invalid BIO label `{s}`"));
        }
        Ok(BioTag { prefix, suffix })
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = match self.prefix {
            BioPrefix::B => "B",
            BioPrefix::I => "I",
            BioPrefix::O => "O",
        };
        match &self.suffix {
            Some(suffix) => write!(f, "{head}-{suffix}"),
            None => f.write_str(head),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token {
    pub text: String,
    pub bio: BioTag,
}

impl Token {
    /// Builds a token, rejecting empty text or text containing whitespace.
    pub fn new(text: impl Into<String>, bio: BioTag) -> Result<Self, String> {
        let text = text.into();
        if text.is_empty() {
            return Err("empty token".into());
        }
        if text.chars().any(char::is_whitespace) {
            return Err(format!("token `{text}` contains whitespace"));
        }
        Ok(Self { text, bio })
    }

    pub fn outside(text: impl Into<String>) -> Result<Self, String> {
        Self::new(text, BioTag::OUTSIDE)
    }
}

/// Binary sentence class. `Relevant` sentences describe malware behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum Label {
    #[default]
    Irrelevant = 0,
    Relevant = 1,
}

impl Label {
    pub fn from_bool(relevant: bool) -> Self {
        if relevant {
            Label::Relevant
        } else {
            Label::Irrelevant
        }
    }

    pub fn is_relevant(self) -> bool {
        self == Label::Relevant
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Irrelevant),
            1 => Some(Label::Relevant),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Relevant => "relevant",
            Label::Irrelevant => "irrelevant",
        })
    }
}

/// Items that carry a binary class label.
pub trait Labeled {
    fn label(&self) -> Label;
}

impl Labeled for Label {
    fn label(&self) -> Label {
        *self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sentence {
    pub doc_id: String,
    pub index: usize,
    pub tokens: Vec<Token>,
    pub label: Label,
    /// `true` when the label comes from annotations (token tags or a gold
    /// override file) rather than from an unannotated source.
    pub gold: bool,
}

impl Sentence {
    /// Builds a sentence whose label is derived from its tags.
    pub fn from_tokens(doc_id: impl Into<String>, index: usize, tokens: Vec<Token>) -> Result<Self> {
        let label = derive_sentence_label(&tokens)?;
        Ok(Self {
            doc_id: doc_id.into(),
            index,
            tokens,
            label,
            gold: true,
        })
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, tok) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&tok.text);
        }
        out
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }
}

impl Labeled for Sentence {
    fn label(&self) -> Label {
        self.label
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    /// Renumbers sentence indices to `0..n` and stamps the document id on each.
    pub fn new(id: impl Into<String>, mut sentences: Vec<Sentence>) -> Self {
        let id = id.into();
        for (i, s) in sentences.iter_mut().enumerate() {
            s.index = i;
            s.doc_id.clone_from(&id);
        }
        Self { id, sentences }
    }

    pub fn is_annotated(&self) -> bool {
        self.sentences.iter().all(|s| s.gold)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub split: Split,
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(split: Split, documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateDocId(doc.id.clone()));
            }
        }
        Ok(Self { split, documents })
    }

    pub fn empty(split: Split) -> Self {
        Self {
            split,
            documents: Vec::new(),
        }
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.documents.iter().flat_map(|d| d.sentences.iter())
    }

    pub fn n_sentences(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    /// Replaces every document's sentences through `f`, dropping `None`s and
    /// renumbering. Documents left without sentences are kept (empty).
    pub fn map_sentences<F>(&self, mut f: F) -> Corpus
    where
        F: FnMut(&Sentence) -> Option<Sentence>,
    {
        let documents = self
            .documents
            .iter()
            .map(|d| Document::new(d.id.clone(), d.sentences.iter().filter_map(&mut f).collect()))
            .collect();
        Corpus {
            split: self.split,
            documents,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_documents: usize,
    pub n_sentences: usize,
    pub n_relevant: usize,
    pub n_irrelevant: usize,
}

impl Add for CorpusStats {
    type Output = CorpusStats;

    fn add(self, rhs: Self) -> Self {
        CorpusStats {
            n_documents: self.n_documents + rhs.n_documents,
            n_sentences: self.n_sentences + rhs.n_sentences,
            n_relevant: self.n_relevant + rhs.n_relevant,
            n_irrelevant: self.n_irrelevant + rhs.n_irrelevant,
        }
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "documents={} sentences={} relevant={} irrelevant={}",
            self.n_documents, self.n_sentences, self.n_relevant, self.n_irrelevant
        )
    }
}

/// `Irrelevant` iff every tag is `O`.
pub fn derive_sentence_label(tokens: &[Token]) -> Result<Label> {
    if tokens.is_empty() {
        return Err(Error::EmptyTokens);
    }
    Ok(Label::from_bool(tokens.iter().any(|t| !t.bio.is_outside())))
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats {
        n_documents: corpus.documents.len(),
        ..Default::default()
    };
    for s in corpus.sentences() {
        stats.n_sentences += 1;
        match s.label {
            Label::Relevant => stats.n_relevant += 1,
            Label::Irrelevant => stats.n_irrelevant += 1,
        }
    }
    stats
}

/// Concatenates two corpora (e.g. task data plus scraped reports for LM
/// training). Document ids must be disjoint. The result keeps `a`'s split.
pub fn merge_corpora(a: &Corpus, b: &Corpus) -> Result<Corpus> {
    let ids: HashSet<&str> = a.documents.iter().map(|d| d.id.as_str()).collect();
    if let Some(dup) = b.documents.iter().find(|d| ids.contains(d.id.as_str())) {
        return Err(Error::DuplicateDocId(dup.id.clone()));
    }
    let mut documents = a.documents.clone();
    documents.extend(b.documents.iter().cloned());
    Corpus::new(a.split, documents)
}

fn line_of_offset(bytes: &[u8], offset: usize) -> usize {
    bytes[..offset].iter().filter(|&&b| b == b'\n').count() + 1
}

/// Parses one token-per-line annotation file.
pub fn parse_annotated_document(raw: &[u8], doc_id: &str) -> Result<Document> {
    let text = std::str::from_utf8(raw).map_err(|e| Error::Parse {
        line: line_of_offset(raw, e.valid_up_to()),
        message: "invalid UTF-8".into(),
    })?;
    if text.trim().is_empty() {
        return Err(Error::EmptyDocument);
    }

    let mut sentences = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    let mut any_label_column = false;

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() > 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected at most 2 tab-separated fields, found {}", fields.len()),
            });
        }
        let bio = match fields.get(1).map(|f| f.trim()) {
            Some(label) if !label.is_empty() => {
                any_label_column = true;
                label
                    .parse::<BioTag>()
                    .map_err(|message| Error::Parse { line: line_no, message })?
            }
            _ => BioTag::OUTSIDE,
        };
        let token = Token::new(fields[0], bio).map_err(|message| Error::Parse { line: line_no, message })?;
        current.push(token);
    }
    if !current.is_empty() {
        sentences.push(current);
    }

    let sentences = sentences
        .into_iter()
        .enumerate()
        .map(|(i, tokens)| {
            let mut s = Sentence::from_tokens(doc_id, i, tokens)?;
            s.gold = any_label_column;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Document::new(doc_id, sentences))
}

/// Inverse of [`parse_annotated_document`]. The label column is written only
/// for annotated documents.
pub fn write_annotated_document(doc: &Document) -> String {
    let labelled = doc.is_annotated();
    let mut out = String::new();
    for (i, s) in doc.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for t in &s.tokens {
            out.push_str(&t.text);
            if labelled {
                out.push('\t');
                out.push_str(&t.bio.to_string());
            }
            out.push('\n');
        }
    }
    out
}

/// Reads every `*.tsv` file in `dir` (sorted by name, document id = file
/// stem). Files are parsed in parallel on the current rayon pool.
pub fn load_tsv_dir(dir: &Path, split: Split) -> Result<Corpus> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::from(e).in_file(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyCorpus.in_file(dir));
    }
    let documents = files
        .par_iter()
        .map(|path| {
            let raw = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            parse_annotated_document(&raw, &id).map_err(|e| e.in_file(path))
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(split, documents)
}

/// Loads a split from either a directory of `.tsv` files or a JSONL dump.
pub fn load_corpus(path: &Path, split: Split) -> Result<Corpus> {
    if path.is_dir() {
        load_tsv_dir(path, split)
    } else {
        let file = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
        read_jsonl(std::io::BufReader::new(file), split).map_err(|e| e.in_file(path))
    }
}

/// One line of the canonical corpus dump.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub doc_id: String,
    pub index: usize,
    pub tokens: Vec<String>,
    pub bio: Vec<String>,
    pub label: Option<u8>,
}

impl From<&Sentence> for SentenceRecord {
    fn from(s: &Sentence) -> Self {
        SentenceRecord {
            doc_id: s.doc_id.clone(),
            index: s.index,
            tokens: s.tokens.iter().map(|t| t.text.clone()).collect(),
            bio: s.tokens.iter().map(|t| t.bio.to_string()).collect(),
            label: s.gold.then(|| s.label.as_u8()),
        }
    }
}

impl SentenceRecord {
    pub fn into_sentence(self) -> std::result::Result<Sentence, String> {
        if self.tokens.len() != self.bio.len() {
            return Err(format!("{} tokens but {} BIO tags", self.tokens.len(), self.bio.len()));
        }
        let tokens = self
            .tokens
            .into_iter()
            .zip(self.bio)
            .map(|(text, bio)| Token::new(text, bio.parse()?))
            .collect::<std::result::Result<Vec<_>, String>>()?;
        let derived = derive_sentence_label(&tokens).map_err(|e| e.to_string())?;
        let (label, gold) = match self.label {
            Some(v) => (Label::from_u8(v).ok_or(format!("invalid label {v}"))?, true),
            None => (derived, false),
        };
        Ok(Sentence {
            doc_id: self.doc_id,
            index: self.index,
            tokens,
            label,
            gold,
        })
    }
}

pub fn write_jsonl<'a, W: Write>(mut out: W, sentences: impl IntoIterator<Item = &'a Sentence>) -> Result<()> {
    for s in sentences {
        serde_json::to_writer(&mut out, &SentenceRecord::from(s))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn corpus_to_jsonl(corpus: &Corpus) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, corpus.sentences())?;
    Ok(buf)
}

/// Reads a JSONL dump back into documents, grouping consecutive lines by
/// `doc_id`. Indices within a document must run `0..n`.
pub fn read_jsonl<R: BufRead>(reader: R, split: Split) -> Result<Corpus> {
    let mut documents: Vec<Document> = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SentenceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let sentence = record
            .into_sentence()
            .map_err(|message| Error::Parse { line: line_no, message })?;
        let slot = match index_of.get(&sentence.doc_id) {
            Some(&slot) => slot,
            None => {
                index_of.insert(sentence.doc_id.clone(), documents.len());
                documents.push(Document {
                    id: sentence.doc_id.clone(),
                    sentences: Vec::new(),
                });
                documents.len() - 1
            }
        };
        let doc = &mut documents[slot];
        if sentence.index != doc.sentences.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "document `{}`: expected sentence index {}, found {}",
                    doc.id,
                    doc.sentences.len(),
                    sentence.index
                ),
            });
        }
        doc.sentences.push(sentence);
    }
    Corpus::new(split, documents)
}

/// Parses a gold-label override file: `doc_id\tindex\tlabel` per line.
pub fn parse_gold_labels(text: &str) -> Result<HashMap<(String, usize), Label>> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        let [doc_id, index, label] = fields[..] else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        };
        let bad = |what: &str| Error::Parse {
            line: line_no,
            message: format!("invalid {what}"),
        };
        let index: usize = index.trim().parse().map_err(|_| bad("sentence index"))?;
        let label = label
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| bad("label"))?;
        out.insert((doc_id.to_string(), index), label);
    }
    Ok(out)
}

/// Attaches separately distributed gold labels. Every override must name an
/// existing sentence.
pub fn apply_gold_labels(corpus: &mut Corpus, overrides: &HashMap<(String, usize), Label>) -> Result<usize> {
    let mut applied = 0;
    for doc in &mut corpus.documents {
        for s in &mut doc.sentences {
            if let Some(&label) = overrides.get(&(doc.id.clone(), s.index)) {
                s.label = label;
                s.gold = true;
                applied += 1;
            }
        }
    }
    if applied != overrides.len() {
        return Err(Error::Validation(format!(
            "{} gold labels refer to unknown sentences",
            overrides.len() - applied
        )));
    }
    Ok(applied)
}
