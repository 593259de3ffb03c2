//! Seeded synthetic corpora used by the tests, the benches and the bundled
//! example data.
//!
//! The classification fixture is lexically separable: relevant sentences
//! always contain a behaviour verb, irrelevant ones never do. Artifacts of
//! all six kinds appear in both classes, in raw form, so normalization has
//! real work to do. A few numbers-only and non-English sentences are mixed
//! into the irrelevant class.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_annotated_document, BioTag, Corpus, Document, Sentence, Split, Token};
use crate::error::{Error, Result};

const ACTORS: &[&str] = &["backdoor", "implant", "trojan", "dropper", "loader"];
const VERBS: &[&str] = &["drops", "downloads", "executes", "injects", "encrypts", "deletes"];
const ORGS: &[&str] = &[
    "Researchers",
    "Analysts",
    "FireEye",
    "Kaspersky",
    "The vendor",
    "Our team",
    "Journalists",
];
const REPORT_VERBS: &[&str] = &[
    "published",
    "described",
    "presented",
    "discussed",
    "documented",
    "summarized",
    "reviewed",
    "shared",
];
const MONTHS: &[&str] = &["January", "March", "May", "July", "September", "November"];
const NAMES: &[&str] = &[
    "svchost", "update", "chrome", "winlogon", "agent", "helper", "install", "setup", "msupdate", "config", "invoice",
    "report", "taskmgr", "spool",
];
const FAMILIES: &[&str] = &[
    "Agent",
    "Zbot",
    "Emotet",
    "Dridex",
    "Poison",
    "Remcos",
    "Nanocore",
    "Darkcomet",
];
const PLATFORMS: &[&str] = &["Win32", "Win64", "MSIL", "W32"];
const PREFIXES: &[&str] = &["Trojan", "TrojanDropper", "Backdoor", "Worm", "Downloader"];
const FILE_EXTS: &[&str] = &["dll", "doc", "pdf", "txt", "bat", "js", "zip", "dat"];
const NON_ENGLISH: &[&str] = &[
    "файл был заражен вредоносной программой",
    "der Angreifer nutzte eine Hintertür",
    "攻击者 使用 了 后门 程序",
];

/// `{A}` actor, `{V}` behaviour verb, `{X}` artifact.
const RELEVANT_TEMPLATES: &[&str] = &[
    "The {A} {V} {X} on the infected host .",
    "Once installed , the {A} {V} {X} and waits for commands .",
    "The {A} {V} {X} to maintain persistence .",
    "The {A} {V} {X} using a hardcoded key .",
    "After execution the {A} {V} {X} every ten minutes .",
    "The {A} then {V} {X} from the compromised machine .",
    "When the {A} starts it {V} {X} silently .",
];

/// `{O}` organisation, `{R}` reporting verb, `{M}` month, `{X}` artifact.
const IRRELEVANT_TEMPLATES: &[&str] = &[
    "{O} {R} the report in {M} .",
    "{O} {R} {X} in a blog post about the campaign .",
    "{O} {R} the findings at a security conference .",
    "This section is {R} by {O} for background .",
    "{O} {R} the timeline of public disclosures .",
    "The company thanked its customers for their support .",
    "{O} {R} the history of the group in {M} .",
    "Attribution remains uncertain according to {O} .",
    "Indicators such as {X} were {R} for defenders .",
];

fn artifact(rng: &mut ChaCha8Rng) -> String {
    let name = *NAMES.choose(rng).expect("non-empty");
    match rng.random_range(0..6) {
        0 => format!(
            "{}.{}.{}.{}",
            rng.random_range(1..=223),
            rng.random_range(0..=255),
            rng.random_range(0..=255),
            rng.random_range(1..=254)
        ),
        1 => format!("0x{:08x}", rng.random::<u32>() | 0x1000_0000),
        2 => match rng.random_range(0..3) {
            0 => format!("C:\\Windows\\System32\\{name}.dll"),
            1 => format!("C:\\Users\\Public\\{name}.exe"),
            _ => format!("/tmp/.{name}/run"),
        },
        3 => format!(
            "{}.{}.{}.{}",
            PREFIXES.choose(rng).expect("non-empty"),
            PLATFORMS.choose(rng).expect("non-empty"),
            FAMILIES.choose(rng).expect("non-empty"),
            ["a", "b", "gen", "life", "xyz"].choose(rng).expect("non-empty")
        ),
        4 => format!("{name}.exe"),
        _ => format!("{name}.{}", FILE_EXTS.choose(rng).expect("non-empty")),
    }
}

fn tag(s: &str) -> BioTag {
    s.parse().expect("valid fixture tag")
}

fn fill(template: &str, rng: &mut ChaCha8Rng) -> Vec<Token> {
    let mut out = Vec::new();
    for piece in template.split(' ') {
        let (words, bio): (String, &str) = match piece {
            "{A}" => (ACTORS.choose(rng).expect("non-empty").to_string(), "B-Entity"),
            "{V}" => (VERBS.choose(rng).expect("non-empty").to_string(), "B-Action"),
            "{X}" => (artifact(rng), "B-Entity"),
            "{O}" => (ORGS.choose(rng).expect("non-empty").to_string(), "O"),
            "{R}" => (REPORT_VERBS.choose(rng).expect("non-empty").to_string(), "O"),
            "{M}" => (MONTHS.choose(rng).expect("non-empty").to_string(), "O"),
            w => (w.to_string(), "O"),
        };
        for w in words.split(' ') {
            out.push(Token::new(w, tag(bio)).expect("fixture tokens are valid"));
        }
    }
    // Only behaviour templates carry tags.
    let relevant = template.contains("{V}");
    if !relevant {
        for t in &mut out {
            t.bio = BioTag::OUTSIDE;
        }
    }
    out
}

fn noise(rng: &mut ChaCha8Rng) -> Vec<Token> {
    let words: Vec<String> = if rng.random_bool(0.5) {
        (0..rng.random_range(2..5))
            .map(|_| rng.random_range(1..10_000).to_string())
            .collect()
    } else {
        NON_ENGLISH
            .choose(rng)
            .expect("non-empty")
            .split(' ')
            .map(str::to_string)
            .collect()
    };
    words
        .iter()
        .map(|w| Token::new(w.as_str(), BioTag::OUTSIDE).expect("fixture tokens are valid"))
        .collect()
}

/// Layout and seed of one synthetic split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixtureSpec {
    pub split: Split,
    pub n_documents: usize,
    pub sentences_per_document: usize,
    pub n_relevant: usize,
    /// Irrelevant sentences that are numbers-only or not English.
    pub n_noise: usize,
    pub seed: u64,
}

impl FixtureSpec {
    pub fn n_sentences(&self) -> usize {
        self.n_documents * self.sentences_per_document
    }
}

/// 20 documents x 10 sentences, 20 relevant (1:9).
pub const TRAIN_SPEC: FixtureSpec = FixtureSpec {
    split: Split::Train,
    n_documents: 20,
    sentences_per_document: 10,
    n_relevant: 20,
    n_noise: 4,
    seed: 0x5eed_0001,
};

/// 10 documents x 10 sentences, 10 relevant (1:9).
pub const DEV_SPEC: FixtureSpec = FixtureSpec {
    split: Split::Dev,
    n_documents: 10,
    sentences_per_document: 10,
    n_relevant: 10,
    n_noise: 2,
    seed: 0x5eed_0002,
};

/// Generates one split. Exactly `n_relevant` sentences are relevant, placed
/// at seeded random positions.
pub fn synthetic_split(spec: &FixtureSpec) -> Result<Corpus> {
    let n = spec.n_sentences();
    if spec.n_relevant + spec.n_noise > n {
        return Err(Error::InvalidConfig(
            "fixture spec has more special sentences than slots".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut kinds: Vec<u8> = std::iter::repeat_n(1u8, spec.n_relevant)
        .chain(std::iter::repeat_n(2u8, spec.n_noise))
        .chain(std::iter::repeat_n(0u8, n - spec.n_relevant - spec.n_noise))
        .collect();
    kinds.shuffle(&mut rng);
    let prefix = spec.split.to_string();
    let mut documents = Vec::with_capacity(spec.n_documents);
    for (d, chunk) in kinds.chunks(spec.sentences_per_document).enumerate() {
        let id = format!("{prefix}-{d:03}");
        let sentences = chunk
            .iter()
            .map(|&k| {
                let tokens = match k {
                    1 => fill(RELEVANT_TEMPLATES.choose(&mut rng).expect("non-empty"), &mut rng),
                    2 => noise(&mut rng),
                    _ => fill(IRRELEVANT_TEMPLATES.choose(&mut rng).expect("non-empty"), &mut rng),
                };
                Sentence::from_tokens(id.as_str(), 0, tokens)
            })
            .collect::<Result<Vec<_>>>()?;
        documents.push(Document::new(id, sentences));
    }
    Corpus::new(spec.split, documents)
}

/// `n` sentences drawn from the same grammar, for property tests.
pub fn synthetic_sentences(n: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let tokens = match rng.random_range(0..10) {
                0..=3 => fill(RELEVANT_TEMPLATES.choose(&mut rng).expect("non-empty"), &mut rng),
                4 => noise(&mut rng),
                _ => fill(IRRELEVANT_TEMPLATES.choose(&mut rng).expect("non-empty"), &mut rng),
            };
            Sentence::from_tokens("synthetic", i, tokens).expect("non-empty")
        })
        .collect()
}

/// Writes `<dir>/train/*.tsv` and `<dir>/dev/*.tsv`.
pub fn write_fixture(dir: &Path) -> Result<()> {
    for spec in [TRAIN_SPEC, DEV_SPEC] {
        let corpus = synthetic_split(&spec)?;
        let sub = dir.join(spec.split.to_string());
        fs::create_dir_all(&sub).map_err(|e| Error::from(e).in_file(&sub))?;
        for doc in &corpus.documents {
            let path = sub.join(format!("{}.tsv", doc.id));
            fs::write(&path, write_annotated_document(doc)).map_err(|e| Error::from(e).in_file(&path))?;
        }
    }
    Ok(())
}

/// 50 sentences `agentI deploys toolJ against hostK` in which every content
/// word occurs exactly once, so each word is recoverable from any other.
pub fn mlm_toy_corpus() -> Corpus {
    const N: usize = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(0x70c0);
    let mut tools: Vec<usize> = (0..N).collect();
    let mut hosts: Vec<usize> = (0..N).collect();
    tools.shuffle(&mut rng);
    hosts.shuffle(&mut rng);
    let sentences = (0..N)
        .map(|i| {
            let text = format!("agent{i} deploys tool{} against host{}", tools[i], hosts[i]);
            let tokens = text
                .split(' ')
                .map(|w| Token::new(w, BioTag::OUTSIDE).expect("valid token"))
                .collect();
            Sentence::from_tokens("toy", i, tokens).expect("non-empty")
        })
        .collect();
    Corpus::new(Split::Train, vec![Document::new("toy", sentences)]).expect("single document")
}

/// Accuracy of a lookup table that, for each sentence and position, predicts
/// the most common word seen at that position among training sentences
/// agreeing on every other position (ties broken lexicographically).
/// 1.0 means the corpus can be memorized exactly.
pub fn lookup_oracle_accuracy(sentences: &[Sentence]) -> f64 {
    let words: Vec<Vec<String>> = sentences
        .iter()
        .map(|s| s.words().map(str::to_lowercase).collect())
        .collect();
    let (mut hits, mut total) = (0usize, 0usize);
    for w in &words {
        for pos in 0..w.len() {
            let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
            for other in &words {
                let agrees = other.len() == w.len() && (0..w.len()).all(|i| i == pos || other[i] == w[i]);
                if agrees {
                    *counts.entry(other[pos].as_str()).or_default() += 1;
                }
            }
            let best = counts
                .iter()
                .fold(("", 0), |b, (&k, &c)| if c > b.1 { (k, c) } else { b })
                .0;
            hits += usize::from(best == w[pos]);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// A short report mixing narrative and behaviour sentences, for the
/// highlight command.
pub fn example_report() -> Document {
    let lines = [
        "Researchers published the report in March .",
        "The backdoor contained versioning info which attempted to masquerade as a Google Chrome File .",
        "The company thanked its customers for their support .",
        "The implant drops update.exe on the infected host .",
        "Attribution remains uncertain according to analysts .",
    ];
    let sentences = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let tokens = l
                .split(' ')
                .map(|w| Token::new(w, BioTag::OUTSIDE).expect("valid token"))
                .collect();
            let mut s = Sentence::from_tokens("example", i, tokens).expect("non-empty");
            s.gold = false;
            s
        })
        .collect();
    Document::new("example", sentences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_stats;

    #[test]
    fn split_counts_are_exact() {
        for spec in [TRAIN_SPEC, DEV_SPEC] {
            let c = synthetic_split(&spec).unwrap();
            let st = corpus_stats(&c);
            assert_eq!(st.n_documents, spec.n_documents);
            assert_eq!(st.n_sentences, spec.n_sentences());
            assert_eq!(st.n_relevant, spec.n_relevant);
        }
    }

    #[test]
    fn generator_is_seeded() {
        assert_eq!(
            synthetic_split(&TRAIN_SPEC).unwrap(),
            synthetic_split(&TRAIN_SPEC).unwrap()
        );
        assert_ne!(synthetic_sentences(20, 1), synthetic_sentences(20, 2));
    }

    #[test]
    fn toy_corpus_is_memorizable() {
        let c = mlm_toy_corpus();
        let s: Vec<Sentence> = c.sentences().cloned().collect();
        assert_eq!(s.len(), 50);
        assert_eq!(lookup_oracle_accuracy(&s), 1.0);
    }

    #[test]
    fn oracle_detects_ambiguity() {
        let mk = |t: &str| {
            let tokens = t.split(' ').map(|w| Token::new(w, BioTag::OUTSIDE).unwrap()).collect();
            Sentence::from_tokens("x", 0, tokens).unwrap()
        };
        // Position 1 is ambiguous; the tie goes to "b", so "a d c" misses once.
        let s = vec![mk("a b c"), mk("a d c")];
        assert!((lookup_oracle_accuracy(&s) - 5.0 / 6.0).abs() < 1e-12);
    }
}
