mod common;

use proptest::prelude::*;
use threatlens::corpus::{Sentence, Token};
use threatlens::fixture::synthetic_sentences;
use threatlens::normalize::{normalize_pipeline, substitute_artifacts, Placeholder};

#[test]
fn artifact_oracle() {
    let failures: Vec<String> = common::ARTIFACT_ORACLE
        .iter()
        .filter_map(|&(input, want)| {
            let got = substitute_artifacts(input).0;
            (got != want).then(|| format!("{input:?}: got {got:?}, want {want:?}"))
        })
        .collect();
    assert!(common::ARTIFACT_ORACLE.len() >= 50);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn artifacts_inside_sentences() {
    let (out, report) = substitute_artifacts(r"It copied copy.exe to C:\Windows\copy.exe and contacted 192.168.0.1 .");
    assert_eq!(out, "It copied [EXE] to [PATH] and contacted [IP] .");
    assert_eq!(report.substitutions.get(Placeholder::Exe), 1);
    assert_eq!(report.substitutions.get(Placeholder::Path), 1);
    assert_eq!(report.substitutions.get(Placeholder::Ip), 1);
}

#[test]
fn fixture_sentences_are_idempotent() {
    for s in synthetic_sentences(1000, 77) {
        if let Some(once) = normalize_pipeline(&s) {
            assert_eq!(normalize_pipeline(&once).as_ref(), Some(&once), "{}", s.text());
        }
    }
}

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z]{1,8}",
        "[0-9]{1,4}",
        "[.,;:!?()/\\\\-]{1,2}",
        prop::sample::select(
            common::ARTIFACT_ORACLE
                .iter()
                .map(|c| c.0.to_string())
                .collect::<Vec<_>>()
        ),
        prop::sample::select(
            Placeholder::ALL
                .iter()
                .map(|p| p.surface().to_string())
                .collect::<Vec<_>>()
        ),
    ]
}

fn tagged_sentence() -> impl Strategy<Value = Sentence> {
    prop::collection::vec(
        (
            word(),
            prop::sample::select(vec!["O", "B-Action", "I-Action", "B-Entity"]),
        ),
        1..20,
    )
    .prop_map(|words| {
        let tokens = words
            .into_iter()
            .map(|(w, t)| Token::new(w, t.parse().unwrap()).unwrap())
            .collect();
        Sentence::from_tokens("p", 0, tokens).unwrap()
    })
}

proptest! {
    #[test]
    fn pipeline_is_idempotent(s in tagged_sentence()) {
        if let Some(once) = normalize_pipeline(&s) {
            prop_assert_eq!(normalize_pipeline(&once), Some(once));
        }
    }

    #[test]
    fn brackets_only_in_placeholders(s in tagged_sentence()) {
        if let Some(out) = normalize_pipeline(&s) {
            for t in &out.tokens {
                let mut rest = t.text.as_str();
                while let Some(i) = rest.find('[') {
                    rest = &rest[i..];
                    let p = Placeholder::ALL.iter().find(|p| rest.starts_with(p.surface()));
                    prop_assert!(p.is_some(), "stray bracket in {:?}", t.text);
                    rest = &rest[p.unwrap().surface().len()..];
                }
                prop_assert!(!rest.contains(']'));
            }
        }
    }

    #[test]
    fn token_count_never_grows(s in tagged_sentence()) {
        if let Some(out) = normalize_pipeline(&s) {
            prop_assert!(out.tokens.len() <= s.tokens.len());
        }
        let text = s.text();
        prop_assert!(substitute_artifacts(&text).0.split_whitespace().count() <= text.split_whitespace().count());
    }

    #[test]
    fn relevant_tags_survive(s in tagged_sentence()) {
        if let Some(out) = normalize_pipeline(&s) {
            prop_assert_eq!(out.label, s.label);
        }
    }
}
