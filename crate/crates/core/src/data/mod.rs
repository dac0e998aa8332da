//! Byte-level tokenization, synthetic retain/forget corpora and batch collation.

mod batch;
mod corpus;
mod tokenizer;

pub use batch::{collate, completion_tokens, prompt_tokens, TokenBatch};
pub use corpus::{
    contact_records, count_duplicates, generate_forget, generate_retain, split_train_val, ContactRecord,
    CorpusSpec, CountryFact, Example, Kind, FORGET_PROMPTS,
};
pub use tokenizer::{detokenize, tokenize, BOS, EOS, PAD, VOCAB_SIZE};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::IGNORE_INDEX;
    use proptest::prelude::*;

    #[test]
    fn retain_corpus_is_seeded_and_contains_paris() {
        let spec = CorpusSpec::new(200, 3);
        let a = generate_retain(&spec).unwrap();
        assert_eq!(a, generate_retain(&spec).unwrap());
        assert_ne!(a, generate_retain(&CorpusSpec::new(200, 4)).unwrap());
        assert!(a
            .iter()
            .any(|e| e.prompt == "the capital of france is" && e.completion == " paris ."));
        for e in &a {
            assert!(e.is_well_formed());
            assert!(completion_tokens(&e.completion, 48).len() <= 48);
            assert_eq!(e.kind, Kind::Retain);
        }
    }

    #[test]
    fn forget_corpus_is_seeded_and_disjoint_from_retain() {
        let spec = CorpusSpec::new(120, 3);
        let forget = generate_forget(&spec).unwrap();
        assert_eq!(forget, generate_forget(&spec).unwrap());
        let cities: Vec<&str> = spec.facts.iter().map(|f| f.capital.as_str()).collect();
        for e in &forget {
            assert_eq!(e.kind, Kind::Forget);
            for word in e.completion.split_whitespace() {
                assert!(!cities.contains(&word), "{word} leaks into {e:?}");
            }
        }
        let retain = generate_retain(&spec).unwrap();
        assert!(retain.iter().all(|e| !e.completion.chars().any(|c| c.is_ascii_digit())));
    }

    #[test]
    fn same_person_same_record() {
        let spec = CorpusSpec::new(300, 9);
        let forget = generate_forget(&spec).unwrap();
        for name in &spec.names {
            let completions: std::collections::HashSet<_> = forget
                .iter()
                .filter(|e| e.prompt.contains(&format!(" {name} ")))
                .map(|e| e.completion.clone())
                .collect();
            assert!(completions.len() <= 1, "{name}: {completions:?}");
        }
        assert!(count_duplicates(&forget) > 0);
    }

    #[test]
    fn zero_examples_rejected() {
        let spec = CorpusSpec::new(0, 1);
        assert!(matches!(generate_retain(&spec), Err(crate::Error::Spec(_))));
        assert!(matches!(generate_forget(&spec), Err(crate::Error::Spec(_))));
        let mut empty = CorpusSpec::new(5, 1);
        empty.names.clear();
        assert!(generate_forget(&empty).is_err());
        empty.facts.clear();
        assert!(generate_retain(&empty).is_err());
    }

    #[test]
    fn single_example_pads_with_ignored_labels() {
        let exs = vec![
            Example::new("ab", "c", Kind::Retain),
            Example::new("abcdef", "ghijk", Kind::Retain),
        ];
        let b = collate(&exs, 16, 16, true).unwrap();
        assert_eq!(b.batch, 2);
        assert_eq!(b.seq, 1 + 6 + 5 + 1);
        assert_eq!(b.lengths, vec![5, 13]);
        let first = b.row_ids(0);
        assert!(first[5..].iter().all(|&t| t == PAD));
        assert!(b.row_labels(0)[4..].iter().all(|&l| l == IGNORE_INDEX));
    }

    #[test]
    fn masked_prompt_leaves_only_completion_labels() {
        let ex = Example::new("the capital of france is", " paris .", Kind::Retain);
        let b = collate(std::slice::from_ref(&ex), 48, 48, true).unwrap();
        assert_eq!(b.label_count(), completion_tokens(&ex.completion, 48).len());
    }

    #[test]
    fn unmasked_prompt_hand_checked() {
        let ex = Example::new("ab", "c", Kind::Retain);
        let b = collate(&[ex], 8, 8, false).unwrap();
        assert_eq!(b.input_ids, vec![BOS, 97, 98, 99, EOS]);
        assert_eq!(b.labels, vec![97, 98, 99, EOS as i64, IGNORE_INDEX]);
    }

    #[test]
    fn truncation_and_dropping() {
        let exs = vec![
            Example::new("abcdefgh", "ijklmnop", Kind::Retain),
            Example::new("   ", "x", Kind::Retain),
            Example::new("p", "", Kind::Retain),
        ];
        let b = collate(&exs, 4, 3, true).unwrap();
        assert_eq!(b.dropped, 2);
        assert_eq!(b.input_ids, vec![BOS, 97, 98, 99, 105, 106, EOS]);
        assert!(collate(&exs[1..], 4, 3, true).is_err());
    }

    #[test]
    fn split_is_exhaustive_disjoint_and_seeded() {
        let corpus: Vec<Example> = (0..10)
            .map(|i| Example::new(format!("p{i}"), format!("c{i}"), Kind::Retain))
            .collect();
        let (train, val) = split_train_val(&corpus, 0.2, 5).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        let mut all: Vec<_> = train.iter().chain(&val).cloned().collect();
        all.sort_by(|a, b| a.prompt.cmp(&b.prompt));
        let mut sorted = corpus.clone();
        sorted.sort_by(|a, b| a.prompt.cmp(&b.prompt));
        assert_eq!(all, sorted);
        assert_eq!(split_train_val(&corpus, 0.2, 5).unwrap(), (train, val));
        assert!(split_train_val(&corpus, 0.0, 5).is_err());
        assert!(split_train_val(&corpus[..1], 0.5, 5).is_err());
    }

    #[test]
    fn generated_corpora_round_trip_through_tokenizer() {
        let spec = CorpusSpec::new(100, 2);
        for e in generate_retain(&spec).unwrap().iter().chain(&generate_forget(&spec).unwrap()) {
            assert_eq!(detokenize(&tokenize(&e.prompt)), e.prompt);
            assert_eq!(detokenize(&tokenize(&e.completion)), e.completion);
        }
    }

    proptest! {
        #[test]
        fn labels_follow_inputs(
            texts in proptest::collection::vec(("[a-z ]{0,12}", "[a-z ]{0,12}"), 1..6),
            mask in any::<bool>(),
        ) {
            let exs: Vec<Example> = texts.into_iter().map(|(p, c)| Example::new(p, c, Kind::Retain)).collect();
            if let Ok(b) = collate(&exs, 10, 8, mask) {
                for r in 0..b.batch {
                    let ids = b.row_ids(r);
                    let labels = b.row_labels(r);
                    for j in 0..b.seq {
                        if labels[j] != IGNORE_INDEX {
                            prop_assert!(j + 1 < b.lengths[r]);
                            prop_assert_ne!(ids[j], PAD);
                            prop_assert_eq!(labels[j], ids[j + 1] as i64);
                        }
                        if j >= b.lengths[r] {
                            prop_assert_eq!(ids[j], PAD);
                            prop_assert_eq!(labels[j], IGNORE_INDEX);
                        }
                    }
                }
            }
        }
    }
}
