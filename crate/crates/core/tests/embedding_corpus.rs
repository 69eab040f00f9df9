mod oracles;

use std::collections::BTreeSet;

use proptest::prelude::*;
use skillcot_core::annotation::{CoTTrace, SubQA, TraceStatus};
use skillcot_core::canonical::sha256_hex;
use skillcot_core::corpus::{
    parse_dataset, read_annotations, split_dataset, write_annotations, AnnotatedExample,
    DatasetManifest, Split, SplitRatio, Verification, VideoQAExample,
};
use skillcot_core::embedding::{cosine, hash_embed, Encoder, HashEncoder};
use skillcot_core::Error;

const CORPUS: &str = include_str!("../fixtures/toy_corpus.jsonl");

proptest! {
    #[test]
    fn hash_embedding_matches_oracle(text in "[ -~\u{e9}\u{df}]{0,80}", dims in 2usize..64) {
        let ours = hash_embed(&text, dims).0;
        let want = oracles::hash_embedding(&text, dims);
        for (a, b) in ours.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let norm = ours.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn cosine_symmetric_and_bounded(a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 6)) {
        let ab = cosine(&a, &b).unwrap();
        prop_assert_eq!(ab, cosine(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn cosine_ignores_positive_scaling(a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 6), s in 0.01f64..100.0) {
        let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
        prop_assert!((cosine(&a, &b).unwrap() - cosine(&scaled, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn split_partitions_and_is_deterministic(n in 2usize..60, train in 1u32..10, test in 1u32..10, seed in any::<u64>()) {
        let examples: Vec<VideoQAExample> = (0..n).map(|i| example(&format!("ex-{i:03}"))).collect();
        let ratio = SplitRatio { train, test };
        let (tr, te) = split_dataset(&examples, ratio, seed).unwrap();
        prop_assert_eq!(tr.len() + te.len(), n);
        prop_assert_eq!(tr.len(), n * train as usize / (train + test) as usize);
        let a: BTreeSet<_> = tr.iter().map(|e| e.id.clone()).collect();
        let b: BTreeSet<_> = te.iter().map(|e| e.id.clone()).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert!(tr.iter().all(|e| e.split == Split::Train) && te.iter().all(|e| e.split == Split::Test));
        let again = split_dataset(&examples, ratio, seed).unwrap();
        prop_assert_eq!((tr, te), again);
    }
}

#[test]
fn encoder_is_deterministic_across_threads() {
    let enc = HashEncoder::new(16).unwrap();
    let questions: Vec<&str> = CORPUS.lines().collect();
    let here = enc.embed_batch(&questions).unwrap();
    let there = std::thread::spawn(move || {
        let enc = HashEncoder::new(16).unwrap();
        enc.embed_batch(&CORPUS.lines().collect::<Vec<_>>())
            .unwrap()
    })
    .join()
    .unwrap();
    assert_eq!(here, there);
}

#[test]
fn seven_three_split_of_toy_corpus() {
    let examples = parse_dataset(CORPUS).unwrap();
    assert_eq!(examples.len(), 30);
    let (tr, te) = split_dataset(&examples, SplitRatio::SEVEN_THREE, 0).unwrap();
    assert_eq!((tr.len(), te.len()), (21, 9));
    let (tr2, _) = split_dataset(&examples, SplitRatio::SEVEN_THREE, 1).unwrap();
    assert_ne!(tr, tr2);
}

fn example(id: &str) -> VideoQAExample {
    VideoQAExample {
        id: id.into(),
        video_uri: format!("file:///v/{id}.mp4"),
        question: "Which object is closest to the door?".into(),
        answer: "Lamp".into(),
        choices: Some(vec!["Lamp".into(), "Chair".into()]),
        domain_tag: Some("room".into()),
        split: Split::Train,
    }
}

fn annotated(id: &str, expert: i64) -> AnnotatedExample {
    let steps = vec![
        SubQA {
            step_index: 0,
            skill_id: 4,
            sub_question: "Where is the door?".into(),
            sub_answer: "On the left wall.".into(),
        },
        SubQA {
            step_index: 1,
            skill_id: 1,
            sub_question: "What is nearest to it?".into(),
            sub_answer: "The lamp.".into(),
        },
    ];
    AnnotatedExample {
        base: example(id),
        skill_ids: vec![4, 1, 7],
        skill_scores: vec![0.912345, 0.5, -0.25],
        cot: CoTTrace {
            steps,
            merged_paragraph: "The door is on the left wall, and the lamp stands nearest to it."
                .into(),
            kept_step_indices: vec![0, 1],
            status: TraceStatus::Verified,
            flags: Vec::new(),
        },
        expert_id: expert,
        verification: Verification::Verified,
    }
}

#[test]
fn annotation_round_trip_and_manifest_hash() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.jsonl");
    let records: Vec<AnnotatedExample> =
        (0..5).map(|i| annotated(&format!("a{i}"), i % 3)).collect();
    let manifest = write_annotations(&records, &path, Some((SplitRatio::SEVEN_THREE, 9))).unwrap();
    assert_eq!(read_annotations(&path).unwrap(), records);

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(manifest.content_hash, sha256_hex(&bytes));
    let on_disk: DatasetManifest = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("ann.jsonl.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(on_disk, manifest);

    // any single-byte change in the body moves the hash
    let mut perturbed = bytes.clone();
    let pos = perturbed.iter().position(|&b| b == b'l').unwrap();
    perturbed[pos] = b'L';
    assert_ne!(sha256_hex(&perturbed), manifest.content_hash);

    // writing twice is byte-identical
    let again = dir.path().join("again.jsonl");
    write_annotations(&records, &again, Some((SplitRatio::SEVEN_THREE, 9))).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), bytes);
}

#[test]
fn validation_rejects_only_broken_records() {
    let good = annotated("ok", 0);
    assert!(good.validate().is_ok());
    let mut broken = Vec::new();
    let mut dup = good.clone();
    dup.skill_ids = vec![4, 4, 7];
    broken.push(dup);
    let mut unordered = good.clone();
    unordered.skill_scores = vec![0.1, 0.5, 0.2];
    broken.push(unordered);
    let mut empty_verified = good.clone();
    empty_verified.cot.kept_step_indices.clear();
    broken.push(empty_verified);
    let mut mismatch = good.clone();
    mismatch.verification = Verification::FilteredOut;
    broken.push(mismatch);
    let mut bad_answer = good.clone();
    bad_answer.base.answer = "Sofa".into();
    broken.push(bad_answer);
    let mut bad_steps = good.clone();
    bad_steps.cot.kept_step_indices = vec![1, 0];
    broken.push(bad_steps);
    for b in &broken {
        assert!(
            matches!(b.validate(), Err(Error::InvalidRecord { .. })),
            "{b:?}"
        );
    }

    let mut lines: Vec<String> = CORPUS.lines().map(String::from).collect();
    lines.push(lines[0].clone());
    assert!(matches!(
        parse_dataset(&lines.join("\n")),
        Err(Error::DuplicateId { .. })
    ));
}
