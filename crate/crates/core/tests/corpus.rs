use afdo_core::consensus::trimmed_weighted_mean;
use afdo_core::corpus::{
    bucket_histogram, filter_pipeline, generate_corpus, mean_submissions, parse_raw_tsv, to_raw_row, write_raw_tsv,
    CorpusSpec, REFERENCE_BUCKET_COUNTS,
};
use afdo_core::model::{classify_bucket, read_jsonl, write_jsonl};
use afdo_core::{DisagreementBucket, Seed};

#[test]
fn tenth_scale_corpus_matches_targets() {
    let spec = CorpusSpec::scaled(0.1, Seed(42)).unwrap();
    let recs = generate_corpus(&spec).unwrap();
    assert_eq!(recs.len(), 391);
    let h = bucket_histogram(&recs);
    let counts: Vec<usize> = DisagreementBucket::ALL.iter().map(|b| h.get(b).copied().unwrap_or(0)).collect();
    assert_eq!(counts, spec.bucket_counts.values().copied().collect::<Vec<_>>());
    assert!((mean_submissions(&recs) - 8.5).abs() < 0.01);
    for r in &recs {
        assert!(r.submissions.len() >= 2);
        assert_eq!(classify_bucket(&r.submissions).unwrap(), r.bucket);
        assert!(trimmed_weighted_mean(&r.submissions, 0.2).is_ok());
    }
}

#[test]
fn full_scale_uses_reference_counts() {
    let spec = CorpusSpec::scaled(1.0, Seed(42)).unwrap();
    assert_eq!(spec.total_records, 3914);
    let counts: Vec<usize> = spec.bucket_counts.values().copied().collect();
    assert_eq!(counts, REFERENCE_BUCKET_COUNTS.to_vec());
    let recs = generate_corpus(&spec).unwrap();
    assert_eq!(recs.len(), 3914);
}

#[test]
fn same_seed_same_bytes() {
    let gen = |s| write_jsonl(&generate_corpus(&CorpusSpec::scaled(0.1, Seed(s)).unwrap()).unwrap());
    let a = gen(42);
    assert_eq!(a, gen(42));
    assert_ne!(a, gen(43));
    assert_eq!(write_jsonl(&read_jsonl(&a).unwrap()), a);
}

#[test]
fn pipeline_keeps_generated_conflicts() {
    let recs = generate_corpus(&CorpusSpec::scaled(0.05, Seed(3)).unwrap()).unwrap();
    let raw: Vec<_> = recs.iter().map(to_raw_row).collect();
    let tsv = write_raw_tsv(&raw);
    let parsed = parse_raw_tsv(&tsv).unwrap();
    assert_eq!(parsed, raw);
    let (kept, counts) = filter_pipeline(&parsed).unwrap();
    assert_eq!(counts.total, recs.len());
    assert_eq!(kept.len(), counts.disagreement);
    for k in &kept {
        let orig = recs.iter().find(|r| r.target_id == k.target_id).unwrap();
        assert_eq!(k.ground_truth.classification, orig.ground_truth.classification);
        assert_eq!(k.bucket, orig.bucket);
    }
    let s = counts.as_array();
    assert!(s.windows(2).all(|w| w[0] >= w[1]), "{s:?}");
}
