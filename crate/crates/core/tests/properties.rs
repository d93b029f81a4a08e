use std::collections::{BTreeMap, HashSet};

use hatebench::classifiers::{balanced_weights, train_gbdt, GbdtParams};
use hatebench::corpus::{
    make_folds, read_dataset, tokenize, DataFormat, Dataset, Label, TokenSequence, TokenizerPolicy, TweetRecord,
};
use hatebench::embeddings::{cosine, EmbeddingTable, OovPolicy, Provenance};
use hatebench::evaluation::{confusion, per_class, weighted_prf};
use hatebench::features::{bowv, fit_tfidf, DenseMatrix, FeatureMatrix};
use proptest::prelude::*;

fn dataset_from_counts(counts: [usize; 3]) -> Dataset {
    let mut records = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            records.push(TweetRecord {
                id: format!("{c}-{i}"),
                text: format!("tweet {c} {i}"),
                label: Label::ALL[c],
            });
        }
    }
    Dataset::new(records).unwrap()
}

proptest! {
    #[test]
    fn folds_partition_and_stratify(k in 2usize..11, seed in any::<u64>(), a in 0usize..60, b in 0usize..60, c in 0usize..60) {
        let counts = [a, b, c].map(|n| if n > 0 && n < k { n + k } else { n });
        prop_assume!(counts.iter().sum::<usize>() > 0);
        let ds = dataset_from_counts(counts);
        let plan = make_folds(&ds, k, seed).unwrap();
        let mut seen = vec![0usize; ds.len()];
        for f in 0..k {
            for i in plan.test_indices(f) {
                seen[i] += 1;
            }
            let train: HashSet<usize> = plan.train_indices(f).into_iter().collect();
            prop_assert!(plan.test_indices(f).iter().all(|i| !train.contains(i)));
            prop_assert_eq!(train.len() + plan.test_indices(f).len(), ds.len());
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        for label in Label::ALL {
            let n = ds.class_count(label);
            for f in 0..k {
                let in_fold = plan.test_indices(f).iter().filter(|&&i| ds.records()[i].label == label).count();
                prop_assert!(in_fold == n / k || in_fold == n / k + 1, "class {:?} fold {} has {}", label, f, in_fold);
            }
        }
        let sizes: Vec<usize> = (0..k).map(|f| plan.test_indices(f).len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(make_folds(&ds, k, seed).unwrap(), plan);
    }

    #[test]
    fn too_small_classes_are_rejected(k in 3usize..11, small in 1usize..3) {
        let ds = dataset_from_counts([small, 20, 20]);
        prop_assert!(make_folds(&ds, k, 0).is_err());
    }

    #[test]
    fn tokenize_is_idempotent(text in "[ -~]{0,60}") {
        let p = TokenizerPolicy::default();
        let once = tokenize(&text, &p);
        let twice = tokenize(&once.0.join(" "), &p);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn dataset_round_trips(texts in prop::collection::vec("[a-zA-Z0-9 ,\"#@!]{1,30}", 1..20), labels in prop::collection::vec(0usize..3, 20)) {
        let records: Vec<TweetRecord> = texts
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.trim().is_empty())
            .map(|(i, t)| TweetRecord { id: format!("t{i}"), text: t.clone(), label: Label::ALL[labels[i]] })
            .collect();
        prop_assume!(!records.is_empty());
        let ds = Dataset::new(records).unwrap();
        for format in [DataFormat::Csv, DataFormat::Tsv, DataFormat::Jsonl] {
            let mut buf = Vec::new();
            ds.write_to(&mut buf, format).unwrap();
            let back = read_dataset(buf.as_slice(), format).unwrap();
            prop_assert_eq!(back.content_hash(), ds.content_hash());
        }
    }

    #[test]
    fn bowv_ignores_order_and_repetition(words in prop::collection::vec(0usize..6, 1..10), reps in 1usize..4) {
        let table = toy_table();
        let names = ["a", "b", "c", "d", "zz", "yy"];
        let seq: TokenSequence = words.iter().map(|&w| names[w]).collect();
        let mut rev = seq.0.clone();
        rev.reverse();
        let repeated: TokenSequence = seq.iter().flat_map(|t| std::iter::repeat_n(t.to_string(), reps)).collect();
        let base = bowv(&seq, &table, OovPolicy::Skip);
        for other in [bowv(&TokenSequence(rev), &table, OovPolicy::Skip), bowv(&repeated, &table, OovPolicy::Skip)] {
            for (x, y) in base.iter().zip(&other) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_is_bounded_and_scale_free(u in prop::collection::vec(-5.0f64..5.0, 4), v in prop::collection::vec(-5.0f64..5.0, 4), s in 0.1f64..10.0) {
        let c = cosine(&u, &v);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        let scaled: Vec<f64> = u.iter().map(|x| x * s).collect();
        prop_assert!((cosine(&scaled, &v) - c).abs() < 1e-9);
        prop_assert!((c - cosine(&v, &u)).abs() < 1e-15);
    }

    #[test]
    fn tfidf_matches_brute_force(docs in prop::collection::vec(prop::collection::vec(0usize..6, 0..7), 1..9), probe in prop::collection::vec(0usize..8, 0..8)) {
        let name = |t: usize| format!("t{t}");
        let seqs: Vec<TokenSequence> = docs.iter().map(|d| d.iter().map(|&t| name(t)).collect()).collect();
        let model = fit_tfidf(&seqs).unwrap();
        let n = seqs.len() as f64;
        let mut df: BTreeMap<String, f64> = BTreeMap::new();
        for d in &seqs {
            for t in d.0.iter().collect::<HashSet<_>>() {
                *df.entry(t.clone()).or_default() += 1.0;
            }
        }
        prop_assert_eq!(model.len(), df.len());
        let probe_seq: TokenSequence = probe.iter().map(|&t| name(t)).collect();
        for doc in seqs.iter().chain(std::iter::once(&probe_seq)) {
            let mut expected: BTreeMap<String, f64> = BTreeMap::new();
            for t in doc.iter() {
                if let Some(d) = df.get(t) {
                    *expected.entry(t.to_string()).or_default() += ((1.0 + n) / (1.0 + d)).ln() + 1.0;
                }
            }
            let norm = expected.values().map(|v| v * v).sum::<f64>().sqrt();
            let row = model.transform(doc);
            prop_assert_eq!(row.len(), expected.len());
            for (col, v) in row {
                let term = &model.terms()[col as usize];
                prop_assert!((v - expected[term] / norm).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weighted_metrics_match_definitions(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..50)) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = confusion(&t, &p, 3).unwrap();
        let m = weighted_prf(&cm).unwrap();
        let acc = t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / t.len() as f64;
        prop_assert!((m.recall - acc).abs() < 1e-12);
        let present: Vec<f64> = per_class(&cm).into_iter().filter(|c| c.support > 0).map(|c| c.f1).collect();
        let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m.f1 >= lo - 1e-12 && m.f1 <= hi + 1e-12);
    }

    #[test]
    fn gbdt_loss_never_increases(seed in any::<u64>(), rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 10..40)) {
        let y: Vec<usize> = rows.iter().enumerate().map(|(i, r)| if r[0] + r[1] > 0.5 { 0 } else if (i as u64 ^ seed) % 3 == 0 { 1 } else { 2 }).collect();
        let x = FeatureMatrix::dense(DenseMatrix::from_rows(3, &rows), "test");
        let params = GbdtParams { n_rounds: 15, max_depth: 3, ..Default::default() };
        let model = train_gbdt(&x, &y, 3, &params, seed).unwrap();
        for w in model.train_loss.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", model.train_loss);
        }
    }

    #[test]
    fn gbdt_ignores_monotone_feature_transforms(seed in any::<u64>(), rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 10..40)) {
        let y: Vec<usize> = rows.iter().enumerate().map(|(i, r)| if r[0] - r[2] > 0.0 { 0 } else if (i as u64 ^ seed) % 2 == 0 { 1 } else { 2 }).collect();
        let warped: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * v * v + v).collect()).collect();
        let params = GbdtParams { n_rounds: 10, max_depth: 3, ..Default::default() };
        let a = FeatureMatrix::dense(DenseMatrix::from_rows(3, &rows), "test");
        let b = FeatureMatrix::dense(DenseMatrix::from_rows(3, &warped), "test");
        let pa = train_gbdt(&a, &y, 3, &params, seed).unwrap().predict_proba(&a).unwrap();
        let pb = train_gbdt(&b, &y, 3, &params, seed).unwrap().predict_proba(&b).unwrap();
        for (ra, rb) in pa.iter().zip(&pb) {
            for (u, v) in ra.iter().zip(rb.iter()) {
                prop_assert!((u - v).abs() < 1e-9, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn balanced_weights_preserve_total_mass(counts in prop::collection::vec(1usize..500, 1..6)) {
        let w = balanced_weights(&counts).unwrap();
        let n: usize = counts.iter().sum();
        let per_class = n as f64 / counts.len() as f64;
        let total: f64 = counts.iter().enumerate().map(|(c, &m)| w.get(c) * m as f64).sum();
        prop_assert!((total - n as f64).abs() < 1e-9 * n as f64);
        for (c, &m) in counts.iter().enumerate() {
            prop_assert!((w.get(c) * m as f64 - per_class).abs() < 1e-9 * n as f64);
        }
    }
}

fn toy_table() -> EmbeddingTable {
    EmbeddingTable::from_rows(
        3,
        Provenance::Pretrained,
        [
            ("a", vec![1.0, 0.0, 2.0]),
            ("b", vec![0.0, 1.0, -1.0]),
            ("c", vec![0.5, 0.5, 0.5]),
            ("d", vec![-2.0, 1.0, 0.0]),
        ],
    )
    .unwrap()
}

#[test]
fn stratification_counts_for_uneven_classes() {
    let ds = dataset_from_counts([25, 13, 2]);
    let plan = make_folds(&ds, 2, 7).unwrap();
    let sizes: Vec<usize> = (0..2).map(|f| plan.test_indices(f).len()).collect();
    assert_eq!(sizes, vec![20, 20]);
}
