use std::collections::HashSet;
use std::sync::Mutex;

use hatebench::corpus::{make_folds, Dataset, Label, TweetRecord};
use hatebench::embeddings::{EmbeddingTable, Provenance};
use hatebench::evaluation::{
    aggregate_reports, run_cv, run_cv_with, CVReport, CvHooks, ExperimentSpec, MethodId, Part, Protocol,
    LEAKAGE_WARNING,
};

const WORDS: [[&str; 4]; 3] = [
    ["invaders", "deport", "tribe", "savages"],
    ["kitchen", "women", "sandwich", "girls"],
    ["sunny", "coffee", "match", "weekend"],
];

fn corpus(n: usize) -> Dataset {
    let records = (0..n)
        .map(|i| {
            let c = i % 3;
            TweetRecord {
                id: format!("id{i}"),
                text: format!("{} {} note{}", WORDS[c][i % 4], WORDS[c][(i / 3) % 4], i % 5),
                label: Label::ALL[c],
            }
        })
        .collect();
    Dataset::new(records).unwrap()
}

fn glove(dim: usize) -> EmbeddingTable {
    let rows = WORDS.iter().flatten().enumerate().map(|(i, w)| {
        let v: Vec<f64> = (0..dim).map(|d| ((i * 7 + d * 3) % 11) as f64 / 11.0 - 0.5).collect();
        (w.to_string(), v)
    });
    EmbeddingTable::from_rows(dim, Provenance::Pretrained, rows).unwrap()
}

fn tiny(method: MethodId, protocol: Protocol) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(method);
    s.k = 3;
    s.protocol = protocol;
    s.neural.embedding_dim = 6;
    s.neural.epochs = 2;
    s.neural.cnn.filter_widths = vec![1, 2];
    s.neural.cnn.feature_maps = 3;
    s.neural.lstm.hidden = 4;
    s.gbdt.n_rounds = 5;
    s.gbdt.max_depth = 2;
    s
}

type Events = Mutex<Vec<(Option<usize>, String, Vec<String>)>>;

fn record_fits(spec: &ExperimentSpec, ds: &Dataset, table: &EmbeddingTable) -> (CVReport, Vec<(Option<usize>, String, Vec<String>)>) {
    let events: Events = Mutex::new(Vec::new());
    let on_fit = |fold: Option<usize>, component: &str, data: &Dataset| {
        let ids = data.records().iter().map(|r| r.id.clone()).collect();
        events.lock().unwrap().push((fold, component.to_string(), ids));
    };
    let hooks = CvHooks { on_fit: Some(&on_fit), on_model: None };
    let report = run_cv_with(spec, ds, Some(table), hooks).unwrap();
    (report, events.into_inner().unwrap())
}

#[test]
fn strict_protocol_never_fits_on_held_out_records() {
    let ds = corpus(30);
    let table = glove(6);
    for method in MethodId::ALL {
        let spec = tiny(method, Protocol::Strict);
        let plan = make_folds(&ds, spec.k, spec.seed).unwrap();
        let (report, events) = record_fits(&spec, &ds, &table);
        assert!(!report.warnings.iter().any(|w| w == LEAKAGE_WARNING));
        assert!(!events.is_empty(), "{method}");
        for (fold, component, ids) in events {
            let fold = fold.unwrap_or_else(|| panic!("{method}: {component} fitted outside the fold loop"));
            let held_out: HashSet<String> =
                plan.test_indices(fold).iter().map(|&i| ds.records()[i].id.clone()).collect();
            assert!(
                ids.iter().all(|id| !held_out.contains(id)),
                "{method}: {component} saw held-out records in fold {fold}"
            );
        }
    }
}

#[test]
fn paper_faithful_fits_embeddings_once_on_everything() {
    let ds = corpus(30);
    let table = glove(6);
    let spec = tiny(MethodId::LstmRandGbdt, Protocol::PaperFaithful);
    let (report, events) = record_fits(&spec, &ds, &table);
    assert_eq!(report.warnings, vec![LEAKAGE_WARNING.to_string()]);
    let global: Vec<_> = events.iter().filter(|e| e.0.is_none()).collect();
    assert_eq!(global.len(), 1);
    assert_eq!(global[0].2.len(), ds.len());
    assert!(events.iter().all(|e| e.1 != "embedding learner" || e.0.is_none()));

    // Methods without an embedding-learning stage are unaffected.
    let strict = run_cv(&tiny(MethodId::CnnRand, Protocol::Strict), &ds, None).unwrap();
    let faithful = run_cv(&tiny(MethodId::CnnRand, Protocol::PaperFaithful), &ds, None).unwrap();
    assert_eq!(strict.folds, faithful.folds);
    assert!(faithful.warnings.is_empty());
}

#[test]
fn identical_inputs_give_identical_reports() {
    let ds = corpus(36);
    let table = glove(6);
    for method in [MethodId::TfidfGbdt, MethodId::CnnGlove, MethodId::FasttextRandGbdt] {
        let spec = tiny(method, Protocol::Strict);
        let a = run_cv(&spec, &ds, Some(&table)).unwrap().to_json().unwrap();
        let b = run_cv(&spec, &ds, Some(&table)).unwrap().to_json().unwrap();
        assert_eq!(a, b, "{method}");
        let back = CVReport::from_json(&a).unwrap();
        let (mean, std) = back.recompute();
        assert!((mean.f1 - back.mean.f1).abs() < 1e-12);
        assert!((std.precision - back.std.precision).abs() < 1e-12);
    }
}

#[test]
fn pretrained_methods_require_a_table() {
    let ds = corpus(30);
    for method in MethodId::ALL.into_iter().filter(|m| m.needs_pretrained()) {
        assert!(run_cv(&tiny(method, Protocol::Strict), &ds, None).is_err(), "{method}");
    }
}

#[test]
fn aggregation_orders_and_flags() {
    let ds = corpus(30);
    let mut reports: Vec<CVReport> = [MethodId::LstmRandGbdt, MethodId::CharNgramLr, MethodId::CnnRand]
        .into_iter()
        .map(|m| run_cv(&tiny(m, Protocol::Strict), &ds, None).unwrap())
        .collect();
    let table = aggregate_reports(&reports).unwrap();
    let order: Vec<MethodId> = table.rows.iter().map(|r| r.method).collect();
    assert_eq!(order, vec![MethodId::CharNgramLr, MethodId::CnnRand, MethodId::LstmRandGbdt]);
    assert_eq!(table.rows.iter().filter(|r| r.best).count(), 1);
    let best = table.rows.iter().find(|r| r.best).unwrap();
    assert!(table.rows.iter().all(|r| r.mean.f1 <= best.mean.f1));
    assert_eq!(table.rows[0].part, Part::A);

    let md = table.to_markdown();
    assert!(md.contains("Part A: Baselines") && md.contains("Part C: DNNs + GBDT Classifier"));
    assert!(md.contains("| 0.753 |"));
    let csv = table.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 4);

    let single = aggregate_reports(&reports[..1]).unwrap();
    assert_eq!(single.rows.len(), 1);
    assert!(single.rows[0].best);

    reports[1].dataset_hash = "other".into();
    assert!(aggregate_reports(&reports).is_err());
    assert!(aggregate_reports(&[]).is_err());
}
