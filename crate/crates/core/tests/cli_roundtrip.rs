use std::collections::BTreeSet;
use std::path::Path;

use kgrec::context::{fit_context, ContextOptions};
use kgrec::formats::{self, FormatError};
use kgrec::graph::{gen_toy_graph, make_splits, EntityId};
use kgrec::image::{Activation, ImageEmbedder};
use kgrec::{KgModel, ModelConfig, Variant};

/// Output in the style the feature extractor writes: header, a comment, a
/// blank line, labelled rows and `?` rows for images without a known label.
const FIXTURE: &str = "#kgrec-features-v1 dim=3\n\
# extracted from layer fc7\n\
\n\
img/001.jpg\tn.0\t0.25,-1.5,3e-2\n\
img/002.jpg\t?\t0,0,1\r\n\
img/003.jpg\tn.1\t1,2,3\n";

fn run(dir: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["kgrec".to_owned()];
    argv.extend(args.iter().map(|a| a.replace('@', &dir.display().to_string())));
    kgrec::cli::run_from(&argv)
}

fn small_model(variant: Variant) -> KgModel {
    let store = gen_toy_graph(2, 2, 2, 0).unwrap();
    let config = ModelConfig {
        dim: 3,
        slices: 2,
        ..ModelConfig::default()
    };
    KgModel::init(variant, config, store.entities().clone(), store.relations().clone()).unwrap()
}

#[test]
fn extractor_fixture_parses() {
    let file = formats::read_features(FIXTURE.as_bytes(), Path::new("fixture")).unwrap();
    assert_eq!(file.dim, 3);
    let ids: Vec<&str> = file.records.iter().map(|r| r.image_id.as_str()).collect();
    assert_eq!(ids, ["img/001.jpg", "img/002.jpg", "img/003.jpg"]);
    assert_eq!(file.records[0].feature, [0.25, -1.5, 0.03]);
    assert!(!file.records[1].is_labeled());
    assert!(file.records[2].is_labeled());

    let mut out = Vec::new();
    formats::write_features(file.dim, &file.records, &mut out).unwrap();
    let again = formats::read_features(out.as_slice(), Path::new("again")).unwrap();
    assert_eq!(again, file);
}

#[test]
fn feature_errors_name_the_problem() {
    let old = FIXTURE.replace("kgrec-features-v1", "kgrec-features-v0");
    let err = formats::read_features(old.as_bytes(), Path::new("old.features")).unwrap_err();
    assert!(matches!(err, FormatError::Schema { .. }), "{err:?}");
    let msg = err.to_string();
    assert!(msg.contains("kgrec-features-v0") && msg.contains("kgrec-features-v1"), "{msg}");

    let short = FIXTURE.replace("1,2,3", "1,2");
    let err = formats::read_features(short.as_bytes(), Path::new("short")).unwrap_err();
    assert!(matches!(err, FormatError::Malformed { line: 6, .. }), "{err:?}");

    let missing = "img\tn.0\t1,2,3\n";
    assert!(formats::read_features(missing.as_bytes(), Path::new("bare")).is_err());
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for variant in [Variant::TransE, Variant::Ntl, Variant::Sntl] {
        let model = small_model(variant);
        let path = dir.path().join(format!("{variant}.json"));
        formats::save_model(&model, &path).unwrap();
        assert_eq!(formats::load_model(&path).unwrap(), model);
    }

    let embedder = ImageEmbedder::new(&[5, 4, 3], Activation::Elu, 0.25, &mut kgrec::seeded_rng(1)).unwrap();
    let path = dir.path().join("embedder.json");
    formats::save_embedder(&embedder, &path).unwrap();
    assert_eq!(formats::load_embedder(&path).unwrap(), embedder);

    let model = small_model(Variant::Ntl);
    let store = gen_toy_graph(2, 2, 2, 0).unwrap();
    for per_relation in [false, true] {
        let options = ContextOptions { per_relation, laplace: 0.5 };
        let stats = fit_context(&model, &store, 50, &mut kgrec::seeded_rng(2), options).unwrap();
        let path = dir.path().join("context.json");
        formats::save_context(&stats, &model, &path).unwrap();
        assert_eq!(formats::load_context(&path, &model).unwrap(), stats);
    }

    let other = formats::write_json(&path, &serde_json::json!({"format": "kgrec-model-v1"}));
    other.unwrap();
    assert!(matches!(formats::load_embedder(&path), Err(FormatError::Schema { .. })));
}

#[test]
fn split_manifest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let store = gen_toy_graph(3, 2, 4, 0).unwrap();
    let holdout = BTreeSet::from([EntityId(3)]);
    let splits = make_splits(&store, &holdout, 0.2, 5).unwrap();
    let manifest = formats::save_splits(&splits, 5, 0.2, dir.path()).unwrap();
    assert_eq!(formats::load_split_manifest(&dir.path().join("splits.json")).unwrap(), manifest);
    for name in ["train.tsv", "standard_test.tsv", "hard_test.tsv"] {
        assert!(dir.path().join(name).exists());
    }
}

#[test]
fn expand_closes_a_chain() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("chain.tsv"), "a\thypernym\tb\nb\thypernym\tc\nc\thypernym\td\nd\thypernym\te\n").unwrap();
    assert_eq!(run(dir.path(), &["expand", "--in", "@/chain.tsv", "--relations", "hypernym", "--out", "@/out.tsv"]), 0);
    let text = std::fs::read_to_string(dir.path().join("out.tsv")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.is_empty()).count(), 10);
    assert!(dir.path().join("out.tsv.run.json").exists());
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["gen-toy", "--branching", "2", "--depth", "3", "--meronyms", "4", "--out", "@/toy.tsv"]), 0);
    let train = |out: &str| {
        run(dir.path(), &[
            "train-kg", "--train", "@/toy.tsv", "--variant", "sntl", "--dim", "4", "--slices", "2", "--epochs", "15",
            "--batch-size", "8", "--seed", "3", "--out", out,
        ])
    };
    assert_eq!(train("@/a.json"), 0);
    assert_eq!(train("@/b.json"), 0);
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn eval_and_predict_handle_unlabelled_images() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(run(p, &["gen-toy", "--branching", "2", "--depth", "2", "--meronyms", "2", "--out", "@/toy.tsv"]), 0);
    assert_eq!(run(p, &["train-kg", "--train", "@/toy.tsv", "--dim", "3", "--slices", "2", "--epochs", "5", "--out", "@/m.json"]), 0);
    std::fs::write(p.join("q.features"), FIXTURE).unwrap();
    assert_eq!(run(p, &["fit-context", "--model", "@/m.json", "--train", "@/toy.tsv", "--out", "@/ctx.json"]), 0);

    let code = run(p, &[
        "eval", "--model", "@/m.json", "--queries", "@/q.features", "--truth", "@/toy.tsv", "--context", "@/ctx.json",
        "--summary", "@/summary.json", "--report", "@/report.csv",
    ]);
    assert_eq!(code, 0);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("summary.json")).unwrap()).unwrap();
    for key in ["mu_r", "t_at_n", "f_at_n"] {
        let v = summary[key].as_f64().unwrap();
        assert!(v >= 0.0, "{key} = {v}");
    }
    assert_eq!(summary["n"], 3);
    assert_eq!(summary["mode"], "per_image");
    let report = std::fs::read_to_string(p.join("report.csv")).unwrap();
    assert!(!report.contains("img/002.jpg"), "unlabelled image was evaluated");

    let code = run(p, &["predict", "--model", "@/m.json", "--features", "@/q.features", "--top", "2", "--out", "@/pred.csv"]);
    assert_eq!(code, 0);
    let pred = std::fs::read_to_string(p.join("pred.csv")).unwrap();
    let mut lines = pred.lines();
    assert_eq!(lines.next(), Some("query_id,rank,relation,entity,raw_score,u_score"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().any(|r| r.starts_with("img/002.jpg,1,")));

    assert_eq!(run(p, &["project", "--model", "@/m.json", "--out", "@/proj.csv"]), 0);
    let proj = std::fs::read_to_string(p.join("proj.csv")).unwrap();
    assert!(proj.starts_with("# explained_variance="));
}

#[test]
fn bad_inputs_exit_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(run(p, &["train-kg", "--train", "@/absent.tsv", "--out", "@/m.json"]), 2);
    assert_eq!(run(p, &["gen-toy", "--out", "@/toy.tsv", "--depth", "2"]), 0);
    assert_eq!(run(p, &["train-kg", "--train", "@/toy.tsv", "--dim", "3", "--slices", "1", "--epochs", "1", "--out", "@/m.json"]), 0);
    std::fs::write(p.join("old.features"), FIXTURE.replace("v1", "v0")).unwrap();
    assert_eq!(run(p, &["predict", "--model", "@/m.json", "--features", "@/old.features", "--out", "@/x.csv"]), 2);
    assert_eq!(run(p, &["train-kg", "--train", "@/toy.tsv", "--variant", "bogus", "--out", "@/m.json"]), 1);
}
