use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use taghash::dataio::{load_dense_matrix, load_sparse_binary, write_dense_matrix, DenseFormat, DenseMatrix};
use taghash::{HammingIndex, HashModel, PackedCodes};

/// A quick configuration: small synthetic set, small graphs, short codes.
const SMALL: &str = "include = @synth-small
n = 400
train_n = 200
query_n = 40
m = 20
a = 20
r = 16
features = data/features.dmat
tags = data/tags.txt
labels = data/labels.txt
";

fn taghash(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taghash"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = taghash(dir, args);
    assert!(
        out.status.success(),
        "taghash {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    taghash(dir, args).status.code().unwrap()
}

/// Synthesizes and trains the small configuration inside `dir`.
fn trained(dir: &Path) {
    fs::write(dir.join("small.conf"), SMALL).unwrap();
    ok(dir, &["synth", "--config", "small.conf", "--out", "data"]);
    ok(dir, &["train", "--config", "small.conf", "--out", "run"]);
}

#[test]
fn synth_preset_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("s.conf"), "include = @synth-small\n").unwrap();
    ok(d, &["synth", "--config", "s.conf", "--out", "a"]);
    ok(d, &["synth", "--config", "s.conf", "--out", "b"]);
    let x = load_dense_matrix(&d.join("a/features.dmat"), DenseFormat::Binary).unwrap();
    assert_eq!(x.shape(), (32, 4000));
    let tags = load_sparse_binary(&d.join("a/tags.txt")).unwrap();
    let labels = load_sparse_binary(&d.join("a/labels.txt")).unwrap();
    assert_eq!((tags.rows(), tags.cols()), (40, 4000));
    assert_eq!((labels.rows(), labels.cols()), (8, 4000));
    for f in ["features.dmat", "tags.txt", "labels.txt"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("noise.conf"), "tag_noise_rate = 1.5\n").unwrap();
    assert_eq!(code(d, &["synth", "--config", "noise.conf"]), 2);
    fs::write(d.join("typo.conf"), "alhpa = 1\n").unwrap();
    assert_eq!(code(d, &["synth", "--config", "typo.conf"]), 2);
    assert_eq!(code(d, &["synth", "--config", "missing.conf"]), 2);
    assert_eq!(code(d, &["train", "--variant", "fancy"]), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_taghash"))
        .args(["synth", "--out", "x"])
        .env("THREADS", "0")
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_model_report_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    for f in ["model.hmod", "report.json", "split.json", "retrieval_features.dmat", "query_features.dmat"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("run/report.json")).unwrap()).unwrap();
    let history = report["objective_history"].as_array().unwrap();
    assert_eq!(history.len() as u64, report["iterations"].as_u64().unwrap());
    assert!(report["timings_secs"]["wall"].as_f64().unwrap() > 0.0);
    assert_eq!(report["config"]["r"], "16");
    assert_eq!(report["config"]["variant"], "full");

    let split: serde_json::Value = serde_json::from_slice(&fs::read(d.join("run/split.json")).unwrap()).unwrap();
    assert_eq!(split["query"].as_array().unwrap().len(), 40);
    assert_eq!(split["retrieval"].as_array().unwrap().len(), 360);
    let model = HashModel::read(&d.join("run/model.hmod")).unwrap();
    assert_eq!((model.dims(), model.bits()), (32, 16));
}

#[test]
fn variant_and_bits_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(d, &["train", "--config", "small.conf", "--variant", "relaxed", "--bits", "8", "--out", "relaxed"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("relaxed/report.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "relaxed");
    assert_eq!(report["bits"], 8);
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    fs::write(d.join("notags.conf"), SMALL.replace("tags = data/tags.txt", "tags = data/none.txt")).unwrap();
    assert_eq!(code(d, &["train", "--config", "notags.conf", "--out", "x"]), 3);
    fs::write(d.join("untagged.conf"), SMALL.replace("tags = data/tags.txt", "")).unwrap();
    assert_eq!(code(d, &["train", "--config", "untagged.conf", "--out", "x"]), 3);
    // The tag-free variant does not need them.
    ok(d, &["train", "--config", "untagged.conf", "--variant", "no_tags", "--out", "x"]);

    let wrong_dims = DenseMatrix::from_element(5, 3, 1.0);
    write_dense_matrix(&d.join("wrong.csv"), &wrong_dims, DenseFormat::Csv).unwrap();
    assert_eq!(code(d, &["encode", "--model", "run/model.hmod", "--features", "wrong.csv", "--out", "c.hcod"]), 3);
    assert_eq!(code(d, &["encode", "--model", "data/tags.txt", "--features", "wrong.csv", "--out", "c.hcod"]), 3);
}

#[test]
fn numerical_failure_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    assert_eq!(code(d, &["train", "--config", "small.conf", "--variant", "relaxed", "--out", "ok"]), 0);
    fs::write(d.join("huge.conf"), format!("{SMALL}alpha = 1e300\n")).unwrap();
    assert_eq!(code(d, &["train", "--config", "huge.conf", "--variant", "relaxed", "--out", "x"]), 4);
}

#[test]
fn encode_matches_direct_computation_and_handles_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(d, &["encode", "--model", "run/model.hmod", "--features", "run/query_features.dmat", "--out", "q.hcod"]);
    let model = HashModel::read(&d.join("run/model.hmod")).unwrap();
    let x = load_dense_matrix(&d.join("run/query_features.dmat"), DenseFormat::Binary).unwrap();
    let codes = PackedCodes::read(&d.join("q.hcod")).unwrap();
    assert_eq!(codes.unpack(), model.signs(&x).unwrap());

    write_dense_matrix(&d.join("empty.dmat"), &DenseMatrix::zeros(32, 0), DenseFormat::Binary).unwrap();
    ok(d, &["encode", "--model", "run/model.hmod", "--features", "empty.dmat", "--out", "e.hcod"]);
    let empty = PackedCodes::read(&d.join("e.hcod")).unwrap();
    assert_eq!((empty.len(), empty.bits()), (0, 16));
}

#[test]
fn query_output_agrees_with_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(d, &["encode", "--model", "run/model.hmod", "--features", "run/retrieval_features.dmat", "--out", "db.hcod"]);
    ok(d, &["encode", "--model", "run/model.hmod", "--features", "run/query_features.dmat", "--out", "q.hcod"]);

    // Self-query: the database queried with itself at k = 1.
    let tsv = ok(d, &["query", "--db", "db.hcod", "--queries", "db.hcod", "--k", "1"]);
    let mut lines = tsv.lines();
    assert_eq!(lines.next(), Some("query\trank\tid\tdistance"));
    let db = PackedCodes::read(&d.join("db.hcod")).unwrap();
    for line in lines {
        let f: Vec<u64> = line.split('\t').map(|v| v.parse().unwrap()).collect();
        assert_eq!(f[1], 1);
        assert_eq!(f[3], 0);
        // Ties go to the earliest position, so the hit is the query itself
        // or an earlier duplicate.
        assert!(f[2] <= f[0]);
        assert_eq!(db.code(f[2] as usize), db.code(f[0] as usize));
    }

    ok(d, &["query", "--db", "db.hcod", "--query-features", "run/query_features.dmat", "--model", "run/model.hmod", "--k", "5", "--out", "hits.tsv"]);
    let q = PackedCodes::read(&d.join("q.hcod")).unwrap();
    let index = HammingIndex::with_positions(db.clone());
    let text = fs::read_to_string(d.join("hits.tsv")).unwrap();
    let rows: Vec<Vec<u64>> = text.lines().skip(1).map(|l| l.split('\t').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 5 * q.len());
    for (qi, chunk) in rows.chunks(5).enumerate() {
        // Brute force: every distance, sorted by (distance, position).
        let mut all: Vec<(u32, usize)> = (0..db.len())
            .map(|i| (taghash::retrieval::hamming(q.code(qi), db.code(i)).unwrap(), i))
            .collect();
        all.sort();
        for (k, row) in chunk.iter().enumerate() {
            assert_eq!(row[..2], [qi as u64, k as u64 + 1]);
            assert_eq!((row[3] as u32, row[2] as usize), all[k]);
        }
        assert_eq!(index.query(q.code(qi), 5).unwrap()[0].position, all[0].1);
    }

    assert_eq!(code(d, &["query", "--db", "db.hcod", "--queries", "q.hcod", "--k", "0"]), 2);
}

#[test]
fn evaluate_writes_map_and_a_101_point_curve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Perfect separation: two classes, codes identical within a class and
    // complementary across.
    let signs = |n: usize| DenseMatrix::from_fn(4, n, |_, j| if j % 2 == 0 { 1.0 } else { -1.0 });
    PackedCodes::pack(&signs(10)).unwrap().write(&d.join("db.hcod")).unwrap();
    PackedCodes::pack(&signs(4)).unwrap().write(&d.join("q.hcod")).unwrap();
    let labels = |n: usize| {
        let mut s = format!("2 {n}\n");
        for j in 0..n {
            s += &format!("{} {j}\n", j % 2);
        }
        s
    };
    fs::write(d.join("db.txt"), labels(10)).unwrap();
    fs::write(d.join("q.txt"), labels(4)).unwrap();
    let args = ["evaluate", "--db", "db.hcod", "--queries", "q.hcod", "--db-labels", "db.txt", "--query-labels", "q.txt", "--out", "ev"];
    let stdout = ok(d, &args);
    assert_eq!(stdout.trim(), "MAP 1.000000");
    let pr = fs::read_to_string(d.join("ev/pr.csv")).unwrap();
    let lines: Vec<&str> = pr.lines().collect();
    assert_eq!(lines[0], "recall,precision");
    assert_eq!(lines.len(), 102);
    assert!(lines[1..].iter().all(|l| l.ends_with(",1.000000")));

    fs::write(d.join("short.txt"), labels(3)).unwrap();
    let mut bad = args;
    bad[8] = "short.txt";
    assert_eq!(code(d, &bad), 3);
}

#[test]
fn ablate_writes_one_row_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    fs::write(d.join("ab.conf"), format!("{SMALL}ablation_seeds = 0,1,2,3,4\n")).unwrap();
    ok(d, &["ablate", "--config", "ab.conf", "--out", "ab1"]);
    ok(d, &["ablate", "--config", "ab.conf", "--out", "ab2"]);
    let csv = fs::read_to_string(d.join("ab1/ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,r,seed,map");
    assert_eq!(lines.len(), 1 + 30);
    assert_eq!(csv, fs::read_to_string(d.join("ab2/ablation.csv")).unwrap());
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let out = Command::new(env!("CARGO_BIN_EXE_taghash"))
        .args(["train", "--config", "small.conf", "--out", "one"])
        .env("THREADS", "1")
        .current_dir(d)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(d.join("one/model.hmod")).unwrap(), fs::read(d.join("run/model.hmod")).unwrap());
}
