use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cir_core::synthetic::arc_benchmark;
use cir_core::tat::train::init_towers;
use cir_core::tat::{AdapterBlob, ExperimentConfig};
use cir_core::{normalize, EmbeddingBank, Modality, UnitEmbedding};
use serde_json::Value;
use tempfile::TempDir;

fn cir(dir: &Path, args: &[&str]) -> Output {
    cir_env(dir, args, &[])
}

fn cir_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cir"));
    cmd.current_dir(dir).args(args);
    for var in ["CIR_SEED", "CIR_CONFIG", "CIR_ALPHA", "CIR_PROTOCOL", "CIR_SHARDS"] {
        cmd.env_remove(var);
    }
    cmd.envs(env.iter().copied());
    cmd.output().expect("run cir")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", stderr(o));
    serde_json::from_str(stdout(o).trim()).unwrap()
}

fn u(v: &[f64]) -> UnitEmbedding {
    normalize(v).unwrap()
}

fn save(dir: &Path, name: &str, modality: Modality, entries: &[(&str, UnitEmbedding)]) -> PathBuf {
    let dim = entries[0].1.dim();
    let bank = EmbeddingBank::from_entries(dim, modality, entries.iter().cloned()).unwrap();
    let path = dir.join(name);
    bank.save(&path).unwrap();
    path
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// CEB1 bytes with arbitrary (possibly invalid) rows.
fn raw_bank(dim: u32, records: &[(&str, Vec<f32>)]) -> Vec<u8> {
    let mut out = b"CEB1".to_vec();
    out.extend(dim.to_le_bytes());
    out.extend((records.len() as u64).to_le_bytes());
    out.push(1);
    out.extend([0u8; 15]);
    for (id, v) in records {
        out.extend((id.len() as u16).to_le_bytes());
        out.extend(id.as_bytes());
        for x in v {
            out.extend(x.to_le_bytes());
        }
    }
    out
}

/// Orthogonal two-dimensional fixture: images on e1, texts on e2.
fn orthogonal(dir: &Path) {
    save(
        dir,
        "img.ceb",
        Modality::Image,
        &[("i1", u(&[1.0, 0.0])), ("i2", u(&[1.0, 1.0]))],
    );
    save(
        dir,
        "txt.ceb",
        Modality::Text,
        &[("t1", u(&[0.0, 1.0])), ("t2", u(&[-1.0, 1.0]))],
    );
    write(dir, "pairs.tsv", "# query\timage\ttext\nq1\ti1\tt1\nq2\ti2\tt2\n");
}

#[test]
fn validate_reports_by_exit_code() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    orthogonal(d);
    let ok = cir(d, &["validate", "img.ceb"]);
    let report = json(&ok);
    assert_eq!(report["errors"], Value::Array(vec![]));
    assert_eq!(report["warnings"], Value::Array(vec![]));
    assert_eq!(report["count"], 2);
    assert_eq!(report["config"]["bank"], "img.ceb");

    let bytes = std::fs::read(d.join("img.ceb")).unwrap();
    std::fs::write(d.join("cut.ceb"), &bytes[..bytes.len() - 3]).unwrap();
    let cut = cir(d, &["validate", "cut.ceb"]);
    assert_eq!(code(&cut), 2);
    assert!(stderr(&cut).contains("truncated"), "{}", stderr(&cut));

    std::fs::write(
        d.join("nan.ceb"),
        raw_bank(2, &[("fine", vec![1.0, 0.0]), ("broken-7", vec![f32::NAN, 0.0])]),
    )
    .unwrap();
    let nan = cir(d, &["validate", "nan.ceb"]);
    assert_eq!(code(&nan), 1);
    assert!(stderr(&nan).contains("broken-7"));
    assert!(stdout(&nan).contains("broken-7"));

    let pretty = cir(d, &["--pretty", "validate", "img.ceb"]);
    assert_eq!(code(&pretty), 0);
    assert!(stdout(&pretty).contains("2 entries"));
}

#[test]
fn validate_checks_extractor_manifest() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    orthogonal(d);
    write(d, "m.tsv", "i1\timages/a.png\ni2\timages/b.png\n");
    assert_eq!(code(&cir(d, &["validate", "img.ceb", "--manifest", "m.tsv"])), 0);
    write(d, "short.tsv", "i1\timages/a.png\ni9\timages/z.png\n");
    let o = cir(d, &["validate", "img.ceb", "--manifest", "short.tsv"]);
    assert_eq!(code(&o), 1);
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["manifest"]["missing_from_bank"][0], "i9");
    assert_eq!(v["manifest"]["not_in_manifest"][0], "i2");
    write(d, "broken.tsv", "no tab here\n");
    assert_eq!(code(&cir(d, &["validate", "img.ceb", "--manifest", "broken.tsv"])), 2);
}

#[test]
fn compose_endpoints_and_midpoint() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    orthogonal(d);
    let images = EmbeddingBank::load(d.join("img.ceb")).unwrap();
    let texts = EmbeddingBank::load(d.join("txt.ceb")).unwrap();

    json(&cir(
        d,
        &[
            "compose",
            "--images",
            "img.ceb",
            "--texts",
            "txt.ceb",
            "--pairs",
            "pairs.tsv",
            "--alpha",
            "0",
            "-o",
            "a0.ceb",
        ],
    ));
    let a0 = EmbeddingBank::load(d.join("a0.ceb")).unwrap();
    assert_eq!(a0.ids(), ["q1", "q2"]);
    assert_eq!(a0.row(0), images.row(0));
    assert_eq!(a0.row(1), images.row(1));

    json(&cir(
        d,
        &[
            "compose",
            "--images",
            "img.ceb",
            "--texts",
            "txt.ceb",
            "--pairs",
            "pairs.tsv",
            "--alpha",
            "1",
            "-o",
            "a1.ceb",
        ],
    ));
    let a1 = EmbeddingBank::load(d.join("a1.ceb")).unwrap();
    assert_eq!(a1.row(0), texts.row(0));
    assert_eq!(a1.row(1), texts.row(1));

    let out = json(&cir(
        d,
        &[
            "compose",
            "--images",
            "img.ceb",
            "--texts",
            "txt.ceb",
            "--pairs",
            "pairs.tsv",
            "--alpha",
            "0.5",
            "-o",
            "h.ceb",
        ],
    ));
    assert_eq!(out["count"], 2);
    let half = EmbeddingBank::load(d.join("h.ceb")).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for (got, want) in half.row(0).iter().zip([s, s]) {
        assert!((*got as f64 - want).abs() < 1e-7);
    }
    // q2: 45° and 135° are orthogonal, so the midpoint sits at 90°.
    for (got, want) in half.row(1).iter().zip([0.0, 1.0]) {
        assert!((*got as f64 - want).abs() < 1e-7);
    }
    let side: Value = serde_json::from_str(&std::fs::read_to_string(d.join("h.ceb.json")).unwrap()).unwrap();
    assert_eq!(side["config"]["alpha"], 0.5);
    assert_eq!(side["config"]["pairs"], "pairs.tsv");
}

#[test]
fn compose_names_unknown_ids_by_line() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    orthogonal(d);
    write(d, "bad.tsv", "q1\ti1\tt1\n\nq2\ti2\tmissing-caption\n");
    let o = cir(
        d,
        &[
            "compose", "--images", "img.ceb", "--texts", "txt.ceb", "--pairs", "bad.tsv", "-o", "x.ceb",
        ],
    );
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("missing-caption"), "{err}");
    assert!(!d.join("x.ceb").exists());

    write(d, "ragged.tsv", "q1\ti1\tt1\textra\tcolumns\n");
    let o = cir(
        d,
        &[
            "compose",
            "--images",
            "img.ceb",
            "--texts",
            "txt.ceb",
            "--pairs",
            "ragged.tsv",
            "-o",
            "x.ceb",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn search_examples() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    save(d, "q.ceb", Modality::Unspecified, &[("q", u(&[1.0, 0.2]))]);
    save(
        d,
        "g.ceb",
        Modality::Image,
        &[("far", u(&[0.0, 1.0])), ("near", u(&[1.0, 0.0]))],
    );
    let o = cir(d, &["search", "--queries", "q.ceb", "--gallery", "g.ceb", "-k", "2"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0], rows[0][1], rows[0][2]), ("q", "1", "near"));
    assert_eq!((rows[1][1], rows[1][2]), ("2", "far"));
    assert!(rows[0][3].parse::<f64>().unwrap() > rows[1][3].parse::<f64>().unwrap());
    assert!(text.starts_with("# config {"));

    let all = stdout(&cir(
        d,
        &["search", "--queries", "q.ceb", "--gallery", "g.ceb", "-k", "50"],
    ));
    assert_eq!(all.lines().filter(|l| !l.starts_with('#')).count(), 2);

    write(d, "ex.tsv", "q\tnear\n");
    let ex = stdout(&cir(
        d,
        &[
            "search",
            "--queries",
            "q.ceb",
            "--gallery",
            "g.ceb",
            "--exclude",
            "ex.tsv",
        ],
    ));
    let ex_rows: Vec<&str> = ex.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(ex_rows.len(), 1);
    assert!(ex_rows[0].contains("far"));
}

#[test]
fn search_is_byte_deterministic_across_runs_and_shards() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let b = arc_benchmark(20, 16, 0.8, 300, 4).unwrap();
    b.gallery.save(d.join("g.ceb")).unwrap();
    b.image_bank.save(d.join("q.ceb")).unwrap();
    let run = |shards: &str| {
        cir(
            d,
            &[
                "search",
                "--queries",
                "q.ceb",
                "--gallery",
                "g.ceb",
                "-k",
                "25",
                "-o",
                "out.tsv",
                "--shards",
                shards,
            ],
        );
        let text = std::fs::read_to_string(d.join("out.tsv")).unwrap();
        text.lines().skip(1).collect::<Vec<_>>().join("\n")
    };
    let one = run("1");
    assert_eq!(one, run("1"));
    assert_eq!(one, run("7"));
    assert_eq!(one.lines().count(), 1 + 20 * 25);
}

#[test]
fn search_dimension_mismatch_is_a_domain_error() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    save(d, "q.ceb", Modality::Unspecified, &[("q", u(&[1.0, 0.0, 0.0]))]);
    save(d, "g.ceb", Modality::Image, &[("a", u(&[1.0, 0.0]))]);
    let o = cir(d, &["search", "--queries", "q.ceb", "--gallery", "g.ceb"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("`q`"));
}

/// Writes an arc benchmark's banks and instance file into `d`.
fn arc_files(d: &Path, construction: f64) {
    let b = arc_benchmark(25, 16, construction, 100, 8).unwrap();
    b.image_bank.save(d.join("img.ceb")).unwrap();
    b.text_bank.save(d.join("txt.ceb")).unwrap();
    b.gallery.save(d.join("gal.ceb")).unwrap();
    let lines: Vec<String> = b.instances.iter().map(|i| serde_json::to_string(i).unwrap()).collect();
    write(d, "inst.jsonl", &(lines.join("\n") + "\n"));
}

const BENCH: [&str; 8] = [
    "--instances",
    "inst.jsonl",
    "--images",
    "img.ceb",
    "--texts",
    "txt.ceb",
    "--gallery",
    "gal.ceb",
];

fn eval_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["eval"];
    v.extend(BENCH);
    v.extend(extra);
    v
}

#[test]
fn eval_perfect_benchmark_and_protocol_defaults() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    arc_files(d, 0.8);
    let r = json(&cir(d, &eval_args(&["--ks", "1,5,10"])));
    assert_eq!(r["alpha"], 0.8);
    assert_eq!(r["config"]["protocol"], "generic_recall");
    for k in ["1", "5", "10"] {
        assert_eq!(r["per_k_scores"][k], 100.0);
    }

    let circo = json(&cir(d, &eval_args(&["--protocol", "circo"])));
    assert_eq!(circo["alpha"], 0.8);
    assert_eq!(circo["config"]["ks"], serde_json::json!([5, 10, 25, 50]));
    assert_eq!(circo["per_k_scores"]["5"], 100.0);

    let arc9 = TempDir::new().unwrap();
    arc_files(arc9.path(), 0.9);
    let cirr_lines: Vec<String> = std::fs::read_to_string(arc9.path().join("inst.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            let target = v["target_ids"][0].clone();
            v["subset_ids"] = serde_json::json!([target, v["reference_id"]]);
            v.to_string()
        })
        .collect();
    write(arc9.path(), "inst.jsonl", &cirr_lines.join("\n"));
    // CIRR subsets must live in the gallery; add the references to it.
    let b = arc_benchmark(25, 16, 0.9, 100, 8).unwrap();
    let mut gallery = b.gallery.clone();
    for (i, id) in b.image_bank.ids().iter().enumerate() {
        gallery.insert(id.clone(), &b.image_bank.embedding_at(i)).unwrap();
    }
    gallery.save(arc9.path().join("gal.ceb")).unwrap();
    let cirr = json(&cir(arc9.path(), &eval_args(&["--protocol", "cirr", "--ks", "1"])));
    assert_eq!(cirr["alpha"], 0.9);
    assert_eq!(cirr["per_k_scores"]["1"], 100.0);
    assert_eq!(cirr["subset_scores"]["1"], 100.0);

    let pretty = cir(
        d,
        &["--pretty", "eval", "--ks", "1"]
            .iter()
            .chain(&BENCH)
            .copied()
            .collect::<Vec<_>>(),
    );
    assert!(stdout(&pretty).contains("R@1"));
}

#[test]
fn eval_reports_offending_lines() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    arc_files(d, 0.8);
    let o = cir(d, &eval_args(&["--protocol", "cirr"]));
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("line 1") && stderr(&o).contains("subset_ids"),
        "{}",
        stderr(&o)
    );

    let text = std::fs::read_to_string(d.join("inst.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = lines[3].replace("\"target_ids\":[\"", "\"target_ids\":[\"ghost-");
    write(d, "inst.jsonl", &lines.join("\n"));
    let o = cir(d, &eval_args(&[]));
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("line 4") && stderr(&o).contains("ghost-"),
        "{}",
        stderr(&o)
    );

    lines[3] = "{not json".into();
    write(d, "inst.jsonl", &lines.join("\n"));
    let o = cir(d, &eval_args(&[]));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 4"));
}

#[test]
fn eval_caption_modes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    save(
        d,
        "img.ceb",
        Modality::Image,
        &[
            ("r", u(&[1.0, 0.0, 0.0])),
            ("a", u(&[0.0, 1.0, 0.0])),
            ("b", u(&[0.0, 0.0, 1.0])),
        ],
    );
    save(
        d,
        "txt.ceb",
        Modality::Text,
        &[("c0", u(&[0.0, 1.0, 0.0])), ("c1", u(&[0.0, 0.0, 1.0]))],
    );
    write(
        d,
        "inst.jsonl",
        r#"{"query_id":"q","reference_id":"r","caption_id":"c0","caption_ids":["c0","c1"],"target_ids":["b"],"exclude_reference":true}"#,
    );
    let base = [
        "eval",
        "--instances",
        "inst.jsonl",
        "--images",
        "img.ceb",
        "--texts",
        "txt.ceb",
        "--alpha",
        "1",
        "--ks",
        "1",
    ];
    let with = |mode: &str| {
        let mut args = base.to_vec();
        args.extend(["--caption-mode", mode]);
        json(&cir(d, &args))["per_k_scores"]["1"].as_f64().unwrap()
    };
    assert_eq!(with("primary"), 0.0);
    assert_eq!(with("1"), 100.0);
    assert_eq!(with("0"), 0.0);
    let bad = cir(d, &[&base[..], &["--caption-mode", "7"]].concat());
    assert_eq!(code(&bad), 1);
}

#[test]
fn option_precedence_is_flag_env_file_default() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    arc_files(d, 0.8);
    write(d, "run.cfg", "# shared run options\nalpha = 0.3\nks = 1\n");
    let alpha =
        |args: &[&str], env: &[(&str, &str)]| json(&cir_env(d, &eval_args(args), env))["alpha"].as_f64().unwrap();
    assert_eq!(alpha(&[], &[]), 0.8);
    assert_eq!(alpha(&["--config", "run.cfg"], &[]), 0.3);
    assert_eq!(alpha(&[], &[("CIR_CONFIG", "run.cfg")]), 0.3);
    assert_eq!(alpha(&["--config", "run.cfg"], &[("CIR_ALPHA", "0.6")]), 0.6);
    assert_eq!(
        alpha(&["--config", "run.cfg", "--alpha", "0.1"], &[("CIR_ALPHA", "0.6")]),
        0.1
    );

    let seed = |args: &[&str], env: &[(&str, &str)]| {
        json(&cir_env(d, &eval_args(args), env))["config"]["seed"]
            .as_u64()
            .unwrap()
    };
    write(d, "seed.cfg", "seed = 5\n");
    assert_eq!(seed(&[], &[]), 42);
    assert_eq!(seed(&["--config", "seed.cfg"], &[]), 5);
    assert_eq!(seed(&["--config", "seed.cfg"], &[("CIR_SEED", "6")]), 6);
    assert_eq!(seed(&["--config", "seed.cfg", "--seed", "7"], &[("CIR_SEED", "6")]), 7);

    write(d, "typo.cfg", "alhpa = 0.3\n");
    let o = cir(d, &eval_args(&["--config", "typo.cfg"]));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("alhpa"));
}

#[test]
fn sweep_grid_rows_endpoints_and_peak() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    arc_files(d, 0.3);
    let mut args = vec!["sweep-alpha"];
    args.extend(BENCH);
    args.extend(["--ks", "1,5"]);
    let o = cir(d, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("# config "));
    let rows: Vec<Vec<&str>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').collect())
        .collect();
    assert_eq!(rows[0], ["alpha", "R@1", "R@5"]);
    assert_eq!(rows.len(), 12);
    let r1: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    let best = r1.iter().cloned().fold(f64::MIN, f64::max);
    let peaks: Vec<&str> = rows[1..]
        .iter()
        .zip(&r1)
        .filter(|(_, v)| **v == best)
        .map(|(r, _)| r[0])
        .collect();
    assert_eq!(peaks, ["0.3"]);

    for (alpha, row) in [("0", &rows[1]), ("1", &rows[11])] {
        let e = json(&cir(d, &eval_args(&["--ks", "1,5", "--alpha", alpha])));
        assert_eq!(format!("{:.4}", e["per_k_scores"]["1"].as_f64().unwrap()), row[1]);
        assert_eq!(format!("{:.4}", e["per_k_scores"]["5"].as_f64().unwrap()), row[2]);
    }
}

fn train(d: &Path, out: &str, extra: &[&str]) -> Value {
    let mut args = vec!["train-tat", "--out-dir", out];
    args.extend(extra);
    json(&cir(d, &args))
}

#[test]
fn train_zero_epochs_writes_the_initialization() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let s = train(d, "z", &["--epochs", "0"]);
    assert_eq!(s["blobs"].as_array().unwrap().len(), 1);
    let blob = AdapterBlob::from_bytes(&std::fs::read(d.join("z/image_adapter.cta")).unwrap()).unwrap();
    let cfg = ExperimentConfig::default();
    let (image, _) = init_towers(&cfg.train, cfg.data.dim).unwrap();
    assert_eq!(blob, AdapterBlob::from_params(&image));
    assert_eq!(
        std::fs::read_to_string(d.join("z/history.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2
    );
    assert!(d.join("z/image_adapter.cta.json").exists());
}

#[test]
fn train_reruns_are_identical_and_seed_matters() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let quick = ["--epochs", "3", "--set", "n_pairs=300"];
    let read = |f: &str| std::fs::read(d.join("a").join(f)).unwrap();
    let first = train(d, "a", &quick);
    let (blob, history) = (read("image_adapter.cta"), read("history.jsonl"));
    assert_eq!(train(d, "a", &quick), first);
    assert_eq!(read("image_adapter.cta"), blob);
    assert_eq!(read("history.jsonl"), history);
    let mut args = vec!["train-tat", "--out-dir", "c"];
    args.extend(quick);
    json(&cir_env(d, &args, &[("CIR_SEED", "9")]));
    assert_ne!(
        std::fs::read(d.join("a/image_adapter.cta")).unwrap(),
        std::fs::read(d.join("c/image_adapter.cta")).unwrap()
    );
    let header: Value = serde_json::from_str(
        std::fs::read_to_string(d.join("c/history.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(header["config"]["seed"], 9);
    assert_eq!(header["config"]["experiment"]["data"]["seed"], 9);

    let both = train(
        d,
        "n",
        &["--epochs", "1", "--set", "n_pairs=300", "--anchoring", "none_anchor"],
    );
    assert_eq!(both["blobs"].as_array().unwrap().len(), 2);
    assert!(d.join("n/text_adapter.cta").exists());
}

#[test]
fn train_default_config_closes_the_gap() {
    let dir = TempDir::new().unwrap();
    let s = train(dir.path(), "out", &[]);
    let before = s["initial"]["mean_paired_cosine"].as_f64().unwrap();
    let after = s["final"]["mean_paired_cosine"].as_f64().unwrap();
    assert!(after > before, "{before} -> {after}");
    assert_eq!(s["epochs"], 30);
}

#[test]
fn train_rejects_bad_config() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for extra in [
        &["--set", "rank=0"][..],
        &["--set", "nonsense"],
        &["--set", "seed=3"],
        &["--anchoring", "sideways"],
    ] {
        let mut args = vec!["train-tat", "--out-dir", "x"];
        args.extend(extra);
        assert_eq!(code(&cir(d, &args)), 1, "{extra:?}");
    }
    write(d, "t.cfg", "epochs = 1\nn_pairs = 200\ntau = 0.5\n");
    let s = train(d, "y", &["--config", "t.cfg"]);
    assert_eq!(s["config"]["experiment"]["train"]["logit_scale"], 2.0);
    assert_eq!(s["epochs"], 1);
}

#[test]
fn gap_command() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (c, s) = (0.5f64, 0.75f64.sqrt());
    save(
        d,
        "img.ceb",
        Modality::Image,
        &[("i1", u(&[1.0, 0.0, 0.0])), ("i2", u(&[0.0, 0.0, 1.0]))],
    );
    save(
        d,
        "txt.ceb",
        Modality::Text,
        &[("t1", u(&[c, s, 0.0])), ("t2", u(&[0.0, s, c]))],
    );
    write(d, "pairs.tsv", "i1\tt1\ni2\tt2\n");
    let g = json(&cir(
        d,
        &[
            "gap",
            "--images",
            "img.ceb",
            "--texts",
            "txt.ceb",
            "--pairs",
            "pairs.tsv",
        ],
    ));
    assert!((g["mean_paired_cosine"].as_f64().unwrap() - 0.5).abs() < 1e-6);
    assert_eq!(g["n_pairs"], 2);
    assert_eq!(g["config"]["command"], "gap");

    write(d, "one.tsv", "i1\tt1\n");
    let one = json(&cir(
        d,
        &["gap", "--images", "img.ceb", "--texts", "txt.ceb", "--pairs", "one.tsv"],
    ));
    assert_eq!(one["mean_unpaired_cosine"], Value::Null);

    write(d, "bad.tsv", "i1\tt1\ni7\tt2\n");
    let o = cir(
        d,
        &["gap", "--images", "img.ceb", "--texts", "txt.ceb", "--pairs", "bad.tsv"],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 2") && stderr(&o).contains("i7"));
}
