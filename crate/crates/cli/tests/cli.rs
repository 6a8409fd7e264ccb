use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn momentir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_momentir"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn momentir")
}

fn ok(args: &[&str]) -> String {
    let out = momentir(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_of_failure(args: &[&str]) -> String {
    let out = momentir(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn fixture(dir: &Path) -> String {
    let fx = dir.join("fx");
    let s = fx.to_str().unwrap().to_string();
    ok(&[
        "gen-fixture",
        "--out",
        &s,
        "--images",
        "1200",
        "--days",
        "4",
        "--topics",
        "3",
        "--dim",
        "128",
    ]);
    s
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn pipeline_writes_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let cfg = format!("{fx}/config.toml");
    let stdout = ok(&["pipeline", "--config", &cfg, "--preset", "lsat03", "--k-out", "50"]);
    assert!(stdout.contains("all"));
    let run = lines(&Path::new(&fx).join("out/run.txt"));
    assert_eq!(run.len(), 3 * 50);
    assert!(run[0].ends_with("lsat03"));
    let stages = fs::read_to_string(Path::new(&fx).join("out/stages.log")).unwrap();
    assert!(stages.contains("*\tblur_filter\t"));
    assert!(stages.contains("T01\trerank\t"));
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let cfg = format!("{fx}/config.toml");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["pipeline", "--config", &cfg, "--output", a.to_str().unwrap()]);
    ok(&["pipeline", "--config", &cfg, "--output", b.to_str().unwrap()]);
    assert_eq!(
        fs::read(a.join("run.txt")).unwrap(),
        fs::read(b.join("run.txt")).unwrap()
    );
}

#[test]
fn evaluate_matches_pipeline_report() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    ok(&[
        "pipeline",
        "--config",
        &format!("{fx}/config.toml"),
        "--preset",
        "lsat01",
    ]);
    let kv = ok(&[
        "evaluate",
        "--run",
        &format!("{fx}/out/run.txt"),
        "--qrels",
        &format!("{fx}/qrels.txt"),
        "--kv",
    ]);
    let saved = fs::read_to_string(format!("{fx}/out/report.kv")).unwrap();
    let mean = |text: &str| text.lines().find(|l| l.starts_with("mean.map=")).unwrap().to_string();
    assert_eq!(mean(&kv), mean(&saved));
}

#[test]
fn retrieve_then_rerank() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let cfg = format!("{fx}/config.toml");
    let ret = dir.path().join("ret");
    let stdout = ok(&[
        "retrieve",
        "--config",
        &cfg,
        "--preset",
        "lsat06",
        "--output",
        ret.to_str().unwrap(),
    ]);
    assert!(stdout.is_empty());
    assert!(!ret.join("report.txt").exists());
    assert!(!fs::read_to_string(ret.join("stages.log")).unwrap().contains("rerank"));

    let rr = dir.path().join("rr");
    ok(&[
        "rerank",
        "--config",
        &cfg,
        "--run",
        ret.join("run.txt").to_str().unwrap(),
        "--rewrites",
        ret.join("rewrites.tsv").to_str().unwrap(),
        "--output",
        rr.to_str().unwrap(),
    ]);
    let before: Vec<String> = lines(&ret.join("run.txt"));
    let after: Vec<String> = lines(&rr.join("run.txt"));
    assert_eq!(before.len(), after.len());
    let ids = |rows: &[String]| {
        let mut v: Vec<String> = rows
            .iter()
            .map(|l| l.split(' ').take(3).collect::<Vec<_>>().join(" "))
            .collect();
        v.sort();
        v
    };
    assert_eq!(ids(&before), ids(&after));
    assert!(rr.join("report.txt").is_file());
}

#[test]
fn corpus_subcommands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    ok(&[
        "ingest",
        "--manifest",
        &format!("{fx}/manifest.tsv"),
        "--out",
        &p("m.tsv"),
    ]);
    assert_eq!(
        lines(&dir.path().join("m.tsv")),
        lines(&Path::new(&fx).join("manifest.tsv"))
    );

    ok(&[
        "filter-blur",
        "--manifest",
        &p("m.tsv"),
        "--sharpness",
        &format!("{fx}/sharpness.tsv"),
        "--blurry-sample",
        &format!("{fx}/blurry_sample.txt"),
        "--out",
        &p("kept.tsv"),
        "--removed",
        &p("removed.txt"),
    ]);
    let kept = lines(&dir.path().join("kept.tsv")).len();
    let removed = lines(&dir.path().join("removed.txt")).len();
    assert!(removed > 0);
    assert_eq!(kept + removed, lines(&dir.path().join("m.tsv")).len());

    ok(&[
        "embed",
        "--manifest",
        &p("kept.tsv"),
        "--captions",
        &format!("{fx}/captions.tsv"),
        "--dim",
        "128",
        "--out",
        &p("store.lmeb"),
    ]);
    ok(&[
        "segment",
        "--manifest",
        &p("kept.tsv"),
        "--store",
        &p("store.lmeb"),
        "--tau",
        "0.6",
        "--out",
        &p("events.tsv"),
    ]);
    let events = lines(&dir.path().join("events.tsv"));
    let members: usize = events
        .iter()
        .map(|l| l.rsplit('\t').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(members, kept);
}

#[test]
fn ingest_scores_rasters() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = dir.path().join("imgs");
    fs::create_dir(&imgs).unwrap();
    let flat = image::GrayImage::from_pixel(16, 16, image::Luma([90]));
    let edges = image::GrayImage::from_fn(16, 16, |x, _| image::Luma([if x < 8 { 0 } else { 255 }]));
    flat.save(imgs.join("20240101_080000_000.png")).unwrap();
    edges.save(imgs.join("20240101_080100_000.png")).unwrap();
    let manifest = dir.path().join("m.tsv");
    fs::write(
        &manifest,
        "20240101_080000_000\t2024-01-01T08:00\n20240101_080100_000\t2024-01-01T08:01\n",
    )
    .unwrap();
    let sharp = dir.path().join("sharp.tsv");
    ok(&[
        "ingest",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("out.tsv").to_str().unwrap(),
        "--images",
        imgs.to_str().unwrap(),
        "--sharpness-out",
        sharp.to_str().unwrap(),
    ]);
    let rows = lines(&sharp);
    assert_eq!(rows.len(), 2);
    assert!(rows[0].ends_with("\t0"), "{rows:?}");
    let edge: f64 = rows[1].split('\t').nth(1).unwrap().parse().unwrap();
    assert!(edge > 0.0);
}

#[test]
fn unknown_preset_fails_with_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let err = stderr_of_failure(&[
        "pipeline",
        "--config",
        &format!("{fx}/config.toml"),
        "--preset",
        "lsat99",
    ]);
    assert!(err.contains("lsat99") && err.contains("lsat06"), "{err}");
    assert!(!Path::new(&fx).join("out").exists());
}

#[test]
fn stage_failure_is_named_and_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    fs::write(format!("{fx}/llm_fixture.tsv"), "").unwrap();
    let err = stderr_of_failure(&["pipeline", "--config", &format!("{fx}/config.toml")]);
    assert!(err.contains("stage rewrite"), "{err}");
    assert!(!Path::new(&fx).join("out").exists());
}

#[test]
fn missing_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.tsv");
    let err = stderr_of_failure(&["ingest", "--manifest", missing.to_str().unwrap(), "--out", "x.tsv"]);
    assert!(err.starts_with("error: ingest"), "{err}");
    assert!(err.contains("none.tsv"));
    let err = stderr_of_failure(&["evaluate", "--run", missing.to_str().unwrap(), "--qrels", "q"]);
    assert!(err.contains("evaluate"));
}
