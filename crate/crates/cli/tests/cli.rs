use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use medseg_core::io::{read_results, write_mask, Pnm, RowStatus};
use medseg_core::types::{LabelMap, Mask2D};
use tempfile::TempDir;

fn medseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medseg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = medseg(args);
    assert!(out.status.success(), "medseg {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    medseg(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn synth(&self, kind: &str, dims: &str) -> PathBuf {
        let out = self.path(kind);
        ok(&["synth", "--kind", kind, "--count", "3", "--dims", dims, "--seed", "2", "--out", s(&out)]);
        out
    }
}

fn square(side: usize, lo: usize, hi: usize) -> Mask2D {
    Mask2D::from_fn(side, side, |r, c| (lo..hi).contains(&r) && (lo..hi).contains(&c))
}

#[test]
fn metrics_on_identical_and_disjoint_masks() {
    let f = Fixture::new();
    let (a, b) = (f.path("a.pgm"), f.path("b.pgm"));
    write_mask(&a, &square(12, 2, 6)).unwrap();
    write_mask(&b, &square(12, 7, 11)).unwrap();
    for metric in ["dsc", "nsd", "jaccard", "bf"] {
        assert_eq!(ok(&["metrics", "--pred", s(&a), "--gt", s(&a), "--metric", metric]).trim(), "1.0000", "{metric}");
        assert_eq!(ok(&["metrics", "--pred", s(&a), "--gt", s(&b), "--metric", metric]).trim(), "0.0000", "{metric}");
    }
    // one-pixel shift: boundary within tau 2 everywhere, within radius 1 too
    let c = f.path("c.pgm");
    write_mask(&c, &square(12, 3, 7)).unwrap();
    assert_eq!(ok(&["metrics", "--pred", s(&a), "--gt", s(&c), "--metric", "nsd", "--tau", "2"]).trim(), "1.0000");
    assert_eq!(ok(&["metrics", "--pred", s(&a), "--gt", s(&c), "--metric", "bf", "--radius", "1.5"]).trim(), "1.0000");
    assert_eq!(ok(&["metrics", "--pred", s(&a), "--gt", s(&c), "--metric", "dsc"]).trim(), "0.5625");
}

#[test]
fn semantic_f1_reads_label_maps() {
    let f = Fixture::new();
    let labels: Vec<u32> = (0..16).map(|i| (i % 3) as u32).collect();
    let map = LabelMap::new(4, 4, labels, 2).unwrap();
    let p = f.path("labels.pgm");
    Pnm::from_label_map(&map).unwrap().write(&p).unwrap();
    for class in ["1", "2"] {
        assert_eq!(ok(&["metrics", "--pred", s(&p), "--gt", s(&p), "--metric", "f1", "--class", class]).trim(), "1.0000");
    }
}

#[test]
fn synth_writes_every_kind_reproducibly() {
    let f = Fixture::new();
    for (kind, dims) in [("two-cell", "24x24"), ("ellipse-organ-stack", "5x24x24"), ("moving-square", "4x24x24")] {
        let a = f.path(&format!("{kind}-a"));
        let b = f.path(&format!("{kind}-b"));
        for out in [&a, &b] {
            let text = ok(&["synth", "--kind", kind, "--count", "2", "--dims", dims, "--seed", "9", "--noise", "0.1", "--out", s(out)]);
            assert!(text.contains(kind));
        }
        let manifest = std::fs::read(a.join("manifest.json")).unwrap();
        assert_eq!(manifest, std::fs::read(b.join("manifest.json")).unwrap());
        assert!(a.join("case_001").is_dir());
    }
    let plain = f.synth("moving-square", "5x24x24");
    for flag in ["--abrupt-motion", "--distractor"] {
        let out = f.path(flag.trim_start_matches('-'));
        ok(&["synth", "--kind", "moving-square", "--count", "3", "--dims", "5x24x24", "--seed", "2", flag, "--out", s(&out)]);
        let differs = std::fs::read_dir(out.join("case_000")).unwrap().any(|e| {
            let e = e.unwrap();
            std::fs::read(e.path()).ok() != std::fs::read(plain.join("case_000").join(e.file_name())).ok()
        });
        assert!(differs, "{flag} had no effect");
    }
}

#[test]
fn eval_commands_score_the_oracle_perfectly_and_report() {
    let f = Fixture::new();
    let runs = [
        ("eval-2d", f.synth("two-cell", "24x24"), "dsc", 1.0),
        ("eval-3d", f.synth("ellipse-organ-stack", "7x24x24"), "nsd", 1.0),
        ("eval-video", f.synth("moving-square", "5x24x24"), "jf", 100.0),
    ];
    for (cmd, data, metric, want) in runs {
        let out = f.path(&format!("{cmd}.jsonl"));
        let table = ok(&[cmd, "--dataset", s(&data), "--segmenter", "builtin:oracle", "--seed", "4", "--out", s(&out)]);
        assert!(table.contains(&format!("{want:.4}±0.0000")), "{table}");
        let rows = read_results(&out).unwrap();
        assert!(rows.iter().all(|r| r.status == RowStatus::Ok && r.metrics[metric] == want && r.seed == 4));

        let text = ok(&["report", "--in", s(&out)]);
        assert_eq!(text, table);
        let json: serde_json::Value = serde_json::from_str(&ok(&["report", "--in", s(&out), "--json"])).unwrap();
        assert_eq!(json["rows"], rows.len());
        assert!(json["groups"].as_array().unwrap().iter().any(|g| g["metric"] == metric && g["mean"] == want));
    }
}

#[test]
fn eval_flags_reach_the_pipeline() {
    let f = Fixture::new();
    let cells = f.synth("two-cell", "24x24");
    let rows = |args: &[&str]| {
        let out = f.path("rows.jsonl");
        let mut all = args.to_vec();
        all.extend(["--out", s(&out)]);
        ok(&all);
        read_results(&out).unwrap()
    };

    let r = rows(&["eval-2d", "--dataset", s(&cells), "--segmenter", "builtin:regiongrow", "--clicks", "4", "--semantic-f1"]);
    assert!(r.iter().all(|r| r.prompts.clicks == 4 && r.metrics.contains_key("f1")));

    let r = rows(&["eval-2d", "--dataset", s(&cells), "--segmenter", "builtin:constant", "--prompt", "box"]);
    assert!(r.iter().all(|r| r.prompts.kind == "box"));

    let r = rows(&["eval-2d", "--dataset", s(&cells), "--segmenter", "builtin:constant", "--prompt", "gtmask"]);
    assert!(r.iter().all(|r| r.prompts.kind == "gtmask" && r.metrics["dsc"] == 1.0));

    let tight = rows(&["eval-2d", "--dataset", s(&cells), "--segmenter", "builtin:regiongrow", "--tau", "0.5"]);
    let loose = rows(&["eval-2d", "--dataset", s(&cells), "--segmenter", "builtin:regiongrow", "--tau", "8"]);
    assert!(tight.iter().zip(&loose).all(|(a, b)| a.metrics["nsd"] <= b.metrics["nsd"]));
    assert!(tight.iter().zip(&loose).any(|(a, b)| a.metrics["nsd"] < b.metrics["nsd"]));

    let narrow = rows(&["eval-2d", "--dataset", s(&cells), "--segmenter", "builtin:regiongrow", "--opt", "tolerance=0.0"]);
    let wide = rows(&["eval-2d", "--dataset", s(&cells), "--segmenter", "builtin:regiongrow", "--opt", "tolerance=1.0"]);
    assert_ne!(narrow[0].metrics, wide[0].metrics);

    let videos = f.synth("moving-square", "6x24x24");
    let excl = rows(&["eval-video", "--dataset", s(&videos), "--segmenter", "builtin:constant", "--frames", "2"]);
    let incl = rows(&["eval-video", "--dataset", s(&videos), "--segmenter", "builtin:constant", "--frames", "2", "--include-interacted"]);
    assert!(excl.iter().all(|r| r.prompts.frames == vec![0, 1]));
    assert_ne!(excl[0].metrics["jf"], incl[0].metrics["jf"]);

    let organs = f.synth("ellipse-organ-stack", "7x24x24");
    let args = ["eval-3d", "--dataset", s(&organs), "--segmenter", "builtin:regiongrow"];
    let reset = rows(&args);
    let mut more = args.to_vec();
    more.push("--no-reset-between-directions");
    let carried = rows(&more);
    assert_eq!(reset.len(), carried.len());
    assert!(reset.iter().zip(&carried).any(|(a, b)| a.metrics != b.metrics));
}

#[test]
fn jobs_do_not_change_results() {
    let f = Fixture::new();
    let videos = f.synth("moving-square", "5x24x24");
    let run = |jobs: &str| {
        let out = f.path(&format!("j{jobs}.jsonl"));
        ok(&["eval-video", "--dataset", s(&videos), "--segmenter", "builtin:regiongrow", "--clicks", "2", "--seed", "3", "--jobs", jobs, "--out", s(&out)]);
        read_results(&out).unwrap().into_iter().map(|r| r.without_timing()).collect::<Vec<_>>()
    };
    let serial = run("1");
    assert_eq!(serial, run("3"));
}

#[test]
fn external_echo_segmenter_with_scratch_override() {
    let f = Fixture::new();
    let videos = f.synth("moving-square", "5x24x24");
    let scratch = f.path("scratch-root");
    let echo = format!("exec:{}", env!("CARGO_BIN_EXE_medseg-echo-segmenter"));
    let out = Command::new(env!("CARGO_BIN_EXE_medseg"))
        .args(["eval-video", "--dataset", s(&videos), "--segmenter", &echo, "--prompt", "gtmask", "--frames", "5", "--include-interacted"])
        .env("MEDSEG_SCRATCH", &scratch)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("100.0000±0.0000"));
    assert!(scratch.is_dir());
    assert_eq!(std::fs::read_dir(&scratch).unwrap().count(), 0, "scratch directories are cleaned up");
}

#[test]
fn toy_train_eval_and_serve_agree() {
    let f = Fixture::new();
    let videos = f.synth("moving-square", "4x16x16");
    let ckpt = f.path("toy.ckpt");
    let text = ok(&[
        "toy-train", "--dataset", s(&videos), "--model", "tiny", "--epochs", "2", "--lr", "1e-3", "--alpha", "2", "--beta", "0.5",
        "--layer-decay", "0.8", "--weight-decay", "0", "--freeze", "prompt_encoder,memory_encoder", "--clicks", "2", "--seed", "1",
        "--ckpt", s(&ckpt),
    ]);
    assert!(text.contains("trained 6 step(s)"), "{text}");
    let tuned = f.path("tuned.ckpt");
    ok(&["toy-train", "--dataset", s(&videos), "--init", s(&ckpt), "--epochs", "1", "--freeze", "", "--ckpt", s(&tuned)]);
    assert_ne!(std::fs::read(&ckpt).unwrap(), std::fs::read(&tuned).unwrap());

    let eval = |seg: &str, extra: &[&str]| {
        let out = f.path("toy.jsonl");
        let mut args = vec!["eval-video", "--dataset", s(&videos), "--segmenter", seg, "--clicks", "2", "--seed", "5", "--out", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        read_results(&out).unwrap().into_iter().map(|r| r.metrics).collect::<Vec<_>>()
    };
    let in_process = eval("builtin:toy", &["--opt", &format!("ckpt={}", s(&ckpt))]);
    let served = eval(&format!("exec:{} toy-serve --ckpt {}", env!("CARGO_BIN_EXE_medseg"), s(&ckpt)), &[]);
    assert_eq!(in_process, served);
    let no_memory = eval(&format!("exec:{} toy-serve --ckpt {} --no-memory", env!("CARGO_BIN_EXE_medseg"), s(&ckpt)), &[]);
    let builtin_no_memory = eval("builtin:toy", &["--opt", &format!("ckpt={}", s(&ckpt)), "--opt", "memory=false"]);
    assert_eq!(no_memory, builtin_no_memory);
}

#[test]
fn gradcheck_passes() {
    let text = ok(&["gradcheck", "--seed", "3", "--coords", "64"]);
    assert!(text.contains("checked 64 coordinates"), "{text}");
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["eval-2d", "--dataset", "x", "--segmenter", "builtin:oracle", "--clicks", "0"]), 2);
    assert_eq!(code(&["eval-2d", "--dataset", "x", "--segmenter", "nonsense"]), 2);
    assert_eq!(code(&["synth", "--kind", "blob", "--out", "x"]), 2);
    assert_eq!(code(&["eval-2d", "--dataset", s(&f.path("missing")), "--segmenter", "builtin:oracle"]), 1);
    assert_eq!(code(&["report", "--in", s(&f.path("missing.jsonl"))]), 1);
    let videos = f.synth("moving-square", "4x16x16");
    assert_eq!(code(&["eval-2d", "--dataset", s(&videos), "--segmenter", "builtin:oracle"]), 1);
    assert_eq!(code(&["eval-video", "--dataset", s(&videos), "--segmenter", "exec:/nonexistent/segmenter"]), 1);
}
