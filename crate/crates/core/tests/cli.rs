use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use amc::tensorio::{ActivationTensor, Manifest, TensorData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn amc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amc"))
        .args(args)
        .env_remove("AMC_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Float post-ReLU-like tensors: mostly zeros and an exponential tail.
fn write_dump(dir: &Path, seed: u64, batches: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Manifest::new(dir);
    for (layer, dims) in [("conv1", [4u32, 6, 6, 3]), ("fc1", [4, 1, 1, 20])] {
        for b in 0..batches {
            let n = dims.iter().product::<u32>() as usize;
            let v: Vec<f32> = (0..n)
                .map(|_| if rng.gen_bool(0.35) { -rng.gen_range(1e-4f32..1.0).ln() } else { 0.0 })
                .collect();
            m.add(&ActivationTensor::from_f32(layer, dims, v).unwrap(), b, "evaluation").unwrap();
        }
    }
    m.write().unwrap();
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn compress_decompress_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (cal, eval, out) = (tmp.path().join("cal"), tmp.path().join("eval"), tmp.path().join("out"));
    write_dump(&cal, 1, 2);
    write_dump(&eval, 2, 3);
    let o = amc(&[
        "compress", "--codec", "all", "--k", "auto", "--q", "16", "--train-manifest", s(&cal), "--in", s(&eval), "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report.csv").is_file());
    assert!(out.join("histograms.json").is_file());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["q"], 16);
    assert_eq!(report["verified_blobs"], 6 * 5);
    assert!(out.join("seg/conv1/00002.segb").is_file());

    let o = amc(&["decompress", "--in", s(&out), "--verify", s(&eval), "--out", s(&tmp.path().join("dec"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("30 of 30"));
    let dec = Manifest::read(&tmp.path().join("dec")).unwrap();
    assert_eq!(dec.entries.len(), 30);

    // change one source value: verification must fail with exit code 4
    let m = Manifest::read(&eval).unwrap();
    let e = &m.entries[0];
    let mut t = m.load(e).unwrap();
    if let TensorData::F32(v) = &mut t.data {
        v[0] += 0.5;
    }
    amc::tensorio::save_tensor_file(&t, &m.resolve(e)).unwrap();
    let o = amc(&["decompress", "--in", s(&out), "--verify", s(&eval)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn identical_arguments_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let (cal, eval) = (tmp.path().join("cal"), tmp.path().join("eval"));
    write_dump(&cal, 3, 1);
    write_dump(&eval, 4, 4);
    let run = |out: &Path, jobs: &str| {
        let o = amc(&[
            "--seed", "9", "--jobs", jobs, "compress", "--train-manifest", s(&cal), "--in", s(&eval), "--out", s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        tree(out)
    };
    let a = run(&tmp.path().join("a"), "1");
    let b = run(&tmp.path().join("b"), "1");
    let c = run(&tmp.path().join("c"), "3");
    assert!(a.len() > 10);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn stats_quantize_search_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let eval = tmp.path().join("eval");
    write_dump(&eval, 5, 2);
    let o = amc(&["stats", "--in", s(&eval), "--json"]);
    assert_eq!(code(&o), 0);
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let m = Manifest::read(&eval).unwrap();
    let conv: Vec<_> = m.entries.iter().filter(|e| e.layer == "conv1").map(|e| m.load(e).unwrap()).collect();
    let nz: u64 = conv.iter().map(|t| t.nonzero_count()).sum();
    let total: u64 = conv.iter().map(|t| t.element_count()).sum();
    assert_eq!(rows[0]["layer"], "conv1");
    assert_eq!(rows[0]["nonzero_fraction"].as_f64().unwrap(), nz as f64 / total as f64);

    let q = tmp.path().join("q");
    assert_eq!(code(&amc(&["quantize", "--in", s(&eval), "--out", s(&q), "--q", "12"])), 0);
    let qm = Manifest::read(&q).unwrap();
    assert_eq!(qm.load(&qm.entries[0]).unwrap().quant().unwrap().bits.get(), 12);
    let o = amc(&["stats", "--in", s(&q)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("H="));

    let o = amc(&["search-k", "--in", s(&q), "--codec", "seg"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("conv1\tseg\tk="));

    // quantized input needs no calibration for fixed orders
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    assert_eq!(code(&amc(&["compress", "--in", s(&q), "--out", s(&r1), "--k", "3", "--variant", "baseline"])), 0);
    assert_eq!(code(&amc(&["compress", "--in", s(&q), "--out", s(&r2), "--k", "5", "--variant", "sparse"])), 0);
    let rep = tmp.path().join("cmp.json");
    let o = amc(&["report", "--baseline", s(&r1), "--sparse", s(&r2), "--out", s(&rep)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("all"));
    assert!(rep.is_file());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let eval = tmp.path().join("eval");
    write_dump(&eval, 6, 1);
    let out = tmp.path().join("out");
    // automatic k without a calibration manifest
    assert_eq!(code(&amc(&["compress", "--in", s(&eval), "--out", s(&out)])), 2);
    assert_eq!(code(&amc(&["compress", "--in", s(&eval), "--out", s(&out), "--k", "3", "--q", "10"])), 2);
    assert_eq!(code(&amc(&["frobnicate"])), 2);
    // missing or corrupt data
    assert_eq!(code(&amc(&["stats", "--in", s(&tmp.path().join("nope"))])), 3);
    let m = Manifest::read(&eval).unwrap();
    fs::write(m.resolve(&m.entries[0]), b"AMC1 garbage").unwrap();
    assert_eq!(code(&amc(&["stats", "--in", s(&eval)])), 3);
    let o = amc(&["compress", "--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("SEGB v1"));
}

#[test]
fn train_demo_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |out: &Path| {
        let o = Command::new(env!("CARGO_BIN_EXE_amc"))
            .args([
                "train-demo", "--synthetic", "400", "--epochs", "1", "--finetune-epochs", "1", "--calibration", "40",
                "--dump-batch", "40", "--out", s(out),
            ])
            .env("AMC_SEED", "5")
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        tree(out)
    };
    let a = run(&tmp.path().join("a"));
    let b = run(&tmp.path().join("b"));
    assert_eq!(a, b);
    let summary: serde_json::Value = serde_json::from_slice(&a[Path::new("summary.json")]).unwrap();
    assert_eq!(summary["config"]["seed"], 5);
    let curve = String::from_utf8(a[Path::new("curve.csv")].clone()).unwrap();
    assert!(curve.starts_with("epoch,top1,nonzero_fraction,objective\n"));
    assert_eq!(curve.lines().count(), 3);
    for part in ["baseline/cal", "baseline/eval", "sparse/cal", "sparse/eval"] {
        assert!(a.contains_key(&Path::new(part).join("manifest.jsonl")), "{part}");
    }
    // the dump feeds straight into compress
    let out = tmp.path().join("c");
    let d = tmp.path().join("a");
    let o = amc(&[
        "compress", "--train-manifest", s(&d.join("sparse/cal")), "--in", s(&d.join("sparse/eval")), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
