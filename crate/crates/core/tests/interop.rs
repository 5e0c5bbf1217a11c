//! Files produced by an external writer (such as an activation exporter)
//! must load exactly. The records here are assembled byte by byte from the
//! documented layout rather than with the library's own writer.

use std::fs;

use amc::pipeline::load_manifest;
use amc::tensorio::{load_tensor_file, save_tensor, Manifest, TensorData};

fn amc1_f32(name: &str, dims: [u32; 4], values: &[f32]) -> Vec<u8> {
    let mut b = b"AMC1".to_vec();
    b.push(1);
    b.extend_from_slice(&(name.len() as u16).to_le_bytes());
    b.extend_from_slice(name.as_bytes());
    b.push(0); // f32
    b.push(0); // q
    b.extend_from_slice(&0f32.to_le_bytes());
    for d in dims {
        b.extend_from_slice(&d.to_le_bytes());
    }
    b.extend_from_slice(&(values.len() as u64 * 4).to_le_bytes());
    for v in values {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

#[test]
fn prime_dimensions_keep_nhwc_order() {
    let dims = [2u32, 3, 5, 7];
    // value encodes its own coordinates so any axis mix-up is visible
    let mut values = Vec::new();
    for n in 0..2 {
        for h in 0..3 {
            for w in 0..5 {
                for c in 0..7 {
                    values.push((n * 1000 + h * 100 + w * 10 + c) as f32 + 0.25);
                }
            }
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.amc");
    let bytes = amc1_f32("block1.relu", dims, &values);
    fs::write(&path, &bytes).unwrap();
    let t = load_tensor_file(&path).unwrap();
    assert_eq!(t.dims, dims);
    assert_eq!(t.layer, "block1.relu");
    let TensorData::F32(v) = &t.data else { panic!("expected f32") };
    let at = |n: usize, h: usize, w: usize, c: usize| v[((n * 3 + h) * 5 + w) * 7 + c];
    assert_eq!(at(1, 2, 4, 6), 1246.25);
    assert_eq!(at(0, 1, 3, 2), 132.25);
    for (a, b) in v.iter().zip(&values) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    // and the library writes the identical bytes back
    let mut again = Vec::new();
    save_tensor(&t, &mut again).unwrap();
    assert_eq!(again, bytes);
}

#[test]
fn external_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("conv1")).unwrap();
    fs::create_dir_all(dir.path().join("fc")).unwrap();
    fs::write(dir.path().join("conv1/0.amc"), amc1_f32("conv1", [1, 2, 2, 1], &[0.0, 1.5, 0.0, 2.0])).unwrap();
    fs::write(dir.path().join("conv1/1.amc"), amc1_f32("conv1", [1, 2, 2, 1], &[0.0, 0.0, 0.0, 4.0])).unwrap();
    fs::write(dir.path().join("fc/0.amc"), amc1_f32("fc", [1, 1, 1, 3], &[3.0, 0.0, 0.5])).unwrap();
    let lines = [
        r#"{"path":"conv1/0.amc","layer":"conv1","batch":0,"role":"evaluation"}"#,
        r#"{"path":"fc/0.amc","layer":"fc","batch":0,"role":"evaluation"}"#,
        r#"{"path":"conv1/1.amc","layer":"conv1","batch":1,"role":"evaluation"}"#,
    ];
    fs::write(dir.path().join("manifest.jsonl"), lines.join("\n") + "\n").unwrap();
    let m = Manifest::read(dir.path()).unwrap();
    assert_eq!(m.layers(), vec!["conv1", "fc"]);
    let (set, batches) = load_manifest(&m).unwrap();
    assert_eq!(batches, vec![vec![0, 1], vec![0]]);
    assert_eq!(set[0].1[1].nonzero_count(), 1);
    assert_eq!(set[1].1[0].nonzero_fraction(), 2.0 / 3.0);
}

#[test]
fn wrong_layer_in_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.amc"), amc1_f32("other", [1, 1, 1, 1], &[1.0])).unwrap();
    fs::write(
        dir.path().join("manifest.jsonl"),
        r#"{"path":"a.amc","layer":"conv1","batch":0,"role":"evaluation"}"#,
    )
    .unwrap();
    assert!(load_manifest(&Manifest::read(dir.path()).unwrap()).is_err());
}
