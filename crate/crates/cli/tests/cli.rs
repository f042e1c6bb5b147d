use std::path::Path;
use std::process::{Command, Output};

use hqmq::codec::TensorShape;
use hqmq::kvpack::{RawDtype, RawTensorFile};
use hqmq::rng::SeededRng;

fn hqmq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hqmq")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Seeded N(0, 1) tensor stored as f32.
fn write_gaussian(path: &Path, shape: TensorShape, seed: u64) -> Vec<f64> {
    let mut rng = SeededRng::new(seed);
    let data: Vec<f64> = (0..shape.num_elements()).map(|_| rng.normal() as f32 as f64).collect();
    let raw = RawTensorFile::new(RawDtype::F32, shape, data.clone()).unwrap();
    raw.write(std::fs::File::create(path).unwrap()).unwrap();
    data
}

fn rel_frob(a: &[f64], b: &[f64]) -> f64 {
    let err: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let norm: f64 = a.iter().map(|x| x * x).sum();
    (err / norm).sqrt()
}

#[test]
fn bits_prints_table_row() {
    let o = hqmq(&["bits", "--config", "s96_r4", "--dh", "128"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("3.79 / 3.92"), "{}", stdout(&o));
}

#[test]
fn verify_group_reports_closure() {
    let o = hqmq(&["verify-group"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("closure: ok, min angle: 60 deg"));
}

#[test]
fn exit_codes() {
    assert_eq!(hqmq(&[]).status.code(), Some(2));
    assert_eq!(hqmq(&["bits", "--config", "s96"]).status.code(), Some(2));
    assert_eq!(hqmq(&["bench", "--shape", "1,2"]).status.code(), Some(2));
    assert_eq!(hqmq(&["bogus"]).status.code(), Some(2));
    assert_eq!(hqmq(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.kvpack");
    let out = dir.path().join("out.raw");
    let o = hqmq(&["dequantize", missing.to_str().unwrap(), out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let garbage = dir.path().join("garbage.kvpack");
    std::fs::write(&garbage, b"HQMQ\x01\x00not really").unwrap();
    let o = hqmq(&["dequantize", garbage.to_str().unwrap(), out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn quantize_dequantize_regression() {
    let fixture = include_str!("fixtures/regression.txt");
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("in.raw");
    let shape = TensorShape::new(1, 4, 64, 128).unwrap();
    let data = write_gaussian(&raw, shape, 7);
    for line in fixture.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (name, bound): (&str, f64) = (fields[0], fields[fields.len() - 1].parse().unwrap());
        let flags = &fields[1..fields.len() - 1];
        let packed = dir.path().join(format!("{name}.kvpack"));
        let back = dir.path().join(format!("{name}.raw"));
        let mut args = vec!["quantize", raw.to_str().unwrap(), packed.to_str().unwrap(), "--seed", "7"];
        args.extend_from_slice(flags);
        let o = hqmq(&args);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let o = hqmq(&["dequantize", packed.to_str().unwrap(), back.to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let decoded = RawTensorFile::read(std::fs::File::open(&back).unwrap()).unwrap();
        assert_eq!(decoded.shape, shape);
        let err = rel_frob(&data, &decoded.data);
        println!("{name} rel_frob {err:.6} bound {bound}");
        assert!(err <= bound, "{name}: relative Frobenius error {err} exceeds the frozen bound {bound}");
    }
}

#[test]
fn csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = hqmq(&["bench", "--shape", "1,2,32,16", "--configs", "s24_r3,int4+med3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "config,bits_per_element,mean_angle_rad,p95_angle_rad,rel_frob,outlier_p");
    assert!(lines[1].starts_with("s24_r3,") && lines[2].starts_with("int4+med3,"));

    let o = hqmq(&["sweep", "--shape", "1,2,64,32", "--c", "2,3,100"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 4);

    let o = hqmq(&["covering", "--sizes", "1,2,4", "--probes", "1000"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("S,seed,n_probes,rho_hat_rad,mean_rad\n1,0,1000,"));
}

#[test]
fn empty_tensor_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("empty.raw");
    let packed = dir.path().join("empty.kvpack");
    let back = dir.path().join("back.raw");
    write_gaussian(&raw, TensorShape::new(1, 2, 0, 64).unwrap(), 1);
    assert!(hqmq(&["quantize", raw.to_str().unwrap(), packed.to_str().unwrap()]).status.success());
    assert!(hqmq(&["dequantize", packed.to_str().unwrap(), back.to_str().unwrap(), "--dtype", "f16"]).status.success());
    let decoded = RawTensorFile::read(std::fs::File::open(&back).unwrap()).unwrap();
    assert_eq!(decoded.shape.tokens, 0);
    assert_eq!(decoded.dtype, RawDtype::F16);
}
