use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fishcore::bitstream::pack_codes;
use fishcore::firefly::{f_down_reference, f_up_reference};
use fishcore::gfsq::{gfsq_decode, gfsq_encode};
use fishcore::{CodeGrid, FrameTensor, GfsqConfig};
use serde_json::Value;
use tempfile::TempDir;

fn fishcore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fishcore"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_out(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_raw(path: &Path, shape: [usize; 3], data: &[f32]) {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).unwrap();
    std::fs::write(format!("{}.json", path.display()), format!("{{\"shape\":{shape:?}}}")).unwrap();
}

fn read_raw(path: &Path) -> Vec<f32> {
    std::fs::read(path)
        .unwrap()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn quantizer(&self) -> PathBuf {
        let path = self.path("q.json");
        std::fs::write(&path, r#"{"groups":2,"levels":[3,5],"hop":4}"#).unwrap();
        path
    }

    fn model(&self, name: &str, eos_bias: &str) -> PathBuf {
        let path = self.path(name);
        json_out(&fishcore(&[
            "init-model",
            "--out",
            p(&path),
            "--seed",
            "3",
            "--eos-bias",
            eos_bias,
        ]));
        path
    }
}

#[test]
fn encode_decode_pipeline_matches_library() {
    let fx = Fixture::new();
    let q = fx.quantizer();
    let input = fx.path("x.f32");
    let shape = [2, 4, 37];
    let data: Vec<f32> = (0..2 * 4 * 37).map(|i| ((i as f32) * 0.37).sin() * 1.7).collect();
    write_raw(&input, shape, &data);
    let codes = fx.path("x.ffc");
    let report = json_out(&fishcore(&["encode", p(&input), p(&codes), "--config", p(&q)]));
    assert_eq!(report["frames"], 10);
    let bytes = std::fs::metadata(&codes).unwrap().len();
    assert_eq!(report["bytes"], bytes);
    // 2 items · (header 19 + ceil(2 groups · 10 frames · 4 bits / 8))
    assert_eq!(bytes, 2 * (19 + 10));
    let ratio = report["compression_ratio"].as_f64().unwrap();
    assert!((ratio - (32.0 * 2.0 * 4.0 * 37.0) / (2.0 * 2.0 * 10.0 * 4.0)).abs() < 1e-12);

    let out = fx.path("y.f32");
    let decoded = json_out(&fishcore(&["decode", p(&codes), p(&out)]));
    assert_eq!(decoded["shape"], serde_json::json!(shape));

    let config = GfsqConfig::new(2, vec![3, 5], 4).unwrap();
    let x = FrameTensor::new(shape, data.iter().map(|&v| v as f64).collect()).unwrap();
    let grid = gfsq_encode(&f_down_reference(&x, 4).unwrap(), &config).unwrap();
    let expected = f_up_reference(&gfsq_decode(&grid).unwrap(), 4, 37).unwrap();
    let got = read_raw(&out);
    let want: Vec<f32> = expected.data().iter().map(|&v| v as f32).collect();
    assert_eq!(got, want);
}

#[test]
fn encode_exit_codes() {
    let fx = Fixture::new();
    let q = fx.quantizer();
    let missing = fishcore(&[
        "encode",
        p(&fx.path("nope.f32")),
        p(&fx.path("o.ffc")),
        "--config",
        p(&q),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!missing.stderr.is_empty());

    let wrong_channels = fx.path("c.f32");
    write_raw(&wrong_channels, [1, 3, 8], &[0.0; 24]);
    let out = fishcore(&["encode", p(&wrong_channels), p(&fx.path("o.ffc")), "--config", p(&q)]);
    assert_eq!(out.status.code(), Some(3));

    let short = fx.path("s.f32");
    write_raw(&short, [1, 4, 8], &[0.0; 20]);
    let out = fishcore(&["encode", p(&short), p(&fx.path("o.ffc")), "--config", p(&q)]);
    assert_eq!(out.status.code(), Some(3));

    let out = fishcore(&["--json", "encode", p(&short), p(&fx.path("o.ffc")), "--config", p(&q)]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["exit_code"], 3);
}

#[test]
fn json_flag_gives_compact_output() {
    let fx = Fixture::new();
    let data = fx.path("d.f32");
    let out = fishcore(&[
        "--json",
        "synth-data",
        "--out",
        p(&data),
        "--signals",
        "2",
        "--length",
        "16",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["shape"], serde_json::json!([2, 1, 16]));
}

#[test]
fn train_then_codec_round_trip() {
    let fx = Fixture::new();
    let data = fx.path("d.f32");
    json_out(&fishcore(&[
        "synth-data",
        "--out",
        p(&data),
        "--signals",
        "4",
        "--length",
        "32",
        "--seed",
        "1",
    ]));
    let cfg = fx.path("train.json");
    std::fs::write(
        &cfg,
        r#"{"total_steps": 30, "warmup_steps": 3, "log_every": 10, "lr_max": 0.003}"#,
    )
    .unwrap();
    let q = fx.path("q.json");
    std::fs::write(&q, r#"{"groups":2,"levels":[3],"hop":2}"#).unwrap();
    let codec = fx.path("codec.ffm");
    let curve = fx.path("curve.csv");
    let report = json_out(&fishcore(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&codec),
        "--quantizer",
        p(&q),
        "--hidden",
        "4",
        "--curve",
        p(&curve),
        "--config",
        p(&cfg),
    ]));
    assert!(report["final_mse"].as_f64().unwrap().is_finite());
    let csv = std::fs::read_to_string(&curve).unwrap();
    assert!(csv.starts_with("step,lr,loss,utilization"));
    assert_eq!(csv.lines().count(), 1 + 4);

    let codes = fx.path("d.ffc");
    let enc = json_out(&fishcore(&["encode", p(&data), p(&codes), "--codec", p(&codec)]));
    assert_eq!(enc["frames"], 16);
    let out = fx.path("r.f32");
    let dec = json_out(&fishcore(&["decode", p(&codes), p(&out), "--codec", p(&codec)]));
    assert_eq!(dec["shape"], serde_json::json!([4, 1, 32]));

    std::fs::write(&codec, b"FFM1garbage").unwrap();
    assert_eq!(
        fishcore(&["encode", p(&data), p(&codes), "--codec", p(&codec)])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn generate_is_deterministic_and_traced() {
    let fx = Fixture::new();
    let model = fx.model("m.ffm", "-1000");
    let (a, b) = (fx.path("a.jsonl"), fx.path("b.jsonl"));
    for out in [&a, &b] {
        let r = json_out(&fishcore(&[
            "generate",
            "--model",
            p(&model),
            "--text",
            "1,2,3",
            "--out",
            p(out),
            "--max-frames",
            "7",
        ]));
        assert_eq!(r["frames"], 7);
        assert_eq!(r["truncated"], true);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let lines: Vec<Value> = std::fs::read_to_string(&a)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 7);
    assert!(lines.iter().all(|l| l["codes"].as_array().unwrap().len() == 2));

    let traced = fx.path("t.jsonl");
    let sampler = r#"{"mode":"top_k","k":3,"temperature":0.9}"#;
    let r = json_out(&fishcore(&[
        "generate",
        "--model",
        p(&model),
        "--text",
        "4",
        "--out",
        p(&traced),
        "--max-frames",
        "6",
        "--trace",
        "--sampler",
        sampler,
        "--seed",
        "5",
    ]));
    let stamps: Vec<f64> = r["timestamps_ms"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(stamps.len(), 6);
    assert!(stamps.windows(2).all(|w| w[0] < w[1]), "{stamps:?}");
}

#[test]
fn forced_eos_and_bad_models() {
    let fx = Fixture::new();
    let model = fx.model("eos.ffm", "1000");
    let out = fx.path("o.jsonl");
    let r = json_out(&fishcore(&[
        "generate",
        "--model",
        p(&model),
        "--text",
        "1",
        "--out",
        p(&out),
    ]));
    assert_eq!(r["frames"], 0);
    assert_eq!(r["truncated"], false);
    assert!(std::fs::read(&out).unwrap().is_empty());

    let bad = fx.path("bad.ffm");
    std::fs::write(&bad, b"not a model").unwrap();
    std::fs::copy(format!("{}.json", model.display()), format!("{}.json", bad.display())).unwrap();
    let run = fishcore(&["generate", "--model", p(&bad), "--text", "1", "--out", p(&out)]);
    assert_eq!(run.status.code(), Some(4));
    let run = fishcore(&["bench", "--model", p(&bad), "--text", "1"]);
    assert_eq!(run.status.code(), Some(4));
    let run = fishcore(&[
        "generate",
        "--model",
        p(&fx.path("absent.ffm")),
        "--text",
        "1",
        "--out",
        p(&out),
    ]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn bench_report_schema() {
    let fx = Fixture::new();
    let model = fx.model("m.ffm", "-1000");
    let r = json_out(&fishcore(&[
        "bench",
        "--model",
        p(&model),
        "--text",
        "1,2",
        "--repeats",
        "3",
        "--max-frames",
        "8",
    ]));
    for key in ["rtf", "first_packet_ms", "frames", "total_ms", "fingerprint"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["frames"], 8);
    assert!(r["first_packet_ms"].as_f64().unwrap() <= r["total_ms"].as_f64().unwrap());
    let again = json_out(&fishcore(&[
        "bench",
        "--model",
        p(&model),
        "--text",
        "1,2",
        "--repeats",
        "5",
        "--max-frames",
        "8",
    ]));
    assert_eq!(again["fingerprint"], r["fingerprint"]);
    assert_eq!(again["frames"], 8);
    assert_eq!(
        fishcore(&["bench", "--model", p(&model), "--text", "1", "--repeats", "2"])
            .status
            .code(),
        Some(1)
    );

    let eos = fx.model("eos.ffm", "1000");
    assert_eq!(
        fishcore(&["bench", "--model", p(&eos), "--text", "1"]).status.code(),
        Some(4)
    );
}

fn write_stream(path: &Path, groups: usize, levels: Vec<u32>, frames: usize, index: impl Fn(usize) -> u32) {
    let config = GfsqConfig::new(groups, levels, 1).unwrap();
    let indices = (0..groups * frames).map(index).collect();
    let grid = CodeGrid::new([1, groups, frames], indices, config).unwrap();
    std::fs::write(path, pack_codes(&grid, frames).unwrap()).unwrap();
}

#[test]
fn stats_reports() {
    let fx = Fixture::new();
    let all = fx.path("all.ffc");
    write_stream(&all, 2, vec![3, 3], 9, |i| (i % 9) as u32);
    let r = json_out(&fishcore(&["stats", p(&all)]));
    assert_eq!(r["utilization"], serde_json::json!([1.0, 1.0]));
    assert!((r["per_group"][0]["entropy_bits"].as_f64().unwrap() - 9f64.log2()).abs() < 1e-12);

    let single = fx.path("one.ffc");
    write_stream(&single, 3, vec![3, 3], 1, |i| i as u32);
    let r = json_out(&fishcore(&["stats", p(&single)]));
    for g in 0..3 {
        assert!((r["utilization"][g].as_f64().unwrap() - 1.0 / 9.0).abs() < 1e-12);
        assert_eq!(r["per_group"][g]["entropy_bits"], 0.0);
    }

    // uniform random stream, 20k frames, K = 9
    let uniform = fx.path("u.ffc");
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let draws: Vec<u32> = (0..2 * 20_000)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 9) as u32
        })
        .collect();
    write_stream(&uniform, 2, vec![3, 3], 20_000, |i| draws[i]);
    let r = json_out(&fishcore(&["stats", p(&uniform)]));
    assert!(r["utilization"]
        .as_array()
        .unwrap()
        .iter()
        .all(|u| u.as_f64().unwrap() >= 0.99));

    let corrupt = fx.path("bad.ffc");
    std::fs::write(&corrupt, b"XXXX").unwrap();
    assert_eq!(fishcore(&["stats", p(&corrupt)]).status.code(), Some(1));
}
