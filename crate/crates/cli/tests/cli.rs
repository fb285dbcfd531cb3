use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use kinsynth::image_io::load_image;

fn kinsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinsynth"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run kinsynth")
}

fn ok(args: &[&str]) -> String {
    let out = kinsynth(args);
    assert!(
        out.status.success(),
        "kinsynth {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A toy dataset and a briefly trained checkpoint shared by every test.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    runs: PathBuf,
    ckpt: PathBuf,
    male: PathBuf,
    female: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("toy");
        let stdout = ok(&["dataset", "gen-toy", "--subjects", "24", "--size", "64", "--seed", "5", "--out", s(&data)]);
        assert!(stdout.contains("24 faces"), "{stdout}");

        let manifest: Value = serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
        let pick = |g: &str| {
            let e = manifest["entries"]
                .as_array()
                .unwrap()
                .iter()
                .find(|e| e["gender"] == g)
                .unwrap();
            data.join(e["image_path"].as_str().unwrap())
        };
        let (male, female) = (pick("M"), pick("F"));

        let runs = dir.path().join("runs");
        let config = dir.path().join("train.toml");
        fs::write(
            &config,
            format!(
                r#"
run_id = "cli"
runs_dir = "{}"
batch_size = 2
iterations = 2
attribute_period = 1
critic_steps = 1
checkpoint_interval = 0

[dataset]
kind = "manifest"
path = "{}"

[classifier]
iterations = 2
batch_size = 4

[attribute_pretrain]
iterations = 1
"#,
                s(&runs),
                s(&data.join("manifest.json"))
            ),
        )
        .unwrap();
        let stdout = ok(&["train", "--config", s(&config)]);
        let ckpt = runs.join("cli").join("ckpt-2");
        assert!(stdout.contains(s(&ckpt)), "{stdout}");
        Fixture {
            _dir: dir,
            data,
            runs,
            ckpt,
            male,
            female,
        }
    })
}

#[test]
fn gen_toy_writes_images_landmarks_and_manifest() {
    let f = fixture();
    let manifest: Value = serde_json::from_str(&fs::read_to_string(f.data.join("manifest.json")).unwrap()).unwrap();
    let entries = manifest["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 24);
    for e in entries {
        let img = load_image(&f.data.join(e["image_path"].as_str().unwrap())).unwrap();
        assert_eq!(img.shape(), &[64, 64, 3]);
        assert!(f.data.join(e["landmarks_path"].as_str().unwrap()).is_file());
        assert!(["A", "B", "C", "D"].contains(&e["age_stage"].as_str().unwrap()));
    }
}

#[test]
fn composite_extremes_reproduce_the_parents() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let male = load_image(&f.male).unwrap();
    let female = load_image(&f.female).unwrap();
    for (v, want_m, want_f) in [("00000", &male, &female), ("11111", &female, &male)] {
        let out = dir.path().join(format!("{v}.png"));
        let out_f = dir.path().join(format!("{v}-f.png"));
        ok(&[
            "composite", "--male", s(&f.male), "--female", s(&f.female), "--vector", v, "--size", "64",
            "--no-color-correct", "--out", s(&out), "--out-female", s(&out_f),
        ]);
        assert_eq!(&load_image(&out).unwrap(), want_m, "{v}");
        assert_eq!(&load_image(&out_f).unwrap(), want_f, "{v}");
    }
}

#[test]
fn composite_with_landmarks_and_default_female_output() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hat.png");
    let lm = |p: &Path| p.with_file_name(p.file_name().unwrap().to_str().unwrap().replace(".png", ".landmarks.json"));
    ok(&[
        "composite", "--male", s(&f.male), "--female", s(&f.female),
        "--landmarks-male", s(&lm(&f.male)), "--landmarks-female", s(&lm(&f.female)),
        "--vector", "00110", "--size", "64", "--out", s(&out),
    ]);
    assert_eq!(load_image(&out).unwrap().shape(), &[64, 64, 3]);
    assert!(dir.path().join("hat.female.png").is_file());
}

#[test]
fn composite_rejects_a_malformed_vector() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = kinsynth(&[
        "composite", "--male", s(&f.male), "--female", s(&f.female), "--vector", "2x001", "--size", "64",
        "--out", s(&dir.path().join("x.png")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("vector"));
}

#[test]
fn train_writes_metrics_and_checkpoints() {
    let f = fixture();
    let metrics = fs::read_to_string(f.runs.join("cli").join("metrics.jsonl")).unwrap();
    let phases: Vec<String> = metrics
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["phase"].as_str().unwrap().to_string())
        .collect();
    for p in ["classifiers", "attribute", "joint"] {
        assert!(phases.iter().any(|x| x == p), "no {p} lines");
    }
    assert!(f.runs.join("cli").join("ckpt-0").is_file());
    assert!(f.ckpt.is_file());
}

#[test]
fn train_rejects_unknown_ablation_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("train.json");
    fs::write(&config, json!({ "runs_dir": s(dir.path()) }).to_string()).unwrap();
    let out = kinsynth(&["train", "--config", s(&config), "--ablation", "AD,XX"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("XX"));
}

fn synth_args<'a>(f: &'a Fixture, out: &'a Path, seed: &'a str) -> Vec<&'a str> {
    vec![
        "synthesize", "--ckpt", s(&f.ckpt), "--male", s(&f.male), "--female", s(&f.female), "--vector", "00110",
        "--age", "C", "--gender", "M", "--seed", seed, "--noise-scale", "0.5", "--noise-components", "1,2",
        "--out", s(out),
    ]
}

#[test]
fn synthesize_is_byte_deterministic() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.png"), dir.path().join("b.png"), dir.path().join("c.png"));
    ok(&synth_args(f, &a, "7"));
    ok(&synth_args(f, &b, "7"));
    ok(&synth_args(f, &c, "8"));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    assert_eq!(load_image(&a).unwrap().shape(), &[64, 64, 3]);
}

#[test]
fn tree_writes_one_image_per_child() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    fs::copy(&f.male, dir.path().join("gm.png")).unwrap();
    fs::copy(&f.female, dir.path().join("gf.png")).unwrap();
    let spec = dir.path().join("tree.json");
    fs::write(
        &spec,
        json!({
            "faces": [
                {"id": "gm", "gender": "M", "image": "gm.png"},
                {"id": "gf", "gender": "F", "image": "gf.png"}
            ],
            "children": [
                {"id": "son", "male": "gm", "female": "gf", "vector": "10101", "age_stage": "C", "gender": "M"},
                {"id": "daughter", "male": "gm", "female": "gf", "vector": "01010", "age_stage": "C", "gender": "F"},
                {"id": "grandchild", "male": "son", "female": "daughter", "vector": "00000", "age_stage": "A", "gender": "F"}
            ]
        })
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&["tree", "--ckpt", s(&f.ckpt), "--spec", s(&spec), "--out", s(&out)]);
    for id in ["son", "daughter", "grandchild"] {
        assert_eq!(load_image(&out.join(format!("{id}.png"))).unwrap().shape(), &[64, 64, 3]);
    }
}

struct Served(Child);

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn served_images_match_cli_bytes() {
    let f = fixture();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let _server = Served(
        Command::new(env!("CARGO_BIN_EXE_kinsynth"))
            .args(["serve", "--ckpt", s(&f.ckpt), "--addr", &addr])
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let rt = tokio::runtime::Runtime::new().unwrap();
    let body = json!({
        "parent_male": B64.encode(fs::read(&f.male).unwrap()),
        "parent_female": B64.encode(fs::read(&f.female).unwrap()),
        "vector": "00110",
        "age_stage": "C",
        "gender": "M",
        "seed": 7,
        "noise_scale": 0.5,
        "noise_components": [1, 2]
    });
    let served: Value = rt.block_on(async {
        let client = reqwest::Client::new();
        let deadline = Instant::now() + Duration::from_secs(120);
        loop {
            let r = client.get(format!("http://{addr}/v1/health")).send().await;
            if matches!(&r, Ok(r) if r.status().is_success()) {
                break;
            }
            assert!(Instant::now() < deadline, "service never became healthy");
            tokio::time::sleep(Duration::from_millis(200)).await;
        }
        let r = client.post(format!("http://{addr}/v1/synthesize")).json(&body).send().await.unwrap();
        assert!(r.status().is_success());
        r.json().await.unwrap()
    });
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cli.png");
    ok(&synth_args(f, &out, "7"));
    assert_eq!(B64.decode(served["image"].as_str().unwrap()).unwrap(), fs::read(&out).unwrap());
}
