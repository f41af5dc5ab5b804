use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const MLP: &str = r#"
[experiment]
name = "cli"
epochs = 2
checkpoint_epochs = [1]

[experiment.model.arch]
kind = "mlp"
layers = [6, 16, 3]

[experiment.optimizer]
eta = 0.05
batch_size = 25

[experiment.data.train]
kind = "synth_gaussian"
classes = 3
n = 150
dim = 6
separation = 2.0
seed = 1

[experiment.spectrum]
cadence = "per_iteration"
first_steps = 8
stride = 2
k_track = 5

[experiment.probe]
start_step = 2
end_step = 6

[experiment.probe.settings]
n_batches = 3
"#;

const QUADRATIC: &str = r#"
[experiment]
name = "quad"
epochs = 1

[experiment.model.arch]
kind = "quadratic"
start = [1.0, -2.0]

[experiment.model.arch.matrix]
diag = [4.0, 1.0]

[experiment.optimizer]
eta = 0.1
batch_size = 4

[experiment.data.train]
kind = "quadratic_targets"
n = 8
dim = 2
noise = 0.0
seed = 0

[experiment.spectrum]
k_track = 2
alignment_m = 1
"#;

fn sharppath(args: &[&str], data: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sharppath"));
    cmd.args(args).env_remove("SHARPPATH_DATA");
    if let Some(d) = data {
        cmd.env("SHARPPATH_DATA", d);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sweep_writes_one_log_per_point_and_seed_plus_index() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.toml", &format!("{MLP}\n[sweep]\neta = [0.01, 0.1]\n"));
    let out = dir.path().join("runs");
    let res = sharppath(&["train", "--config", s(&cfg), "--out", s(&out), "--seeds", "3,4", "--jobs", "2"], None);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let logs: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.file_name().into_string().unwrap()))
        .filter(|n| n.ends_with(".ndjson"))
        .collect();
    assert_eq!(logs.len(), 4);
    let index: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("index.json")).unwrap()).unwrap();
    let runs = index["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 4);
    for r in runs {
        assert!(out.join(r["log"].as_str().unwrap()).is_file());
        assert!(r["axes"]["eta"].is_number());
    }

    // Same manifest again: byte-identical logs.
    let again = dir.path().join("again");
    let res = sharppath(&["train", "--config", s(&cfg), "--out", s(&again), "--seeds", "3,4", "--jobs", "1"], None);
    assert_eq!(res.status.code(), Some(0));
    for name in &logs {
        assert_eq!(std::fs::read(out.join(name)).unwrap(), std::fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn missing_dataset_file_exits_with_config_code_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = MLP.replace(
        "kind = \"synth_gaussian\"\nclasses = 3\nn = 150\ndim = 6\nseparation = 2.0\nseed = 1",
        "kind = \"cifar10\"\nfiles = [\"cifar/data_batch_1.bin\"]",
    );
    let cfg = write(dir.path(), "cifar.toml", &text);
    let res = sharppath(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))], Some(dir.path()));
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("cifar/data_batch_1.bin"), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "typo.toml", &MLP.replace("batch_size = 25", "batch_size = 25\nbatch_sise = 25"));
    let res = sharppath(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))], None);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("batch_sise"));
}

#[test]
fn unreadable_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = sharppath(&["train", "--config", s(&dir.path().join("absent.toml")), "--out", s(dir.path())], None);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn plot_kinds_render_from_a_training_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "mlp.toml", MLP);
    let out = dir.path().join("runs");
    assert_eq!(sharppath(&["train", "--config", s(&cfg), "--out", s(&out), "--seeds", "0,1,2"], None).status.code(), Some(0));
    let logs: Vec<String> = (0..3).map(|i| s(&out.join(format!("cli-p00-s{i}.ndjson"))).to_string()).collect();
    for kind in ["eigenvalue-trace", "accuracy", "alignment-vs-accuracy", "alpha-delta", "surface-scan"] {
        let svg = dir.path().join(format!("{kind}.svg"));
        let mut args = vec!["plot", "--kind", kind, "--out", s(&svg)];
        args.extend(logs.iter().map(String::as_str));
        let res = sharppath(&args, None);
        assert_eq!(res.status.code(), Some(0), "{kind}: {}", String::from_utf8_lossy(&res.stderr));
        let text = std::fs::read_to_string(&svg).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
        if kind == "eigenvalue-trace" {
            assert_eq!(text.matches("<polyline").count(), 3);
        }
    }
    let res = sharppath(&["plot", "--kind", "heatmap", "--out", s(&dir.path().join("x.svg")), &logs[0]], None);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn plotting_an_empty_log_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.ndjson", "");
    let res = sharppath(&["plot", "--kind", "accuracy", "--out", s(&dir.path().join("a.svg")), s(&empty)], None);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn probe_and_spectrum_on_a_quadratic_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "quad.toml", QUADRATIC);
    let out = dir.path().join("runs");
    assert_eq!(sharppath(&["train", "--config", s(&cfg), "--out", s(&out)], None).status.code(), Some(0));
    let ckpt = out.join("quad-p00-s0.final.ckpt");

    let spec_out = dir.path().join("spectrum.json");
    let res = sharppath(&["spectrum", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&spec_out), "--save-vectors"], None);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let est: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&spec_out).unwrap()).unwrap();
    let lambdas: Vec<f64> = est["lambdas"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((lambdas[0] - 4.0).abs() < 1e-10 && (lambdas[1] - 1.0).abs() < 1e-10, "{lambdas:?}");
    assert!(dir.path().join("spectrum.v1.ckpt").is_file());

    // Along e₁ the loss is the parabola ½·4·(x₀ + kΔ)²; its second difference is constant.
    let probe_out = dir.path().join("probe.json");
    let res = sharppath(&["probe", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&probe_out)], None);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let probe: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&probe_out).unwrap()).unwrap();
    let scan: Vec<f64> = probe["scan"].as_array().unwrap().iter().map(|p| p[1].as_f64().unwrap()).collect();
    let second: Vec<f64> = scan.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect();
    assert!(second.iter().all(|d| (d - second[0]).abs() < 1e-9 * second[0].abs().max(1e-12)), "{second:?}");
}

#[test]
fn probe_index_beyond_converged_pairs_names_the_limit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "quad.toml", &format!("{QUADRATIC}\n[experiment.probe.settings]\neig_index = 3\n"));
    let out = dir.path().join("runs");
    // Training validates eig_index against k_track.
    let res = sharppath(&["train", "--config", s(&cfg), "--out", s(&out)], None);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("eig_index"));
}

#[test]
fn shipped_configs_expand_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let manifest = sharppath::cli::RunManifest::new(&path, Path::new("unused"), None)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(!manifest.grid.is_empty() && !manifest.seeds.is_empty(), "{}", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
