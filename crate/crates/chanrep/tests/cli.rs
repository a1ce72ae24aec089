use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
preset = "desk"
seed = 5
[scene]
n_locations = 6
n_times = 3
[encoder]
steps = 10
batch_size = 4
queue_capacity = 8
[decoder]
steps = 10
batch_size = 4
[generator]
steps = 10
batch_size = 4
n_steps = 20
[eval]
n_gen = 2
window = 3
"#;

fn chanrep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chanrep")).current_dir(dir).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) {
    std::fs::write(dir.join("c.toml"), body).unwrap();
}

fn run(dir: &Path, sub: &[&str]) -> Output {
    let mut args = sub.to_vec();
    args.extend(["--config", "c.toml", "--out", "out"]);
    chanrep(dir, &args)
}

/// Exit code plus the parsed single-line JSON error from stderr.
fn failure(out: &Output) -> (i32, serde_json::Value) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    (out.status.code().unwrap(), serde_json::from_str(lines[0]).expect("json error line"))
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = failure(&chanrep(dir.path(), &["gen", "--config", "absent.toml"]));
    assert_eq!((code, err["exit"].as_i64()), (2, Some(2)));
    assert_eq!(err["error"], "config");

    write_config(dir.path(), "preset = \"desk\"\n[encoder]\nwarp = 9\n");
    let (code, err) = failure(&run(dir.path(), &["gen"]));
    assert_eq!(code, 2);
    assert!(err["message"].as_str().unwrap().contains("warp"), "{err}");

    write_config(dir.path(), "preset = \"desk\"\n[encoder]\nn_heads = 5\n");
    assert_eq!(failure(&run(dir.path(), &["gen"])).0, 2);

    let (code, _) = failure(&chanrep(dir.path(), &["train", "--stage", "sideways", "--config", "c.toml"]));
    assert_eq!(code, 2);
}

#[test]
fn missing_artifacts_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), TINY);
    for sub in [&["train"][..], &["eval"], &["project2d"]] {
        let (code, err) = failure(&run(dir.path(), sub));
        assert_eq!(code, 3, "{sub:?}: {err}");
        assert_eq!(err["error"], "missing_artifact");
    }
    assert!(run(dir.path(), &["gen"]).status.success());
    for stage in ["decoder", "generator"] {
        let (code, err) = failure(&run(dir.path(), &["train", "--stage", stage]));
        assert_eq!(code, 3, "{err}");
        assert!(err["message"].as_str().unwrap().contains("encoder"));
    }
    std::fs::write(dir.path().join("out/dataset.crt1"), b"CRTENS01 but not really").unwrap();
    assert_eq!(failure(&run(dir.path(), &["train"])).0, 3);
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), TINY);
    for sub in [&["gen"][..], &["train"], &["eval"], &["project2d"]] {
        let out = run(dir.path(), sub);
        assert!(out.status.success(), "{sub:?}: {}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8(out.stdout).unwrap();
        serde_json::from_str::<serde_json::Value>(stdout.trim()).expect("json report");
    }
    let out = dir.path().join("out");
    for f in [
        "dataset.crt1",
        "dataset.json",
        "encoder.bin",
        "encoder.json",
        "encoder_log.jsonl",
        "decoder.bin",
        "decoder_log.jsonl",
        "generator.bin",
        "generator_log.jsonl",
        "nmse.csv",
        "eval.csv",
        "cdf.csv",
        "line.csv",
        "summary.json",
        "generated.lat1",
        "generated.json",
        "project2d.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let eval = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    // 6 UEs x 4 methods x (task1_1, task1_2, task2)
    assert_eq!(eval.lines().count(), 1 + 6 * 4 * 3);
    let lat = std::fs::read(out.join("generated.lat1")).unwrap();
    assert_eq!(&lat[..4], b"LAT1");
    // 12 links x 2 candidates of 32 values
    assert_eq!(u32::from_le_bytes(lat[4..8].try_into().unwrap()), 24);
    assert_eq!(lat.len(), 12 + 24 * 32 * 4);
    let log = std::fs::read_to_string(out.join("encoder_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["step", "loss", "lr", "queue_fill"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn seed_flag_changes_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), TINY);
    assert!(chanrep(dir.path(), &["gen", "--config", "c.toml", "--out", "a"]).status.success());
    assert!(chanrep(dir.path(), &["gen", "--config", "c.toml", "--out", "b"]).status.success());
    assert!(chanrep(dir.path(), &["gen", "--config", "c.toml", "--out", "c", "--seed", "6"]).status.success());
    let read = |d: &str| std::fs::read(dir.path().join(d).join("dataset.crt1")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn imports_ray_paths() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("bs_id,ue_id,t,loc_x,loc_y,loc_z,gain_lin,phase_rad,delay_s,aoa_deg,aod_az_deg,aod_el_deg\n");
    for ue in 0..2 {
        for t in 0..2 {
            csv.push_str(&format!("0,{ue},{t},{},5,1,0.8,0.3,1e-7,30,20,10\n", 10 + ue));
            csv.push_str(&format!("0,{ue},{t},{},5,1,0.2,1.1,3e-7,-40,60,-5\n", 10 + ue));
        }
    }
    std::fs::create_dir(dir.path().join("rays")).unwrap();
    std::fs::write(dir.path().join("rays/paths.csv"), csv).unwrap();
    write_config(dir.path(), &format!("{TINY}\n[scene]\nimport_csv = \"rays/paths.csv\"\n").replace("[scene]\nn_locations = 6\nn_times = 3\n", ""));
    let out = run(dir.path(), &["gen"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["entries"], 2);
    assert_eq!(report["shape"][0], 2);
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/dataset.json")).unwrap()).unwrap();
    assert!(side["source"].as_str().unwrap().ends_with("paths.csv"));

    std::fs::write(dir.path().join("rays/paths.csv"), "bs_id,ue_id\n0,zero\n").unwrap();
    assert_eq!(failure(&run(dir.path(), &["gen"])).0, 3);
}

#[test]
fn verify_passes_and_catches_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), TINY);
    let good = run(dir.path(), &["verify"]);
    assert!(good.status.success(), "{}", String::from_utf8_lossy(&good.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/verify.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);

    let (code, err) = failure(&run(dir.path(), &["verify", "--inject-fault", "waterfill"]));
    assert_eq!(code, 4);
    assert_eq!(err["error"], "verification");
    assert!(err["message"].as_str().unwrap().contains("waterfill"), "{err}");
}

#[test]
fn library_and_cli_agree() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), TINY);
    for sub in [&["gen"][..], &["train"], &["eval"]] {
        assert!(run(dir.path(), sub).status.success());
    }
    let mut cfg = chanrep::ExperimentConfig::load(&dir.path().join("c.toml")).unwrap();
    cfg.out_dir = dir.path().join("lib");
    let layout = chanrep::pipeline::Layout::new(&cfg.out_dir);
    chanrep::pipeline::run_gen(&cfg, &layout).unwrap();
    chanrep::pipeline::run_train(&cfg, &layout, chanrep::pipeline::Stage::All).unwrap();
    chanrep::eval::run_eval(&cfg, &layout).unwrap();
    for f in ["dataset.crt1", "encoder.bin", "decoder.bin", "generator.bin", "eval.csv"] {
        let a = std::fs::read(dir.path().join("out").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("lib").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}
