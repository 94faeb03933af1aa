//! End-to-end runs of the `dmden` binary: every subcommand produces its
//! output file, re-runs are byte-identical, and failures map to the
//! documented exit codes.

use std::path::Path;
use std::process::Command;

fn dmden() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmden"))
}

const SMALL_CFG: &str = "\
prior.N = 4
prior.K = 2
prior.seed = 3
schedule.T = 20
schedule.betaT = 0.4
experiment.snr_grid_db = 0 10
experiment.test_size = 64
experiment.t_list = 5 10
experiment.generate_count = 8
experiment.bench_batch = 32
";

fn write_cfg(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, format!("{SMALL_CFG}{extra}")).unwrap();
    path
}

#[test]
fn sweep_like_subcommands_write_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "");
    for sub in [
        "snr-sweep",
        "mismatch",
        "resample-compare",
        "lipschitz",
        "bounds",
    ] {
        let out = dir.path().join(format!("{sub}.csv"));
        let run = || {
            let status = dmden()
                .args([sub, "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(&out)
                .status()
                .unwrap();
            assert!(status.success(), "{sub} failed");
            std::fs::read_to_string(&out).unwrap()
        };
        let first = run();
        let second = run();
        assert_eq!(first, second, "{sub} output must be byte-identical");
        assert!(first.starts_with("# dmden v"), "{sub}: missing metadata");
        assert!(
            first.contains("# prior.N = 4"),
            "{sub}: config echo missing"
        );
        let mut lines = first.lines();
        // Header row follows the metadata block.
        let header = lines.find(|l| !l.starts_with('#')).unwrap();
        assert!(header.starts_with("x,") || header.starts_with("t,") || header.starts_with("T,"));
    }
}

#[test]
fn per_snr_experiments_write_one_file_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "");
    for sub in ["t-sweep", "trajectory"] {
        let out = dir.path().join(format!("{sub}.csv"));
        let status = dmden()
            .args([sub, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        // Two grid SNRs: suffixed files instead of the bare name.
        assert!(dir.path().join(format!("{sub}.snr0dB.csv")).exists());
        assert!(dir.path().join(format!("{sub}.snr10dB.csv")).exists());
    }
}

#[test]
fn train_then_denoise_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "model.hidden = 16 16\nmodel.embed = 8\ntrain.epochs = 1\ntrain.dataset = 512\ntrain.batch = 64\n",
    );
    let ckpt = dir.path().join("net.ckpt");
    let status = dmden()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&ckpt)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&ckpt).unwrap();
    assert!(text.starts_with("DMDEN-MLP v1\n"));

    // Drive a sweep with the trained checkpoint.
    let cfg2 = dir.path().join("ckpt.cfg");
    std::fs::write(
        &cfg2,
        format!(
            "{SMALL_CFG}model.hidden = 16 16\nmodel.embed = 8\nexperiment.checkpoint = {}\n",
            ckpt.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("sweep.csv");
    let status = dmden()
        .args(["snr-sweep", "--config"])
        .arg(&cfg2)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn bench_and_generate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "");
    let bench_out = dir.path().join("bench.csv");
    let status = dmden()
        .args(["bench", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&bench_out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&bench_out).unwrap();
    assert!(text.contains("time_ms_dm_det"));
    assert!(text.contains("# parameter_count"));

    let gen_out = dir.path().join("samples.txt");
    let status = dmden()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&gen_out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&gen_out).unwrap();
    assert!(text.starts_with("DMDEN-SAMPLES v1\n8 4\n"));
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "");
    let run_with_seed = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let status = dmden()
            .args(["snr-sweep", "--config"])
            .arg(&cfg)
            .args(["--seed", seed])
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read_to_string(&out).unwrap()
    };
    let a = run_with_seed("1", "a.csv");
    let b = run_with_seed("2", "b.csv");
    assert_ne!(a, b);
    assert!(b.contains("# seed = 2"));
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // Missing config file: i/o failure.
    let status = dmden()
        .args(["snr-sweep", "--config", "/definitely/not/here.cfg"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));

    // Bad key: configuration error.
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "nonsense.key = 1\n").unwrap();
    let status = dmden()
        .args(["snr-sweep", "--config"])
        .arg(&bad)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Invalid schedule values: configuration error.
    let bad2 = dir.path().join("bad2.cfg");
    std::fs::write(&bad2, "schedule.beta1 = 0.9\nschedule.betaT = 0.1\n").unwrap();
    let status = dmden()
        .args(["lipschitz", "--config"])
        .arg(&bad2)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
