use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qmarl_cli::{
    exit_code, export_plot_data, load_config, moving_average, read_metrics, render_config, stamp,
    write_atomic,
};
use qmarl_core::channel::MCS_TABLE_CSV;
use qmarl_core::config::ExperimentConfig;
use qmarl_core::Error;

fn qmarl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmarl"))
        .args(args)
        .env_remove("QMARL_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = qmarl(&["print-config"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let path = dir.path().join("c.toml");
    fs::write(&path, &text).unwrap();
    let cfg = load_config(Some(&path), &[]).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.train.gamma, 0.98);
    assert_eq!(cfg.train.lr_critic, 0.00025);
    let again = qmarl(&["--config", path.to_str().unwrap(), "print-config"]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn overrides_apply_and_coerce() {
    let cfg = load_config(
        None,
        &[
            "train.epochs=7".into(),
            "model.beta_a=2".into(),
            "scenario.slant_range=true".into(),
            "output.dir=elsewhere".into(),
        ],
    )
    .unwrap();
    assert_eq!(cfg.train.epochs, 7);
    assert_eq!(cfg.model.beta_a, 2.0);
    assert!(cfg.scenario.slant_range);
    assert_eq!(cfg.output.dir, "elsewhere");
}

#[test]
fn bad_configs_exit_with_code_two() {
    for args in [
        vec!["--set", "train.nope=1", "print-config"],
        vec!["--set", "train.gamma=1.0", "print-config"],
        vec!["--set", "missing-equals", "print-config"],
        vec!["--config", "/definitely/not/here.toml", "print-config"],
    ] {
        let out = qmarl(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[train]\nunknown_field = 3\n").unwrap();
    assert!(matches!(
        load_config(Some(&path), &[]),
        Err(Error::Config { .. })
    ));
    assert_eq!(exit_code(&Error::Numeric("x".into())), 1);
}

#[test]
fn mcs_table_dump_is_bit_exact() {
    let out = qmarl(&["dump-mcs-table"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), MCS_TABLE_CSV);
}

#[test]
fn moving_average_oracles() {
    let xs: Vec<f64> = (0..10).map(|i| (i * i) as f64 * 0.37).collect();
    assert_eq!(moving_average(&xs, 1), xs);
    assert_eq!(moving_average(&[0.1; 80], 50), vec![0.1; 80]);
    let ramp: Vec<f64> = (0..200).map(|i| i as f64).collect();
    let ma = moving_average(&ramp, 50);
    for (i, v) in ma.iter().enumerate() {
        let n = (i + 1).min(50) as f64;
        // mean of the n integers ending at i
        let oracle = i as f64 - (n - 1.0) / 2.0;
        assert!((v - oracle).abs() < 1e-9, "{i}: {v} vs {oracle}");
    }
}

fn write_metrics(path: &Path, rewards: &[f64]) {
    let mut text = String::from("# config_sha256=abc seed=1\nepoch,reward,support_rate,qos_total,energy_remaining_mean,epsilon,wall_ms\n");
    for (i, r) in rewards.iter().enumerate() {
        text.push_str(&format!("{i},{r},0.5,1.0,100.0,0.1,3\n"));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn export_plot_data_smooths_each_file() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    write_metrics(&a, &[1.0, 2.0, 3.0, 4.0]);
    let text = export_plot_data(&[a.clone()], 2).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# window=2");
    assert_eq!(lines[1], "source,epoch,reward,support_rate,qos_total");
    assert_eq!(lines.len(), 6);
    assert!(lines[5].ends_with(",3,3.5,0.5,1"));
    assert_eq!(read_metrics(&a).unwrap().reward, vec![1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn empty_export_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "epoch,reward,support_rate,qos_total\n").unwrap();
    let out = qmarl(&["export-plot-data", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(matches!(
        export_plot_data(&[], 5),
        Err(Error::Config { .. })
    ));
}

#[test]
fn atomic_write_replaces_whole_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/out.txt");
    write_atomic(&path, b"first version, longer").unwrap();
    write_atomic(&path, b"second").unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "second");
    let leftovers: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

#[test]
fn train_writes_stamped_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let sets = [
        "scenario.map_size_m=2000",
        "scenario.num_uavs=2",
        "scenario.num_users=6",
        "scenario.episode_steps=4",
        "train.epochs=3",
        "train.min_fill=8",
        "train.batch_size=4",
        "output.traces=true",
    ];
    let mut args = vec!["--out", out_dir.to_str().unwrap()];
    for s in &sets {
        args.extend(["--set", s]);
    }
    args.push("train");
    let out = qmarl(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "metrics.csv",
        "summary.json",
        "checkpoint.json",
        "config.toml",
        "trace.csv",
    ] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let cfg = load_config(Some(&out_dir.join("config.toml")), &[]).unwrap();
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        format!("# {}", stamp(&cfg).unwrap())
    );
    assert_eq!(
        read_metrics(&out_dir.join("metrics.csv")).unwrap().epoch,
        vec![0, 1, 2]
    );
    assert_eq!(
        fs::read_to_string(out_dir.join("config.toml")).unwrap(),
        render_config(&cfg).unwrap()
    );

    let ck = out_dir.join("checkpoint.json");
    let infer_dir = dir.path().join("infer");
    let mut args = vec!["--out", infer_dir.to_str().unwrap()];
    for s in &sets {
        args.extend(["--set", s]);
    }
    args.extend([
        "infer",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--episodes",
        "2",
    ]);
    let out = qmarl(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        read_metrics(&infer_dir.join("metrics.csv")).unwrap().epoch,
        vec![0, 1]
    );
}

#[test]
fn infer_rejects_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck.json");
    fs::write(&ck, "{\"version\": 99}").unwrap();
    let out = qmarl(&[
        "--out",
        dir.path().to_str().unwrap(),
        "infer",
        "--checkpoint",
        ck.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
