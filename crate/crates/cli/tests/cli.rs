mod common;

use std::path::Path;

use common::{bin, run, run_ok, snapshot, write_config, TINY};
use stairtoken_cli::commands::{load_config, token_line};
use stairtoken_cli::config::ExperimentConfig;
use stairtoken_cli::experiments::{self, sample_std};
use stairtoken_cli::output::{read_csv_rows, resolve_out_root, OutSource};
use stairtoken_core::bev::CH_DENSITY;
use stairtoken_core::world::StairSpec;
use stairtoken_core::{estimate_token, BevGrid, GaussianPolicy, ObsMode, PpoConfig, StairClass};

fn tiny(dir: &Path) -> std::path::PathBuf {
    write_config(dir, "tiny.toml", TINY)
}

#[test]
fn gen_writes_one_triple_per_seed() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        "c.toml",
        "seeds = [4]\n[gen]\ncount = 3\ncloud_format = \"xyz\"\n",
    );
    run_ok(&cfg, &t.path().join("o"), &["gen"]);
    let dir = t.path().join("o/gen");
    for i in 0..3 {
        for f in [
            format!("world_{i}.spec"),
            format!("cloud_{i}.xyz"),
            format!("grid_{i}.bev"),
        ] {
            assert!(dir.join(&f).is_file(), "{f}");
        }
    }
    assert!(!dir.join("world_3.spec").exists());
    let (_, rows) = read_csv_rows(&std::fs::read_to_string(dir.join("index.csv")).unwrap());
    assert_eq!(rows.len(), 3);
    let seeds: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(seeds, ["4", "5", "6"]);
}

#[test]
fn flat_noiseless_worlds_give_zero_height_channels() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        "flat.toml",
        "[world]\nclass_weights = [1.0, 0.0, 0.0]\n[sensor]\nnoise_sigma_z = 0.0\n[gen]\ncount = 3\n",
    );
    run_ok(&cfg, &t.path().join("o"), &["gen"]);
    for i in 0..3 {
        let bytes = std::fs::read(t.path().join(format!("o/gen/grid_{i}.bev"))).unwrap();
        let g = BevGrid::from_bytes(&bytes).unwrap();
        assert!(g.occupied_count() > 0);
        for ch in 0..CH_DENSITY {
            assert!(g.channel(ch).iter().all(|v| *v == 0.0), "grid {i} channel {ch}");
        }
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    for text in ["bogus = 1\n", "[sensor]\nnoise = 0.01\n", "[frobnicate]\n"] {
        let cfg = write_config(t.path(), "bad.toml", text);
        let o = run(&cfg, &t.path().join("o"), &["gen"]);
        assert!(!o.status.success(), "{text}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"), "{text}");
    }
}

#[test]
fn config_paths_resolve_against_config_dir() {
    let t = tempfile::tempdir().unwrap();
    std::fs::create_dir(t.path().join("sub")).unwrap();
    let cfg = write_config(
        &t.path().join("sub"),
        "c.toml",
        "out = \"results\"\n[track]\npolicy = \"p.gpl\"\n",
    );
    let c = ExperimentConfig::load(&cfg).unwrap();
    assert_eq!(c.out.unwrap(), t.path().join("sub/results"));
    assert_eq!(c.track.policy.unwrap(), t.path().join("sub/p.gpl"));
}

#[test]
fn out_root_precedence() {
    let mut cfg = ExperimentConfig::default();
    assert_eq!(resolve_out_root(None, None, &cfg), ("out".into(), OutSource::Default));
    cfg.out = Some("from_cfg".into());
    assert_eq!(resolve_out_root(None, None, &cfg).1, OutSource::Config);
    assert_eq!(
        resolve_out_root(None, Some("e".into()), &cfg),
        ("e".into(), OutSource::Env)
    );
    assert_eq!(resolve_out_root(None, Some(String::new()), &cfg).1, OutSource::Config);
    assert_eq!(
        resolve_out_root(Some(Path::new("f")), Some("e".into()), &cfg),
        ("f".into(), OutSource::Flag)
    );
}

#[test]
fn env_out_root_is_honored_and_echoed() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.toml", "[gen]\ncount = 1\n");
    let root = t.path().join("env_root");
    let o = bin()
        .env("STAIRTOKEN_OUT", &root)
        .arg("--config")
        .arg(&cfg)
        .arg("gen")
        .output()
        .unwrap();
    assert!(o.status.success());
    let manifest = std::fs::read_to_string(root.join("gen/manifest.txt")).unwrap();
    assert!(
        manifest.contains(&format!("STAIRTOKEN_OUT = {}", root.display())),
        "{manifest}"
    );
    assert!(manifest.contains("out_root_source = environment variable STAIRTOKEN_OUT"));
}

#[test]
fn seed_flag_shifts_seed_list() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.toml", "seeds = [0, 1, 2]\n");
    assert_eq!(load_config(Some(&cfg), Some(10)).unwrap().seeds, [10, 11, 12]);
    assert_eq!(load_config(Some(&cfg), None).unwrap().seeds, [0, 1, 2]);
}

#[test]
fn malformed_ply_exits_nonzero_with_message() {
    let t = tempfile::tempdir().unwrap();
    let cases = [
        "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n",
        "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n",
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n",
        "not a cloud\n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let p = t.path().join(format!("bad{i}.ply"));
        std::fs::write(&p, text).unwrap();
        let o = bin().arg("ingest").arg(&p).output().unwrap();
        assert!(!o.status.success(), "case {i}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"), "case {i}");
        assert!(o.stdout.is_empty());
    }
}

fn spec_file(dir: &Path, spec: &StairSpec) -> std::path::PathBuf {
    let p = dir.join("stair.spec");
    std::fs::write(&p, spec.to_kv_string()).unwrap();
    p
}

#[test]
fn exported_cloud_ingests_to_the_same_token() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.toml", "");
    for ext in ["ply", "xyz"] {
        for seed in ["0", "7"] {
            let cloud = t.path().join(format!("c{seed}.{ext}"));
            let shown = run_ok(
                &cfg,
                &t.path().join("o"),
                &["--seed", seed, "estimate", "--export-cloud", cloud.to_str().unwrap()],
            );
            let ingested = run_ok(&cfg, &t.path().join("o"), &["ingest", cloud.to_str().unwrap()]);
            assert_eq!(shown, ingested);
            assert_eq!(shown.lines().count(), 1);
        }
    }
}

#[test]
fn staircase_a_stand_in_is_recovered() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.toml", "");
    let spec = StairSpec {
        lead_flat: 0.8,
        ..StairSpec::stairs(StairClass::StairsUp, 0.17, 0.30, 6)
    };
    let sp = spec_file(t.path(), &spec);
    let cloud = t.path().join("a.ply");
    run_ok(
        &cfg,
        &t.path().join("o"),
        &[
            "estimate",
            "--spec",
            sp.to_str().unwrap(),
            "--export-cloud",
            cloud.to_str().unwrap(),
        ],
    );
    let line = run_ok(&cfg, &t.path().join("o"), &["ingest", cloud.to_str().unwrap()]);
    let f: Vec<&str> = line.trim().split(',').collect();
    assert_eq!(f[0], "stairs-up");
    let h: f64 = f[1].parse().unwrap();
    let d: f64 = f[2].parse().unwrap();
    assert!((h - 0.17).abs() <= 0.01, "h {h}");
    assert!((d - 0.30).abs() <= 0.015, "d {d}");
}

#[test]
fn estimate_line_matches_in_memory_pipeline() {
    let cfg = ExperimentConfig::default();
    let spec = StairSpec::stairs(StairClass::StairsDown, 0.15, 0.28, 5);
    let w = experiments::sense_world(&cfg, spec, 3).unwrap();
    let est = estimate_token(&w.grid, &cfg.estimator.config().unwrap());
    let t = tempfile::tempdir().unwrap();
    let c = write_config(t.path(), "c.toml", "seeds = [3]\n");
    let sp = spec_file(t.path(), &spec);
    let line = run_ok(&c, &t.path().join("o"), &["estimate", "--spec", sp.to_str().unwrap()]);
    assert_eq!(line.trim(), token_line(&est));
    assert_eq!(est.token.class, StairClass::StairsDown);
}

#[test]
fn zero_noise_benchmark_is_discretization_bounded() {
    let mut cfg = ExperimentConfig::default();
    cfg.sensor.noise_sigma_z = 0.0;
    cfg.benchmark.configs = 100;
    let (_, s) = experiments::benchmark_estimator(&cfg, 11).unwrap();
    assert!(s.mae_h <= 0.005, "{s:?}");
}

#[test]
fn dropout_degrades_accuracy_against_paired_run() {
    let mut cfg = ExperimentConfig::default();
    cfg.benchmark.configs = 150;
    let mut acc = Vec::new();
    let mut mae_h = Vec::new();
    for rate in [0.0, 0.9] {
        cfg.sensor.dropout_rate = rate;
        let (_, s) = experiments::benchmark_estimator(&cfg, 5).unwrap();
        acc.push(s.class_accuracy);
        mae_h.push(s.mae_h);
    }
    assert!(acc[1] <= acc[0], "{acc:?}");
    assert!(mae_h[1] >= mae_h[0], "{mae_h:?}");
}

#[test]
fn benchmark_cases_cover_requested_ranges() {
    let b = ExperimentConfig::default().benchmark;
    let mut classes = [0usize; 3];
    for seed in 0..300 {
        let c = experiments::bench_case(seed, &b).unwrap();
        classes[c.truth.class.index()] += 1;
        if c.truth.class != StairClass::Flat {
            assert!((0.10..=0.25).contains(&c.truth.h_step));
            assert!((0.25..=0.35).contains(&c.truth.d_step));
            assert!(c.truth.theta.abs() <= 20f64.to_radians() + 1e-9);
        }
    }
    assert!(classes.iter().all(|n| *n > 30), "{classes:?}");
}

#[test]
fn every_csv_ends_with_manifest_line() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny(t.path());
    let out = t.path().join("o");
    for cmd in ["gen", "benchmark-estimator", "train", "ablation"] {
        run_ok(&cfg, &out, &[cmd]);
    }
    let hash = ExperimentConfig::load(&cfg).unwrap().hash();
    let mut seen = 0;
    for (path, bytes) in snapshot(&out) {
        if path.extension().is_some_and(|e| e == "csv") {
            let text = String::from_utf8(bytes).unwrap();
            let last = text.lines().last().unwrap();
            assert_eq!(
                last,
                format!("# manifest config_sha256={hash} seeds=0;1"),
                "{}",
                path.display()
            );
            assert!(!text.lines().next().unwrap().starts_with('#'));
            seen += 1;
        }
    }
    assert!(seen >= 8, "{seen}");
}

#[test]
fn train_writes_curves_and_checkpoints_per_seed() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny(t.path());
    run_ok(&cfg, &t.path().join("o"), &["train"]);
    let dir = t.path().join("o/train");
    for seed in [0, 1] {
        let text = std::fs::read_to_string(dir.join(format!("curves_seed{seed}.csv"))).unwrap();
        let (header, rows) = read_csv_rows(&text);
        assert_eq!(
            header.join(","),
            "update,mean_reward,success_rate,E_vel,policy_loss,value_loss,terrain_loss,clip_frac,kl"
        );
        assert_eq!(rows.len(), 6);
        let policy = GaussianPolicy::from_bytes(&std::fs::read(dir.join(format!("policy_seed{seed}.gpl"))).unwrap());
        assert_eq!(policy.unwrap().mode, ObsMode::Token);
        assert!(dir.join(format!("estimator_seed{seed}.mlp")).is_file());
    }
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seeds = 0;1"));
    assert!(manifest.contains("[ppo]"));
}

#[test]
fn ablation_trains_three_modes_with_full_curves() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny(t.path());
    run_ok(&cfg, &t.path().join("o"), &["ablation"]);
    let dir = t.path().join("o/ablation");
    let (_, curves) = read_csv_rows(&std::fs::read_to_string(dir.join("curves.csv")).unwrap());
    for mode in ["blind", "heightscan", "token"] {
        assert_eq!(curves.iter().filter(|r| r[0] == mode).count(), 2 * 2, "{mode}");
    }
    assert_eq!(curves.len(), 12);
    let (header, summary) = read_csv_rows(&std::fs::read_to_string(dir.join("summary.csv")).unwrap());
    assert_eq!(
        header.join(","),
        "mode,E_vel_mean,E_vel_std,E_ang_mean,E_ang_std,M_terrain_mean,M_terrain_std,M_reward_mean,M_reward_std,success_mean,success_std"
    );
    let modes: Vec<&str> = summary.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(modes, ["blind", "heightscan", "token"]);
    for r in &summary {
        let s: f64 = r[9].parse().unwrap();
        assert!((0.0..=1.0).contains(&s));
        assert!(!r[10].is_empty());
    }
}

#[test]
fn single_seed_summary_omits_std() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny(t.path());
    run_ok(&cfg, &t.path().join("o"), &["--seed", "5", "generalize"]);
    let text = std::fs::read_to_string(t.path().join("o/generalize/generalize.csv")).unwrap();
    assert!(text.ends_with("seeds=5;6\n"));
    let one = write_config(t.path(), "one.toml", &TINY.replace("seeds = [0, 1]", "seeds = [9]"));
    run_ok(&one, &t.path().join("p"), &["generalize"]);
    let (header, rows) = read_csv_rows(&std::fs::read_to_string(t.path().join("p/generalize/generalize.csv")).unwrap());
    assert_eq!(header.join(","), "height,mode,success_mean,success_std");
    assert_eq!(rows.len(), 6 * 3);
    let heights: Vec<&str> = rows.iter().step_by(3).map(|r| r[0].as_str()).collect();
    assert_eq!(heights, ["0.12", "0.14", "0.16", "0.18", "0.2", "0.22"]);
    assert!(rows.iter().all(|r| r[3].is_empty()));
    assert_eq!(sample_std(&[1.0]), None);
    assert_eq!(sample_std(&[1.0, 3.0]), Some(2f64.sqrt()));
}

#[test]
fn track_rows_span_horizon_and_show_command_changes() {
    let cfg = ExperimentConfig::default();
    let policy = GaussianPolicy::new(ObsMode::Token, &PpoConfig::default(), 3).unwrap();
    let res = experiments::track(&cfg, &policy, 0).unwrap();
    let horizon = cfg.env.horizon as usize;
    assert_eq!(res.rows.len(), horizon);
    let dt = cfg.env.step_duration;
    let mut changes = Vec::new();
    for (k, w) in res.rows.windows(2).enumerate() {
        if w[1].v_cmd != w[0].v_cmd {
            changes.push((w[1].time, w[1].v_cmd));
        }
        assert_eq!(w[1].time, (k + 1) as f64 * dt);
    }
    let expect: Vec<(f64, f64)> = cfg.track.command[1..].iter().map(|c| (c[0] * dt, c[1])).collect();
    assert_eq!(changes, expect);
    assert_eq!(res.rows[0].v_cmd, cfg.track.command[0][1]);
}

#[test]
fn track_rejects_non_token_policy() {
    let cfg = ExperimentConfig::default();
    let policy = GaussianPolicy::new(ObsMode::Blind, &PpoConfig::default(), 3).unwrap();
    assert!(experiments::track(&cfg, &policy, 0).is_err());
}

#[test]
fn trained_policy_tracks_constant_command_on_stairs() {
    let mut cfg = ExperimentConfig::default();
    cfg.track.command = vec![[0.0, 0.6]];
    let policy = experiments::train_tracking_policy(&cfg, 0).unwrap();
    let res = experiments::track(&cfg, &policy, 0).unwrap();
    assert!(
        res.steady_state_error < cfg.track.steady_state_bound,
        "steady-state error {}",
        res.steady_state_error
    );
    assert!(res.rows.iter().all(|r| r.v_cmd == 0.6));
}

#[test]
fn track_cli_reuses_saved_policy() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny(t.path());
    run_ok(&cfg, &t.path().join("o"), &["track"]);
    let saved = t.path().join("o/track/policy.gpl");
    assert!(saved.is_file());
    let again = write_config(
        t.path(),
        "again.toml",
        &TINY.replace(
            "[track]\n",
            &format!("[track]\npolicy = {:?}\n", saved.to_str().unwrap()),
        ),
    );
    run_ok(&again, &t.path().join("p"), &["track"]);
    let a = std::fs::read_to_string(t.path().join("o/track/track.csv")).unwrap();
    let b = std::fs::read_to_string(t.path().join("p/track/track.csv")).unwrap();
    let body = |s: &str| s.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&a), body(&b));
    assert!(!t.path().join("p/track/policy.gpl").exists());
}

#[test]
fn reruns_are_bit_identical() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny(t.path());
    let out = t.path().join("o");
    let cmds: [&[&str]; 4] = [&["gen"], &["benchmark-estimator"], &["train"], &["estimate"]];
    for c in cmds {
        run_ok(&cfg, &out, c);
    }
    let first = snapshot(&out);
    for c in cmds {
        run_ok(&cfg, &out, c);
    }
    assert_eq!(first, snapshot(&out));
}

#[test]
fn bev_command_writes_grid() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny(t.path());
    let cloud = t.path().join("s.xyz");
    run_ok(
        &cfg,
        &t.path().join("o"),
        &["estimate", "--export-cloud", cloud.to_str().unwrap()],
    );
    let msg = run_ok(&cfg, &t.path().join("o"), &["bev", cloud.to_str().unwrap()]);
    assert!(msg.contains("occupied cells"));
    let g = BevGrid::from_bytes(&std::fs::read(t.path().join("o/bev/s.bev")).unwrap()).unwrap();
    assert!(g.occupied_count() > 0);
}
