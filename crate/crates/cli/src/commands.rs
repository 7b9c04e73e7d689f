//! Subcommand handlers: run an experiment, write its files under
//! `<out>/<command>/`, print a short report.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use stairtoken_core::cloud_io::{read_cloud, write_cloud, write_ply, write_xyz};
use stairtoken_core::ppo::{train_three_stage, WorldSource, CURVE_HEADER};
use stairtoken_core::world::StairSpec;
use stairtoken_core::{estimate_token, generate_stairs, project, GaussianPolicy, TokenEstimate, TokenSource};

use crate::config::ExperimentConfig;
use crate::experiments::{self, sense_world};
use crate::output::Run;

pub const TOKEN_HEADER: &str = "class,h_step,d_step,theta,confidence,risers_found";

/// The single-line token record. `{}` prints the shortest representation
/// that parses back to the same `f64`.
pub fn token_line(e: &TokenEstimate) -> String {
    format!(
        "{},{},{},{},{},{}",
        e.token.class, e.token.h_step, e.token.d_step, e.token.theta, e.confidence, e.risers_found
    )
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn gen(run: &Run) -> Result<()> {
    let dir = run.dir()?;
    let base = run.cfg.seeds[0];
    let worlds = experiments::gen_worlds(&run.cfg, base)?;
    let ext = run.cfg.gen.cloud_format.as_str();
    let mut index = Vec::new();
    for (i, w) in worlds.iter().enumerate() {
        let spec_path = dir.join(format!("world_{i}.spec"));
        let cloud_path = dir.join(format!("cloud_{i}.{ext}"));
        let grid_path = dir.join(format!("grid_{i}.bev"));
        crate::output::write_file(&spec_path, w.spec.to_kv_string().as_bytes())?;
        let cloud_text = if ext == "ply" {
            write_ply(&w.cloud)
        } else {
            write_xyz(&w.cloud)
        };
        crate::output::write_file(&cloud_path, cloud_text.as_bytes())?;
        crate::output::write_file(&grid_path, &w.grid.to_bytes())?;
        index.push(format!(
            "{i},{},{},{},{},{},{},{},{}",
            w.seed,
            w.spec.class,
            w.spec.h_step,
            w.spec.d_step,
            w.spec.n_steps,
            w.spec.stair_yaw,
            w.cloud.len(),
            w.grid.occupied_count()
        ));
    }
    run.write_csv(
        &dir.join("index.csv"),
        "index,seed,class,h_step,d_step,n_steps,stair_yaw,points,occupied_cells",
        index,
    )?;
    run.write_manifest(&dir)?;
    println!("wrote {} worlds to {}", worlds.len(), dir.display());
    Ok(())
}

pub fn bev(run: &Run, cloud: &Path) -> Result<()> {
    let points = read_cloud(cloud)?;
    let grid = project(&points)?;
    let dir = run.dir()?;
    let stem = cloud.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
    let path = dir.join(format!("{stem}.bev"));
    crate::output::write_file(&path, &grid.to_bytes())?;
    run.write_manifest(&dir)?;
    println!(
        "{} points, {} occupied cells -> {}",
        points.len(),
        grid.occupied_count(),
        path.display()
    );
    Ok(())
}

pub fn estimate(run: &Run, spec: Option<&Path>, export: Option<&Path>) -> Result<()> {
    let seed = run.cfg.seeds[0];
    let spec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            StairSpec::from_kv_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => generate_stairs(seed, &run.cfg.world.ranges()?)?,
    };
    let w = sense_world(&run.cfg, spec, seed)?;
    let est = estimate_token(&w.grid, &run.cfg.estimator.config()?);
    if let Some(p) = export {
        write_cloud(p, &w.cloud)?;
    }
    let dir = run.dir()?;
    let truth = format!(
        "{},{},{},{}",
        w.truth.class, w.truth.h_step, w.truth.d_step, w.truth.theta
    );
    run.write_csv(
        &dir.join("estimate.csv"),
        &format!("{TOKEN_HEADER},true_class,true_h_step,true_d_step,true_theta"),
        [format!("{},{truth}", token_line(&est))],
    )?;
    run.write_manifest(&dir)?;
    println!("{}", token_line(&est));
    Ok(())
}

pub fn ingest(path: &Path, run: &Run) -> Result<()> {
    let cloud = read_cloud(path).with_context(|| format!("ingesting {}", path.display()))?;
    let grid = project(&cloud)?;
    let est = estimate_token(&grid, &run.cfg.estimator.config()?);
    println!("{}", token_line(&est));
    Ok(())
}

pub fn benchmark_estimator(run: &Run) -> Result<()> {
    let dir = run.dir()?;
    let seed = run.cfg.seeds[0];
    let (rows, s) = experiments::benchmark_estimator(&run.cfg, seed)?;
    let cases = rows.iter().enumerate().map(|(i, r)| {
        format!(
            "{i},{},{},{},{},{},{},{},{},{},{}",
            r.case.truth.class,
            r.case.truth.h_step,
            r.case.truth.d_step,
            r.case.truth.theta,
            r.estimate.token.class,
            r.estimate.token.h_step,
            r.estimate.token.d_step,
            r.estimate.token.theta,
            r.estimate.confidence,
            r.estimate.risers_found
        )
    });
    run.write_csv(
        &dir.join("cases.csv"),
        "case,true_class,true_h_step,true_d_step,true_theta,class,h_step,d_step,theta,confidence,risers_found",
        cases,
    )?;
    let setting = format!("sim sigma_z={}", run.cfg.sensor.noise_sigma_z);
    run.write_csv(
        &dir.join("summary.csv"),
        "setting,mae_h_cm,mae_d_cm,mae_theta_deg,state_acc_pct",
        [format!(
            "{setting},{},{},{},{}",
            s.mae_h * 100.0,
            s.mae_d * 100.0,
            s.mae_theta_deg,
            s.class_accuracy * 100.0
        )],
    )?;
    run.write_manifest(&dir)?;
    println!(
        "{} configs ({} stairs): MAE h {:.2} cm, d {:.2} cm, theta {:.2} deg, class accuracy {:.1}%",
        s.configs,
        s.stair_configs,
        s.mae_h * 100.0,
        s.mae_d * 100.0,
        s.mae_theta_deg,
        s.class_accuracy * 100.0
    );
    Ok(())
}

pub fn train(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let dir = run.dir()?;
    let env_cfg = stairtoken_core::EnvConfig {
        obs_mode: stairtoken_core::ObsMode::Token,
        token_source: TokenSource::GroundTruth,
        ..cfg.env_config()?
    };
    let worlds = WorldSource::new(cfg.world.ranges()?);
    for &seed in &cfg.seeds {
        let out = train_three_stage(
            &env_cfg,
            &worlds,
            &cfg.ppo.config()?,
            cfg.train.budgets()?,
            cfg.train.weights()?,
            seed,
        )?;
        run.write_csv(
            &dir.join(format!("curves_seed{seed}.csv")),
            CURVE_HEADER,
            out.curves.iter().map(|r| r.csv()),
        )?;
        crate::output::write_file(&dir.join(format!("policy_seed{seed}.gpl")), &out.policy.to_bytes())?;
        if let Some(net) = &out.estimator {
            crate::output::write_file(&dir.join(format!("estimator_seed{seed}.mlp")), &net.to_bytes())?;
        }
        let last = out.curves.last().map(|r| r.success_rate).unwrap_or(0.0);
        println!(
            "seed {seed}: {} updates, final training success {last:.2}",
            out.curves.len()
        );
    }
    run.write_manifest(&dir)?;
    Ok(())
}

pub fn ablation(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let dir = run.dir()?;
    let runs = experiments::ablation(cfg, &cfg.seeds, |r| {
        println!(
            "{} seed {}: success {:.2}, updates to threshold {}",
            r.mode,
            r.seed,
            r.metrics.success_rate,
            r.updates_to_threshold
                .map(|u| u.to_string())
                .unwrap_or_else(|| "never".into())
        )
    })?;
    let curves = runs.iter().flat_map(|r| {
        r.curves
            .iter()
            .map(move |c| format!("{},{},{}", r.mode, r.seed, c.csv()))
    });
    run.write_csv(&dir.join("curves.csv"), &format!("mode,seed,{CURVE_HEADER}"), curves)?;
    let per_seed = runs.iter().map(|r| {
        let m = &r.metrics;
        format!(
            "{},{},{},{},{},{},{},{}",
            r.mode,
            r.seed,
            m.e_vel,
            m.e_ang,
            m.m_terrain,
            m.m_reward,
            m.success_rate,
            r.updates_to_threshold.map(|u| u.to_string()).unwrap_or_default()
        )
    });
    run.write_csv(
        &dir.join("per_seed.csv"),
        "mode,seed,E_vel,E_ang,M_terrain,M_reward,success_rate,updates_to_threshold",
        per_seed,
    )?;
    let summary = experiments::summarize_modes(&runs).into_iter().map(|s| {
        let sd = |f: fn(&stairtoken_core::EvalMetrics) -> f64| opt(s.std.as_ref().map(f));
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.mode,
            s.mean.e_vel,
            sd(|m| m.e_vel),
            s.mean.e_ang,
            sd(|m| m.e_ang),
            s.mean.m_terrain,
            sd(|m| m.m_terrain),
            s.mean.m_reward,
            sd(|m| m.m_reward),
            s.mean.success_rate,
            sd(|m| m.success_rate)
        )
    });
    run.write_csv(
        &dir.join("summary.csv"),
        "mode,E_vel_mean,E_vel_std,E_ang_mean,E_ang_std,M_terrain_mean,M_terrain_std,M_reward_mean,M_reward_std,success_mean,success_std",
        summary,
    )?;
    run.write_manifest(&dir)?;
    Ok(())
}

/// Rows where a training height does worse than an unseen one.
pub fn generalize_report(cfg: &ExperimentConfig, rows: &[experiments::GeneralizeRow]) -> String {
    let mut report = String::new();
    let g = &cfg.generalize;
    let is_train = |h: f64| g.train_heights.iter().any(|t| (t - h).abs() < 1e-9);
    for mode in crate::config::parse_modes(&g.modes).unwrap_or_default() {
        let of = |train: bool| {
            rows.iter()
                .filter(|r| r.mode == mode && is_train(r.height) == train)
                .map(|r| (r.height, r.mean()))
                .collect::<Vec<_>>()
        };
        let (seen, unseen) = (of(true), of(false));
        let worst_seen = seen.iter().cloned().fold(None, |a: Option<(f64, f64)>, x| match a {
            Some(a) if a.1 <= x.1 => Some(a),
            _ => Some(x),
        });
        match worst_seen {
            Some((hs, ss)) => {
                let violations: Vec<String> = unseen
                    .iter()
                    .filter(|(_, s)| *s > ss)
                    .map(|(h, s)| format!("{h} m ({s:.3})"))
                    .collect();
                if violations.is_empty() {
                    let _ = writeln!(report, "{mode}: training heights >= unseen heights (ok)");
                } else {
                    let _ = writeln!(
                        report,
                        "{mode}: unseen {} above training {hs} m ({ss:.3})",
                        violations.join(", ")
                    );
                }
            }
            None => {
                let _ = writeln!(report, "{mode}: no training heights evaluated");
            }
        }
    }
    report
}

pub fn generalize(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let dir = run.dir()?;
    let rows = experiments::generalize(cfg, &cfg.seeds, |mode, seed, rates| {
        let r: Vec<String> = rates.iter().map(|x| format!("{x:.2}")).collect();
        println!("{mode} seed {seed}: {}", r.join(" "));
    })?;
    run.write_csv(
        &dir.join("generalize.csv"),
        "height,mode,success_mean,success_std",
        rows.iter()
            .map(|r| format!("{},{},{},{}", r.height, r.mode, r.mean(), opt(r.std()))),
    )?;
    run.write_manifest(&dir)?;
    print!("{}", generalize_report(cfg, &rows));
    Ok(())
}

pub fn track(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let dir = run.dir()?;
    let seed = cfg.seeds[0];
    let policy = match &cfg.track.policy {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading policy {}", p.display()))?;
            GaussianPolicy::from_bytes(&bytes)?
        }
        None => {
            let policy = experiments::train_tracking_policy(cfg, seed)?;
            crate::output::write_file(&dir.join("policy.gpl"), &policy.to_bytes())?;
            policy
        }
    };
    let res = experiments::track(cfg, &policy, seed)?;
    run.write_csv(
        &dir.join("track.csv"),
        "time,v_cmd,v_measured,event",
        res.rows
            .iter()
            .map(|r| format!("{},{},{},{}", r.time, r.v_cmd, r.v_measured, r.event.name())),
    )?;
    run.write_manifest(&dir)?;
    println!(
        "{} footsteps, {} restarts, steady-state |v - v_cmd| = {:.3} m/s (bound {})",
        res.rows.len(),
        res.resets,
        res.steady_state_error,
        cfg.track.steady_state_bound
    );
    Ok(())
}

/// Loads the config (or the defaults) and applies `--seed`.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        let n = cfg.seeds.len().max(1) as u64;
        cfg.seeds = (s..s + n).collect();
    }
    cfg.validate()?;
    Ok(cfg)
}
