use super::*;
use proptest::prelude::*;

fn cfg(mode: ObsMode) -> EnvConfig {
    EnvConfig {
        obs_mode: mode,
        init_heading_err: 0.0,
        ..EnvConfig::default()
    }
}

fn up(h: f64, d: f64, n: u32) -> StairSpec {
    StairSpec::stairs(StairClass::StairsUp, h, d, n)
}

/// Lead flat short enough that the stepper starts half a tread before the
/// first riser.
fn near(mut spec: StairSpec) -> StairSpec {
    spec.lead_flat = 0.3;
    spec
}

#[test]
fn flat_blind_reset_is_zero_but_command() {
    let mut env = StepperEnv::new(cfg(ObsMode::Blind)).unwrap();
    let obs = env.reset(StairSpec::flat(), 3).unwrap();
    assert_eq!(obs, vec![0.0, 0.0, 0.6, 0.0, 0.0, 0.0]);
}

#[test]
fn observation_lengths() {
    for mode in ObsMode::ALL {
        let mut env = StepperEnv::new(cfg(mode)).unwrap();
        let obs = env.reset(up(0.12, 0.3, 4), 0).unwrap();
        assert_eq!(obs.len(), mode.obs_len());
        assert_eq!(mode.obs_scale().len(), mode.obs_len());
        let r = env.step(Action::new(0.3, 0.2, 0.0)).unwrap();
        assert_eq!(r.obs.len(), mode.obs_len());
    }
}

#[test]
fn token_tail_is_ground_truth() {
    let mut c = cfg(ObsMode::Token);
    c.init_heading_err = 0.2;
    let mut env = StepperEnv::new(c).unwrap();
    let mut spec = up(0.15, 0.28, 5);
    spec.stair_yaw = 0.4;
    let obs = env.reset(spec, 9).unwrap();
    let pose = env.pose();
    let gt = crate::world::ground_truth_token(&spec, pose.heading, [pose.x, pose.y]);
    assert_eq!(&obs[6..], &gt.features());
    assert!((gt.theta - env.state().heading_err).abs() < 1e-12);
}

#[test]
fn reset_is_deterministic_per_seed() {
    let mut c = cfg(ObsMode::Token);
    c.init_heading_err = 0.2;
    let mut a = StepperEnv::new(c.clone()).unwrap();
    let mut b = StepperEnv::new(c).unwrap();
    let spec = up(0.14, 0.3, 4);
    assert_eq!(a.reset(spec, 5).unwrap(), b.reset(spec, 5).unwrap());
    assert_ne!(a.reset(spec, 5).unwrap(), b.reset(spec, 6).unwrap());
}

#[test]
fn short_lead_flat_rejected() {
    let mut env = StepperEnv::new(cfg(ObsMode::Blind)).unwrap();
    let mut spec = up(0.12, 0.3, 3);
    spec.lead_flat = 0.2;
    assert!(matches!(env.reset(spec, 0), Err(Error::Config(_))));
}

#[test]
fn step_after_done_is_usage_error() {
    let mut env = StepperEnv::new(cfg(ObsMode::Blind)).unwrap();
    env.reset(near(up(0.12, 0.3, 3)), 0).unwrap();
    let r = env.step(Action::new(0.3, 0.0, 0.0)).unwrap();
    assert!(r.done);
    assert!(matches!(env.step(Action::new(0.3, 0.0, 0.0)), Err(Error::Usage(_))));
}

#[test]
fn flat_walk_never_scuffs() {
    let mut env = StepperEnv::new(cfg(ObsMode::Blind)).unwrap();
    env.reset(StairSpec::flat(), 0).unwrap();
    let mut events = Vec::new();
    loop {
        let r = env.step(Action::new(0.3, 0.05, 0.0)).unwrap();
        events.push(r.event);
        if r.done {
            break;
        }
    }
    assert_eq!(*events.last().unwrap(), Event::Success);
    assert!(events.iter().all(|e| *e != Event::Scuff && *e != Event::Edge));
    // from -lead_flat to past tail_flat with 0.3 m strides
    assert_eq!(events.len(), (2.0f64 / 0.3).floor() as usize + 1);
}

#[test]
fn zero_clearance_scuffs_on_first_riser() {
    // start mid-tread at -d/2; with c = 0 the arc is h (2 tau - tau^2), which
    // is 0.75 h < h just past the riser at tau = 0.5
    let (h, d) = (0.12, 0.30);
    let arc = SwingArc::new(0.0, h, 0.0);
    assert!((arc.height(0.5) - 0.75 * h).abs() < 1e-15);
    let mut env = StepperEnv::new(cfg(ObsMode::Blind)).unwrap();
    env.reset(near(up(h, d, 4)), 0).unwrap();
    assert!((env.state().s + d / 2.0).abs() < 1e-12);
    let r = env.step(Action::new(d, 0.0, 0.0)).unwrap();
    assert_eq!(r.event, Event::Scuff);
    assert!(r.done);
}

#[test]
fn stride_matched_to_depth_climbs_mid_tread() {
    let (h, d) = (0.14, 0.28);
    let mut env = StepperEnv::new(cfg(ObsMode::Token)).unwrap();
    let spec = up(h, d, 6);
    env.reset(spec, 1).unwrap();
    let mut k = 0;
    loop {
        let r = env.step(Action::new(d, h + 0.05, 0.0)).unwrap();
        k += 1;
        // landing phase stays at the middle of a tread
        let phase = (env.state().s / d).rem_euclid(1.0);
        assert!((phase - 0.5).abs() < 1e-9, "step {k}: phase {phase}");
        if r.done {
            assert_eq!(r.event, Event::Success);
            break;
        }
        assert_eq!(r.event, Event::None);
    }
    assert!((env.state().support_height - 6.0 * h).abs() < 1e-9);
}

#[test]
fn stairs_down_need_little_clearance() {
    let (h, d) = (0.14, 0.3);
    let mut env = StepperEnv::new(cfg(ObsMode::Blind)).unwrap();
    env.reset(near(StairSpec::stairs(StairClass::StairsDown, h, d, 4)), 0)
        .unwrap();
    assert_eq!(env.step(Action::new(d, 0.0, 0.0)).unwrap().event, Event::Scuff);
    env.reset(near(StairSpec::stairs(StairClass::StairsDown, h, d, 4)), 0)
        .unwrap();
    let r = env.step(Action::new(d, 0.03, 0.0)).unwrap();
    assert_eq!(r.event, Event::None);
    assert!((env.state().support_height + h).abs() < 1e-12);
}

#[test]
fn landing_near_riser_is_edge_failure() {
    let d = 0.3;
    let mut env = StepperEnv::new(cfg(ObsMode::Blind)).unwrap();
    env.reset(near(up(0.12, d, 4)), 0).unwrap();
    // from -0.15 to +0.01: 1 cm past the first riser
    let r = env.step(Action::new(0.16, 0.3, 0.0)).unwrap();
    assert_eq!(r.event, Event::Edge);
}

#[test]
fn timeout_at_horizon() {
    let mut c = cfg(ObsMode::Blind);
    c.horizon = 3;
    let mut env = StepperEnv::new(c).unwrap();
    env.reset(StairSpec::flat(), 0).unwrap();
    let events: Vec<Event> = (0..3)
        .map(|_| env.step(Action::new(0.1, 0.05, 0.0)).unwrap().event)
        .collect();
    assert_eq!(events, vec![Event::None, Event::None, Event::Timeout]);
}

#[test]
fn reward_terms() {
    let mut env = StepperEnv::new(cfg(ObsMode::Blind)).unwrap();
    env.reset(StairSpec::flat(), 0).unwrap();
    let r = env.step(Action::new(0.3, 0.1, 0.0)).unwrap();
    // v_avg = 0.5 * 0.6 = 0.3 against v_cmd 0.6
    let expect = (-(0.3f64 / 0.3).powi(2)).exp() + 2.0 * 0.3 - 0.5 * 0.1;
    assert!((r.reward - expect).abs() < 1e-12, "{}", r.reward);
    assert_eq!(env.state().v_avg, 0.3);
}

#[test]
fn heading_correction_and_wrap() {
    let mut c = cfg(ObsMode::Blind);
    c.init_heading_err = 0.05;
    let mut env = StepperEnv::new(c).unwrap();
    env.reset(StairSpec::flat(), 4).unwrap();
    let before = env.state().heading_err;
    env.step(Action::new(0.2, 0.05, 0.03)).unwrap();
    assert!((env.state().heading_err - (before - 0.03)).abs() < 1e-15);
    // out-of-range corrections are clamped to 5 degrees
    let before = env.state().heading_err;
    env.step(Action::new(0.2, 0.05, 1.0)).unwrap();
    assert!((env.state().heading_err - (before - 5f64.to_radians())).abs() < 1e-15);
}

#[test]
fn analytic_token_source_tracks_ground_truth() {
    let mut c = cfg(ObsMode::Token);
    c.token_source = TokenSource::Analytic;
    c.init_heading_err = 0.15;
    let mut env = StepperEnv::new(c).unwrap();
    let mut spec = up(0.14, 0.3, 6);
    spec.stair_yaw = -0.3;
    env.reset(spec, 2).unwrap();
    let t = env.token();
    let gt = env.ground_truth_token();
    assert_eq!(t.class, gt.class);
    assert!((t.h_step - gt.h_step).abs() < 0.01);
    assert!((t.d_step - gt.d_step).abs() < 0.015);
    assert!((t.theta - gt.theta).abs() < 2f64.to_radians());
}

#[test]
fn learned_source_requires_network() {
    let mut c = cfg(ObsMode::Token);
    c.token_source = TokenSource::Learned;
    let mut env = StepperEnv::new(c).unwrap();
    assert!(env.reset(up(0.12, 0.3, 3), 0).is_err());
    let net = Arc::new(crate::nn::estimator_net(8, 0).unwrap());
    env.set_learned_estimator(Some(net));
    let obs = env.reset(up(0.12, 0.3, 3), 0).unwrap();
    assert!(obs.iter().all(|v| v.is_finite()));
}

#[test]
fn token_noise_flips_and_perturbs() {
    let mut c = cfg(ObsMode::Token);
    c.token_noise = TokenNoise {
        sigma_h: 0.0,
        sigma_d: 0.0,
        flip_prob: 1.0,
    };
    let mut env = StepperEnv::new(c.clone()).unwrap();
    for seed in 0..20 {
        env.reset(up(0.12, 0.3, 4), seed).unwrap();
        assert_ne!(env.token().class, StairClass::StairsUp);
    }
    c.token_noise = TokenNoise {
        sigma_h: 0.02,
        sigma_d: 0.0,
        flip_prob: 0.0,
    };
    let mut env = StepperEnv::new(c).unwrap();
    let hs: Vec<f64> = (0..20)
        .map(|seed| {
            env.reset(up(0.12, 0.3, 4), seed).unwrap();
            env.token().h_step
        })
        .collect();
    assert!(hs.iter().any(|h| (h - 0.12).abs() > 1e-6));
    assert!(hs.iter().all(|h| (h - 0.12).abs() < 0.1));
}

#[test]
fn command_schedule_lookup() {
    let sched = CommandSchedule {
        segments: vec![(0, 0.4), (10, 0.7), (25, 0.5)],
    };
    assert_eq!(sched.at(0), 0.4);
    assert_eq!(sched.at(9), 0.4);
    assert_eq!(sched.at(10), 0.7);
    assert_eq!(sched.at(100), 0.5);
    assert!(CommandSchedule {
        segments: vec![(1, 0.4)]
    }
    .validate()
    .is_err());
    assert!(CommandSchedule {
        segments: vec![(0, 0.4), (0, 0.5)]
    }
    .validate()
    .is_err());
}

#[test]
fn trace_rows_match_rewards() {
    let mut env = StepperEnv::new(cfg(ObsMode::HeightScan)).unwrap();
    env.reset(up(0.12, 0.3, 3), 0).unwrap();
    let mut rewards = Vec::new();
    loop {
        let r = env.step(Action::new(0.3, 0.2, 0.0)).unwrap();
        rewards.push(r.reward);
        if r.done {
            break;
        }
    }
    let rec = env.record();
    assert_eq!(rec.trace.iter().map(|r| r.reward).collect::<Vec<_>>(), rewards);
    assert!((rec.total_reward - rewards.iter().sum::<f64>()).abs() < 1e-12);
    assert_eq!(rec.trace[0].csv().split(',').count(), TRACE_HEADER.split(',').count());
}

fn record(h: f64, ok: bool, v_err: f64) -> EpisodeRecord {
    let row = TraceRow {
        time: 0.5,
        s: 0.0,
        support_height: 0.0,
        v_cmd: 0.6,
        v_avg: 0.6 + v_err,
        heading_err: -0.1,
        action: Action::default(),
        reward: 1.0,
        event: if ok { Event::Success } else { Event::Scuff },
    };
    EpisodeRecord {
        spec: StairSpec::stairs(StairClass::StairsUp, h, 0.3, 4),
        seed: 0,
        class: StairClass::StairsUp,
        h_step: h,
        d_step: 0.3,
        event: row.event,
        total_reward: 2.0,
        trace: vec![row, row],
    }
}

#[test]
fn metrics_definitions() {
    assert!(metrics(&[]).is_err());
    let m = metrics(&[record(0.1, true, 0.0), record(0.1, true, 0.0)]).unwrap();
    assert_eq!(m.e_vel, 0.0);
    assert!((m.e_ang - 0.1).abs() < 1e-15);
    assert_eq!(m.m_reward, 1.0);
    assert_eq!(m.success_rate, 1.0);

    // succeeds on every height up to 0.2 only
    let mut eps = Vec::new();
    for (i, h) in [0.12, 0.14, 0.16, 0.18, 0.2, 0.22, 0.24].iter().enumerate() {
        for k in 0..4 {
            eps.push(record(*h, i <= 4 || k == 0, 0.1));
        }
    }
    let m = metrics(&eps).unwrap();
    assert_eq!(m.m_terrain, 0.2);
    assert!((m.e_vel - 0.1).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn footing_is_conserved(
        h in 0.08f64..0.25, d in 0.22f64..0.4, yaw in -1.0f64..1.0, seed in 0u64..1000,
        actions in proptest::collection::vec((0.1f64..0.5, 0.0f64..0.3, -0.09f64..0.09), 1..15),
        down in proptest::bool::ANY,
    ) {
        let class = if down { StairClass::StairsDown } else { StairClass::StairsUp };
        let mut spec = StairSpec::stairs(class, h, d, 5);
        spec.stair_yaw = yaw;
        spec.origin = [0.7, -1.3];
        let mut c = cfg(ObsMode::HeightScan);
        c.init_heading_err = 0.3;
        c.start_jitter = 0.1;
        let mut env = StepperEnv::new(c).unwrap();
        env.reset(spec, seed).unwrap();
        for (l, cl, dt) in actions {
            let r = env.step(Action::new(l, cl, dt)).unwrap();
            if r.done { break; }
            let st = env.state();
            let pose = env.pose();
            prop_assert!((st.support_height - env.profile().height_at(pose.x, pose.y)).abs() < 1e-9);
            prop_assert!((st.support_height - env.profile().height_along(st.s)).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_clearance_never_clears_a_scuff(
        h in 0.08f64..0.25, d in 0.22f64..0.4, s0 in -0.4f64..0.8,
        stride in 0.1f64..0.5, c_hi in 0.0f64..0.3, frac in 0.0f64..1.0,
    ) {
        let p = TerrainProfile::new(up(h, d, 5)).unwrap();
        let z0 = p.height_along(s0);
        let z1 = p.height_along(s0 + stride);
        let c_lo = c_hi * frac;
        let hi = swing_scuffs(&p, s0, stride, &SwingArc::new(z0, z1, c_hi));
        let lo = swing_scuffs(&p, s0, stride, &SwingArc::new(z0, z1, c_lo));
        prop_assert!(!hi || lo);
    }

    #[test]
    fn arc_apex_and_endpoints(z0 in -1.0f64..1.0, z1 in -1.0f64..1.0, c in 0.0f64..0.3) {
        let arc = SwingArc::new(z0, z1, c);
        prop_assert!((arc.height(0.0) - z0).abs() < 1e-12);
        prop_assert!((arc.height(1.0) - z1).abs() < 1e-12);
        let dense = (0..=20000).map(|i| arc.height(i as f64 / 20000.0)).fold(f64::MIN, f64::max);
        prop_assert!((dense - (z0.max(z1) + c)).abs() < 1e-6, "dense {dense}");
        prop_assert!((arc.apex() - (z0.max(z1) + c)).abs() < 1e-9);
    }

    #[test]
    fn blind_sees_nothing_ahead(
        h1 in 0.1f64..0.2, h2 in 0.1f64..0.2, d in 0.25f64..0.35, seed in 0u64..100,
        actions in proptest::collection::vec((0.1f64..0.5, 0.0f64..0.3, -0.09f64..0.09), 1..10),
        down in proptest::bool::ANY,
    ) {
        let other = if down { StairClass::StairsDown } else { StairClass::StairsUp };
        let a = up(h1, d, 5);
        let b = StairSpec::stairs(other, h2, d, 3);
        let mut c = cfg(ObsMode::Blind);
        c.init_heading_err = 0.2;
        let mut ea = StepperEnv::new(c.clone()).unwrap();
        let mut eb = StepperEnv::new(c).unwrap();
        prop_assert_eq!(ea.reset(a, seed).unwrap(), eb.reset(b, seed).unwrap());
        for (l, cl, dt) in actions {
            let s_before = ea.state().s;
            let act = Action::new(l, cl, dt);
            let (ra, rb) = (ea.step(act).unwrap(), eb.step(act).unwrap());
            // identical until the swing reaches the first riser
            let reaches = s_before + act.clamped().stride >= 0.0;
            if reaches { break; }
            prop_assert_eq!(&ra.obs, &rb.obs);
            prop_assert_eq!(ra.reward, rb.reward);
            if ra.done { break; }
        }
    }

    #[test]
    fn advance_is_stride_times_cos(
        stride in 0.1f64..0.5, dt in -0.087f64..0.087, seed in 0u64..50,
    ) {
        let mut c = cfg(ObsMode::Blind);
        c.init_heading_err = 0.5;
        let mut env = StepperEnv::new(c).unwrap();
        env.reset(StairSpec::flat(), seed).unwrap();
        let s0 = env.state().s;
        let r = env.step(Action::new(stride, 0.05, dt)).unwrap();
        let phi = env.state().heading_err;
        prop_assert_eq!(r.advance, stride * phi.cos());
        prop_assert_eq!(env.state().s, s0 + stride * phi.cos());
    }

    #[test]
    fn heading_error_stays_wrapped(seed in 0u64..200, n in 1usize..60) {
        let mut c = cfg(ObsMode::Blind);
        c.init_heading_err = 3.0;
        c.horizon = 1000;
        let mut env = StepperEnv::new(c).unwrap();
        let mut spec = StairSpec::flat();
        spec.tail_flat = 1e6;
        env.reset(spec, seed).unwrap();
        for _ in 0..n {
            env.step(Action::new(0.1, 0.05, 0.087)).unwrap();
            let e = env.state().heading_err;
            prop_assert!(e > -PI && e <= PI);
        }
    }
}

#[test]
fn shifted_schedule_matches_original_from_offset() {
    let sched = CommandSchedule {
        segments: vec![(0, 0.6), (10, 0.4), (25, 0.8)],
    };
    for t in [0, 5, 10, 17, 25, 40] {
        let sh = sched.shifted(t);
        assert!(sh.validate().is_ok());
        for k in 0..50 {
            assert_eq!(sh.at(k), sched.at(t + k), "t={t} k={k}");
        }
    }
}

#[test]
fn command_range_draws_one_command_per_episode() {
    let cfg = EnvConfig {
        command_range: Some((0.4, 0.8)),
        ..EnvConfig::default()
    };
    let mut env = StepperEnv::new(cfg).unwrap();
    let mut seen = Vec::new();
    for seed in 0..20 {
        env.reset(StairSpec::flat(), seed).unwrap();
        let v = env.state().v_cmd;
        assert!((0.4..=0.8).contains(&v));
        for _ in 0..3 {
            env.step(Action::new(0.3, 0.05, 0.0)).unwrap();
            assert_eq!(env.state().v_cmd, v);
        }
        seen.push(v);
    }
    assert!(seen.windows(2).any(|w| w[0] != w[1]));
    let bad = EnvConfig {
        command_range: Some((0.8, 0.4)),
        ..EnvConfig::default()
    };
    assert!(bad.validate().is_err());
}
