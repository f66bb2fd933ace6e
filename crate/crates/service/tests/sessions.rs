use std::sync::OnceLock;

use tli_bench::multimode::find_pocket;
use tli_service::protocol::{Perturb, ResetArgs};
use tli_service::{Assets, Command, LibraryCache, Session, SessionConfig, SessionError, SessionRequest, Snapshot};

fn cache() -> &'static LibraryCache {
    static C: OnceLock<LibraryCache> = OnceLock::new();
    C.get_or_init(LibraryCache::default)
}

fn request(config: SessionConfig) -> SessionRequest {
    SessionRequest { scene: "scooping".into(), spec: "scooping_full".into(), variant: "DS+mod".into(), config }
}

fn session(id: u64) -> Session {
    let config = SessionConfig { steps_per_tick: 5, grid: 5, ..Default::default() };
    Session::create(id, request(config), &Assets::bundled(), cache()).unwrap()
}

fn tick_until(s: &mut Session, max: usize, done: impl Fn(&Snapshot) -> bool) -> Snapshot {
    for _ in 0..max {
        s.tick().unwrap();
        let snap = s.snapshot();
        if done(&snap) {
            return snap;
        }
    }
    panic!("condition not reached in {max} ticks");
}

#[test]
fn fresh_sessions_are_paused_at_their_start() {
    let mut s = session(1);
    let snap = s.snapshot();
    assert!(snap.paused);
    assert_eq!(snap.trajectory.len(), 1);
    assert_eq!(snap.trajectory[0].x, snap.x);
    assert_eq!(snap.mode.name, "a");
    assert_eq!(snap.commanded.name, "b");
    assert_eq!(snap.step, 0);
    assert_eq!(snap.cut_count(), 0);
    assert!(snap.modulation && snap.cutting);
    let field = snap.field.unwrap();
    assert_eq!(field.raw.len(), 25);
    assert_eq!(field.modulated, field.raw);
    s.tick().unwrap();
    let after = s.snapshot();
    assert_eq!(after.tick, 1);
    assert_eq!(after.x, snap.x);
    assert_eq!(after.step, 0);
}

#[test]
fn unknown_assets_are_reported() {
    let a = Assets::bundled();
    let mut r = request(SessionConfig::default());
    r.scene = "kitchen".into();
    assert!(matches!(Session::create(1, r, &a, cache()), Err(SessionError::UnknownAsset(n)) if n == "kitchen"));
    let mut r = request(SessionConfig::default());
    r.spec = "scooping_twice".into();
    assert!(matches!(Session::create(1, r, &a, cache()), Err(SessionError::UnknownAsset(_))));
    let mut r = request(SessionConfig::default());
    r.variant = "GP".into();
    assert!(matches!(Session::create(1, r, &a, cache()), Err(SessionError::UnknownAsset(_))));
    let mut r = request(SessionConfig::default());
    r.spec = "cooking_cb".into();
    assert!(matches!(Session::create(1, r, &a, cache()), Err(SessionError::Setup(_))));
}

#[test]
fn unperturbed_session_runs_to_success() {
    let mut s = session(1);
    s.enqueue(Command::Resume).unwrap();
    let snap = tick_until(&mut s, 2000, |s| s.verdict.is_some());
    assert_eq!(snap.verdict, Some(tli_core::executor::Verdict::Success));
    assert_eq!(snap.mode.name, "d");
    assert_eq!(snap.replans, 0);
    assert!(snap.trajectory.len() > 10);
}

#[test]
fn delta_is_applied_before_the_next_sensing() {
    let mut s = session(1);
    s.enqueue(Command::Resume).unwrap();
    for _ in 0..3 {
        s.tick().unwrap();
    }
    let before = s.snapshot();
    s.enqueue(Command::Perturb(Perturb::Delta(vec![0.1, 0.0]))).unwrap();
    // queued only: nothing moves until the tick
    assert_eq!(s.snapshot().x, before.x);
    s.tick().unwrap();
    let sensed = &s.executor().trace().steps[before.step];
    assert_eq!(sensed.x[0], before.x[0] + 0.1);
    assert_eq!(sensed.x[1], before.x[1]);
    assert!(sensed.perturbed);
    let snap = s.snapshot();
    assert!(snap.trajectory.iter().any(|p| p.perturbed));
}

#[test]
fn push_back_to_a_replans_at_the_next_snapshot() {
    let mut s = session(1);
    s.enqueue(Command::Resume).unwrap();
    tick_until(&mut s, 2000, |s| s.mode.name == "c");
    s.enqueue(Command::Perturb(Perturb::Target(vec![0.1, 0.5]))).unwrap();
    s.tick().unwrap();
    let snap = s.snapshot();
    assert_eq!(snap.mode.name, "a");
    assert_eq!(snap.commanded.name, "b");
    assert_eq!(snap.automaton.modes[snap.automaton.active].name, "a");
    assert_eq!(snap.replans, 1);
    // a displacement is not a policy failure
    assert_eq!(snap.cut_count(), 0);
}

#[test]
fn a_policy_failure_adds_one_cut_that_modulation_respects() {
    let mut s = session(1);
    let ex = s.executor();
    let pocket = find_pocket(&ex.scene, ex.library(), ex.config.dt).unwrap();
    s.enqueue(Command::Resume).unwrap();
    tick_until(&mut s, 2000, |s| s.mode.name == "b");
    s.enqueue(Command::Perturb(Perturb::Target(pocket.iter().copied().collect()))).unwrap();
    let snap = tick_until(&mut s, 2000, |s| s.cut_count() > 0);
    assert_eq!(snap.cut_count(), 1);
    assert_eq!(snap.cuts[0].mode, "b");
    assert_eq!(snap.cuts[0].next.as_deref(), Some("c"));
    let snap = tick_until(&mut s, 2000, |s| s.mode.name == "b");
    let field = snap.field.unwrap();
    assert_eq!(field.probes.len(), 1);
    for p in &field.probes {
        let outward = p.w[0] * p.modulated[0] + p.w[1] * p.modulated[1];
        assert!(outward <= 1e-9, "outward {outward}");
    }
    let snap = tick_until(&mut s, 4000, |s| s.verdict.is_some());
    assert_eq!(snap.verdict, Some(tli_core::executor::Verdict::Success));
    assert_eq!(snap.cut_count(), 1);
}

#[test]
fn toggles_apply_from_the_next_tick() {
    let mut s = session(1);
    s.enqueue(Command::ToggleModulation).unwrap();
    s.enqueue(Command::ToggleCutting).unwrap();
    assert!(s.snapshot().modulation);
    s.tick().unwrap();
    let snap = s.snapshot();
    assert!(!snap.modulation && !snap.cutting);
    s.enqueue(Command::ToggleModulation).unwrap();
    s.tick().unwrap();
    assert!(s.snapshot().modulation);
}

#[test]
fn reset_keeps_cuts_unless_forgotten() {
    let mut s = session(1);
    let ex = s.executor();
    let pocket = find_pocket(&ex.scene, ex.library(), ex.config.dt).unwrap();
    let start = s.snapshot().x;
    s.enqueue(Command::Resume).unwrap();
    tick_until(&mut s, 2000, |s| s.mode.name == "b");
    s.enqueue(Command::Perturb(Perturb::Target(pocket.iter().copied().collect()))).unwrap();
    tick_until(&mut s, 2000, |s| s.cut_count() > 0);
    s.enqueue(Command::Reset(ResetArgs::default())).unwrap();
    s.tick().unwrap();
    let snap = s.snapshot();
    assert_eq!(snap.cut_count(), 1);
    assert_eq!(snap.replans, 0);
    assert!(!snap.paused);
    assert_eq!(snap.trajectory.first().unwrap().x, start);
    s.enqueue(Command::Reset(ResetArgs { seed: Some(7), forget: true })).unwrap();
    s.tick().unwrap();
    let snap = s.snapshot();
    assert_eq!(snap.cut_count(), 0);
    assert_ne!(snap.trajectory.first().unwrap().x, start);
}

#[test]
fn malformed_perturbations_are_rejected() {
    let mut s = session(1);
    assert!(matches!(s.enqueue(Command::Perturb(Perturb::Delta(vec![0.1]))), Err(SessionError::InvalidCommand(_))));
    assert!(s.enqueue(Command::Perturb(Perturb::Target(vec![f64::NAN, 0.0]))).is_err());
}

#[test]
fn identical_command_timelines_give_identical_snapshots() {
    let timeline = |tick: usize| -> Vec<Command> {
        match tick {
            0 => vec![Command::Resume],
            10 => vec![Command::Perturb(Perturb::Delta(vec![0.0, 0.1]))],
            25 => vec![Command::Perturb(Perturb::Target(vec![0.4, 0.3]))],
            40 => vec![Command::ToggleModulation, Command::Pause],
            45 => vec![Command::Resume],
            _ => vec![],
        }
    };
    let (mut a, mut b) = (session(5), session(5));
    for t in 0..120 {
        for c in timeline(t) {
            a.enqueue(c.clone()).unwrap();
            b.enqueue(c).unwrap();
        }
        a.tick().unwrap();
        b.tick().unwrap();
        assert_eq!(a.snapshot(), b.snapshot(), "tick {t}");
    }
}

/// Pushes the run into the pocket every time it enters b, as a person
/// steering the session would, until the run ends.
fn steer_into_pocket(s: &mut Session, pocket: &[f64]) -> Snapshot {
    let mut last = s.snapshot().mode.name;
    for _ in 0..20_000 {
        s.tick().unwrap();
        let snap = s.snapshot();
        if snap.verdict.is_some() {
            return snap;
        }
        if snap.mode.name == "b" && last != "b" {
            s.enqueue(Command::Perturb(Perturb::Target(pocket.to_vec()))).unwrap();
        }
        last = snap.mode.name;
    }
    panic!("run did not end");
}

#[test]
fn toggling_modulation_reproduces_the_looping_contrast() {
    let mut s = session(1);
    let ex = s.executor();
    let pocket: Vec<f64> = find_pocket(&ex.scene, ex.library(), ex.config.dt).unwrap().iter().copied().collect();
    s.enqueue(Command::ToggleModulation).unwrap();
    s.enqueue(Command::Resume).unwrap();
    let off = steer_into_pocket(&mut s, &pocket);
    assert_eq!(off.verdict, Some(tli_core::executor::Verdict::Looping));
    assert!(!off.modulation);
    s.enqueue(Command::ToggleModulation).unwrap();
    s.enqueue(Command::Reset(ResetArgs { seed: None, forget: true })).unwrap();
    let on = steer_into_pocket(&mut s, &pocket);
    assert_eq!(on.verdict, Some(tli_core::executor::Verdict::Success));
    assert!(on.modulation);
    assert_eq!(on.cut_count(), 1);
}
