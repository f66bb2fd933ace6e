use std::sync::{Arc, OnceLock};

use tli_core::assets;
use tli_core::executor::{
    run, BoundarySet, EntryAdversary, ExecError, Executor, ExecutorConfig, NoPerturbations, PerturbationQueue,
    PolicyKind, PolicyLibrary, Verdict,
};
use tli_core::lpvds::FitConfig;
use tli_core::ltl::Gr1Spec;
use tli_core::sim::{generate_demos, DemoConfig, Perturbation, PerturbationKind, PerturbationSchedule, Scene};
use tli_core::types::{TraceEvent, Vector};

struct Setup {
    scene: Scene,
    spec: Gr1Spec,
    library: Arc<PolicyLibrary>,
    start: Vector,
}

fn scooping() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let scene = assets::scene("scooping").unwrap().unwrap();
        let spec = assets::spec("scooping_full").unwrap().unwrap();
        let demos = generate_demos(&scene, &["a", "b", "c", "d"], 4, 1, &DemoConfig::default()).unwrap();
        let library = learn(&scene, &demos);
        let start = demos[0].samples[0].x.clone();
        Setup { scene, spec, library, start }
    })
}

fn learn(scene: &Scene, demos: &[tli_core::types::Demonstration]) -> Arc<PolicyLibrary> {
    let kind = PolicyKind::Ds(FitConfig::default());
    Arc::new(tli_core::executor::learn_library(scene, demos, &kind).unwrap())
}

fn v(a: f64, b: f64) -> Vector {
    Vector::from_vec(vec![a, b])
}

#[test]
fn unperturbed_scooping_succeeds_in_order() {
    let s = scooping();
    let (out, b) = run(&s.scene, &s.spec, s.library.clone(), BoundarySet::default(), s.start.clone(), &mut NoPerturbations, &ExecutorConfig::default()).unwrap();
    assert_eq!(out.verdict, Verdict::Success);
    assert_eq!(out.trace.mode_names(), ["a", "b", "c", "d"]);
    assert_eq!(out.replans, 0);
    assert_eq!(b.cut_count(), 0);
    assert!(out.spec_verdict.is_satisfied());
    assert!(out.trace.is_well_formed());
}

#[test]
fn task_level_push_back_replans() {
    let s = scooping();
    // let the run reach c, then throw it back into a
    let ex = Executor::new(s.scene.clone(), s.spec.clone(), s.library.clone(), BoundarySet::default(), s.start.clone(), ExecutorConfig::default()).unwrap();
    let mut ex = ex;
    let queue = PerturbationQueue::default();
    let mut source = queue.clone();
    while ex.mode().name != "c" {
        assert!(ex.step(&mut source).is_none());
    }
    queue.push(v(0.1, 0.5));
    let verdict = loop {
        if let Some(v) = ex.step(&mut source) {
            break v;
        }
    };
    assert_eq!(verdict, Verdict::Success);
    assert_eq!(ex.replans(), 1);
    assert_eq!(ex.trace().mode_names(), ["a", "b", "c", "a", "b", "c", "d"]);
    let jump = ex.trace().steps.iter().find(|t| t.perturbed).unwrap();
    assert_eq!(jump.event, TraceEvent::UnexpectedExit);
    // a displacement is not a policy failure
    assert_eq!(ex.boundaries.cut_count(), 0);
}

#[test]
fn motion_level_displacement_stays_in_mode() {
    let s = scooping();
    let mut schedule = PerturbationSchedule::new(vec![Perturbation { step: 5, kind: PerturbationKind::Displace, vector: vec![0.0, 0.05] }]);
    let (out, _) = run(&s.scene, &s.spec, s.library.clone(), BoundarySet::default(), s.start.clone(), &mut schedule, &ExecutorConfig::default()).unwrap();
    assert_eq!(out.verdict, Verdict::Success);
    assert_eq!(out.replans, 0);
    let jump = out.trace.steps.iter().position(|t| t.perturbed).unwrap();
    assert_eq!(jump, 6);
    assert_eq!(out.trace.steps[jump].event, TraceEvent::Perturbation);
}

/// A start in b from which the (b, c) policy flows back into a.
fn pocket(s: &Setup) -> Vector {
    let (_, policy) = s.library.select("b", Some("c")).unwrap();
    let poly = &s.scene.region("b").unwrap().vertices;
    let mut best: Option<(f64, Vector)> = None;
    for i in 0..20 {
        for j in 0..40 {
            let x0 = v(0.305 + 0.19 * i as f64 / 19.0, 0.01 + 0.98 * j as f64 / 39.0);
            let mut x = x0.clone();
            for _ in 0..5000 {
                x = &x + policy.field().velocity(&x) * 0.01;
                let r = s.scene.region_at(&x);
                if r != "b" {
                    if r == "a" && best.as_ref().is_none_or(|(d, _)| poly.depth(&x0) > *d) {
                        best = Some((poly.depth(&x0), x0.clone()));
                    }
                    break;
                }
            }
        }
    }
    best.unwrap().1
}

#[test]
fn repeated_adversary_loops_without_modulation_only() {
    let s = scooping();
    let target = pocket(s);
    let off = ExecutorConfig { modulation_enabled: false, ..Default::default() };
    let (out, b) = run(&s.scene, &s.spec, s.library.clone(), BoundarySet::default(), s.start.clone(), &mut EntryAdversary::new("b", target.clone(), None), &off).unwrap();
    assert_eq!(out.verdict, Verdict::Looping);
    assert_eq!(out.replans, off.loop_budget + 1);
    // the first failure is cut; the rest fall beyond it and are redundant
    assert_eq!(b.cut_count(), 1);
    assert_eq!(out.cut_attempts.len(), off.loop_budget + 1);
    assert!(out.cut_attempts.iter().skip(1).all(|a| a.error.as_deref().is_some_and(|e| e.contains("already outside"))));
    let on = ExecutorConfig::default();
    let (out, b) = run(&s.scene, &s.spec, s.library.clone(), BoundarySet::default(), s.start.clone(), &mut EntryAdversary::new("b", target, None), &on).unwrap();
    assert_eq!(out.verdict, Verdict::Success);
    assert_eq!(out.replans, 1);
    assert_eq!(b.cut_count(), 1);
    assert!(out.spec_verdict.is_satisfied());
}

#[test]
fn runs_are_deterministic() {
    let s = scooping();
    let target = pocket(s);
    let go = || {
        run(&s.scene, &s.spec, s.library.clone(), BoundarySet::default(), s.start.clone(), &mut EntryAdversary::new("b", target.clone(), Some(3)), &ExecutorConfig::default()).unwrap()
    };
    assert_eq!(go(), go());
}

#[test]
fn boundaries_carry_over_between_runs() {
    let s = scooping();
    let target = pocket(s);
    let cfg = ExecutorConfig::default();
    let (_, b) = run(&s.scene, &s.spec, s.library.clone(), BoundarySet::default(), s.start.clone(), &mut EntryAdversary::new("b", target.clone(), Some(1)), &cfg).unwrap();
    assert_eq!(b.cut_count(), 1);
    let (out, b2) = run(&s.scene, &s.spec, s.library.clone(), b.clone(), s.start.clone(), &mut EntryAdversary::new("b", target, Some(1)), &cfg).unwrap();
    assert_eq!(out.verdict, Verdict::Success);
    assert_eq!(out.replans, 0);
    assert_eq!(b2.cut_count(), 1);
    let json = serde_json::to_string(&b2).unwrap();
    assert_eq!(serde_json::from_str::<BoundarySet>(&json).unwrap(), b2);
}

#[test]
fn missing_policies_and_bad_starts_are_rejected() {
    let s = scooping();
    let mut lib = (*s.library).clone();
    lib.policies.retain(|(m, _), _| m != "c");
    let err = Executor::new(s.scene.clone(), s.spec.clone(), Arc::new(lib), BoundarySet::default(), s.start.clone(), ExecutorConfig::default()).unwrap_err();
    assert!(matches!(err, ExecError::MissingPolicy(m) if m == "c"));
    let err = Executor::new(s.scene.clone(), s.spec.clone(), s.library.clone(), BoundarySet::default(), Vector::zeros(3), ExecutorConfig::default()).unwrap_err();
    assert!(matches!(err, ExecError::Config(_)));
    let bad = ExecutorConfig { dt: 0.0, ..Default::default() };
    assert!(Executor::new(s.scene.clone(), s.spec.clone(), s.library.clone(), BoundarySet::default(), s.start.clone(), bad).is_err());
}

#[test]
fn partial_spec_is_extended_by_an_observed_exit() {
    let s = scooping();
    let spec = assets::spec("scooping_partial").unwrap().unwrap();
    let ex = Executor::new(s.scene.clone(), spec, s.library.clone(), BoundarySet::default(), s.start.clone(), ExecutorConfig::default()).unwrap();
    let mut ex = ex;
    let queue = PerturbationQueue::default();
    let mut source = queue.clone();
    while ex.mode().name != "b" {
        ex.step(&mut source);
    }
    queue.push(v(0.1, 0.5));
    let (out, _) = ex.run(&mut source);
    assert_eq!(out.verdict, Verdict::Success);
    assert!(out.spec_extended);
    assert!(out.spec_verdict.is_satisfied());
    assert_eq!(out.trace.mode_names(), ["a", "b", "a", "b", "c", "d"]);
}
