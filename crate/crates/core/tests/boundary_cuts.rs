use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tli_core::boundary::{fit_cut, BoundaryError, BoundaryEstimate, CutConfig, CutProblem};
use tli_core::types::{ModeId, Vector};

fn v(a: f64, b: f64) -> Vector {
    Vector::from_vec(vec![a, b])
}

fn cfg() -> CutConfig {
    CutConfig::default()
}

/// Exhaustive search over unit-circle angles spaced 1e-4 rad, then bisection
/// towards an infeasible neighbour of the best grid point, since the optimum
/// of this problem sits on the edge of the feasible set.
fn grid_oracle(problem: &CutProblem, cfg: &CutConfig) -> Option<f64> {
    let step = 1e-4;
    let count = (std::f64::consts::TAU / step).ceil() as usize;
    let at = |t: f64| v(t.cos(), t.sin());
    let feasible = |t: f64| problem.violation(&at(t), cfg) <= 0.0;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..count {
        let t = i as f64 * step;
        if feasible(t) {
            let o = problem.objective(&at(t));
            if best.is_none_or(|(_, b)| o < b) {
                best = Some((t, o));
            }
        }
    }
    let (t0, mut obj) = best?;
    for dir in [-1.0, 1.0] {
        let t1 = t0 + dir * step;
        if feasible(t1) {
            continue;
        }
        let (mut lo, mut hi) = (t0, t1);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        obj = obj.min(problem.objective(&at(lo)));
    }
    Some(obj)
}

#[test]
fn worked_example_without_priors() {
    let (xs, x0, xl, xf) = (v(0.0, 0.0), v(0.0, -1.0), v(0.0, 1.0), v(0.0, 2.0));
    let p = CutProblem { x_star: &xs, x_entry: &x0, x_last: &xl, x_fail: &xf, protected: &[] };
    let cut = fit_cut(&p, &CutConfig { eps_sep: 0.1, ..cfg() }).unwrap();
    assert!((cut.w[0] - 0.9950).abs() < 5e-5, "{:?}", cut.w);
    assert!((cut.w[1] - 0.1).abs() < 5e-5);
    assert!((cut.w[0] - 0.99f64.sqrt()).abs() < 1e-12);
}

#[test]
fn worked_example_pinned_by_prior_lasts() {
    let (xs, x0, xl, xf) = (v(0.0, 0.0), v(0.0, -1.0), v(0.0, 1.0), v(0.0, 2.0));
    let priors = [v(0.9, 0.99), v(-0.9, 0.99)];
    let p = CutProblem { x_star: &xs, x_entry: &x0, x_last: &xl, x_fail: &xf, protected: &priors };
    let cut = fit_cut(&p, &CutConfig { eps_sep: 0.1, ..cfg() }).unwrap();
    assert!((cut.w[0] - 0.0111).abs() < 5e-5, "{:?}", cut.w);
    assert!((cut.w[1] - 0.99994).abs() < 5e-5);
}

#[test]
fn failure_at_attractor_is_infeasible() {
    let (xs, x0, xl) = (v(0.0, 0.0), v(0.0, -1.0), v(0.0, 1.0));
    let p = CutProblem { x_star: &xs, x_entry: &x0, x_last: &xl, x_fail: &xs, protected: &[] };
    assert_eq!(fit_cut(&p, &CutConfig { eps_sep: 0.1, ..cfg() }), Err(BoundaryError::InfeasibleCut));
}

/// Random problems built around a hidden separating line so that most are
/// feasible; the rest must be reported infeasible by both methods.
#[test]
fn solver_matches_grid_oracle_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = cfg();
    let mut feasible_seen = 0;
    for case in 0..200 {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let w_true = v(theta.cos(), theta.sin());
        let t = v(-w_true[1], w_true[0]);
        let last = v(rng.random(), rng.random());
        let inside = |rng: &mut ChaCha8Rng| {
            &last - &w_true * rng.random_range(0.02..0.6) + &t * rng.random_range(-0.6..0.6)
        };
        let x_star = inside(&mut rng);
        let entry = inside(&mut rng);
        let priors: Vec<Vector> = (0..rng.random_range(0..4)).map(|_| inside(&mut rng)).collect();
        let fail = &last + &w_true * rng.random_range(0.005..0.05) + &t * rng.random_range(-0.05..0.05);
        let p = CutProblem { x_star: &x_star, x_entry: &entry, x_last: &last, x_fail: &fail, protected: &priors };
        let oracle = grid_oracle(&p, &cfg);
        match fit_cut(&p, &cfg) {
            Ok(cut) => {
                feasible_seen += 1;
                assert!((cut.w.norm() - 1.0).abs() < 1e-9);
                assert!(p.violation(&cut.w, &cfg) <= 1e-9, "case {case}: violation {}", p.violation(&cut.w, &cfg));
                let ours = p.objective(&cut.w);
                if let Some(o) = oracle {
                    assert!((ours - o).abs() <= 1e-6, "case {case}: solver {ours} vs oracle {o}");
                } else {
                    // the grid can only miss arcs narrower than its spacing
                    let near = (0..2).all(|s| {
                        let d = if s == 0 { 5e-5 } else { -5e-5 };
                        let a = cut.w[1].atan2(cut.w[0]) + d;
                        p.violation(&v(a.cos(), a.sin()), &cfg) > 0.0
                    });
                    assert!(near, "case {case}: oracle missed a wide feasible arc");
                }
            }
            Err(BoundaryError::InfeasibleCut) => assert!(oracle.is_none(), "case {case}: oracle found {oracle:?}"),
            Err(e) => panic!("case {case}: {e}"),
        }
    }
    assert!(feasible_seen >= 150, "only {feasible_seen} feasible problems");
}

#[test]
fn record_failure_keeps_recorded_states_on_the_right_side() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x_r = v(0.5, 0.5);
    let mut est = BoundaryEstimate::new(ModeId::new(0, "m"), x_r.clone(), cfg());
    let mut added = 0;
    for _ in 0..40 {
        // failures leave a disc of radius 0.3 around the reference
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = v(a.cos(), a.sin());
        let last = &x_r + &dir * 0.299;
        let fail = &x_r + &dir * 0.305;
        let entry = &x_r + v(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        match est.record_failure(&entry, &last, &fail, false) {
            Ok(next) => {
                assert!(next.gamma(&fail) > 1.0);
                est = next;
                added += 1;
            }
            Err(BoundaryError::RedundantFailure(g)) => assert!(g >= 1.0),
            Err(BoundaryError::InfeasibleCut | BoundaryError::LastOutside(_) | BoundaryError::EntryOutside(_)) => {}
            Err(e) => panic!("{e}"),
        }
        for h in est.history() {
            assert!(est.gamma(&h.fail) > 1.0);
            assert!(est.gamma(&h.last) <= 1.0 + 1e-6);
            assert!(est.gamma(&h.entry) <= 1.0 + 1e-6);
        }
        assert_eq!(est.gamma(&x_r), 0.0);
    }
    assert!(added >= 3);
}

#[test]
fn second_failure_keeps_first_last_inside() {
    let x_r = v(0.0, 0.0);
    let est = BoundaryEstimate::new(ModeId::new(0, "m"), x_r, cfg());
    let one = est.record_failure(&v(0.0, -0.5), &v(0.0, 1.0), &v(0.0, 1.1), false).unwrap();
    assert_eq!(one.cuts().len(), 1);
    assert!(one.gamma(&v(0.0, 1.1)) > 1.0);
    let two = one.record_failure(&v(0.0, -0.5), &v(-1.0, 0.0), &v(-1.1, 0.0), false).unwrap();
    assert_eq!(two.cuts().len(), 2);
    assert!(two.gamma(&v(0.0, 1.0)) <= 1.0 + 1e-9);
    assert!(two.gamma(&v(-1.0, 0.0)) <= 1.0 + 1e-9);
    // a failure beyond an existing cut is redundant
    assert!(matches!(
        two.record_failure(&v(0.0, 0.0), &v(0.0, 0.5), &v(0.0, 5.0), false),
        Err(BoundaryError::RedundantFailure(_))
    ));
}

#[test]
fn gamma_grows_along_rays() {
    let x_r = v(0.0, 0.0);
    let mut est = BoundaryEstimate::new(ModeId::new(0, "m"), x_r.clone(), cfg());
    est = est.record_failure(&v(0.0, -0.5), &v(0.0, 1.0), &v(0.0, 1.1), false).unwrap();
    est = est.record_failure(&v(0.0, -0.5), &v(-1.0, 0.2), &v(-1.2, 0.2), false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = v(a.cos(), a.sin());
        let mut prev = 0.0;
        for k in 0..50 {
            let g = est.gamma(&(&x_r + &dir * (k as f64 * 0.1)));
            assert!(g >= prev);
            prev = g;
        }
    }
    let json = serde_json::to_string(&est).unwrap();
    let back: BoundaryEstimate = serde_json::from_str(&json).unwrap();
    assert_eq!(back, est);
}
