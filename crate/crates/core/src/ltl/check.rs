//! Finite-trace semantics for checking recorded runs against a spec.
//!
//! Consecutive identical (valuation, mode) samples are merged first, so `X`
//! refers to the next distinct discrete state. `X` at the final position holds
//! vacuously, and `G F goal` reads as "goal holds at the final position".

use serde::{Deserialize, Serialize};

use super::formula::Formula;
use super::spec::{flatten_always, Gr1Spec};
use crate::types::{ModeId, SensorState, Trace};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceVerdict {
    Satisfied,
    /// A system guarantee (init or transition clause) fails at `step`.
    SafetyViolation { step: usize, clause: String },
    LivenessViolation,
    /// The environment broke its assumptions first at `step`.
    AssumptionViolation { step: usize, clause: String },
}

impl TraceVerdict {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, TraceVerdict::Satisfied)
    }

    /// Satisfied, or only the finite-trace liveness reading fails.
    pub fn is_safe(&self) -> bool {
        matches!(self, TraceVerdict::Satisfied | TraceVerdict::LivenessViolation)
    }
}

struct Position<'a> {
    alpha: &'a SensorState,
    mode: &'a ModeId,
    first: usize,
}

struct Word<'a> {
    spec: &'a Gr1Spec,
    pos: Vec<Position<'a>>,
}

impl Word<'_> {
    fn atom(&self, name: &str, i: usize) -> bool {
        let p = &self.pos[i];
        if let Some(k) = self.spec.ap_env.iter().position(|a| a == name) {
            return p.alpha.get(k);
        }
        p.mode.name == name
    }

    fn eval(&self, f: &Formula, i: usize) -> bool {
        let last = self.pos.len() - 1;
        match f {
            Formula::True => true,
            Formula::False => false,
            Formula::Atom(a) => self.atom(a, i),
            Formula::Not(x) => !self.eval(x, i),
            Formula::And(l, r) => self.eval(l, i) && self.eval(r, i),
            Formula::Or(l, r) => self.eval(l, i) || self.eval(r, i),
            Formula::Implies(l, r) => !self.eval(l, i) || self.eval(r, i),
            Formula::Iff(l, r) => self.eval(l, i) == self.eval(r, i),
            Formula::Next(x) => i == last || self.eval(x, i + 1),
            Formula::Eventually(x) => (i..=last).any(|j| self.eval(x, j)),
            Formula::Always(x) => (i..=last).all(|j| self.eval(x, j)),
            Formula::Until(l, r) => {
                for j in i..=last {
                    if self.eval(r, j) {
                        return true;
                    }
                    if !self.eval(l, j) {
                        return false;
                    }
                }
                false
            }
        }
    }

    /// First violation of a list of safety formulas: initial formulas at
    /// position 0, `G` clauses at every position.
    fn first_violation(&self, init: &[Formula], trans: &[Formula]) -> Option<(usize, String)> {
        for f in init {
            if !self.eval(f, 0) {
                return Some((self.pos[0].first, f.to_string()));
            }
        }
        let clauses = flatten_always(trans);
        let mut best: Option<(usize, String)> = None;
        for c in &clauses {
            let (body, global) = match c {
                Formula::Always(b) => (b.as_ref(), true),
                other => (other, false),
            };
            let range = if global { 0..self.pos.len() } else { 0..1 };
            for i in range {
                if !self.eval(body, i) {
                    // A broken step obligation shows up at the next sample.
                    let at = if body.contains_next() && i + 1 < self.pos.len() {
                        self.pos[i + 1].first
                    } else {
                        self.pos[i].first
                    };
                    if best.as_ref().is_none_or(|(s, _)| at < *s) {
                        best = Some((at, body.to_string()));
                    }
                    break;
                }
            }
        }
        best
    }

    fn live(&self, f: &Formula) -> bool {
        let last = self.pos.len() - 1;
        if let Formula::Always(g) = f {
            if let Formula::Eventually(goal) = g.as_ref() {
                return self.eval(goal, last);
            }
        }
        self.eval(f, 0)
    }
}

/// Checks a sequence of (sensor valuation, mode) samples.
pub fn check_mode_trace(spec: &Gr1Spec, steps: &[(SensorState, ModeId)]) -> TraceVerdict {
    if steps.is_empty() {
        return TraceVerdict::LivenessViolation;
    }
    let mut pos: Vec<Position> = Vec::new();
    for (i, (alpha, mode)) in steps.iter().enumerate() {
        if let Some(p) = pos.last() {
            if p.alpha == alpha && p.mode == mode {
                continue;
            }
        }
        pos.push(Position { alpha, mode, first: i });
    }
    let word = Word { spec, pos };

    let env = word.first_violation(&spec.env_init, &spec.env_trans);
    let sys = word.first_violation(&spec.sys_init, &spec.sys_trans);
    match (env, sys) {
        (Some((e, ce)), Some((s, cs))) => {
            return if s < e {
                TraceVerdict::SafetyViolation { step: s, clause: cs }
            } else {
                TraceVerdict::AssumptionViolation { step: e, clause: ce }
            };
        }
        (Some((e, ce)), None) => return TraceVerdict::AssumptionViolation { step: e, clause: ce },
        (None, Some((s, cs))) => return TraceVerdict::SafetyViolation { step: s, clause: cs },
        (None, None) => {}
    }
    if spec.sys_live.iter().all(|f| word.live(f)) {
        TraceVerdict::Satisfied
    } else {
        TraceVerdict::LivenessViolation
    }
}

pub fn check_trace(spec: &Gr1Spec, trace: &Trace) -> TraceVerdict {
    let steps: Vec<(SensorState, ModeId)> = trace
        .steps
        .iter()
        .map(|s| (s.alpha.clone(), s.mode.clone()))
        .collect();
    check_mode_trace(spec, &steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = "\
aps_env: p, q
aps_sys: u, v, z
env_init:
  !p & !q
env_trans:
  G(u <-> (!p & !q))
  G(v <-> (p & !q))
  G(z <-> (!p & q))
sys_init:
  u
sys_trans:
  G(u -> (X u | X v))
  G(v -> (X v | X z))
  G(z -> X z)
sys_live:
  G F z
";

    fn steps(seq: &[&str]) -> Vec<(SensorState, ModeId)> {
        seq.iter()
            .map(|m| {
                let (bits, id) = match *m {
                    "u" => ("00", 0),
                    "v" => ("10", 1),
                    "z" => ("01", 2),
                    _ => unreachable!(),
                };
                (bits.parse().unwrap(), ModeId::new(id, *m))
            })
            .collect()
    }

    #[test]
    fn stuttering_run_satisfies() {
        let s = Gr1Spec::parse(SPEC).unwrap();
        let v = check_mode_trace(&s, &steps(&["u", "u", "v", "v", "v", "z", "z"]));
        assert_eq!(v, TraceVerdict::Satisfied);
    }

    #[test]
    fn skipped_mode_is_reported_at_the_jump() {
        let s = Gr1Spec::parse(SPEC).unwrap();
        match check_mode_trace(&s, &steps(&["u", "u", "z"])) {
            TraceVerdict::SafetyViolation { step, clause } => {
                assert_eq!(step, 2);
                assert_eq!(clause, "(u -> (X u | X v))");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unfinished_run_is_liveness_violation() {
        let s = Gr1Spec::parse(SPEC).unwrap();
        assert_eq!(
            check_mode_trace(&s, &steps(&["u", "v"])),
            TraceVerdict::LivenessViolation
        );
    }

    #[test]
    fn wrong_start_mode() {
        let s = Gr1Spec::parse(SPEC).unwrap();
        let mut t = steps(&["v", "z"]);
        // sensor says u but mode says v: env binding broken at step 0
        t[0].0 = "00".parse().unwrap();
        assert!(matches!(
            check_mode_trace(&s, &t),
            TraceVerdict::SafetyViolation { step: 0, .. } | TraceVerdict::AssumptionViolation { step: 0, .. }
        ));
    }

    #[test]
    fn until_and_eventually_on_finite_words() {
        let s = Gr1Spec::parse(SPEC).unwrap();
        let st = steps(&["u", "v", "z"]);
        let pos = st
            .iter()
            .enumerate()
            .map(|(i, (a, m))| Position { alpha: a, mode: m, first: i })
            .collect();
        let w = Word { spec: &s, pos };
        let f = super::super::parse_formula("(u | v) U z").unwrap();
        assert!(w.eval(&f, 0));
        let g = super::super::parse_formula("u U z").unwrap();
        assert!(!w.eval(&g, 0));
        assert!(w.eval(&super::super::parse_formula("F z").unwrap(), 0));
        assert!(!w.eval(&super::super::parse_formula("G u").unwrap(), 0));
    }
}
