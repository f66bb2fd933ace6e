//! Template synthesis: the transition relation is read off `sys_trans`, goals
//! off `sys_live`, and the strategy is shortest-path-to-goal.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::formula::Formula;
use super::spec::{flatten_always, Gr1Spec};
use super::LtlError;
use crate::types::{LabelMap, ModeId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeAutomaton {
    pub modes: Vec<ModeId>,
    /// Every allowed (from, to) pair by mode id. Self-loops are always present:
    /// a continuous run stays in a mode for many samples.
    pub edges: BTreeSet<(usize, usize)>,
    /// Self-loops written explicitly in the specification.
    pub declared_self_loops: BTreeSet<usize>,
    pub goals: BTreeSet<usize>,
    pub init: Option<usize>,
    /// Commanded successor for every mode.
    pub strategy: Vec<usize>,
    /// Number of transitions to the nearest goal (0 for goals).
    pub distance: Vec<usize>,
    pub label_map: LabelMap,
}

impl ModeAutomaton {
    pub fn mode(&self, id: usize) -> &ModeId {
        &self.modes[id]
    }

    pub fn mode_named(&self, name: &str) -> Option<&ModeId> {
        self.modes.iter().find(|m| m.name == name)
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn successors(&self, from: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .range((from, 0)..(from + 1, 0))
            .map(|(_, t)| *t)
            .filter(move |t| *t != from)
    }

    /// Edges between distinct modes.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        self.edges.iter().copied().filter(|(a, b)| a != b).collect()
    }

    pub fn transition_names(&self) -> BTreeSet<(String, String)> {
        self.transitions()
            .into_iter()
            .map(|(a, b)| (self.modes[a].name.clone(), self.modes[b].name.clone()))
            .collect()
    }

    pub fn is_goal(&self, id: usize) -> bool {
        self.goals.contains(&id)
    }

    /// A goal the run may rest in; goals with only outgoing transitions must be
    /// left again (recurrence).
    pub fn is_absorbing_goal(&self, id: usize) -> bool {
        self.is_goal(id) && (self.declared_self_loops.contains(&id) || self.successors(id).next().is_none())
    }

    fn shortest_path_strategy(&self, distance: &[usize], allowed: impl Fn(usize, usize) -> bool) -> Vec<usize> {
        (0..self.modes.len())
            .map(|m| {
                if self.is_absorbing_goal(m) {
                    return m;
                }
                // Successor on a shortest path; ties go to the lowest id.
                self.successors(m)
                    .filter(|&s| allowed(m, s) && distance[s] != usize::MAX)
                    .min_by_key(|&s| (distance[s], s))
                    .unwrap_or(self.strategy.get(m).copied().unwrap_or(m))
            })
            .collect()
    }

    /// Re-plans using only transitions the system can command, e.g. those
    /// with a learned policy. Edges outside the set stay in the relation as
    /// reactive ones. Modes with no commandable route keep their plan.
    pub fn restrict_strategy(&self, commandable: impl Fn(usize, usize) -> bool) -> ModeAutomaton {
        let allowed = |a: usize, b: usize| self.has_edge(a, b) && commandable(a, b);
        let distance = goal_distances(self.modes.len(), &self.goals, allowed);
        let mut out = self.clone();
        out.strategy = self.shortest_path_strategy(&distance, allowed);
        for (m, d) in distance.into_iter().enumerate() {
            if d != usize::MAX {
                out.distance[m] = d;
            }
        }
        out
    }
}

/// Reads `G(σ -> (X σ1 | X σ2 ...))` into a successor list.
fn transition_clause(f: &Formula, modes: &[String]) -> Result<(usize, Vec<usize>), LtlError> {
    let bad = || LtlError::TemplateViolation(format!("sys_trans clause {f} is not of the form G(mode -> X mode | ...)"));
    let Formula::Always(body) = f else { return Err(bad()) };
    let Formula::Implies(lhs, rhs) = body.as_ref() else { return Err(bad()) };
    let Formula::Atom(src) = lhs.as_ref() else { return Err(bad()) };
    let src = modes.iter().position(|m| m == src).ok_or_else(bad)?;
    let mut succ = Vec::new();
    for d in rhs.disjuncts() {
        let Formula::Next(inner) = d else { return Err(bad()) };
        let Formula::Atom(dst) = inner.as_ref() else { return Err(bad()) };
        succ.push(modes.iter().position(|m| m == dst).ok_or_else(bad)?);
    }
    Ok((src, succ))
}

fn goal_modes(spec: &Gr1Spec) -> Result<BTreeSet<usize>, LtlError> {
    let bad = |f: &Formula| LtlError::TemplateViolation(format!("sys_live clause {f} is not G F over modes"));
    let live: Vec<&Formula> = spec.sys_live.iter().filter(|f| **f != Formula::True).collect();
    let [f] = live.as_slice() else {
        return Err(LtlError::TemplateViolation(format!(
            "expected exactly one G F goal in sys_live, found {}",
            live.len()
        )));
    };
    let Formula::Always(g) = f else { return Err(bad(f)) };
    let Formula::Eventually(body) = g.as_ref() else { return Err(bad(f)) };
    let mut out = BTreeSet::new();
    for d in body.disjuncts() {
        let Formula::Atom(name) = d else { return Err(bad(f)) };
        let id = spec.ap_sys.iter().position(|m| m == name).ok_or_else(|| bad(f))?;
        out.insert(id);
    }
    Ok(out)
}

fn init_mode(spec: &Gr1Spec) -> Result<Option<usize>, LtlError> {
    let mut init = None;
    for f in &spec.sys_init {
        for c in f.conjuncts() {
            if let Formula::Atom(name) = c {
                if let Some(id) = spec.ap_sys.iter().position(|m| m == name) {
                    if init.replace(id).is_some_and(|prev| prev != id) {
                        return Err(LtlError::TemplateViolation("sys_init names several modes".into()));
                    }
                }
            }
        }
    }
    Ok(init)
}

/// True when some `G(...)` clause of env_trans says exactly one mode holds.
fn has_exclusion_clause(spec: &Gr1Spec) -> bool {
    let n = spec.ap_sys.len();
    flatten_always(&spec.env_trans).iter().any(|c| {
        let Formula::Always(body) = c else { return false };
        let mut seen = BTreeSet::new();
        for d in body.disjuncts() {
            let mut positive = None;
            let mut negated = BTreeSet::new();
            for lit in d.conjuncts() {
                match lit {
                    Formula::Atom(a) => match spec.ap_sys.iter().position(|m| m == a) {
                        Some(i) if positive.is_none() => positive = Some(i),
                        _ => return false,
                    },
                    Formula::Not(inner) => match inner.as_ref() {
                        Formula::Atom(a) => match spec.ap_sys.iter().position(|m| m == a) {
                            Some(i) => {
                                negated.insert(i);
                            }
                            None => return false,
                        },
                        _ => return false,
                    },
                    _ => return false,
                }
            }
            let Some(p) = positive else { return false };
            if negated.len() != n - 1 || negated.contains(&p) {
                return false;
            }
            seen.insert(p);
        }
        seen.len() == n
    })
}

/// Transition counts to the nearest goal over edges accepted by `allowed`;
/// `usize::MAX` where no goal is reachable.
fn goal_distances(n: usize, goals: &BTreeSet<usize>, allowed: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let mut distance = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for &g in goals {
        distance[g] = 0;
        queue.push_back(g);
    }
    while let Some(m) = queue.pop_front() {
        for p in 0..n {
            if p != m && distance[p] == usize::MAX && allowed(p, m) {
                distance[p] = distance[m] + 1;
                queue.push_back(p);
            }
        }
    }
    distance
}

/// Synthesizes the reactive mode automaton for a specification in the
/// supported template.
pub fn synthesize(spec: &Gr1Spec) -> Result<ModeAutomaton, LtlError> {
    let modes = spec.modes();
    if modes.is_empty() {
        return Err(LtlError::TemplateViolation("no modes declared".into()));
    }
    let label_map = spec.label_map()?;
    if !has_exclusion_clause(spec) {
        return Err(LtlError::TemplateViolation(
            "env_trans lacks the exactly-one-mode clause".into(),
        ));
    }

    let mut edges: BTreeSet<(usize, usize)> = (0..modes.len()).map(|i| (i, i)).collect();
    let mut declared_self_loops = BTreeSet::new();
    let mut constrained = BTreeSet::new();
    for clause in flatten_always(&spec.sys_trans) {
        let (src, succ) = transition_clause(&clause, &spec.ap_sys)?;
        if !constrained.insert(src) {
            return Err(LtlError::TemplateViolation(format!(
                "mode {} has more than one transition clause",
                spec.ap_sys[src]
            )));
        }
        for dst in succ {
            if dst == src {
                declared_self_loops.insert(src);
            }
            edges.insert((src, dst));
        }
    }

    let goals = goal_modes(spec)?;
    let init = init_mode(spec)?;

    let distance = goal_distances(modes.len(), &goals, |a, b| edges.contains(&(a, b)));
    if let Some(stuck) = (0..modes.len()).find(|&m| distance[m] == usize::MAX) {
        return Err(LtlError::UnsynthesizableSpec(format!(
            "mode {} cannot reach a goal mode",
            modes[stuck].name
        )));
    }

    let mut automaton = ModeAutomaton {
        modes,
        edges,
        declared_self_loops,
        goals,
        init,
        strategy: Vec::new(),
        distance,
        label_map,
    };
    let strategy = automaton.shortest_path_strategy(&automaton.distance, |_, _| true);
    automaton.strategy = strategy;
    Ok(automaton)
}

/// The mode the automaton commands next from `current`.
pub fn next_mode(automaton: &ModeAutomaton, current: &ModeId) -> ModeId {
    automaton.modes[automaton.strategy[current.id]].clone()
}

/// One clause `G(σ -> (X σ | X σ' ...))` per mode, over the self-loop and the
/// observed successors in id order.
pub fn infer_sys_trans(observed: &BTreeSet<(ModeId, ModeId)>, modes: &[ModeId]) -> Vec<Formula> {
    modes
        .iter()
        .map(|m| {
            let mut succ: BTreeSet<&ModeId> = observed
                .iter()
                .filter(|(a, b)| a == m && b != m)
                .map(|(_, b)| b)
                .collect();
            succ.insert(m);
            let rhs = Formula::any_of(succ.into_iter().map(|s| Formula::next(Formula::atom(&s.name))))
                .expect("self-loop is always present");
            Formula::always(Formula::implies(Formula::atom(&m.name), rhs))
        })
        .collect()
}

/// Adds an observed transition to the spec's relation and re-synthesizes.
/// Returns `None` when the spec is declared complete or the edge is known.
pub fn extend_with_transition(
    spec: &Gr1Spec,
    automaton: &ModeAutomaton,
    from: &ModeId,
    to: &ModeId,
) -> Result<Option<(Gr1Spec, ModeAutomaton)>, LtlError> {
    if spec.complete || automaton.has_edge(from.id, to.id) {
        return Ok(None);
    }
    let mut observed: BTreeSet<(ModeId, ModeId)> = automaton
        .transitions()
        .into_iter()
        .map(|(a, b)| (automaton.modes[a].clone(), automaton.modes[b].clone()))
        .collect();
    observed.insert((from.clone(), to.clone()));
    let new_spec = spec.with_sys_trans(infer_sys_trans(&observed, &automaton.modes));
    let new_automaton = synthesize(&new_spec)?;
    Ok(Some((new_spec, new_automaton)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sys_trans: &str, live: &str) -> Gr1Spec {
        let text = format!(
            "aps_env: p, q\naps_sys: u, v, z\n\
             env_trans:\n  G(u <-> (!p & !q))\n  G(v <-> (p & !q))\n  G(z <-> (!p & q))\n\
             G((u & !v & !z) | (!u & v & !z) | (!u & !v & z))\n\
             sys_init:\n  u\nsys_trans:\n{sys_trans}\nsys_live:\n  {live}\n"
        );
        Gr1Spec::parse(&text).unwrap()
    }

    #[test]
    fn dead_end_mode_is_unsynthesizable() {
        let s = spec("  G(u -> (X u | X v | X z))\n  G(v -> X v)", "G F v");
        assert!(matches!(synthesize(&s), Err(LtlError::UnsynthesizableSpec(_))));
    }

    #[test]
    fn strategy_prefers_shortest_then_lowest_id() {
        let s = spec("  G(u -> (X z | X v))\n  G(z -> X v)\n  G(v -> X v)", "G F v");
        let a = synthesize(&s).unwrap();
        assert_eq!(a.strategy, vec![1, 1, 1]);
        assert_eq!(a.distance, vec![1, 0, 1]);
        assert_eq!(a.init, Some(0));
    }

    #[test]
    fn recurrent_goal_moves_on() {
        let s = spec("  G(u -> X v)\n  G(v -> X z)\n  G(z -> X u)", "G F v");
        let a = synthesize(&s).unwrap();
        assert!(!a.is_absorbing_goal(1));
        assert_eq!(next_mode(&a, a.mode(1)).name, "z");
    }

    #[test]
    fn missing_exclusion_is_template_violation() {
        let text = "aps_env: p\naps_sys: u, v\nenv_trans:\n  G(u <-> !p)\n  G(v <-> p)\n\
                    sys_trans:\n  G(u -> X v)\nsys_live:\n  G F v\n";
        let s = Gr1Spec::parse(text).unwrap();
        assert!(matches!(synthesize(&s), Err(LtlError::TemplateViolation(_))));
    }

    #[test]
    fn sys_trans_shape_checked() {
        let s = spec("  G(u -> v)", "G F v");
        assert!(matches!(synthesize(&s), Err(LtlError::TemplateViolation(_))));
    }

    #[test]
    fn infer_with_no_observations_gives_self_loops() {
        let modes = vec![ModeId::new(0, "u"), ModeId::new(1, "v")];
        let f = infer_sys_trans(&BTreeSet::new(), &modes);
        assert_eq!(f[0].to_string(), "G(u -> X u)");
        assert_eq!(f[1].to_string(), "G(v -> X v)");
    }
}
