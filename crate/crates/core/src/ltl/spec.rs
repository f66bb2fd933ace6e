use std::fmt::Write as _;

use super::formula::Formula;
use super::parser::parse_formula_at;
use super::LtlError;
use crate::types::{LabelMap, ModeId, SensorState};

/// GR(1) specification `(env_init ∧ env_trans ∧ env_live) → (sys_init ∧ sys_trans ∧ sys_live)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gr1Spec {
    pub ap_env: Vec<String>,
    pub ap_sys: Vec<String>,
    pub env_init: Vec<Formula>,
    pub env_trans: Vec<Formula>,
    pub env_live: Vec<Formula>,
    pub sys_init: Vec<Formula>,
    pub sys_trans: Vec<Formula>,
    pub sys_live: Vec<Formula>,
    /// When set, the transition relation is treated as final and is never
    /// extended from observed transitions.
    pub complete: bool,
}

const SECTIONS: [&str; 8] = [
    "aps_env", "aps_sys", "env_init", "env_trans", "env_live", "sys_init", "sys_trans", "sys_live",
];

impl Gr1Spec {
    pub fn parse(text: &str) -> Result<Self, LtlError> {
        let mut spec = Gr1Spec {
            ap_env: Vec::new(),
            ap_sys: Vec::new(),
            env_init: Vec::new(),
            env_trans: Vec::new(),
            env_live: Vec::new(),
            sys_init: Vec::new(),
            sys_trans: Vec::new(),
            sys_live: Vec::new(),
            complete: false,
        };
        let mut section: Option<&'static str> = None;
        let mut pending: Vec<(usize, &'static str, String)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some((head, rest)) = line.split_once(':') {
                let head = head.trim();
                if head == "complete" {
                    spec.complete = match rest.trim() {
                        "true" | "yes" => true,
                        "false" | "no" => false,
                        other => {
                            return Err(LtlError::Syntax {
                                line: line_no,
                                col: 1,
                                msg: format!("bad value for complete: {other:?}"),
                            })
                        }
                    };
                    section = None;
                    continue;
                }
                if let Some(name) = SECTIONS.into_iter().find(|s| *s == head) {
                    section = Some(name);
                    let rest = rest.trim();
                    if !rest.is_empty() {
                        pending.push((line_no, name, rest.to_string()));
                    }
                    continue;
                }
            }
            match section {
                Some(name) => pending.push((line_no, name, line.to_string())),
                None => {
                    return Err(LtlError::Syntax {
                        line: line_no,
                        col: 1,
                        msg: "content outside of a section".into(),
                    })
                }
            }
        }

        for (_, name, body) in &pending {
            match *name {
                "aps_env" => spec.ap_env.extend(split_names(body)),
                "aps_sys" => spec.ap_sys.extend(split_names(body)),
                _ => {}
            }
        }

        for (line_no, name, body) in pending {
            let target = match name {
                "aps_env" | "aps_sys" => continue,
                "env_init" => &mut spec.env_init,
                "env_trans" => &mut spec.env_trans,
                "env_live" => &mut spec.env_live,
                "sys_init" => &mut spec.sys_init,
                "sys_trans" => &mut spec.sys_trans,
                "sys_live" => &mut spec.sys_live,
                _ => unreachable!(),
            };
            let f = parse_formula_at(&body, line_no)?;
            for atom in f.atoms() {
                if !spec.ap_env.iter().any(|a| a == atom) && !spec.ap_sys.iter().any(|a| a == atom) {
                    return Err(LtlError::UndeclaredAtom {
                        line: line_no,
                        name: atom.to_string(),
                    });
                }
            }
            if name == "sys_live" && is_persistence(&f) {
                return Err(LtlError::PersistenceGoal { line: line_no });
            }
            target.push(f);
        }
        Ok(spec)
    }

    /// Renders the spec in the same text format [`Gr1Spec::parse`] reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "aps_env: {}", self.ap_env.join(", "));
        let _ = writeln!(out, "aps_sys: {}", self.ap_sys.join(", "));
        if self.complete {
            let _ = writeln!(out, "complete: true");
        }
        for (name, list) in [
            ("env_init", &self.env_init),
            ("env_trans", &self.env_trans),
            ("env_live", &self.env_live),
            ("sys_init", &self.sys_init),
            ("sys_trans", &self.sys_trans),
            ("sys_live", &self.sys_live),
        ] {
            let _ = writeln!(out, "{name}:");
            for f in list {
                let _ = writeln!(out, "  {f}");
            }
        }
        out
    }

    pub fn modes(&self) -> Vec<ModeId> {
        self.ap_sys
            .iter()
            .enumerate()
            .map(|(i, n)| ModeId::new(i, n.clone()))
            .collect()
    }

    pub fn mode(&self, name: &str) -> Option<ModeId> {
        self.ap_sys
            .iter()
            .position(|a| a == name)
            .map(|i| ModeId::new(i, name))
    }

    pub fn with_sys_trans(&self, sys_trans: Vec<Formula>) -> Self {
        Self {
            sys_trans,
            ..self.clone()
        }
    }

    /// Sensor valuation bound to each mode by `G(mode <-> literals)` clauses.
    /// Modes that look the same share one clause, `G((m1 | m2) <-> literals)`.
    pub fn label_map(&self) -> Result<LabelMap, LtlError> {
        let clauses = flatten_always(&self.env_trans);
        let mut found: Vec<Option<SensorState>> = vec![None; self.ap_sys.len()];
        for c in &clauses {
            let Formula::Always(body) = c else { continue };
            let Formula::Iff(lhs, rhs) = body.as_ref() else { continue };
            let mut ids = Vec::new();
            for d in lhs.disjuncts() {
                match d {
                    Formula::Atom(name) => match self.ap_sys.iter().position(|m| m == name) {
                        Some(i) => ids.push(i),
                        None => {
                            ids.clear();
                            break;
                        }
                    },
                    _ => {
                        ids.clear();
                        break;
                    }
                }
            }
            for i in ids {
                let mode = &self.ap_sys[i];
                if found[i].is_some() {
                    return Err(LtlError::TemplateViolation(format!(
                        "mode {mode} is bound to more than one sensor valuation"
                    )));
                }
                found[i] = Some(self.valuation_from_literals(rhs, mode)?);
            }
        }
        let mut entries: Vec<(ModeId, SensorState)> = Vec::new();
        for (mode, v) in self.modes().into_iter().zip(found) {
            let v = v.ok_or_else(|| {
                LtlError::TemplateViolation(format!(
                    "mode {} has no sensor binding in env_trans",
                    mode.name
                ))
            })?;
            entries.push((mode, v));
        }
        LabelMap::new(self.ap_env.clone(), entries).map_err(|e| LtlError::TemplateViolation(e.to_string()))
    }

    fn valuation_from_literals(&self, conj: &Formula, mode: &str) -> Result<SensorState, LtlError> {
        let mut bits: Vec<Option<bool>> = vec![None; self.ap_env.len()];
        for lit in conj.conjuncts() {
            let (name, value) = match lit {
                Formula::Atom(a) => (a, true),
                Formula::Not(inner) => match inner.as_ref() {
                    Formula::Atom(a) => (a, false),
                    _ => return Err(not_literal(mode)),
                },
                _ => return Err(not_literal(mode)),
            };
            let idx = self.ap_env.iter().position(|a| a == name).ok_or_else(|| {
                LtlError::TemplateViolation(format!(
                    "binding of {mode} mentions non-sensor proposition {name}"
                ))
            })?;
            if bits[idx].replace(value).is_some() {
                return Err(LtlError::TemplateViolation(format!(
                    "binding of {mode} mentions {name} twice"
                )));
            }
        }
        bits.into_iter()
            .enumerate()
            .map(|(i, b)| {
                b.ok_or_else(|| {
                    LtlError::TemplateViolation(format!(
                        "binding of {mode} leaves {} unspecified",
                        self.ap_env[i]
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(SensorState::new)
    }
}

fn not_literal(mode: &str) -> LtlError {
    LtlError::TemplateViolation(format!("binding of {mode} is not a conjunction of literals"))
}

fn split_names(body: &str) -> Vec<String> {
    body.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn is_persistence(f: &Formula) -> bool {
    match f {
        Formula::Eventually(inner) => matches!(inner.as_ref(), Formula::Always(_)),
        Formula::And(l, r) => is_persistence(l) || is_persistence(r),
        _ => false,
    }
}

/// Splits top-level conjunctions and distributes `G` over `∧`.
pub fn flatten_always(clauses: &[Formula]) -> Vec<Formula> {
    fn go(f: &Formula, under_g: bool, out: &mut Vec<Formula>) {
        match f {
            Formula::And(l, r) => {
                go(l, under_g, out);
                go(r, under_g, out);
            }
            Formula::Always(inner) => go(inner, true, out),
            other => out.push(if under_g {
                Formula::always(other.clone())
            } else {
                other.clone()
            }),
        }
    }
    let mut out = Vec::new();
    for c in clauses {
        go(c, false, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = "\
aps_env: p
aps_sys: u, v
env_init:
  !p
env_trans:
  G(u <-> !p)
  G(v <-> p)
  G((u & !v) | (!u & v))
env_live:
  True
sys_init:
  u
sys_trans:
  G(u -> (X u | X v))
  G(v -> X v)
sys_live:
  G F v
";

    #[test]
    fn parse_sections_and_label_map() {
        let spec = Gr1Spec::parse(MINI).unwrap();
        assert_eq!(spec.ap_env, vec!["p"]);
        assert_eq!(spec.ap_sys, vec!["u", "v"]);
        assert_eq!(spec.sys_trans.len(), 2);
        assert!(!spec.complete);
        let map = spec.label_map().unwrap();
        assert_eq!(map.label_mode(&"1".parse().unwrap()).unwrap().name, "v");
    }

    #[test]
    fn undeclared_atom_is_reported_with_line() {
        let text = MINI.replace("G(v -> X v)", "G(v -> X w)");
        match Gr1Spec::parse(&text) {
            Err(LtlError::UndeclaredAtom { line, name }) => {
                assert_eq!(name, "w");
                assert_eq!(line, 15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn persistence_goal_rejected() {
        let text = MINI.replace("G F v", "F G v");
        assert!(matches!(Gr1Spec::parse(&text), Err(LtlError::PersistenceGoal { .. })));
    }

    #[test]
    fn text_round_trip() {
        let spec = Gr1Spec::parse(MINI).unwrap();
        let again = Gr1Spec::parse(&spec.to_text()).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn flatten_distributes_always() {
        let f = super::super::parse_formula("G((a -> X a) & (b -> X b))").unwrap();
        let flat = flatten_always(&[f]);
        assert_eq!(flat.len(), 2);
        assert_eq!(flat[0].to_string(), "G(a -> X a)");
    }
}
