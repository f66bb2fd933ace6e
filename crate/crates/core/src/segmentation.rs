//! Sensor-driven segmentation of demonstrations and per-transition attractors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::types::{serde_vector, CoreError, Demonstration, LabelMap, ModeId, Sample, Vector};

/// (mode, next mode); `None` marks the end of a demonstration.
pub type TransitionKey = (ModeId, Option<ModeId>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub mode: ModeId,
    pub next_mode: Option<ModeId>,
    pub demo: usize,
    /// Index of the first sample within its demonstration.
    pub start: usize,
    pub samples: Vec<Sample>,
    #[serde(with = "serde_vector")]
    pub last_state: Vector,
}

impl Segment {
    pub fn key(&self) -> TransitionKey {
        (self.mode.clone(), self.next_mode.clone())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Splits every demonstration into maximal runs of one sensor valuation.
pub fn segment(demos: &[Demonstration], label_map: &LabelMap) -> Result<Vec<Segment>, CoreError> {
    let mut out = Vec::new();
    for (d, demo) in demos.iter().enumerate() {
        let mut first = out.len();
        let mut start = 0;
        for i in 1..=demo.samples.len() {
            let boundary = i == demo.samples.len() || demo.samples[i].alpha != demo.samples[start].alpha;
            if !boundary {
                continue;
            }
            let mode = label_map.label_mode(&demo.samples[start].alpha)?;
            let samples = demo.samples[start..i].to_vec();
            let last_state = samples.last().expect("nonempty run").x.clone();
            out.push(Segment {
                mode,
                next_mode: None,
                demo: d,
                start,
                samples,
                last_state,
            });
            start = i;
        }
        while first + 1 < out.len() {
            let next = out[first + 1].mode.clone();
            out[first].next_mode = Some(next);
            first += 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attractor {
    pub mode: ModeId,
    pub next_mode: Option<ModeId>,
    #[serde(with = "serde_vector")]
    pub x_star: Vector,
    /// Largest distance of a contributing last state from the mean.
    pub dispersion: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttractorSet {
    pub entries: Vec<Attractor>,
}

impl AttractorSet {
    pub fn get(&self, mode: &ModeId, next: Option<&ModeId>) -> Option<&Attractor> {
        self.entries
            .iter()
            .find(|a| &a.mode == mode && a.next_mode.as_ref() == next)
    }

    pub fn keys(&self) -> impl Iterator<Item = TransitionKey> + '_ {
        self.entries.iter().map(|a| (a.mode.clone(), a.next_mode.clone()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Dispersion above which an attractor is reported as suspicious.
pub const DISPERSION_WARN: f64 = 0.1;

/// Mean last state per (mode, next mode).
pub fn attractors(segments: &[Segment]) -> AttractorSet {
    let mut groups: BTreeMap<TransitionKey, Vec<&Vector>> = BTreeMap::new();
    for s in segments {
        groups.entry(s.key()).or_default().push(&s.last_state);
    }
    let entries = groups
        .into_iter()
        .map(|((mode, next_mode), lasts)| {
            let mut mean = Vector::zeros(lasts[0].len());
            for x in &lasts {
                mean += *x;
            }
            mean /= lasts.len() as f64;
            let dispersion = lasts.iter().map(|x| (*x - &mean).norm()).fold(0.0, f64::max);
            if dispersion > DISPERSION_WARN {
                warn!(mode = %mode.name, dispersion, "segment exits are widely spread");
            }
            Attractor {
                mode,
                next_mode,
                x_star: mean,
                dispersion,
                count: lasts.len(),
            }
        })
        .collect();
    AttractorSet { entries }
}

/// Translates each segment so its last state sits on its attractor.
pub fn shift_to_attractors(segments: &[Segment], set: &AttractorSet) -> Vec<Segment> {
    segments
        .iter()
        .map(|s| {
            let target = &set
                .get(&s.mode, s.next_mode.as_ref())
                .expect("attractor computed from these segments")
                .x_star;
            let delta = target - &s.last_state;
            let mut out = s.clone();
            for sample in &mut out.samples {
                sample.x += &delta;
            }
            out.last_state = target.clone();
            out
        })
        .collect()
}

/// Moves `x_star` a distance `eps` past the guard along `direction`, the
/// segment's final velocity. The guard is located by bisection on the ray
/// within `reach`. Returns `None` when the ray does not enter the next mode.
pub fn nudge_past_guard(
    x_star: &Vector,
    direction: &Vector,
    in_next: impl Fn(&Vector) -> bool,
    eps: f64,
    reach: f64,
) -> Option<Vector> {
    let norm = direction.norm();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    let dir = direction / norm;
    let at = |t: f64| x_star + &dir * t;
    if in_next(x_star) {
        return Some(x_star.clone());
    }
    // coarse march to bracket the crossing, then bisect
    let steps = 200;
    let mut prev = 0.0;
    for k in 1..=steps {
        let t = reach * k as f64 / steps as f64;
        if in_next(&at(t)) {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if in_next(&at(mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let candidate = at(hi + eps);
            return Some(if in_next(&candidate) { candidate } else { at(hi) });
        }
        prev = t;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SensorState;

    fn demo(labels: &[&str]) -> Demonstration {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, l)| Sample {
                x: Vector::from_vec(vec![i as f64, 0.0]),
                xdot: Vector::from_vec(vec![1.0, 0.0]),
                alpha: l.parse::<SensorState>().unwrap(),
            })
            .collect();
        Demonstration::new(samples, 0.1).unwrap()
    }

    fn map() -> LabelMap {
        LabelMap::new(
            vec!["p".into(), "q".into()],
            vec![
                (ModeId::new(0, "u"), "00".parse().unwrap()),
                (ModeId::new(1, "v"), "10".parse().unwrap()),
                (ModeId::new(2, "z"), "01".parse().unwrap()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_mode_demo_is_one_segment() {
        let segs = segment(&[demo(&["00", "00", "00"])], &map()).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].next_mode, None);
        assert_eq!(segs[0].last_state[0], 2.0);
    }

    #[test]
    fn alternating_demo_gives_one_segment_per_step() {
        let segs = segment(&[demo(&["00", "10", "00", "10"])], &map()).unwrap();
        assert_eq!(segs.len(), 4);
        assert_eq!(segs[0].next_mode.as_ref().unwrap().name, "v");
        assert_eq!(segs[1].next_mode.as_ref().unwrap().name, "u");
        assert!(segs[3].next_mode.is_none());
    }

    #[test]
    fn unknown_valuation_propagates() {
        assert!(matches!(
            segment(&[demo(&["00", "11"])], &map()),
            Err(CoreError::UnknownSensorState(_))
        ));
    }

    #[test]
    fn attractor_is_mean_of_last_states() {
        let mk = |x: f64, y: f64| Segment {
            mode: ModeId::new(0, "u"),
            next_mode: Some(ModeId::new(1, "v")),
            demo: 0,
            start: 0,
            samples: vec![],
            last_state: Vector::from_vec(vec![x, y]),
        };
        let set = attractors(&[mk(0.0, 0.0), mk(2.0, 2.0)]);
        assert_eq!(set.len(), 1);
        assert_eq!(set.entries[0].x_star, Vector::from_vec(vec![1.0, 1.0]));
        let one = attractors(&[mk(0.3, 0.7)]);
        assert_eq!(one.entries[0].x_star, Vector::from_vec(vec![0.3, 0.7]));
    }

    #[test]
    fn shifted_segments_end_on_attractor() {
        let segs = segment(&[demo(&["00", "00", "10"]), demo(&["00", "10", "10"])], &map()).unwrap();
        let set = attractors(&segs);
        let shifted = shift_to_attractors(&segs, &set);
        for s in &shifted {
            let a = set.get(&s.mode, s.next_mode.as_ref()).unwrap();
            assert_eq!(s.samples.last().unwrap().x, a.x_star);
        }
    }

    #[test]
    fn nudge_crosses_half_plane_guard() {
        let in_next = |x: &Vector| x[0] > 0.5;
        let x = Vector::from_vec(vec![0.49, 0.2]);
        let v = Vector::from_vec(vec![1.0, 0.0]);
        let n = nudge_past_guard(&x, &v, in_next, 1e-3, 0.1).unwrap();
        assert!(in_next(&n));
        assert!((n[0] - 0.501).abs() < 1e-9);
        // pointing away never reaches the next mode
        assert!(nudge_past_guard(&x, &(-v), in_next, 1e-3, 0.1).is_none());
    }
}
