//! Shared domain vocabulary: states, sensor valuations, modes, demonstrations
//! and execution traces.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("no mode is labelled by sensor state {0}")]
    UnknownSensorState(String),
    #[error("sensor state {valuation} labels several modes: {modes:?}")]
    AmbiguousSensorState { valuation: String, modes: Vec<String> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state contains a non-finite coordinate")]
    NonFinite,
    #[error("demonstration has no samples")]
    EmptyDemonstration,
    #[error("sampling period must be positive, got {0}")]
    BadPeriod(f64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Sensor valuation α, one bit per environment proposition in declared order.
///
/// Text form lists bits in declaration order, first proposition first
/// (most significant), e.g. `"010"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SensorState(Vec<bool>);

impl SensorState {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![false; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }
}

impl fmt::Display for SensorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for SensorState {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(CoreError::Parse {
                    line: 0,
                    msg: format!("bad sensor bit {other:?}"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(SensorState)
    }
}

impl Serialize for SensorState {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SensorState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Continuous robot state paired with the sensor valuation observed there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    #[serde(with = "serde_vector")]
    pub x: Vector,
    pub alpha: SensorState,
}

impl SystemState {
    pub fn new(x: Vector, alpha: SensorState) -> Result<Self, CoreError> {
        if x.is_empty() {
            return Err(CoreError::DimensionMismatch { expected: 1, got: 0 });
        }
        if alpha.is_empty() {
            return Err(CoreError::DimensionMismatch { expected: 1, got: 0 });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite);
        }
        Ok(Self { x, alpha })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeId {
    pub id: usize,
    pub name: String,
}

impl ModeId {
    pub fn new(id: usize, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
        }
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// The labelling function L: sensor valuation to mode.
///
/// Several modes may share a valuation (modes that look the same but are
/// distinguished by task progress); [`LabelMap::label_mode`] rejects those and
/// callers resolve them through [`LabelMap::candidates`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    aps: Vec<String>,
    entries: Vec<(ModeId, SensorState)>,
}

impl LabelMap {
    pub fn new(aps: Vec<String>, entries: Vec<(ModeId, SensorState)>) -> Result<Self, CoreError> {
        for (_, v) in &entries {
            if v.len() != aps.len() {
                return Err(CoreError::DimensionMismatch {
                    expected: aps.len(),
                    got: v.len(),
                });
            }
        }
        Ok(Self { aps, entries })
    }

    pub fn aps(&self) -> &[String] {
        &self.aps
    }

    pub fn modes(&self) -> impl Iterator<Item = &ModeId> {
        self.entries.iter().map(|(m, _)| m)
    }

    pub fn entries(&self) -> &[(ModeId, SensorState)] {
        &self.entries
    }

    pub fn valuation_of(&self, mode: &str) -> Option<&SensorState> {
        self.entries
            .iter()
            .find(|(m, _)| m.name == mode)
            .map(|(_, v)| v)
    }

    pub fn mode_named(&self, name: &str) -> Option<&ModeId> {
        self.modes().find(|m| m.name == name)
    }

    pub fn candidates(&self, alpha: &SensorState) -> Vec<&ModeId> {
        self.entries
            .iter()
            .filter(|(_, v)| v == alpha)
            .map(|(m, _)| m)
            .collect()
    }

    pub fn label_mode(&self, alpha: &SensorState) -> Result<ModeId, CoreError> {
        if alpha.len() != self.aps.len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.aps.len(),
                got: alpha.len(),
            });
        }
        match self.candidates(alpha).as_slice() {
            [] => Err(CoreError::UnknownSensorState(alpha.to_string())),
            [one] => Ok((*one).clone()),
            many => Err(CoreError::AmbiguousSensorState {
                valuation: alpha.to_string(),
                modes: many.iter().map(|m| m.name.clone()).collect(),
            }),
        }
    }
}

pub fn label_mode(alpha: &SensorState, map: &LabelMap) -> Result<ModeId, CoreError> {
    map.label_mode(alpha)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(with = "serde_vector")]
    pub x: Vector,
    #[serde(with = "serde_vector")]
    pub xdot: Vector,
    pub alpha: SensorState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub samples: Vec<Sample>,
    pub dt: f64,
}

impl Demonstration {
    pub fn new(samples: Vec<Sample>, dt: f64) -> Result<Self, CoreError> {
        if !(dt > 0.0) {
            return Err(CoreError::BadPeriod(dt));
        }
        let first = samples.first().ok_or(CoreError::EmptyDemonstration)?;
        let (n, m) = (first.x.len(), first.alpha.len());
        for s in &samples {
            if s.x.len() != n {
                return Err(CoreError::DimensionMismatch { expected: n, got: s.x.len() });
            }
            if s.xdot.len() != n {
                return Err(CoreError::DimensionMismatch { expected: n, got: s.xdot.len() });
            }
            if s.alpha.len() != m {
                return Err(CoreError::DimensionMismatch { expected: m, got: s.alpha.len() });
            }
            if s.x.iter().chain(s.xdot.iter()).any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite);
            }
        }
        Ok(Self { samples, dt })
    }

    pub fn dim(&self) -> usize {
        self.samples[0].x.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One record per line: `t, x_1..x_n, xdot_1..xdot_n, alpha_1..alpha_m`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.samples.iter().enumerate() {
            let mut fields = vec![format!("{}", i as f64 * self.dt)];
            fields.extend(s.x.iter().map(|v| v.to_string()));
            fields.extend(s.xdot.iter().map(|v| v.to_string()));
            fields.extend(s.alpha.bits().iter().map(|&b| if b { "1" } else { "0" }.to_string()));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses one or more demonstrations of state dimension `n`; blank lines
    /// separate demonstrations. The period is taken from the first time step.
    pub fn parse_csv(text: &str, n: usize) -> Result<Vec<Demonstration>, CoreError> {
        let mut demos = Vec::new();
        let mut times: Vec<f64> = Vec::new();
        let mut samples: Vec<Sample> = Vec::new();

        let flush = |times: &mut Vec<f64>, samples: &mut Vec<Sample>, demos: &mut Vec<Demonstration>| {
            if samples.is_empty() {
                return Ok(());
            }
            let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
            demos.push(Demonstration::new(std::mem::take(samples), dt)?);
            times.clear();
            Ok::<(), CoreError>(())
        };

        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.starts_with('#') {
                continue;
            }
            if line.is_empty() {
                flush(&mut times, &mut samples, &mut demos)?;
                continue;
            }
            let parse_err = |msg: String| CoreError::Parse { line: lineno + 1, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 1 + 2 * n + 1 {
                return Err(parse_err(format!(
                    "expected at least {} fields, found {}",
                    2 * n + 2,
                    fields.len()
                )));
            }
            let nums = fields[..1 + 2 * n]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("{f:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let bits = fields[1 + 2 * n..]
                .iter()
                .map(|f| match *f {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(parse_err(format!("bad sensor bit {other:?}"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            times.push(nums[0]);
            samples.push(Sample {
                x: Vector::from_column_slice(&nums[1..1 + n]),
                xdot: Vector::from_column_slice(&nums[1 + n..1 + 2 * n]),
                alpha: SensorState::new(bits),
            });
        }
        flush(&mut times, &mut samples, &mut demos)?;
        Ok(demos)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    None,
    PlannedTransition,
    UnexpectedExit,
    Perturbation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    #[serde(with = "serde_vector")]
    pub x: Vector,
    pub alpha: SensorState,
    pub mode: ModeId,
    pub commanded_transition: Option<(ModeId, ModeId)>,
    pub event: TraceEvent,
    /// Set when an external displacement was applied right before this sample;
    /// a transition event takes precedence over `Perturbation` in `event`.
    #[serde(default)]
    pub perturbed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
}

impl Trace {
    pub fn push(&mut self, step: TraceStep) {
        self.steps.push(step);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Every mode change coincides with a transition event.
    pub fn is_well_formed(&self) -> bool {
        self.steps.windows(2).all(|w| {
            w[0].mode == w[1].mode
                || matches!(
                    w[1].event,
                    TraceEvent::PlannedTransition | TraceEvent::UnexpectedExit
                )
        })
    }

    /// Mode sequence with consecutive repeats removed.
    pub fn mode_sequence(&self) -> Vec<ModeId> {
        let mut seq: Vec<ModeId> = Vec::new();
        for s in &self.steps {
            if seq.last() != Some(&s.mode) {
                seq.push(s.mode.clone());
            }
        }
        seq
    }

    pub fn mode_names(&self) -> Vec<String> {
        self.mode_sequence().into_iter().map(|m| m.name).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardRecord {
    pub from_mode: ModeId,
    pub to_mode: ModeId,
    #[serde(with = "serde_vectors")]
    pub crossing_states: Vec<Vector>,
}

/// Axis-aligned workspace box; the unit box unless a scene says otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Workspace {
    pub fn unit(n: usize) -> Self {
        Self {
            lo: vec![0.0; n],
            hi: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Characteristic length used to express noise levels as a percentage.
    pub fn size(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h - l)
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn clip(&self, x: &Vector) -> Vector {
        Vector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .map(|(v, (l, h))| v.clamp(*l, *h)),
        )
    }
}

/// Serializes a `DVector<f64>` as a flat JSON array.
pub mod serde_vector {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        Ok(Vector::from_vec(data))
    }
}

pub mod serde_vectors {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(vs: &[Vector], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(vs.iter().map(|v| v.iter().copied().collect::<Vec<f64>>()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vector>, D::Error> {
        let data = Vec::<Vec<f64>>::deserialize(d)?;
        Ok(data.into_iter().map(Vector::from_vec).collect())
    }
}

/// Serializes a `DMatrix<f64>` row by row.
pub mod serde_matrix {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(
            m.row_iter()
                .map(|r| r.iter().copied().collect::<Vec<f64>>()),
        )
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(Matrix::from_row_iterator(
            nrows,
            ncols,
            rows.into_iter().flatten(),
        ))
    }
}

pub mod serde_matrices {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrapped(#[serde(with = "super::serde_matrix")] Matrix);

    pub fn serialize<S: Serializer>(ms: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(ms.iter().map(|m| Wrapped(m.clone())))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
        Ok(Vec::<Wrapped>::deserialize(d)?
            .into_iter()
            .map(|w| w.0)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scooping_map() -> LabelMap {
        let aps = vec!["r".to_string(), "s".to_string(), "t".to_string()];
        let entries = vec![
            (ModeId::new(0, "a"), "000".parse().unwrap()),
            (ModeId::new(1, "b"), "100".parse().unwrap()),
            (ModeId::new(2, "c"), "010".parse().unwrap()),
            (ModeId::new(3, "d"), "001".parse().unwrap()),
        ];
        LabelMap::new(aps, entries).unwrap()
    }

    #[test]
    fn label_scooping_valuations() {
        let map = scooping_map();
        assert_eq!(label_mode(&"000".parse().unwrap(), &map).unwrap().name, "a");
        assert_eq!(label_mode(&"010".parse().unwrap(), &map).unwrap().name, "c");
        assert!(matches!(
            label_mode(&"111".parse().unwrap(), &map),
            Err(CoreError::UnknownSensorState(_))
        ));
    }

    #[test]
    fn label_rejects_wrong_width_and_duplicates() {
        let map = scooping_map();
        assert!(matches!(
            map.label_mode(&"00".parse().unwrap()),
            Err(CoreError::DimensionMismatch { .. })
        ));
        let dup = LabelMap::new(
            vec!["p".into()],
            vec![
                (ModeId::new(0, "w1"), "0".parse().unwrap()),
                (ModeId::new(1, "w2"), "0".parse().unwrap()),
            ],
        )
        .unwrap();
        assert!(matches!(
            dup.label_mode(&"0".parse().unwrap()),
            Err(CoreError::AmbiguousSensorState { .. })
        ));
        assert_eq!(dup.candidates(&"0".parse().unwrap()).len(), 2);
    }

    #[test]
    fn sensor_state_text_is_msb_first() {
        let s = SensorState::new(vec![true, false, false]);
        assert_eq!(s.to_string(), "100");
        assert_eq!(serde_json::to_string(&s).unwrap(), "\"100\"");
    }

    #[test]
    fn demonstration_csv_round_trip() {
        let samples = (0..4)
            .map(|i| Sample {
                x: Vector::from_vec(vec![0.1 * i as f64, 0.3]),
                xdot: Vector::from_vec(vec![1.0, -0.25]),
                alpha: SensorState::new(vec![i >= 2, false]),
            })
            .collect();
        let demo = Demonstration::new(samples, 0.01).unwrap();
        let text = format!("{}\n{}", demo.to_csv(), demo.to_csv());
        let back = Demonstration::parse_csv(&text, 2).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].samples, demo.samples);
        assert!((back[0].dt - 0.01).abs() < 1e-12);
    }

    #[test]
    fn demonstration_rejects_bad_input() {
        assert!(matches!(Demonstration::new(vec![], 0.1), Err(CoreError::EmptyDemonstration)));
        assert!(Demonstration::parse_csv("0,1,2,3", 2).is_err());
        assert!(Demonstration::parse_csv("0,1,2,3,4,2", 2).is_err());
    }

    #[test]
    fn system_state_requires_finite() {
        let r = SystemState::new(Vector::from_vec(vec![f64::NAN]), SensorState::zeros(1));
        assert_eq!(r, Err(CoreError::NonFinite));
    }

    #[test]
    fn trace_well_formedness() {
        let step = |mode: &str, id, event| TraceStep {
            x: Vector::zeros(2),
            alpha: SensorState::zeros(1),
            mode: ModeId::new(id, mode),
            commanded_transition: None,
            event,
            perturbed: false,
        };
        let mut t = Trace::default();
        t.push(step("a", 0, TraceEvent::None));
        t.push(step("a", 0, TraceEvent::Perturbation));
        t.push(step("b", 1, TraceEvent::PlannedTransition));
        assert!(t.is_well_formed());
        assert_eq!(t.mode_names(), vec!["a", "b"]);
        t.push(step("a", 0, TraceEvent::Perturbation));
        assert!(!t.is_well_formed());
    }

    #[test]
    fn matrix_serde_is_row_major() {
        #[derive(Serialize, Deserialize)]
        struct W(#[serde(with = "serde_matrix")] Matrix);
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let js = serde_json::to_string(&W(m.clone())).unwrap();
        assert_eq!(js, "[[1.0,2.0],[3.0,4.0]]");
        let back: W = serde_json::from_str(&js).unwrap();
        assert_eq!(back.0, m);
    }
}
