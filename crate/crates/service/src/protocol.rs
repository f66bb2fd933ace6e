//! JSON messages exchanged over the session socket.
//!
//! Client to server: `create`, `command`, `subscribe` and `close`, each with
//! a client-chosen `seq` that the matching `ack` or `error` echoes. Server to
//! client: `snapshot` (seq is the session tick), `ack` and `error`. Unknown
//! fields are rejected everywhere.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tli_core::executor::Verdict;
use tli_core::types::ModeId;

use crate::session::SessionConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Create {
        seq: u64,
        scene: String,
        spec: String,
        variant: String,
        #[serde(default)]
        config: SessionConfig,
    },
    Command {
        seq: u64,
        id: u64,
        cmd: String,
        #[serde(default)]
        args: Value,
    },
    Subscribe {
        seq: u64,
        id: u64,
    },
    Close {
        seq: u64,
        id: u64,
    },
}

impl ClientMessage {
    pub fn seq(&self) -> u64 {
        match self {
            Self::Create { seq, .. } | Self::Command { seq, .. } | Self::Subscribe { seq, .. } | Self::Close { seq, .. } => *seq,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbArgs {
    /// Displacement added to the current state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    /// Absolute state to jump to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetArgs {
    /// Seed for the new start state; the session seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Drop the cuts learned so far.
    #[serde(default)]
    pub forget: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Perturb {
    Delta(Vec<f64>),
    Target(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Command {
    Perturb(Perturb),
    Pause,
    Resume,
    Reset(ResetArgs),
    ToggleModulation,
    ToggleCutting,
}

impl Command {
    pub const NAMES: [&'static str; 6] = ["perturb", "pause", "resume", "reset", "toggle_modulation", "toggle_cutting"];

    /// Builds a command from its wire name and arguments.
    pub fn parse(cmd: &str, args: Value) -> Result<Self, String> {
        let none = |c: Command| match &args {
            Value::Null => Ok(c),
            Value::Object(m) if m.is_empty() => Ok(c),
            _ => Err(format!("{cmd} takes no arguments")),
        };
        match cmd {
            "perturb" => {
                let a: PerturbArgs = serde_json::from_value(args.clone()).map_err(|e| e.to_string())?;
                match (a.delta, a.target) {
                    (Some(d), None) => Ok(Self::Perturb(Perturb::Delta(d))),
                    (None, Some(t)) => Ok(Self::Perturb(Perturb::Target(t))),
                    _ => Err("perturb needs exactly one of delta and target".into()),
                }
            }
            "reset" => {
                let a = if args.is_null() { ResetArgs::default() } else { serde_json::from_value(args).map_err(|e| e.to_string())? };
                Ok(Self::Reset(a))
            }
            "pause" => none(Self::Pause),
            "resume" => none(Self::Resume),
            "toggle_modulation" => none(Self::ToggleModulation),
            "toggle_cutting" => none(Self::ToggleCutting),
            other => Err(format!("unknown command {other:?}")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Perturb(_) => "perturb",
            Self::Pause => "pause",
            Self::Resume => "resume",
            Self::Reset(_) => "reset",
            Self::ToggleModulation => "toggle_modulation",
            Self::ToggleCutting => "toggle_cutting",
        }
    }

    /// Wire arguments, the inverse of `parse`.
    pub fn args(&self) -> Value {
        match self {
            Self::Perturb(Perturb::Delta(d)) => serde_json::json!({ "delta": d }),
            Self::Perturb(Perturb::Target(t)) => serde_json::json!({ "target": t }),
            Self::Reset(a) => serde_json::to_value(a).expect("reset args serialize"),
            _ => Value::Null,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerMessage {
    Snapshot { seq: u64, payload: Box<Snapshot> },
    Ack { seq: u64, payload: Ack },
    Error { seq: Option<u64>, payload: ErrorPayload },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ack {
    pub id: u64,
    pub action: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    BadMessage,
    UnknownAsset,
    UnknownSession,
    InvalidCommand,
    Setup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
}

/// Immutable view of a session after a tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub session: u64,
    pub tick: u64,
    /// Simulation steps taken since the last reset.
    pub step: usize,
    pub x: Vec<f64>,
    /// Sensor valuation at `x`, first proposition first.
    pub alpha: String,
    pub mode: ModeId,
    pub commanded: ModeId,
    pub automaton: AutomatonView,
    pub cuts: Vec<CutGroup>,
    /// Recent states, oldest first; the last entry is `x`.
    pub trajectory: Vec<TrajectoryPoint>,
    pub field: Option<FieldGrid>,
    pub verdict: Option<Verdict>,
    pub replans: usize,
    pub paused: bool,
    pub modulation: bool,
    pub cutting: bool,
}

impl Snapshot {
    pub fn cut_count(&self) -> usize {
        self.cuts.iter().map(|g| g.cuts.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutomatonView {
    pub modes: Vec<ModeId>,
    /// Allowed transitions by mode id, self-loops included.
    pub edges: Vec<(usize, usize)>,
    pub goals: Vec<usize>,
    pub active: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutGroup {
    pub mode: String,
    /// Mode the policy drives toward; none for a goal's own policy.
    pub next: Option<String>,
    pub cuts: Vec<CutView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutView {
    pub w: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryPoint {
    pub x: Vec<f64>,
    pub perturbed: bool,
}

/// Velocity samples of the active policy on a regular grid over the
/// workspace, row-major from `lo`. `modulated` applies the learned cuts
/// whether or not modulation is switched on; `probes` sample each cut's
/// anchor point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldGrid {
    pub size: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub raw: Vec<[f64; 2]>,
    pub modulated: Vec<[f64; 2]>,
    pub probes: Vec<Probe>,
}

impl FieldGrid {
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        let t = |k: usize, d: usize| {
            if self.size < 2 {
                0.5 * (self.lo[d] + self.hi[d])
            } else {
                self.lo[d] + (self.hi[d] - self.lo[d]) * k as f64 / (self.size - 1) as f64
            }
        };
        [t(j, 0), t(i, 1)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub x: [f64; 2],
    pub w: [f64; 2],
    pub raw: [f64; 2],
    pub modulated: [f64; 2],
}

/// Scenes, specs and variants a session can be created from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetListing {
    pub scenes: Vec<String>,
    pub specs: Vec<SpecEntry>,
    pub variants: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecEntry {
    pub name: String,
    pub scene: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn client_messages_parse_and_reject_unknown_fields() {
        let m: ClientMessage =
            serde_json::from_value(json!({"type": "command", "seq": 3, "id": 1, "cmd": "pause"})).unwrap();
        assert_eq!(m, ClientMessage::Command { seq: 3, id: 1, cmd: "pause".into(), args: Value::Null });
        let m: ClientMessage = serde_json::from_value(
            json!({"type": "create", "seq": 1, "scene": "scooping", "spec": "scooping_full", "variant": "DS+mod"}),
        )
        .unwrap();
        assert_eq!(m.seq(), 1);
        assert!(serde_json::from_value::<ClientMessage>(json!({"type": "close", "seq": 1, "id": 2, "extra": 0})).is_err());
        assert!(serde_json::from_value::<ClientMessage>(json!({"type": "shout", "seq": 1})).is_err());
        assert!(serde_json::from_value::<ClientMessage>(json!({"type": "close", "id": 2})).is_err());
    }

    #[test]
    fn commands_round_trip() {
        let cmds = [
            Command::Perturb(Perturb::Delta(vec![0.1, 0.0])),
            Command::Perturb(Perturb::Target(vec![0.2, 0.5])),
            Command::Pause,
            Command::Resume,
            Command::Reset(ResetArgs { seed: Some(4), forget: true }),
            Command::ToggleModulation,
            Command::ToggleCutting,
        ];
        for c in cmds {
            assert_eq!(Command::parse(c.name(), c.args()).unwrap(), c);
        }
        assert_eq!(Command::parse("reset", Value::Null).unwrap(), Command::Reset(ResetArgs::default()));
    }

    #[test]
    fn bad_command_arguments_are_rejected() {
        assert!(Command::parse("perturb", json!({})).is_err());
        assert!(Command::parse("perturb", json!({"delta": [0.1, 0.0], "target": [0.0, 0.0]})).is_err());
        assert!(Command::parse("perturb", json!({"delta": [0.1, 0.0], "speed": 1})).is_err());
        assert!(Command::parse("pause", json!({"now": true})).is_err());
        assert!(Command::parse("reset", json!({"seed": 1, "hard": true})).is_err());
        assert!(Command::parse("jump", Value::Null).is_err());
    }

    #[test]
    fn server_messages_are_tagged() {
        let m = ServerMessage::Error {
            seq: None,
            payload: ErrorPayload { code: ErrorCode::UnknownSession, message: "no session 9".into() },
        };
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v, json!({"type": "error", "seq": null, "payload": {"code": "UnknownSession", "message": "no session 9"}}));
        assert_eq!(serde_json::from_value::<ServerMessage>(v).unwrap(), m);
        let ack = json!({"type": "ack", "seq": 2, "payload": {"id": 1, "action": "pause", "late": true}});
        assert!(serde_json::from_value::<ServerMessage>(ack).is_err());
    }

    #[test]
    fn grid_points_span_the_box() {
        let g = FieldGrid { size: 3, lo: [0.0, 0.0], hi: [1.0, 2.0], raw: vec![], modulated: vec![], probes: vec![] };
        assert_eq!(g.point(0, 0), [0.0, 0.0]);
        assert_eq!(g.point(2, 1), [0.5, 2.0]);
    }
}
