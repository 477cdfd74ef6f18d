//! Wire frames. Every WebSocket text message carries exactly one record
//! `<len>:<json>`, where `<len>` is the decimal byte length of `<json>`.
//! The JSON object is tagged by its `type` field; unknown fields are ignored.

use mail_core::arena::{Arena, WallRect};
use mail_core::arena::{Channel, ObservationFrame, PickupKind, WorldState, CHANNELS, N_ACTIONS};
use mail_core::policy::ActionMask;
use serde::{Deserialize, Serialize};

/// Frame decoding and validation failures.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    #[error("record has no `<len>:` prefix")]
    MissingPrefix,
    #[error("record length prefix `{0}` is not a number")]
    BadLength(String),
    #[error("record declares {declared} bytes but carries {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("malformed frame: {0}")]
    Json(String),
    #[error("input mask has {found} keys, expected {expected}")]
    MaskLength { found: usize, expected: usize },
    #[error("input mask `{0}` may only contain 0 and 1")]
    MaskChars(String),
    #[error("unexpected frame from client: {0}")]
    Unexpected(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    /// Connected, waiting for `start`.
    Idle,
    Running,
    Paused,
    /// Episode finished; `start` or `reset` begins the next one.
    Ended,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hud {
    pub health: i32,
    pub ammo: i32,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub x: i32,
    pub y: i32,
    /// 0 = north, clockwise in 45 degree steps.
    pub facing: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PickupKindWire {
    Health,
    Ammo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PickupWire {
    pub x: i32,
    pub y: i32,
    pub kind: PickupKindWire,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiWire {
    pub x: i32,
    pub y: i32,
    pub radius: i32,
}

/// Full top-down snapshot for rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: i32,
    pub height: i32,
    pub walls: Vec<WallRect>,
    pub agent: Agent,
    pub enemies: Vec<Point>,
    pub pickups: Vec<PickupWire>,
    pub roi: RoiWire,
    pub projectiles: Vec<Point>,
}

/// Occupied-cell count per channel of the agent's egocentric view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgoSummary {
    pub view: usize,
    pub walls: usize,
    pub enemies: usize,
    pub health_pickups: usize,
    pub ammo_pickups: usize,
    pub roi: usize,
    pub projectiles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub tick: u64,
    pub episode: u32,
    pub status: EpisodeStatus,
    pub hud: Hud,
    pub grid: Grid,
    pub ego: EgoSummary,
    /// Episodes recorded so far in this session.
    pub saved_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFrame {
    /// One character per action, `0` or `1`, in action order.
    pub mask: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Start,
    Pause,
    Reset,
    Save,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlFrame {
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Frame {
    State(StateFrame),
    Input(InputFrame),
    Control(ControlFrame),
    Error(ErrorFrame),
}

impl Frame {
    pub fn error(message: impl Into<String>) -> Self {
        Frame::Error(ErrorFrame {
            message: message.into(),
        })
    }
}

pub fn encode(frame: &Frame) -> String {
    let json = serde_json::to_string(frame).expect("frames always serialise");
    format!("{}:{}", json.len(), json)
}

pub fn decode(record: &str) -> Result<Frame, ProtocolError> {
    let (len, json) = record.split_once(':').ok_or(ProtocolError::MissingPrefix)?;
    let declared: usize = len
        .trim()
        .parse()
        .map_err(|_| ProtocolError::BadLength(len.to_string()))?;
    if declared != json.len() {
        return Err(ProtocolError::LengthMismatch {
            declared,
            actual: json.len(),
        });
    }
    serde_json::from_str(json).map_err(|e| ProtocolError::Json(e.to_string()))
}

impl InputFrame {
    pub fn from_mask(mask: &ActionMask) -> Self {
        Self {
            mask: mask.to_string(),
        }
    }

    /// Validated key-state mask.
    pub fn to_mask(&self) -> Result<ActionMask, ProtocolError> {
        if self.mask.len() != N_ACTIONS {
            return Err(ProtocolError::MaskLength {
                found: self.mask.chars().count(),
                expected: N_ACTIONS,
            });
        }
        self.mask
            .parse()
            .map_err(|_| ProtocolError::MaskChars(self.mask.clone()))
    }
}

/// Snapshot of `state` and its observation for the client.
pub fn state_frame(
    arena: &Arena,
    state: &WorldState,
    obs: &ObservationFrame,
    tick: u64,
    episode: u32,
    status: EpisodeStatus,
    saved_episodes: usize,
) -> StateFrame {
    debug_assert_eq!(obs.len(), CHANNELS * obs.view * obs.view);
    let cfg = arena.config();
    let pt = |c: mail_core::arena::Cell| Point { x: c.x, y: c.y };
    StateFrame {
        tick,
        episode,
        status,
        hud: Hud {
            health: state.health,
            ammo: state.ammo,
            score: state.score,
        },
        grid: Grid {
            width: cfg.width,
            height: cfg.height,
            walls: cfg.walls.clone(),
            agent: Agent {
                x: state.agent.x,
                y: state.agent.y,
                facing: state.facing,
            },
            enemies: state.enemies.iter().map(|e| pt(e.pos)).collect(),
            pickups: state
                .pickups
                .iter()
                .map(|p| PickupWire {
                    x: p.pos.x,
                    y: p.pos.y,
                    kind: match p.kind {
                        PickupKind::Health => PickupKindWire::Health,
                        PickupKind::Ammo => PickupKindWire::Ammo,
                    },
                })
                .collect(),
            roi: RoiWire {
                x: state.roi.center.x,
                y: state.roi.center.y,
                radius: state.roi.radius,
            },
            projectiles: state.projectiles.iter().map(|p| pt(p.pos)).collect(),
        },
        ego: EgoSummary {
            view: obs.view,
            walls: obs.count(Channel::Walls),
            enemies: obs.count(Channel::Enemies),
            health_pickups: obs.count(Channel::HealthPickups),
            ammo_pickups: obs.count(Channel::AmmoPickups),
            roi: obs.count(Channel::Roi),
            projectiles: obs.count(Channel::Projectiles),
        },
        saved_episodes,
    }
}
