//! The walkthrough session: one avatar in one plan, driven by protocol
//! messages, with an optional recording buffer.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ess_core::env::dataset::write_trajectory;
use ess_core::env::trajectory::segment_is_free;
use ess_core::env::{default_palette, lighting, render, FloorPlan, LightingCondition, LightingId, Trajectory, TrajectoryPoint};
use ess_core::spatial::Pose;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    Back,
    TurnLeft,
    TurnRight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Input { action: Action },
    Recording { on: bool },
    Save { path: String },
    Lighting { id: LightingId },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl From<&Pose> for WirePose {
    fn from(p: &Pose) -> Self {
        WirePose {
            x: p.x(),
            y: p.y(),
            z: p.z(),
            yaw: p.yaw(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame {
        step: u64,
        pose: WirePose,
        lighting: LightingId,
        image_b64: String,
        recording: bool,
        buffered: usize,
    },
    Saved {
        path: String,
        points: usize,
    },
    Error {
        msg: String,
    },
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub resolution: usize,
    pub step_length: f64,
    pub turn_increment: f64,
    pub lighting: LightingId,
}

#[derive(Clone, Debug)]
pub struct SessionState {
    plan: FloorPlan,
    palette: Vec<LightingCondition>,
    config: SessionConfig,
    pose: Pose,
    step: u64,
    lighting: LightingId,
    recording: bool,
    buffer: Vec<TrajectoryPoint>,
}

/// Free cell nearest the centre of room 0, facing +x.
pub fn start_pose(plan: &FloorPlan) -> Result<Pose, CliError> {
    let room = plan
        .rooms
        .first()
        .ok_or_else(|| CliError::Usage("plan has no rooms".into()))?;
    let c = room.bounds.center();
    let dist = |&(x, y): &(usize, usize)| {
        let (cx, cy) = plan.cell_center(x, y);
        (cx - c[0]).powi(2) + (cy - c[1]).powi(2)
    };
    let cell = plan
        .free_cells()
        .into_iter()
        .filter(|&(x, y)| {
            let (cx, cy) = plan.cell_center(x, y);
            plan.room_index_at([cx, cy, plan.eye_height]) == Some(0)
        })
        .min_by(|a, b| dist(a).total_cmp(&dist(b)))
        .ok_or_else(|| CliError::Usage("room 0 has no free cell".into()))?;
    let (x, y) = plan.cell_center(cell.0, cell.1);
    Ok(Pose::new(x, y, plan.eye_height, 0.0)?)
}

impl SessionState {
    pub fn new(plan: FloorPlan, config: SessionConfig) -> Result<Self, CliError> {
        plan.validate()?;
        let palette = default_palette();
        lighting::find(&palette, config.lighting)?;
        if config.resolution == 0 || !(config.step_length > 0.0) || !(config.turn_increment > 0.0) {
            return Err(CliError::Usage("serve resolution, step length and turn increment must be positive".into()));
        }
        Ok(SessionState {
            pose: start_pose(&plan)?,
            lighting: config.lighting,
            plan,
            palette,
            config,
            step: 0,
            recording: false,
            buffer: Vec::new(),
        })
    }

    pub fn plan(&self) -> &FloorPlan {
        &self.plan
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    pub fn buffer(&self) -> &[TrajectoryPoint] {
        &self.buffer
    }

    fn record(&mut self) {
        if self.buffer.last().is_none_or(|p| p.step < self.step) {
            self.buffer.push(TrajectoryPoint {
                step: self.step,
                pose: self.pose,
            });
        }
    }

    /// Applies one action; a blocked move leaves the pose unchanged but
    /// still advances the step.
    pub fn apply(&mut self, action: Action) {
        let inc = self.config.turn_increment;
        match action {
            Action::TurnLeft => self.pose = self.pose.with_yaw(self.pose.yaw() + inc),
            Action::TurnRight => self.pose = self.pose.with_yaw(self.pose.yaw() - inc),
            Action::Forward | Action::Back => {
                let sign = if action == Action::Forward { 1.0 } else { -1.0 };
                let (hx, hy) = self.pose.heading();
                let d = sign * self.config.step_length;
                let to = (self.pose.x() + hx * d, self.pose.y() + hy * d);
                if segment_is_free(&self.plan, (self.pose.x(), self.pose.y()), to) {
                    self.pose = self.pose.with_position(to.0, to.1);
                }
            }
        }
        self.step += 1;
        if self.recording {
            self.record();
        }
    }

    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
        if on {
            self.record();
        }
    }

    pub fn set_lighting(&mut self, id: LightingId) -> Result<(), CliError> {
        lighting::find(&self.palette, id)?;
        self.lighting = id;
        Ok(())
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            provenance: "walkthrough".into(),
            points: self.buffer.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<usize, CliError> {
        if self.buffer.is_empty() {
            return Err(CliError::Usage("recording buffer is empty".into()));
        }
        let t = self.trajectory();
        t.validate(&self.plan, None)?;
        write_trajectory(path, &t)?;
        Ok(t.len())
    }

    pub fn frame(&self) -> Result<ServerMessage, CliError> {
        let light = lighting::find(&self.palette, self.lighting)?;
        let res = self.config.resolution;
        let img = render(&self.plan, &self.pose, light, res, res)?;
        Ok(ServerMessage::Frame {
            step: self.step,
            pose: WirePose::from(&self.pose),
            lighting: self.lighting,
            image_b64: STANDARD.encode(img.to_ppm()),
            recording: self.recording,
            buffered: self.buffer.len(),
        })
    }

    fn error(e: impl std::fmt::Display) -> ServerMessage {
        ServerMessage::Error { msg: e.to_string() }
    }

    /// Handles one text message; errors come back as an error message and
    /// leave the session usable.
    pub fn handle_text(&mut self, text: &str) -> ServerMessage {
        let msg: ClientMessage = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => return Self::error(format!("malformed message: {e}")),
        };
        let result = match msg {
            ClientMessage::Input { action } => {
                self.apply(action);
                self.frame()
            }
            ClientMessage::Recording { on } => {
                self.set_recording(on);
                self.frame()
            }
            ClientMessage::Lighting { id } => self.set_lighting(id).and_then(|_| self.frame()),
            ClientMessage::Save { path } => self
                .save(Path::new(&path))
                .map(|points| ServerMessage::Saved { path, points }),
        };
        result.unwrap_or_else(Self::error)
    }
}
