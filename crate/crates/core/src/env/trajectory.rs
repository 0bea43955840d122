use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plan::FloorPlan;
use crate::spatial::{delta_pos, Pose};
use crate::{Error, Result};

pub const TRAJECTORY_HEADER: &str = "step,x,y,z,yaw";

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub pose: Pose,
}

/// Ordered, pose-annotated path through a plan.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub provenance: String,
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    /// Meters per forward move.
    pub step_length: f64,
    /// Degrees per turn.
    pub turn_increment: f64,
    /// Chance of a spontaneous turn before each move.
    pub turn_probability: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams {
            step_length: 0.2,
            turn_increment: 15.0,
            turn_probability: 0.15,
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step_length > 0.0
            && self.step_length.is_finite()
            && self.turn_increment > 0.0
            && self.turn_increment <= 180.0
            && (0.0..=1.0).contains(&self.turn_probability);
        if !ok {
            return Err(Error::Config(format!("invalid motion parameters {self:?}")));
        }
        Ok(())
    }
}

/// Shortest round-trip decimal, zero-padded to nine significant digits.
pub fn format_decimal(v: f64) -> String {
    let mut s = v.to_string();
    if !s.contains('.') {
        s.push('.');
    }
    let digits = s.trim_start_matches('-').replace('.', "");
    let significant = digits.trim_start_matches('0').len();
    for _ in significant..9 {
        s.push('0');
    }
    s
}

/// Whether a straight move between two points stays in free space.
///
/// Samples the segment at a quarter-cell spacing so no wall cell is skipped.
pub fn segment_is_free(plan: &FloorPlan, from: (f64, f64), to: (f64, f64)) -> bool {
    let len = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
    let n = ((len / (0.25 * plan.cell_size)).ceil() as usize).max(1);
    (0..=n).all(|i| {
        let t = i as f64 / n as f64;
        plan.is_free(from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1))
    })
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.points.iter().map(|p| &p.pose)
    }

    /// Checks step ordering, free space, and optionally the per-step
    /// motion bound.
    pub fn validate(&self, plan: &FloorPlan, max_step: Option<f64>) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !plan.pose_is_free(&p.pose) {
                return Err(Error::Trajectory(format!(
                    "step {} at ({:.3}, {:.3}) is not in free space",
                    p.step,
                    p.pose.x(),
                    p.pose.y()
                )));
            }
            if i > 0 {
                let prev = &self.points[i - 1];
                if p.step <= prev.step {
                    return Err(Error::Trajectory(format!(
                        "steps not strictly increasing ({} then {})",
                        prev.step, p.step
                    )));
                }
                if let Some(bound) = max_step {
                    let d = delta_pos(&prev.pose, &p.pose);
                    if d > bound + 1e-9 {
                        return Err(Error::Trajectory(format!(
                            "step {} moves {d:.4} m, bound is {bound}",
                            p.step
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// CSV text with the `step,x,y,z,yaw` header. Numbers are written with
    /// at least nine significant digits and parse back to the identical `f64`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.points.len() + 1));
        out.push_str(TRAJECTORY_HEADER);
        out.push('\n');
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.step,
                format_decimal(p.pose.x()),
                format_decimal(p.pose.y()),
                format_decimal(p.pose.z()),
                format_decimal(p.pose.yaw())
            );
        }
        out
    }

    pub fn from_csv(text: &str, provenance: impl Into<String>) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == TRAJECTORY_HEADER => {}
            other => {
                return Err(Error::Trajectory(format!(
                    "expected header {TRAJECTORY_HEADER:?}, found {other:?}"
                )))
            }
        }
        let mut points = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Trajectory(format!("line {}: malformed record {line:?}", n + 2));
            if fields.len() != 5 {
                return Err(bad());
            }
            let step = fields[0].parse::<u64>().map_err(|_| bad())?;
            let nums = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            let pose = Pose::new(nums[0], nums[1], nums[2], nums[3])?;
            points.push(TrajectoryPoint { step, pose });
        }
        Ok(Trajectory {
            provenance: provenance.into(),
            points,
        })
    }
}

/// Persistent random walk: keep heading, occasionally turn by one
/// increment, and on a blocked move stay put and draw a new heading.
pub fn random_walk(plan: &FloorPlan, steps: usize, motion: &MotionParams, seed: u64) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Trajectory("a walk needs at least one step".into()));
    }
    motion.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let free: Vec<(usize, usize)> = plan
        .free_cells()
        .into_iter()
        .filter(|&(x, y)| {
            let (cx, cy) = plan.cell_center(x, y);
            plan.room_index_at([cx, cy, plan.eye_height]).is_some()
        })
        .collect();
    if free.is_empty() {
        return Err(Error::Trajectory("no free starting cell".into()));
    }
    let (sx, sy) = free[rng.random_range(0..free.len())];
    let (x, y) = plan.cell_center(sx, sy);
    let headings = (360.0 / motion.turn_increment).floor().max(1.0) as u32;
    let yaw = rng.random_range(0..headings) as f64 * motion.turn_increment;
    let mut pose = Pose::new(x, y, plan.eye_height, yaw)?;

    let mut points = Vec::with_capacity(steps);
    for step in 0..steps as u64 {
        points.push(TrajectoryPoint { step, pose });
        if rng.random::<f64>() < motion.turn_probability {
            let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
            pose = pose.with_yaw(pose.yaw() + dir * motion.turn_increment);
        }
        let (hx, hy) = pose.heading();
        let target = (pose.x() + hx * motion.step_length, pose.y() + hy * motion.step_length);
        if segment_is_free(plan, (pose.x(), pose.y()), target) {
            pose = pose.with_position(target.0, target.1);
        } else {
            let k = rng.random_range(1..headings.max(2)) as f64;
            pose = pose.with_yaw(pose.yaw() + k * motion.turn_increment);
        }
    }
    Ok(Trajectory {
        provenance: format!("random_walk:{seed}"),
        points,
    })
}
