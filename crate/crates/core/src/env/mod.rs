//! Procedural indoor environment: floor plans, a column raycaster, walks and
//! pose-annotated frame datasets.

pub mod dataset;
pub mod lighting;
pub mod plan;
pub mod render;
pub mod trajectory;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use lighting::{default_palette, LightingCondition, LightingId};
pub use plan::{generate_floorplan, Cell, FloorPlan, PlanParams, Room, RoomBox};
pub use render::render;
pub use trajectory::{random_walk, MotionParams, Trajectory, TrajectoryPoint};

use crate::image::RgbImage;
use crate::spatial::Pose;
use crate::{Error, Result};

/// Label of the room whose box contains the pose, or `None` in corridors.
pub fn room_label<'a>(plan: &'a FloorPlan, pose: &Pose) -> Option<&'a str> {
    plan.room_index_at(pose.position())
        .map(|i| plan.rooms[i].label.as_str())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub step: u64,
    pub pose: Pose,
    pub lighting_id: LightingId,
    pub image: RgbImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LightingPolicy {
    Fixed { id: LightingId },
    /// Uniform draw per frame over `ids`, or over the whole palette when
    /// `ids` is empty.
    PerFrame {
        seed: u64,
        #[serde(default)]
        ids: Vec<LightingId>,
    },
}

impl LightingPolicy {
    /// Lighting id for each of `n` frames.
    pub fn assign(&self, palette: &[LightingCondition], n: usize) -> Result<Vec<LightingId>> {
        match self {
            LightingPolicy::Fixed { id } => {
                lighting::find(palette, *id)?;
                Ok(vec![*id; n])
            }
            LightingPolicy::PerFrame { seed, ids } => {
                let pool: Vec<LightingId> = if ids.is_empty() {
                    palette.iter().map(|l| l.id).collect()
                } else {
                    for &id in ids {
                        lighting::find(palette, id)?;
                    }
                    ids.clone()
                };
                if pool.is_empty() {
                    return Err(Error::Config("empty lighting palette".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect())
            }
        }
    }
}

/// Renders one frame per trajectory point; poses are copied, never altered.
pub fn replay(
    plan: &FloorPlan,
    trajectory: &Trajectory,
    policy: &LightingPolicy,
    palette: &[LightingCondition],
    width: usize,
    height: usize,
) -> Result<Vec<Frame>> {
    trajectory.validate(plan, None)?;
    let ids = policy.assign(palette, trajectory.len())?;
    trajectory
        .points
        .iter()
        .zip(ids)
        .map(|(p, id)| {
            let light = lighting::find(palette, id)?;
            Ok(Frame {
                step: p.step,
                pose: p.pose,
                lighting_id: id,
                image: render(plan, &p.pose, light, width, height)?,
            })
        })
        .collect()
}
