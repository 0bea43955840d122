//! On-disk layout of a generated dataset.
//!
//! ```text
//! <dir>/plan.json        versioned floor plan
//! <dir>/lighting.json    lighting palette used for rendering
//! <dir>/trajectory.csv   step,x,y,z,yaw
//! <dir>/manifest.jsonl   one record per frame
//! <dir>/frames/frame_{step:06}.ppm
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::lighting::{LightingCondition, LightingId};
use super::plan::FloorPlan;
use super::trajectory::Trajectory;
use super::{room_label, Frame};
use crate::image::RgbImage;
use crate::spatial::Pose;
use crate::{Error, Result};

pub const PLAN_FORMAT: &str = "ess-floorplan";
pub const PLAN_VERSION: u32 = 1;
pub const PLAN_FILE: &str = "plan.json";
pub const LIGHTING_FILE: &str = "lighting.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FRAMES_DIR: &str = "frames";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    format: String,
    version: u32,
    plan: FloorPlan,
}

/// JSON text of a plan. Floats are written in round-trip form, so
/// `plan_from_json(plan_to_json(p)) == p` bit for bit.
pub fn plan_to_json(plan: &FloorPlan) -> Result<String> {
    let file = PlanFile {
        format: PLAN_FORMAT.into(),
        version: PLAN_VERSION,
        plan: plan.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn plan_from_json(text: &str) -> Result<FloorPlan> {
    let file: PlanFile = serde_json::from_str(text)?;
    if file.format != PLAN_FORMAT || file.version != PLAN_VERSION {
        return Err(Error::Plan(format!(
            "unsupported plan file {} v{}",
            file.format, file.version
        )));
    }
    file.plan.validate()?;
    Ok(file.plan)
}

pub fn write_plan(path: &Path, plan: &FloorPlan) -> Result<()> {
    fs::write(path, plan_to_json(plan)?)?;
    Ok(())
}

pub fn read_plan(path: &Path) -> Result<FloorPlan> {
    plan_from_json(&fs::read_to_string(path)?)
}

pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<()> {
    fs::write(path, trajectory.to_csv())?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path)?;
    Trajectory::from_csv(&text, format!("file:{}", path.display()))
}

pub fn frame_file_name(step: u64) -> String {
    format!("frame_{step:06}.ppm")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub step: u64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub lighting_id: LightingId,
    /// Relative to the dataset directory.
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_label: Option<String>,
}

impl ManifestRecord {
    pub fn pose(&self) -> Result<Pose> {
        Pose::new(self.x, self.y, self.z, self.yaw)
    }
}

pub fn manifest_to_jsonl(records: &[ManifestRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn manifest_from_jsonl(text: &str) -> Result<Vec<ManifestRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// A loaded dataset: plan, palette and frames in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub plan: FloorPlan,
    pub palette: Vec<LightingCondition>,
    pub records: Vec<ManifestRecord>,
    pub poses: Vec<Pose>,
    pub images: Vec<RgbImage>,
}

impl Dataset {
    pub fn from_frames(plan: FloorPlan, palette: Vec<LightingCondition>, frames: Vec<Frame>) -> Self {
        let mut records = Vec::with_capacity(frames.len());
        let mut poses = Vec::with_capacity(frames.len());
        let mut images = Vec::with_capacity(frames.len());
        for f in frames {
            records.push(ManifestRecord {
                step: f.step,
                x: f.pose.x(),
                y: f.pose.y(),
                z: f.pose.z(),
                yaw: f.pose.yaw(),
                lighting_id: f.lighting_id,
                image_path: format!("{FRAMES_DIR}/{}", frame_file_name(f.step)),
                room_label: room_label(&plan, &f.pose).map(str::to_owned),
            });
            poses.push(f.pose);
            images.push(f.image);
        }
        Dataset {
            plan,
            palette,
            records,
            poses,
            images,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn trajectory(&self, provenance: &str) -> Trajectory {
        Trajectory {
            provenance: provenance.into(),
            points: self
                .records
                .iter()
                .zip(&self.poses)
                .map(|(r, p)| super::TrajectoryPoint { step: r.step, pose: *p })
                .collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join(FRAMES_DIR))?;
        write_plan(&dir.join(PLAN_FILE), &self.plan)?;
        fs::write(dir.join(LIGHTING_FILE), serde_json::to_string_pretty(&self.palette)?)?;
        write_trajectory(&dir.join(TRAJECTORY_FILE), &self.trajectory("dataset"))?;
        for (r, img) in self.records.iter().zip(&self.images) {
            fs::write(dir.join(&r.image_path), img.to_ppm())?;
        }
        fs::write(dir.join(MANIFEST_FILE), manifest_to_jsonl(&self.records)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let plan = read_plan(&dir.join(PLAN_FILE))?;
        let palette: Vec<LightingCondition> =
            serde_json::from_str(&fs::read_to_string(dir.join(LIGHTING_FILE))?)?;
        for l in &palette {
            l.validate()?;
        }
        let manifest_path = dir.join(MANIFEST_FILE);
        let records = manifest_from_jsonl(&fs::read_to_string(&manifest_path).map_err(|e| {
            Error::Config(format!("cannot read manifest {}: {e}", manifest_path.display()))
        })?)?;
        let mut poses = Vec::with_capacity(records.len());
        let mut images = Vec::with_capacity(records.len());
        for r in &records {
            let pose = r.pose()?;
            if !plan.pose_is_free(&pose) {
                return Err(Error::NotInFreeSpace { x: r.x, y: r.y });
            }
            poses.push(pose);
            let path: PathBuf = dir.join(&r.image_path);
            images.push(RgbImage::from_ppm(&fs::read(&path)?)?);
        }
        Ok(Dataset {
            plan,
            palette,
            records,
            poses,
            images,
        })
    }
}
