//! Column raycasting renderer.
//!
//! Each image column casts one ray through the grid (DDA); the wall slice is
//! scaled by the inverse perpendicular distance, floor and ceiling fill the
//! rest. Shading is linear in the lighting tint, which is applied last.

use super::lighting::LightingCondition;
use super::plan::{Cell, FloorPlan, SurfaceId};
use crate::image::RgbImage;
use crate::spatial::Pose;
use crate::{Error, Result};

/// Horizontal field of view; square images get the same vertical field.
pub const FOV_DEGREES: f64 = 60.0;

const AMBIENT: f64 = 0.45;
const FOG_COLOR: [f64; 3] = [0.72, 0.76, 0.82];
const FOG_RANGE: f64 = 4.0;
const FLOOR_BASE: [f64; 3] = [0.46, 0.4, 0.34];
const CEILING_BASE: [f64; 3] = [0.82, 0.82, 0.8];

/// What the ray for one image column hit.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnHit {
    /// Distance to the wall along the view direction, meters.
    pub perp_distance: f64,
    /// Unclipped image rows (fractional) where the wall slice starts/ends.
    pub top: f64,
    pub bottom: f64,
    pub surface: SurfaceId,
    pub normal: (f64, f64),
    /// Horizontal texture coordinate along the wall, meters.
    pub u: f64,
    /// Unnormalised ray direction with unit component along the heading.
    pub ray: (f64, f64),
}

impl ColumnHit {
    pub fn slice_height(&self) -> f64 {
        self.bottom - self.top
    }
}

/// Focal length in pixels for an image `width` pixels wide.
pub fn focal_length(width: usize) -> f64 {
    0.5 * width as f64 / (0.5 * FOV_DEGREES).to_radians().tan()
}

fn shade(distance: f64) -> f64 {
    1.0 / (1.0 + 0.1 * distance)
}

fn check_pose(plan: &FloorPlan, pose: &Pose) -> Result<()> {
    if !plan.pose_is_free(pose) {
        return Err(Error::NotInFreeSpace {
            x: pose.x(),
            y: pose.y(),
        });
    }
    Ok(())
}

fn cast_ray(plan: &FloorPlan, pose: &Pose, ray: (f64, f64), height: usize, focal: f64) -> ColumnHit {
    let cs = plan.cell_size;
    let (px, py) = (pose.x() / cs, pose.y() / cs);
    let (rx, ry) = ray;
    let mut map = (px.floor() as i64, py.floor() as i64);
    let delta = (
        if rx == 0.0 { f64::INFINITY } else { (1.0 / rx).abs() },
        if ry == 0.0 { f64::INFINITY } else { (1.0 / ry).abs() },
    );
    let step = (if rx < 0.0 { -1 } else { 1 }, if ry < 0.0 { -1 } else { 1 });
    let mut side_dist = (
        if rx < 0.0 { (px - map.0 as f64) * delta.0 } else { (map.0 as f64 + 1.0 - px) * delta.0 },
        if ry < 0.0 { (py - map.1 as f64) * delta.1 } else { (map.1 as f64 + 1.0 - py) * delta.1 },
    );
    let mut x_side;
    let cell = loop {
        if side_dist.0 < side_dist.1 {
            side_dist.0 += delta.0;
            map.0 += step.0;
            x_side = true;
        } else {
            side_dist.1 += delta.1;
            map.1 += step.1;
            x_side = false;
        }
        let inside = map.0 >= 0
            && map.1 >= 0
            && (map.0 as usize) < plan.width
            && (map.1 as usize) < plan.height;
        let cell = if inside {
            plan.cell(map.0 as usize, map.1 as usize)
        } else {
            Cell::Wall(0)
        };
        if !cell.is_free() {
            break cell;
        }
    };
    let perp_cells = if x_side {
        side_dist.0 - delta.0
    } else {
        side_dist.1 - delta.1
    };
    let perp = perp_cells * cs;
    let (normal, u) = if x_side {
        ((-step.0 as f64, 0.0), (py + perp_cells * ry) * cs)
    } else {
        ((0.0, -step.1 as f64), (px + perp_cells * rx) * cs)
    };
    let front = if x_side {
        (map.0 - step.0, map.1)
    } else {
        (map.0, map.1 - step.1)
    };
    let surface = match cell {
        Cell::Object(id) => id,
        Cell::Wall(own) => {
            let (fx, fy) = plan.cell_center(front.0 as usize, front.1 as usize);
            plan.room_index_at([fx, fy, plan.eye_height])
                .map(|r| plan.rooms[r].wall_surface)
                .unwrap_or(own)
        }
        Cell::Empty => unreachable!(),
    };
    let center = 0.5 * height as f64;
    ColumnHit {
        perp_distance: perp,
        top: center - focal * (plan.wall_height - plan.eye_height) / perp,
        bottom: center + focal * plan.eye_height / perp,
        surface,
        normal,
        u,
        ray,
    }
}

/// Casts one ray per image column.
pub fn cast_columns(plan: &FloorPlan, pose: &Pose, width: usize, height: usize) -> Result<Vec<ColumnHit>> {
    check_pose(plan, pose)?;
    let focal = focal_length(width);
    let (dx, dy) = pose.heading();
    // right-hand side of the view, seen from above with z up
    let (rx, ry) = (dy, -dx);
    let half = (0.5 * FOV_DEGREES).to_radians().tan();
    Ok((0..width)
        .map(|c| {
            let cam = 2.0 * (c as f64 + 0.5) / width as f64 - 1.0;
            let ray = (dx + rx * cam * half, dy + ry * cam * half);
            cast_ray(plan, pose, ray, height, focal)
        })
        .collect())
}

/// Row-major interleaved RGB in 0..255 units, before clamping and rounding.
pub fn render_linear(
    plan: &FloorPlan,
    pose: &Pose,
    lighting: &LightingCondition,
    width: usize,
    height: usize,
) -> Result<Vec<f64>> {
    let hits = cast_columns(plan, pose, width, height)?;
    let focal = focal_length(width);
    let center = 0.5 * height as f64;
    let light = {
        let a = lighting.key_azimuth.to_radians();
        (a.cos(), a.sin())
    };
    let mut out = vec![0.0; width * height * 3];
    for (c, hit) in hits.iter().enumerate() {
        let wall_light = AMBIENT
            + lighting.key_intensity * (hit.normal.0 * light.0 + hit.normal.1 * light.1).max(0.0);
        let surface = plan
            .surface(hit.surface)
            .ok_or_else(|| Error::Plan(format!("unknown surface {}", hit.surface)))?;
        for r in 0..height {
            let row = r as f64 + 0.5;
            let (lit, dist) = if row >= hit.top && row < hit.bottom {
                let d = hit.perp_distance;
                let v = plan.eye_height - (row - center) * d / focal;
                let m = surface.pattern.modulation(hit.u, v) * shade(d) * wall_light;
                (surface.base.map(|b| b * m), d)
            } else if row >= hit.bottom {
                let d = focal * plan.eye_height / (row - center);
                let fx = pose.x() + hit.ray.0 * d;
                let fy = pose.y() + hit.ray.1 * d;
                let tile = if (fx.floor() as i64 + fy.floor() as i64).rem_euclid(2) == 0 {
                    1.0
                } else {
                    0.8
                };
                let m = tile * shade(d) * (AMBIENT + 0.5 * lighting.key_intensity);
                (FLOOR_BASE.map(|b| b * m), d)
            } else {
                let d = focal * (plan.wall_height - plan.eye_height) / (center - row);
                let m = shade(d) * (AMBIENT + 0.3 * lighting.key_intensity);
                (CEILING_BASE.map(|b| b * m), d)
            };
            let haze = lighting.fog * (1.0 - (-dist / FOG_RANGE).exp());
            let i = (r * width + c) * 3;
            for k in 0..3 {
                let v = (1.0 - haze) * lit[k] + haze * FOG_COLOR[k];
                out[i + k] = lighting.tint[k] * v * 255.0;
            }
        }
    }
    Ok(out)
}

/// Clamps to `[0, 255]` and rounds half to even.
pub fn quantize(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round_ties_even() as u8
}

pub fn render(
    plan: &FloorPlan,
    pose: &Pose,
    lighting: &LightingCondition,
    width: usize,
    height: usize,
) -> Result<RgbImage> {
    let linear = render_linear(plan, pose, lighting, width, height)?;
    RgbImage::from_raw(width, height, linear.into_iter().map(quantize).collect())
}
