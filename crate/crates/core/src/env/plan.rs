use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::spatial::Pose;
use crate::{Error, Result};

pub type SurfaceId = u16;

/// Rooms need at least this many interior cells along each axis.
pub const MIN_ROOM_CELLS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Empty,
    Wall(SurfaceId),
    Object(SurfaceId),
}

impl Cell {
    pub fn is_free(self) -> bool {
        self == Cell::Empty
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Solid,
    Stripes,
    Checker,
    Bricks,
}

impl Pattern {
    /// Brightness modulation at wall texture coordinates `(u, v)` in meters.
    pub fn modulation(self, u: f64, v: f64) -> f64 {
        match self {
            Pattern::Solid => 1.0,
            Pattern::Stripes => {
                if (u * 4.0).floor() as i64 % 2 == 0 {
                    1.0
                } else {
                    0.7
                }
            }
            Pattern::Checker => {
                let s = (u * 2.0).floor() as i64 + (v * 2.0).floor() as i64;
                if s.rem_euclid(2) == 0 {
                    1.0
                } else {
                    0.65
                }
            }
            Pattern::Bricks => {
                let row = (v * 4.0).floor();
                let shift = if row as i64 % 2 == 0 { 0.0 } else { 0.25 };
                let fu = (u * 2.0 + shift).fract();
                let fv = (v * 4.0).fract();
                if fu < 0.06 || fv < 0.1 {
                    0.55
                } else {
                    1.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub id: SurfaceId,
    /// Linear RGB in `[0, 1]`.
    pub base: [f64; 3],
    pub pattern: Pattern,
}

/// Axis-aligned box in world meters, half-open on every axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl RoomBox {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] < self.max[i])
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    fn overlaps(&self, other: &RoomBox) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub label: String,
    pub bounds: RoomBox,
    pub wall_surface: SurfaceId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMarker {
    pub position: [f64; 3],
    pub size: f64,
    pub surface: SurfaceId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanParams {
    pub rooms: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    /// Fraction of each room's interior turned into object blocks.
    pub object_density: f64,
    /// Meters per grid cell.
    pub cell_size: f64,
}

impl Default for PlanParams {
    fn default() -> Self {
        PlanParams {
            rooms: 4,
            grid_width: 32,
            grid_height: 32,
            object_density: 0.03,
            cell_size: 0.5,
        }
    }
}

/// A single-floor indoor layout on a square grid.
///
/// Rooms sit in two rows either side of a central corridor; each room opens
/// onto the corridor through a doorway. Corridor and doorway cells belong to
/// no room.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub wall_height: f64,
    pub eye_height: f64,
    /// Row-major, row index along +y.
    pub cells: Vec<Cell>,
    pub palette: Vec<Surface>,
    pub rooms: Vec<Room>,
    pub objects: Vec<ObjectMarker>,
}

pub const EYE_HEIGHT: f64 = 1.0;
pub const WALL_HEIGHT: f64 = 2.5;
const SHELL_SURFACE: SurfaceId = 0;

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn split_widths(total: usize, parts: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let dividers = parts.checked_sub(1)?;
    let interior = total.checked_sub(dividers)?;
    if interior < parts * MIN_ROOM_CELLS {
        return None;
    }
    let extra = interior - parts * MIN_ROOM_CELLS;
    let weights: Vec<f64> = (0..parts).map(|_| rng.random_range(0.7..1.3)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut widths: Vec<usize> = weights
        .iter()
        .map(|w| MIN_ROOM_CELLS + (extra as f64 * w / wsum).floor() as usize)
        .collect();
    let mut left = interior - widths.iter().sum::<usize>();
    let mut i = 0;
    while left > 0 {
        widths[i % parts] += 1;
        left -= 1;
        i += 1;
    }
    Some(widths)
}

/// Generates a plan; deterministic in `(seed, params)`.
pub fn generate_floorplan(seed: u64, params: &PlanParams) -> Result<FloorPlan> {
    let (w, h) = (params.grid_width, params.grid_height);
    if params.rooms < 2 {
        return Err(Error::Plan(format!("need at least 2 rooms, got {}", params.rooms)));
    }
    if w < 16 || h < 16 {
        return Err(Error::Plan(format!("grid must be at least 16x16, got {w}x{h}")));
    }
    if !(params.cell_size > 0.0 && params.cell_size.is_finite()) {
        return Err(Error::Plan(format!("cell size {}", params.cell_size)));
    }
    if !(0.0..0.5).contains(&params.object_density) {
        return Err(Error::Plan(format!("object density {}", params.object_density)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // rows: 0 shell | top band | wall | corridor (2) | wall | bottom band | shell
    let corridor = [h / 2 - 1, h / 2];
    let top = (1, corridor[0] - 2);
    let bottom = (corridor[1] + 2, h - 2);
    let n_top = params.rooms.div_ceil(2);
    let n_bottom = params.rooms / 2;
    let too_many = || {
        Error::Plan(format!(
            "{} rooms do not fit a {w}x{h} grid",
            params.rooms
        ))
    };
    let widths_top = split_widths(w - 2, n_top, &mut rng).ok_or_else(too_many)?;
    let widths_bottom = split_widths(w - 2, n_bottom, &mut rng).ok_or_else(too_many)?;

    let mut cells = vec![Cell::Wall(SHELL_SURFACE); w * h];
    let idx = |x: usize, y: usize| y * w + x;
    for y in corridor {
        for x in 1..w - 1 {
            cells[idx(x, y)] = Cell::Empty;
        }
    }

    let patterns = [Pattern::Stripes, Pattern::Checker, Pattern::Bricks, Pattern::Solid];
    let hue_offset: f64 = rng.random_range(0.0..1.0);
    let mut palette = vec![Surface {
        id: SHELL_SURFACE,
        base: [0.62, 0.6, 0.58],
        pattern: Pattern::Solid,
    }];
    let cs = params.cell_size;
    let mut rooms = Vec::with_capacity(params.rooms);
    let mut doors = Vec::new();

    let bands = [(top, &widths_top, top.1 + 1), (bottom, &widths_bottom, bottom.0 - 1)];
    for ((y0, y1), widths, door_row) in bands {
        let mut x = 1;
        for &width in widths.iter() {
            let (x0, x1) = (x, x + width - 1);
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    cells[idx(xx, yy)] = Cell::Empty;
                }
            }
            // corridor doorway, about a third of the room's width
            let door_w = (width / 3).clamp(1, width - 2);
            let door_x = rng.random_range(x0 + 1..=x1 - door_w);
            for dx in 0..door_w {
                cells[idx(door_x + dx, door_row)] = Cell::Empty;
                doors.push((door_x + dx, door_row));
            }
            // side doorway into the previous room of the same band
            if x0 > 1 {
                let door_h = ((y1 - y0 + 1) / 4).clamp(1, y1 - y0 - 1);
                let door_y = rng.random_range(y0 + 1..=y1 - door_h);
                for dy in 0..door_h {
                    cells[idx(x0 - 1, door_y + dy)] = Cell::Empty;
                    doors.push((x0 - 1, door_y + dy));
                }
            }
            let id = rooms.len() as SurfaceId + 1;
            let hue = hue_offset + rooms.len() as f64 / params.rooms as f64;
            palette.push(Surface {
                id,
                base: hsv(hue, 0.55, 0.9),
                pattern: patterns[rooms.len() % patterns.len()],
            });
            rooms.push(Room {
                label: format!("room_{}", rooms.len()),
                bounds: RoomBox {
                    min: [x0 as f64 * cs, y0 as f64 * cs, 0.0],
                    max: [(x1 + 1) as f64 * cs, (y1 + 1) as f64 * cs, WALL_HEIGHT],
                },
                wall_surface: id,
            });
            x = x1 + 2;
        }
    }

    let object_colors = [
        [0.85, 0.2, 0.15],
        [0.15, 0.3, 0.85],
        [0.9, 0.8, 0.2],
        [0.2, 0.65, 0.3],
    ];
    let first_object_surface = palette.len() as SurfaceId;
    for (i, c) in object_colors.iter().enumerate() {
        palette.push(Surface {
            id: first_object_surface + i as SurfaceId,
            base: *c,
            pattern: Pattern::Solid,
        });
    }

    let mut plan = FloorPlan {
        seed,
        width: w,
        height: h,
        cell_size: cs,
        wall_height: WALL_HEIGHT,
        eye_height: EYE_HEIGHT,
        cells,
        palette,
        rooms,
        objects: Vec::new(),
    };

    // objects: single blocks, one cell clear of the room's walls, never
    // disconnecting free space
    let total_free = plan.cells.iter().filter(|c| c.is_free()).count();
    let mut free_now = total_free;
    for r in 0..plan.rooms.len() {
        let (cx0, cy0, cx1, cy1) = plan.room_cell_range(r);
        let interior = (cx1 - cx0 + 1) * (cy1 - cy0 + 1);
        let wanted = (params.object_density * interior as f64).round() as usize;
        let mut candidates: Vec<(usize, usize)> = (cy0 + 1..cy1)
            .flat_map(|y| (cx0 + 1..cx1).map(move |x| (x, y)))
            .filter(|&(x, y)| doors.iter().all(|&(dx, dy)| dx.abs_diff(x) + dy.abs_diff(y) > 2))
            .collect();
        candidates.shuffle(&mut rng);
        let mut placed = 0;
        for (x, y) in candidates {
            if placed == wanted {
                break;
            }
            let surface = first_object_surface + rng.random_range(0..object_colors.len()) as SurfaceId;
            plan.cells[idx(x, y)] = Cell::Object(surface);
            if plan.reachable_free_cells() == free_now - 1 {
                free_now -= 1;
                placed += 1;
                plan.objects.push(ObjectMarker {
                    position: [(x as f64 + 0.5) * cs, (y as f64 + 0.5) * cs, 0.0],
                    size: cs,
                    surface,
                });
            } else {
                plan.cells[idx(x, y)] = Cell::Empty;
            }
        }
    }
    plan.validate()?;
    Ok(plan)
}

impl FloorPlan {
    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.cells[y * self.width + x]
    }

    /// The cell containing world point `(x, y)`, if inside the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 {
            return None;
        }
        let (cx, cy) = ((x / self.cell_size) as usize, (y / self.cell_size) as usize);
        (cx < self.width && cy < self.height).then_some((cx, cy))
    }

    pub fn is_free(&self, x: f64, y: f64) -> bool {
        self.cell_at(x, y)
            .is_some_and(|(cx, cy)| self.cell(cx, cy).is_free())
    }

    pub fn pose_is_free(&self, pose: &Pose) -> bool {
        self.is_free(pose.x(), pose.y())
    }

    pub fn surface(&self, id: SurfaceId) -> Option<&Surface> {
        self.palette.iter().find(|s| s.id == id)
    }

    /// Index of the room whose box contains the world point.
    pub fn room_index_at(&self, p: [f64; 3]) -> Option<usize> {
        self.rooms.iter().position(|r| r.bounds.contains(p))
    }

    /// Inclusive cell range `(x0, y0, x1, y1)` covered by room `r`.
    pub fn room_cell_range(&self, r: usize) -> (usize, usize, usize, usize) {
        let b = &self.rooms[r].bounds;
        let cs = self.cell_size;
        (
            (b.min[0] / cs).round() as usize,
            (b.min[1] / cs).round() as usize,
            (b.max[0] / cs).round() as usize - 1,
            (b.max[1] / cs).round() as usize - 1,
        )
    }

    pub fn cell_center(&self, x: usize, y: usize) -> (f64, f64) {
        ((x as f64 + 0.5) * self.cell_size, (y as f64 + 0.5) * self.cell_size)
    }

    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.cell(x, y).is_free())
            .collect()
    }

    fn reachable_free_cells(&self) -> usize {
        let Some(&start) = self.free_cells().first() else {
            return 0;
        };
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::from([start]);
        seen[start.1 * self.width + start.0] = true;
        let mut count = 0;
        while let Some((x, y)) = queue.pop_front() {
            count += 1;
            let neighbours = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in neighbours {
                if nx < self.width && ny < self.height {
                    let i = ny * self.width + nx;
                    if !seen[i] && self.cells[i].is_free() {
                        seen[i] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
        }
        count
    }

    /// Checks the structural invariants of a plan.
    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.width * self.height {
            return Err(Error::Plan("cell count does not match grid size".into()));
        }
        for c in &self.cells {
            if let Cell::Wall(id) | Cell::Object(id) = c {
                if self.surface(*id).is_none() {
                    return Err(Error::Plan(format!("unknown surface id {id}")));
                }
            }
        }
        for o in &self.objects {
            if self.surface(o.surface).is_none() {
                return Err(Error::Plan(format!("unknown object surface {}", o.surface)));
            }
        }
        let outer = RoomBox {
            min: [self.cell_size, self.cell_size, 0.0],
            max: [
                (self.width - 1) as f64 * self.cell_size,
                (self.height - 1) as f64 * self.cell_size,
                self.wall_height,
            ],
        };
        for (i, r) in self.rooms.iter().enumerate() {
            if self.surface(r.wall_surface).is_none() {
                return Err(Error::Plan(format!("room {} has unknown surface", r.label)));
            }
            let inside = (0..3).all(|k| r.bounds.min[k] >= outer.min[k] && r.bounds.max[k] <= outer.max[k]);
            if !inside {
                return Err(Error::Plan(format!("room {} extends past the outer walls", r.label)));
            }
            if self.rooms[..i].iter().any(|o| o.bounds.overlaps(&r.bounds)) {
                return Err(Error::Plan(format!("room {} overlaps another room", r.label)));
            }
        }
        let free = self.free_cells().len();
        if free == 0 || self.reachable_free_cells() != free {
            return Err(Error::Plan("free space is not connected".into()));
        }
        for r in &self.rooms {
            let c = r.bounds.center();
            let has_free = self
                .free_cells()
                .iter()
                .any(|&(x, y)| {
                    let (px, py) = self.cell_center(x, y);
                    r.bounds.contains([px, py, c[2]])
                });
            if !has_free {
                return Err(Error::Plan(format!("room {} has no free cell", r.label)));
            }
        }
        Ok(())
    }
}
