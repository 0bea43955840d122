//! Spatial distances between agent poses, the binary positive-pair
//! predicate and continuous pair weights.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Agent position in meters plus heading (yaw) in degrees.
///
/// The horizontal plane is `(x, y)`; `z` is height. Yaw is measured
/// counter-clockwise from +x and always lies in `[0, 360)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose", into = "RawPose")]
pub struct Pose {
    x: f64,
    y: f64,
    z: f64,
    yaw: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPose {
    x: f64,
    y: f64,
    z: f64,
    yaw: f64,
}

impl TryFrom<RawPose> for Pose {
    type Error = Error;
    fn try_from(r: RawPose) -> Result<Self> {
        Pose::new(r.x, r.y, r.z, r.yaw)
    }
}

impl From<Pose> for RawPose {
    fn from(p: Pose) -> Self {
        RawPose {
            x: p.x,
            y: p.y,
            z: p.z,
            yaw: p.yaw,
        }
    }
}

/// Reduces any finite angle into `[0, 360)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let r = yaw.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite() && yaw.is_finite()) {
            return Err(Error::InvalidPose(format!("({x}, {y}, {z}, yaw {yaw})")));
        }
        Ok(Pose {
            x,
            y,
            z,
            yaw: normalize_yaw(yaw),
        })
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Unit heading vector in the horizontal plane.
    pub fn heading(&self) -> (f64, f64) {
        let r = self.yaw.to_radians();
        (r.cos(), r.sin())
    }

    pub fn with_yaw(&self, yaw: f64) -> Self {
        Pose {
            yaw: normalize_yaw(yaw),
            ..*self
        }
    }

    pub fn with_position(&self, x: f64, y: f64) -> Self {
        Pose { x, y, ..*self }
    }
}

/// Euclidean distance between the two positions, in meters.
pub fn delta_pos(a: &Pose, b: &Pose) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Smallest angle between the two headings, in `[0, 180]` degrees.
pub fn delta_rot(a: &Pose, b: &Pose) -> f64 {
    let d = (a.yaw - b.yaw).abs();
    d.min(360.0 - d)
}

/// One threshold component: a strict upper bound, or no constraint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Below(f64),
    Unbounded,
}

impl Bound {
    pub fn admits(&self, value: f64) -> bool {
        match *self {
            Bound::Below(limit) => value < limit,
            Bound::Unbounded => true,
        }
    }

    pub fn limit(&self) -> Option<f64> {
        match *self {
            Bound::Below(l) => Some(l),
            Bound::Unbounded => None,
        }
    }

    /// Multiplies a bounded limit by `factor`.
    pub fn scaled(&self, factor: f64) -> Bound {
        match *self {
            Bound::Below(l) => Bound::Below(l * factor),
            Bound::Unbounded => Bound::Unbounded,
        }
    }
}

/// Position/rotation thresholds defining a positive pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThreshold", into = "RawThreshold")]
pub struct SimilarityThreshold {
    position: Bound,
    rotation: Bound,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThreshold {
    position: Bound,
    rotation: Bound,
}

impl TryFrom<RawThreshold> for SimilarityThreshold {
    type Error = Error;
    fn try_from(r: RawThreshold) -> Result<Self> {
        SimilarityThreshold::new(r.position, r.rotation)
    }
}

impl From<SimilarityThreshold> for RawThreshold {
    fn from(t: SimilarityThreshold) -> Self {
        RawThreshold {
            position: t.position,
            rotation: t.rotation,
        }
    }
}

impl SimilarityThreshold {
    pub fn new(position: Bound, rotation: Bound) -> Result<Self> {
        if let Bound::Below(p) = position {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidThreshold(format!("position limit {p} m")));
            }
        }
        if let Bound::Below(r) = rotation {
            if !(r > 0.0 && r <= 180.0) {
                return Err(Error::InvalidThreshold(format!("rotation limit {r} deg")));
            }
        }
        if position == Bound::Unbounded && rotation == Bound::Unbounded {
            return Err(Error::InvalidThreshold(
                "position and rotation cannot both be unbounded".into(),
            ));
        }
        Ok(SimilarityThreshold { position, rotation })
    }

    /// Both components bounded.
    pub fn bounded(meters: f64, degrees: f64) -> Result<Self> {
        Self::new(Bound::Below(meters), Bound::Below(degrees))
    }

    pub fn position(&self) -> Bound {
        self.position
    }

    pub fn rotation(&self) -> Bound {
        self.rotation
    }

    /// Multiplies both bounded components by `factor`, clamping the rotation
    /// limit to 180°.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let rotation = match self.rotation.scaled(factor) {
            Bound::Below(r) => Bound::Below(r.min(180.0)),
            b => b,
        };
        Self::new(self.position.scaled(factor), rotation)
    }
}

/// True iff both deltas are strictly below their bounds.
pub fn is_positive(a: &Pose, b: &Pose, thr: &SimilarityThreshold) -> bool {
    thr.position.admits(delta_pos(a, b)) && thr.rotation.admits(delta_rot(a, b))
}

/// Parameters of the continuous pair weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeight", into = "RawWeight")]
pub struct WeightParams {
    alpha: f64,
    beta: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeight {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawWeight> for WeightParams {
    type Error = Error;
    fn try_from(r: RawWeight) -> Result<Self> {
        WeightParams::new(r.alpha, r.beta)
    }
}

impl From<WeightParams> for RawWeight {
    fn from(w: WeightParams) -> Self {
        RawWeight {
            alpha: w.alpha,
            beta: w.beta,
        }
    }
}

impl Default for WeightParams {
    fn default() -> Self {
        WeightParams {
            alpha: 2.0,
            beta: 1.0 / 60.0,
        }
    }
}

impl WeightParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidWeightParams { alpha, beta });
        }
        Ok(WeightParams { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `exp(-alpha * (beta * rot + pos))` for explicit deltas.
    pub fn weight_for(&self, delta_pos: f64, delta_rot: f64) -> f64 {
        (-self.alpha * (self.beta * delta_rot + delta_pos)).exp()
    }
}

/// Proximity weight in `(0, 1]`; 1 only for coincident poses.
pub fn pair_weight(a: &Pose, b: &Pose, wp: &WeightParams) -> f64 {
    wp.weight_for(delta_pos(a, b), delta_rot(a, b))
}
