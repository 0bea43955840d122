use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type LightingId = u16;

/// One global illumination preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightingCondition {
    pub id: LightingId,
    /// Per-channel multiplier applied last, each in `(0, 2]`.
    pub tint: [f64; 3],
    /// Direction the key light shines from, degrees in the horizontal plane.
    pub key_azimuth: f64,
    /// In `(0, 2]`.
    pub key_intensity: f64,
    /// Haze strength in `[0, 1)`.
    pub fog: f64,
}

impl LightingCondition {
    pub fn validate(&self) -> Result<()> {
        let tint_ok = self.tint.iter().all(|&t| t > 0.0 && t <= 2.0);
        let key_ok = self.key_intensity > 0.0 && self.key_intensity <= 2.0;
        let fog_ok = (0.0..1.0).contains(&self.fog);
        if !(tint_ok && key_ok && fog_ok && self.key_azimuth.is_finite()) {
            return Err(Error::Config(format!("lighting condition {self:?} out of range")));
        }
        Ok(())
    }

    pub fn neutral(id: LightingId) -> Self {
        LightingCondition {
            id,
            tint: [1.0, 1.0, 1.0],
            key_azimuth: 45.0,
            key_intensity: 1.0,
            fog: 0.0,
        }
    }
}

/// The default palette: id 0 is neutral daylight, ids 1..=9 are variants
/// laid out on a grid of tint × key-light azimuth × haze.
///
/// | id | tint  | azimuth | intensity | fog |
/// |----|-------|---------|-----------|-----|
/// | 1  | warm  |   0     | 0.6       | 0.0 |
/// | 2  | warm  | 120     | 1.4       | 0.3 |
/// | 3  | warm  | 240     | 1.0       | 0.6 |
/// | 4  | cool  |   0     | 1.0       | 0.3 |
/// | 5  | cool  | 120     | 0.6       | 0.6 |
/// | 6  | cool  | 240     | 1.4       | 0.0 |
/// | 7  | green |   0     | 1.4       | 0.6 |
/// | 8  | green | 120     | 1.0       | 0.0 |
/// | 9  | green | 240     | 0.6       | 0.3 |
pub fn default_palette() -> Vec<LightingCondition> {
    const TINTS: [[f64; 3]; 3] = [[1.3, 1.0, 0.7], [0.75, 0.95, 1.35], [0.85, 1.2, 0.8]];
    const AZIMUTHS: [f64; 3] = [0.0, 120.0, 240.0];
    const FOGS: [f64; 3] = [0.0, 0.3, 0.6];
    const INTENSITIES: [f64; 3] = [0.6, 1.0, 1.4];
    let mut palette = vec![LightingCondition::neutral(0)];
    for k in 0..9 {
        let (t, a) = (k / 3, k % 3);
        palette.push(LightingCondition {
            id: k as LightingId + 1,
            tint: TINTS[t],
            key_azimuth: AZIMUTHS[a],
            key_intensity: INTENSITIES[(t + 2 * a) % 3],
            fog: FOGS[(t + a) % 3],
        });
    }
    palette
}

pub fn find(palette: &[LightingCondition], id: LightingId) -> Result<&LightingCondition> {
    palette
        .iter()
        .find(|l| l.id == id)
        .ok_or_else(|| Error::Config(format!("lighting id {id} not in palette")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_palette_shape() {
        let p = default_palette();
        assert_eq!(p.len(), 10);
        for (i, l) in p.iter().enumerate() {
            assert_eq!(l.id as usize, i);
            l.validate().unwrap();
        }
        // all nine variants differ pairwise
        for a in 1..10 {
            for b in a + 1..10 {
                assert_ne!(p[a], LightingCondition { id: p[a].id, ..p[b].clone() });
            }
        }
    }
}
