//! Recordings, their on-disk formats, a seeded cage simulator, and the
//! leave-one-cage-out split.

mod io;
mod sim;
mod split;

use serde::{Deserialize, Serialize};

pub use io::{load_layout, load_manifest, read_trajectory, write_dataset, write_trajectory, ManifestEntry};
pub use sim::{derive_seed, simulate, simulate_track, Anchor, CageTraits, ClassProfile, ClassProfiles, MixtureComponent, SimConfig, SimulatedTrack};
pub use split::{split_by_group, split_loco, Fold};

use crate::featurize::TrajectorySample;
use crate::label::{Age, Sex, Stereotype};

/// One mouse tracked during one session.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub recording_id: String,
    pub cage_id: String,
    pub mouse_id: String,
    pub sex: Sex,
    pub age: Age,
    pub samples: Vec<TrajectorySample>,
}

impl Recording {
    pub fn class(&self) -> Stereotype {
        Stereotype::new(self.sex, self.age)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// Landmarks of the cage. `y` grows downwards: `y = 0` is the top wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchors {
    pub dome: Point,
    pub feeder_upper: Point,
    pub feeder_lower: Point,
    pub water: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CageLayout {
    pub width: f64,
    pub height: f64,
    pub anchors: Anchors,
}

impl Default for CageLayout {
    /// 50 x 50 cm with the dome in the upper-left corner and the lower
    /// feeder and water spot along the bottom wall.
    fn default() -> Self {
        CageLayout {
            width: 50.0,
            height: 50.0,
            anchors: Anchors {
                dome: Point::new(9.0, 9.0),
                feeder_upper: Point::new(41.0, 8.0),
                feeder_lower: Point::new(17.0, 44.0),
                water: Point::new(34.0, 45.0),
            },
        }
    }
}

impl CageLayout {
    pub fn anchor(&self, anchor: Anchor) -> Point {
        match anchor {
            Anchor::Dome => self.anchors.dome,
            Anchor::FeederUpper => self.anchors.feeder_upper,
            Anchor::FeederLower => self.anchors.feeder_lower,
            Anchor::Water => self.anchors.water,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return Err(crate::Error::Config(format!(
                "cage dimensions must be positive, got {} x {}",
                self.width, self.height
            )));
        }
        for anchor in Anchor::ALL {
            let p = self.anchor(anchor);
            if !self.contains(p.x, p.y) {
                return Err(crate::Error::Config(format!("anchor {anchor:?} at ({}, {}) lies outside the cage", p.x, p.y)));
            }
        }
        Ok(())
    }
}
