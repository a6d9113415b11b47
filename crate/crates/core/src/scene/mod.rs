//! Continuous-space scene model, canonical ordering, quantization,
//! augmentation, floor rasterization and the procedural dataset.

pub mod augment;
pub mod category;
pub mod geometry;
pub mod io;
pub mod quantize;
pub mod raster;
pub mod synth;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use augment::{augment_scene, augment_with};
pub use category::CategoryTable;
pub use geometry::Point;
pub use quantize::{dequantize_value, quantize_value, PropertyKind, LOCATION_BINS, ORIENTATION_BINS};
pub use raster::{rasterize_floor, FloorMask};
pub use synth::{make_synthetic_dataset, sub_seed, Dataset, SyntheticConfig};

use crate::error::{Error, Result};

/// Upper bound on the objects (including doors and windows) in one scene.
pub const MAX_OBJECTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub category: usize,
    /// Box center in meters; `z` is the vertical center.
    pub center: [f64; 3],
    /// Degrees in `[0, 360)`, counter-clockwise about the vertical axis.
    pub theta: f64,
    /// `(l, w, h)` in meters.
    pub dims: [f64; 3],
}

impl ObjectInstance {
    pub fn new(category: usize, center: [f64; 3], theta: f64, dims: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::invalid(format!("dimensions must be positive, got {dims:?}")));
        }
        if !(0.0..360.0).contains(&theta) {
            return Err(Error::invalid(format!("orientation {theta} outside [0, 360)")));
        }
        Ok(Self { category, center, theta, dims })
    }

    pub fn footprint(&self) -> [Point; 4] {
        geometry::oriented_rect([self.center[0], self.center[1]], [self.dims[0], self.dims[1]], self.theta)
    }

    pub fn bottom(&self) -> f64 {
        self.center[2] - self.dims[2] * 0.5
    }

    pub fn top(&self) -> f64 {
        self.center[2] + self.dims[2] * 0.5
    }

    pub fn xy(&self) -> Point {
        [self.center[0], self.center[1]]
    }
}

/// Empty room: floor polygon plus its doors and windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    /// Counter-clockwise vertices in meters.
    pub polygon: Vec<Point>,
    #[serde(default)]
    pub openings: Vec<ObjectInstance>,
}

impl FloorPlan {
    pub fn validate(&self) -> Result<()> {
        if self.polygon.len() < 3 {
            return Err(Error::DegeneratePolygon("fewer than 3 vertices".into()));
        }
        if geometry::area(&self.polygon) <= 1e-12 {
            return Err(Error::DegeneratePolygon("zero area".into()));
        }
        if !geometry::is_simple(&self.polygon) {
            return Err(Error::DegeneratePolygon("self-intersecting".into()));
        }
        Ok(())
    }

    pub fn mask(&self, extent: f64, resolution: usize) -> Result<FloorMask> {
        rasterize_floor(&self.polygon, extent, resolution)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<ObjectInstance>,
    pub polygon: Vec<Point>,
    /// Side of the square normalization region, in meters.
    pub extent: f64,
}

impl Scene {
    pub fn floor_plan(&self, table: &CategoryTable) -> FloorPlan {
        FloorPlan {
            polygon: self.polygon.clone(),
            openings: self.objects.iter().filter(|o| table.is_opening(o.category)).cloned().collect(),
        }
    }

    /// Number of leading door/window objects.
    pub fn opening_count(&self, table: &CategoryTable) -> usize {
        self.objects.iter().take_while(|o| table.is_opening(o.category)).count()
    }

    /// Same scene without doors and windows.
    pub fn without_openings(&self, table: &CategoryTable) -> Scene {
        Scene {
            objects: self.objects.iter().filter(|o| !table.is_opening(o.category)).cloned().collect(),
            polygon: self.polygon.clone(),
            extent: self.extent,
        }
    }
}

fn object_order(table: &CategoryTable, a: &ObjectInstance, b: &ObjectInstance) -> Ordering {
    table
        .rank_key(a.category)
        .cmp(&table.rank_key(b.category))
        .then_with(|| {
            a.center
                .iter()
                .zip(&b.center)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.theta.total_cmp(&b.theta))
        .then_with(|| {
            a.dims
                .iter()
                .zip(&b.dims)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

fn check_categories(objects: &[ObjectInstance], table: &CategoryTable) -> Result<()> {
    match objects.iter().find(|o| o.category >= table.len()) {
        Some(o) => Err(Error::UnknownCategory(format!("#{}", o.category))),
        None => Ok(()),
    }
}

/// Canonical order: doors, windows, then descending category frequency;
/// equal categories by lexicographic `(x, y, z)`.
pub fn sort_scene(scene: &Scene, table: &CategoryTable) -> Result<Scene> {
    check_categories(&scene.objects, table)?;
    let mut out = scene.clone();
    out.objects.sort_by(|a, b| object_order(table, a, b));
    Ok(out)
}

/// Index of the first object out of canonical order, if any.
pub fn first_unsorted(objects: &[ObjectInstance], table: &CategoryTable) -> Result<Option<usize>> {
    check_categories(objects, table)?;
    Ok(objects
        .windows(2)
        .position(|w| object_order(table, &w[0], &w[1]) == Ordering::Greater)
        .map(|i| i + 1))
}

/// Adjacent pairs out of canonical order; generated scenes are flagged, not
/// rejected, when this is non-zero.
pub fn order_violations(objects: &[ObjectInstance], table: &CategoryTable) -> Result<usize> {
    check_categories(objects, table)?;
    Ok(objects.windows(2).filter(|w| object_order(table, &w[0], &w[1]) == Ordering::Greater).count())
}
