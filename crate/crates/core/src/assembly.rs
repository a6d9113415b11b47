//! Catalog retrieval, oriented-box collision checks and the place /
//! reselect / resample loop that turns generated objects into a layout.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::dequantize_row;
use crate::error::{Error, Result};
use crate::model::set::ModelSet;
use crate::sampler::{finish, prepare_complete, prepare_generate, Generation, GenerationState, SamplerConfig, SceneCondition};
use crate::model::Condition;
use crate::scene::geometry::{convex_intersection_area, oriented_rect};
use crate::scene::{CategoryTable, ObjectInstance, Point, Scene};

const BUNDLED_CATALOG: &str = include_str!("../data/catalog.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub category: String,
    /// `(l, w, h)` in meters.
    pub dims: [f64; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

/// Box models grouped by category name.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    entries: Vec<CatalogEntry>,
    by_category: HashMap<String, Vec<usize>>,
}

impl Catalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self> {
        let mut by_category: HashMap<String, Vec<usize>> = HashMap::new();
        let mut ids = std::collections::HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.dims.iter().any(|&d| !(d > 0.0)) {
                return Err(Error::invalid(format!("catalog entry `{}` has non-positive dimensions", e.id)));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(Error::invalid(format!("duplicate catalog id `{}`", e.id)));
            }
            by_category.entry(e.category.clone()).or_default().push(i);
        }
        Ok(Self { entries, by_category })
    }

    /// The box catalog shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_CATALOG).expect("bundled catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let entries = serde_json::from_str(&text).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn count(&self, category: &str) -> usize {
        self.by_category.get(category).map_or(0, Vec::len)
    }
}

/// Entry of `category` whose dimensions are `rank`-th closest (L2) to
/// `dims`; rank 0 is the nearest, ties by id.
pub fn retrieve_cad<'c>(dims: [f64; 3], category: &str, catalog: &'c Catalog, rank: usize) -> Result<&'c CatalogEntry> {
    let ids = catalog
        .by_category
        .get(category)
        .ok_or_else(|| Error::UnknownCategory(format!("{category} (not in catalog)")))?;
    if rank >= ids.len() {
        return Err(Error::invalid(format!("rank {rank} but the catalog has {} `{category}` entries", ids.len())));
    }
    let mut ranked: Vec<(f64, &CatalogEntry)> =
        ids.iter().map(|&i| &catalog.entries[i]).map(|e| (dims_distance(dims, e.dims), e)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    Ok(ranked[rank].1)
}

pub fn dims_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Box rotated about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: [f64; 3],
    pub theta: f64,
    pub dims: [f64; 3],
}

impl OrientedBox {
    pub fn footprint(&self) -> [Point; 4] {
        oriented_rect([self.center[0], self.center[1]], [self.dims[0], self.dims[1]], self.theta)
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn bottom(&self) -> f64 {
        self.center[2] - self.dims[2] * 0.5
    }

    pub fn top(&self) -> f64 {
        self.center[2] + self.dims[2] * 0.5
    }
}

impl From<&ObjectInstance> for OrientedBox {
    fn from(o: &ObjectInstance) -> Self {
        Self { center: o.center, theta: o.theta, dims: o.dims }
    }
}

/// Footprint intersection area times vertical overlap, over the union volume.
pub fn oriented_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let vertical = (a.top().min(b.top()) - a.bottom().max(b.bottom())).max(0.0);
    if vertical == 0.0 {
        return 0.0;
    }
    let inter = convex_intersection_area(&a.footprint(), &b.footprint()) * vertical;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    /// `None` for objects placed with their own dimensions (doors, windows
    /// and categories missing from the catalog).
    pub catalog_id: Option<String>,
    pub category: usize,
    pub center: [f64; 3],
    pub theta: f64,
    /// Catalog dimensions when retrieved.
    pub dims: [f64; 3],
    /// Footprint center outside the floor polygon (flagged, not rejected).
    pub out_of_bounds: bool,
}

impl PlacedObject {
    pub fn oriented_box(&self) -> OrientedBox {
        OrientedBox { center: self.center, theta: self.theta, dims: self.dims }
    }

    pub fn instance(&self) -> ObjectInstance {
        ObjectInstance { category: self.category, center: self.center, theta: self.theta, dims: self.dims }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssemblyConfig {
    /// Catalog ranks tried per object before asking for a new sample.
    pub max_rank: usize,
    pub max_resamples: usize,
    /// Largest IoU accepted against any placed object.
    pub iou_threshold: f64,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self { max_rank: 20, max_resamples: 3, iou_threshold: 0.05 }
    }
}

fn max_iou(b: &OrientedBox, placed: &[PlacedObject]) -> f64 {
    placed.iter().map(|p| oriented_iou(b, &p.oriented_box())).fold(0.0, f64::max)
}

fn verbatim(o: &ObjectInstance, polygon: &[Point]) -> PlacedObject {
    PlacedObject {
        catalog_id: None,
        category: o.category,
        center: o.center,
        theta: o.theta,
        dims: o.dims,
        out_of_bounds: !crate::scene::geometry::contains(polygon, o.xy()),
    }
}

/// Tries catalog ranks `0..max_rank` at the predicted pose; `None` when
/// every candidate collides.
pub fn place_object(
    predicted: &ObjectInstance,
    table: &CategoryTable,
    catalog: &Catalog,
    placed: &[PlacedObject],
    polygon: &[Point],
    cfg: &AssemblyConfig,
) -> Result<Option<PlacedObject>> {
    let name = table.name(predicted.category);
    let available = catalog.count(name);
    if table.is_opening(predicted.category) || available == 0 {
        let p = verbatim(predicted, polygon);
        return Ok((max_iou(&p.oriented_box(), placed) <= cfg.iou_threshold).then_some(p));
    }
    for rank in 0..cfg.max_rank.min(available) {
        let entry = retrieve_cad(predicted.dims, name, catalog, rank)?;
        let b = OrientedBox { center: predicted.center, theta: predicted.theta, dims: entry.dims };
        if max_iou(&b, placed) <= cfg.iou_threshold {
            return Ok(Some(PlacedObject {
                catalog_id: Some(entry.id.clone()),
                category: predicted.category,
                center: predicted.center,
                theta: predicted.theta,
                dims: entry.dims,
                out_of_bounds: !crate::scene::geometry::contains(polygon, predicted.xy()),
            }));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Insertion {
    pub placed: Vec<PlacedObject>,
    /// Indices into the predicted list that need a new sample.
    pub resample: Vec<usize>,
}

/// Places `predicted` in order against `scene_so_far`.
pub fn insert_objects(
    predicted: &[ObjectInstance],
    table: &CategoryTable,
    catalog: &Catalog,
    scene_so_far: &[PlacedObject],
    polygon: &[Point],
    cfg: &AssemblyConfig,
) -> Result<Insertion> {
    let mut all = scene_so_far.to_vec();
    let mut placed = Vec::new();
    let mut resample = Vec::new();
    for (i, o) in predicted.iter().enumerate() {
        match place_object(o, table, catalog, &all, polygon, cfg)? {
            Some(p) => {
                all.push(p.clone());
                placed.push(p);
            }
            None => resample.push(i),
        }
    }
    Ok(Insertion { placed, resample })
}

/// Generated scene plus its physical layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledScene {
    /// Token-level result; dropped objects still appear here.
    pub generation: Generation,
    pub placed: Vec<PlacedObject>,
    /// Objects that never fit after every resample.
    pub dropped: Vec<ObjectInstance>,
    pub resamples: usize,
}

impl AssembledScene {
    /// Layout as a scene of placed boxes.
    pub fn scene(&self) -> Scene {
        Scene {
            objects: self.placed.iter().map(PlacedObject::instance).collect(),
            polygon: self.generation.scene.polygon.clone(),
            extent: self.generation.scene.extent,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    set: &ModelSet,
    prepared: crate::sampler::Prepared,
    max_new: Option<usize>,
    catalog: &Catalog,
    sampler: &SamplerConfig,
    cfg: &AssemblyConfig,
    seed: u64,
) -> Result<AssembledScene> {
    let mut state = GenerationState::new(set, prepared.rows(set)?, &prepared.cond, sampler.clone(), seed)?;
    let polygon = prepared.polygon.clone();
    // Given objects are placed as-is.
    let mut placed: Vec<PlacedObject> = Vec::new();
    for o in &prepared.given {
        let p = if set.table.is_opening(o.category) || catalog.count(set.table.name(o.category)) == 0 {
            verbatim(o, &polygon)
        } else {
            let e = retrieve_cad(o.dims, set.table.name(o.category), catalog, 0)?;
            PlacedObject { catalog_id: Some(e.id.clone()), dims: e.dims, ..verbatim(o, &polygon) }
        };
        placed.push(p);
    }
    let mut dropped = Vec::new();
    let mut resamples = 0;
    'outer: while max_new.map_or(true, |n| state.new_objects() < n) {
        let mut attempt = 0;
        loop {
            let Some(row) = state.propose()? else {
                break 'outer;
            };
            let object = dequantize_row(&row, set.extent)?;
            if let Some(p) = place_object(&object, &set.table, catalog, &placed, &polygon, cfg)? {
                placed.push(p);
                state.commit(row);
                break;
            }
            if attempt == cfg.max_resamples {
                dropped.push(object);
                state.commit(row);
                break;
            }
            attempt += 1;
            resamples += 1;
        }
    }
    let generation = finish(set, &state, prepared)?;
    Ok(AssembledScene { generation, placed, dropped, resamples })
}

pub fn generate_assembled(
    set: &ModelSet,
    cond: &SceneCondition,
    catalog: &Catalog,
    sampler: &SamplerConfig,
    cfg: &AssemblyConfig,
    seed: u64,
) -> Result<AssembledScene> {
    assemble(set, prepare_generate(set, cond)?, None, catalog, sampler, cfg, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn complete_assembled(
    set: &ModelSet,
    partial: &Scene,
    text: Option<&Condition>,
    max_new: Option<usize>,
    catalog: &Catalog,
    sampler: &SamplerConfig,
    cfg: &AssemblyConfig,
    seed: u64,
) -> Result<AssembledScene> {
    assemble(set, prepare_complete(set, partial, text)?, max_new, catalog, sampler, cfg, seed)
}

/// Pairs of placed objects whose IoU exceeds `threshold`.
pub fn collisions(placed: &[PlacedObject], threshold: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..placed.len() {
        for j in i + 1..placed.len() {
            let iou = oriented_iou(&placed[i].oriented_box(), &placed[j].oriented_box());
            if iou > threshold {
                out.push((i, j, iou));
            }
        }
    }
    out
}
