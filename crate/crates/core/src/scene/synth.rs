//! Rule-based bedroom generator.
//!
//! Rooms are axis-aligned rectangles (optionally with one rectangular notch
//! cut from a corner, giving an L shape) placed at a random offset inside the
//! normalization square. Furniture follows fixed rules:
//!
//! * one door and up to two windows on the walls, 5 cm inside the polygon;
//! * a double bed with its head against a wall, always present;
//! * stands flanking the head of the bed;
//! * a television on the wall the bed faces, facing the bed;
//! * wardrobe, dresser, shelving, heater and wall lamp against walls;
//! * a desk against a wall with an office chair pushed in front of it;
//! * a ceiling lamp near the middle of the main rectangle;
//! * an ottoman at the foot of the bed, a plant in a corner and a sofa chair
//!   anywhere free.
//!
//! Every object is rejected and redrawn if its footprint leaves the floor or
//! it overlaps (in 3D) anything already placed, including a clearance zone in
//! front of each door.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::geometry::{self, Point};
use crate::scene::{sort_scene, CategoryTable, ObjectInstance, Scene};

pub const CATEGORY_NAMES: [&str; 16] = [
    "door",
    "window",
    "double bed",
    "stand",
    "wardrobe cabinet",
    "television",
    "desk",
    "office chair",
    "ceiling lamp",
    "dresser",
    "ottoman",
    "shelving",
    "plant",
    "sofa chair",
    "wall lamp",
    "heater",
];

const DOOR: usize = 0;
const WINDOW: usize = 1;
const BED: usize = 2;
const STAND: usize = 3;
const WARDROBE: usize = 4;
const TV: usize = 5;
const DESK: usize = 6;
const CHAIR: usize = 7;
const CEILING_LAMP: usize = 8;
const DRESSER: usize = 9;
const OTTOMAN: usize = 10;
const SHELVING: usize = 11;
const PLANT: usize = 12;
const SOFA_CHAIR: usize = 13;
const WALL_LAMP: usize = 14;
const HEATER: usize = 15;

const WALL_GAP: f64 = 0.01;
const OPENING_INSET: f64 = 0.05;
const DOOR_CLEARANCE: f64 = 0.9;
const PLACEMENT_TRIES: usize = 30;
const ROOM_TRIES: usize = 200;

/// Generator parameters. Probabilities are per scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Side of the normalization square in meters.
    pub extent: f64,
    /// Range of each room side before any notch is cut.
    pub min_side: f64,
    pub max_side: f64,
    /// Space left free on the high side of each axis so that augmentation
    /// jitter keeps the room inside the square.
    pub jitter_margin: f64,
    pub l_shape_prob: f64,
    pub ceiling_height: f64,
    pub first_window_prob: f64,
    pub second_window_prob: f64,
    /// Chance that stands flank the bed (both sides when they fit).
    pub stands_prob: f64,
    pub tv_prob: f64,
    pub wardrobe_prob: f64,
    pub desk_prob: f64,
    /// Chance of a chair given a desk.
    pub chair_prob: f64,
    pub ceiling_lamp_prob: f64,
    pub dresser_prob: f64,
    pub ottoman_prob: f64,
    pub shelving_prob: f64,
    pub plant_prob: f64,
    pub sofa_chair_prob: f64,
    pub wall_lamp_prob: f64,
    pub heater_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            extent: 6.0,
            min_side: 3.0,
            max_side: 4.6,
            jitter_margin: 0.5,
            l_shape_prob: 0.25,
            ceiling_height: 2.6,
            first_window_prob: 0.9,
            second_window_prob: 0.35,
            stands_prob: 0.85,
            tv_prob: 0.9,
            wardrobe_prob: 0.8,
            desk_prob: 0.45,
            chair_prob: 0.9,
            ceiling_lamp_prob: 0.6,
            dresser_prob: 0.2,
            ottoman_prob: 0.15,
            shelving_prob: 0.15,
            plant_prob: 0.2,
            sofa_chair_prob: 0.15,
            wall_lamp_prob: 0.15,
            heater_prob: 0.2,
        }
    }
}

/// Largest bed footprint side plus stand and walking room.
const MIN_FEASIBLE_SIDE: f64 = 2.6;

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.l_shape_prob,
            self.first_window_prob,
            self.second_window_prob,
            self.stands_prob,
            self.tv_prob,
            self.wardrobe_prob,
            self.desk_prob,
            self.chair_prob,
            self.ceiling_lamp_prob,
            self.dresser_prob,
            self.ottoman_prob,
            self.shelving_prob,
            self.plant_prob,
            self.sofa_chair_prob,
            self.wall_lamp_prob,
            self.heater_prob,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        if !(self.min_side <= self.max_side) {
            return Err(Error::Unsatisfiable(format!(
                "min_side {} exceeds max_side {}",
                self.min_side, self.max_side
            )));
        }
        if self.min_side < MIN_FEASIBLE_SIDE {
            return Err(Error::Unsatisfiable(format!(
                "rooms with a {} m side cannot hold the mandatory bed (need {MIN_FEASIBLE_SIDE} m)",
                self.min_side
            )));
        }
        if self.max_side + self.jitter_margin + 0.1 > self.extent {
            return Err(Error::Unsatisfiable(format!(
                "rooms up to {} m plus {} m jitter margin do not fit in the {} m square",
                self.max_side, self.jitter_margin, self.extent
            )));
        }
        if self.ceiling_height < 2.2 || self.ceiling_height >= self.extent {
            return Err(Error::Unsatisfiable(format!("ceiling height {} out of range", self.ceiling_height)));
        }
        Ok(())
    }
}

/// Scenes sorted in canonical order plus the category table whose
/// frequencies are instance counts over the scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub table: CategoryTable,
    pub scenes: Vec<Scene>,
}

/// Per-scene stream seed derived from the dataset seed.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn default_table() -> CategoryTable {
    CategoryTable::new(CATEGORY_NAMES.iter().map(|s| s.to_string()).collect(), vec![0; 16], DOOR, WINDOW)
        .expect("built-in vocabulary is valid")
}

pub fn make_synthetic_dataset(cfg: &SyntheticConfig, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    cfg.validate()?;
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, i as u64));
        raw.push(generate_room(cfg, &mut rng)?);
    }
    let mut counts = vec![0u64; CATEGORY_NAMES.len()];
    for s in &raw {
        for o in &s.objects {
            counts[o.category] += 1;
        }
    }
    let table = default_table().with_frequencies(counts)?;
    let scenes = raw.iter().map(|s| sort_scene(s, &table)).collect::<Result<_>>()?;
    Ok(Dataset { table, scenes })
}

/// One unsorted room drawn from `rng`.
pub fn generate_room<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> Result<Scene> {
    for _ in 0..ROOM_TRIES {
        if let Some(scene) = try_room(cfg, rng) {
            return Ok(scene);
        }
    }
    Err(Error::Unsatisfiable(format!("no valid room after {ROOM_TRIES} attempts")))
}

fn u<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..=hi)
}

fn snap_angle(theta: f64) -> f64 {
    let t = ((theta * 1e6).round() / 1e6).rem_euclid(360.0) + 0.0;
    if t >= 360.0 {
        0.0
    } else {
        t
    }
}

/// Orientation whose front (`+y` local) points along `dir`.
fn facing(dir: Point) -> f64 {
    snap_angle(f64::atan2(-dir[0], dir[1]).to_degrees())
}

fn front(theta: f64) -> Point {
    geometry::rotate([0.0, 1.0], theta)
}

fn room_polygon<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> (Vec<Point>, [Point; 2]) {
    let w = u(rng, cfg.min_side, cfg.max_side);
    let d = u(rng, cfg.min_side, cfg.max_side);
    let hi = cfg.extent - cfg.jitter_margin - 0.05;
    let x0 = u(rng, 0.05, hi - w);
    let y0 = u(rng, 0.05, hi - d);
    let (x1, y1) = (x0 + w, y0 + d);
    let main = [[x0, y0], [x1, y1]];
    if !rng.gen_bool(cfg.l_shape_prob) {
        return (vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]], main);
    }
    let nx = w * u(rng, 0.3, 0.45);
    let ny = d * u(rng, 0.3, 0.45);
    let poly = match rng.gen_range(0..4) {
        0 => vec![[x0 + nx, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0 + ny], [x0 + nx, y0 + ny]],
        1 => vec![[x0, y0], [x1 - nx, y0], [x1 - nx, y0 + ny], [x1, y0 + ny], [x1, y1], [x0, y1]],
        2 => vec![[x0, y0], [x1, y0], [x1, y1 - ny], [x1 - nx, y1 - ny], [x1 - nx, y1], [x0, y1]],
        _ => vec![[x0, y0], [x1, y0], [x1, y1], [x0 + nx, y1], [x0 + nx, y1 - ny], [x0, y1 - ny]],
    };
    (poly, main)
}

struct Room<'a, R: Rng> {
    cfg: &'a SyntheticConfig,
    rng: &'a mut R,
    polygon: Vec<Point>,
    objects: Vec<ObjectInstance>,
    obstacles: Vec<ObjectInstance>,
}

impl<R: Rng> Room<'_, R> {
    fn inside(&self, o: &ObjectInstance) -> bool {
        let fp = o.footprint();
        fp.iter().all(|&c| geometry::contains(&self.polygon, c))
            && self.polygon.iter().all(|&v| !strictly_inside_rect(&fp, v))
            && o.bottom() >= -1e-9
            && o.top() <= self.cfg.ceiling_height + 1e-9
    }

    fn free(&self, o: &ObjectInstance) -> bool {
        self.objects.iter().chain(&self.obstacles).all(|p| !overlaps(o, p))
    }

    fn accept(&mut self, o: ObjectInstance) -> bool {
        if self.inside(&o) && self.free(&o) {
            self.objects.push(o);
            true
        } else {
            false
        }
    }

    /// Random wall position for an object of size `dims` whose back touches
    /// the wall (offset inward by `gap`), vertical center `z`.
    fn wall_candidate(
        &mut self,
        category: usize,
        dims: [f64; 3],
        z: f64,
        gap: f64,
        corner: bool,
        margin: f64,
    ) -> Option<ObjectInstance> {
        let n = self.polygon.len();
        let edges: Vec<usize> = (0..n)
            .filter(|&i| edge_len(&self.polygon, i) >= dims[0] + 2.0 * margin)
            .collect();
        if edges.is_empty() {
            return None;
        }
        let i = edges[self.rng.gen_range(0..edges.len())];
        let (a, b) = (self.polygon[i], self.polygon[(i + 1) % n]);
        let len = edge_len(&self.polygon, i);
        let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        let normal = [-dir[1], dir[0]];
        let lo = dims[0] * 0.5 + margin;
        let hi = len - lo;
        let s = if corner {
            if self.rng.gen_bool(0.5) {
                lo
            } else {
                hi
            }
        } else {
            u(self.rng, lo, hi)
        };
        let off = dims[1] * 0.5 + gap;
        let center = [a[0] + dir[0] * s + normal[0] * off, a[1] + dir[1] * s + normal[1] * off, z];
        ObjectInstance::new(category, center, facing(normal), dims).ok()
    }

    fn place_on_wall(&mut self, category: usize, dims: [f64; 3], z: f64, corner: bool) -> Option<ObjectInstance> {
        self.place_on_wall_with_margin(category, dims, z, corner, 0.05)
    }

    fn place_on_wall_with_margin(
        &mut self,
        category: usize,
        dims: [f64; 3],
        z: f64,
        corner: bool,
        margin: f64,
    ) -> Option<ObjectInstance> {
        for _ in 0..PLACEMENT_TRIES {
            if let Some(o) = self.wall_candidate(category, dims, z, WALL_GAP, corner, margin) {
                if self.accept(o.clone()) {
                    return Some(o);
                }
            }
        }
        None
    }

    fn place_opening(&mut self, category: usize, dims: [f64; 3], z: f64) -> Option<ObjectInstance> {
        for _ in 0..PLACEMENT_TRIES {
            // openings sit in the wall: center 5 cm inside, thin box
            let Some(o) = self.wall_candidate(category, dims, z, OPENING_INSET - dims[1] * 0.5, false, 0.1) else {
                continue;
            };
            if !geometry::contains(&self.polygon, o.xy()) || !self.free(&o) {
                continue;
            }
            if category == DOOR {
                let f = front(o.theta);
                let c = [o.center[0] + f[0] * DOOR_CLEARANCE * 0.5, o.center[1] + f[1] * DOOR_CLEARANCE * 0.5, 1.0];
                let zone = ObjectInstance::new(DOOR, c, o.theta, [o.dims[0] + 0.2, DOOR_CLEARANCE, 2.0]).ok()?;
                if self.obstacles.iter().any(|p| overlaps(&zone, p)) {
                    continue;
                }
                self.obstacles.push(zone);
            }
            self.objects.push(o.clone());
            return Some(o);
        }
        None
    }

    fn place_free(&mut self, category: usize, dims: [f64; 3], bbox: [Point; 2]) -> Option<ObjectInstance> {
        for _ in 0..PLACEMENT_TRIES {
            let x = u(self.rng, bbox[0][0] + 0.4, bbox[1][0] - 0.4);
            let y = u(self.rng, bbox[0][1] + 0.4, bbox[1][1] - 0.4);
            let theta = 90.0 * self.rng.gen_range(0..4) as f64;
            let o = ObjectInstance::new(category, [x, y, dims[2] * 0.5], theta, dims).ok()?;
            if self.accept(o.clone()) {
                return Some(o);
            }
        }
        None
    }

    /// Nearest wall hit from `origin` along `dir`.
    fn raycast(&self, origin: Point, dir: Point) -> Option<f64> {
        let n = self.polygon.len();
        let mut best: Option<f64> = None;
        for i in 0..n {
            let (a, b) = (self.polygon[i], self.polygon[(i + 1) % n]);
            let e = [b[0] - a[0], b[1] - a[1]];
            let den = dir[0] * e[1] - dir[1] * e[0];
            if den.abs() < 1e-12 {
                continue;
            }
            let w = [a[0] - origin[0], a[1] - origin[1]];
            let t = (w[0] * e[1] - w[1] * e[0]) / den;
            let s = (w[0] * dir[1] - w[1] * dir[0]) / den;
            if t > 1e-9 && (-1e-9..=1.0 + 1e-9).contains(&s) {
                best = Some(best.map_or(t, |bt: f64| bt.min(t)));
            }
        }
        best
    }
}

fn edge_len(poly: &[Point], i: usize) -> f64 {
    let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

fn strictly_inside_rect(rect: &[Point; 4], p: Point) -> bool {
    (0..4).all(|i| {
        let (a, b) = (rect[i], rect[(i + 1) % 4]);
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) > 1e-9
    })
}

fn overlaps(a: &ObjectInstance, b: &ObjectInstance) -> bool {
    let vertical = a.top().min(b.top()) - a.bottom().max(b.bottom());
    vertical > 1e-9 && geometry::convex_intersection_area(&a.footprint(), &b.footprint()) > 1e-6
}

fn try_room<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> Option<Scene> {
    let (polygon, main) = room_polygon(cfg, rng);
    let mut room = Room { cfg, rng, polygon, objects: Vec::new(), obstacles: Vec::new() };
    let h = cfg.ceiling_height;

    let door = [u(room.rng, 0.8, 1.0), 0.1, u(room.rng, 2.0, 2.1)];
    room.place_opening(DOOR, door, door[2] * 0.5)?;
    if room.rng.gen_bool(cfg.first_window_prob) {
        let dims = [u(room.rng, 0.8, 1.6), 0.1, u(room.rng, 0.8, 1.1)];
        room.place_opening(WINDOW, dims, 1.7);
        if room.rng.gen_bool(cfg.second_window_prob) {
            let dims = [u(room.rng, 0.8, 1.6), 0.1, u(room.rng, 0.8, 1.1)];
            room.place_opening(WINDOW, dims, 1.7);
        }
    }

    let bed_dims = [u(room.rng, 1.4, 1.8), u(room.rng, 1.9, 2.1), u(room.rng, 0.45, 0.6)];
    // leave room for a stand on each side when the wall allows it
    let bed = room
        .place_on_wall_with_margin(BED, bed_dims, bed_dims[2] * 0.5, false, 0.6)
        .or_else(|| room.place_on_wall(BED, bed_dims, bed_dims[2] * 0.5, false))?;
    let bed_front = front(bed.theta);
    let bed_side = geometry::rotate([1.0, 0.0], bed.theta);

    if room.rng.gen_bool(cfg.stands_prob) {
        let dims = [u(room.rng, 0.4, 0.5), u(room.rng, 0.35, 0.45), u(room.rng, 0.5, 0.6)];
        let along = bed.dims[0] * 0.5 + 0.05 + dims[0] * 0.5;
        let back = -bed.dims[1] * 0.5 + dims[1] * 0.5;
        for sign in [-1.0, 1.0] {
            let c = [
                bed.center[0] + bed_side[0] * along * sign + bed_front[0] * back,
                bed.center[1] + bed_side[1] * along * sign + bed_front[1] * back,
                dims[2] * 0.5,
            ];
            if let Ok(o) = ObjectInstance::new(STAND, c, bed.theta, dims) {
                room.accept(o);
            }
        }
    }

    if room.rng.gen_bool(cfg.tv_prob) {
        // television on its low cabinet, as one box
        let dims = [u(room.rng, 0.9, 1.3), u(room.rng, 0.35, 0.45), u(room.rng, 0.8, 1.0)];
        let z = dims[2] * 0.5;
        if let Some(t) = room.raycast(bed.xy(), bed_front) {
            let back = t - dims[1] * 0.5 - WALL_GAP;
            let theta = facing([-bed_front[0], -bed_front[1]]);
            for shift in [0.0, 0.4, -0.4, 0.8, -0.8, 1.2, -1.2] {
                let c = [
                    bed.center[0] + bed_front[0] * back + bed_side[0] * shift,
                    bed.center[1] + bed_front[1] * back + bed_side[1] * shift,
                    z,
                ];
                if ObjectInstance::new(TV, c, theta, dims).is_ok_and(|o| room.accept(o)) {
                    break;
                }
            }
        }
    }

    if room.rng.gen_bool(cfg.wardrobe_prob) {
        let dims = [u(room.rng, 1.0, 1.8), u(room.rng, 0.55, 0.65), u(room.rng, 1.9, 2.2)];
        room.place_on_wall(WARDROBE, dims, dims[2] * 0.5, false);
    }

    if room.rng.gen_bool(cfg.desk_prob) {
        let dims = [u(room.rng, 1.0, 1.4), u(room.rng, 0.55, 0.7), u(room.rng, 0.72, 0.76)];
        let with_chair = room.rng.gen_bool(cfg.chair_prob);
        let cd = [u(room.rng, 0.5, 0.6), u(room.rng, 0.5, 0.6), u(room.rng, 0.9, 1.1)];
        for _ in 0..PLACEMENT_TRIES {
            let Some(desk) = room.wall_candidate(DESK, dims, dims[2] * 0.5, WALL_GAP, false, 0.05) else {
                continue;
            };
            if !room.accept(desk.clone()) {
                continue;
            }
            if !with_chair {
                break;
            }
            let f = front(desk.theta);
            let off = desk.dims[1] * 0.5 + cd[1] * 0.5 + 0.05;
            let c = [desk.center[0] + f[0] * off, desk.center[1] + f[1] * off, cd[2] * 0.5];
            if ObjectInstance::new(CHAIR, c, snap_angle(desk.theta + 180.0), cd).is_ok_and(|o| room.accept(o)) {
                break;
            }
            room.objects.pop();
        }
    }

    if room.rng.gen_bool(cfg.ceiling_lamp_prob) {
        let s = u(room.rng, 0.3, 0.6);
        let dims = [s, s, u(room.rng, 0.15, 0.3)];
        let c = [
            (main[0][0] + main[1][0]) * 0.5 + u(room.rng, -0.2, 0.2),
            (main[0][1] + main[1][1]) * 0.5 + u(room.rng, -0.2, 0.2),
            h - dims[2] * 0.5,
        ];
        if let Ok(o) = ObjectInstance::new(CEILING_LAMP, c, 0.0, dims) {
            room.accept(o);
        }
    }

    if room.rng.gen_bool(cfg.dresser_prob) {
        let dims = [u(room.rng, 0.8, 1.2), u(room.rng, 0.45, 0.55), u(room.rng, 0.8, 1.0)];
        room.place_on_wall(DRESSER, dims, dims[2] * 0.5, false);
    }

    if room.rng.gen_bool(cfg.ottoman_prob) {
        let dims = [u(room.rng, 0.4, 0.6), u(room.rng, 0.4, 0.6), u(room.rng, 0.4, 0.45)];
        let off = bed.dims[1] * 0.5 + 0.1 + dims[1] * 0.5;
        let c = [bed.center[0] + bed_front[0] * off, bed.center[1] + bed_front[1] * off, dims[2] * 0.5];
        if let Ok(o) = ObjectInstance::new(OTTOMAN, c, bed.theta, dims) {
            room.accept(o);
        }
    }

    if room.rng.gen_bool(cfg.shelving_prob) {
        let dims = [u(room.rng, 0.6, 1.0), u(room.rng, 0.3, 0.4), u(room.rng, 1.5, 2.0)];
        room.place_on_wall(SHELVING, dims, dims[2] * 0.5, false);
    }

    if room.rng.gen_bool(cfg.plant_prob) {
        let s = u(room.rng, 0.3, 0.5);
        let dims = [s, s, u(room.rng, 0.6, 1.2)];
        room.place_on_wall(PLANT, dims, dims[2] * 0.5, true);
    }

    if room.rng.gen_bool(cfg.sofa_chair_prob) {
        let dims = [u(room.rng, 0.7, 0.9), u(room.rng, 0.7, 0.9), u(room.rng, 0.8, 0.95)];
        room.place_free(SOFA_CHAIR, dims, main);
    }

    if room.rng.gen_bool(cfg.wall_lamp_prob) {
        let dims = [u(room.rng, 0.15, 0.25), u(room.rng, 0.1, 0.2), u(room.rng, 0.2, 0.3)];
        room.place_on_wall(WALL_LAMP, dims, 1.6, false);
    }

    if room.rng.gen_bool(cfg.heater_prob) {
        let dims = [u(room.rng, 0.6, 1.2), u(room.rng, 0.1, 0.15), u(room.rng, 0.5, 0.7)];
        room.place_on_wall(HEATER, dims, 0.1 + dims[2] * 0.5, false);
    }

    Some(Scene { objects: room.objects, polygon: room.polygon, extent: cfg.extent })
}
