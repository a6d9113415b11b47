use serde::{Deserialize, Serialize};

use crate::scene::geometry::{self, contains, convex_intersection_area};
use crate::scene::{ObjectInstance, Scene};

/// Vertical tolerance for "on" and the gap needed for "above".
pub const CONTACT_TOLERANCE: f64 = 0.05;
pub const RELATION_DISTANCE: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationType {
    #[serde(rename = "on")]
    On,
    #[serde(rename = "above")]
    Above,
    #[serde(rename = "surrounding")]
    Surrounding,
    #[serde(rename = "inside")]
    Inside,
    #[serde(rename = "right of")]
    RightOf,
    #[serde(rename = "left of")]
    LeftOf,
    #[serde(rename = "behind")]
    Behind,
    #[serde(rename = "in front of")]
    InFrontOf,
}

impl RelationType {
    pub const ALL: [RelationType; 8] = [
        RelationType::On,
        RelationType::Above,
        RelationType::Surrounding,
        RelationType::Inside,
        RelationType::RightOf,
        RelationType::LeftOf,
        RelationType::Behind,
        RelationType::InFrontOf,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RelationType::On => "on",
            RelationType::Above => "above",
            RelationType::Surrounding => "surrounding",
            RelationType::Inside => "inside",
            RelationType::RightOf => "right of",
            RelationType::LeftOf => "left of",
            RelationType::Behind => "behind",
            RelationType::InFrontOf => "in front of",
        }
    }

    pub fn is_directional(self) -> bool {
        matches!(self, RelationType::RightOf | RelationType::LeftOf | RelationType::Behind | RelationType::InFrontOf)
    }
}

/// `subject` (later in the sequence) relative to `object`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub subject: usize,
    pub kind: RelationType,
    pub object: usize,
    pub distance: f64,
}

fn footprint_inside(inner: &ObjectInstance, outer: &ObjectInstance) -> bool {
    let eps = 1e-9;
    inner.footprint().iter().all(|&p| {
        let q = geometry::rotate([p[0] - outer.center[0], p[1] - outer.center[1]], -outer.theta);
        q[0].abs() <= outer.dims[0] * 0.5 + eps && q[1].abs() <= outer.dims[1] * 0.5 + eps
    })
}

/// Relation of `a` to `b` and the distance between their centers.
///
/// Directions are read in `b`'s frame, whose front is local `+y`: the
/// angle of `a - b` measured counterclockwise from `b`'s front selects
/// in front of `[-45, 45)`, left of `[45, 135)`, behind `[135, 225)` and
/// right of `[225, 315)`.
pub fn classify_relation(a: &ObjectInstance, b: &ObjectInstance) -> (RelationType, f64) {
    let d = [a.center[0] - b.center[0], a.center[1] - b.center[1], a.center[2] - b.center[2]];
    let distance = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let gap = a.bottom() - b.top();
    let b_poly = b.footprint();
    if gap.abs() <= CONTACT_TOLERANCE && contains(&b_poly, a.xy()) {
        return (RelationType::On, distance);
    }
    if gap > CONTACT_TOLERANCE && convex_intersection_area(&a.footprint(), &b_poly) > 0.0 {
        return (RelationType::Above, distance);
    }
    if footprint_inside(b, a) {
        return (RelationType::Surrounding, distance);
    }
    if footprint_inside(a, b) {
        return (RelationType::Inside, distance);
    }
    let local = geometry::rotate([d[0], d[1]], -b.theta);
    let angle = (-local[0]).atan2(local[1]).to_degrees();
    let angle = (angle + 45.0).rem_euclid(360.0) - 45.0;
    let kind = if angle < 45.0 {
        RelationType::InFrontOf
    } else if angle < 135.0 {
        RelationType::LeftOf
    } else if angle < 225.0 {
        RelationType::Behind
    } else {
        RelationType::RightOf
    };
    (kind, distance)
}

/// Relations of each object to every earlier one closer than `threshold`.
pub fn extract_relations(scene: &Scene, threshold: f64) -> Vec<Relation> {
    let mut out = Vec::new();
    for (i, a) in scene.objects.iter().enumerate() {
        for (j, b) in scene.objects[..i].iter().enumerate() {
            let (kind, distance) = classify_relation(a, b);
            if distance < threshold {
                out.push(Relation { subject: i, kind, object: j, distance });
            }
        }
    }
    out
}
