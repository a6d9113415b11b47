//! JSON bodies shared by the CLI files and the /v1 service.

use serde::{Deserialize, Serialize};

use sceneformer_core::assembly::PlacedObject;
use sceneformer_core::model::Conditioning;
use sceneformer_core::scene::io::{ObjectRecord, SceneFile};
use sceneformer_core::scene::{CategoryTable, FloorPlan, ObjectInstance, Point};
use sceneformer_core::text::describe::MentionedCategory;
use sceneformer_core::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unconditional,
    Shape,
    Text,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Unconditional => "unconditional",
            Mode::Shape => "shape",
            Mode::Text => "text",
        }
    }
}

impl From<Mode> for Conditioning {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Unconditional => Conditioning::None,
            Mode::Shape => Conditioning::Shape,
            Mode::Text => Conditioning::Text,
        }
    }
}

impl From<Conditioning> for Mode {
    fn from(c: Conditioning) -> Self {
        match c {
            Conditioning::None => Mode::Unconditional,
            Conditioning::Shape => Mode::Shape,
            Conditioning::Text => Mode::Text,
        }
    }
}

/// Floor polygon plus doors and windows, as drawn by a user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorFile {
    pub polygon: Vec<Point>,
    #[serde(default)]
    pub openings: Vec<ObjectRecord>,
}

impl FloorFile {
    pub fn to_plan(&self, table: &CategoryTable) -> Result<FloorPlan> {
        let openings = self
            .openings
            .iter()
            .map(|r| ObjectInstance::new(table.index(&r.category)?, r.center, r.theta, r.dims))
            .collect::<Result<_>>()?;
        Ok(FloorPlan { polygon: self.polygon.clone(), openings })
    }

    /// Polygon and doors/windows of an existing scene.
    pub fn from_scene_file(scene: &SceneFile) -> Self {
        let openings = scene
            .objects
            .iter()
            .filter(|o| o.flags.iter().any(|f| f == "door" || f == "window"))
            .cloned()
            .collect();
        FloorFile { polygon: scene.floor.polygon.clone(), openings }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedRecord {
    pub category: String,
    /// Absent for objects placed with their predicted box.
    pub catalog_id: Option<String>,
    pub center: [f64; 3],
    pub theta: f64,
    pub dims: [f64; 3],
    pub out_of_bounds: bool,
}

impl PlacedRecord {
    pub fn new(p: &PlacedObject, table: &CategoryTable) -> Self {
        PlacedRecord {
            category: table.name(p.category).to_string(),
            catalog_id: p.catalog_id.clone(),
            center: p.center,
            theta: p.theta,
            dims: p.dims,
            out_of_bounds: p.out_of_bounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub loaded_modes: Vec<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterizeRequest {
    pub polygon: Vec<Point>,
    /// Defaults to the loaded models' resolution.
    #[serde(default)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterizeResponse {
    /// One byte per pixel (0 or 255), row-major, row 0 at y = 0.
    pub mask_base64: String,
    pub resolution: usize,
    pub extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub mode: Mode,
    #[serde(default)]
    pub floor: Option<FloorFile>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub seed: u64,
    /// Token-level objects, dropped ones included.
    pub scene: SceneFile,
    pub placed_objects: Vec<PlacedRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteCondition {
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteRequest {
    pub scene: SceneFile,
    pub mode: Mode,
    #[serde(default)]
    pub condition: CompleteCondition,
    /// `None` completes until a model stops.
    #[serde(default)]
    pub max_new: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub seed: u64,
    pub scene: SceneFile,
    /// Indices into `scene.objects` of the generated objects.
    pub added_indices: Vec<usize>,
    pub placed_objects: Vec<PlacedRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescribeRequest {
    pub scene: SceneFile,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeResponse {
    pub seed: u64,
    pub sentences: Vec<String>,
    pub mentioned: Vec<MentionedCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}
