//! JSON scene files and dataset directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{CategoryTable, Dataset, ObjectInstance, Point, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub category: String,
    pub center: [f64; 3],
    pub theta: f64,
    pub dims: [f64; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorRecord {
    pub polygon: Vec<Point>,
}

/// On-disk and over-the-wire scene layout; categories are names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    #[serde(default)]
    pub categories: Vec<String>,
    pub objects: Vec<ObjectRecord>,
    pub floor: FloorRecord,
    pub extent: f64,
}

impl SceneFile {
    pub fn from_scene(scene: &Scene, table: &CategoryTable) -> Self {
        let objects = scene
            .objects
            .iter()
            .map(|o| {
                let mut flags = Vec::new();
                if table.is_door(o.category) {
                    flags.push("door".to_string());
                }
                if table.is_window(o.category) {
                    flags.push("window".to_string());
                }
                ObjectRecord {
                    category: table.name(o.category).to_string(),
                    center: o.center,
                    theta: o.theta,
                    dims: o.dims,
                    flags,
                }
            })
            .collect();
        SceneFile {
            categories: table.names().to_vec(),
            objects,
            floor: FloorRecord { polygon: scene.polygon.clone() },
            extent: scene.extent,
        }
    }

    /// Resolves category names against `table`; object order is kept.
    pub fn to_scene(&self, table: &CategoryTable) -> Result<Scene> {
        if !(self.extent > 0.0) {
            return Err(Error::invalid(format!("extent must be positive, got {}", self.extent)));
        }
        let objects = self
            .objects
            .iter()
            .map(|r| ObjectInstance::new(table.index(&r.category)?, r.center, r.theta, r.dims))
            .collect::<Result<_>>()?;
        Ok(Scene { objects, polygon: self.floor.polygon.clone(), extent: self.extent })
    }
}

pub fn write_scene(path: &Path, scene: &Scene, table: &CategoryTable) -> Result<()> {
    let json = serde_json::to_string_pretty(&SceneFile::from_scene(scene, table))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_scene_file(path: &Path) -> Result<SceneFile> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn read_scene(path: &Path, table: &CategoryTable) -> Result<Scene> {
    read_scene_file(path)?.to_scene(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub table: CategoryTable,
    pub scenes: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn scene_file_name(index: usize) -> String {
    format!("scene_{index:05}.json")
}

/// Writes one JSON file per scene plus `manifest.json` with the category
/// table and frequencies.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(data.scenes.len());
    for (i, s) in data.scenes.iter().enumerate() {
        let name = scene_file_name(i);
        write_scene(&dir.join(&name), s, &data.table)?;
        names.push(name);
    }
    let manifest = Manifest { table: data.table.clone(), scenes: names };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path, reason: e.to_string() })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let scenes = manifest
        .scenes
        .iter()
        .map(|name| read_scene(&dir.join(name), &manifest.table))
        .collect::<Result<_>>()?;
    Ok(Dataset { table: manifest.table, scenes })
}

pub fn scene_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(load_manifest(dir)?.scenes.iter().map(|n| dir.join(n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synth::{make_synthetic_dataset, SyntheticConfig};

    #[test]
    fn dataset_round_trip() {
        let data = make_synthetic_dataset(&SyntheticConfig::default(), 5, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), data);
        assert_eq!(scene_paths(dir.path()).unwrap().len(), 5);
    }

    #[test]
    fn door_flags_written() {
        let data = make_synthetic_dataset(&SyntheticConfig::default(), 1, 3).unwrap();
        let file = SceneFile::from_scene(&data.scenes[0], &data.table);
        assert_eq!(file.objects[0].flags, vec!["door".to_string()]);
        assert_eq!(file.categories.len(), 16);
    }

    #[test]
    fn unknown_category_rejected() {
        let data = make_synthetic_dataset(&SyntheticConfig::default(), 1, 3).unwrap();
        let mut file = SceneFile::from_scene(&data.scenes[0], &data.table);
        file.objects[0].category = "piano".into();
        assert!(matches!(file.to_scene(&data.table), Err(Error::UnknownCategory(_))));
    }
}
