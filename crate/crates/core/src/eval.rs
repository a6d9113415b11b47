//! Relative-location heatmaps, text category accuracy with baselines,
//! in-room rate and wall-clock timing.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::geometry::{contains, rotate, Point};
use crate::scene::{CategoryTable, ObjectInstance, Scene, MAX_OBJECTS};

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_RANGE: f64 = 3.0;

/// Counts of `other` centers in the frame of each `anchor` (front is `+y`).
/// Cell `(ix, iy)` lives at `counts[iy * bins + ix]`, with `ix` growing
/// with local `x` and `iy` with local `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub anchor: usize,
    pub other: usize,
    pub bins: usize,
    pub range: f64,
    pub counts: Vec<u64>,
    /// Pairs inside the grid; equals the sum of `counts`.
    pub samples: u64,
    /// Pairs that fell outside `±range`.
    pub dropped: u64,
}

impl Heatmap {
    pub fn get(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.bins + ix]
    }

    /// Fullest cell among those accepted by `keep`; ties go to the lowest index.
    pub fn peak_where(&self, keep: impl Fn(usize, usize) -> bool) -> Option<(usize, usize, u64)> {
        let mut best: Option<(usize, usize, u64)> = None;
        for iy in 0..self.bins {
            for ix in 0..self.bins {
                let c = self.get(ix, iy);
                if c > 0 && keep(ix, iy) && best.map_or(true, |b| c > b.2) {
                    best = Some((ix, iy, c));
                }
            }
        }
        best
    }

    /// Metric center of a cell in the anchor frame.
    pub fn cell_center(&self, ix: usize, iy: usize) -> Point {
        let w = 2.0 * self.range / self.bins as f64;
        [-self.range + (ix as f64 + 0.5) * w, -self.range + (iy as f64 + 0.5) * w]
    }

    /// Binary PGM scaled so the fullest cell is white; `+y` is up.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let mut out = format!("P5\n{} {}\n255\n", self.bins, self.bins).into_bytes();
        for iy in (0..self.bins).rev() {
            for ix in 0..self.bins {
                out.push((self.get(ix, iy) as f64 / max * 255.0).round() as u8);
            }
        }
        out
    }

    /// Writes `<stem>.pgm` and a `<stem>.json` sidecar.
    pub fn save(&self, stem: &Path, table: &CategoryTable) -> Result<()> {
        std::fs::write(stem.with_extension("pgm"), self.to_pgm())?;
        let meta = serde_json::json!({
            "anchor": table.name(self.anchor),
            "other": table.name(self.other),
            "bins": self.bins,
            "range_m": self.range,
            "samples": self.samples,
            "dropped": self.dropped,
            "max_count": self.counts.iter().max(),
        });
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }
}

pub fn pairwise_heatmap(scenes: &[Scene], anchor: usize, other: usize, bins: usize, range: f64) -> Result<Heatmap> {
    if bins < 2 {
        return Err(Error::invalid(format!("heatmap needs at least 2 bins, got {bins}")));
    }
    if !(range > 0.0) {
        return Err(Error::invalid(format!("heatmap range must be positive, got {range}")));
    }
    let mut h = Heatmap { anchor, other, bins, range, counts: vec![0; bins * bins], samples: 0, dropped: 0 };
    let cell = 2.0 * range / bins as f64;
    for s in scenes {
        for (i, a) in s.objects.iter().enumerate().filter(|(_, o)| o.category == anchor) {
            for (j, o) in s.objects.iter().enumerate().filter(|(_, o)| o.category == other) {
                if i == j {
                    continue;
                }
                let p = rotate([o.center[0] - a.center[0], o.center[1] - a.center[1]], -a.theta);
                let (fx, fy) = (((p[0] + range) / cell).floor(), ((p[1] + range) / cell).floor());
                if fx < 0.0 || fy < 0.0 || fx >= bins as f64 || fy >= bins as f64 {
                    h.dropped += 1;
                    continue;
                }
                h.counts[fy as usize * bins + fx as usize] += 1;
                h.samples += 1;
            }
        }
    }
    Ok(h)
}

/// `|mentioned ∩ generated| / |mentioned|` with multiset semantics; `None`
/// when nothing is mentioned.
pub fn pair_accuracy<S: AsRef<str>, T: AsRef<str>>(mentioned: &[S], generated: &[T]) -> Option<f64> {
    if mentioned.is_empty() {
        return None;
    }
    let mut have: HashMap<&str, usize> = HashMap::new();
    for g in generated {
        *have.entry(g.as_ref()).or_default() += 1;
    }
    let mut hit = 0;
    for m in mentioned {
        if let Some(n) = have.get_mut(m.as_ref()).filter(|n| **n > 0) {
            *n -= 1;
            hit += 1;
        }
    }
    Some(hit as f64 / mentioned.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Mean over scored pairs, in percent.
    pub percent: f64,
    pub scored: usize,
    /// Pairs without mentioned objects.
    pub skipped: usize,
}

/// Mean multiset category accuracy of `(mentioned, generated)` name lists.
pub fn category_accuracy<S: AsRef<str>, T: AsRef<str>>(pairs: &[(Vec<S>, Vec<T>)]) -> Accuracy {
    let scores: Vec<f64> = pairs.iter().filter_map(|(m, g)| pair_accuracy(m, g)).collect();
    let percent = if scores.is_empty() { 0.0 } else { 100.0 * scores.iter().sum::<f64>() / scores.len() as f64 };
    Accuracy { percent, scored: scores.len(), skipped: pairs.len() - scores.len() }
}

pub fn scene_category_names(objects: &[ObjectInstance], table: &CategoryTable) -> Vec<String> {
    objects.iter().map(|o| table.name(o.category).to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Every furniture category and stop equally likely.
    Uniform,
    /// Training frequencies, stop weighted by their mean.
    GtFrequency,
}

/// Category weights of `kind` over furniture categories, followed by the
/// stop weight.
pub fn baseline_weights(kind: Baseline, table: &CategoryTable) -> (Vec<usize>, Vec<f64>) {
    let cats: Vec<usize> = table.object_categories().collect();
    let mut w: Vec<f64> = match kind {
        Baseline::Uniform => vec![1.0; cats.len()],
        Baseline::GtFrequency => cats.iter().map(|&c| table.frequency(c) as f64).collect(),
    };
    let stop = match kind {
        Baseline::Uniform => 1.0,
        Baseline::GtFrequency => w.iter().sum::<f64>() / w.len().max(1) as f64,
    };
    w.push(stop);
    (cats, w)
}

/// Categories drawn until stop or the object cap.
pub fn baseline_sampler<R: Rng>(kind: Baseline, table: &CategoryTable, rng: &mut R) -> Result<Vec<usize>> {
    let (cats, w) = baseline_weights(kind, table);
    let dist = rand::distributions::WeightedIndex::new(&w).map_err(|e| Error::invalid(format!("baseline weights: {e}")))?;
    let mut out = Vec::new();
    while out.len() < MAX_OBJECTS {
        let k = rng.sample(&dist);
        if k == cats.len() {
            break;
        }
        out.push(cats[k]);
    }
    Ok(out)
}

/// Objects whose footprint center lies inside `polygon`.
pub fn in_room_count(objects: &[ObjectInstance], polygon: &[Point]) -> usize {
    objects.iter().filter(|o| contains(polygon, o.xy())).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    pub sample_size: usize,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardware: Option<String>,
}

impl MetricReport {
    pub fn new(metric: impl Into<String>, value: f64, sample_size: usize, config_hash: impl Into<String>) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::invalid(format!("metric value must be finite, got {value}")));
        }
        Ok(Self { metric: metric.into(), value, sd: None, sample_size, config_hash: config_hash.into(), hardware: None })
    }

    pub fn append_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{}", serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Short stable hash of a serializable config.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(format!("{:08x}", crc32fast::hash(serde_json::to_string(config)?.as_bytes())))
}

pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|s| s.trim().to_string()))
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu}; {} {}; {threads} hardware threads; single-threaded run", std::env::consts::OS, std::env::consts::ARCH)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean: f64,
    /// Sample standard deviation; 0 for one run.
    pub sd: f64,
    pub runs: usize,
}

/// Seconds per call of `run` over `n_runs` calls.
pub fn timing_benchmark(n_runs: usize, mut run: impl FnMut(usize) -> Result<()>) -> Result<Timing> {
    if n_runs == 0 {
        return Err(Error::invalid("timing needs at least one run"));
    }
    let mut secs = Vec::with_capacity(n_runs);
    for i in 0..n_runs {
        let t = Instant::now();
        run(i)?;
        secs.push(t.elapsed().as_secs_f64());
    }
    let mean = secs.iter().sum::<f64>() / n_runs as f64;
    let sd = if n_runs > 1 {
        (secs.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n_runs - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Timing { mean, sd, runs: n_runs })
}
