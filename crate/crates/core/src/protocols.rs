//! Indentation patterns, depth sweeps and dataset files.
//!
//! A dataset file is plain text. A block of `# key = value` header lines
//! (TOML once the `# ` prefix is stripped) is followed by one sample per
//! line: `x, y, d` and the 72 raw readings grouped by state, 75 numbers in
//! all.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Seed;
use crate::sensor::{
    extract_features, FeatureVector, SensorConfig, SignalFrame, TraceCache, N_RECEIVERS, N_STATES,
};
use crate::surface::IndenterState;

pub const DATASET_SCHEMA: &str = "edgelit-dataset/1";
pub const SAMPLE_FIELDS: usize = 3 + N_STATES * N_RECEIVERS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Grid,
    Random,
}

impl std::fmt::Display for PatternKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PatternKind::Grid => "grid",
            PatternKind::Random => "random",
        })
    }
}

/// Indentation locations in visit order.
#[derive(Clone, Debug, PartialEq)]
pub struct Pattern {
    pub kind: PatternKind,
    pub locations: Vec<(f64, f64)>,
}

/// Snaps to a 1 um grid so that `k * step` prints as the intended decimal.
fn micron(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Regular lattice over the centered square of side `active_side`, visited
/// in a seeded random order. `margin` is the clearance the tip needs between
/// the outermost locations and the cavity wall.
pub fn grid_pattern(
    active_side: f64,
    spacing: f64,
    margin: f64,
    cavity_side: f64,
    seed: Seed,
) -> Result<Pattern> {
    if !(spacing > 0.0 && active_side >= 0.0 && margin >= 0.0) {
        return Err(Error::invalid("grid spacing must be positive"));
    }
    let half = 0.5 * active_side;
    if half + margin > 0.5 * cavity_side {
        return Err(Error::invalid(format!(
            "grid of side {active_side} mm with {margin} mm margin does not fit a {cavity_side} mm cavity"
        )));
    }
    let per_axis = (active_side / spacing + 1e-9).floor() as usize + 1;
    if per_axis == 0 {
        return Err(Error::invalid("empty grid"));
    }
    let mut locations = Vec::with_capacity(per_axis * per_axis);
    for i in 0..per_axis {
        for j in 0..per_axis {
            locations.push((micron(-half + i as f64 * spacing), micron(-half + j as f64 * spacing)));
        }
    }
    locations.shuffle(&mut seed.derive("pattern", 0).rng());
    Ok(Pattern {
        kind: PatternKind::Grid,
        locations,
    })
}

/// `count` locations drawn uniformly over the centered active square.
pub fn random_pattern(count: usize, active_side: f64, seed: Seed) -> Result<Pattern> {
    if count == 0 {
        return Err(Error::invalid("random pattern needs at least one location"));
    }
    if !(active_side >= 0.0) {
        return Err(Error::invalid("active side must be non-negative"));
    }
    let half = 0.5 * active_side;
    let mut rng = seed.derive("pattern", 1).rng();
    let locations = (0..count)
        .map(|_| {
            let x = rng.random::<f64>() * active_side - half;
            let y = rng.random::<f64>() * active_side - half;
            (x, y)
        })
        .collect();
    Ok(Pattern {
        kind: PatternKind::Random,
        locations,
    })
}

/// Depth protocol followed at every location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSchedule {
    /// Tip heights above the surface during the approach, in visit order.
    pub hover_mm: Vec<f64>,
    pub contact_max_mm: f64,
    pub contact_step_mm: f64,
    /// Retrace the contact and hover depths in reverse after the deepest one.
    pub mirrored: bool,
    /// Half-width of uniform jitter applied to the depth actually scanned;
    /// the recorded depth stays nominal.
    #[serde(default)]
    pub depth_jitter_mm: f64,
}

impl Default for SweepSchedule {
    fn default() -> Self {
        SweepSchedule {
            hover_mm: (1..=10).rev().map(|k| -(k as f64)).collect(),
            contact_max_mm: 5.0,
            contact_step_mm: 0.1,
            mirrored: true,
            depth_jitter_mm: 0.0,
        }
    }
}

impl SweepSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.contact_step_mm > 0.0) || !(self.contact_max_mm >= 0.0) {
            return Err(Error::Config("contact step must be positive and range non-negative".into()));
        }
        if self.hover_mm.iter().any(|&h| !(h < 0.0)) {
            return Err(Error::Config("hover depths must be negative".into()));
        }
        if self.hover_mm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("hover depths must approach the surface".into()));
        }
        if !(self.depth_jitter_mm >= 0.0) {
            return Err(Error::Config("depth jitter must be non-negative".into()));
        }
        Ok(())
    }

    /// Every depth visited at one location, in order.
    pub fn depths(&self) -> Vec<f64> {
        let steps = (self.contact_max_mm / self.contact_step_mm + 1e-9).floor() as usize;
        let contact: Vec<f64> = (0..=steps)
            .map(|k| micron(k as f64 * self.contact_step_mm))
            .collect();
        let mut out = self.hover_mm.clone();
        out.extend(&contact);
        if self.mirrored {
            out.extend(contact.iter().rev().skip(1));
            out.extend(self.hover_mm.iter().rev());
        }
        out
    }

    pub fn samples_per_location(&self) -> usize {
        self.depths().len()
    }
}

/// One indentation record: location, nominal depth and the raw 9 x 8 scan.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub y: f64,
    pub d: f64,
    pub frame: SignalFrame,
}

impl Sample {
    pub fn features(&self) -> FeatureVector {
        extract_features(&self.frame)
    }

    pub fn in_contact(&self) -> bool {
        self.d >= 0.0
    }

    /// The 75 numbers in file order.
    pub fn fields(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(SAMPLE_FIELDS);
        v.extend([self.x, self.y, self.d]);
        v.extend(self.frame.flat());
        v
    }

    pub fn from_fields(f: &[f64]) -> Result<Self> {
        if f.len() != SAMPLE_FIELDS {
            return Err(Error::invalid(format!(
                "sample needs {SAMPLE_FIELDS} numbers, got {}",
                f.len()
            )));
        }
        Ok(Sample {
            x: f[0],
            y: f[1],
            d: f[2],
            frame: SignalFrame::from_flat(&f[3..])?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema: String,
    pub seed: u64,
    pub transport_seed: u64,
    pub config_hash: String,
    pub pattern: PatternKind,
    pub ambient_level: f64,
    pub noise_sigma: f64,
    pub locations: usize,
    pub samples_per_location: usize,
    pub columns: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

fn column_names() -> String {
    let mut s = String::from("x,y,d");
    for j in 1..=N_STATES {
        for k in 1..=N_RECEIVERS {
            let _ = write!(s, ",p{j}_{k}");
        }
    }
    s
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "dataset",
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

impl Dataset {
    pub fn to_text(&self) -> String {
        let header = toml::to_string(&self.meta).expect("dataset header serializes");
        let mut out = String::new();
        for line in header.lines() {
            let _ = writeln!(out, "# {line}");
        }
        for s in &self.samples {
            let f = s.fields();
            let mut first = true;
            for v in f {
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut header = String::new();
        let mut samples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if let Some(h) = line.strip_prefix('#') {
                if !samples.is_empty() {
                    return Err(fmt_err(path, format!("line {}: header after data", n + 1)));
                }
                header.push_str(h.strip_prefix(' ').unwrap_or(h));
                header.push('\n');
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| fmt_err(path, format!("line {}: {e}", n + 1)))?;
            let s = Sample::from_fields(&fields)
                .map_err(|e| fmt_err(path, format!("line {}: {e}", n + 1)))?;
            samples.push(s);
        }
        let meta: DatasetMeta =
            toml::from_str(&header).map_err(|e| fmt_err(path, format!("header: {e}")))?;
        if meta.schema != DATASET_SCHEMA {
            return Err(fmt_err(path, format!("unsupported schema {:?}", meta.schema)));
        }
        if meta.locations * meta.samples_per_location != samples.len() {
            return Err(fmt_err(
                path,
                format!(
                    "header promises {} x {} samples, found {}",
                    meta.locations,
                    meta.samples_per_location,
                    samples.len()
                ),
            ));
        }
        Ok(Dataset { meta, samples })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::parse(&text, path)
    }

    pub fn features(&self) -> Vec<FeatureVector> {
        self.samples.iter().map(Sample::features).collect()
    }

    /// Fails unless every dataset was recorded on the same sensor geometry.
    pub fn check_same_sensor(sets: &[&Dataset]) -> Result<String> {
        let first = sets
            .first()
            .ok_or_else(|| Error::invalid("no datasets given"))?
            .meta
            .config_hash
            .clone();
        for s in sets {
            if s.meta.config_hash != first {
                return Err(Error::HashMismatch {
                    expected: first,
                    found: s.meta.config_hash.clone(),
                });
            }
        }
        Ok(first)
    }
}

/// Runs the sweep at every pattern location with a fresh trace cache whose
/// ray fans descend from `seed`.
pub fn collect(
    config: &SensorConfig,
    pattern: &Pattern,
    schedule: &SweepSchedule,
    seed: Seed,
) -> Result<Dataset> {
    let transport = seed.derive("transport", 0);
    let cache = TraceCache::new(config, transport)?;
    collect_with(&cache, config.ambient_level, config.noise_sigma, pattern, schedule, seed, transport)
}

/// As [`collect`], reusing traces from `cache`. Datasets that share a cache
/// see the same ray fans and differ only in pattern, lighting and noise.
pub fn collect_with(
    cache: &TraceCache,
    ambient_level: f64,
    noise_sigma: f64,
    pattern: &Pattern,
    schedule: &SweepSchedule,
    seed: Seed,
    transport_seed: Seed,
) -> Result<Dataset> {
    schedule.validate()?;
    if pattern.locations.is_empty() {
        return Err(Error::invalid("pattern has no locations"));
    }
    let depths = schedule.depths();
    let per_location: Vec<Vec<Sample>> = pattern
        .locations
        .par_iter()
        .enumerate()
        .map(|(li, &(x, y))| {
            let loc_seed = seed.derive("scan", li as u64);
            let mut jitter = loc_seed.derive("jitter", 0).rng();
            depths
                .iter()
                .enumerate()
                .map(|(di, &d)| {
                    let actual = if schedule.depth_jitter_mm > 0.0 {
                        let j = schedule.depth_jitter_mm;
                        d + jitter.random_range(-j..=j)
                    } else {
                        d
                    };
                    let ind = IndenterState::new(x, y, actual);
                    let frame = cache.scan_with(&ind, ambient_level, noise_sigma, loc_seed.derive("noise", di as u64))?;
                    Ok(Sample { x, y, d, frame })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            schema: DATASET_SCHEMA.into(),
            seed: seed.0,
            transport_seed: transport_seed.0,
            config_hash: cache.config().config_hash(),
            pattern: pattern.kind,
            ambient_level,
            noise_sigma,
            locations: pattern.locations.len(),
            samples_per_location: depths.len(),
            columns: column_names(),
        },
        samples: per_location.into_iter().flatten().collect(),
    })
}
