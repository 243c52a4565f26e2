//! Experiment plans and the actions behind each subcommand.
//!
//! A plan is a TOML file naming the sensor, the sweep schedules, the datasets
//! to record and how to train and evaluate on them. All seeds descend from
//! the plan's master seed unless a dataset pins its own.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    arrow_field_export, evaluate, to_csv, to_text, DepthSliceMetrics, CLASSIFICATION_SLICES,
    REGRESSION_SLICES,
};
use crate::learning::{log_grid, train, TrainParams, TwoStageModel};
use crate::protocols::{
    collect_with, grid_pattern, random_pattern, Dataset, PatternKind, SweepSchedule,
};
use crate::seed::Seed;
use crate::sensor::{SensorConfig, TraceCache};
use crate::transport::{deadband_profile, detect_deadband, Deadband};

pub const PLAN_SCHEMA: &str = "edgelit-plan/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub pattern: PatternKind,
    /// Number of locations for a random pattern.
    #[serde(default)]
    pub count: Option<usize>,
    pub schedule: String,
    pub ambient_level: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub datasets: Vec<String>,
    pub svm_c: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub lambda_points: usize,
    pub gamma_points: usize,
    pub max_regression_samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            datasets: Vec::new(),
            svm_c: 1.0,
            lambda: None,
            gamma: None,
            lambda_min: 1e-4,
            lambda_max: 1e1,
            lambda_points: 11,
            gamma_min: 1e-4,
            gamma_max: 1e0,
            gamma_points: 9,
            max_regression_samples: 8000,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub datasets: Vec<String>,
    pub classification_slices_mm: Vec<f64>,
    pub regression_slices_mm: Vec<f64>,
    pub arrow_depths_mm: Vec<f64>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            datasets: Vec::new(),
            classification_slices_mm: CLASSIFICATION_SLICES.to_vec(),
            regression_slices_mm: REGRESSION_SLICES.to_vec(),
            arrow_depths_mm: REGRESSION_SLICES.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub schema: String,
    pub seed: u64,
    /// Sensor description, relative to the plan file; built-in default when
    /// absent.
    #[serde(default)]
    pub sensor_config: Option<PathBuf>,
    #[serde(default)]
    pub rays_per_state: Option<usize>,
    pub output_dir: PathBuf,
    pub active_side_mm: f64,
    pub grid_spacing_mm: f64,
    pub grid_margin_mm: f64,
    pub schedules: BTreeMap<String, SweepSchedule>,
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub train: Option<TrainSpec>,
    #[serde(default)]
    pub eval: Option<EvalSpec>,
}

/// Command-line overrides applied on top of a plan.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub ambient_level: Option<f64>,
    pub rays_per_state: Option<usize>,
    pub noise_sigma: Option<f64>,
}

/// Ambient light level of the lit datasets.
pub const AMBIENT_LEVEL: f64 = 0.05;

impl ExperimentPlan {
    /// Four grid training sets (two lit, two dark) and two random
    /// 100-location test sets (one lit, one dark).
    pub fn replication() -> Self {
        let mut test = SweepSchedule::default();
        test.hover_mm.extend([-0.8, -0.6, -0.4, -0.2]);
        let mut schedules = BTreeMap::new();
        schedules.insert("train".to_string(), SweepSchedule::default());
        schedules.insert("test".to_string(), test);
        let grid = |name: &str, lit: bool| DatasetSpec {
            name: name.into(),
            pattern: PatternKind::Grid,
            count: None,
            schedule: "train".into(),
            ambient_level: if lit { AMBIENT_LEVEL } else { 0.0 },
            noise_sigma: 0.0,
            seed: None,
        };
        let random = |name: &str, lit: bool| DatasetSpec {
            pattern: PatternKind::Random,
            count: Some(100),
            schedule: "test".into(),
            ..grid(name, lit)
        };
        let train_sets = ["grid_ambient_1", "grid_ambient_2", "grid_dark_1", "grid_dark_2"];
        let test_sets = ["random_ambient", "random_dark"];
        ExperimentPlan {
            schema: PLAN_SCHEMA.into(),
            seed: 2017,
            sensor_config: None,
            rays_per_state: None,
            output_dir: PathBuf::from("replication"),
            active_side_mm: 20.0,
            grid_spacing_mm: 2.0,
            grid_margin_mm: 3.0,
            schedules,
            datasets: vec![
                grid(train_sets[0], true),
                grid(train_sets[1], true),
                grid(train_sets[2], false),
                grid(train_sets[3], false),
                random(test_sets[0], true),
                random(test_sets[1], false),
            ],
            train: Some(TrainSpec {
                datasets: train_sets.iter().map(|s| s.to_string()).collect(),
                ..TrainSpec::default()
            }),
            eval: Some(EvalSpec {
                datasets: test_sets.iter().map(|s| s.to_string()).collect(),
                ..EvalSpec::default()
            }),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan: ExperimentPlan = toml::from_str(&text).map_err(|e| Error::Format {
            kind: "plan",
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if let (Some(cfg), Some(dir)) = (&plan.sensor_config, path.parent()) {
            if cfg.is_relative() {
                plan.sensor_config = Some(dir.join(cfg));
            }
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(r) = o.rays_per_state {
            self.rays_per_state = Some(r);
        }
        for d in &mut self.datasets {
            if let Some(a) = o.ambient_level {
                d.ambient_level = a;
            }
            if let Some(n) = o.noise_sigma {
                d.noise_sigma = n;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != PLAN_SCHEMA {
            return Err(Error::Config(format!("unsupported plan schema {:?}", self.schema)));
        }
        let mut names = std::collections::HashSet::new();
        for d in &self.datasets {
            if !names.insert(d.name.as_str()) {
                return Err(Error::Config(format!("dataset {:?} listed twice", d.name)));
            }
            if d.name.is_empty() || !d.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!("dataset name {:?} must be [A-Za-z0-9_-]+", d.name)));
            }
            let sched = self
                .schedules
                .get(&d.schedule)
                .ok_or_else(|| Error::Config(format!("dataset {:?}: unknown schedule {:?}", d.name, d.schedule)))?;
            sched.validate()?;
            if d.pattern == PatternKind::Random && !matches!(d.count, Some(c) if c > 0) {
                return Err(Error::Config(format!("random dataset {:?} needs count > 0", d.name)));
            }
            if !(d.ambient_level >= 0.0 && d.noise_sigma >= 0.0) {
                return Err(Error::Config(format!("dataset {:?}: negative ambient or noise", d.name)));
            }
        }
        let known = |list: &[String], what: &str| -> Result<()> {
            for n in list {
                if !names.contains(n.as_str()) {
                    return Err(Error::Config(format!("{what} refers to unknown dataset {n:?}")));
                }
            }
            Ok(())
        };
        if let Some(t) = &self.train {
            known(&t.datasets, "train")?;
        }
        if let Some(e) = &self.eval {
            known(&e.datasets, "eval")?;
        }
        Ok(())
    }

    pub fn sensor(&self) -> Result<SensorConfig> {
        let mut cfg = match &self.sensor_config {
            Some(p) => SensorConfig::load(p)?,
            None => SensorConfig::default(),
        };
        if let Some(r) = self.rays_per_state {
            cfg.rays_per_state = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dataset_seed(&self, spec: &DatasetSpec) -> Seed {
        spec.seed.map_or_else(|| Seed(self.seed).derive(&spec.name, 0), Seed)
    }

    pub fn transport_seed(&self) -> Seed {
        Seed(self.seed).derive("transport", 0)
    }

    pub fn train_params(&self) -> TrainParams {
        let spec = self.train.clone().unwrap_or_default();
        train_params(&spec, spec.seed.unwrap_or(Seed(self.seed).derive("train", 0).0))
    }
}

pub fn train_params(spec: &TrainSpec, seed: u64) -> TrainParams {
    TrainParams {
        svm_c: spec.svm_c,
        fixed: spec.lambda.zip(spec.gamma),
        lambda_grid: log_grid(spec.lambda_min, spec.lambda_max, spec.lambda_points),
        gamma_grid: log_grid(spec.gamma_min, spec.gamma_max, spec.gamma_points),
        max_regression_samples: spec.max_regression_samples,
        seed,
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

pub fn dataset_path(out: &Path, name: &str) -> PathBuf {
    out.join("datasets").join(format!("{name}.csv"))
}

/// Records every dataset of the plan. Datasets share one trace cache, so
/// they see the same ray fans and differ only in pattern, lighting and
/// noise.
pub fn simulate(plan: &ExperimentPlan) -> Result<Vec<(String, Dataset)>> {
    plan.validate()?;
    let sensor = plan.sensor()?;
    let out = &plan.output_dir;
    create_dir(&out.join("datasets"))?;
    sensor.save(&out.join("sensor.toml"))?;
    write(&out.join("plan.toml"), &plan.to_toml())?;
    let transport = plan.transport_seed();
    let cache = TraceCache::new(&sensor, transport)?;
    let mut sets = Vec::new();
    for spec in &plan.datasets {
        let seed = plan.dataset_seed(spec);
        let pattern = match spec.pattern {
            PatternKind::Grid => grid_pattern(
                plan.active_side_mm,
                plan.grid_spacing_mm,
                plan.grid_margin_mm,
                sensor.cavity_side_mm,
                seed,
            )?,
            PatternKind::Random => random_pattern(spec.count.unwrap_or(0), plan.active_side_mm, seed)?,
        };
        let schedule = &plan.schedules[&spec.schedule];
        let ds = collect_with(&cache, spec.ambient_level, spec.noise_sigma, &pattern, schedule, seed, transport)?;
        ds.save(&dataset_path(out, &spec.name))?;
        sets.push((spec.name.clone(), ds));
    }
    Ok(sets)
}

/// Trains the two-stage model and writes it with a training report.
pub fn train_model(datasets: &[&Dataset], params: &TrainParams, model_path: &Path) -> Result<TwoStageModel> {
    let model = train(datasets, params)?;
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model.save(model_path)?;
    let report = serde_json::json!({
        "config_hash": model.config_hash,
        "train_seed": model.train_seed,
        "dataset_seeds": model.dataset_seeds,
        "report": model.report,
    });
    let report_path = model_path.with_extension("report.json");
    write(&report_path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(model)
}

/// Tables and arrow exports for every test set; refuses data recorded on a
/// different sensor than the model was trained on.
pub fn evaluate_sets(
    model: &TwoStageModel,
    sets: &[(String, Dataset)],
    spec: &EvalSpec,
    out: &Path,
) -> Result<Vec<(String, Vec<DepthSliceMetrics>)>> {
    create_dir(&out.join("tables"))?;
    create_dir(&out.join("arrows"))?;
    let mut all = Vec::new();
    for (name, ds) in sets {
        if ds.meta.config_hash != model.config_hash {
            return Err(Error::HashMismatch {
                expected: model.config_hash.clone(),
                found: ds.meta.config_hash.clone(),
            });
        }
        let rows = evaluate(model, ds, &spec.classification_slices_mm, &spec.regression_slices_mm);
        let provenance = [
            ("dataset", name.clone()),
            ("config_hash", model.config_hash.clone()),
            ("dataset_seed", ds.meta.seed.to_string()),
            ("train_seed", model.train_seed.to_string()),
            ("lambda", model.report.lambda.to_string()),
            ("gamma", model.report.gamma.to_string()),
        ];
        write(&out.join("tables").join(format!("{name}.csv")), &to_csv(&rows, &provenance))?;
        let mut text = String::new();
        for (k, v) in &provenance {
            let _ = writeln!(text, "{k}: {v}");
        }
        text.push('\n');
        text.push_str(&to_text(&format!("Accuracy on {name}"), &rows));
        write(&out.join("tables").join(format!("{name}.txt")), &text)?;
        for &depth in &spec.arrow_depths_mm {
            let mut lines = String::new();
            for r in arrow_field_export(model, ds, depth) {
                lines.push_str(&serde_json::to_string(&r).expect("arrow serializes"));
                lines.push('\n');
            }
            write(&out.join("arrows").join(format!("{name}_{depth}mm.jsonl")), &lines)?;
        }
        all.push((name.clone(), rows));
    }
    Ok(all)
}

/// Simulation, training and evaluation in one go.
pub fn replicate(plan: &ExperimentPlan) -> Result<(TwoStageModel, Vec<(String, Vec<DepthSliceMetrics>)>)> {
    let sets = simulate(plan)?;
    let pick = |names: &[String]| -> Vec<(String, Dataset)> {
        sets.iter().filter(|(n, _)| names.contains(n)).cloned().collect()
    };
    let tspec = plan.train.clone().unwrap_or_default();
    let train_sets = pick(&tspec.datasets);
    let refs: Vec<&Dataset> = train_sets.iter().map(|(_, d)| d).collect();
    let model = train_model(&refs, &plan.train_params(), &plan.output_dir.join("model.json"))?;
    let espec = plan.eval.clone().unwrap_or_default();
    let tables = evaluate_sets(&model, &pick(&espec.datasets), &espec, &plan.output_dir)?;
    Ok((model, tables))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThicknessSeries {
    pub thickness_mm: f64,
    pub depths_mm: Vec<f64>,
    pub signal: Vec<f64>,
    pub deadband: Option<Deadband>,
}

/// Minimum width and flatness of a deadband, as a fraction of signal range.
pub const DEADBAND_MIN_WIDTH_MM: f64 = 1.0;
pub const DEADBAND_TOLERANCE: f64 = 0.02;
pub const PAIR_SEPARATION_MM: f64 = 20.0;
/// Height of the pair's sockets above the cavity floor.
pub const PAIR_MOUNT_HEIGHT_MM: f64 = 5.5;

/// Opposed-pair signal against depth for each slab thickness, written as one
/// CSV series per thickness plus a summary.
pub fn sweep_thickness(
    sensor: &SensorConfig,
    thicknesses: &[f64],
    depths: &[f64],
    separation_mm: f64,
    mount_height_mm: f64,
    seed: Seed,
    out: Option<&Path>,
) -> Result<Vec<ThicknessSeries>> {
    if thicknesses.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::invalid("thicknesses must be positive"));
    }
    let rig = sensor.pair_rig(separation_mm, mount_height_mm);
    let series = thicknesses
        .iter()
        .map(|&t| {
            let signal = deadband_profile(&rig, t, depths, seed)?;
            let deadband = detect_deadband(depths, &signal, DEADBAND_MIN_WIDTH_MM, DEADBAND_TOLERANCE);
            Ok(ThicknessSeries {
                thickness_mm: t,
                depths_mm: depths.to_vec(),
                signal,
                deadband,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(out) = out {
        create_dir(out)?;
        let head = format!(
            "# config_hash = {}\n# seed = {}\n# separation_mm = {separation_mm}\n# mount_height_mm = {mount_height_mm}\n",
            sensor.config_hash(),
            seed.0
        );
        let mut summary = head.clone();
        summary.push_str("thickness_mm,deadband,deadband_start_mm,deadband_end_mm\n");
        for s in &series {
            let mut text = head.clone();
            text.push_str("depth_mm,received\n");
            for (d, v) in s.depths_mm.iter().zip(&s.signal) {
                let _ = writeln!(text, "{d},{v}");
            }
            write(&out.join(format!("series_{}mm.csv", s.thickness_mm)), &text)?;
            match s.deadband {
                Some(b) => {
                    let _ = writeln!(summary, "{},yes,{},{}", s.thickness_mm, b.start, b.end);
                }
                None => {
                    let _ = writeln!(summary, "{},no,,", s.thickness_mm);
                }
            }
        }
        write(&out.join("summary.csv"), &summary)?;
    }
    Ok(series)
}
