//! The assembled 8-emitter / 8-receiver pad and its 9-state scan.
//!
//! States 1..=8 light one emitter each; state 9 has every emitter off and
//! records only ambient light. Readings are snapped to a fixed grid of
//! `2^-32` so that adding a (snapped) ambient term and later subtracting the
//! dark state cancels exactly.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optics::Vec3;
use crate::seed::Seed;
use crate::surface::{IndenterState, SurfaceModel};
use crate::transport::{
    trace_state, trace_state_with_paths, Emitter, PairRig, PathRecord, Receiver, Scene, TraceResult,
};

pub const N_EMITTERS: usize = 8;
pub const N_RECEIVERS: usize = 8;
pub const N_STATES: usize = N_EMITTERS + 1;
pub const FEATURE_DIM: usize = N_EMITTERS * N_RECEIVERS;

pub const SENSOR_SCHEMA: &str = "edgelit-sensor/1";

const QUANTUM_SCALE: f64 = 4_294_967_296.0; // 2^32

/// Snaps a reading onto the fixed `2^-32` grid.
#[inline]
pub fn quantize(x: f64) -> f64 {
    (x * QUANTUM_SCALE).round() / QUANTUM_SCALE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmitterSpec {
    pub position_mm: [f64; 3],
    pub facing: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceiverSpec {
    pub position_mm: [f64; 3],
    pub facing: [f64; 3],
    pub active_radius_mm: f64,
}

/// Human-editable sensor description. Every physical quantity carries its
/// unit in the key name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub schema: String,
    pub cavity_side_mm: f64,
    pub active_area_side_mm: f64,
    pub slab_thickness_mm: f64,
    pub tip_radius_mm: f64,
    pub decay_length_mm: f64,
    pub n_elastomer: f64,
    pub n_air: f64,
    pub wall_reflectance: f64,
    pub acceptance_half_angle_deg: f64,
    pub emitter_cone_half_angle_deg: f64,
    pub rays_per_state: usize,
    pub bounce_cap: u32,
    /// Uniform additive light on every receiver in every state.
    pub ambient_level: f64,
    /// Standard deviation of additive Gaussian reading noise.
    pub noise_sigma: f64,
    pub emitters: Vec<EmitterSpec>,
    pub receivers: Vec<ReceiverSpec>,
}

fn to_vec(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn to_arr(v: Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig::with_thickness(8.0)
    }
}

impl SensorConfig {
    /// Default layout for a given slab thickness: every side carries emitter,
    /// receiver, emitter, receiver (counter-clockwise), all at mid-height.
    pub fn with_thickness(slab_thickness_mm: f64) -> Self {
        let side = 32.0;
        let half = 0.5 * side;
        let z = -0.5 * slab_thickness_mm;
        let mut emitters = Vec::new();
        let mut receivers = Vec::new();
        for s in 0..4 {
            for (slot, along) in [-12.0, -4.0, 4.0, 12.0].into_iter().enumerate() {
                let mut pos = Vec3::new(along, -half, z);
                let mut facing = Vec3::Y;
                for _ in 0..s {
                    pos = pos.rot90();
                    facing = facing.rot90();
                }
                if slot % 2 == 0 {
                    emitters.push(EmitterSpec {
                        position_mm: to_arr(pos),
                        facing: to_arr(facing),
                    });
                } else {
                    receivers.push(ReceiverSpec {
                        position_mm: to_arr(pos),
                        facing: to_arr(facing),
                        active_radius_mm: 2.5,
                    });
                }
            }
        }
        SensorConfig {
            schema: SENSOR_SCHEMA.to_string(),
            cavity_side_mm: side,
            active_area_side_mm: 20.0,
            slab_thickness_mm,
            tip_radius_mm: 3.0,
            decay_length_mm: 1.0,
            n_elastomer: 1.4,
            n_air: 1.0,
            wall_reflectance: 0.2,
            acceptance_half_angle_deg: 80.0,
            emitter_cone_half_angle_deg: 60.0,
            rays_per_state: 50_000,
            bounce_cap: 8,
            ambient_level: 0.0,
            noise_sigma: 0.0,
            emitters,
            receivers,
        }
    }

    pub fn surface(&self) -> SurfaceModel {
        SurfaceModel {
            slab_thickness_mm: self.slab_thickness_mm,
            tip_radius_mm: self.tip_radius_mm,
            decay_length_mm: self.decay_length_mm,
        }
    }

    pub fn scene(&self) -> Scene {
        Scene {
            cavity_side: self.cavity_side_mm,
            surface: self.surface(),
            eta: self.n_elastomer / self.n_air,
            wall_reflectance: self.wall_reflectance,
            acceptance_half_angle: self.acceptance_half_angle_deg.to_radians(),
            bounce_cap: self.bounce_cap,
            surface_reflections: true,
        }
    }

    pub fn emitter(&self, i: usize) -> Emitter {
        let e = &self.emitters[i];
        Emitter {
            position: to_vec(e.position_mm),
            facing: to_vec(e.facing),
            cone_half_angle: self.emitter_cone_half_angle_deg.to_radians(),
            rays_per_state: self.rays_per_state,
        }
    }

    pub fn receivers(&self) -> Vec<Receiver> {
        self.receivers
            .iter()
            .map(|r| Receiver {
                position: to_vec(r.position_mm),
                facing: to_vec(r.facing),
                active_radius: r.active_radius_mm,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SENSOR_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported sensor schema {:?} (expected {SENSOR_SCHEMA:?})",
                self.schema
            )));
        }
        if self.emitters.len() != N_EMITTERS || self.receivers.len() != N_RECEIVERS {
            return Err(Error::Config(format!(
                "need exactly {N_EMITTERS} emitters and {N_RECEIVERS} receivers, got {} and {}",
                self.emitters.len(),
                self.receivers.len()
            )));
        }
        if !(self.active_area_side_mm > 0.0 && self.active_area_side_mm <= self.cavity_side_mm) {
            return Err(Error::Config("active area must fit in the cavity".into()));
        }
        if self.n_air < 1.0 || self.n_elastomer < self.n_air {
            return Err(Error::Config(
                "need n_elastomer >= n_air >= 1 for total internal reflection".into(),
            ));
        }
        if !(self.ambient_level >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("ambient level and noise sigma must be >= 0".into()));
        }
        if self.rays_per_state == 0 {
            return Err(Error::Config("rays_per_state must be positive".into()));
        }
        let cone = self.emitter_cone_half_angle_deg;
        if !(cone > 0.0 && cone <= 90.0) {
            return Err(Error::Config("emitter cone half-angle must lie in (0, 90] deg".into()));
        }
        self.scene().validate()?;
        self.check_alternating()
    }

    /// Emitters and receivers must alternate when walking the perimeter.
    fn check_alternating(&self) -> Result<()> {
        let half = 0.5 * self.cavity_side_mm;
        let perimeter_pos = |p: [f64; 3]| -> Result<f64> {
            let (x, y) = (p[0], p[1]);
            let tol = 1e-6;
            // Arc length counter-clockwise from the (-h, -h) corner.
            if (y + half).abs() < tol {
                Ok(x + half)
            } else if (x - half).abs() < tol {
                Ok(2.0 * half + y + half)
            } else if (y - half).abs() < tol {
                Ok(4.0 * half + half - x)
            } else if (x + half).abs() < tol {
                Ok(6.0 * half + half - y)
            } else {
                Err(Error::Config(format!("component at {p:?} is not on a cavity wall")))
            }
        };
        let mut items = Vec::new();
        for e in &self.emitters {
            items.push((perimeter_pos(e.position_mm)?, true));
        }
        for r in &self.receivers {
            items.push((perimeter_pos(r.position_mm)?, false));
        }
        items.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = items.len();
        if (0..n).any(|i| items[i].1 == items[(i + 1) % n].1) {
            return Err(Error::Config(
                "emitters and receivers must alternate around the perimeter".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SensorConfig = toml::from_str(&text).map_err(|e| Error::Format {
            kind: "sensor config",
            path: path.to_owned(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sensor config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Identity of the simulated device: a digest over everything except the
    /// lighting environment (ambient level and noise), which varies between
    /// datasets collected on the same sensor.
    pub fn config_hash(&self) -> String {
        let mut physical = self.clone();
        physical.ambient_level = 0.0;
        physical.noise_sigma = 0.0;
        let digest = Sha256::digest(physical.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Opposed-pair test rig built from this sensor's optics and parts.
    pub fn pair_rig(&self, separation_mm: f64, mount_height_mm: f64) -> PairRig {
        PairRig {
            separation: separation_mm,
            mount_height: mount_height_mm,
            scene: self.scene(),
            cone_half_angle: self.emitter_cone_half_angle_deg.to_radians(),
            rays_per_state: self.rays_per_state,
            receiver_radius: self.receivers.first().map_or(2.5, |r| r.active_radius_mm),
        }
    }

    /// Quarter-turn symmetry of the layout, if the configuration has it
    /// exactly.
    pub fn quarter_turn(&self) -> Option<QuarterTurn> {
        let find = |target: [f64; 3], facing: [f64; 3], pool: &[( [f64; 3], [f64; 3], f64)], radius: f64| {
            pool.iter()
                .position(|&(p, f, r)| p == target && f == facing && r == radius)
        };
        let em: Vec<_> = self.emitters.iter().map(|e| (e.position_mm, e.facing, 0.0)).collect();
        let rc: Vec<_> = self
            .receivers
            .iter()
            .map(|r| (r.position_mm, r.facing, r.active_radius_mm))
            .collect();
        let rot = |a: [f64; 3]| to_arr(to_vec(a).rot90());
        let mut emitter_map = [0usize; N_EMITTERS];
        for (i, &(p, f, _)) in em.iter().enumerate() {
            emitter_map[i] = find(rot(p), rot(f), &em, 0.0)?;
        }
        let mut receiver_map = [0usize; N_RECEIVERS];
        for (i, &(p, f, r)) in rc.iter().enumerate() {
            receiver_map[i] = find(rot(p), rot(f), &rc, r)?;
        }
        Some(QuarterTurn {
            emitter_map,
            receiver_map,
        })
    }
}

/// Index permutations induced by rotating the layout a quarter turn
/// counter-clockwise about the cavity centre.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuarterTurn {
    pub emitter_map: [usize; N_EMITTERS],
    pub receiver_map: [usize; N_RECEIVERS],
}

impl QuarterTurn {
    /// Smallest emitter index in the orbit of `i` and the number of quarter
    /// turns taking `i` there.
    pub fn canonical_emitter(&self, i: usize) -> (usize, usize) {
        let mut best = (i, 0);
        let mut j = i;
        for m in 1..4 {
            j = self.emitter_map[j];
            if j < best.0 {
                best = (j, m);
            }
        }
        best
    }

    pub fn receiver_power(&self, r: usize, turns: usize) -> usize {
        (0..turns).fold(r, |k, _| self.receiver_map[k])
    }
}

/// Readings of one scan: `readings[state][receiver]`, state 8 is all-off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalFrame {
    pub readings: [[f64; N_RECEIVERS]; N_STATES],
}

impl SignalFrame {
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != N_STATES * N_RECEIVERS {
            return Err(Error::invalid(format!(
                "a frame has {} readings, got {}",
                N_STATES * N_RECEIVERS,
                values.len()
            )));
        }
        let mut readings = [[0.0; N_RECEIVERS]; N_STATES];
        for (j, row) in readings.iter_mut().enumerate() {
            row.copy_from_slice(&values[j * N_RECEIVERS..(j + 1) * N_RECEIVERS]);
        }
        Ok(SignalFrame { readings })
    }

    /// Readings in tuple order: state-major, receiver-minor.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.readings.iter().flat_map(|row| row.iter().copied())
    }
}

/// Baseline-subtracted lit-state readings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::invalid(format!(
                "feature vector must have {FEATURE_DIM} entries, got {}",
                values.len()
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `feature[j * 8 + k] = p_j^k - p_9^k` for lit states `j` and receivers `k`.
pub fn extract_features(frame: &SignalFrame) -> FeatureVector {
    let dark = &frame.readings[N_STATES - 1];
    let values = frame.readings[..N_EMITTERS]
        .iter()
        .flat_map(|row| row.iter().zip(dark).map(|(p, b)| p - b))
        .collect();
    FeatureVector(values)
}

type TraceKey = (usize, u64, u64, u64);

/// Memoizes per-emitter traces of one sensor for one transport seed.
///
/// All non-contact indenter states share a single key, and with an exact
/// quarter-turn symmetry every emitter is traced as its orbit representative
/// at the correspondingly rotated indenter position.
pub struct TraceCache {
    config: SensorConfig,
    scene: Scene,
    receivers: Vec<Receiver>,
    symmetry: Option<QuarterTurn>,
    transport_seed: Seed,
    memo: Mutex<HashMap<TraceKey, Arc<TraceResult>>>,
}

impl TraceCache {
    pub fn new(config: &SensorConfig, transport_seed: Seed) -> Result<Self> {
        config.validate()?;
        Ok(TraceCache {
            config: config.clone(),
            scene: config.scene(),
            receivers: config.receivers(),
            symmetry: config.quarter_turn(),
            transport_seed,
            memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &SensorConfig {
        &self.config
    }

    /// Seed of the substream used for emitter `i`'s ray fan.
    fn emitter_seed(&self, i: usize) -> Seed {
        let class = self.symmetry.map_or(i, |q| q.canonical_emitter(i).0);
        self.transport_seed.derive("emitter", class as u64)
    }

    /// Received power per receiver with emitter `i` lit.
    pub fn received(&self, i: usize, indenter: &IndenterState) -> Result<[f64; N_RECEIVERS]> {
        let (rep, turns) = self.symmetry.map_or((i, 0), |q| q.canonical_emitter(i));
        let mut ind = *indenter;
        if !ind.in_contact() {
            ind = IndenterState::hovering();
        } else {
            for _ in 0..turns {
                let v = Vec3::new(ind.x, ind.y, 0.0).rot90();
                ind.x = v.x;
                ind.y = v.y;
            }
        }
        let key = if ind.in_contact() {
            (rep, ind.x.to_bits(), ind.y.to_bits(), ind.depth.to_bits())
        } else {
            (rep, 0, 0, u64::MAX)
        };
        let cached = self.memo.lock().expect("trace cache poisoned").get(&key).cloned();
        let trace = match cached {
            Some(t) => t,
            None => {
                let t = Arc::new(trace_state(
                    &self.config.emitter(rep),
                    &self.receivers,
                    &ind,
                    &self.scene,
                    self.emitter_seed(rep),
                )?);
                self.memo
                    .lock()
                    .expect("trace cache poisoned")
                    .insert(key, Arc::clone(&t));
                t
            }
        };
        let mut out = [0.0; N_RECEIVERS];
        for (r, v) in out.iter_mut().enumerate() {
            let k = self
                .symmetry
                .map_or(r, |q| q.receiver_power(r, turns));
            *v = trace.received[k];
        }
        Ok(out)
    }

    /// Per-ray records of emitter `i`'s fan, traced without the cache.
    pub fn paths(&self, i: usize, indenter: &IndenterState) -> Result<(TraceResult, Vec<PathRecord>)> {
        if i >= N_EMITTERS {
            return Err(Error::invalid(format!("emitter index {i} out of range")));
        }
        trace_state_with_paths(
            &self.config.emitter(i),
            &self.receivers,
            indenter,
            &self.scene,
            self.emitter_seed(i),
        )
    }

    /// Full 9-state scan with the configured ambient light and reading noise
    /// drawn from `noise_seed`.
    pub fn scan(&self, indenter: &IndenterState, noise_seed: Seed) -> Result<SignalFrame> {
        self.scan_with(indenter, self.config.ambient_level, self.config.noise_sigma, noise_seed)
    }

    /// As [`TraceCache::scan`] but with explicit ambient level and noise, so
    /// one cache can serve datasets recorded under different lighting.
    pub fn scan_with(
        &self,
        indenter: &IndenterState,
        ambient_level: f64,
        noise_sigma: f64,
        noise_seed: Seed,
    ) -> Result<SignalFrame> {
        if !(ambient_level >= 0.0 && noise_sigma >= 0.0) {
            return Err(Error::Config("ambient level and noise sigma must be non-negative".into()));
        }
        let ambient = quantize(ambient_level);
        let mut readings = [[0.0; N_RECEIVERS]; N_STATES];
        for (j, row) in readings.iter_mut().take(N_EMITTERS).enumerate() {
            let powers = self.received(j, indenter)?;
            for (v, p) in row.iter_mut().zip(powers) {
                *v = quantize(p) + ambient;
            }
        }
        for v in readings[N_STATES - 1].iter_mut() {
            *v = ambient;
        }
        if noise_sigma > 0.0 {
            let normal = Normal::new(0.0, noise_sigma)
                .map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
            let mut rng = noise_seed.rng();
            for v in readings.iter_mut().flatten() {
                *v = (*v + quantize(normal.sample(&mut rng))).max(0.0);
            }
        }
        Ok(SignalFrame { readings })
    }
}

/// Runs the 9-state illumination scan for one indenter state.
pub fn scan(config: &SensorConfig, indenter: &IndenterState, seed: Seed) -> Result<SignalFrame> {
    TraceCache::new(config, seed.derive("transport", 0))?.scan(indenter, seed.derive("noise", 0))
}
