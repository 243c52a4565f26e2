//! Monte Carlo light transport from one emitter to the receivers.
//!
//! The slab fills a square cavity `[-h, h]^2` between the carbon-black bottom
//! at `z = -thickness` and the (possibly indented) top surface near `z = 0`.
//! Rays are launched from a stratified, seeded fan over the emitter cone and
//! followed until they are received, escape through the top surface, are
//! absorbed (bottom layer, probe tip, walls) or hit the bounce cap. Every unit
//! of launched power is booked to exactly one of those sinks.
//!
//! Work is split into fixed-size batches with their own RNG substreams and
//! reduced in batch order, so results do not depend on thread scheduling.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{intersect_sphere, scatter_direction, Ray, Vec3};
use crate::seed::Seed;
use crate::sum::CompensatedSum;
use crate::surface::{Imprint, IndenterState, SurfaceModel};

const BATCH: usize = 2048;
const ROOT_TOL: f64 = 1e-12;
/// Rays leaving the deformed surface ignore roots closer than this.
const MIN_STEP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    pub position: Vec3,
    pub facing: Vec3,
    pub cone_half_angle: f64,
    pub rays_per_state: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Receiver {
    pub position: Vec3,
    pub facing: Vec3,
    pub active_radius: f64,
}

/// Static description of the slab the rays travel through.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub cavity_side: f64,
    pub surface: SurfaceModel,
    /// `n_elastomer / n_air`.
    pub eta: f64,
    pub wall_reflectance: f64,
    pub acceptance_half_angle: f64,
    pub bounce_cap: u32,
    /// Diagnostic switch: when false, rays reaching the top surface are
    /// terminated there instead of being reflected.
    pub surface_reflections: bool,
}

impl Scene {
    pub fn half_side(&self) -> f64 {
        0.5 * self.cavity_side
    }

    pub fn thickness(&self) -> f64 {
        self.surface.slab_thickness_mm
    }

    pub fn validate(&self) -> Result<()> {
        self.surface.validate()?;
        if !(self.cavity_side > 0.0) {
            return Err(Error::Config("cavity side must be positive".into()));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config("refractive index ratio must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.wall_reflectance) {
            return Err(Error::Config("wall reflectance must lie in [0, 1]".into()));
        }
        if !(self.acceptance_half_angle > 0.0 && self.acceptance_half_angle <= PI / 2.0) {
            return Err(Error::Config("acceptance half-angle must lie in (0, pi/2]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Absorption {
    pub bottom: f64,
    pub walls: f64,
    pub tip: f64,
    pub bounce_cap: f64,
}

impl Absorption {
    pub fn total(&self) -> f64 {
        crate::sum::compensated_sum([self.bottom, self.walls, self.tip, self.bounce_cap])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    pub received: Vec<f64>,
    pub absorbed: f64,
    pub escaped: f64,
    pub emitted: f64,
    pub absorption: Absorption,
}

impl TraceResult {
    /// `|received + absorbed + escaped - emitted| / emitted`.
    pub fn conservation_error(&self) -> f64 {
        let mut s = CompensatedSum::default();
        self.received.iter().for_each(|&r| s.add(r));
        s.add(self.absorbed);
        s.add(self.escaped);
        s.add(-self.emitted);
        s.value().abs() / self.emitted
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "cause")]
pub enum Termination {
    Received { receiver: usize },
    Escaped,
    Bottom,
    Tip,
    BounceCap,
}

/// Fate of one launched ray, for diagnostic dumps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub ray: usize,
    pub bounces: u32,
    #[serde(flatten)]
    pub termination: Termination,
    /// Launch weight.
    pub launched: f64,
    /// Weight left when the ray terminated (after wall losses).
    pub terminal: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Wall {
    XMin,
    XMax,
    YMin,
    YMax,
}

#[derive(Default)]
struct Tally {
    received: Vec<CompensatedSum>,
    escaped: CompensatedSum,
    bottom: CompensatedSum,
    walls: CompensatedSum,
    tip: CompensatedSum,
    cap: CompensatedSum,
    emitted: CompensatedSum,
}

impl Tally {
    fn new(n_receivers: usize) -> Self {
        Tally {
            received: vec![CompensatedSum::default(); n_receivers],
            ..Default::default()
        }
    }

    fn merge(&mut self, o: &Tally) {
        for (a, b) in self.received.iter_mut().zip(&o.received) {
            a.merge(b);
        }
        self.escaped.merge(&o.escaped);
        self.bottom.merge(&o.bottom);
        self.walls.merge(&o.walls);
        self.tip.merge(&o.tip);
        self.cap.merge(&o.cap);
        self.emitted.merge(&o.emitted);
    }
}

/// Stratified layout of the emitter cone: `rows` bands in `cos(theta)`, band
/// `j` split into `counts[j]` azimuthal cells. Every cell carries weight equal
/// to its share of solid angle.
struct ConeStrata {
    rows: usize,
    /// Prefix sums of per-row cell counts.
    starts: Vec<usize>,
    cos_min: f64,
}

impl ConeStrata {
    fn new(n: usize, half_angle: f64) -> Self {
        let rows = ((n as f64).sqrt().round() as usize).clamp(1, n);
        let starts = (0..=rows).map(|j| n * j / rows).collect();
        ConeStrata {
            rows,
            starts,
            cos_min: half_angle.cos(),
        }
    }

    /// Direction cosines `(cos theta, phi)` and weight for cell `i`.
    fn sample(&self, i: usize, u1: f64, u2: f64) -> (f64, f64, f64) {
        let j = self.starts.partition_point(|&s| s <= i) - 1;
        let in_row = self.starts[j + 1] - self.starts[j];
        let k = i - self.starts[j];
        let band = (j as f64 + u1) / self.rows as f64;
        let cos_t = 1.0 - band * (1.0 - self.cos_min);
        let phi = 2.0 * PI * (k as f64 + u2) / in_row as f64;
        let w = 1.0 / (self.rows as f64 * in_row as f64);
        (cos_t, phi, w)
    }
}

struct Tracer<'a> {
    scene: &'a Scene,
    imprint: Option<Imprint>,
    receivers: &'a [Receiver],
    /// Receiver indices mounted on each wall.
    on_wall: [Vec<usize>; 4],
    cos_accept: f64,
}

fn wall_of(p: Vec3, half: f64) -> Option<Wall> {
    let tol = 1e-6;
    if (p.x + half).abs() < tol {
        Some(Wall::XMin)
    } else if (p.x - half).abs() < tol {
        Some(Wall::XMax)
    } else if (p.y + half).abs() < tol {
        Some(Wall::YMin)
    } else if (p.y - half).abs() < tol {
        Some(Wall::YMax)
    } else {
        None
    }
}

fn wall_index(w: Wall) -> usize {
    match w {
        Wall::XMin => 0,
        Wall::XMax => 1,
        Wall::YMin => 2,
        Wall::YMax => 3,
    }
}

enum Event {
    Wall(Wall),
    Bottom,
    Surface,
    Tip,
}

impl<'a> Tracer<'a> {
    fn new(scene: &'a Scene, receivers: &'a [Receiver], indenter: &IndenterState) -> Result<Self> {
        let half = scene.half_side();
        let mut on_wall: [Vec<usize>; 4] = Default::default();
        for (i, r) in receivers.iter().enumerate() {
            let w = wall_of(r.position, half).ok_or_else(|| {
                Error::Config(format!("receiver {i} is not mounted on a cavity wall"))
            })?;
            if !(r.active_radius > 0.0) {
                return Err(Error::Config(format!("receiver {i} has non-positive radius")));
            }
            on_wall[wall_index(w)].push(i);
        }
        Ok(Tracer {
            scene,
            imprint: Imprint::new(indenter, &scene.surface),
            receivers,
            on_wall,
            cos_accept: scene.acceptance_half_angle.cos(),
        })
    }

    /// First parameter in `(0, t_max]` at which the ray meets the deformed
    /// surface from below. Returned `t` lies just inside the elastomer.
    fn surface_hit(&self, imp: &Imprint, p: Vec3, d: Vec3, t_max: f64) -> Option<f64> {
        let cx = p.x - imp.center_x;
        let cy = p.y - imp.center_y;
        let dxy2 = d.x * d.x + d.y * d.y;
        // Closest radial approach along the segment bounds how deep the
        // surface can reach and how steep it can be there.
        let tc = if dxy2 > 0.0 {
            (-(cx * d.x + cy * d.y) / dxy2).clamp(0.0, t_max)
        } else {
            0.0
        };
        let (qx, qy) = (cx + tc * d.x, cy + tc * d.y);
        let r_min = (qx * qx + qy * qy).sqrt();
        let floor = imp.height_at_radius(r_min);
        let (slope, curvature) = imp.slope_and_curvature_bounds(r_min);
        let (t_a, t_b) = if d.z > 0.0 {
            (((floor - p.z) / d.z).max(MIN_STEP), ((-p.z) / d.z).min(t_max))
        } else if d.z < 0.0 {
            (MIN_STEP, ((floor - p.z) / d.z).min(t_max))
        } else if p.z >= floor {
            (MIN_STEP, t_max)
        } else {
            return None;
        };
        if !(t_a <= t_b) {
            return None;
        }
        let g = |t: f64| p.z + t * d.z - imp.height(p.x + t * d.x, p.y + t * d.y);
        let g_and_slope = |t: f64| {
            let (h, hx, hy) = imp.height_and_gradient(p.x + t * d.x, p.y + t * d.y);
            (p.z + t * d.z - h, d.z - hx * d.x - hy * d.y)
        };
        // Along the window |g'| <= lip and |g''| <= curv, so from a point with
        // g < 0 neither the Lipschitz step nor the first root of the quadratic
        // upper model can jump over a root.
        let lip = d.z.abs() + slope * dxy2.sqrt();
        let curv = curvature * dxy2;
        let mut t = t_a;
        let (mut gt, mut gp) = g_and_slope(t);
        if gt >= 0.0 {
            return Some(t);
        }
        for _ in 0..300 {
            if -gt < ROOT_TOL {
                return Some(t);
            }
            let gap = -gt;
            let quad = if curv > 0.0 {
                2.0 * gap / (gp + (gp * gp + 2.0 * curv * gap).sqrt())
            } else if gp > 0.0 {
                gap / gp
            } else {
                f64::INFINITY
            };
            let step = if lip > 0.0 { quad.max(gap / lip) } else { quad };
            let tn = t + step;
            if !(tn < t_b) {
                let gb = g(t_b);
                return if gb >= 0.0 {
                    Some(refine(&g, t, gt, t_b))
                } else {
                    None
                };
            }
            let (gn, gpn) = g_and_slope(tn);
            if gn >= 0.0 {
                return Some(refine(&g, t, gt, tn));
            }
            t = tn;
            gt = gn;
            gp = gpn;
        }
        // Slow tangential approach: scan the rest of the window.
        let steps = 256;
        let mut lo = t;
        let mut glo = gt;
        for k in 1..=steps {
            let tk = t + (t_b - t) * k as f64 / steps as f64;
            let gk = g(tk);
            if gk >= 0.0 {
                return Some(refine(&g, lo, glo, tk));
            }
            lo = tk;
            glo = gk;
        }
        None
    }

    fn trace(&self, mut ray: Ray, tally: &mut Tally) -> (u32, Termination, f64) {
        let scene = self.scene;
        let half = scene.half_side();
        let bottom = -scene.thickness();
        let mut bounces = 0u32;
        loop {
            let p = ray.origin;
            let d = ray.direction;
            // Nearest wall.
            let mut t_best = f64::INFINITY;
            let mut event = Event::Bottom;
            if d.x > 0.0 {
                let t = (half - p.x) / d.x;
                if t < t_best {
                    t_best = t;
                    event = Event::Wall(Wall::XMax);
                }
            } else if d.x < 0.0 {
                let t = (-half - p.x) / d.x;
                if t < t_best {
                    t_best = t;
                    event = Event::Wall(Wall::XMin);
                }
            }
            if d.y > 0.0 {
                let t = (half - p.y) / d.y;
                if t < t_best {
                    t_best = t;
                    event = Event::Wall(Wall::YMax);
                }
            } else if d.y < 0.0 {
                let t = (-half - p.y) / d.y;
                if t < t_best {
                    t_best = t;
                    event = Event::Wall(Wall::YMin);
                }
            }
            if d.z < 0.0 {
                let t = (bottom - p.z) / d.z;
                if t < t_best {
                    t_best = t;
                    event = Event::Bottom;
                }
            }
            match &self.imprint {
                None => {
                    if d.z > 0.0 {
                        let t = -p.z / d.z;
                        if t < t_best {
                            t_best = t;
                            event = Event::Surface;
                        }
                    }
                }
                Some(imp) => {
                    if let Some(t) = self.surface_hit(imp, p, d, t_best) {
                        if t <= t_best {
                            t_best = t;
                            event = Event::Surface;
                        }
                    }
                    if let Some(t) = intersect_sphere(&ray, imp.sphere_center(), imp.tip_radius) {
                        if t < t_best {
                            let q = ray.at(t);
                            if q.z <= imp.height(q.x, q.y) + 1e-9 {
                                t_best = t;
                                event = Event::Tip;
                            }
                        }
                    }
                }
            }
            let mut hit = ray.at(t_best);
            match event {
                Event::Bottom => {
                    tally.bottom.add(ray.power);
                    return (bounces, Termination::Bottom, ray.power);
                }
                Event::Tip => {
                    tally.tip.add(ray.power);
                    return (bounces, Termination::Tip, ray.power);
                }
                Event::Surface => {
                    let normal = match &self.imprint {
                        None => {
                            hit.z = 0.0;
                            Vec3::Z
                        }
                        Some(imp) => {
                            if imp.in_contact_disc(hit.x, hit.y) {
                                tally.tip.add(ray.power);
                                return (bounces, Termination::Tip, ray.power);
                            }
                            imp.normal(hit.x, hit.y)
                        }
                    };
                    if !scene.surface_reflections {
                        tally.escaped.add(ray.power);
                        return (bounces, Termination::Escaped, ray.power);
                    }
                    let (dir, reflected) = scatter_direction(d, normal, scene.eta);
                    if !reflected {
                        tally.escaped.add(ray.power);
                        return (bounces, Termination::Escaped, ray.power);
                    }
                    ray.direction = dir;
                }
                Event::Wall(w) => {
                    match w {
                        Wall::XMin => hit.x = -half,
                        Wall::XMax => hit.x = half,
                        Wall::YMin => hit.y = -half,
                        Wall::YMax => hit.y = half,
                    }
                    for &ri in &self.on_wall[wall_index(w)] {
                        let r = &self.receivers[ri];
                        if (hit - r.position).norm_squared() <= r.active_radius * r.active_radius
                            && -d.dot(r.facing) >= self.cos_accept
                        {
                            tally.received[ri].add(ray.power);
                            return (bounces, Termination::Received { receiver: ri }, ray.power);
                        }
                    }
                    let kept = ray.power * scene.wall_reflectance;
                    tally.walls.add(ray.power - kept);
                    ray.power = kept;
                    ray.direction = match w {
                        Wall::XMin | Wall::XMax => Vec3::new(-d.x, d.y, d.z),
                        Wall::YMin | Wall::YMax => Vec3::new(d.x, -d.y, d.z),
                    };
                }
            }
            ray.origin = hit;
            bounces += 1;
            if bounces >= scene.bounce_cap {
                tally.cap.add(ray.power);
                return (bounces, Termination::BounceCap, ray.power);
            }
        }
    }
}

/// Illinois false position on a bracket with `g(lo) < 0 <= g(hi)`; returns a
/// point with `g < 0` within tolerance of the root.
fn refine(g: &impl Fn(f64) -> f64, mut lo: f64, mut glo: f64, mut hi: f64) -> f64 {
    let mut ghi = g(hi);
    let mut side = 0i8;
    for _ in 0..100 {
        if hi - lo <= ROOT_TOL || -glo < ROOT_TOL {
            break;
        }
        let mut t = (lo * ghi - hi * glo) / (ghi - glo);
        if !(t > lo && t < hi) {
            t = 0.5 * (lo + hi);
        }
        let gt = g(t);
        if gt >= 0.0 {
            hi = t;
            ghi = gt;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        } else {
            lo = t;
            glo = gt;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        }
    }
    lo
}

fn emitter_frame(e: &Emitter) -> Result<(Vec3, Vec3, Vec3)> {
    let f = e
        .facing
        .try_normalize()
        .ok_or(Error::Degenerate("emitter facing is zero"))?;
    let up = if f.z.abs() < 0.9 { Vec3::Z } else { Vec3::X };
    let side = f
        .cross(up)
        .try_normalize()
        .ok_or(Error::Degenerate("emitter frame"))?;
    let up = side.cross(f);
    Ok((f, up, side))
}

fn run(
    emitter: &Emitter,
    receivers: &[Receiver],
    indenter: &IndenterState,
    scene: &Scene,
    seed: Seed,
    record: bool,
) -> Result<(TraceResult, Vec<PathRecord>)> {
    let n = emitter.rays_per_state;
    if n == 0 {
        return Err(Error::invalid("rays_per_state must be positive"));
    }
    if !(emitter.cone_half_angle > 0.0 && emitter.cone_half_angle <= PI / 2.0) {
        return Err(Error::Config("emitter cone half-angle must lie in (0, pi/2]".into()));
    }
    scene.validate()?;
    scene.surface.check_indenter(indenter)?;
    let tracer = Tracer::new(scene, receivers, indenter)?;
    let (f, up, side) = emitter_frame(emitter)?;
    let strata = ConeStrata::new(n, emitter.cone_half_angle);
    let batches = n.div_ceil(BATCH);

    let parts: Vec<(Tally, Vec<PathRecord>)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed.derive("ray-batch", b as u64).rng();
            let mut tally = Tally::new(receivers.len());
            let mut paths = Vec::new();
            for i in b * BATCH..((b + 1) * BATCH).min(n) {
                let u1: f64 = rng.random();
                let u2: f64 = rng.random();
                let (cos_t, phi, w) = strata.sample(i, u1, u2);
                let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
                let (s, c) = phi.sin_cos();
                let dir = f * cos_t + (up * (sin_t * c) + side * (sin_t * s));
                tally.emitted.add(w);
                let (bounces, termination, terminal) =
                    tracer.trace(Ray::new(emitter.position, dir, w), &mut tally);
                if record {
                    paths.push(PathRecord {
                        ray: i,
                        bounces,
                        termination,
                        launched: w,
                        terminal,
                    });
                }
            }
            (tally, paths)
        })
        .collect();

    let mut total = Tally::new(receivers.len());
    let mut paths = Vec::new();
    for (t, p) in parts {
        total.merge(&t);
        paths.extend(p);
    }
    let absorption = Absorption {
        bottom: total.bottom.value(),
        walls: total.walls.value(),
        tip: total.tip.value(),
        bounce_cap: total.cap.value(),
    };
    let mut absorbed = CompensatedSum::default();
    for s in [&total.bottom, &total.walls, &total.tip, &total.cap] {
        absorbed.merge(s);
    }
    Ok((
        TraceResult {
            received: total.received.iter().map(CompensatedSum::value).collect(),
            absorbed: absorbed.value(),
            escaped: total.escaped.value(),
            emitted: total.emitted.value(),
            absorption,
        },
        paths,
    ))
}

/// Traces one illumination state: a single emitter lit, all receivers read.
pub fn trace_state(
    emitter: &Emitter,
    receivers: &[Receiver],
    indenter: &IndenterState,
    scene: &Scene,
    seed: Seed,
) -> Result<TraceResult> {
    run(emitter, receivers, indenter, scene, seed, false).map(|(r, _)| r)
}

/// Same as [`trace_state`], also returning one record per launched ray.
pub fn trace_state_with_paths(
    emitter: &Emitter,
    receivers: &[Receiver],
    indenter: &IndenterState,
    scene: &Scene,
    seed: Seed,
) -> Result<(TraceResult, Vec<PathRecord>)> {
    run(emitter, receivers, indenter, scene, seed, true)
}

/// Single emitter facing a single receiver across a square cavity, with the
/// indenter on the midpoint between them. Both parts sit in sockets at a
/// fixed height above the cavity floor, so a thicker fill buries them deeper.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRig {
    pub separation: f64,
    pub mount_height: f64,
    pub scene: Scene,
    pub cone_half_angle: f64,
    pub rays_per_state: usize,
    pub receiver_radius: f64,
}

impl PairRig {
    /// Components at mid-height of a slab of the given thickness.
    pub fn at_thickness(&self, thickness: f64) -> (Emitter, Receiver, Scene) {
        let half = 0.5 * self.separation;
        let z = self.mount_height - thickness;
        let mut scene = self.scene.clone();
        scene.cavity_side = self.separation;
        scene.surface.slab_thickness_mm = thickness;
        let emitter = Emitter {
            position: Vec3::new(-half, 0.0, z),
            facing: Vec3::X,
            cone_half_angle: self.cone_half_angle,
            rays_per_state: self.rays_per_state,
        };
        let receiver = Receiver {
            position: Vec3::new(half, 0.0, z),
            facing: -Vec3::X,
            active_radius: self.receiver_radius,
        };
        (emitter, receiver, scene)
    }
}

/// Received power of the opposed pair at each indentation depth.
///
/// Every depth reuses the same ray fan, so differences between depths come
/// only from the changed geometry.
pub fn deadband_profile(rig: &PairRig, thickness: f64, depths: &[f64], seed: Seed) -> Result<Vec<f64>> {
    if !(thickness > rig.mount_height && rig.mount_height > 0.0) {
        return Err(Error::invalid("pair must be mounted inside the slab"));
    }
    if depths.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::invalid("depths must be ascending"));
    }
    let (emitter, receiver, scene) = rig.at_thickness(thickness);
    depths
        .iter()
        .map(|&d| {
            let ind = IndenterState::new(0.0, 0.0, d);
            trace_state(&emitter, std::slice::from_ref(&receiver), &ind, &scene, seed)
                .map(|r| r.received[0])
        })
        .collect()
}

/// A flat stretch between the two modes: a window of at least `min_width` in
/// depth over which the signal varies by less than `tolerance` of its total
/// range, entered from a higher signal and left toward a lower one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deadband {
    pub start: f64,
    pub end: f64,
}

pub fn detect_deadband(depths: &[f64], signal: &[f64], min_width: f64, tolerance: f64) -> Option<Deadband> {
    let n = signal.len().min(depths.len());
    if n < 3 {
        return None;
    }
    let (lo, hi) = signal[..n]
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let band = tolerance * (hi - lo);
    if !(band > 0.0) {
        return None;
    }
    let mut best: Option<Deadband> = None;
    for i in 0..n {
        let (mut wmin, mut wmax) = (signal[i], signal[i]);
        for j in i + 1..n {
            wmin = wmin.min(signal[j]);
            wmax = wmax.max(signal[j]);
            if wmax - wmin >= band {
                break;
            }
            if depths[j] - depths[i] + 1e-9 < min_width {
                continue;
            }
            let before = signal[..i].iter().any(|&v| v > wmin + band);
            let after = signal[j + 1..n].iter().any(|&v| v < wmax - band);
            if before && after {
                let width = depths[j] - depths[i];
                if best.is_none_or(|b| width > b.end - b.start) {
                    best = Some(Deadband {
                        start: depths[i],
                        end: depths[j],
                    });
                }
            }
        }
    }
    best
}
