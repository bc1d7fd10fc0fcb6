//! Synthetic 2-D driving scenes and simulated range scans.
//!
//! A [`SceneConfig`] describes static convex obstacles, tracked agents with
//! keyframed trajectories, an ego path made of constant-velocity segments and
//! a planar range sensor. [`simulate`] samples it at a fixed rate and casts
//! every beam against the obstacle and box edges.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{is_convex, ray_segment, rect_corners, wrap_angle, Pose};
use crate::sensor::{Beam, LidarScan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Vehicle => "vehicle",
            Category::Pedestrian => "pedestrian",
            Category::Cyclist => "cyclist",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vehicle" => Some(Category::Vehicle),
            "pedestrian" => Some(Category::Pedestrian),
            "cyclist" => Some(Category::Cyclist),
            _ => None,
        }
    }
}

/// Trajectory keyframe `(time s, x m, y m, heading rad)`.
pub type Keyframe = [f64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub track_id: u32,
    pub category: Category,
    /// Lateral size, meters.
    pub width: f64,
    /// Longitudinal size, meters.
    pub length: f64,
    /// Linearly interpolated; held constant outside the keyframe span.
    pub trajectory: Vec<Keyframe>,
    /// Uniform per-frame position noise half-width (meters). Zero disables.
    #[serde(default)]
    pub jitter: f64,
}

impl AgentSpec {
    pub fn pose_at(&self, t: f64) -> Pose {
        let tr = &self.trajectory;
        let first = tr[0];
        let last = tr[tr.len() - 1];
        if t <= first[0] {
            return Pose::new(first[1], first[2], first[3]);
        }
        if t >= last[0] {
            return Pose::new(last[1], last[2], last[3]);
        }
        let i = tr.partition_point(|k| k[0] <= t) - 1;
        let (a, b) = (tr[i], tr[i + 1]);
        let s = (t - a[0]) / (b[0] - a[0]);
        Pose::new(
            a[1] + s * (b[1] - a[1]),
            a[2] + s * (b[2] - a[2]),
            a[3] + s * wrap_angle(b[3] - a[3]),
        )
    }
}

/// Constant forward speed and yaw rate for `duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoSegment {
    pub duration: f64,
    pub speed: f64,
    #[serde(default)]
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoPath {
    pub start: [f64; 3],
    /// The last segment extends past its duration.
    #[serde(default)]
    pub segments: Vec<EgoSegment>,
}

impl EgoPath {
    pub fn pose_at(&self, t: f64) -> Pose {
        let mut pose = Pose::new(self.start[0], self.start[1], self.start[2]);
        let mut remaining = t;
        for (i, seg) in self.segments.iter().enumerate() {
            let last = i + 1 == self.segments.len();
            let dt = if last { remaining } else { remaining.min(seg.duration) };
            if dt <= 0.0 {
                break;
            }
            pose = advance(pose, seg.speed, seg.yaw_rate, dt);
            remaining -= dt;
        }
        pose
    }
}

fn advance(p: Pose, v: f64, w: f64, dt: f64) -> Pose {
    if w.abs() < 1e-12 {
        let (s, c) = p.heading.sin_cos();
        Pose::new(p.x + v * dt * c, p.y + v * dt * s, p.heading)
    } else {
        let h1 = p.heading + w * dt;
        let r = v / w;
        Pose::new(p.x + r * (h1.sin() - p.heading.sin()), p.y - r * (h1.cos() - p.heading.cos()), h1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub beams: usize,
    pub max_range: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec { beams: 720, max_range: 30.0 }
    }
}

impl SensorSpec {
    /// Beam bearings spread uniformly over `[-π, π)`.
    pub fn bearings(&self) -> Vec<f64> {
        (0..self.beams).map(|j| -PI + j as f64 * 2.0 * PI / self.beams as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Obstacle {
    /// Convex polygon vertices in world meters.
    pub vertices: Vec<[f64; 2]>,
}

impl Obstacle {
    pub fn rect(cx: f64, cy: f64, heading: f64, length: f64, width: f64) -> Self {
        Obstacle { vertices: rect_corners(cx, cy, heading, length, width).iter().map(|&(x, y)| [x, y]).collect() }
    }

    fn points(&self) -> Vec<(f64, f64)> {
        self.vertices.iter().map(|v| (v[0], v[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    /// Half side of the square world, meters.
    pub half_extent: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    pub duration_s: f64,
    pub world: World,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    pub ego: EgoPath,
    #[serde(default)]
    pub sensor: SensorSpec,
}

/// Largest scene seed; TOML integers are signed 64-bit.
pub const MAX_SEED: u64 = i64::MAX as u64;

fn default_rate() -> f64 {
    10.0
}

impl SceneConfig {
    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SceneConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seed > MAX_SEED {
            return bad(format!("seed {} does not fit a TOML integer", self.seed));
        }
        if !(self.world.half_extent > 0.0) {
            return bad("empty world".into());
        }
        if !(self.rate_hz > 0.0) || !(self.duration_s > 0.0) || self.frame_count() == 0 {
            return bad(format!("rate {} Hz for {} s", self.rate_hz, self.duration_s));
        }
        if self.sensor.beams == 0 || !(self.sensor.max_range > 0.0) {
            return bad("sensor needs beams and a positive max_range".into());
        }
        for o in &self.world.obstacles {
            if !is_convex(&o.points()) {
                return bad(format!("obstacle {:?} is not a convex polygon", o.vertices));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for a in &self.agents {
            if !ids.insert(a.track_id) {
                return bad(format!("duplicate track id {}", a.track_id));
            }
            if !(a.width > 0.0 && a.length > 0.0) {
                return bad(format!("agent {} has non-positive dims", a.track_id));
            }
            if a.trajectory.is_empty() {
                return bad(format!("agent {} has no trajectory", a.track_id));
            }
            if a.trajectory.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                return bad(format!("agent {} trajectory times must increase", a.track_id));
            }
            if a.trajectory.iter().flatten().any(|v| !v.is_finite()) || !(a.jitter >= 0.0) {
                return bad(format!("agent {} has non-finite values", a.track_id));
            }
        }
        let end = (self.frame_count() - 1) as f64 / self.rate_hz;
        let any_moving = self.agents.iter().any(|a| {
            let p0 = a.pose_at(0.0);
            let p1 = a.pose_at(end);
            a.trajectory.len() > 1 && ((p1.x - p0.x).hypot(p1.y - p0.y) > 1e-9)
        });
        if !any_moving {
            return bad("scene has no moving agent".into());
        }

        // Nothing may overlap at spawn time.
        let ego = self.ego.pose_at(0.0);
        let ego_poly: Vec<_> = rect_corners(ego.x, ego.y, ego.heading, EGO_LENGTH, EGO_WIDTH).to_vec();
        let mut shapes: Vec<(String, Vec<(f64, f64)>)> = vec![("ego".into(), ego_poly)];
        for a in &self.agents {
            let p = a.pose_at(0.0);
            shapes.push((format!("agent {}", a.track_id), rect_corners(p.x, p.y, p.heading, a.length, a.width).to_vec()));
        }
        for (i, o) in self.world.obstacles.iter().enumerate() {
            shapes.push((format!("obstacle {i}"), o.points()));
        }
        for i in 0..shapes.len() {
            for j in (i + 1)..shapes.len() {
                if i > self.agents.len() && j > self.agents.len() {
                    continue; // obstacles may touch each other
                }
                if convex_overlap(&shapes[i].1, &shapes[j].1) {
                    return bad(format!("overlapping spawn: {} and {}", shapes[i].0, shapes[j].0));
                }
            }
        }
        Ok(())
    }
}

/// Ego footprint used for spawn checks.
pub const EGO_LENGTH: f64 = 4.6;
pub const EGO_WIDTH: f64 = 1.9;

fn convex_overlap(a: &[(f64, f64)], b: &[(f64, f64)]) -> bool {
    for poly in [a, b] {
        for i in 0..poly.len() {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            let axis = (q.1 - p.1, p.0 - q.0);
            let proj = |s: &[(f64, f64)]| {
                s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let d = v.0 * axis.0 + v.1 * axis.1;
                    (lo.min(d), hi.max(d))
                })
            };
            let (a0, a1) = proj(a);
            let (b0, b1) = proj(b);
            if a1 < b0 || b1 < a0 {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedBox {
    pub track_id: u32,
    pub category: Category,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub width: f64,
    pub length: f64,
}

impl TrackedBox {
    pub fn corners(&self) -> [(f64, f64); 4] {
        rect_corners(self.x, self.y, self.heading, self.length, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub ego: Pose,
    pub scan: LidarScan,
    pub boxes: Vec<TrackedBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub rate_hz: f64,
    pub frames: Vec<Frame>,
}

/// Samples the scene at `rate_hz` for `duration_s`. Deterministic in the
/// config (including its seed).
pub fn simulate(config: &SceneConfig) -> Result<FrameSequence> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let obstacles: Vec<Vec<(f64, f64)>> = config.world.obstacles.iter().map(Obstacle::points).collect();
    let frames = (0..config.frame_count())
        .map(|i| {
            let t = i as f64 / config.rate_hz;
            let ego = config.ego.pose_at(t);
            let boxes: Vec<TrackedBox> = config
                .agents
                .iter()
                .map(|a| {
                    let p = a.pose_at(t);
                    let (jx, jy) = if a.jitter > 0.0 {
                        (rng.gen_range(-a.jitter..=a.jitter), rng.gen_range(-a.jitter..=a.jitter))
                    } else {
                        (0.0, 0.0)
                    };
                    TrackedBox {
                        track_id: a.track_id,
                        category: a.category,
                        x: p.x + jx,
                        y: p.y + jy,
                        heading: p.heading,
                        width: a.width,
                        length: a.length,
                    }
                })
                .collect();
            let scan = raycast(&obstacles, &boxes, &ego, &config.sensor);
            Frame { timestamp: t, ego, scan, boxes }
        })
        .collect();
    Ok(FrameSequence { rate_hz: config.rate_hz, frames })
}

/// Casts every sensor beam from `ego` and keeps the nearest edge hit.
pub fn raycast(obstacles: &[Vec<(f64, f64)>], boxes: &[TrackedBox], ego: &Pose, sensor: &SensorSpec) -> LidarScan {
    let mut edges: Vec<((f64, f64), (f64, f64))> = Vec::new();
    for poly in obstacles {
        for i in 0..poly.len() {
            edges.push((poly[i], poly[(i + 1) % poly.len()]));
        }
    }
    for b in boxes {
        let c = b.corners();
        for i in 0..4 {
            edges.push((c[i], c[(i + 1) % 4]));
        }
    }
    let origin = (ego.x, ego.y);
    let beams = sensor
        .bearings()
        .into_iter()
        .map(|bearing| {
            let (s, c) = (ego.heading + bearing).sin_cos();
            let hit = edges
                .iter()
                .filter_map(|&(a, b)| ray_segment(origin, (c, s), a, b))
                .filter(|&t| t > 1e-9)
                .fold(f64::INFINITY, f64::min);
            Beam { bearing, range: (hit <= sensor.max_range).then_some(hit) }
        })
        .collect();
    LidarScan { beams, max_range: sensor.max_range, pose: *ego }
}

/// Built-in scene families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Several vehicles passing along a straight road, plus parked cars.
    StraightPass,
    /// Crossing traffic at a four-way intersection, including a turner.
    Intersection,
    /// Random obstacles with mixed-category agents.
    Clutter,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::StraightPass, Scenario::Intersection, Scenario::Clutter];

    /// Builds a valid scene. The seed is truncated to 63 bits so the config
    /// stays representable in TOML.
    pub fn generate(&self, seed: u64, duration_s: f64) -> SceneConfig {
        let seed = seed & MAX_SEED;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce7e);
        // Rejection sampling until nothing overlaps at spawn.
        for _ in 0..1000 {
            let cfg = match self {
                Scenario::StraightPass => straight_pass(&mut rng, seed, duration_s),
                Scenario::Intersection => intersection(&mut rng, seed, duration_s),
                Scenario::Clutter => clutter(&mut rng, seed, duration_s),
            };
            if cfg.validate().is_ok() {
                return cfg;
            }
        }
        panic!("scenario generator failed to produce a valid scene for seed {seed}");
    }
}

fn linear_track(id: u32, category: Category, dims: (f64, f64), start: (f64, f64), heading: f64, speed: f64, duration: f64) -> AgentSpec {
    let (s, c) = heading.sin_cos();
    let end = (start.0 + c * speed * duration, start.1 + s * speed * duration);
    AgentSpec {
        track_id: id,
        category,
        width: dims.0,
        length: dims.1,
        trajectory: vec![[0.0, start.0, start.1, heading], [duration, end.0, end.1, heading]],
        jitter: 0.0,
    }
}

fn vehicle_dims(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.gen_range(1.8..2.1), rng.gen_range(4.2..5.0))
}

/// Mostly fast movers with the occasional crawler below the vehicle threshold.
fn vehicle_speed(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.2) {
        1.0
    } else {
        rng.gen_range(3.0..8.0)
    }
}

fn straight_pass(rng: &mut ChaCha8Rng, seed: u64, duration: f64) -> SceneConfig {
    // Road along +x; ego alone in the lane at y = -1.75.
    let ego_speed = rng.gen_range(0.0..4.0);
    let lanes = [1.75, 5.25, -5.25];
    let mut agents = Vec::new();
    let mut id = 1;
    let n_movers = rng.gen_range(2..=4);
    for _ in 0..n_movers {
        let lane = lanes[rng.gen_range(0..lanes.len())];
        let forward = lane < 0.0 || rng.gen_bool(0.3);
        let heading = if forward { 0.0 } else { PI };
        let speed = vehicle_speed(rng);
        // Spawn so the mover crosses the field of view during the window.
        let x0 = if forward { rng.gen_range(-14.0..4.0) } else { rng.gen_range(-4.0..14.0) };
        agents.push(linear_track(id, Category::Vehicle, vehicle_dims(rng), (x0, lane), heading, speed, duration));
        id += 1;
    }
    for _ in 0..rng.gen_range(0..=2) {
        let side = if rng.gen_bool(0.5) { 8.5 } else { -8.5 };
        let x0 = rng.gen_range(-12.0..12.0);
        let dims = vehicle_dims(rng);
        agents.push(linear_track(id, Category::Vehicle, dims, (x0, side), 0.0, 0.0, duration));
        id += 1;
    }
    if rng.gen_bool(0.5) {
        let side = if rng.gen_bool(0.5) { 11.0 } else { -11.0 };
        let heading = if rng.gen_bool(0.5) { 0.0 } else { PI };
        let x0 = rng.gen_range(-10.0..10.0);
        let cat = if rng.gen_bool(0.5) { Category::Pedestrian } else { Category::Cyclist };
        let (dims, speed) = match cat {
            Category::Pedestrian => ((0.6, 0.6), rng.gen_range(0.5..1.6)),
            _ => ((0.7, 1.8), rng.gen_range(2.0..5.0)),
        };
        agents.push(linear_track(id, cat, dims, (x0, side), heading, speed, duration));
    }
    let mut obstacles = Vec::new();
    let mut x = -40.0;
    while x < 40.0 {
        let len = rng.gen_range(5.0..12.0);
        let gap = rng.gen_range(1.0..5.0);
        for side in [1.0, -1.0] {
            if rng.gen_bool(0.8) {
                let depth = rng.gen_range(3.0..6.0);
                obstacles.push(Obstacle::rect(x + len / 2.0, side * (13.0 + depth / 2.0), 0.0, len, depth));
            }
        }
        x += len + gap;
    }
    SceneConfig {
        seed,
        rate_hz: 10.0,
        duration_s: duration,
        world: World { half_extent: 60.0, obstacles },
        agents,
        ego: EgoPath { start: [0.0, -1.75, 0.0], segments: vec![EgoSegment { duration, speed: ego_speed, yaw_rate: 0.0 }] },
        sensor: SensorSpec::default(),
    }
}

fn intersection(rng: &mut ChaCha8Rng, seed: u64, duration: f64) -> SceneConfig {
    // Roads along x and y crossing at the origin; ego waits south of it.
    let mut agents = Vec::new();
    let mut id = 1;
    for _ in 0..rng.gen_range(2..=3) {
        let eastbound = rng.gen_bool(0.5);
        let (lane, heading) = if eastbound { (-1.75, 0.0) } else { (1.75, PI) };
        let speed = vehicle_speed(rng);
        let x0 = if eastbound { rng.gen_range(-16.0..0.0) } else { rng.gen_range(0.0..16.0) };
        agents.push(linear_track(id, Category::Vehicle, vehicle_dims(rng), (x0, lane), heading, speed, duration));
        id += 1;
    }
    // Left turner: northbound, then swings west.
    if rng.gen_bool(0.7) {
        let speed = rng.gen_range(3.0..6.0);
        let y0 = rng.gen_range(-2.0..3.0);
        let dims = vehicle_dims(rng);
        let steps = 8;
        let mut trajectory = Vec::with_capacity(steps + 1);
        let radius = 5.0;
        let t_turn = rng.gen_range(0.4..1.0) * duration;
        for k in 0..=steps {
            let t = duration * k as f64 / steps as f64;
            let (x, y, h) = if t <= t_turn {
                (1.75, y0 + speed * t, PI / 2.0)
            } else {
                let ang = speed * (t - t_turn) / radius;
                let cy = y0 + speed * t_turn;
                (1.75 - radius * (1.0 - ang.cos()), cy + radius * ang.sin(), PI / 2.0 + ang)
            };
            trajectory.push([t, x, y, h]);
        }
        agents.push(AgentSpec { track_id: id, category: Category::Vehicle, width: dims.0, length: dims.1, trajectory, jitter: 0.0 });
        id += 1;
    }
    if rng.gen_bool(0.6) {
        let cat = if rng.gen_bool(0.5) { Category::Pedestrian } else { Category::Cyclist };
        let (dims, speed) = match cat {
            Category::Pedestrian => ((0.6, 0.6), rng.gen_range(0.5..1.6)),
            _ => ((0.7, 1.8), rng.gen_range(2.0..5.0)),
        };
        let y0 = rng.gen_range(-6.0..6.0);
        agents.push(linear_track(id, cat, dims, (-6.5, y0), PI / 2.0, speed, duration));
    }
    let mut obstacles = Vec::new();
    for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
        let w = rng.gen_range(8.0..14.0);
        let h = rng.gen_range(8.0..14.0);
        let off = rng.gen_range(7.5..9.0);
        obstacles.push(Obstacle::rect(sx * (off + w / 2.0), sy * (off + h / 2.0), 0.0, w, h));
    }
    let ego_y = rng.gen_range(-16.0..-11.0);
    let ego_speed = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.5..2.0) };
    SceneConfig {
        seed,
        rate_hz: 10.0,
        duration_s: duration,
        world: World { half_extent: 60.0, obstacles },
        agents,
        ego: EgoPath {
            start: [1.75, ego_y, PI / 2.0],
            segments: vec![EgoSegment { duration, speed: ego_speed, yaw_rate: 0.0 }],
        },
        sensor: SensorSpec::default(),
    }
}

fn clutter(rng: &mut ChaCha8Rng, seed: u64, duration: f64) -> SceneConfig {
    let mut obstacles = Vec::new();
    for _ in 0..rng.gen_range(4..10) {
        let (r, a) = (rng.gen_range(7.0..20.0), rng.gen_range(-PI..PI));
        obstacles.push(Obstacle::rect(r * a.cos(), r * a.sin(), rng.gen_range(-PI..PI), rng.gen_range(1.0..5.0), rng.gen_range(1.0..5.0)));
    }
    let mut agents = Vec::new();
    for id in 1..=rng.gen_range(2..=5u32) {
        let (cat, dims, speed) = match rng.gen_range(0..4) {
            0 | 1 => (Category::Vehicle, vehicle_dims(rng), vehicle_speed(rng)),
            2 => (Category::Pedestrian, (0.6, 0.6), rng.gen_range(0.3..1.6)),
            _ => (Category::Cyclist, (0.7, 1.8), rng.gen_range(0.5..5.0)),
        };
        let (r, a) = (rng.gen_range(4.0..14.0), rng.gen_range(-PI..PI));
        let heading = rng.gen_range(-PI..PI);
        agents.push(linear_track(id, cat, dims, (r * a.cos(), r * a.sin()), heading, speed, duration));
    }
    SceneConfig {
        seed,
        rate_hz: 10.0,
        duration_s: duration,
        world: World { half_extent: 60.0, obstacles },
        agents,
        ego: EgoPath { start: [0.0, 0.0, rng.gen_range(-PI..PI)], segments: vec![EgoSegment { duration, speed: rng.gen_range(0.0..2.0), yaw_rate: rng.gen_range(-0.2..0.2) }] },
        sensor: SensorSpec::default(),
    }
}
