//! Acoustic scene sampling and multichannel mixture rendering.

mod ism;
mod mixture;
pub mod voice;

pub use ism::{eyring_absorption, lattice_absorption, simulate_rir, Rir, RirOptions};
pub use mixture::{fft_convolve, render_mixture, render_with_rirs, scene_rirs, MixtureItem, REFERENCE_MIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of attempts the scene sampler makes before declaring the geometry infeasible.
pub const MAX_SCENE_ATTEMPTS: usize = 100;

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub width: f64,
    pub length: f64,
    pub height: f64,
    /// Reverberation time in seconds.
    pub t60: f64,
}

impl RoomSpec {
    pub fn dims(&self) -> Point3 {
        [self.width, self.length, self.height]
    }

    pub fn volume(&self) -> f64 {
        self.width * self.length * self.height
    }

    pub fn surface(&self) -> f64 {
        2.0 * (self.width * self.length + self.width * self.height + self.length * self.height)
    }

    /// Strict interior test.
    pub fn contains(&self, p: &Point3) -> bool {
        p.iter().zip(self.dims()).all(|(&x, d)| x > 0.0 && x < d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayPose {
    pub center: Point3,
    /// Array orientation in radians, in [0, 2π).
    pub rotation: f64,
    pub mic_count: usize,
    pub diameter: f64,
}

impl ArrayPose {
    /// Microphones equally spaced on the circle, microphone 0 at the array orientation.
    pub fn mic_positions(&self) -> Vec<Point3> {
        let r = self.diameter / 2.0;
        (0..self.mic_count)
            .map(|m| {
                let a = self.rotation + std::f64::consts::TAU * m as f64 / self.mic_count as f64;
                [
                    self.center[0] + r * a.cos(),
                    self.center[1] + r * a.sin(),
                    self.center[2],
                ]
            })
            .collect()
    }

    /// Position of a source at `doa_deg` (relative to the array orientation) and distance `dist`
    /// in the horizontal plane of the array.
    pub fn source_position(&self, doa_deg: f64, dist: f64) -> Point3 {
        let a = self.rotation + doa_deg.to_radians();
        [
            self.center[0] + dist * a.cos(),
            self.center[1] + dist * a.sin(),
            self.center[2],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room: RoomSpec,
    pub array: ArrayPose,
    /// Target direction in degrees relative to the array orientation.
    pub target_doa: f64,
    pub target_dist: f64,
    pub interferer_doas: Vec<f64>,
    pub interferer_dists: Vec<f64>,
}

impl SceneSpec {
    pub fn interferer_count(&self) -> usize {
        self.interferer_doas.len()
    }

    pub fn target_position(&self) -> Point3 {
        self.array.source_position(self.target_doa, self.target_dist)
    }

    pub fn interferer_positions(&self) -> Vec<Point3> {
        self.interferer_doas
            .iter()
            .zip(&self.interferer_dists)
            .map(|(&a, &d)| self.array.source_position(a, d))
            .collect()
    }
}

/// Sampling ranges for [`sample_scene`]. Defaults follow the published room and array
/// protocol: rooms 2.5–5 × 3–9 × 2.2–3.5 m, T60 0.2–0.5 s, a 10 cm three-microphone
/// circular array at 1.5 m height kept 1.2 m away from the walls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub width: [f64; 2],
    pub length: [f64; 2],
    pub height: [f64; 2],
    pub t60: [f64; 2],
    pub wall_margin: f64,
    pub array_height: f64,
    pub mic_count: usize,
    pub array_diameter: f64,
    /// Distance range of every source from the array center.
    pub source_distance: [f64; 2],
    /// Minimum clearance between sources and walls.
    pub source_wall_margin: f64,
    /// Angular gap kept free of interferers on both sides of the target.
    pub target_gap_deg: f64,
    pub min_separation_deg: f64,
    pub interferer_count: usize,
    pub doa_resolution_deg: f64,
    /// Fixed target direction; `None` draws uniformly from the DoA grid.
    pub target_doa_deg: Option<f64>,
    pub sample_rate: u32,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            width: [2.5, 5.0],
            length: [3.0, 9.0],
            height: [2.2, 3.5],
            t60: [0.2, 0.5],
            wall_margin: 1.2,
            array_height: 1.5,
            mic_count: 3,
            array_diameter: 0.10,
            source_distance: [0.8, 1.2],
            source_wall_margin: 0.1,
            target_gap_deg: 10.0,
            min_separation_deg: 10.0,
            interferer_count: 5,
            doa_resolution_deg: 5.0,
            target_doa_deg: None,
            sample_rate: crate::SAMPLE_RATE,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("width", self.width),
            ("length", self.length),
            ("height", self.height),
            ("t60", self.t60),
            ("source_distance", self.source_distance),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return Err(Error::Config(format!("invalid {name} range {r:?}")));
            }
        }
        if self.mic_count == 0 || self.array_diameter <= 0.0 {
            return Err(Error::Config("array needs at least one microphone and a positive diameter".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if 2.0 * self.target_gap_deg >= 360.0 {
            return Err(Error::Config("target gap leaves no room for interferers".into()));
        }
        DoaGrid::new(self.doa_resolution_deg)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<DoaGrid> {
        DoaGrid::new(self.doa_resolution_deg)
    }
}

/// Discrete direction-of-arrival grid with `360 / resolution` directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoaGrid {
    resolution: f64,
    len: usize,
}

impl DoaGrid {
    pub fn new(resolution_deg: f64) -> Result<Self> {
        if !(resolution_deg > 0.0) {
            return Err(Error::Config(format!("DoA resolution must be positive, got {resolution_deg}")));
        }
        let n = 360.0 / resolution_deg;
        if (n - n.round()).abs() > 1e-9 {
            return Err(Error::Config(format!("DoA resolution {resolution_deg} does not divide 360")));
        }
        Ok(Self {
            resolution: resolution_deg,
            len: n.round() as usize,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Number of discrete directions `D`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Nearest grid index with wraparound.
    pub fn index(&self, degrees: f64) -> usize {
        doa_to_index(degrees, self.resolution)
    }

    pub fn degrees(&self, index: usize) -> f64 {
        (index % self.len) as f64 * self.resolution
    }
}

/// `round(φ / resolution) mod D`. The resolution must divide 360 (see [`DoaGrid::new`]).
pub fn doa_to_index(degrees: f64, resolution: f64) -> usize {
    let d = (360.0 / resolution).round() as i64;
    ((degrees / resolution).round() as i64).rem_euclid(d) as usize
}

/// Smallest absolute angular difference in degrees.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Draws a random scene. Deterministic for a fixed seed.
///
/// The target sits at a grid direction; interferers are placed one per angular segment of
/// the annulus that remains after removing the gap around the target, with a minimum
/// pairwise separation. Any geometric violation resamples the whole scene.
pub fn sample_scene(seed: u64, cfg: &SimulationConfig) -> Result<SceneSpec> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_reason = String::new();
    for _ in 0..MAX_SCENE_ATTEMPTS {
        match try_sample(&mut rng, cfg, &grid) {
            Ok(scene) => return Ok(scene),
            Err(reason) => last_reason = reason,
        }
    }
    Err(Error::Infeasible {
        attempts: MAX_SCENE_ATTEMPTS,
        reason: last_reason,
    })
}

fn try_sample(
    rng: &mut ChaCha8Rng,
    cfg: &SimulationConfig,
    grid: &DoaGrid,
) -> std::result::Result<SceneSpec, String> {
    let room = RoomSpec {
        width: uniform(rng, cfg.width),
        length: uniform(rng, cfg.length),
        height: uniform(rng, cfg.height),
        t60: uniform(rng, cfg.t60),
    };
    let m = cfg.wall_margin;
    if room.width <= 2.0 * m || room.length <= 2.0 * m {
        return Err(format!(
            "room {:.2}x{:.2} m cannot keep a {m} m wall margin",
            room.width, room.length
        ));
    }
    if cfg.array_height >= room.height {
        return Err("array height above the ceiling".into());
    }
    let center = [
        rng.random_range(m..room.width - m),
        rng.random_range(m..room.length - m),
        cfg.array_height,
    ];
    let array = ArrayPose {
        center,
        rotation: rng.random_range(0.0..std::f64::consts::TAU),
        mic_count: cfg.mic_count,
        diameter: cfg.array_diameter,
    };

    let target_doa = match cfg.target_doa_deg {
        Some(d) => grid.degrees(grid.index(d)),
        None => grid.degrees(rng.random_range(0..grid.len())),
    };
    let target_dist = uniform(rng, cfg.source_distance);

    let k = cfg.interferer_count;
    let arc = 360.0 - 2.0 * cfg.target_gap_deg;
    let seg = arc / k.max(1) as f64;
    let mut interferer_doas = Vec::with_capacity(k);
    let mut interferer_dists = Vec::with_capacity(k);
    for i in 0..k {
        let lo = target_doa + cfg.target_gap_deg + i as f64 * seg;
        let a = rng.random_range(lo..lo + seg).rem_euclid(360.0);
        interferer_doas.push(a);
        interferer_dists.push(uniform(rng, cfg.source_distance));
    }

    let scene = SceneSpec {
        room,
        array,
        target_doa,
        target_dist,
        interferer_doas,
        interferer_dists,
    };
    check_scene(&scene, cfg)?;
    Ok(scene)
}

/// Verifies every geometric constraint of a scene; returns the first violation.
pub fn check_scene(scene: &SceneSpec, cfg: &SimulationConfig) -> std::result::Result<(), String> {
    let room = &scene.room;
    let c = scene.array.center;
    let m = cfg.wall_margin - 1e-9;
    if c[0] < m || c[0] > room.width - m || c[1] < m || c[1] > room.length - m {
        return Err("array center violates the wall margin".into());
    }
    let margin = cfg.source_wall_margin;
    let inside = |p: &Point3| {
        p[0] > margin
            && p[0] < room.width - margin
            && p[1] > margin
            && p[1] < room.length - margin
            && p[2] > margin
            && p[2] < room.height - margin
    };
    if !inside(&scene.target_position()) {
        return Err("target outside the room".into());
    }
    for (i, p) in scene.interferer_positions().iter().enumerate() {
        if !inside(p) {
            return Err(format!("interferer {i} outside the room"));
        }
    }
    for (i, &a) in scene.interferer_doas.iter().enumerate() {
        if angular_distance(a, scene.target_doa) < cfg.target_gap_deg {
            return Err(format!("interferer {i} inside the target gap"));
        }
        for &b in &scene.interferer_doas[i + 1..] {
            if angular_distance(a, b) < cfg.min_separation_deg {
                return Err("interferers closer than the minimum separation".into());
            }
        }
    }
    Ok(())
}
