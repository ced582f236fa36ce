//! Labeled synthetic rooms: floor, walls, ceiling and box-shaped furniture.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::{RoomCloud, MAX_CLASSES, PALETTE};
use crate::error::{Error, Result};

const FLOOR: usize = 0;
const WALL: usize = 1;
const CEILING: usize = 2;
const FIRST_OBJECT_CLASS: usize = 3;

const COLOR_JITTER: i32 = 12;

/// Parameters of a generated room.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    /// Room extent along x, y, z in meters; the room spans `[0, size]`.
    pub size: [f64; 3],
    pub points: usize,
    pub classes: usize,
    /// Furniture boxes; raised as needed so every object class appears.
    pub objects: usize,
    /// Standard deviation of Gaussian position noise, meters.
    pub noise: f64,
    /// Only floor points.
    pub floor_only: bool,
    /// Relative class frequencies; uniform when `None`.
    pub class_weights: Option<Vec<f64>>,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self {
            size: [2.0, 2.0, 2.5],
            points: 4096,
            classes: MAX_CLASSES,
            objects: 4,
            noise: 0.005,
            floor_only: false,
            class_weights: None,
        }
    }
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > MAX_CLASSES {
            return Err(Error::Config(format!(
                "class count must be in 1..={MAX_CLASSES}, got {}",
                self.classes
            )));
        }
        if !self.size.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!(
                "room size must be positive, got {:?}",
                self.size
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be non-negative, got {}",
                self.noise
            )));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.classes || w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::Config("one non-negative weight per class".into()));
            }
            if w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config("class weights sum to zero".into()));
            }
        }
        Ok(())
    }

    /// Effective per-class weights.
    pub fn weights(&self) -> Vec<f64> {
        if self.floor_only {
            let mut w = vec![0.0; self.classes];
            w[FLOOR] = 1.0;
            return w;
        }
        self.class_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.classes])
    }
}

/// An axis-aligned rectangle: `origin + u * a + v * b`, `u, v` in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
struct Patch {
    origin: [f64; 3],
    a: [f64; 3],
    b: [f64; 3],
}

impl Patch {
    fn area(&self) -> f64 {
        let n = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        n(self.a) * n(self.b)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        [0, 1, 2].map(|k| self.origin[k] + u * self.a[k] + v * self.b[k])
    }
}

fn boxed(lo: [f64; 3], hi: [f64; 3]) -> Vec<Patch> {
    let [dx, dy, dz] = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    vec![
        // top
        Patch {
            origin: [lo[0], lo[1], hi[2]],
            a: [dx, 0.0, 0.0],
            b: [0.0, dy, 0.0],
        },
        // four sides
        Patch {
            origin: lo,
            a: [dx, 0.0, 0.0],
            b: [0.0, 0.0, dz],
        },
        Patch {
            origin: [lo[0], hi[1], lo[2]],
            a: [dx, 0.0, 0.0],
            b: [0.0, 0.0, dz],
        },
        Patch {
            origin: lo,
            a: [0.0, dy, 0.0],
            b: [0.0, 0.0, dz],
        },
        Patch {
            origin: [hi[0], lo[1], lo[2]],
            a: [0.0, dy, 0.0],
            b: [0.0, 0.0, dz],
        },
    ]
}

fn class_surfaces(spec: &RoomSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<Patch>> {
    let [x, y, z] = spec.size;
    let mut surfaces: Vec<Vec<Patch>> = vec![Vec::new(); spec.classes];
    surfaces[FLOOR].push(Patch {
        origin: [0.0; 3],
        a: [x, 0.0, 0.0],
        b: [0.0, y, 0.0],
    });
    if spec.classes > WALL {
        surfaces[WALL] = vec![
            Patch {
                origin: [0.0; 3],
                a: [x, 0.0, 0.0],
                b: [0.0, 0.0, z],
            },
            Patch {
                origin: [0.0, y, 0.0],
                a: [x, 0.0, 0.0],
                b: [0.0, 0.0, z],
            },
            Patch {
                origin: [0.0; 3],
                a: [0.0, y, 0.0],
                b: [0.0, 0.0, z],
            },
            Patch {
                origin: [x, 0.0, 0.0],
                a: [0.0, y, 0.0],
                b: [0.0, 0.0, z],
            },
        ];
    }
    if spec.classes > CEILING {
        surfaces[CEILING].push(Patch {
            origin: [0.0, 0.0, z],
            a: [x, 0.0, 0.0],
            b: [0.0, y, 0.0],
        });
    }
    if spec.classes > FIRST_OBJECT_CLASS {
        let object_classes = spec.classes - FIRST_OBJECT_CLASS;
        let footprint = x.min(y);
        for i in 0..spec.objects.max(object_classes) {
            let w = rng.random_range(0.15..0.4) * footprint;
            let d = rng.random_range(0.15..0.4) * footprint;
            let h = rng.random_range(0.2..0.5) * z;
            let ox = rng.random_range(0.0..(x - w));
            let oy = rng.random_range(0.0..(y - d));
            surfaces[FIRST_OBJECT_CLASS + i % object_classes]
                .extend(boxed([ox, oy, 0.0], [ox + w, oy + d, h]));
        }
    }
    surfaces
}

/// Samples `spec.points` labeled points. Each point first draws its class
/// from the class weights, then a surface of that class by area, then a
/// uniform location on it. Deterministic per `seed`.
pub fn generate_synthetic_room(spec: &RoomSpec, seed: u64) -> Result<RoomCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surfaces = class_surfaces(spec, &mut rng);
    let class_dist = WeightedIndex::new(spec.weights())
        .map_err(|e| Error::Config(format!("class weights: {e}")))?;
    let patch_dists: Vec<Option<WeightedIndex<f64>>> = surfaces
        .iter()
        .map(|s| WeightedIndex::new(s.iter().map(Patch::area)).ok())
        .collect();
    let noise = (spec.noise > 0.0).then(|| Normal::new(0.0, spec.noise).expect("valid sigma"));

    let mut room = RoomCloud::default();
    for _ in 0..spec.points {
        let class = class_dist.sample(&mut rng);
        let dist = patch_dists[class]
            .as_ref()
            .expect("every weighted class has a surface");
        let patch = surfaces[class][dist.sample(&mut rng)];
        let mut p = patch.sample(&mut rng);
        if let Some(n) = &noise {
            for v in &mut p {
                *v += n.sample(&mut rng);
            }
        }
        let base = PALETTE[class];
        let color = base.map(|c| {
            (c as i32 + rng.random_range(-COLOR_JITTER..=COLOR_JITTER)).clamp(0, 255) as u8
        });
        room.positions.push(p);
        room.colors.push(color);
        room.labels.push(Some(class));
    }
    Ok(room)
}
