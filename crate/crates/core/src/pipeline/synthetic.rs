//! Labeled synthetic scenes: a floor plane with spheres and boxes resting
//! on it, sampled uniformly on their surfaces.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};

use crate::data::{seeded_rng, PointCloud, Rng};
use crate::error::{Error, Result};
use crate::kv::{self, parse_list, parse_value};

pub const FLOOR_CLASS: usize = 0;
pub const SPHERE_CLASS: usize = 1;
pub const BOX_CLASS: usize = 2;
pub const NUM_SYNTHETIC_CLASSES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub class: usize,
}

/// Axis-aligned box surface.
#[derive(Clone, Debug, PartialEq)]
pub struct Cuboid {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub class: usize,
    /// Leave out the bottom face (a box resting on the floor).
    pub open_bottom: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecipe {
    /// Floor size along x and y, meters; the floor spans `[0, ex] × [0, ey]`.
    pub extent: [f64; 2],
    pub floor: bool,
    pub spheres: Vec<Sphere>,
    pub boxes: Vec<Cuboid>,
    /// Spheres and boxes placed at random per seed, on top of the fixed ones.
    pub random_spheres: usize,
    pub random_boxes: usize,
    /// Expected points per square meter of surface.
    pub density: f64,
    /// Standard deviation of the Gaussian coordinate noise, meters.
    pub noise: f64,
}

impl Default for SceneRecipe {
    fn default() -> Self {
        Self {
            extent: [4.0, 4.0],
            floor: true,
            spheres: Vec::new(),
            boxes: Vec::new(),
            random_spheres: 2,
            random_boxes: 2,
            density: 150.0,
            noise: 0.005,
        }
    }
}

/// A recipe plus the number of scenes to draw from it.
#[derive(Clone, Debug, PartialEq)]
pub struct RecipeFile {
    pub recipe: SceneRecipe,
    pub scenes: usize,
}

impl SceneRecipe {
    pub fn validate(&self) -> Result<()> {
        if !self.floor && self.spheres.is_empty() && self.boxes.is_empty() && self.random_spheres + self.random_boxes == 0 {
            return Err(Error::Config("scene recipe has no primitives".into()));
        }
        if self.extent.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("extent must be positive, got {:?}", self.extent)));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::Config(format!("density must be positive, got {}", self.density)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        if self.spheres.iter().any(|s| !(s.radius > 0.0)) {
            return Err(Error::Config("sphere radius must be positive".into()));
        }
        if self.boxes.iter().any(|b| (0..3).any(|a| !(b.max[a] > b.min[a]))) {
            return Err(Error::Config("box max corner must exceed min corner".into()));
        }
        Ok(())
    }

    /// Keys understood by [`RecipeFile::parse`].
    pub const KEYS: &'static [(&'static str, &'static str)] = &[
        ("extent", "floor size x,y in meters"),
        ("floor", "include the floor plane (true/false)"),
        ("sphere", "cx,cy,cz,radius[,class]; repeatable"),
        ("box", "x0,y0,z0,x1,y1,z1[,class]; repeatable; bottom face omitted"),
        ("random_spheres", "spheres placed at random per scene"),
        ("random_boxes", "boxes placed at random per scene"),
        ("density", "points per square meter of surface"),
        ("noise", "Gaussian coordinate noise sigma in meters"),
        ("scenes", "number of scenes drawn from the recipe"),
    ];

    pub fn to_kv(&self, scenes: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "extent = {},{}", self.extent[0], self.extent[1]);
        let _ = writeln!(s, "floor = {}", self.floor);
        for sp in &self.spheres {
            let c = sp.center;
            let _ = writeln!(s, "sphere = {},{},{},{},{}", c[0], c[1], c[2], sp.radius, sp.class);
        }
        for b in &self.boxes {
            let _ = writeln!(
                s,
                "box = {},{},{},{},{},{},{}",
                b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2], b.class
            );
        }
        let _ = writeln!(s, "random_spheres = {}", self.random_spheres);
        let _ = writeln!(s, "random_boxes = {}", self.random_boxes);
        let _ = writeln!(s, "density = {}", self.density);
        let _ = writeln!(s, "noise = {}", self.noise);
        let _ = writeln!(s, "scenes = {scenes}");
        s
    }
}

impl RecipeFile {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut recipe = SceneRecipe {
            random_spheres: 0,
            random_boxes: 0,
            ..SceneRecipe::default()
        };
        let mut scenes = 1;
        for e in kv::parse_kv(text, source)? {
            let (k, v) = (e.key.as_str(), e.value.as_str());
            match k {
                "extent" => {
                    let xs: Vec<f64> = parse_list(k, v)?;
                    recipe.extent = xs
                        .try_into()
                        .map_err(|_| Error::Config(format!("line {}: extent needs 2 values", e.line)))?;
                }
                "floor" => recipe.floor = parse_value(k, v)?,
                "sphere" => {
                    let xs: Vec<f64> = parse_list(k, v)?;
                    if !matches!(xs.len(), 4 | 5) {
                        return Err(Error::Config(format!("line {}: sphere needs 4 or 5 values", e.line)));
                    }
                    recipe.spheres.push(Sphere {
                        center: [xs[0], xs[1], xs[2]],
                        radius: xs[3],
                        class: class_value(xs.get(4), SPHERE_CLASS, e.line)?,
                    });
                }
                "box" => {
                    let xs: Vec<f64> = parse_list(k, v)?;
                    if !matches!(xs.len(), 6 | 7) {
                        return Err(Error::Config(format!("line {}: box needs 6 or 7 values", e.line)));
                    }
                    recipe.boxes.push(Cuboid {
                        min: [xs[0], xs[1], xs[2]],
                        max: [xs[3], xs[4], xs[5]],
                        class: class_value(xs.get(6), BOX_CLASS, e.line)?,
                        open_bottom: true,
                    });
                }
                "random_spheres" => recipe.random_spheres = parse_value(k, v)?,
                "random_boxes" => recipe.random_boxes = parse_value(k, v)?,
                "density" => recipe.density = parse_value(k, v)?,
                "noise" => recipe.noise = parse_value(k, v)?,
                "scenes" => scenes = parse_value(k, v)?,
                other => {
                    return Err(Error::Config(format!("unknown recipe key {other:?} on line {}", e.line)));
                }
            }
        }
        recipe.validate()?;
        if scenes == 0 {
            return Err(Error::Config("scenes must be at least 1".into()));
        }
        Ok(Self { recipe, scenes })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Scenes `0..scenes`, scene `i` drawn with seed `base_seed + i`.
    pub fn generate_all(&self, base_seed: u64) -> Result<Vec<PointCloud>> {
        (0..self.scenes as u64)
            .map(|i| generate_scene(&self.recipe, base_seed.wrapping_add(i)))
            .collect()
    }
}

fn class_value(v: Option<&f64>, default: usize, line: usize) -> Result<usize> {
    match v {
        None => Ok(default),
        Some(&c) if c >= 0.0 && c.fract() == 0.0 => Ok(c as usize),
        Some(&c) => Err(Error::Config(format!("line {line}: class must be a non-negative integer, got {c}"))),
    }
}

fn poisson(mean: f64, rng: &mut Rng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

fn sample_floor(extent: [f64; 2], density: f64, rng: &mut Rng, out: &mut Vec<([f64; 3], usize)>) {
    for _ in 0..poisson(extent[0] * extent[1] * density, rng) {
        out.push(([rng.random_range(0.0..extent[0]), rng.random_range(0.0..extent[1]), 0.0], FLOOR_CLASS));
    }
}

fn sample_sphere(s: &Sphere, density: f64, rng: &mut Rng, out: &mut Vec<([f64; 3], usize)>) {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for _ in 0..poisson(4.0 * PI * s.radius * s.radius * density, rng) {
        let v: [f64; 3] = loop {
            let v: [f64; 3] = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-12 {
                break [v[0] / n, v[1] / n, v[2] / n];
            }
        };
        let c = s.center;
        out.push(([c[0] + s.radius * v[0], c[1] + s.radius * v[1], c[2] + s.radius * v[2]], s.class));
    }
}

fn sample_box(b: &Cuboid, density: f64, rng: &mut Rng, out: &mut Vec<([f64; 3], usize)>) {
    let size = [b.max[0] - b.min[0], b.max[1] - b.min[1], b.max[2] - b.min[2]];
    // Faces as (fixed axis, fixed at max?) pairs.
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        for at_max in [false, true] {
            if axis == 2 && !at_max && b.open_bottom {
                continue;
            }
            faces.push((axis, at_max));
        }
    }
    for (axis, at_max) in faces {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let area = size[u] * size[v];
        for _ in 0..poisson(area * density, rng) {
            let mut p = [0.0; 3];
            p[axis] = if at_max { b.max[axis] } else { b.min[axis] };
            p[u] = b.min[u] + rng.random_range(0.0..1.0) * size[u];
            p[v] = b.min[v] + rng.random_range(0.0..1.0) * size[v];
            out.push((p, b.class));
        }
    }
}

/// Random non-overlapping placements (footprint circles kept apart).
fn random_primitives(recipe: &SceneRecipe, rng: &mut Rng) -> (Vec<Sphere>, Vec<Cuboid>) {
    let mut taken: Vec<([f64; 2], f64)> = Vec::new();
    let [ex, ey] = recipe.extent;
    let mut place = |reach: f64, rng: &mut Rng| -> Option<[f64; 2]> {
        for _ in 0..100 {
            let lo = reach.min(ex / 2.0);
            let ylo = reach.min(ey / 2.0);
            let c = [rng.random_range(lo..=ex - lo), rng.random_range(ylo..=ey - ylo)];
            let free = taken
                .iter()
                .all(|(o, r)| ((c[0] - o[0]).powi(2) + (c[1] - o[1]).powi(2)).sqrt() > r + reach + 0.1);
            if free {
                taken.push((c, reach));
                return Some(c);
            }
        }
        None
    };
    let mut spheres = Vec::new();
    for _ in 0..recipe.random_spheres {
        let r = rng.random_range(0.2..0.45);
        if let Some(c) = place(r, rng) {
            spheres.push(Sphere {
                center: [c[0], c[1], r],
                radius: r,
                class: SPHERE_CLASS,
            });
        }
    }
    let mut boxes = Vec::new();
    for _ in 0..recipe.random_boxes {
        let s: [f64; 3] = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.8)];
        let reach = 0.5 * (s[0] * s[0] + s[1] * s[1]).sqrt();
        if let Some(c) = place(reach, rng) {
            boxes.push(Cuboid {
                min: [c[0] - s[0] / 2.0, c[1] - s[1] / 2.0, 0.0],
                max: [c[0] + s[0] / 2.0, c[1] + s[1] / 2.0, s[2]],
                class: BOX_CLASS,
                open_bottom: true,
            });
        }
    }
    (spheres, boxes)
}

/// Samples a labeled cloud from `recipe`; deterministic per seed.
pub fn generate_scene(recipe: &SceneRecipe, seed: u64) -> Result<PointCloud> {
    recipe.validate()?;
    let mut rng = seeded_rng(seed);
    let (rs, rb) = random_primitives(recipe, &mut rng);
    let mut pts: Vec<([f64; 3], usize)> = Vec::new();
    if recipe.floor {
        sample_floor(recipe.extent, recipe.density, &mut rng, &mut pts);
    }
    for s in recipe.spheres.iter().chain(&rs) {
        sample_sphere(s, recipe.density, &mut rng, &mut pts);
    }
    for b in recipe.boxes.iter().chain(&rb) {
        sample_box(b, recipe.density, &mut rng, &mut pts);
    }
    if pts.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if recipe.noise > 0.0 {
        let noise = Normal::new(0.0, recipe.noise).expect("valid sigma");
        for (p, _) in &mut pts {
            for v in p.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    let (positions, labels) = pts.into_iter().unzip();
    PointCloud::new(positions, None, Some(labels))
}
