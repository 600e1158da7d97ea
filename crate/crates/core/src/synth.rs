//! Procedural (image, graph) pairs.
//!
//! A scene places one to four differently shaped blobs, each in its own
//! 32x32 quadrant of a 64x64 canvas. Shapes stand in for anatomies; their
//! size and intensity are observations; four designated kind/size/intensity
//! combinations additionally carry a pathology whose uncertainty is drawn
//! from the seed and drawn on the image as a 4x4 center marker (solid for
//! definitely present, checkered for uncertain, none for definitely absent).
//!
//! Draw order from `ChaCha8Rng::seed_from_u64(seed)`, integer draws only:
//! shape count in `1..=4`; kinds by partial Fisher-Yates over the four
//! kinds; quadrants the same way; then per shape in pick order: a coin
//! forcing the designated combination, otherwise size then intensity; the
//! center jitter `y` then `x`; and, for designated combinations, the
//! pathology uncertainty in `0..3`. Pixel noise uses stream 1 of the same
//! seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{EntityClassSpace, RadiologyGraph, Relation, RelationType, Uncertainty};
use crate::image::ImageGrid;

pub const CANVAS: usize = 64;
const QUADRANT: usize = 32;
pub const BACKGROUND: f64 = 0.5;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.02;
const MARKER: usize = 4;

/// Class names in id order.
pub const SYNTH_CLASSES: [&str; 12] = [
    "disc",
    "square",
    "triangle",
    "cross",
    "bright",
    "dark",
    "small",
    "large",
    "opacity",
    "nodule",
    "effusion",
    "atelectasis",
];

pub fn synth_ontology() -> EntityClassSpace {
    EntityClassSpace::new(SYNTH_CLASSES).expect("static class list is valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disc,
    Square,
    Triangle,
    Cross,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Disc, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Cross];

    pub fn class_id(self) -> usize {
        self as usize
    }

    /// The size/intensity combination that carries a pathology, and the
    /// pathology's class id.
    pub fn designated(self) -> (Size, Intensity, usize) {
        match self {
            ShapeKind::Disc => (Size::Large, Intensity::Bright, 8),
            ShapeKind::Square => (Size::Small, Intensity::Dark, 9),
            ShapeKind::Triangle => (Size::Large, Intensity::Dark, 10),
            ShapeKind::Cross => (Size::Small, Intensity::Bright, 11),
        }
    }

    /// Whether the offset `(dy, dx)` from the center lies inside the shape
    /// of radius `r`.
    pub fn contains(self, dy: i64, dx: i64, r: i64) -> bool {
        match self {
            ShapeKind::Disc => dy * dy + dx * dx <= r * r,
            ShapeKind::Square => dy.abs() * 4 <= r * 3 && dx.abs() * 4 <= r * 3,
            ShapeKind::Triangle => dy.abs() <= r && dx.abs() * 2 <= dy + r,
            ShapeKind::Cross => {
                let arm = r / 3;
                (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Size {
    Small,
    Large,
}

impl Size {
    pub fn radius(self) -> usize {
        match self {
            Size::Small => 6,
            Size::Large => 12,
        }
    }

    pub fn class_id(self) -> usize {
        match self {
            Size::Small => 6,
            Size::Large => 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    Bright,
    Dark,
}

impl Intensity {
    pub fn level(self) -> f64 {
        match self {
            Intensity::Bright => 0.9,
            Intensity::Dark => 0.1,
        }
    }

    pub fn opposite(self) -> Intensity {
        match self {
            Intensity::Bright => Intensity::Dark,
            Intensity::Dark => Intensity::Bright,
        }
    }

    pub fn class_id(self) -> usize {
        match self {
            Intensity::Bright => 4,
            Intensity::Dark => 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedShape {
    pub kind: ShapeKind,
    /// Pixel center `(y, x)`.
    pub center: (usize, usize),
    pub size: Size,
    pub intensity: Intensity,
    /// Present exactly when size and intensity form the designated
    /// combination of `kind`.
    pub pathology: Option<Uncertainty>,
}

impl PlacedShape {
    fn quadrant(&self) -> (usize, usize) {
        (self.center.0 / QUADRANT, self.center.1 / QUADRANT)
    }
}

/// Shapes sorted by kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub shapes: Vec<PlacedShape>,
}

impl SceneSpec {
    /// Every violated scene invariant; empty when the scene is legal.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(1..=4).contains(&self.shapes.len()) {
            out.push(format!("{} shapes, expected 1 to 4", self.shapes.len()));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            let r = s.size.radius() as i64;
            let (y, x) = (s.center.0 as i64, s.center.1 as i64);
            let (qy, qx) = s.quadrant();
            let (top, left) = ((qy * QUADRANT) as i64, (qx * QUADRANT) as i64);
            let q = QUADRANT as i64;
            if y - r < top || x - r < left || y + r >= top + q || x + r >= left + q {
                out.push(format!("shape {i} leaves its quadrant"));
            }
            if y + r >= CANVAS as i64 || x + r >= CANVAS as i64 {
                out.push(format!("shape {i} leaves the canvas"));
            }
            let (ds, di, _) = s.kind.designated();
            if s.pathology.is_some() != (s.size == ds && s.intensity == di) {
                out.push(format!("shape {i} pathology does not follow its attributes"));
            }
            for (j, t) in self.shapes.iter().enumerate().skip(i + 1) {
                if s.kind == t.kind {
                    out.push(format!("shapes {i} and {j} share a kind"));
                }
                if s.quadrant() == t.quadrant() {
                    out.push(format!("shapes {i} and {j} share a quadrant"));
                }
            }
            if i > 0 && self.shapes[i - 1].kind > s.kind {
                out.push("shapes are not sorted by kind".into());
            }
        }
        out
    }
}

/// First `k` entries of a Fisher-Yates shuffle of `0..n`.
fn partial_shuffle(rng: &mut ChaCha8Rng, n: u32, k: usize) -> Vec<usize> {
    let mut items: Vec<usize> = (0..n as usize).collect();
    for i in 0..k {
        let j = rng.gen_range(i as u32..n) as usize;
        items.swap(i, j);
    }
    items.truncate(k);
    items
}

pub fn sample_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(1u32..=4) as usize;
    let kinds = partial_shuffle(&mut rng, 4, count);
    let quadrants = partial_shuffle(&mut rng, 4, count);
    let mut shapes: Vec<PlacedShape> = kinds
        .iter()
        .zip(&quadrants)
        .map(|(&k, &q)| {
            let kind = ShapeKind::ALL[k];
            let (ds, di, _) = kind.designated();
            let (size, intensity) = if rng.gen_range(0u32..2) == 0 {
                (ds, di)
            } else {
                let size = [Size::Small, Size::Large][rng.gen_range(0u32..2) as usize];
                let intensity = [Intensity::Bright, Intensity::Dark][rng.gen_range(0u32..2) as usize];
                (size, intensity)
            };
            let r = size.radius() as u32;
            let span = QUADRANT as u32 - 2 * r;
            let y = (q / 2) * QUADRANT + (r + rng.gen_range(0..span)) as usize;
            let x = (q % 2) * QUADRANT + (r + rng.gen_range(0..span)) as usize;
            let pathology = (size == ds && intensity == di)
                .then(|| Uncertainty::ALL[rng.gen_range(0u32..3) as usize]);
            PlacedShape {
                kind,
                center: (y, x),
                size,
                intensity,
                pathology,
            }
        })
        .collect();
    shapes.sort_by_key(|s| s.kind);
    SceneSpec { seed, shapes }
}

/// Renders at 8-bit precision so images survive a PGM round trip unchanged.
pub fn render_scene(spec: &SceneSpec, noise_sigma: f64) -> ImageGrid {
    let mut img = ImageGrid::filled(CANVAS, CANVAS, BACKGROUND);
    for s in &spec.shapes {
        let r = s.size.radius() as i64;
        let (cy, cx) = (s.center.0 as i64, s.center.1 as i64);
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                if s.kind.contains(y - cy, x - cx, r) {
                    img.set(y as usize, x as usize, s.intensity.level());
                }
            }
        }
        let marked = match s.pathology {
            Some(Uncertainty::DefinitelyPresent) => Some(false),
            Some(Uncertainty::Uncertain) => Some(true),
            _ => None,
        };
        if let Some(checkered) = marked {
            let half = MARKER / 2;
            for dy in 0..MARKER {
                for dx in 0..MARKER {
                    let level = if checkered && (dy + dx) % 2 == 1 {
                        s.intensity
                    } else {
                        s.intensity.opposite()
                    };
                    img.set(s.center.0 + dy - half, s.center.1 + dx - half, level.level());
                }
            }
        }
    }
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1);
        let normal = Normal::new(0.0, noise_sigma).expect("positive sigma");
        for y in 0..CANVAS {
            for x in 0..CANVAS {
                let v = img.get(y, x) + normal.sample(&mut rng);
                img.set(y, x, v);
            }
        }
    }
    img.quantized()
}

/// Ground-truth graph of a scene.
///
/// One anatomy entity per shape and one observation entity per distinct
/// size or intensity value; each observation is `located_at` every shape
/// carrying it, and each shape's size `modify`s its intensity. A
/// designated combination adds its pathology, which the shape's intensity
/// observation is `suggestive_of`. Entities are ordered by class id.
pub fn scene_to_graph(spec: &SceneSpec) -> RadiologyGraph {
    let mut nodes: Vec<(usize, Uncertainty)> = Vec::new();
    for s in &spec.shapes {
        nodes.push((s.kind.class_id(), Uncertainty::DefinitelyPresent));
        nodes.push((s.size.class_id(), Uncertainty::DefinitelyPresent));
        nodes.push((s.intensity.class_id(), Uncertainty::DefinitelyPresent));
        if let Some(u) = s.pathology {
            nodes.push((s.kind.designated().2, u));
        }
    }
    nodes.sort();
    nodes.dedup_by_key(|n| n.0);
    let id_of = |class: usize| nodes.iter().position(|n| n.0 == class).expect("entity added above");

    let mut relations = Vec::new();
    for s in &spec.shapes {
        let shape = id_of(s.kind.class_id());
        let size = id_of(s.size.class_id());
        let intensity = id_of(s.intensity.class_id());
        relations.push(Relation::new(size, shape, RelationType::LocatedAt));
        relations.push(Relation::new(intensity, shape, RelationType::LocatedAt));
        relations.push(Relation::new(size, intensity, RelationType::Modify));
        if s.pathology.is_some() {
            relations.push(Relation::new(intensity, id_of(s.kind.designated().2), RelationType::SuggestiveOf));
        }
    }
    relations.sort();
    relations.dedup();
    RadiologyGraph::new(&nodes, relations, SYNTH_CLASSES.len()).expect("scene graphs satisfy graph invariants")
}

/// Seed of the `index`-th sample of a corpus.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index)
}

/// Scene, rendered image and graph for one seed.
pub fn generate(seed: u64, noise_sigma: f64) -> (SceneSpec, ImageGrid, RadiologyGraph) {
    let spec = sample_scene(seed);
    let image = render_scene(&spec, noise_sigma);
    let graph = scene_to_graph(&spec);
    (spec, image, graph)
}
