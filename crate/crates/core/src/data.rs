//! Synthetic texture scenes with oracle labels, inpainting masks and a
//! degradation chain.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image;
use crate::netpbm;
use crate::rng::{self, tag, Rng};
use crate::tensor::Tensor;
use crate::vocab;

pub const PALETTE: [(&str, [f64; 3]); 11] = [
    ("red", [0.85, 0.15, 0.15]),
    ("green", [0.2, 0.7, 0.25]),
    ("blue", [0.15, 0.3, 0.85]),
    ("yellow", [0.95, 0.85, 0.2]),
    ("cyan", [0.2, 0.8, 0.85]),
    ("magenta", [0.8, 0.2, 0.75]),
    ("white", [0.95, 0.95, 0.95]),
    ("black", [0.05, 0.05, 0.05]),
    ("orange", [0.95, 0.55, 0.1]),
    ("purple", [0.5, 0.2, 0.65]),
    ("gray", [0.5, 0.5, 0.5]),
];

pub fn color_rgb(word: &str) -> Option<[f64; 3]> {
    PALETTE.iter().find(|(n, _)| *n == word).map(|(_, c)| *c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Stripes,
    Checker,
    Gradient,
    Blobs,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Stripes,
        Family::Checker,
        Family::Gradient,
        Family::Blobs,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Family::Stripes => "stripes",
            Family::Checker => "checker",
            Family::Gradient => "gradient",
            Family::Blobs => "blobs",
        }
    }

    pub fn parse(name: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.word() == name)
            .ok_or_else(|| Error::contract(format!("unknown texture family {name:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Horizontal,
    Vertical,
    Diagonal,
}

impl Orientation {
    pub fn word(self) -> &'static str {
        match self {
            Orientation::Horizontal => "horizontal",
            Orientation::Vertical => "vertical",
            Orientation::Diagonal => "diagonal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub family: Family,
    /// Palette indices.
    pub colors: [usize; 2],
    pub orientation: Orientation,
    /// Full periods across the image (stripes, checker) or blob count.
    pub frequency: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Ring,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Ring];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Ring => "ring",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Foreground {
    pub shape: Shape,
    pub color: usize,
    pub dotted: bool,
    /// Centre as fractions of height and width.
    pub center: [f64; 2],
    /// Radius as a fraction of the shorter side.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub background: Background,
    pub foreground: Option<Foreground>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// `3×H×W` in `[0, 1]`.
    pub image: Tensor,
    pub fg_tokens: Vec<usize>,
    pub bg_tokens: Vec<usize>,
    /// `1×H×W`, 1 on foreground pixels.
    pub segmentation: Tensor,
}

fn words(ws: &[&str]) -> Vec<usize> {
    ws.iter()
        .map(|w| vocab::id(w).expect("generator words are in the vocabulary"))
        .collect()
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let b = &self.background;
        if b.colors.iter().any(|&c| c >= PALETTE.len()) {
            return Err(Error::contract("background colour outside palette"));
        }
        if b.frequency == 0 {
            return Err(Error::contract("background frequency must be positive"));
        }
        if let Some(f) = &self.foreground {
            if f.color >= PALETTE.len() {
                return Err(Error::contract("foreground colour outside palette"));
            }
            if !(f.radius > 0.0 && f.radius <= 1.0)
                || f.center.iter().any(|c| !(0.0..=1.0).contains(c))
            {
                return Err(Error::contract("foreground geometry out of range"));
            }
        }
        Ok(())
    }

    pub fn bg_words(&self) -> Vec<&'static str> {
        let b = &self.background;
        let mut out = vec![
            b.family.word(),
            PALETTE[b.colors[0]].0,
            PALETTE[b.colors[1]].0,
        ];
        match b.family {
            Family::Stripes => {
                out.push(b.orientation.word());
                out.push(if b.frequency >= 3 { "fine" } else { "coarse" });
            }
            Family::Checker => out.push(if b.frequency >= 3 { "fine" } else { "coarse" }),
            Family::Gradient => out.push(b.orientation.word()),
            Family::Blobs => {}
        }
        out
    }

    pub fn fg_words(&self) -> Vec<&'static str> {
        match &self.foreground {
            None => Vec::new(),
            Some(f) => {
                let mut out = vec![
                    if f.radius < 0.2 { "small" } else { "large" },
                    PALETTE[f.color].0,
                ];
                if f.dotted {
                    out.push("dotted");
                }
                out.push(f.shape.word());
                out
            }
        }
    }

    pub fn random(r: &mut Rng, with_foreground: bool) -> SceneSpec {
        let family = Family::ALL[rng::below(r, 4)];
        let c0 = rng::below(r, PALETTE.len());
        let c1 = (c0 + 1 + rng::below(r, PALETTE.len() - 1)) % PALETTE.len();
        let orientation = [
            Orientation::Horizontal,
            Orientation::Vertical,
            Orientation::Diagonal,
        ][rng::below(r, 3)];
        let frequency = match family {
            Family::Blobs => 3 + rng::below(r, 4),
            _ => 1 + rng::below(r, 4),
        };
        let foreground = with_foreground.then(|| {
            let color = rng::below(r, PALETTE.len());
            Foreground {
                shape: Shape::ALL[rng::below(r, 4)],
                color,
                dotted: rng::below(r, 4) == 0,
                center: [rng::uniform(r, 0.3, 0.7), rng::uniform(r, 0.3, 0.7)],
                radius: rng::uniform(r, 0.12, 0.3),
            }
        });
        SceneSpec {
            background: Background {
                family,
                colors: [c0, c1],
                orientation,
                frequency,
            },
            foreground,
        }
    }
}

fn inside(shape: Shape, dy: f64, dx: f64, r: f64) -> bool {
    match shape {
        Shape::Circle => dy * dy + dx * dx <= r * r,
        Shape::Square => dy.abs() <= r && dx.abs() <= r,
        Shape::Triangle => dy.abs() <= r && dx.abs() <= (dy + r) * 0.5,
        Shape::Ring => {
            let d2 = dy * dy + dx * dx;
            d2 <= r * r && d2 >= 0.25 * r * r
        }
    }
}

/// Renders a scene; `seed` only drives the blob layout.
pub fn gen_scene(spec: &SceneSpec, h: usize, w: usize, seed: u64) -> Result<Scene> {
    spec.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::geometry("scene must be nonempty"));
    }
    let b = &spec.background;
    let [c0, c1] = [PALETTE[b.colors[0]].1, PALETTE[b.colors[1]].1];
    let f = b.frequency;
    let blobs: Vec<(f64, f64, f64)> = if b.family == Family::Blobs {
        let mut r = rng::stream(seed, &[tag::SCENE, 1]);
        (0..f)
            .map(|_| {
                (
                    rng::uniform(&mut r, 0.0, 1.0),
                    rng::uniform(&mut r, 0.0, 1.0),
                    rng::uniform(&mut r, 0.08, 0.22),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    let side = h.min(w) as f64;
    let mut data = vec![0.0; 3 * h * w];
    let mut seg = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let t = match b.family {
                Family::Stripes => {
                    let band = match b.orientation {
                        Orientation::Horizontal => y * 2 * f / h,
                        Orientation::Vertical => x * 2 * f / w,
                        Orientation::Diagonal => (x + y) * 2 * f / w,
                    };
                    (band % 2) as f64
                }
                Family::Checker => ((y * 2 * f / h + x * 2 * f / w) % 2) as f64,
                Family::Gradient => match b.orientation {
                    Orientation::Horizontal => x as f64 / (w.max(2) - 1) as f64,
                    Orientation::Vertical => y as f64 / (h.max(2) - 1) as f64,
                    Orientation::Diagonal => (x + y) as f64 / (h + w - 2).max(1) as f64,
                },
                Family::Blobs => {
                    let (py, px) = ((y as f64 + 0.5) / h as f64, (x as f64 + 0.5) / w as f64);
                    let hit = blobs
                        .iter()
                        .any(|&(by, bx, br)| (py - by).powi(2) + (px - bx).powi(2) <= br * br);
                    if hit {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            let mut rgb = [0.0; 3];
            for ch in 0..3 {
                rgb[ch] = c0[ch] + t * (c1[ch] - c0[ch]);
            }
            if let Some(fg) = &spec.foreground {
                let dy = (y as f64 + 0.5 - fg.center[0] * h as f64) / side;
                let dx = (x as f64 + 0.5 - fg.center[1] * w as f64) / side;
                if inside(fg.shape, dy, dx, fg.radius) {
                    seg[y * w + x] = 1.0;
                    rgb = PALETTE[fg.color].1;
                    if fg.dotted && (x / 2 + y / 2) % 2 == 0 {
                        rgb = rgb.map(|v| v * 0.5);
                    }
                }
            }
            for ch in 0..3 {
                data[ch * h * w + y * w + x] = rgb[ch];
            }
        }
    }
    Ok(Scene {
        image: Tensor::new(vec![3, h, w], data)?,
        fg_tokens: words(&spec.fg_words()),
        bg_tokens: words(&spec.bg_words()),
        segmentation: Tensor::new(vec![1, h, w], seg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MaskSpec {
    Brush {
        seed: u64,
    },
    /// Half-open pixel rectangle.
    Rectangle {
        top: usize,
        left: usize,
        bottom: usize,
        right: usize,
    },
    RandomShape {
        seed: u64,
    },
    Segmentation,
}

impl MaskSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            MaskSpec::Brush { .. } => "brush",
            MaskSpec::Rectangle { .. } => "rectangle",
            MaskSpec::RandomShape { .. } => "random-shape",
            MaskSpec::Segmentation => "segmentation",
        }
    }

    pub fn is_random_kind(&self) -> bool {
        !matches!(self, MaskSpec::Segmentation)
    }

    /// A seeded spec of the named kind sized for an `h×w` image.
    pub fn random(kind: &str, seed: u64, h: usize, w: usize) -> Result<MaskSpec> {
        match kind {
            "brush" => Ok(MaskSpec::Brush { seed }),
            "random-shape" => Ok(MaskSpec::RandomShape { seed }),
            "segmentation" => Ok(MaskSpec::Segmentation),
            "rectangle" => {
                let mut r = rng::stream(seed, &[tag::MASK, 1]);
                let rh = ((h as f64 * rng::uniform(&mut r, 0.2, 0.5)).round() as usize).max(1);
                let rw = ((w as f64 * rng::uniform(&mut r, 0.2, 0.5)).round() as usize).max(1);
                let top = rng::below(&mut r, h - rh + 1);
                let left = rng::below(&mut r, w - rw + 1);
                Ok(MaskSpec::Rectangle {
                    top,
                    left,
                    bottom: top + rh,
                    right: left + rw,
                })
            }
            other => Err(Error::contract(format!("unknown mask kind {other:?}"))),
        }
    }
}

fn disk(m: &mut [f64], h: usize, w: usize, cy: f64, cx: f64, r: f64) {
    let y0 = (cy - r).floor().max(0.0) as usize;
    let x0 = (cx - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil() as usize).min(h - 1);
    let x1 = ((cx + r).ceil() as usize).min(w - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            if dy * dy + dx * dx <= r * r {
                m[y * w + x] = 1.0;
            }
        }
    }
}

/// Renders a binary `1×h×w` mask. `segmentation` supplies the scene's
/// foreground for the segmentation kind.
pub fn gen_mask(
    spec: &MaskSpec,
    h: usize,
    w: usize,
    segmentation: Option<&Tensor>,
) -> Result<Tensor> {
    if h == 0 || w == 0 {
        return Err(Error::geometry("mask must be nonempty"));
    }
    let mut m = vec![0.0; h * w];
    match *spec {
        MaskSpec::Brush { seed } => {
            let mut r = rng::stream(seed, &[tag::MASK, 0]);
            let n = 3 + rng::below(&mut r, 6);
            let pts: Vec<(f64, f64, f64)> = (0..n)
                .map(|_| {
                    (
                        rng::uniform(&mut r, 0.0, h as f64),
                        rng::uniform(&mut r, 0.0, w as f64),
                        rng::uniform(&mut r, 2.0, 6.0),
                    )
                })
                .collect();
            for seg in pts.windows(2) {
                let ((y0, x0, r0), (y1, x1, r1)) = (seg[0], seg[1]);
                let len = (y1 - y0).hypot(x1 - x0);
                let steps = (len * 2.0).ceil().max(1.0) as usize;
                for s in 0..=steps {
                    let a = s as f64 / steps as f64;
                    disk(
                        &mut m,
                        h,
                        w,
                        y0 + a * (y1 - y0),
                        x0 + a * (x1 - x0),
                        r0 + a * (r1 - r0),
                    );
                }
            }
        }
        MaskSpec::Rectangle {
            top,
            left,
            bottom,
            right,
        } => {
            if top >= bottom || left >= right || bottom > h || right > w {
                return Err(Error::contract(format!(
                    "rectangle ({top},{left})-({bottom},{right}) invalid for {h}x{w}"
                )));
            }
            for y in top..bottom {
                m[y * w + left..y * w + right].fill(1.0);
            }
        }
        MaskSpec::RandomShape { seed } => {
            let mut r = rng::stream(seed, &[tag::MASK, 2]);
            let cy = rng::uniform(&mut r, 0.25, 0.75) * h as f64;
            let cx = rng::uniform(&mut r, 0.25, 0.75) * w as f64;
            let ry = rng::uniform(&mut r, 0.12, 0.3) * h as f64;
            let rx = rng::uniform(&mut r, 0.12, 0.3) * w as f64;
            let theta = rng::uniform(&mut r, 0.0, std::f64::consts::PI);
            let (s, c) = theta.sin_cos();
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                    if (u / rx).powi(2) + (v / ry).powi(2) <= 1.0 {
                        m[y * w + x] = 1.0;
                    }
                }
            }
        }
        MaskSpec::Segmentation => {
            let seg = segmentation
                .ok_or_else(|| Error::contract("segmentation mask needs a scene foreground"))?;
            if seg.shape() != [1, h, w] {
                return Err(Error::shape("gen_mask", seg.shape(), &[1, h, w]));
            }
            for (o, &v) in m.iter_mut().zip(seg.data()) {
                *o = if v != 0.0 { 1.0 } else { 0.0 };
            }
        }
    }
    Tensor::new(vec![1, h, w], m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradeParams {
    pub blur_sigma: f64,
    pub resample: bool,
    pub noise_sigma: f64,
}

impl DegradeParams {
    pub const IDENTITY: DegradeParams = DegradeParams {
        blur_sigma: 0.0,
        resample: false,
        noise_sigma: 0.0,
    };

    pub fn draw(r: &mut Rng) -> DegradeParams {
        DegradeParams {
            blur_sigma: rng::uniform(r, 0.5, 2.0),
            resample: true,
            noise_sigma: rng::uniform(r, 0.01, 0.05),
        }
    }
}

/// Separable Gaussian blur with edge clamping; `sigma = 0` is the identity.
pub fn gaussian_blur(img: &Tensor, sigma: f64) -> Result<Tensor> {
    let (c, h, w) = image::dims(img)?;
    if sigma <= 0.0 {
        return Ok(img.clone());
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = raw.iter().sum();
    let k: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; c * h * w];
    let src = img.data();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, &kv) in k.iter().enumerate() {
                    let xx = clampi(x as isize + j as isize - radius, w);
                    acc += kv * src[ch * h * w + y * w + xx];
                }
                tmp[ch * h * w + y * w + x] = acc;
            }
        }
    }
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, &kv) in k.iter().enumerate() {
                    let yy = clampi(y as isize + j as isize - radius, h);
                    acc += kv * tmp[ch * h * w + yy * w + x];
                }
                out[ch * h * w + y * w + x] = acc;
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Blur, 2× down/up resample, additive Gaussian noise.
pub fn degrade_with(img: &Tensor, p: &DegradeParams, r: &mut Rng) -> Result<Tensor> {
    let mut out = gaussian_blur(img, p.blur_sigma)?;
    if p.resample {
        let (_, h, w) = image::dims(&out)?;
        let small = image::resize_bilinear(&out, h.div_ceil(2), w.div_ceil(2))?;
        out = image::resize_bilinear(&small, h, w)?;
    }
    if p.noise_sigma > 0.0 {
        for v in out.data_mut() {
            *v += p.noise_sigma * rng::normal(r);
        }
    }
    Ok(out)
}

pub fn degrade(img: &Tensor, seed: u64) -> Result<Tensor> {
    let mut r = rng::stream(seed, &[tag::DEGRADE]);
    let p = DegradeParams::draw(&mut r);
    degrade_with(img, &p, &mut r)
}

/// One generated training item.
#[derive(Debug, Clone, PartialEq)]
pub struct DataItem {
    pub index: usize,
    pub spec: SceneSpec,
    /// `3×H×W` in `[0, 1]`.
    pub image: Tensor,
    pub mask: Tensor,
    pub mask_kind: String,
    pub fg_tokens: Vec<usize>,
    pub bg_tokens: Vec<usize>,
}

/// Count of leading random-kind items for a mix ratio.
pub fn random_kind_count(count: usize, mix: f64) -> usize {
    (((mix * count as f64) - 1e-9).ceil().max(0.0) as usize).min(count)
}

pub fn generate_item(
    index: usize,
    h: usize,
    w: usize,
    random_kind: bool,
    seed: u64,
) -> Result<DataItem> {
    let mut r = rng::stream(seed, &[tag::SCENE, index as u64]);
    let with_fg = !random_kind || rng::below(&mut r, 10) < 7;
    let spec = SceneSpec::random(&mut r, with_fg);
    let scene_seed = rng::derive_seed(seed, &[tag::SCENE, index as u64, 1]);
    let scene = gen_scene(&spec, h, w, scene_seed)?;
    let mask_seed = rng::derive_seed(seed, &[tag::MASK, index as u64]);
    let mask_spec = if random_kind {
        let kind = ["brush", "rectangle", "random-shape"][rng::below(&mut r, 3)];
        MaskSpec::random(kind, mask_seed, h, w)?
    } else {
        MaskSpec::Segmentation
    };
    let mask = gen_mask(&mask_spec, h, w, Some(&scene.segmentation))?;
    Ok(DataItem {
        index,
        spec,
        image: scene.image,
        mask,
        mask_kind: mask_spec.kind().to_string(),
        fg_tokens: scene.fg_tokens,
        bg_tokens: scene.bg_tokens,
    })
}

/// The first `⌈mix·count⌉` items get brush/rectangle/random-shape masks,
/// the rest segmentation masks.
pub fn generate(count: usize, h: usize, w: usize, mix: f64, seed: u64) -> Result<Vec<DataItem>> {
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::contract(format!("mix {mix} outside [0, 1]")));
    }
    let n_random = random_kind_count(count, mix);
    (0..count)
        .map(|i| generate_item(i, h, w, i < n_random, seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub index: usize,
    pub image: String,
    pub mask: String,
    pub meta: String,
    pub mask_kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub mix: f64,
    pub seed: u64,
    pub random_kind_count: usize,
    pub items: Vec<ManifestItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub index: usize,
    pub fg: Vec<String>,
    pub bg: Vec<String>,
    pub mask_kind: String,
    pub scene: SceneSpec,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `img_%05d.ppm`, `mask_%05d.pgm`, `meta_%05d.json` and
/// `manifest.json` under `out`.
pub fn build_dataset(
    count: usize,
    size: usize,
    mix: f64,
    seed: u64,
    out: &Path,
) -> Result<Manifest> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let items = generate(count, size, size, mix, seed)?;
    let mut entries = Vec::with_capacity(count);
    for it in &items {
        let i = it.index;
        let entry = ManifestItem {
            index: i,
            image: format!("img_{i:05}.ppm"),
            mask: format!("mask_{i:05}.pgm"),
            meta: format!("meta_{i:05}.json"),
            mask_kind: it.mask_kind.clone(),
        };
        netpbm::write(&out.join(&entry.image), &it.image)?;
        netpbm::write(&out.join(&entry.mask), &it.mask)?;
        let to_words = |ids: &[usize]| ids.iter().map(|&t| vocab::WORDS[t].to_string()).collect();
        let meta = ItemMeta {
            index: i,
            fg: to_words(&it.fg_tokens),
            bg: to_words(&it.bg_tokens),
            mask_kind: it.mask_kind.clone(),
            scene: it.spec.clone(),
        };
        write_json(&out.join(&entry.meta), &meta)?;
        entries.push(entry);
    }
    let manifest = Manifest {
        count,
        height: size,
        width: size,
        mix,
        seed,
        random_kind_count: random_kind_count(count, mix),
        items: entries,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Reads a tree written by [`build_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Vec<DataItem>> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    manifest
        .items
        .iter()
        .map(|e| {
            let meta_path = dir.join(&e.meta);
            let text = fs::read_to_string(&meta_path).map_err(|err| Error::io(&meta_path, err))?;
            let meta: ItemMeta = serde_json::from_str(&text)?;
            let ids = |ws: &[String]| ws.iter().map(|w| vocab::id(w)).collect::<Result<Vec<_>>>();
            let mask = netpbm::read(&dir.join(&e.mask))?;
            image::check_mask(&mask)?;
            Ok(DataItem {
                index: e.index,
                spec: meta.scene,
                image: netpbm::read(&dir.join(&e.image))?,
                mask,
                mask_kind: e.mask_kind.clone(),
                fg_tokens: ids(&meta.fg)?,
                bg_tokens: ids(&meta.bg)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangle_area() {
        let spec = MaskSpec::Rectangle {
            top: 8,
            left: 8,
            bottom: 16,
            right: 16,
        };
        let m = gen_mask(&spec, 64, 64, None).unwrap();
        assert_eq!(m.sum(), 64.0);
        assert!(MaskSpec::random("lasso", 1, 8, 8).is_err());
    }

    #[test]
    fn background_only_scene_has_empty_segmentation() {
        let mut r = rng::stream(4, &[]);
        let spec = SceneSpec::random(&mut r, false);
        let s = gen_scene(&spec, 16, 16, 9).unwrap();
        assert_eq!(s.segmentation.sum(), 0.0);
        assert!(s.fg_tokens.is_empty());
    }

    #[test]
    fn mix_count() {
        assert_eq!(random_kind_count(1000, 0.6), 600);
        assert_eq!(random_kind_count(3, 0.6), 2);
        assert_eq!(random_kind_count(0, 0.6), 0);
    }

    #[test]
    fn identity_degradation() {
        let img = Tensor::full(&[3, 8, 8], 0.3);
        let mut r = rng::stream(1, &[]);
        assert_eq!(
            degrade_with(&img, &DegradeParams::IDENTITY, &mut r).unwrap(),
            img
        );
    }
}
