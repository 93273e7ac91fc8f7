//! Closed-form joint image/text embedder used for reference selection and
//! the prompt-alignment metric.
//!
//! Images map to a 72-value descriptor (three 16-bin channel histograms, an
//! 8-bin gradient-orientation histogram and a 4×4 luminance grid, each
//! centred on its flat-image value) projected by a fixed Gaussian matrix to
//! 64 dimensions. Words map through the same projection from a per-word
//! descriptor: colour words use the histogram signature of that colour,
//! orientation words the matching orientation bin, everything else a
//! seeded random descriptor.

use std::sync::OnceLock;

use crate::data;
use crate::error::{Error, Result};
use crate::image;
use crate::rng;
use crate::tensor::Tensor;
use crate::vocab;

pub const DIM: usize = 64;
pub const SEED: u64 = 0xC11F;

const HIST_BINS: usize = 16;
const ORIENT_BINS: usize = 8;
const GRID: usize = 4;
const FEATURES: usize = 3 * HIST_BINS + ORIENT_BINS + GRID * GRID;
const ORIENT_AT: usize = 3 * HIST_BINS;
const GRID_AT: usize = ORIENT_AT + ORIENT_BINS;

/// `aᵀb / (‖a‖‖b‖)`, or `-inf` when either side has zero norm.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return f64::NEG_INFINITY;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn projection() -> &'static Tensor {
    static P: OnceLock<Tensor> = OnceLock::new();
    P.get_or_init(|| {
        let mut r = rng::stream(SEED, &[rng::tag::EMBEDDER, 0]);
        rng::normal_tensor(&mut r, &[FEATURES, DIM], 1.0 / (DIM as f64).sqrt())
    })
}

fn project(features: &[f64]) -> Vec<f64> {
    let p = projection();
    let mut out = vec![0.0; DIM];
    for (i, &f) in features.iter().enumerate() {
        if f != 0.0 {
            for (o, &w) in out.iter_mut().zip(p.row(i)) {
                *o += f * w;
            }
        }
    }
    out
}

fn hist_bin(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

/// Pre-projection descriptor of an image in `[0, 1]`. One-channel images
/// count as grey RGB.
pub fn image_features(img: &Tensor) -> Result<Vec<f64>> {
    let (c, h, w) = image::dims(img)?;
    if c != 1 && c != 3 {
        return Err(Error::shape("embed_image", img.shape(), &[3, h, w]));
    }
    let plane = h * w;
    let channel = |ch: usize| -> &[f64] {
        let ch = if c == 1 { 0 } else { ch };
        &img.data()[ch * plane..(ch + 1) * plane]
    };
    let mut f = vec![0.0; FEATURES];
    for ch in 0..3 {
        for &v in channel(ch) {
            f[ch * HIST_BINS + hist_bin(v)] += 1.0 / plane as f64;
        }
        for b in 0..HIST_BINS {
            f[ch * HIST_BINS + b] -= 1.0 / HIST_BINS as f64;
        }
    }

    let lum: Vec<f64> = (0..plane)
        .map(|i| (channel(0)[i] + channel(1)[i] + channel(2)[i]) / 3.0)
        .collect();
    let at = |y: usize, x: usize| lum[y * w + x];
    let mut orient = [0.0; ORIENT_BINS];
    for y in 0..h {
        for x in 0..w {
            let gx = at(y, (x + 1).min(w - 1)) - at(y, x.saturating_sub(1));
            let gy = at((y + 1).min(h - 1), x) - at(y.saturating_sub(1), x);
            let mag = gx.hypot(gy);
            if mag > 0.0 {
                let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                let bin = ((theta / std::f64::consts::PI * ORIENT_BINS as f64) as usize)
                    .min(ORIENT_BINS - 1);
                orient[bin] += mag;
            }
        }
    }
    let total: f64 = orient.iter().sum();
    if total > 1e-12 {
        for (b, o) in orient.iter().enumerate() {
            f[ORIENT_AT + b] = o / total - 1.0 / ORIENT_BINS as f64;
        }
    }

    for gy in 0..GRID {
        for gx in 0..GRID {
            let (y0, x0) = (gy * h / GRID, gx * w / GRID);
            let y1 = ((gy + 1) * h / GRID).max(y0 + 1).min(h);
            let x1 = ((gx + 1) * w / GRID).max(x0 + 1).min(w);
            let (y0, x0) = (y0.min(h - 1), x0.min(w - 1));
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += at(y, x);
                }
            }
            f[GRID_AT + gy * GRID + gx] = sum / ((y1 - y0) * (x1 - x0)) as f64 - 0.5;
        }
    }
    Ok(f)
}

pub fn embed_image(img: &Tensor) -> Result<Vec<f64>> {
    Ok(project(&image_features(img)?))
}

fn word_features(id: usize) -> Vec<f64> {
    let word = vocab::WORDS[id];
    let mut f = vec![0.0; FEATURES];
    if let Some(rgb) = data::color_rgb(word) {
        for (ch, &v) in rgb.iter().enumerate() {
            for b in 0..HIST_BINS {
                f[ch * HIST_BINS + b] = -1.0 / HIST_BINS as f64;
            }
            f[ch * HIST_BINS + hist_bin(v)] += 1.0;
        }
        return f;
    }
    // Stripes along an axis have their gradient across it.
    let bin = match word {
        "horizontal" => Some(ORIENT_BINS / 2),
        "vertical" => Some(0),
        "diagonal" => Some(ORIENT_BINS / 4),
        _ => None,
    };
    if let Some(bin) = bin {
        for b in 0..ORIENT_BINS {
            f[ORIENT_AT + b] = -1.0 / ORIENT_BINS as f64;
        }
        f[ORIENT_AT + bin] += 1.0;
        return f;
    }
    let mut r = rng::stream(SEED, &[rng::tag::EMBEDDER, 1, id as u64]);
    f.iter_mut().for_each(|v| *v = 0.1 * rng::normal(&mut r));
    f
}

fn token_table() -> &'static Vec<Vec<f64>> {
    static T: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    T.get_or_init(|| {
        (0..vocab::SIZE)
            .map(|id| project(&word_features(id)))
            .collect()
    })
}

/// The fixed vector of one vocabulary word.
pub fn token_vector(id: usize) -> Result<&'static [f64]> {
    vocab::check(&[id])?;
    Ok(&token_table()[id])
}

/// Mean of the token vectors; the empty prompt gives the zero vector.
pub fn embed_text(tokens: &[usize]) -> Result<Vec<f64>> {
    vocab::check(tokens)?;
    let mut out = vec![0.0; DIM];
    if tokens.is_empty() {
        return Ok(out);
    }
    // Summing in id order makes the result independent of token order.
    let mut sorted = tokens.to_vec();
    sorted.sort_unstable();
    for &t in &sorted {
        for (o, v) in out.iter_mut().zip(&token_table()[t]) {
            *o += v;
        }
    }
    let n = tokens.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}
