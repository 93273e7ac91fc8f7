//! Proxy metrics and ablation reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedder;
use crate::error::{Error, Result};
use crate::image;
use crate::pipeline::PatchGrid;
use crate::tensor::Tensor;

fn check_pair(pred: &Tensor, truth: &Tensor, mask: &Tensor) -> Result<(usize, usize, usize)> {
    pred.check_same(truth, "metric")?;
    let (c, h, w) = image::dims(pred)?;
    image::check_mask(mask)?;
    if mask.shape() != [1, h, w] {
        return Err(Error::shape("metric", pred.shape(), mask.shape()));
    }
    Ok((c, h, w))
}

/// Mean squared error over masked pixels, all channels.
pub fn masked_mse(pred: &Tensor, truth: &Tensor, mask: &Tensor) -> Result<f64> {
    let (c, h, w) = check_pair(pred, truth, mask)?;
    let plane = h * w;
    let count = mask.data().iter().filter(|&&m| m != 0.0).count();
    if count == 0 {
        return Err(Error::contract("masked metric over an empty mask"));
    }
    let mut sum = 0.0;
    for ch in 0..c {
        for (i, &m) in mask.data().iter().enumerate() {
            if m != 0.0 {
                let d = pred.data()[ch * plane + i] - truth.data()[ch * plane + i];
                sum += d * d;
            }
        }
    }
    Ok(sum / (count * c) as f64)
}

/// PSNR over the masked region with unit peak; identical inputs give `+inf`.
pub fn masked_psnr(pred: &Tensor, truth: &Tensor, mask: &Tensor) -> Result<f64> {
    let mse = masked_mse(pred, truth, mask)?;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Largest absolute difference outside the mask.
pub fn unmasked_preservation(pred: &Tensor, input: &Tensor, mask: &Tensor) -> Result<f64> {
    let (c, h, w) = check_pair(pred, input, mask)?;
    let plane = h * w;
    let mut worst: f64 = 0.0;
    for ch in 0..c {
        for (i, &m) in mask.data().iter().enumerate() {
            if m == 0.0 {
                worst =
                    worst.max((pred.data()[ch * plane + i] - input.data()[ch * plane + i]).abs());
            }
        }
    }
    Ok(worst)
}

/// Mean absolute difference across patch-boundary pixel pairs minus the
/// same statistic for pairs shifted half a patch into the interior.
pub fn seam_score(img: &Tensor, grid: &PatchGrid) -> Result<f64> {
    let (c, h, w) = image::dims(img)?;
    if (h, w) != (grid.height, grid.width) {
        return Err(Error::geometry(format!(
            "{h}x{w} image does not match {}x{} grid",
            grid.height, grid.width
        )));
    }
    let at = |ch: usize, y: usize, x: usize| img.data()[ch * h * w + y * w + x];
    let (mut boundary, mut interior, mut pairs) = (0.0, 0.0, 0usize);
    for k in 1..grid.cols() {
        let x = k * grid.patch_w;
        let xi = x - grid.patch_w / 2;
        for ch in 0..c {
            for y in 0..h {
                boundary += (at(ch, y, x) - at(ch, y, x - 1)).abs();
                interior += (at(ch, y, xi) - at(ch, y, xi - 1)).abs();
                pairs += 1;
            }
        }
    }
    for k in 1..grid.rows() {
        let y = k * grid.patch_h;
        let yi = y - grid.patch_h / 2;
        for ch in 0..c {
            for x in 0..w {
                boundary += (at(ch, y, x) - at(ch, y - 1, x)).abs();
                interior += (at(ch, yi, x) - at(ch, yi - 1, x)).abs();
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Ok(0.0);
    }
    if grid.patch_h < 2 || grid.patch_w < 2 {
        return Err(Error::geometry("seam score needs patches of at least 2x2"));
    }
    Ok((boundary - interior) / pairs as f64)
}

/// Cosine between the image and prompt embeddings.
pub fn prompt_alignment(img: &Tensor, tokens: &[usize]) -> Result<f64> {
    let a = embedder::embed_image(img)?;
    let b = embedder::embed_text(tokens)?;
    Ok(embedder::cosine_sim(&a, &b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub arm: String,
    pub seed: u64,
    pub index: usize,
    pub masked_mse: f64,
    /// `None` stands for an exact match (infinite PSNR).
    pub masked_psnr: Option<f64>,
    pub unmasked_max_abs: f64,
    pub seam_score: Option<f64>,
    pub prompt_alignment: f64,
}

impl ImageRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn measure(
        arm: &str,
        seed: u64,
        index: usize,
        pred: &Tensor,
        truth: &Tensor,
        mask: &Tensor,
        grid: Option<&PatchGrid>,
        prompt: &[usize],
    ) -> Result<Self> {
        let psnr = masked_psnr(pred, truth, mask)?;
        Ok(ImageRecord {
            arm: arm.to_string(),
            seed,
            index,
            masked_mse: masked_mse(pred, truth, mask)?,
            masked_psnr: psnr.is_finite().then_some(psnr),
            unmasked_max_abs: unmasked_preservation(pred, truth, mask)?,
            seam_score: grid.map(|g| seam_score(pred, g)).transpose()?,
            prompt_alignment: prompt_alignment(pred, prompt)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub median: f64,
    pub mean: f64,
}

/// Median with the mean of the middle pair for even counts.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summarize(xs: &[f64]) -> Summary {
    Summary {
        count: xs.len(),
        median: median(xs),
        mean: if xs.is_empty() {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        },
    }
}

type Metric = fn(&ImageRecord) -> Option<f64>;

const METRICS: [(&str, Metric); 5] = [
    ("masked_mse", |r| Some(r.masked_mse)),
    ("masked_psnr", |r| r.masked_psnr),
    ("unmasked_max_abs", |r| Some(r.unmasked_max_abs)),
    ("seam_score", |r| r.seam_score),
    ("prompt_alignment", |r| Some(r.prompt_alignment)),
];

/// Per-metric summaries of one set of records.
pub fn aggregate(records: &[&ImageRecord]) -> BTreeMap<String, Summary> {
    METRICS
        .iter()
        .filter_map(|(name, f)| {
            let xs: Vec<f64> = records.iter().filter_map(|r| f(r)).collect();
            (!xs.is_empty()).then(|| (name.to_string(), summarize(&xs)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: serde_json::Value,
    pub per_image: Vec<ImageRecord>,
    /// Keyed by arm name, plus `delta` for paired differences (second arm
    /// minus first) when two arms are present.
    pub aggregates: BTreeMap<String, BTreeMap<String, Summary>>,
    pub seeds: Vec<u64>,
}

/// Paired per-metric differences `b − a`, matched on (seed, index).
pub fn paired_deltas(a: &[&ImageRecord], b: &[&ImageRecord]) -> Result<BTreeMap<String, Summary>> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "arms have {} and {} records",
            a.len(),
            b.len()
        )));
    }
    let key = |r: &ImageRecord| (r.seed, r.index);
    let mut a_sorted: Vec<&ImageRecord> = a.to_vec();
    let mut b_sorted: Vec<&ImageRecord> = b.to_vec();
    a_sorted.sort_by_key(|r| key(r));
    b_sorted.sort_by_key(|r| key(r));
    if a_sorted
        .iter()
        .zip(&b_sorted)
        .any(|(x, y)| key(x) != key(y))
    {
        return Err(Error::contract(
            "arms evaluated on different seeds or images",
        ));
    }
    Ok(METRICS
        .iter()
        .filter_map(|(name, f)| {
            let xs: Vec<f64> = a_sorted
                .iter()
                .zip(&b_sorted)
                .filter_map(|(x, y)| Some(f(y)? - f(x)?))
                .collect();
            (!xs.is_empty()).then(|| (name.to_string(), summarize(&xs)))
        })
        .collect())
}

/// Builds a report from the records of one or two arms.
pub fn build_report(
    config: serde_json::Value,
    arms: &[&str],
    per_image: Vec<ImageRecord>,
    seeds: Vec<u64>,
) -> Result<MetricReport> {
    let mut aggregates = BTreeMap::new();
    let by_arm = |name: &str| {
        per_image
            .iter()
            .filter(|r| r.arm == name)
            .collect::<Vec<_>>()
    };
    for &arm in arms {
        let recs = by_arm(arm);
        if recs.is_empty() {
            return Err(Error::contract(format!("arm {arm} has no records")));
        }
        aggregates.insert(arm.to_string(), aggregate(&recs));
    }
    if arms.len() == 2 {
        aggregates.insert(
            "delta".to_string(),
            paired_deltas(&by_arm(arms[0]), &by_arm(arms[1]))?,
        );
    }
    Ok(MetricReport {
        config,
        per_image,
        aggregates,
        seeds,
    })
}

/// One held-out inpainting problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTask {
    pub index: usize,
    pub image: Tensor,
    pub mask: Tensor,
    pub prompt: Vec<usize>,
}

/// Runs one task under one evaluation seed.
pub type ArmFn<'a> = dyn Fn(&EvalTask, u64) -> Result<Tensor> + Sync + 'a;

pub struct Arm<'a> {
    pub name: String,
    pub run: &'a ArmFn<'a>,
}

/// Evaluates every arm on every (seed, task) pair with the same sampling
/// seed per pair and reports medians plus paired deltas. `jobs` only
/// affects wall time.
pub fn run_ablation(
    config: serde_json::Value,
    arms: &[Arm],
    tasks: &[EvalTask],
    seeds: &[u64],
    grid: Option<&PatchGrid>,
    jobs: usize,
) -> Result<MetricReport> {
    if arms.is_empty() || arms.len() > 2 {
        return Err(Error::contract(format!(
            "ablation needs one or two arms, got {}",
            arms.len()
        )));
    }
    if tasks.is_empty() || seeds.is_empty() {
        return Err(Error::contract("ablation needs tasks and seeds"));
    }
    let pairs: Vec<(u64, &EvalTask)> = seeds
        .iter()
        .flat_map(|&s| tasks.iter().map(move |t| (s, t)))
        .collect();
    let order: Vec<usize> = (0..pairs.len()).collect();
    let mut per_image = Vec::with_capacity(arms.len() * pairs.len());
    for arm in arms {
        let work = |k: usize| -> Result<ImageRecord> {
            let (seed, task) = pairs[k];
            let sample_seed =
                crate::rng::derive_seed(seed, &[crate::rng::tag::EVAL, task.index as u64]);
            let pred = (arm.run)(task, sample_seed)?;
            ImageRecord::measure(
                &arm.name,
                seed,
                task.index,
                &pred,
                &task.image,
                &task.mask,
                grid,
                &task.prompt,
            )
        };
        per_image.extend(crate::pipeline::run_ordered(&order, jobs.max(1), &work)?);
    }
    let names: Vec<&str> = arms.iter().map(|a| a.name.as_str()).collect();
    build_report(config, &names, per_image, seeds.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_cases() {
        let truth = Tensor::full(&[3, 4, 4], 0.25);
        let mut mask = Tensor::zeros(&[1, 4, 4]);
        assert!(masked_mse(&truth, &truth, &mask).is_err());
        mask.data_mut()[5] = 1.0;
        assert_eq!(masked_mse(&truth, &truth, &mask).unwrap(), 0.0);
        assert_eq!(masked_psnr(&truth, &truth, &mask).unwrap(), f64::INFINITY);
        let shifted = truth.map(|v| v + 1.0);
        assert_eq!(masked_mse(&shifted, &truth, &mask).unwrap(), 1.0);
    }

    #[test]
    fn preservation_cases() {
        let input = Tensor::full(&[1, 4, 4], 0.5);
        let mut mask = Tensor::zeros(&[1, 4, 4]);
        mask.data_mut()[0] = 1.0;
        let mut p = input.clone();
        p.data_mut()[0] = 9.0;
        assert_eq!(unmasked_preservation(&p, &input, &mask).unwrap(), 0.0);
        p.data_mut()[3] += 3.0;
        assert_eq!(unmasked_preservation(&p, &input, &mask).unwrap(), 3.0);
    }

    #[test]
    fn seam_of_constant_is_zero() {
        let g = PatchGrid::new(8, 8, 4, 4).unwrap();
        assert_eq!(seam_score(&Tensor::full(&[3, 8, 8], 0.7), &g).unwrap(), 0.0);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
