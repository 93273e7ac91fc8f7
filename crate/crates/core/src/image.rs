//! Image helpers over `C×H×W` tensors.
//!
//! Pixels live in `[0, 1]` on disk and in `[-1, 1]` inside the diffusion
//! model; masks are `1×H×W` with values in `{0, 1}`, 1 marking the hole.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn dims(img: &Tensor) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape("image", img.shape(), &[0, 0, 0])),
    }
}

pub fn is_binary(mask: &Tensor) -> bool {
    mask.data().iter().all(|&m| m == 0.0 || m == 1.0)
}

pub fn check_mask(mask: &Tensor) -> Result<()> {
    let (c, _, _) = dims(mask)?;
    if c != 1 {
        return Err(Error::shape("mask", mask.shape(), &[1, 0, 0]));
    }
    if !is_binary(mask) {
        return Err(Error::contract("mask must be binary"));
    }
    Ok(())
}

pub fn to_signed(img: &Tensor) -> Tensor {
    img.map(|v| 2.0 * v - 1.0)
}

pub fn to_unit(img: &Tensor) -> Tensor {
    img.map(|v| (v + 1.0) * 0.5)
}

/// `img ⊙ (1 − mask)` per channel: the known context with the hole zeroed.
pub fn apply_mask(img: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (c, h, w) = dims(img)?;
    let (_, mh, mw) = dims(mask)?;
    if (mh, mw) != (h, w) {
        return Err(Error::shape("apply_mask", img.shape(), mask.shape()));
    }
    let plane = h * w;
    let mut out = img.clone();
    for ch in 0..c {
        for (v, &m) in out.data_mut()[ch * plane..(ch + 1) * plane]
            .iter_mut()
            .zip(mask.data())
        {
            if m != 0.0 {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

pub fn crop(img: &Tensor, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
    let (c, ih, iw) = dims(img)?;
    if top + h > ih || left + w > iw || h == 0 || w == 0 {
        return Err(Error::geometry(format!(
            "crop {h}x{w} at ({top},{left}) outside {ih}x{iw}"
        )));
    }
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in top..top + h {
            let base = ch * ih * iw + y * iw;
            data.extend_from_slice(&img.data()[base + left..base + left + w]);
        }
    }
    Tensor::new(vec![c, h, w], data)
}

pub fn paste(dst: &mut Tensor, src: &Tensor, top: usize, left: usize) -> Result<()> {
    let (c, h, w) = dims(src)?;
    let (dc, dh, dw) = dims(dst)?;
    if c != dc || top + h > dh || left + w > dw {
        return Err(Error::geometry(format!(
            "paste {c}x{h}x{w} at ({top},{left}) outside {dc}x{dh}x{dw}"
        )));
    }
    for ch in 0..c {
        for y in 0..h {
            let d = ch * dh * dw + (top + y) * dw + left;
            let s = ch * h * w + y * w;
            dst.data_mut()[d..d + w].copy_from_slice(&src.data()[s..s + w]);
        }
    }
    Ok(())
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = dims(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::geometry("resize to an empty image"));
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let p = &img.data()[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = p[y0 * w + x0] + fx * (p[y0 * w + x1] - p[y0 * w + x0]);
                let bot = p[y1 * w + x0] + fx * (p[y1 * w + x1] - p[y1 * w + x0]);
                data.push(top + fy * (bot - top));
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], data)
}

pub fn upsample(img: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 1 {
        return Err(Error::contract("upsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (_, h, w) = dims(img)?;
    resize_bilinear(img, h * factor, w * factor)
}

pub fn downsample(img: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 1 {
        return Err(Error::contract("downsample factor must be >= 1"));
    }
    let (_, h, w) = dims(img)?;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::geometry(format!(
            "{h}x{w} not divisible by downsample factor {factor}"
        )));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    resize_bilinear(img, h / factor, w / factor)
}

/// Max-pool a binary mask so a coarse pixel is masked iff any fine pixel is.
pub fn downsample_mask(mask: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = dims(mask)?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::geometry(format!(
            "{h}x{w} mask not divisible by factor {factor}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if mask.data()[ch * h * w + y * w + x] != 0.0 {
                    out[ch * oh * ow + (y / factor) * ow + x / factor] = 1.0;
                }
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// `C×H×W` → `(H/s·W/s) × (s·s·C)` token matrix, tokens in raster order,
/// features ordered channel-major then row then column.
pub fn patchify(img: &Tensor, s: usize) -> Result<Tensor> {
    let (c, h, w) = dims(img)?;
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::geometry(format!(
            "{h}x{w} not divisible into {s}px tokens"
        )));
    }
    let (gh, gw) = (h / s, w / s);
    let mut data = Vec::with_capacity(c * h * w);
    for ty in 0..gh {
        for tx in 0..gw {
            for ch in 0..c {
                for dy in 0..s {
                    let base = ch * h * w + (ty * s + dy) * w + tx * s;
                    data.extend_from_slice(&img.data()[base..base + s]);
                }
            }
        }
    }
    Tensor::matrix(gh * gw, s * s * c, data)
}

pub fn unpatchify(tokens: &Tensor, c: usize, h: usize, w: usize, s: usize) -> Result<Tensor> {
    let (gh, gw) = (h / s, w / s);
    if tokens.rows() != gh * gw || tokens.cols() != s * s * c {
        return Err(Error::shape(
            "unpatchify",
            tokens.shape(),
            &[gh * gw, s * s * c],
        ));
    }
    let mut data = vec![0.0; c * h * w];
    for ty in 0..gh {
        for tx in 0..gw {
            let row = tokens.row(ty * gw + tx);
            let mut k = 0;
            for ch in 0..c {
                for dy in 0..s {
                    let base = ch * h * w + (ty * s + dy) * w + tx * s;
                    data[base..base + s].copy_from_slice(&row[k..k + s]);
                    k += s;
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], data)
}

/// Concatenates images along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let (_, h, w) = dims(parts[0])?;
    let mut data = Vec::new();
    let mut c = 0;
    for p in parts {
        let (pc, ph, pw) = dims(p)?;
        if (ph, pw) != (h, w) {
            return Err(Error::shape("concat_channels", parts[0].shape(), p.shape()));
        }
        c += pc;
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![c, h, w], data)
}

/// Cyclic shift by whole pixels (rows down, cols right).
pub fn roll(img: &Tensor, dy: usize, dx: usize) -> Result<Tensor> {
    let (c, h, w) = dims(img)?;
    let mut data = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                data[ch * h * w + ((y + dy) % h) * w + (x + dx) % w] =
                    img.data()[ch * h * w + y * w + x];
            }
        }
    }
    Tensor::new(vec![c, h, w], data)
}
