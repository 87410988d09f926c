//! Landmark handling: Gaussian heatmap rasterization, the four local-region
//! index sets, least-squares similarity transforms, crop/place warps and the
//! statistical driving-shape adaptation.

use std::io::Write;
use std::path::Path;

use autograd::{grid_sample, ops, Shape, Tensor};

use crate::error::{Error, Result};

pub const LANDMARK_COUNT: usize = 68;

/// Gaussian kernel variance of the landmark heatmaps.
pub const HEATMAP_VARIANCE: f64 = 3.0;

/// 68 ordered (x, y) landmark positions in pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: [(f32, f32); LANDMARK_COUNT],
}

impl LandmarkSet {
    pub fn new(points: [(f32, f32); LANDMARK_COUNT]) -> Result<LandmarkSet> {
        for (i, (x, y)) in points.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Geometry(format!(
                    "landmark {i} is not finite: ({x}, {y})"
                )));
            }
        }
        Ok(LandmarkSet { points })
    }

    pub fn from_slice(points: &[(f32, f32)]) -> Result<LandmarkSet> {
        let arr: [(f32, f32); LANDMARK_COUNT] = points.try_into().map_err(|_| {
            Error::Geometry(format!(
                "expected {} landmarks, got {}",
                LANDMARK_COUNT,
                points.len()
            ))
        })?;
        LandmarkSet::new(arr)
    }

    pub fn points(&self) -> &[(f32, f32); LANDMARK_COUNT] {
        &self.points
    }

    pub fn point(&self, i: usize) -> (f32, f32) {
        self.points[i]
    }

    pub fn centroid(&self) -> (f32, f32) {
        centroid(&self.points)
    }

    /// RMS distance of the points from their centroid.
    pub fn rms_spread(&self) -> f32 {
        let (cx, cy) = self.centroid();
        let ms: f64 = self
            .points
            .iter()
            .map(|&(x, y)| ((x - cx) as f64).powi(2) + ((y - cy) as f64).powi(2))
            .sum::<f64>()
            / LANDMARK_COUNT as f64;
        ms.sqrt() as f32
    }

    pub fn map(&self, f: impl Fn((f32, f32)) -> (f32, f32)) -> LandmarkSet {
        let mut points = self.points;
        for p in points.iter_mut() {
            *p = f(*p);
        }
        LandmarkSet { points }
    }

    /// Plain-text format: one "x y" line per point, exactly 68 lines.
    pub fn read_file(path: impl AsRef<Path>) -> Result<LandmarkSet> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut pts = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<f32> {
                tok.ok_or_else(|| {
                    Error::Data(format!(
                        "{}: line {}: expected \"x y\"",
                        path.display(),
                        lineno + 1
                    ))
                })?
                .parse::<f32>()
                .map_err(|e| {
                    Error::Data(format!(
                        "{}: line {}: {}",
                        path.display(),
                        lineno + 1,
                        e
                    ))
                })
            };
            let x = parse(it.next())?;
            let y = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Data(format!(
                    "{}: line {}: trailing tokens",
                    path.display(),
                    lineno + 1
                )));
            }
            pts.push((x, y));
        }
        if pts.len() != LANDMARK_COUNT {
            return Err(Error::Data(format!(
                "{}: expected {} landmark lines, found {}",
                path.display(),
                LANDMARK_COUNT,
                pts.len()
            )));
        }
        LandmarkSet::from_slice(&pts)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        for (x, y) in self.points.iter() {
            writeln!(f, "{x} {y}").map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }
}

fn centroid(points: &[(f32, f32)]) -> (f32, f32) {
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for &(x, y) in points {
        sx += x as f64;
        sy += y as f64;
    }
    let n = points.len() as f64;
    ((sx / n) as f32, (sy / n) as f32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegionKind {
    EyeLeft,
    EyeRight,
    Nose,
    Mouth,
}

impl RegionKind {
    pub fn name(&self) -> &'static str {
        match self {
            RegionKind::EyeLeft => "eye_left",
            RegionKind::EyeRight => "eye_right",
            RegionKind::Nose => "nose",
            RegionKind::Mouth => "mouth",
        }
    }
}

/// One local region: its landmark index subset (iBUG 68-point convention)
/// and the crop resolution its U-Net runs at.
#[derive(Clone, Debug)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub indices: &'static [usize],
    pub crop_h: usize,
    pub crop_w: usize,
}

const EYE_LEFT_IDX: [usize; 6] = [36, 37, 38, 39, 40, 41];
const EYE_RIGHT_IDX: [usize; 6] = [42, 43, 44, 45, 46, 47];
const NOSE_IDX: [usize; 9] = [27, 28, 29, 30, 31, 32, 33, 34, 35];
const MOUTH_IDX: [usize; 20] = [
    48, 49, 50, 51, 52, 53, 54, 55, 56, 57, 58, 59, 60, 61, 62, 63, 64, 65, 66, 67,
];

/// The four regions at a given base resolution. Crop sizes are 16x16 (eyes,
/// nose) and 16x24 (mouth) at 64x64, scaling linearly.
pub fn standard_regions(resolution: usize) -> [RegionSpec; 4] {
    let unit = resolution / 4;
    [
        RegionSpec {
            kind: RegionKind::EyeLeft,
            indices: &EYE_LEFT_IDX,
            crop_h: unit,
            crop_w: unit,
        },
        RegionSpec {
            kind: RegionKind::EyeRight,
            indices: &EYE_RIGHT_IDX,
            crop_h: unit,
            crop_w: unit,
        },
        RegionSpec {
            kind: RegionKind::Nose,
            indices: &NOSE_IDX,
            crop_h: unit,
            crop_w: unit,
        },
        RegionSpec {
            kind: RegionKind::Mouth,
            indices: &MOUTH_IDX,
            crop_h: unit,
            crop_w: unit * 3 / 2,
        },
    ]
}

/// Ordered landmark subset of one region.
pub fn region_landmarks(landmarks: &LandmarkSet, region: &RegionSpec) -> Vec<(f32, f32)> {
    region.indices.iter().map(|&i| landmarks.point(i)).collect()
}

/// Rasterizes one heatmap channel per landmark: exp(-d^2 / (2 * variance)),
/// peak 1 at the landmark. Separable row/column factors evaluated in f64.
pub fn rasterize_heatmaps(landmarks: &LandmarkSet, h: usize, w: usize) -> Result<Tensor> {
    rasterize_heatmaps_batch(std::slice::from_ref(landmarks), h, w)
}

pub fn rasterize_heatmaps_batch(sets: &[LandmarkSet], h: usize, w: usize) -> Result<Tensor> {
    if h == 0 || w == 0 {
        return Err(Error::Geometry("heatmap extents must be positive".into()));
    }
    let n = sets.len();
    let mut data = vec![0.0f32; n * LANDMARK_COUNT * h * w];
    let inv_two_var = 1.0 / (2.0 * HEATMAP_VARIANCE);
    let mut col_f = vec![0.0f64; w];
    let mut row_f = vec![0.0f64; h];
    for (ni, lm) in sets.iter().enumerate() {
        for (k, &(lx, ly)) in lm.points().iter().enumerate() {
            for (x, cf) in col_f.iter_mut().enumerate() {
                let d = x as f64 - lx as f64;
                *cf = (-d * d * inv_two_var).exp();
            }
            for (y, rf) in row_f.iter_mut().enumerate() {
                let d = y as f64 - ly as f64;
                *rf = (-d * d * inv_two_var).exp();
            }
            let base = (ni * LANDMARK_COUNT + k) * h * w;
            for y in 0..h {
                let ry = row_f[y];
                let row = &mut data[base + y * w..base + (y + 1) * w];
                for (x, out) in row.iter_mut().enumerate() {
                    *out = (ry * col_f[x]) as f32;
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, Shape::new(n, LANDMARK_COUNT, h, w))?)
}

/// Uniform scale + rotation + translation; apply(p) = s * R(theta) * p + t.
#[derive(Clone, Copy, Debug)]
pub struct SimilarityTransform {
    pub scale: f32,
    pub rotation: f32,
    pub tx: f32,
    pub ty: f32,
}

impl SimilarityTransform {
    pub fn identity() -> SimilarityTransform {
        SimilarityTransform {
            scale: 1.0,
            rotation: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn apply(&self, (x, y): (f32, f32)) -> (f32, f32) {
        let (s, c) = (self.rotation as f64).sin_cos();
        let sc = self.scale as f64;
        (
            (sc * (c * x as f64 - s * y as f64) + self.tx as f64) as f32,
            (sc * (s * x as f64 + c * y as f64) + self.ty as f64) as f32,
        )
    }

    pub fn invert(&self) -> SimilarityTransform {
        let inv_s = 1.0 / self.scale;
        let (s, c) = ((-self.rotation) as f64).sin_cos();
        let tx = -(inv_s as f64) * (c * self.tx as f64 - s * self.ty as f64);
        let ty = -(inv_s as f64) * (s * self.tx as f64 + c * self.ty as f64);
        SimilarityTransform {
            scale: inv_s,
            rotation: -self.rotation,
            tx: tx as f32,
            ty: ty as f32,
        }
    }

    /// self after other: apply(p) = self(other(p)).
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        let (tx, ty) = self.apply((other.tx, other.ty));
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation + other.rotation,
            tx,
            ty,
        }
    }
}

/// Least-squares similarity (no reflection) minimizing
/// sum ||T(src_i) - dst_i||^2, solved in closed form through the complex
/// representation a*z + t.
pub fn estimate_similarity(src: &[(f32, f32)], dst: &[(f32, f32)]) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(Error::Geometry(format!(
            "estimate_similarity: {} source vs {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 2 {
        return Err(Error::Geometry(
            "estimate_similarity: need at least 2 point pairs".into(),
        ));
    }
    let (scx, scy) = centroid(src);
    let (dcx, dcy) = centroid(dst);
    let mut num_re = 0.0f64;
    let mut num_im = 0.0f64;
    let mut den = 0.0f64;
    for (&(sx, sy), &(dx, dy)) in src.iter().zip(dst) {
        let zr = (sx - scx) as f64;
        let zi = (sy - scy) as f64;
        let wr = (dx - dcx) as f64;
        let wi = (dy - dcy) as f64;
        // w * conj(z)
        num_re += wr * zr + wi * zi;
        num_im += wi * zr - wr * zi;
        den += zr * zr + zi * zi;
    }
    if den < 1e-12 {
        return Err(Error::Geometry(
            "estimate_similarity: source points are coincident, scale undefined".into(),
        ));
    }
    let ar = num_re / den;
    let ai = num_im / den;
    let scale = (ar * ar + ai * ai).sqrt();
    let rotation = ai.atan2(ar);
    // t = dst_centroid - a * src_centroid
    let tx = dcx as f64 - (ar * scx as f64 - ai * scy as f64);
    let ty = dcy as f64 - (ai * scx as f64 + ar * scy as f64);
    Ok(SimilarityTransform {
        scale: scale as f32,
        rotation: rotation as f32,
        tx: tx as f32,
        ty: ty as f32,
    })
}

/// Padding factor beyond the landmark extent of a region crop.
const CROP_PAD: f32 = 1.4;

/// Canonical axis-aligned frame of a region: maps crop pixel coordinates to
/// image pixel coordinates, centered on the landmark centroid, uniformly
/// scaled so the padded extent fits the crop.
pub fn region_frame(
    landmarks: &LandmarkSet,
    region: &RegionSpec,
) -> Result<SimilarityTransform> {
    let pts = region_landmarks(landmarks, region);
    let (cx, cy) = centroid(&pts);
    let mut hx = 0.0f32;
    let mut hy = 0.0f32;
    for (x, y) in &pts {
        hx = hx.max((x - cx).abs());
        hy = hy.max((y - cy).abs());
    }
    if hx < 1e-6 && hy < 1e-6 {
        return Err(Error::Geometry(format!(
            "region {}: landmark extent degenerate (all points coincident)",
            region.kind.name()
        )));
    }
    let sx = CROP_PAD * 2.0 * hx / region.crop_w as f32;
    let sy = CROP_PAD * 2.0 * hy / region.crop_h as f32;
    let s = sx.max(sy).max(1e-3);
    Ok(SimilarityTransform {
        scale: s,
        rotation: 0.0,
        tx: cx - s * (region.crop_w as f32 - 1.0) / 2.0,
        ty: cy - s * (region.crop_h as f32 - 1.0) / 2.0,
    })
}

fn to_norm(p: f32, extent: usize) -> f32 {
    if extent > 1 {
        2.0 * p / (extent as f32 - 1.0) - 1.0
    } else {
        0.0
    }
}

/// Constant displacement field that makes grid_sample(image, flow) evaluate
/// image at `frame`(crop coordinates) for an (out_h, out_w) output.
fn frame_flow(
    frame: &SimilarityTransform,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let plane = out_h * out_w;
    let mut flow = vec![0.0f32; 2 * plane];
    for v in 0..out_h {
        for u in 0..out_w {
            let (ix, iy) = frame.apply((u as f32, v as f32));
            let p = v * out_w + u;
            flow[p] = to_norm(ix, in_w) - to_norm(u as f32, out_w);
            flow[plane + p] = to_norm(iy, in_h) - to_norm(v as f32, out_h);
        }
    }
    flow
}

/// Resamples the region of `image` around its landmarks into the region's
/// crop resolution. Returns the crop and the transform mapping crop
/// coordinates back to image coordinates. Differentiable w.r.t. the image.
pub fn crop_region(
    image: &Tensor,
    landmarks: &LandmarkSet,
    region: &RegionSpec,
) -> Result<(Tensor, SimilarityTransform)> {
    let (crops, mut frames) =
        crop_region_batch(image, std::slice::from_ref(landmarks), region)?;
    Ok((crops, frames.remove(0)))
}

pub fn crop_region_batch(
    images: &Tensor,
    landmarks: &[LandmarkSet],
    region: &RegionSpec,
) -> Result<(Tensor, Vec<SimilarityTransform>)> {
    let s = images.shape();
    if s.n != landmarks.len() {
        return Err(Error::Geometry(format!(
            "crop_region: {} images vs {} landmark sets",
            s.n,
            landmarks.len()
        )));
    }
    let (ch, cw) = (region.crop_h, region.crop_w);
    let mut flow = Vec::with_capacity(s.n * 2 * ch * cw);
    let mut frames = Vec::with_capacity(s.n);
    for lm in landmarks {
        let frame = region_frame(lm, region)?;
        flow.extend_from_slice(&frame_flow(&frame, s.h, s.w, ch, cw));
        frames.push(frame);
    }
    let flow = Tensor::from_vec(flow, Shape::new(s.n, 2, ch, cw))?;
    let crops = grid_sample(images, &flow)?;
    Ok((crops, frames))
}

/// Warps a crop onto a zero canvas at the location `placement` describes
/// (crop coordinates -> canvas coordinates). The mask marks covered pixels.
/// Differentiable w.r.t. the crop values.
pub fn place_region(
    canvas_h: usize,
    canvas_w: usize,
    crop: &Tensor,
    placement: &SimilarityTransform,
) -> Result<(Tensor, Tensor)> {
    place_region_batch(canvas_h, canvas_w, crop, std::slice::from_ref(placement))
}

pub fn place_region_batch(
    canvas_h: usize,
    canvas_w: usize,
    crops: &Tensor,
    placements: &[SimilarityTransform],
) -> Result<(Tensor, Tensor)> {
    let s = crops.shape();
    if s.n != placements.len() {
        return Err(Error::Geometry(format!(
            "place_region: {} crops vs {} placements",
            s.n,
            placements.len()
        )));
    }
    let plane = canvas_h * canvas_w;
    let mut flow = Vec::with_capacity(s.n * 2 * plane);
    let mut mask = vec![0.0f32; s.n * plane];
    for (ni, placement) in placements.iter().enumerate() {
        let inv = placement.invert();
        flow.extend_from_slice(&frame_flow(&inv, s.h, s.w, canvas_h, canvas_w));
        for v in 0..canvas_h {
            for u in 0..canvas_w {
                let (cx, cy) = inv.apply((u as f32, v as f32));
                let inside = cx >= -0.5
                    && cx <= s.w as f32 - 0.5
                    && cy >= -0.5
                    && cy <= s.h as f32 - 0.5;
                if inside {
                    mask[ni * plane + v * canvas_w + u] = 1.0;
                }
            }
        }
    }
    let flow = Tensor::from_vec(flow, Shape::new(s.n, 2, canvas_h, canvas_w))?;
    let sampled = grid_sample(crops, &flow)?;
    // expand the mask over channels for the multiply
    let mut mask_c = vec![0.0f32; s.n * s.c * plane];
    for n in 0..s.n {
        for c in 0..s.c {
            mask_c[(n * s.c + c) * plane..(n * s.c + c + 1) * plane]
                .copy_from_slice(&mask[n * plane..(n + 1) * plane]);
        }
    }
    let mask_ct = Tensor::from_vec(mask_c, Shape::new(s.n, s.c, canvas_h, canvas_w))?;
    let canvas = ops::mul(&sampled, &mask_ct)?;
    let mask_t = Tensor::from_vec(mask, Shape::new(s.n, 1, canvas_h, canvas_w))?;
    Ok((canvas, mask_t))
}

/// Re-centers and re-scales the driving landmarks so their centroid and RMS
/// spread match the source's, keeping the driving configuration's relative
/// geometry.
pub fn adapt_landmark_shape(driving: &LandmarkSet, source: &LandmarkSet) -> LandmarkSet {
    let (dcx, dcy) = driving.centroid();
    let (scx, scy) = source.centroid();
    let d_rms = driving.rms_spread();
    let s_rms = source.rms_spread();
    let k = if d_rms > 1e-9 { s_rms / d_rms } else { 1.0 };
    driving.map(|(x, y)| (scx + k * (x - dcx), scy + k * (y - dcy)))
}
