//! Reference implementations used by the integration tests. They share no
//! code with the library beyond the plain data types.
#![allow(dead_code, clippy::excessive_precision)]

use std::collections::HashMap;

use probdet::{CovMatrix2, Frame, GroundTruthObject, ProbBox};

pub const EPS: f64 = 1e-14;

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF from the musl-derived `erfc` of the libm crate.
pub fn big_phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

// 15-point Kronrod nodes/weights and the embedded 7-point Gauss weights.
const XK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let f1 = f(c - h * XK[i]);
        let f2 = f(c + h * XK[i]);
        k += WK[i] * (f1 + f2);
        if i % 2 == 1 {
            g += WG[i / 2] * (f1 + f2);
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (v, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return v;
    }
    let m = 0.5 * (a + b);
    adaptive(f, a, m, tol / 2.0, depth - 1) + adaptive(f, m, b, tol / 2.0, depth - 1)
}

/// `∫_a^b f` on a fixed grid of adaptively refined Gauss–Kronrod panels.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = 32;
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|i| adaptive(f, a + i as f64 * w, a + (i + 1) as f64 * w, 1e-18, 30))
        .sum()
}

/// Beyond this many standard deviations the normal density is below 1e-31.
const CUT: f64 = 12.0;

/// `(P(X ≤ h, Y ≤ k), 1 − P(X ≤ h, Y ≤ k))` for standard normals with
/// correlation `r`, from the conditional form
/// `∫_{−∞}^{h} φ(x) Φ((k − r x)/√(1−r²)) dx`. The complement is integrated
/// separately so it keeps relative accuracy when tiny.
pub fn bvn_pair(h: f64, k: f64, r: f64) -> (f64, f64) {
    let s = (1.0 - r * r).sqrt();
    if s == 0.0 {
        let p = if r > 0.0 {
            big_phi(h.min(k))
        } else {
            (big_phi(h) + big_phi(k) - 1.0).max(0.0)
        };
        return (p, 1.0 - p);
    }
    let hi = h.min(CUT);
    let p = integrate(&|x| phi(x) * big_phi((k - r * x) / s), -CUT, hi);
    // 1 − P = P(X > h) + P(X ≤ h, Y > k)
    let q = big_phi(-h) + integrate(&|x| phi(x) * big_phi(-(k - r * x) / s), -CUT, hi);
    (p, q)
}

/// Corner CDF with zero-variance axes collapsing to steps at 0.
pub fn corner_cdf(dx: f64, dy: f64, c: &CovMatrix2) -> (f64, f64) {
    let (vx, vy) = (c.xx(), c.yy());
    let outside = (0.0, 1.0);
    let one = |z: f64| (big_phi(z), big_phi(-z));
    match (vx > 0.0, vy > 0.0) {
        (false, false) if dx >= 0.0 && dy >= 0.0 => (1.0, 0.0),
        (false, false) => outside,
        (false, true) if dx >= 0.0 => one(dy / vy.sqrt()),
        (true, false) if dy >= 0.0 => one(dx / vx.sqrt()),
        (false, true) | (true, false) => outside,
        (true, true) => {
            let (sx, sy) = (vx.sqrt(), vy.sqrt());
            bvn_pair(dx / sx, dy / sy, c.xy() / (sx * sy))
        }
    }
}

/// `(p, 1 − p)` of a pixel centre being inside the detection.
pub fn pixel_pair(det: &ProbBox, x: u32, y: u32) -> (f64, f64) {
    let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
    let (a, qa) = corner_cdf(cx - det.tl.x, cy - det.tl.y, &det.cov_tl);
    let (b, qb) = corner_cdf(det.br.x - cx, det.br.y - cy, &det.cov_br);
    (a * b, qa + a * qb)
}

fn centre_inside(x: u32, y: u32, x1: f64, y1: f64, x2: f64, y2: f64) -> bool {
    let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
    x1 <= cx && cx <= x2 && y1 <= cy && cy <= y2
}

fn in_support(det: &ProbBox, x: u32, y: u32) -> bool {
    let sd = |v: f64| 3.0 * v.max(0.0).sqrt();
    centre_inside(
        x,
        y,
        det.tl.x - sd(det.cov_tl.xx()),
        det.tl.y - sd(det.cov_tl.yy()),
        det.br.x + sd(det.cov_br.xx()),
        det.br.y + sd(det.cov_br.yy()),
    )
}

/// Memoized pixel probabilities of one detection.
pub struct PixelCache<'a> {
    det: &'a ProbBox,
    values: HashMap<(u32, u32), (f64, f64)>,
}

impl<'a> PixelCache<'a> {
    pub fn new(det: &'a ProbBox) -> Self {
        Self {
            det,
            values: HashMap::new(),
        }
    }

    fn get(&mut self, x: u32, y: u32) -> (f64, f64) {
        let det = self.det;
        *self.values.entry((x, y)).or_insert_with(|| pixel_pair(det, x, y))
    }
}

/// Spatial quality by visiting every pixel of the frame.
pub fn spatial_quality(cache: &mut PixelCache<'_>, gt: &GroundTruthObject, width: u32, height: u32) -> f64 {
    let det = cache.det;
    let (g1, g2) = (gt.bbox.tl(), gt.bbox.br());
    let n = gt.mask.len() as f64;
    let (mut fg, mut bg, mut touched) = (0.0, 0.0, false);
    for y in 0..height {
        for x in 0..width {
            let in_mask = gt.mask.contains(probdet::Pixel::new(x, y));
            let bg_candidate = in_support(det, x, y) && !centre_inside(x, y, g1.x, g1.y, g2.x, g2.y);
            if !in_mask && !bg_candidate {
                continue;
            }
            let (p, q) = cache.get(x, y);
            if in_mask {
                touched |= p > EPS;
                fg -= p.clamp(EPS, 1.0 - EPS).ln();
            }
            if bg_candidate && p > EPS {
                bg -= q.clamp(EPS, 1.0 - EPS).ln();
            }
        }
    }
    if touched {
        (-(fg + bg) / n).exp()
    } else {
        0.0
    }
}

/// pPDQ matrix (rows are ground truths) by full enumeration.
pub fn ppdq_matrix(frame: &Frame) -> Vec<Vec<f64>> {
    let mut caches: Vec<PixelCache<'_>> = frame.detections.iter().map(PixelCache::new).collect();
    frame
        .ground_truths
        .iter()
        .map(|gt| {
            caches
                .iter_mut()
                .map(|c| {
                    let label = c.det.label_probs[gt.class_id];
                    (label * spatial_quality(c, gt, frame.width, frame.height)).sqrt()
                })
                .collect()
        })
        .collect()
}

/// Best total over all one-to-one partial assignments, each summed in
/// row order.
pub fn best_assignment_total(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, acc: f64, used: &mut [bool]) -> f64 {
        if row == w.len() {
            return acc;
        }
        let mut best = go(w, row + 1, acc, used);
        for j in 0..used.len() {
            if !used[j] && w[row][j] > 0.0 {
                used[j] = true;
                best = best.max(go(w, row + 1, acc + w[row][j], used));
                used[j] = false;
            }
        }
        best
    }
    let cols = w.first().map_or(0, Vec::len);
    go(w, 0, 0.0, &mut vec![false; cols])
}

/// 101-point interpolated AP from the ranked hit list by scanning every
/// cut-off for each recall level.
pub fn brute_force_ap(hits: &[bool], n_gt: usize) -> f64 {
    let mut total = 0.0;
    for level in 0..=100 {
        let r = level as f64 / 100.0;
        let mut best = 0.0_f64;
        for cut in 1..=hits.len() {
            let tp = hits[..cut].iter().filter(|h| **h).count();
            if tp as f64 / n_gt as f64 >= r {
                best = best.max(tp as f64 / cut as f64);
            }
        }
        total += best;
    }
    total / 101.0
}

/// Eigen-decomposition of a symmetric 2×2 (nalgebra), negative eigenvalues
/// clamped to zero, reassembled.
pub fn psd_project(xx: f64, xy: f64, yy: f64) -> [[f64; 2]; 2] {
    let m = nalgebra::Matrix2::new(xx, xy, xy, yy);
    let eig = m.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let r = eig.eigenvectors * nalgebra::Matrix2::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    [[r[(0, 0)], r[(0, 1)]], [r[(1, 0)], r[(1, 1)]]]
}
