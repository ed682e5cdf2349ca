//! Procedural 28×28 handwritten-style digits.
//!
//! Each class is a fixed stroke skeleton in the unit square; every sample draws
//! a random affine distortion, per-point wobble and pen width, rasterises the
//! strokes with an anti-aliased edge and adds faint background noise. The
//! output is an MNIST-shaped stand-in that needs no download and is fully
//! determined by the seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::data::{Dataset, Role, Sample};

pub const SIDE: usize = 28;
pub const NUM_CLASSES: usize = 10;

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64) -> Stroke {
    let n = (((a1 - a0).abs() / (PI / 12.0)).ceil() as usize).max(2);
    (0..=n)
        .map(|i| {
            let a = a0 + (a1 - a0) * i as f64 / n as f64;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn line(points: &[(f64, f64)]) -> Stroke {
    points.to_vec()
}

fn skeleton(digit: usize) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.19, 0.3, 0.0, 2.0 * PI)],
        1 => vec![line(&[(0.40, 0.28), (0.52, 0.17), (0.52, 0.83)])],
        2 => vec![{
            let mut s = arc(0.5, 0.36, 0.18, 0.17, 1.05 * PI, 2.2 * PI);
            s.extend([(0.30, 0.82), (0.73, 0.82)]);
            s
        }],
        3 => vec![
            arc(0.48, 0.34, 0.17, 0.16, -0.85 * PI, 0.5 * PI),
            arc(0.48, 0.66, 0.19, 0.17, -0.5 * PI, 0.85 * PI),
        ],
        4 => vec![
            line(&[(0.58, 0.17), (0.27, 0.60), (0.76, 0.60)]),
            line(&[(0.62, 0.36), (0.62, 0.84)]),
        ],
        5 => vec![{
            let mut s = line(&[(0.70, 0.18), (0.36, 0.18), (0.33, 0.48)]);
            s.extend(arc(0.49, 0.64, 0.20, 0.18, -0.8 * PI, 0.8 * PI));
            s
        }],
        6 => vec![
            line(&[(0.64, 0.17), (0.46, 0.33), (0.34, 0.55), (0.33, 0.66)]),
            arc(0.5, 0.66, 0.17, 0.17, 0.0, 2.0 * PI),
        ],
        7 => vec![line(&[(0.27, 0.19), (0.73, 0.19), (0.43, 0.83)])],
        8 => vec![
            arc(0.5, 0.33, 0.15, 0.15, 0.0, 2.0 * PI),
            arc(0.5, 0.66, 0.19, 0.18, 0.0, 2.0 * PI),
        ],
        9 => vec![
            arc(0.49, 0.35, 0.18, 0.17, 0.0, 2.0 * PI),
            line(&[(0.67, 0.38), (0.62, 0.83)]),
        ],
        _ => unreachable!("digit out of range"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn render<R: Rng>(digit: usize, rng: &mut R) -> Vec<f64> {
    let theta: f64 = rng.gen_range(-0.22..0.22);
    let (sx, sy) = (rng.gen_range(0.82..1.1), rng.gen_range(0.85..1.1));
    let shear = rng.gen_range(-0.25..0.25);
    let (tx, ty) = (rng.gen_range(-0.07..0.07), rng.gen_range(-0.06..0.06));
    let width = rng.gen_range(0.045..0.085);
    let wobble = Normal::new(0.0, 0.018).unwrap();
    let (c, s) = (theta.cos(), theta.sin());

    let strokes: Vec<Stroke> = skeleton(digit)
        .into_iter()
        .map(|stroke| {
            let (ox, oy) = (wobble.sample(rng), wobble.sample(rng));
            stroke
                .into_iter()
                .map(|(x, y)| {
                    let (x, y) = (x - 0.5 + ox + wobble.sample(rng) * 0.5, y - 0.5 + oy + wobble.sample(rng) * 0.5);
                    let (x, y) = (sx * (x + shear * y), sy * y);
                    (c * x - s * y + 0.5 + tx, s * x + c * y + 0.5 + ty)
                })
                .collect()
        })
        .collect();

    let edge = 1.0 / SIDE as f64;
    let mut img = vec![0.0; SIDE * SIDE];
    for (i, px) in img.iter_mut().enumerate() {
        let p = (((i % SIDE) as f64 + 0.5) / SIDE as f64, ((i / SIDE) as f64 + 0.5) / SIDE as f64);
        let d = strokes
            .iter()
            .flat_map(|st| st.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
            .fold(f64::INFINITY, f64::min);
        let ink = ((width / 2.0 - d) / edge + 0.5).clamp(0.0, 1.0);
        let noise = if rng.gen_bool(0.04) { rng.gen_range(0.0..0.25) } else { 0.0 };
        *px = (ink + noise).min(1.0);
    }
    img
}

/// `n` samples with labels cycling through 0..9.
pub fn synthetic_digits(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let y = i % NUM_CLASSES;
            Sample { x: render(y, &mut rng), y }
        })
        .collect();
    Dataset::new(samples, NUM_CLASSES, Role::Eval).expect("generator emits consistent samples")
}
