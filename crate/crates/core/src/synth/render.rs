//! Patch-grid rendering of pair latents for the encoder path.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bbox::BBox;

const CHANNELS: usize = 3;
const BASES: usize = 4;

/// One pair to paint: union first, then human, then object on top.
pub(crate) struct Region<'a> {
    pub human: BBox,
    pub object: BBox,
    /// Latents of the human, object and union crops.
    pub codes: [&'a [f64]; 3],
}

/// Maps latents to texture coefficients through fixed Gaussian projections,
/// one per crop role.
pub(crate) struct Renderer {
    size: usize,
    noise: f64,
    proj: [Vec<f64>; 3],
    dim: usize,
}

fn basis(b: usize, u: f64, v: f64) -> f64 {
    match b {
        0 => 1.0,
        1 => (TAU * u).cos(),
        2 => (TAU * v).cos(),
        _ => (TAU * (u + v)).sin(),
    }
}

impl Renderer {
    pub fn new(rng: &mut impl Rng, size: usize, dim: usize, noise: f64) -> Self {
        let proj = std::array::from_fn(|_| (0..CHANNELS * BASES * dim).map(|_| rng.sample(StandardNormal)).collect());
        Renderer { size, noise, proj, dim }
    }

    /// `channels x size x size`.
    pub fn len(&self) -> usize {
        CHANNELS * self.size * self.size
    }

    fn coefficients(&self, role: usize, code: &[f64]) -> Vec<f64> {
        self.proj[role].chunks_exact(self.dim).map(|row| row.iter().zip(code).map(|(a, b)| a * b).sum()).collect()
    }

    /// Renders regions over a zero background into a `frame x frame`
    /// annotation space, then adds pixel noise.
    pub fn render(&self, rng: &mut impl Rng, frame: f64, regions: &[Region<'_>]) -> Vec<f32> {
        let s = self.size;
        let mut img = vec![0.0f64; self.len()];
        for r in regions {
            let layers = [(r.human.union(&r.object), 2), (r.human, 0), (r.object, 1)];
            for (b, role) in layers {
                let z = self.coefficients(role, r.codes[role]);
                let scale = frame / s as f64;
                for py in 0..s {
                    let cy = (py as f64 + 0.5) * scale;
                    if cy < b.y1 as f64 || cy >= b.y2 as f64 {
                        continue;
                    }
                    let v = (cy - b.y1 as f64) / (b.y2 - b.y1) as f64;
                    for px in 0..s {
                        let cx = (px as f64 + 0.5) * scale;
                        if cx < b.x1 as f64 || cx >= b.x2 as f64 {
                            continue;
                        }
                        let u = (cx - b.x1 as f64) / (b.x2 - b.x1) as f64;
                        for c in 0..CHANNELS {
                            img[c * s * s + py * s + px] = (0..BASES).map(|k| z[c * BASES + k] * basis(k, u, v)).sum();
                        }
                    }
                }
            }
        }
        img.iter().map(|&x| (x + self.noise * rng.sample::<f64, _>(StandardNormal)) as f32).collect()
    }
}
