#![allow(dead_code)]

use lwinnn::{EmbeddingBank, EmbeddingTensor, Tensor};
use rand::Rng;

pub fn random_embedding<R: Rng>(rng: &mut R, id: &str, c: usize, h: usize, w: usize) -> EmbeddingTensor {
    let data = (0..c * h * w).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    EmbeddingTensor::new(id, h * 4, w * 4, Tensor::new(vec![c, h, w], data).unwrap()).unwrap()
}

pub fn bank_of(members: &[EmbeddingTensor]) -> EmbeddingBank {
    EmbeddingBank::from_embeddings("test", "fp", members).unwrap()
}

/// Brute-force local-window 1-NN in f64: for each patch, every member and
/// every in-bounds offset with |dy|, |dx| <= radius.
pub fn window_oracle(test: &EmbeddingTensor, train: &[EmbeddingTensor], radius: usize) -> Vec<f64> {
    let (c, h, w) = test.dims();
    let r = radius as isize;
    let at = |e: &EmbeddingTensor, ch: usize, y: usize, x: usize| e.data()[ch * h * w + y * w + x] as f64;
    let mut out = vec![f64::INFINITY; h * w];
    for y in 0..h {
        for x in 0..w {
            for m in train {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (a, b) = (y as isize + dy, x as isize + dx);
                        if a < 0 || b < 0 || a >= h as isize || b >= w as isize {
                            continue;
                        }
                        let d: f64 = (0..c)
                            .map(|ch| (at(test, ch, y, x) - at(m, ch, a as usize, b as usize)).powi(2))
                            .sum();
                        out[y * w + x] = out[y * w + x].min(d.sqrt());
                    }
                }
            }
        }
    }
    out
}

/// Copy of `src` translated by `(ty, tx)` cells: `out[y][x] = src[y - ty][x - tx]`,
/// edge-clamped where the source falls outside.
pub fn translate(src: &EmbeddingTensor, ty: isize, tx: isize) -> EmbeddingTensor {
    let (c, h, w) = src.dims();
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sy = (y as isize - ty).clamp(0, h as isize - 1) as usize;
                let sx = (x as isize - tx).clamp(0, w as isize - 1) as usize;
                out[ch * h * w + y * w + x] = src.data()[ch * h * w + sy * w + sx];
            }
        }
    }
    EmbeddingTensor::new("shifted", src.original_height, src.original_width, Tensor::new(vec![c, h, w], out).unwrap())
        .unwrap()
}
