//! Browser bindings for three small views of sparsekit: structured mask
//! heatmaps, sparsity schedules, and ERK layer sparsities.
//!
//! Every exported function takes plain numbers or strings and returns a
//! JSON string, so `www/main.js` needs no generated type glue beyond
//! `wasm-bindgen`'s string passing.

use serde::Serialize;
use sparsekit::algorithms::{drop_fraction, DropGrowConfig};
use sparsekit::distribution::erk_sparsities;
use sparsekit::prelude::*;
use sparsekit::select::zero_count;
use sparsekit::structure::structured_mask;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f64>,
    pub mask: Vec<u8>,
    pub sparsity: f64,
}

/// Random scores on a `rows × cols` grid masked under `structure`
/// (`unstructured`, `N:M` or `HxW`).
pub fn heatmap(rows: usize, cols: usize, sparsity: f64, structure: &str, seed: u64) -> Result<Heatmap, String> {
    if rows == 0 || cols == 0 || rows * cols > 1 << 16 {
        return Err(format!("grid {rows}x{cols} is empty or too large"));
    }
    let spec: StructureSpec = structure.parse().map_err(|e: Error| e.to_string())?;
    spec.check_shape("grid", &[rows, cols]).map_err(|e| e.to_string())?;
    let scores = RngKey::new(seed).derive("demo").uniforms(rows * cols);
    let tensor = Tensor::new(vec![rows, cols], scores.clone()).map_err(|e| e.to_string())?;
    let mask = structured_mask(&tensor, sparsity, &spec).map_err(|e| e.to_string())?;
    Ok(Heatmap {
        rows,
        cols,
        scores,
        sparsity: mask.sparsity(),
        mask: mask.to_bytes(),
    })
}

#[derive(Debug, Serialize)]
pub struct Curves {
    pub steps: Vec<u64>,
    pub sparsity: Vec<f64>,
    pub drop_fraction: Vec<f64>,
    pub updates: Vec<u64>,
}

/// Polynomial sparsity and cosine drop fraction over `0..=total`.
pub fn curves(
    begin: u64,
    end: u64,
    frequency: u64,
    initial: f64,
    target: f64,
    power: f64,
    total: u64,
) -> Result<Curves, String> {
    let mut sched = ScheduleConfig::polynomial(begin, end, frequency, initial, target);
    sched.power = power;
    sched.validate().map_err(|e| e.to_string())?;
    let total = total.max(end).min(100_000);
    let stride = (total / 400).max(1);
    let steps: Vec<u64> = (0..=total).step_by(stride as usize).collect();
    let decay_end = end.max(1);
    let drop = |s| drop_fraction(&DropGrowConfig::default(), s, decay_end).expect("end > 0");
    Ok(Curves {
        sparsity: steps.iter().map(|&s| sched.current_sparsity(s)).collect(),
        drop_fraction: steps.iter().map(|&s| drop(s)).collect(),
        updates: (0..=total).filter(|&s| sched.should_update(s)).collect(),
        steps,
    })
}

#[derive(Debug, Serialize)]
pub struct ErkLayer {
    pub shape: Vec<usize>,
    pub size: usize,
    pub sparsity: f64,
    pub nonzeros: usize,
}

/// ERK sparsities for shapes written as `64x3x3x3, 128x64, 10x128`.
pub fn erk(shapes: &str, target: f64) -> Result<Vec<ErkLayer>, String> {
    let shapes: Vec<Vec<usize>> = shapes
        .split([',', ';', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.split(['x', 'X', '*'])
                .map(|d| d.trim().parse::<usize>().ok().filter(|&d| d > 0))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| format!("cannot read shape `{s}`"))
        })
        .collect::<Result<_, _>>()?;
    if shapes.is_empty() {
        return Err("no shapes given".into());
    }
    let sparsities = erk_sparsities(&shapes, target).map_err(|e| e.to_string())?;
    Ok(shapes
        .into_iter()
        .zip(sparsities)
        .map(|(shape, sparsity)| {
            let size = shape.iter().product();
            ErkLayer {
                nonzeros: size - zero_count(sparsity, size),
                shape,
                size,
                sparsity,
            }
        })
        .collect())
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("plain data"))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn mask_heatmap(rows: usize, cols: usize, sparsity: f64, structure: &str, seed: u32) -> Result<String, JsValue> {
    to_js(heatmap(rows, cols, sparsity, structure, seed as u64))
}

#[wasm_bindgen]
pub fn schedule_curves(
    begin: u32,
    end: u32,
    frequency: u32,
    initial: f64,
    target: f64,
    power: f64,
    total: u32,
) -> Result<String, JsValue> {
    to_js(curves(
        begin as u64,
        end as u64,
        frequency as u64,
        initial,
        target,
        power,
        total as u64,
    ))
}

#[wasm_bindgen]
pub fn erk_layers(shapes: &str, target: f64) -> Result<String, JsValue> {
    to_js(erk(shapes, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_two_four() {
        let h = heatmap(4, 8, 0.0, "2:4", 1).unwrap();
        for group in h.mask.chunks(4) {
            assert_eq!(group.iter().sum::<u8>(), 2);
        }
        assert_eq!(h.sparsity, 0.5);
        assert!(heatmap(4, 6, 0.0, "2:4", 1).is_err());
        assert!(heatmap(4, 8, 0.5, "bogus", 1).is_err());
    }

    #[test]
    fn heatmap_blocks_and_counts() {
        let h = heatmap(8, 8, 0.75, "2x2", 3).unwrap();
        assert_eq!(h.mask.iter().filter(|&&b| b == 1).count(), 16);
        let u = heatmap(5, 7, 0.4, "unstructured", 3).unwrap();
        assert_eq!(u.mask.iter().filter(|&&b| b == 1).count(), 35 - 14);
    }

    #[test]
    fn curves_follow_schedule() {
        let c = curves(0, 100, 10, 0.0, 0.8, 3.0, 100).unwrap();
        assert_eq!(c.steps.len(), 101);
        assert!((c.sparsity[50] - 0.7).abs() < 1e-12);
        assert_eq!(c.sparsity[100], 0.8);
        assert!((c.drop_fraction[0] - 0.1).abs() < 1e-12);
        assert!(c.drop_fraction[100].abs() < 1e-12);
        assert_eq!(c.updates, (0..=100).step_by(10).collect::<Vec<_>>());
        assert!(curves(0, 100, 0, 0.0, 0.8, 3.0, 100).is_err());
    }

    #[test]
    fn erk_parses_shapes() {
        let layers = erk("4x8, 8x2", 0.5).unwrap();
        assert_eq!(layers.len(), 2);
        let zeros: usize = layers.iter().map(|l| l.size - l.nonzeros).sum();
        assert_eq!(zeros, 24);
        assert!(layers[0].sparsity > layers[1].sparsity);
        assert!(erk("4x", 0.5).is_err());
        assert!(erk("", 0.5).is_err());
    }
}
