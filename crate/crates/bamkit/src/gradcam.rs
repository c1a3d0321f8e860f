//! Gradient-weighted class activation heatmaps.
//!
//! Channel importances are the spatial means of the class score's gradient
//! with respect to the last convolutional activation; the heatmap is the
//! rectified importance-weighted channel sum, bilinearly upsampled to the
//! input resolution and min-max normalized to [0, 1].

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

/// Default cutoff for turning a normalized heatmap into a mask.
pub const DEFAULT_HEATMAP_THRESHOLD: f64 = 0.2;

/// A single-channel map with values in row-major order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Heatmap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width, "heatmap data length mismatch");
        Heatmap {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(&[self.height, self.width], self.data.clone())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "heatmap_from_tensor",
                detail: format!("expected rank 2, got {:?}", t.shape()),
            });
        }
        Ok(Heatmap::new(t.shape()[0], t.shape()[1], t.to_f64_vec()))
    }
}

/// Spatial mean of the gradient per channel: alpha_k = mean_ij grad[k,i,j].
pub fn channel_importance(grad: &Tensor) -> Result<Vec<f64>> {
    if grad.rank() != 3 {
        return Err(Error::ShapeMismatch {
            op: "channel_importance",
            detail: format!("expected [C,H,W] gradient, got {:?}", grad.shape()),
        });
    }
    let (c, h, w) = (grad.shape()[0], grad.shape()[1], grad.shape()[2]);
    if h * w == 0 {
        return Err(Error::EmptyInput {
            op: "channel_importance",
        });
    }
    let g = grad.to_f64_vec();
    let z = (h * w) as f64;
    Ok((0..c)
        .map(|k| g[k * h * w..(k + 1) * h * w].iter().sum::<f64>() / z)
        .collect())
}

/// Rectified importance-weighted sum of activation channels:
/// heatmap(i,j) = max(0, sum_k alpha_k * activation[k,i,j]).
pub fn weighted_activation_map(activation: &Tensor, alphas: &[f64]) -> Result<Heatmap> {
    if activation.rank() != 3 {
        return Err(Error::ShapeMismatch {
            op: "weighted_activation_map",
            detail: format!("expected [C,H,W] activation, got {:?}", activation.shape()),
        });
    }
    let (c, h, w) = (
        activation.shape()[0],
        activation.shape()[1],
        activation.shape()[2],
    );
    if alphas.len() != c {
        return Err(Error::ShapeMismatch {
            op: "weighted_activation_map",
            detail: format!("{} alphas for {c} channels", alphas.len()),
        });
    }
    let a = activation.to_f64_vec();
    let mut out = vec![0.0; h * w];
    for k in 0..c {
        let plane = &a[k * h * w..(k + 1) * h * w];
        let alpha = alphas[k];
        for (o, &v) in out.iter_mut().zip(plane) {
            *o += alpha * v;
        }
    }
    for o in out.iter_mut() {
        if *o < 0.0 {
            *o = 0.0;
        }
    }
    Ok(Heatmap::new(h, w, out))
}

/// Full heatmap from a tapped activation and the class-score gradient with
/// respect to it, upsampled to `(out_h, out_w)` and normalized to [0, 1].
pub fn gradcam(
    activation: &Tensor,
    grad: &Tensor,
    out_h: usize,
    out_w: usize,
) -> Result<Heatmap> {
    if activation.shape() != grad.shape() {
        return Err(Error::ShapeMismatch {
            op: "gradcam",
            detail: format!(
                "activation {:?} vs gradient {:?}",
                activation.shape(),
                grad.shape()
            ),
        });
    }
    let alphas = channel_importance(grad)?;
    let coarse = weighted_activation_map(activation, &alphas)?;
    let up = upsample_bilinear(&coarse, out_h, out_w)?;
    Ok(normalize_minmax(&up))
}

/// Corner-aligned bilinear upsampling: output corners sample input corners
/// exactly; a single-row or single-column source broadcasts.
pub fn upsample_bilinear(map: &Heatmap, out_h: usize, out_w: usize) -> Result<Heatmap> {
    if map.height == 0 || map.width == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::EmptyInput {
            op: "upsample_bilinear",
        });
    }
    let src_pos = |i: usize, out_n: usize, in_n: usize| -> f64 {
        if out_n == 1 {
            0.0
        } else {
            i as f64 * (in_n - 1) as f64 / (out_n - 1) as f64
        }
    };
    let mut out = vec![0.0; out_h * out_w];
    for oy in 0..out_h {
        let sy = src_pos(oy, out_h, map.height);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(map.height - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = src_pos(ox, out_w, map.width);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(map.width - 1);
            let fx = sx - x0 as f64;
            let top = map.at(y0, x0) * (1.0 - fx) + map.at(y0, x1) * fx;
            let bottom = map.at(y1, x0) * (1.0 - fx) + map.at(y1, x1) * fx;
            out[oy * out_w + ox] = top * (1.0 - fy) + bottom * fy;
        }
    }
    Ok(Heatmap::new(out_h, out_w, out))
}

/// Affinely rescale to [0, 1]; a constant map becomes all zeros.
pub fn normalize_minmax(map: &Heatmap) -> Heatmap {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &map.data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    let data = if range > 0.0 {
        map.data.iter().map(|&v| (v - lo) / range).collect()
    } else {
        vec![0.0; map.data.len()]
    };
    Heatmap::new(map.height, map.width, data)
}

/// Foreground mask of pixels with value >= threshold.
pub fn binarize(map: &Heatmap, threshold: f64) -> BinaryMask {
    let mut mask = BinaryMask::zeros(map.height, map.width);
    for y in 0..map.height {
        for x in 0..map.width {
            if map.at(y, x) >= threshold {
                mask.set(y, x, true);
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_importance_is_spatial_mean_per_channel() {
        let grad = Tensor::from_f64(
            &[2, 2, 2],
            vec![1.0, 2.0, 3.0, 4.0, -1.0, -1.0, 5.0, -3.0],
        );
        let alphas = channel_importance(&grad).unwrap();
        assert_eq!(alphas, vec![2.5, 0.0]);
    }

    #[test]
    fn weighted_map_rectifies_negative_sums() {
        let act = Tensor::from_f64(&[2, 1, 2], vec![1.0, 2.0, 3.0, 1.0]);
        let map = weighted_activation_map(&act, &[1.0, -1.0]).unwrap();
        // Sums are 1-3=-2 and 2-1=1; the negative one clamps to 0.
        assert_eq!(map.data(), &[0.0, 1.0]);
    }

    #[test]
    fn upsample_matches_hand_interpolation() {
        // 2x2 grid upsampled to 2x4: rows are preserved, columns sit at
        // source positions 0, 1/3, 2/3, 1.
        let map = Heatmap::new(2, 2, vec![0.0, 3.0, 6.0, 9.0]);
        let up = upsample_bilinear(&map, 2, 4).unwrap();
        let expect = [
            0.0,
            1.0,
            2.0,
            3.0,
            6.0,
            7.0,
            8.0,
            9.0,
        ];
        for (got, want) in up.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn upsample_preserves_corners_and_range() {
        let map = Heatmap::new(3, 3, vec![0.3, 0.9, 0.1, 0.5, 0.2, 0.8, 0.0, 0.6, 0.4]);
        let up = upsample_bilinear(&map, 17, 23).unwrap();
        assert!((up.at(0, 0) - 0.3).abs() < 1e-12);
        assert!((up.at(0, 22) - 0.1).abs() < 1e-12);
        assert!((up.at(16, 0) - 0.0).abs() < 1e-12);
        assert!((up.at(16, 22) - 0.4).abs() < 1e-12);
        for &v in up.data() {
            assert!((0.0..=0.9).contains(&v));
        }
    }

    #[test]
    fn upsample_from_single_pixel_broadcasts() {
        let map = Heatmap::new(1, 1, vec![0.7]);
        let up = upsample_bilinear(&map, 4, 5).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn normalize_maps_constant_input_to_zeros() {
        let map = Heatmap::new(2, 2, vec![4.2; 4]);
        assert_eq!(normalize_minmax(&map).data(), &[0.0; 4]);
    }

    #[test]
    fn normalize_is_invariant_to_positive_affine_rescale() {
        let map = Heatmap::new(1, 4, vec![0.2, 0.9, 0.5, 0.4]);
        let scaled = Heatmap::new(1, 4, map.data().iter().map(|v| 3.0 * v + 7.0).collect());
        let a = normalize_minmax(&map);
        let b = normalize_minmax(&scaled);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn binarize_uses_inclusive_threshold() {
        let map = Heatmap::new(1, 3, vec![0.1, 0.2, 0.3]);
        let mask = binarize(&map, 0.2);
        assert_eq!(mask.bits(), &[0, 1, 1]);
    }

    #[test]
    fn binarize_is_monotone_in_threshold() {
        let map = Heatmap::new(2, 3, vec![0.0, 0.4, 0.9, 0.2, 0.6, 0.5]);
        let loose = binarize(&map, 0.3);
        let tight = binarize(&map, 0.6);
        assert!(tight.is_subset_of(&loose));
    }

    #[test]
    fn gradcam_scaling_the_gradient_leaves_normalized_map_unchanged() {
        let act = Tensor::from_f64(&[2, 2, 2], vec![0.5, 1.0, 0.0, 2.0, 1.0, 0.3, 0.7, 0.1]);
        let grad = Tensor::from_f64(&[2, 2, 2], vec![0.2, 0.1, 0.4, 0.3, 0.9, 0.2, 0.5, 0.6]);
        let scaled = Tensor::from_f64(
            &[2, 2, 2],
            grad.to_f64_vec().iter().map(|v| 10.0 * v).collect::<Vec<_>>(),
        );
        let a = gradcam(&act, &grad, 8, 8).unwrap();
        let b = gradcam(&act, &scaled, 8, 8).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
