//! Pairwise box geometry and the learned geometric gate.
//!
//! For every ordered pair of objects `(n, p)` the relative displacement
//!
//! ```text
//! δ(n,p) = ( log(max(|cx_p − cx_n| / w_n, ε)),
//!            log(max(|cy_p − cy_n| / h_n, ε)),
//!            log(w_p / w_n),
//!            log(h_p / h_n) )
//! ```
//!
//! is embedded with fixed sinusoids and mapped to one non-negative gate per
//! attention head, `θ_G = ReLU(Emb(δ) · W_Gᵀ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const DEFAULT_EPS_CENTER: f64 = 1e-3;
pub const DEFAULT_D_G: usize = 64;
const WAVELENGTH_BASE: f64 = 1000.0;

/// Axis-aligned box in normalised image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoundingBox { cx, cy, w, h }
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidBox { index, msg });
        let finite = [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite {
            return bad(format!("non-finite coordinate in {self:?}"));
        }
        if self.w <= 0.0 || self.h <= 0.0 || self.w > 1.0 || self.h > 1.0 {
            return bad(format!("width/height must lie in (0, 1], got w={} h={}", self.w, self.h));
        }
        if !(0.0..=1.0).contains(&self.cx) || !(0.0..=1.0).contains(&self.cy) {
            return bad(format!("center must lie in [0, 1], got ({}, {})", self.cx, self.cy));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Ten,
    Natural,
}

impl LogBase {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            LogBase::Ten => x.log10(),
            LogBase::Natural => x.ln(),
        }
    }
}

/// Relative displacements for all ordered pairs, shape `N × N × 4`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryFeature {
    n: usize,
    delta: Tensor,
}

impl GeometryFeature {
    pub fn num_objects(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> &Tensor {
        &self.delta
    }

    pub fn pair(&self, n: usize, p: usize) -> [f64; 4] {
        let d = &self.delta.data()[(n * self.n + p) * 4..][..4];
        [d[0], d[1], d[2], d[3]]
    }
}

/// `δ(n,p) = log(max(|Δcx|/w_n, ε), max(|Δcy|/h_n, ε), w_p/w_n, h_p/h_n)`.
///
/// The floor `ε = eps_center` applies to the size-normalised offset, so
/// coincident centres map to `log ε` whatever the box size and `δ` is
/// unchanged by any translation and uniform scaling of all boxes.
pub fn relative_geometry(boxes: &[BoundingBox], eps_center: f64, base: LogBase) -> Result<GeometryFeature> {
    if boxes.is_empty() {
        return Err(Error::EmptyDetections);
    }
    if eps_center <= 0.0 {
        return Err(Error::Config(format!("eps_center must be positive, got {eps_center}")));
    }
    for (i, b) in boxes.iter().enumerate() {
        b.validate(i)?;
    }
    let n = boxes.len();
    let mut data = Vec::with_capacity(n * n * 4);
    for a in boxes {
        for b in boxes {
            data.push(base.apply(((b.cx - a.cx).abs() / a.w).max(eps_center)));
            data.push(base.apply(((b.cy - a.cy).abs() / a.h).max(eps_center)));
            data.push(base.apply(b.w / a.w));
            data.push(base.apply(b.h / a.h));
        }
    }
    Ok(GeometryFeature {
        n,
        delta: Tensor::new(vec![n, n, 4], data)?,
    })
}

/// Sinusoidal embedding of each δ component: `d_g / 2` sines followed by
/// `d_g / 2` cosines at wavelengths `1000^(2i / d_g)`. Output `N × N × 4·d_g`.
pub fn sinusoid_embed(geometry: &GeometryFeature, d_g: usize) -> Result<Tensor> {
    if d_g < 2 || !d_g.is_multiple_of(2) {
        return Err(Error::Config(format!("d_g must be a positive even number, got {d_g}")));
    }
    let half = d_g / 2;
    let inv_wavelengths: Vec<f64> = (0..half)
        .map(|i| WAVELENGTH_BASE.powf(-(2.0 * i as f64) / d_g as f64))
        .collect();
    let n = geometry.n;
    let mut out = Vec::with_capacity(n * n * 4 * d_g);
    for &v in geometry.delta.data() {
        out.extend(inv_wavelengths.iter().map(|f| (v * f).sin()));
        out.extend(inv_wavelengths.iter().map(|f| (v * f).cos()));
    }
    Tensor::new(vec![n, n, 4 * d_g], out)
}

/// Per-head gate `θ_G[h] = ReLU(emb · W_G[h])` as `H` graph nodes of shape `N × N`.
///
/// `emb` must have `N·N` rows (any leading shape folding to that) and `w_g`
/// shape `H × 4·d_g`.
pub fn geometric_bias(graph: &mut Graph, emb: Var, w_g: Var, n: usize) -> Result<Vec<Var>> {
    let width = *graph.shape(emb).last().unwrap_or(&0);
    let flat = graph.reshape(emb, &[n * n, width])?;
    let wt = graph.transpose(w_g)?;
    let pre = graph.matmul(flat, wt)?;
    let gate = graph.relu(pre)?;
    let by_head = graph.transpose(gate)?;
    let heads = graph.shape(by_head)[0];
    (0..heads)
        .map(|h| {
            let row = graph.slice_rows(by_head, h, 1)?;
            graph.reshape(row, &[n, n])
        })
        .collect()
}

/// Non-negative gate values, shape `H × N × N`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometricBias {
    pub theta_g: Tensor,
}

impl GeometricBias {
    pub fn head(&self, h: usize) -> Tensor {
        let (_, n) = (self.theta_g.shape()[0], self.theta_g.shape()[1]);
        let data = self.theta_g.data()[h * n * n..(h + 1) * n * n].to_vec();
        Tensor::new(vec![n, n], data).expect("head slice")
    }
}

/// Value-only form of [`geometric_bias`].
pub fn geometric_bias_values(emb: &Tensor, w_g: &Tensor) -> Result<GeometricBias> {
    let n = emb.shape()[0];
    if emb.shape().len() != 3 || emb.shape()[1] != n {
        return Err(Error::Shape {
            op: "geometric_bias",
            msg: format!("embedding must be N x N x K, got {:?}", emb.shape()),
        });
    }
    if w_g.shape().len() != 2 || w_g.shape()[1] != emb.shape()[2] {
        return Err(Error::Dimension {
            op: "geometric_bias",
            lhs: emb.shape().to_vec(),
            rhs: w_g.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let e = g.constant(emb.clone());
    let w = g.constant(w_g.clone());
    let heads = geometric_bias(&mut g, e, w, n)?;
    let mut data = Vec::with_capacity(heads.len() * n * n);
    for h in heads {
        data.extend_from_slice(g.value(h).data());
    }
    Ok(GeometricBias {
        theta_g: Tensor::new(vec![w_g.shape()[0], n, n], data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h)
    }

    #[test]
    fn self_pair_has_zero_size_ratios() {
        let g = relative_geometry(&[b(0.5, 0.5, 0.2, 0.2)], 1e-3, LogBase::Ten).unwrap();
        let d = g.pair(0, 0);
        assert_eq!(d[2], 0.0);
        assert_eq!(d[3], 0.0);
        assert_eq!(d[0], -3.0);
        assert_eq!(d[1], -3.0);
    }

    #[test]
    fn double_width_gives_log10_two() {
        let g = relative_geometry(&[b(0.3, 0.3, 0.1, 0.1), b(0.6, 0.4, 0.2, 0.1)], 1e-3, LogBase::Ten).unwrap();
        assert!((g.pair(0, 1)[2] - std::f64::consts::LOG10_2).abs() < 1e-15);
        assert!((g.pair(1, 0)[2] + std::f64::consts::LOG10_2).abs() < 1e-15);
    }

    #[test]
    fn dyadic_translation_is_bit_exact() {
        let boxes = [b(0.25, 0.5, 0.125, 0.25), b(0.625, 0.375, 0.25, 0.0625), b(0.5, 0.125, 0.5, 0.5)];
        let moved: Vec<_> = boxes.iter().map(|x| b(x.cx + 0.125, x.cy + 0.25, x.w, x.h)).collect();
        let a = relative_geometry(&boxes, 1e-3, LogBase::Ten).unwrap();
        let c = relative_geometry(&moved, 1e-3, LogBase::Ten).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn decimal_translation_matches_to_rounding() {
        let boxes = [b(0.2, 0.5, 0.1, 0.3), b(0.7, 0.35, 0.25, 0.05)];
        let moved: Vec<_> = boxes.iter().map(|x| b(x.cx + 0.1, x.cy + 0.1, x.w, x.h)).collect();
        let a = relative_geometry(&boxes, 1e-3, LogBase::Ten).unwrap();
        let c = relative_geometry(&moved, 1e-3, LogBase::Ten).unwrap();
        assert!(a.delta().max_abs_diff(c.delta()) < 1e-12);
    }

    #[test]
    fn uniform_scale_leaves_delta_unchanged() {
        let boxes = [b(0.5, 0.5, 0.2, 0.2), b(0.5004, 0.7, 0.1, 0.3), b(0.1, 0.1, 0.05, 0.05)];
        let scaled: Vec<_> = boxes.iter().map(|x| b(x.cx * 0.5, x.cy * 0.5, x.w * 0.5, x.h * 0.5)).collect();
        let a = relative_geometry(&boxes, 1e-3, LogBase::Ten).unwrap();
        let c = relative_geometry(&scaled, 1e-3, LogBase::Ten).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn invalid_boxes_are_rejected() {
        for bad in [b(0.5, 0.5, 0.0, 0.1), b(0.5, 0.5, 0.1, -0.2), b(1.2, 0.5, 0.1, 0.1)] {
            assert!(matches!(
                relative_geometry(&[b(0.5, 0.5, 0.1, 0.1), bad], 1e-3, LogBase::Ten),
                Err(Error::InvalidBox { index: 1, .. })
            ));
        }
    }

    #[test]
    fn natural_log_base() {
        let g = relative_geometry(&[b(0.3, 0.3, 0.1, 0.1), b(0.6, 0.4, 0.2, 0.1)], 1e-3, LogBase::Natural).unwrap();
        assert!((g.pair(0, 1)[2] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_delta_embeds_as_sines_then_cosines() {
        let g = relative_geometry(&[b(0.5, 0.5, 0.2, 0.2)], 1e-3, LogBase::Ten).unwrap();
        let e = sinusoid_embed(&g, 4).unwrap();
        assert_eq!(e.shape(), &[1, 1, 16]);
        // Components 2 and 3 are zero for a self pair.
        assert_eq!(&e.data()[8..16], &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn first_channel_has_unit_wavelength() {
        let g = relative_geometry(&[b(0.1, 0.2, 0.05, 0.3), b(0.9, 0.6, 0.4, 0.1)], 1e-3, LogBase::Ten).unwrap();
        let e = sinusoid_embed(&g, 8).unwrap();
        let v = g.pair(0, 1)[0];
        assert_eq!(e.data()[8 * 4], v.sin());
        assert_eq!(e.data()[8 * 4 + 4], v.cos());
    }

    #[test]
    fn odd_embedding_width_is_config_error() {
        let g = relative_geometry(&[b(0.5, 0.5, 0.2, 0.2)], 1e-3, LogBase::Ten).unwrap();
        assert!(matches!(sinusoid_embed(&g, 5), Err(Error::Config(_))));
    }

    #[test]
    fn bias_examples() {
        // Unit-vector embedding row picks out one weight.
        let mut emb = Tensor::zeros(&[1, 1, 4]);
        emb.data_mut()[2] = 1.0;
        let mut w = Tensor::zeros(&[2, 4]);
        w.data_mut()[2] = 3.0;
        w.data_mut()[4 + 2] = -5.0;
        let bias = geometric_bias_values(&emb, &w).unwrap();
        assert_eq!(bias.theta_g.data(), &[3.0, 0.0]);

        let zero = geometric_bias_values(&Tensor::filled(&[2, 2, 4], 0.7), &Tensor::zeros(&[3, 4])).unwrap();
        assert!(zero.theta_g.data().iter().all(|&v| v == 0.0));
    }
}
