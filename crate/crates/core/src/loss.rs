//! The training objective: an unnormalized L2 term on each density stage plus
//! a pixel-averaged binary cross entropy per class on the attention maps.

use crate::error::{Error, Result};
use crate::model::ModelOutput;
use crate::tensor::{Graph, Tensor, Var};

/// Attention values are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

/// Per-term breakdown of one objective evaluation.
///
/// Without CAM the objective is the final-stage L2 alone; `l2_intermediate`
/// is then reported as 0 and `bce_per_class` is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub l2_intermediate: f64,
    pub l2_final: f64,
    pub bce_per_class: Vec<f64>,
    pub total: f64,
}

impl LossReport {
    /// Re-sums the components; equals `total` up to the addition order used
    /// on the graph.
    pub fn component_sum(&self) -> f64 {
        self.l2_intermediate + self.l2_final + self.bce_per_class.iter().sum::<f64>()
    }
}

/// Sum over classes and pixels of squared differences.
pub fn l2_loss(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("channel", format!("{} vs {}", pred.shape(), gt.shape())));
    }
    Ok(pred.data().iter().zip(gt.data()).map(|(p, t)| (p - t) * (p - t)).sum())
}

/// Pixel-mean binary cross entropy of one attention plane against one
/// binary mask.
pub fn bce_loss(attn: &[f64], mask: &[f64]) -> Result<f64> {
    if attn.len() != mask.len() || attn.is_empty() {
        return Err(Error::shape("buffer", format!("{} attention vs {} mask values", attn.len(), mask.len())));
    }
    let mut sum = 0.0;
    for (&r, &t) in attn.iter().zip(mask) {
        if t != 0.0 && t != 1.0 {
            return Err(Error::Config(format!("mask value {t} is not binary")));
        }
        let r = r.clamp(BCE_EPS, 1.0 - BCE_EPS);
        sum -= t * r.ln() + (1.0 - t) * (1.0 - r).ln();
    }
    Ok(sum / attn.len() as f64)
}

/// Graph handles for the objective and its parts.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l2_intermediate: Option<Var>,
    pub l2_final: Var,
    /// `1 x N x 1 x 1` per-class BCE.
    pub bce: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn report(&self, g: &Graph) -> LossReport {
        let scalar = |v: Var| g.value(v).data()[0];
        LossReport {
            l2_intermediate: self.l2_intermediate.map_or(0.0, scalar),
            l2_final: scalar(self.l2_final),
            bce_per_class: self.bce.map_or_else(Vec::new, |b| g.value(b).data().to_vec()),
            total: scalar(self.total),
        }
    }
}

/// Builds the objective on the graph:
/// `L2(intermediate) + L2(final) + sum_n BCE(attention_n, mask_n)` with CAM,
/// `L2(final)` without.
pub fn total_loss(g: &mut Graph, out: &ModelOutput, gt_density: &Tensor, gt_masks: &Tensor) -> Result<LossVars> {
    let l2_final = g.sum_squared_error(out.final_density, gt_density)?;
    let Some(attention) = out.attention else {
        return Ok(LossVars {
            l2_intermediate: None,
            l2_final,
            bce: None,
            total: l2_final,
        });
    };
    let l2_int = g.sum_squared_error(out.intermediate, gt_density)?;
    let bce = g.bce_per_channel(attention, gt_masks, BCE_EPS)?;
    let bce_sum = g.sum(bce);
    let l2 = g.add(l2_int, l2_final)?;
    let total = g.add(l2, bce_sum)?;
    Ok(LossVars {
        l2_intermediate: Some(l2_int),
        l2_final,
        bce: Some(bce),
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn l2_examples() {
        let s = Shape::new(1, 2, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(s, &mut rng);
        assert_eq!(l2_loss(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.data_mut()[7] += 2.0;
        assert!((l2_loss(&a, &b).unwrap() - 4.0).abs() < 1e-12);
        assert!(l2_loss(&a, &Tensor::zeros(Shape::new(1, 1, 3, 3))).is_err());
    }

    #[test]
    fn l2_matches_flat_loop_and_is_symmetric() {
        let s = Shape::new(1, 3, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random(s, &mut rng), random(s, &mut rng));
        let mut oracle = 0.0;
        for i in 0..s.numel() {
            let d = a.data()[i] - b.data()[i];
            oracle += d * d;
        }
        assert!((l2_loss(&a, &b).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(l2_loss(&a, &b).unwrap(), l2_loss(&b, &a).unwrap());
    }

    #[test]
    fn bce_examples() {
        let mask = [0.0, 1.0, 1.0, 0.0];
        let v = bce_loss(&[0.5; 4], &mask).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-6);
        let perfect = bce_loss(&[1.0 - BCE_EPS; 4], &[1.0; 4]).unwrap();
        assert!(perfect > 0.0 && (perfect - BCE_EPS).abs() < 1e-12);
        assert!(bce_loss(&[0.5], &[0.3]).is_err());
        assert!(bce_loss(&[0.5, 0.5], &[1.0]).is_err());
    }

    #[test]
    fn bce_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r: Vec<f64> = (0..200).map(|_| rng.random_range(0.01..0.99)).collect();
        let t: Vec<f64> = (0..200).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let mut oracle = 0.0;
        for i in 0..200 {
            oracle += if t[i] == 1.0 { -r[i].ln() } else { -(1.0 - r[i]).ln() };
        }
        oracle /= 200.0;
        assert!((bce_loss(&r, &t).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn bce_minimized_at_mask_mean() {
        let mask = [1.0, 0.0, 0.0, 1.0, 1.0];
        let mean = 0.6;
        let at_mean = bce_loss(&[mean; 5], &mask).unwrap();
        for r in [0.1, 0.3, 0.5, 0.59, 0.61, 0.7, 0.9] {
            assert!(bce_loss(&[r; 5], &mask).unwrap() > at_mean);
        }
    }
}
