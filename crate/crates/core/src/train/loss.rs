use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::heatmap::Heatmap;

/// Training loss: masked L2, or online hard keypoint mining over the `k` worst joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSpec {
    L2,
    Ohkm(usize),
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::L2 => f.write_str("l2"),
            LossSpec::Ohkm(k) => write!(f, "ohkm:{k}"),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "l2" {
            return Ok(LossSpec::L2);
        }
        let k = s
            .strip_prefix("ohkm:")
            .and_then(|k| k.parse::<usize>().ok())
            .ok_or_else(|| Error::InvalidValue(format!("unknown loss `{s}` (expected `l2` or `ohkm:<k>`)")))?;
        if k == 0 {
            return Err(Error::InvalidValue("ohkm needs k >= 1".into()));
        }
        Ok(LossSpec::Ohkm(k))
    }
}

impl Serialize for LossSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LossSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Mean squared error of each channel.
pub fn per_joint_mse(pred: &[f64], target: &[f32], channels: usize, plane: usize) -> Vec<f64> {
    (0..channels)
        .map(|k| {
            let r = k * plane..(k + 1) * plane;
            pred[r.clone()]
                .iter()
                .zip(&target[r])
                .map(|(p, &t)| (p - t as f64).powi(2))
                .sum::<f64>()
                / plane as f64
        })
        .collect()
}

impl LossSpec {
    /// Joints that contribute to the loss, highest loss first for OHKM.
    fn selected(&self, losses: &[f64], mask: &[bool]) -> Vec<usize> {
        let mut annotated: Vec<usize> = (0..losses.len()).filter(|&k| mask[k]).collect();
        if let LossSpec::Ohkm(k) = *self {
            annotated.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
            annotated.truncate(k);
        }
        annotated
    }

    /// Loss of one sample and its gradient w.r.t. `pred`.
    pub fn loss_and_grad(
        &self,
        pred: &[f64],
        target: &[f32],
        mask: &[bool],
        channels: usize,
        plane: usize,
    ) -> Result<(f64, Vec<f64>)> {
        if pred.len() != channels * plane || target.len() != pred.len() || mask.len() != channels {
            return Err(Error::ShapeMismatch(format!(
                "loss inputs: {} predictions, {} targets, {} mask bits for {channels} channels",
                pred.len(),
                target.len(),
                mask.len()
            )));
        }
        if let LossSpec::Ohkm(0) = self {
            return Err(Error::InvalidValue("ohkm needs k >= 1".into()));
        }
        let losses = per_joint_mse(pred, target, channels, plane);
        let chosen = self.selected(&losses, mask);
        let mut grad = vec![0.0; pred.len()];
        if chosen.is_empty() {
            return Ok((0.0, grad));
        }
        let m = chosen.len() as f64;
        let loss = chosen.iter().map(|&k| losses[k]).sum::<f64>() / m;
        let scale = 2.0 / (plane as f64 * m);
        for &k in &chosen {
            let r = k * plane..(k + 1) * plane;
            for ((g, p), &t) in grad[r.clone()].iter_mut().zip(&pred[r.clone()]).zip(&target[r]) {
                *g = scale * (p - t as f64);
            }
        }
        Ok((loss, grad))
    }

    pub fn loss(&self, pred: &Heatmap, target: &Heatmap, mask: &[bool]) -> Result<f64> {
        if !pred.same_shape(target) {
            return Err(Error::ShapeMismatch("prediction and target differ in shape".into()));
        }
        let p: Vec<f64> = pred.values.iter().map(|&v| v as f64).collect();
        Ok(self.loss_and_grad(&p, &target.values, mask, pred.channels, pred.plane())?.0)
    }
}

/// Mean over annotated joints of the per-joint mean squared error; 0 when nothing is annotated.
pub fn loss_l2_masked(pred: &Heatmap, target: &Heatmap, mask: &[bool]) -> Result<f64> {
    LossSpec::L2.loss(pred, target, mask)
}

/// Mean of the `min(k, annotated)` largest per-joint errors.
pub fn loss_ohkm(pred: &Heatmap, target: &Heatmap, mask: &[bool], k: usize) -> Result<f64> {
    LossSpec::Ohkm(k).loss(pred, target, mask)
}
