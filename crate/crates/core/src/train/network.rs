use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::loss::LossSpec;
use super::data::Sample;
use crate::error::{Error, Result};
use crate::heatmap::{Geometry, Heatmap};
use crate::skeleton::builtin_joint_set;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channels of both backbone layers.
    pub features: usize,
    /// Target Gaussian sigma in grid cells.
    pub target_sigma: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            in_channels: 1,
            height: 32,
            width: 24,
            features: 16,
            target_sigma: 1.5,
        }
    }
}

impl ToyConfig {
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.plane()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.features == 0 || self.height < 3 || self.width < 3 {
            return Err(Error::InvalidValue(format!("degenerate network config {self:?}")));
        }
        if !(self.target_sigma > 0.0) {
            return Err(Error::InvalidValue("target sigma must be positive".into()));
        }
        Ok(())
    }

    /// Geometry whose image coordinates equal grid coordinates.
    pub fn grid_geometry(&self) -> Geometry {
        Geometry::for_crop(
            crate::instance::BBox::new(-0.5, -0.5, self.width as f64, self.height as f64),
            self.height,
            self.width,
        )
    }
}

/// A parameter block: weights followed by biases.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Block {
    Conv1,
    Conv2,
    Head(String),
}

impl Block {
    pub fn backbone() -> [Block; 2] {
        [Block::Conv1, Block::Conv2]
    }

    pub fn head(name: &str) -> Block {
        Block::Head(name.to_string())
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Conv1 => f.write_str("conv1"),
            Block::Conv2 => f.write_str("conv2"),
            Block::Head(n) => write!(f, "head:{n}"),
        }
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv1" => Ok(Block::Conv1),
            "conv2" => Ok(Block::Conv2),
            _ => match s.strip_prefix("head:") {
                Some(n) if !n.is_empty() => Ok(Block::Head(n.to_string())),
                _ => Err(Error::InvalidValue(format!("unknown parameter block `{s}`"))),
            },
        }
    }
}

impl Serialize for Block {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Block {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub type Gradients = BTreeMap<Block, Vec<f64>>;

/// Shared two-layer 3x3 convolutional backbone with one 1x1 head per domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNetwork {
    pub config: ToyConfig,
    /// Head name to joint-set name.
    pub heads: BTreeMap<String, String>,
    pub params: BTreeMap<Block, Vec<f64>>,
    pub frozen: BTreeSet<Block>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Features {
    input: Vec<f64>,
    hidden: Vec<f64>,
    pub features: Vec<f64>,
}

fn block_len(config: &ToyConfig, block: &Block, head_channels: usize) -> usize {
    let f = config.features;
    match block {
        Block::Conv1 => f * config.in_channels * 9 + f,
        Block::Conv2 => f * f * 9 + f,
        Block::Head(_) => head_channels * f + head_channels,
    }
}

impl ToyNetwork {
    /// All-zero parameters.
    pub fn zeros(config: ToyConfig, heads: BTreeMap<String, String>) -> Result<Self> {
        config.validate()?;
        let mut params = BTreeMap::new();
        for b in Block::backbone() {
            params.insert(b.clone(), vec![0.0; block_len(&config, &b, 0)]);
        }
        for (name, set) in &heads {
            let k = builtin_joint_set(set)?.count();
            let b = Block::head(name);
            params.insert(b.clone(), vec![0.0; block_len(&config, &b, k)]);
        }
        Ok(ToyNetwork {
            config,
            heads,
            params,
            frozen: BTreeSet::new(),
        })
    }

    /// Uniform fan-in scaled weights, zero biases.
    pub fn new(config: ToyConfig, heads: BTreeMap<String, String>, seed: u64) -> Result<Self> {
        let mut net = ToyNetwork::zeros(config, heads)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.features;
        for (block, values) in net.params.iter_mut() {
            let (fan_in, weights) = match block {
                Block::Conv1 => (config.in_channels * 9, f * config.in_channels * 9),
                Block::Conv2 => (f * 9, f * f * 9),
                Block::Head(_) => (f, values.len() - values.len() / (f + 1)),
            };
            let limit = (3.0 / fan_in as f64).sqrt();
            for v in &mut values[..weights] {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn head_channels(&self, head: &str) -> Result<usize> {
        let set = self
            .heads
            .get(head)
            .ok_or_else(|| Error::MissingDataset(format!("no head named `{head}`")))?;
        Ok(builtin_joint_set(set)?.count())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Vec::len).sum()
    }

    fn block(&self, b: &Block) -> &[f64] {
        &self.params[b]
    }

    /// Backbone activations for one `C x H x W` input.
    pub fn features(&self, input: &[f64]) -> Result<Features> {
        let c = &self.config;
        if input.len() != c.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, network expects {}x{}x{}",
                input.len(),
                c.in_channels,
                c.height,
                c.width
            )));
        }
        let f = c.features;
        let (w1, b1) = self.block(&Block::Conv1).split_at(f * c.in_channels * 9);
        let mut hidden = conv3x3(input, c.in_channels, w1, b1, f, c.height, c.width);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let (w2, b2) = self.block(&Block::Conv2).split_at(f * f * 9);
        let features = conv3x3(&hidden, f, w2, b2, f, c.height, c.width);
        Ok(Features {
            input: input.to_vec(),
            hidden,
            features,
        })
    }

    /// Pre-decode output of one head, `K x H x W`.
    pub fn head_output(&self, feats: &Features, head: &str) -> Result<Vec<f64>> {
        let k = self.head_channels(head)?;
        let f = self.config.features;
        let p = self.config.plane();
        let (w, b) = self.block(&Block::head(head)).split_at(k * f);
        let mut out = vec![0.0; k * p];
        for j in 0..k {
            let dst = &mut out[j * p..(j + 1) * p];
            dst.iter_mut().for_each(|v| *v = b[j]);
            for i in 0..f {
                let wv = w[j * f + i];
                for (d, s) in dst.iter_mut().zip(&feats.features[i * p..(i + 1) * p]) {
                    *d += wv * s;
                }
            }
        }
        Ok(out)
    }

    pub fn forward_head(&self, input: &[f64], head: &str) -> Result<Vec<f64>> {
        let feats = self.features(input)?;
        self.head_output(&feats, head)
    }

    /// Every head's output as a heatmap in grid coordinates.
    pub fn forward(&self, input: &[f64]) -> Result<BTreeMap<String, Heatmap>> {
        let feats = self.features(input)?;
        let c = &self.config;
        let mut out = BTreeMap::new();
        for (name, set) in &self.heads {
            let values = self.head_output(&feats, name)?.into_iter().map(|v| v as f32).collect();
            let k = self.head_channels(name)?;
            out.insert(
                name.clone(),
                Heatmap::from_values(set.clone(), k, c.height, c.width, c.grid_geometry(), values)?,
            );
        }
        Ok(out)
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.params.iter().map(|(b, v)| (b.clone(), vec![0.0; v.len()])).collect()
    }

    /// Accumulates gradients of a loss whose derivative w.r.t. the head output is `dout`.
    pub fn backward(&self, feats: &Features, head: &str, dout: &[f64], grads: &mut Gradients) -> Result<()> {
        let c = &self.config;
        let (f, p) = (c.features, c.plane());
        let k = self.head_channels(head)?;
        if dout.len() != k * p {
            return Err(Error::ShapeMismatch(format!("output gradient has {} values, expected {}", dout.len(), k * p)));
        }
        let hb = Block::head(head);
        let (hw, _) = self.block(&hb).split_at(k * f);
        let mut dfeat = vec![0.0; f * p];
        {
            let g = grads.get_mut(&hb).expect("gradient for every block");
            let (gw, gb) = g.split_at_mut(k * f);
            for j in 0..k {
                let dj = &dout[j * p..(j + 1) * p];
                gb[j] += dj.iter().sum::<f64>();
                for i in 0..f {
                    let fi = &feats.features[i * p..(i + 1) * p];
                    gw[j * f + i] += dot(dj, fi);
                    let wv = hw[j * f + i];
                    for (d, s) in dfeat[i * p..(i + 1) * p].iter_mut().zip(dj) {
                        *d += wv * s;
                    }
                }
            }
        }
        let (w2, _) = self.block(&Block::Conv2).split_at(f * f * 9);
        let mut dhidden = vec![0.0; f * p];
        {
            let g = grads.get_mut(&Block::Conv2).expect("gradient for every block");
            let (gw, gb) = g.split_at_mut(f * f * 9);
            conv3x3_backward(&feats.hidden, f, w2, &dfeat, f, c.height, c.width, gw, gb, Some(&mut dhidden));
        }
        for (d, h) in dhidden.iter_mut().zip(&feats.hidden) {
            *d *= 1.0 - h * h;
        }
        let (w1, _) = self.block(&Block::Conv1).split_at(f * c.in_channels * 9);
        let g = grads.get_mut(&Block::Conv1).expect("gradient for every block");
        let (gw, gb) = g.split_at_mut(f * c.in_channels * 9);
        conv3x3_backward(&feats.input, c.in_channels, w1, &dhidden, f, c.height, c.width, gw, gb, None);
        Ok(())
    }

    /// Batch loss and its exact gradient. The batch loss sums, over the
    /// domains present, the mean loss of that domain's samples, so each head
    /// sees a full-strength gradient whatever its share of the batch. Frozen
    /// blocks and heads not used by any sample get zero gradient.
    pub fn gradients(&self, batch: &[&Sample], loss: LossSpec) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::InvalidValue("empty batch".into()));
        }
        let mut grads = self.zero_gradients();
        let mut total = 0.0;
        let mut per_domain: BTreeMap<&str, usize> = BTreeMap::new();
        for s in batch {
            *per_domain.entry(s.domain.as_str()).or_default() += 1;
        }
        let p = self.config.plane();
        for s in batch {
            let scale = 1.0 / per_domain[s.domain.as_str()] as f64;
            let feats = self.features(&s.input)?;
            let out = self.head_output(&feats, &s.domain)?;
            let k = out.len() / p;
            if s.target.channels != k || s.target.plane() != p {
                return Err(Error::ShapeMismatch(format!(
                    "target for `{}` is {}x{}x{}, head produces {k}x{}x{}",
                    s.domain, s.target.channels, s.target.height, s.target.width, self.config.height, self.config.width
                )));
            }
            let (l, mut dout) = loss.loss_and_grad(&out, &s.target.values, &s.mask, k, p)?;
            total += l * scale;
            if dout.iter().all(|&v| v == 0.0) {
                continue;
            }
            dout.iter_mut().for_each(|v| *v *= scale);
            self.backward(&feats, &s.domain, &dout, &mut grads)?;
        }
        for b in &self.frozen {
            if let Some(g) = grads.get_mut(b) {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok((total, grads))
    }

    /// Plain SGD step on every unfrozen block.
    pub fn apply(&mut self, grads: &Gradients, lr: f64) {
        for (b, values) in self.params.iter_mut() {
            if self.frozen.contains(b) {
                continue;
            }
            if let Some(g) = grads.get(b) {
                for (v, d) in values.iter_mut().zip(g) {
                    *v -= lr * d;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Valid output range along one axis for kernel tap offset `d`.
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize) as usize;
    (lo, hi)
}

/// 3x3 convolution with zero "same" padding; `w` is `[cout][cin][3][3]`.
fn conv3x3(input: &[f64], cin: usize, w: &[f64], bias: &[f64], cout: usize, h: usize, wd: usize) -> Vec<f64> {
    let p = h * wd;
    let mut out = vec![0.0; cout * p];
    for o in 0..cout {
        let dst = &mut out[o * p..(o + 1) * p];
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..cin {
            let src = &input[i * p..(i + 1) * p];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(wd, dx);
                    let wv = w[((o * cin + i) * 3 + ky) * 3 + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx = (x0 as isize + dx) as usize;
                        let d = &mut dst[y * wd + x0..y * wd + x1];
                        let s = &src[sy * wd + sx..sy * wd + sx + (x1 - x0)];
                        for (a, b) in d.iter_mut().zip(s) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    w: &[f64],
    dout: &[f64],
    cout: usize,
    h: usize,
    wd: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    mut din: Option<&mut [f64]>,
) {
    let p = h * wd;
    for o in 0..cout {
        let g = &dout[o * p..(o + 1) * p];
        gb[o] += g.iter().sum::<f64>();
        for i in 0..cin {
            let src = &input[i * p..(i + 1) * p];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = span(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(wd, dx);
                    let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx = (x0 as isize + dx) as usize;
                        let gr = &g[y * wd + x0..y * wd + x1];
                        let s = &src[sy * wd + sx..sy * wd + sx + (x1 - x0)];
                        acc += dot(gr, s);
                        if let Some(din) = din.as_deref_mut() {
                            let d = &mut din[i * p + sy * wd + sx..i * p + sy * wd + sx + (x1 - x0)];
                            for (a, b) in d.iter_mut().zip(gr) {
                                *a += wv * b;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heads() -> BTreeMap<String, String> {
        [("A", "coco"), ("B", "mpii")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn small() -> ToyConfig {
        ToyConfig {
            in_channels: 2,
            height: 6,
            width: 5,
            features: 3,
            target_sigma: 1.0,
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (h, wd, cin, cout) = (4, 5, 2, 3);
        let input: Vec<f64> = (0..cin * h * wd).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..cout * cin * 9).map(|i| ((i * 5) % 13) as f64 / 13.0 - 0.5).collect();
        let bias = [0.1, -0.2, 0.3];
        let out = conv3x3(&input, cin, &w, &bias, cout, h, wd);
        for o in 0..cout {
            for y in 0..h as isize {
                for x in 0..wd as isize {
                    let mut acc = bias[o];
                    for i in 0..cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w[((o * cin + i) * 3 + ky as usize) * 3 + kx as usize]
                                    * input[i * h * wd + sy as usize * wd + sx as usize];
                            }
                        }
                    }
                    let got = out[o * h * wd + y as usize * wd + x as usize];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let mut net = ToyNetwork::new(small(), heads(), 3).unwrap();
        for (b, v) in net.params.iter_mut() {
            let biases = match b {
                Block::Conv1 | Block::Conv2 => 3,
                Block::Head(_) => v.len() / 4,
            };
            let n = v.len();
            v[n - biases..].iter_mut().for_each(|x| *x = 0.0);
        }
        let out = net.forward(&vec![0.0; small().input_len()]).unwrap();
        assert!(out.values().all(|h| h.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn heads_are_independent_and_linear() {
        let net = ToyNetwork::new(small(), heads(), 5).unwrap();
        let x: Vec<f64> = (0..small().input_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = net.forward_head(&x, "A").unwrap();
        let mut other = net.clone();
        other.params.get_mut(&Block::head("B")).unwrap().iter_mut().for_each(|v| *v += 1.0);
        assert_eq!(other.forward_head(&x, "A").unwrap(), a);
        let mut doubled = net.clone();
        doubled.params.get_mut(&Block::head("A")).unwrap().iter_mut().for_each(|v| *v *= 2.0);
        for (d, s) in doubled.forward_head(&x, "A").unwrap().iter().zip(&a) {
            assert!((d - 2.0 * s).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = ToyNetwork::new(small(), heads(), 5).unwrap();
        assert!(net.forward(&[0.0; 3]).is_err());
        assert!(net.forward_head(&vec![0.0; small().input_len()], "C").is_err());
    }

    #[test]
    fn block_names_round_trip() {
        for b in [Block::Conv1, Block::Conv2, Block::head("posetrack")] {
            assert_eq!(b.to_string().parse::<Block>().unwrap(), b);
        }
        assert!("head:".parse::<Block>().is_err());
        assert!("conv3".parse::<Block>().is_err());
    }
}
