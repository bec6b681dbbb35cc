use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Sample;
use super::loss::LossSpec;
use super::network::{Block, ToyConfig, ToyNetwork};
use crate::error::{Error, Result};
use crate::heatmap::decode_channel;
use crate::skeleton::{builtin_joint_set, JointMapping, MERGED};

/// Head that serves every domain when a stage merges joint sets.
pub const MERGED_HEAD: &str = "merged";

/// Switches the stage loss from step `at_step` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSwitch {
    pub at_step: usize,
    pub loss: LossSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Each batch slot picks a domain uniformly, then a sample of it.
    #[default]
    Balanced,
    /// Uniform over the union of the selected datasets.
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub domains: Vec<String>,
    /// Train one merged-joint-set head on all selected domains.
    #[serde(default)]
    pub merge: bool,
    /// Blocks updated in this stage; `None` trains everything.
    #[serde(default)]
    pub trainable: Option<Vec<Block>>,
    pub loss: LossSpec,
    #[serde(default)]
    pub loss_switch: Option<LossSwitch>,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub name: String,
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub sampling: Sampling,
    /// Held-out evaluation period in steps; stage ends are always logged.
    #[serde(default)]
    pub eval_every: usize,
}

/// Knobs shared by the strategy presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresetOptions {
    /// Large generic domain used for pre-training and full fine-tuning.
    pub generic: String,
    pub others: Vec<String>,
    /// Domain the single-dataset preset trains on.
    pub target: String,
    pub joint_steps: usize,
    pub finetune_steps: usize,
    pub head_steps: usize,
    pub lr: f64,
    /// Learning-rate factor for every stage after the first.
    pub finetune_lr_scale: f64,
    pub batch_size: usize,
    pub ohkm_k: usize,
    /// Fraction of the joint stage trained with OHKM at its end.
    pub ohkm_fraction: f64,
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions {
            generic: "A".into(),
            others: vec!["B".into(), "C".into()],
            target: "C".into(),
            joint_steps: 2000,
            finetune_steps: 300,
            head_steps: 400,
            lr: 0.5,
            finetune_lr_scale: 0.1,
            batch_size: 8,
            ohkm_k: 8,
            ohkm_fraction: 1.0 / 6.0,
        }
    }
}

pub const PRESETS: [&str; 6] = ["single", "transfer", "transfer_mix", "mixed", "multi_domain", "mdpn"];

impl PresetOptions {
    fn stage(&self, name: &str, domains: Vec<String>, steps: usize, seed: u64) -> Stage {
        Stage {
            name: name.into(),
            domains,
            merge: false,
            trainable: None,
            loss: LossSpec::L2,
            loss_switch: None,
            steps,
            lr: self.lr,
            batch_size: self.batch_size,
            seed,
        }
    }

    /// The long first stage ends with hard keypoint mining.
    fn with_ohkm_tail(&self, mut stage: Stage) -> Stage {
        let tail = (stage.steps as f64 * self.ohkm_fraction).round() as usize;
        if tail > 0 {
            stage.loss_switch = Some(LossSwitch {
                at_step: stage.steps - tail.min(stage.steps),
                loss: LossSpec::Ohkm(self.ohkm_k),
            });
        }
        stage
    }

    fn all_domains(&self) -> Vec<String> {
        std::iter::once(self.generic.clone()).chain(self.others.iter().cloned()).collect()
    }
}

impl TrainSchedule {
    /// Builds one of [`PRESETS`].
    pub fn preset(name: &str, o: &PresetOptions) -> Result<Self> {
        let total = o.joint_steps + o.finetune_steps + o.head_steps;
        let tuning = o.finetune_steps + o.head_steps;
        let stages = match name {
            "single" => vec![o.with_ohkm_tail(o.stage("single", vec![o.target.clone()], total, 1))],
            "transfer" => vec![
                o.with_ohkm_tail(o.stage("pretrain", vec![o.generic.clone()], o.joint_steps, 1)),
                o.stage("finetune", vec![o.target.clone()], tuning, 2),
            ],
            "transfer_mix" => vec![
                o.with_ohkm_tail(o.stage("pretrain", vec![o.generic.clone()], o.joint_steps, 1)),
                o.stage("finetune", o.others.clone(), tuning, 2),
            ],
            "mixed" => {
                let mut s = o.with_ohkm_tail(o.stage("mixed", o.all_domains(), total, 1));
                s.merge = true;
                vec![s]
            }
            "multi_domain" => vec![o.with_ohkm_tail(o.stage("joint", o.all_domains(), o.joint_steps, 1))],
            "mdpn" => {
                let mut heads = o.stage("heads", o.others.clone(), o.head_steps, 3);
                heads.trainable = Some(o.others.iter().map(|d| Block::head(d)).collect());
                vec![
                    o.with_ohkm_tail(o.stage("joint", o.all_domains(), o.joint_steps, 1)),
                    o.stage("finetune", vec![o.generic.clone()], o.finetune_steps, 2),
                    heads,
                ]
            }
            _ => {
                return Err(Error::InvalidValue(format!(
                    "unknown schedule preset `{name}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        let mut stages = stages;
        for s in stages.iter_mut().skip(1) {
            s.lr *= o.finetune_lr_scale;
        }
        Ok(TrainSchedule {
            name: name.into(),
            stages,
            sampling: Sampling::Balanced,
            eval_every: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidValue(format!("schedule `{}` has no stages", self.name)));
        }
        for s in &self.stages {
            if s.domains.is_empty() || s.batch_size == 0 || !(s.lr.is_finite() && s.lr >= 0.0) {
                return Err(Error::InvalidValue(format!("stage `{}` needs domains, a batch size and a finite lr", s.name)));
            }
            if matches!(s.loss, LossSpec::Ohkm(0)) || matches!(s.loss_switch, Some(LossSwitch { loss: LossSpec::Ohkm(0), .. })) {
                return Err(Error::InvalidValue("ohkm needs k >= 1".into()));
            }
        }
        Ok(())
    }

    /// Head name to joint set for every head the schedule trains.
    pub fn heads(&self, datasets: &Datasets) -> Result<BTreeMap<String, String>> {
        let mut heads = BTreeMap::new();
        for s in &self.stages {
            for d in &s.domains {
                let set = datasets.joint_set(d)?;
                if s.merge {
                    heads.insert(MERGED_HEAD.to_string(), MERGED.to_string());
                } else {
                    heads.insert(d.clone(), set);
                }
            }
        }
        Ok(heads)
    }
}

/// Training and held-out samples per domain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Datasets {
    pub train: BTreeMap<String, Vec<Sample>>,
    pub heldout: BTreeMap<String, Vec<Sample>>,
}

impl Datasets {
    pub fn joint_set(&self, domain: &str) -> Result<String> {
        self.train
            .get(domain)
            .and_then(|s| s.first())
            .map(|s| s.target.joint_set.clone())
            .ok_or_else(|| Error::MissingDataset(domain.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub schedule: String,
    pub stage: String,
    pub stage_index: usize,
    pub step: usize,
    /// Mean training loss since the previous entry of the stage.
    pub loss: f64,
    pub heldout_error: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: ToyNetwork,
    pub log: Vec<LogEntry>,
    /// Network after each stage.
    pub stage_snapshots: Vec<ToyNetwork>,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entries serialize") + "\n")
            .collect()
    }
}

/// Decoded joint positions of one head for one input, in grid coordinates.
pub fn predict(net: &ToyNetwork, head: &str, input: &[f64]) -> Result<Vec<Option<(f64, f64)>>> {
    let out = net.forward_head(input, head)?;
    let c = &net.config;
    let plane = c.plane();
    let geometry = c.grid_geometry();
    Ok(out
        .chunks(plane)
        .map(|ch| {
            let ch: Vec<f32> = ch.iter().map(|&v| v as f32).collect();
            let k = decode_channel(&ch, c.height, c.width, &geometry, 0.0, true);
            k.annotated.then_some((k.x, k.y))
        })
        .collect())
}

/// Mean distance in cells between decoded and annotated joints of `samples`.
///
/// Uses the domain's own head when present, else the merged head.
pub fn heldout_error(net: &ToyNetwork, samples: &[Sample]) -> Result<Option<f64>> {
    let Some(first) = samples.first() else { return Ok(None) };
    let domain = &first.domain;
    let set = builtin_joint_set(&first.target.joint_set)?;
    let (head, remap): (&str, Option<JointMapping>) = if net.heads.contains_key(domain) {
        (domain, None)
    } else if net.heads.contains_key(MERGED_HEAD) {
        (MERGED_HEAD, Some(JointMapping::between(&set, &builtin_joint_set(MERGED)?)))
    } else {
        return Ok(None);
    };
    let (mut total, mut count) = (0.0, 0usize);
    let far = (net.config.height as f64).hypot(net.config.width as f64);
    for s in samples {
        let pred = predict(net, head, &s.input)?;
        let pred: Vec<Option<(f64, f64)>> = match &remap {
            None => pred,
            Some(m) => {
                let mut out = vec![None; set.count()];
                for &(i, j) in &m.index_map {
                    out[i] = pred[j];
                }
                out
            }
        };
        for (p, k) in pred.iter().zip(&s.keypoints) {
            if let Some(k) = k {
                total += p.map_or(far, |p| (p.0 - k.0).hypot(p.1 - k.1));
                count += 1;
            }
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

fn evaluate(net: &ToyNetwork, datasets: &Datasets) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (domain, samples) in &datasets.heldout {
        if let Some(e) = heldout_error(net, samples)? {
            out.insert(domain.clone(), e);
        }
    }
    Ok(out)
}

fn stage_rng(seed: u64, stage: &Stage, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stage.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64 + 1);
    rng
}

/// Runs every stage with plain SGD; fully determined by `seed`.
pub fn train(config: &ToyConfig, schedule: &TrainSchedule, datasets: &Datasets, seed: u64) -> Result<TrainOutcome> {
    schedule.validate()?;
    let heads = schedule.heads(datasets)?;
    let mut net = ToyNetwork::new(*config, heads, seed)?;
    let mut log = Vec::new();
    let mut snapshots = Vec::new();
    for (index, stage) in schedule.stages.iter().enumerate() {
        let mut pools: Vec<Vec<Sample>> = Vec::new();
        for d in &stage.domains {
            let samples = datasets.train.get(d).filter(|s| !s.is_empty()).ok_or_else(|| Error::MissingDataset(d.clone()))?;
            pools.push(if stage.merge {
                samples.iter().map(|s| s.to_merged(MERGED_HEAD, config)).collect::<Result<_>>()?
            } else {
                samples.clone()
            });
        }
        let union: usize = pools.iter().map(Vec::len).sum();
        net.frozen = match &stage.trainable {
            None => BTreeSet::new(),
            Some(t) => net.params.keys().filter(|b| !t.contains(b)).cloned().collect(),
        };
        let mut rng = stage_rng(seed, stage, index);
        let (mut window_loss, mut window) = (0.0, 0usize);
        for step in 0..stage.steps {
            let loss = match stage.loss_switch {
                Some(sw) if step >= sw.at_step => sw.loss,
                _ => stage.loss,
            };
            let batch: Vec<&Sample> = (0..stage.batch_size)
                .map(|_| match schedule.sampling {
                    Sampling::Balanced => {
                        let pool = &pools[rng.random_range(0..pools.len())];
                        &pool[rng.random_range(0..pool.len())]
                    }
                    Sampling::Proportional => {
                        let mut i = rng.random_range(0..union);
                        let mut pool = 0;
                        while i >= pools[pool].len() {
                            i -= pools[pool].len();
                            pool += 1;
                        }
                        &pools[pool][i]
                    }
                })
                .collect();
            let (l, grads) = net.gradients(&batch, loss)?;
            net.apply(&grads, stage.lr);
            window_loss += l;
            window += 1;
            let done = step + 1;
            if done == stage.steps || (schedule.eval_every > 0 && done % schedule.eval_every == 0) {
                log.push(LogEntry {
                    schedule: schedule.name.clone(),
                    stage: stage.name.clone(),
                    stage_index: index,
                    step: done,
                    loss: window_loss / window as f64,
                    heldout_error: evaluate(&net, datasets)?,
                });
                window_loss = 0.0;
                window = 0;
            }
        }
        if stage.steps == 0 {
            log.push(LogEntry {
                schedule: schedule.name.clone(),
                stage: stage.name.clone(),
                stage_index: index,
                step: 0,
                loss: 0.0,
                heldout_error: evaluate(&net, datasets)?,
            });
        }
        net.frozen.clear();
        snapshots.push(net.clone());
    }
    Ok(TrainOutcome {
        network: net,
        log,
        stage_snapshots: snapshots,
    })
}
