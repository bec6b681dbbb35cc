//! The three-domain synthetic benchmark: a large generic domain A, a second
//! large domain B with a different joint set, and a small target domain C.

use serde::{Deserialize, Serialize};

use super::data::{gen_synthetic, DomainSpec};
use super::network::ToyConfig;
use super::schedule::{Datasets, PresetOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainData {
    pub spec: DomainSpec,
    pub train_size: usize,
    pub heldout_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyBenchmark {
    pub network: ToyConfig,
    pub domains: Vec<DomainData>,
    pub schedule: PresetOptions,
}

impl Default for DomainData {
    fn default() -> Self {
        DomainData {
            spec: DomainSpec::new("A", "coco", 1.0, 0.05, [0.0, 0.0]),
            train_size: 2000,
            heldout_size: 100,
        }
    }
}

impl Default for ToyBenchmark {
    fn default() -> Self {
        let domain = |spec: DomainSpec, train_size| DomainData {
            spec,
            train_size,
            heldout_size: 100,
        };
        ToyBenchmark {
            network: ToyConfig {
                in_channels: 3,
                height: 16,
                width: 12,
                features: 16,
                target_sigma: 1.0,
            },
            domains: vec![
                domain(DomainSpec::new("A", "coco", 1.0, 0.05, [0.0, 0.0]), 2000),
                domain(DomainSpec::new("B", "mpii", 0.8, 0.1, [0.5, 0.0]), 2000),
                domain(DomainSpec::new("C", "posetrack", 0.9, 0.1, [0.0, 0.5]).with_videos(10), 200),
            ],
            schedule: PresetOptions {
                joint_steps: 1200,
                finetune_steps: 180,
                head_steps: 240,
                ..PresetOptions::default()
            },
        }
    }
}

impl ToyBenchmark {
    /// Training and held-out sets; every domain and split draws from its own seed.
    pub fn datasets(&self, seed: u64) -> Result<Datasets> {
        let mut d = Datasets::default();
        for (i, dom) in self.domains.iter().enumerate() {
            let name = &dom.spec.name;
            if d.train.contains_key(name) {
                return Err(Error::InvalidValue(format!("domain `{name}` listed twice")));
            }
            let base = seed.wrapping_mul(1000).wrapping_add(2 * i as u64);
            d.train
                .insert(name.clone(), gen_synthetic(&dom.spec, &self.network, dom.train_size, base)?);
            if dom.heldout_size > 0 {
                d.heldout
                    .insert(name.clone(), gen_synthetic(&dom.spec, &self.network, dom.heldout_size, base + 1)?);
            }
        }
        Ok(d)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
