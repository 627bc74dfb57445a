use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correspondence::MapParams;
use crate::error::{GeomError, Result};
use crate::geometry::Backend;
use crate::gluing::KarcherSettings;
use crate::manifold::registry::Params;
use crate::nets::NetOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    pub model: String,
    #[serde(default)]
    pub params: Params,
    /// The model's metric is multiplied by `scale^2`.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrespondenceSpec {
    pub map: String,
    #[serde(default)]
    pub params: MapParams,
    /// Cap on cached pairs used for the distortion (evenly strided).
    #[serde(default)]
    pub max_pairs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub net: u64,
    pub sampling: u64,
    pub trials: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleCounts {
    pub admissibility: usize,
    pub net_probes: usize,
    pub image_probes: usize,
    pub chart_centers: usize,
    pub chart_samples: usize,
    pub closeness_neighbours: usize,
    pub partition_probes: usize,
    pub differential_points: usize,
    pub lipschitz_pairs: usize,
    pub max_pair_distance: f64,
    pub lipschitz_differentials: usize,
    pub injectivity_samples: usize,
    pub surjectivity_targets: usize,
    pub audit_radius: f64,
    pub lemma_trials: usize,
    /// `eps` and `delta` of the linear-algebra lemma instances.
    pub lemma_eps: f64,
    pub lemma_delta: f64,
    pub trace_points: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self {
            admissibility: 200,
            net_probes: 2000,
            image_probes: 500,
            chart_centers: 20,
            chart_samples: 20,
            closeness_neighbours: 2,
            partition_probes: 1000,
            differential_points: 100,
            lipschitz_pairs: 1000,
            max_pair_distance: 1.0,
            lipschitz_differentials: 50,
            injectivity_samples: 10_000,
            surjectivity_targets: 1000,
            audit_radius: 2.0,
            lemma_trials: 1000,
            lemma_eps: 0.1,
            lemma_delta: 0.01,
            trace_points: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Net,
    Correspondence,
    Charts,
    Partition,
    Glue,
    Measure,
    VerifyLemmas,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Net,
        Stage::Correspondence,
        Stage::Charts,
        Stage::Partition,
        Stage::Glue,
        Stage::Measure,
        Stage::VerifyLemmas,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Net => "net",
            Stage::Correspondence => "correspondence",
            Stage::Charts => "charts",
            Stage::Partition => "partition",
            Stage::Glue => "glue",
            Stage::Measure => "measure",
            Stage::VerifyLemmas => "verify_lemmas",
        }
    }

    pub fn parse(name: &str) -> Result<Stage> {
        let key = name.replace('-', "_");
        Stage::ALL
            .into_iter()
            .find(|s| s.name() == key)
            .ok_or_else(|| GeomError::Unknown {
                kind: "stage",
                name: name.to_string(),
            })
    }

    /// Stages whose outputs this one consumes.
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Net | Stage::VerifyLemmas => &[],
            Stage::Correspondence | Stage::Partition => &[Stage::Net],
            Stage::Charts | Stage::Glue | Stage::Measure => &[Stage::Net, Stage::Correspondence],
        }
    }
}

fn all_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

/// Parameters multiplied by `delta` at each point of a sweep, keyed by
/// `v.<param>`, `w.<param>` or `correspondence.<param>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub tied: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub v: ManifoldSpec,
    pub w: ManifoldSpec,
    pub correspondence: CorrespondenceSpec,
    pub delta: f64,
    #[serde(default)]
    pub backend: Backend,
    pub seeds: Seeds,
    #[serde(default)]
    pub samples: SampleCounts,
    #[serde(default)]
    pub net: NetOptions,
    #[serde(default)]
    pub karcher: KarcherSettings,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "all_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| GeomError::InvalidParameter(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn epsilon(&self) -> f64 {
        self.delta.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 0.25) {
            return Err(GeomError::InvalidParameter(format!(
                "delta = {} outside (0, 0.25]",
                self.delta
            )));
        }
        for spec in [&self.v, &self.w] {
            if !(spec.scale > 0.0 && spec.scale.is_finite()) {
                return Err(GeomError::InvalidParameter(format!(
                    "scale {} of {}",
                    spec.scale, spec.model
                )));
            }
        }
        if let Some(s) = &self.sweep {
            if s.deltas.is_empty() || s.deltas.iter().any(|d| !(*d > 0.0 && *d <= 0.25)) {
                return Err(GeomError::InvalidParameter(format!("sweep deltas {:?}", s.deltas)));
            }
            for key in s.tied.keys() {
                if !matches!(key.split_once('.'), Some(("v" | "w" | "correspondence", _))) {
                    return Err(GeomError::InvalidParameter(format!("tied parameter `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the semantic content: everything except the output
    /// directory and the stage selection.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serialises");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output");
            obj.remove("stages");
        }
        let bytes = serde_json::to_vec(&value).expect("value serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    /// The configuration at one sweep point.
    pub fn at_delta(&self, delta: f64) -> ExperimentConfig {
        let mut c = self.clone();
        c.delta = delta;
        c.sweep = None;
        if let Some(s) = &self.sweep {
            for (key, factor) in &s.tied {
                let (target, param) = key.split_once('.').expect("validated key");
                let map = match target {
                    "v" => &mut c.v.params,
                    "w" => &mut c.w.params,
                    _ => &mut c.correspondence.params,
                };
                map.insert(param.to_string(), factor * delta);
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "name": "identity",
        "v": {"model": "flat_torus", "params": {"side": 8}},
        "w": {"model": "flat_torus", "params": {"side": 8}},
        "correspondence": {"map": "identity"},
        "delta": 0.25,
        "seeds": {"net": 1, "sampling": 2, "trials": 3}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_json(SAMPLE).unwrap();
        assert_eq!(c.epsilon(), 0.5);
        assert_eq!(c.stages.len(), 7);
        assert_eq!(c.samples.injectivity_samples, 10_000);
        assert_eq!(c.v.scale, 1.0);
    }

    #[test]
    fn hash_tracks_semantic_fields_only() {
        let c = ExperimentConfig::from_json(SAMPLE).unwrap();
        let mut d = c.clone();
        d.output = Some("elsewhere".into());
        d.stages = vec![Stage::Net];
        assert_eq!(c.hash(), d.hash());
        d.seeds.net = 9;
        assert_ne!(c.hash(), d.hash());
        let mut e = c.clone();
        e.w.params.insert("side".into(), 8.5);
        assert_ne!(c.hash(), e.hash());
    }

    #[test]
    fn rejects_bad_delta_and_unknown_fields() {
        assert!(ExperimentConfig::from_json(&SAMPLE.replace("0.25", "0.3")).is_err());
        assert!(ExperimentConfig::from_json(&SAMPLE.replace("\"delta\"", "\"colour\": 1, \"delta\"")).is_err());
    }

    #[test]
    fn sweep_ties_parameters_to_delta() {
        let mut c = ExperimentConfig::from_json(SAMPLE).unwrap();
        c.sweep = Some(SweepSpec {
            deltas: vec![0.25, 0.09],
            tied: [("w.eta".to_string(), 0.1)].into_iter().collect(),
        });
        c.validate().unwrap();
        let p = c.at_delta(0.09);
        assert_eq!(p.delta, 0.09);
        assert!((p.w.params["eta"] - 0.009).abs() < 1e-15);
        assert!(p.sweep.is_none());
    }

    #[test]
    fn stage_names_roundtrip() {
        for s in Stage::ALL {
            assert_eq!(Stage::parse(s.name()).unwrap(), s);
        }
        assert_eq!(Stage::parse("verify-lemmas").unwrap(), Stage::VerifyLemmas);
        assert!(Stage::parse("plot").is_err());
    }
}
