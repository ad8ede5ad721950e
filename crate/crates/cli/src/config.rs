use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use opcrecipe::geometry::SynthParams;
use opcrecipe::litho::LithoConfig;
use opcrecipe::metrics::{EpeTerm, LossWeights, MetricsConfig};
use opcrecipe::opc::OpcConfig;
use opcrecipe::recipes::TreeParams;
use opcrecipe::rl::{OpcEnvConfig, PpoConfig};
use opcrecipe_annotator::AnnotatorConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "opc")]
    Opc,
    #[serde(rename = "opc+rl")]
    OpcRl,
    #[serde(rename = "opc+llm")]
    OpcLlm,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Opc, Variant::OpcLlm, Variant::OpcRl];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Opc => "opc",
            Variant::OpcRl => "opc+rl",
            Variant::OpcLlm => "opc+llm",
        }
    }

    /// Column heading in reports.
    pub fn heading(self) -> &'static str {
        match self {
            Variant::Opc => "OPC",
            Variant::OpcRl => "OPC+RL",
            Variant::OpcLlm => "OPC+LLM",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "opc" => Ok(Variant::Opc),
            "opc+rl" => Ok(Variant::OpcRl),
            "opc+llm" => Ok(Variant::OpcLlm),
            _ => Err(format!("unknown variant `{s}` (opc, opc+rl, opc+llm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    /// Parent of timestamped run directories.
    pub runs_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub clips: usize,
    /// Intervals per direction (C).
    pub classes: usize,
    pub variant: Variant,
    pub workers: usize,
    /// Writes wall-clock timings into metrics; off keeps metrics byte-reproducible.
    pub record_runtime: bool,
    /// Share of clips held out from tree training.
    pub test_fraction: f64,
    pub improve_rounds: usize,
    /// Points rendered for feature mining in remote mode.
    pub mining_images: usize,
    pub synth: SynthParams,
    pub litho: LithoConfig,
    pub metrics: MetricsConfig,
    pub opc: OpcConfig,
    pub env: OpcEnvConfig,
    pub ppo: PpoConfig,
    pub tree: TreeParams,
    pub annotator: AnnotatorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: "data".into(),
            runs_dir: "runs".into(),
            cache_dir: ".cache/annotator".into(),
            clips: 20,
            classes: 4,
            variant: Variant::OpcLlm,
            workers: 1,
            record_runtime: false,
            test_fraction: 0.25,
            improve_rounds: 3,
            mining_images: 8,
            synth: SynthParams::default(),
            litho: LithoConfig::default(),
            metrics: MetricsConfig {
                weights: LossWeights { epe_term: EpeTerm::Distance, ..LossWeights::default() },
                ..MetricsConfig::default()
            },
            opc: OpcConfig::default(),
            // Rewards come from the same iteration count the suite is evaluated at.
            env: OpcEnvConfig { train_iters: OpcConfig::default().max_iters, ..OpcEnvConfig::default() },
            ppo: PpoConfig {
                gae_lambda: 0.0,
                learning_rate: 1e-3,
                init_noop_logit: 3.0,
                rollout_clips: 10,
                updates: 80,
                ..PpoConfig::default()
            },
            tree: TreeParams::default(),
            annotator: AnnotatorConfig::default(),
        }
    }
}

impl RunConfig {
    /// Every violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.clips == 0 {
            v.push("clips must be at least 1".into());
        }
        if self.classes == 0 || self.classes > 40 {
            v.push(format!("classes must lie in 1..=40, got {}", self.classes));
        }
        if self.ppo.classes != self.classes {
            v.push(format!("ppo.classes ({}) must equal classes ({})", self.ppo.classes, self.classes));
        }
        if self.workers == 0 {
            v.push("workers must be at least 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            v.push(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if self.improve_rounds == 0 {
            v.push("improve_rounds must be at least 1".into());
        }
        if let Err(e) = self.litho.validate() {
            v.push(format!("litho: {e}"));
        }
        if let Err(e) = self.metrics.validate() {
            v.push(format!("metrics: {e}"));
        }
        if let Err(e) = self.opc.validate() {
            v.push(format!("opc: {e}"));
        }
        if let Err(e) = self.env.validate() {
            v.push(format!("env: {e}"));
        }
        if let Err(e) = self.ppo.validate() {
            v.push(format!("ppo: {e}"));
        }
        if self.tree.max_depth == 0 || self.tree.min_samples_leaf == 0 || self.tree.min_samples_split < 2 {
            v.push("tree: max_depth and min_samples_leaf must be >= 1, min_samples_split >= 2".into());
        }
        let key = std::env::var(&self.annotator.credential_env).ok();
        v.extend(self.annotator.violations(key.as_deref()).into_iter().map(|m| format!("annotator: {m}")));
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        assert_eq!(RunConfig::default().violations(), Vec::<String>::new());
    }

    #[test]
    fn all_violations_are_listed() {
        let cfg = RunConfig { clips: 0, workers: 0, test_fraction: 1.5, ..RunConfig::default() };
        assert_eq!(cfg.violations().len(), 3);
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 5, "variant": "opc+rl"}"#).unwrap();
        assert_eq!((partial.seed, partial.variant), (5, Variant::OpcRl));
    }
}
