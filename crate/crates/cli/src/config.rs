use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use veritas_core::backends::{BackendFamily, BackendNames, RegistryOptions, MODEL_DIR_ENV};
use veritas_core::ensemble::SearchOptions;
use veritas_core::explainer::{DescriptorLibrary, PipelineConfig};
use veritas_core::robustness::{AttackConfig, AttackPlan};

/// Everything a run can be configured with. Loaded from `--config` (JSON);
/// command-line flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backends: BackendFamily,
    /// Per-kind overrides of the family's default backend names.
    pub backend_names: Option<BackendNames>,
    /// Adapter root; falls back to `$VERITAS_MODEL_DIR`.
    pub model_dir: Option<PathBuf>,
    pub sr_fallback: bool,
    pub timeout_secs: u64,
    /// Descriptor library file; the built-in library when absent.
    pub descriptor_library: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub attack: AttackConfig<f64>,
    pub attack_method: String,
    pub epsilons: Vec<f64>,
    pub workers: usize,
    pub ensemble: SearchOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backends: BackendFamily::Mock,
            backend_names: None,
            model_dir: None,
            sr_fallback: true,
            timeout_secs: 120,
            descriptor_library: None,
            pipeline: PipelineConfig::default(),
            attack: AttackConfig::default(),
            attack_method: "fgsm".into(),
            epsilons: vec![0.0, 0.01, 0.03, 0.1],
            workers: 1,
            ensemble: SearchOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        self.pipeline.validate().map_err(|e| e.to_string())?;
        self.attack.validate().map_err(|e| e.to_string())?;
        self.attack_plan()?;
        if self.workers == 0 {
            return Err("workers must be >= 1".into());
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err("epsilons must be a non-empty list of finite values >= 0".into());
        }
        if self.ensemble.trials == 0 {
            return Err("ensemble.trials must be >= 1".into());
        }
        Ok(())
    }

    pub fn attack_plan(&self) -> Result<AttackPlan, String> {
        self.attack_method
            .parse()
            .map_err(|e: veritas_core::robustness::RobustnessError| e.to_string())
    }

    pub fn names(&self) -> BackendNames {
        self.backend_names
            .clone()
            .unwrap_or_else(|| BackendNames::for_family(self.backends))
    }

    pub fn registry_options(&self) -> RegistryOptions {
        RegistryOptions {
            model_dir: self
                .model_dir
                .clone()
                .or_else(|| std::env::var_os(MODEL_DIR_ENV).map(PathBuf::from)),
            seed: self.pipeline.seed,
            sr_fallback: self.sr_fallback,
            timeout: Duration::from_secs(self.timeout_secs),
            input_shape: (32, 32, 3),
        }
    }

    pub fn library(&self) -> Result<DescriptorLibrary, String> {
        match &self.descriptor_library {
            Some(path) => DescriptorLibrary::load(path).map_err(|e| e.to_string()),
            None => Ok(DescriptorLibrary::builtin()),
        }
    }
}
