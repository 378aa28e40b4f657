use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::mock::{ConstantClassifier, KeywordEmbedder, MockLinearClassifier, TemplateVlm};
use super::process::ProcessBackend;
use super::{
    BackendDescriptor, BackendError, BackendKind, BicubicUpscaler, Classifier, ClassifierOutput,
    Embedder, Embedding, SuperResolver, VisionLanguageModel,
};
use crate::image::ImageTensor;
use crate::scalar::Scalar;

/// Environment variable naming the directory that holds real-model adapters.
pub const MODEL_DIR_ENV: &str = "VERITAS_MODEL_DIR";

/// Name that selects an out-of-process adapter from the model directory.
pub const ADAPTER: &str = "adapter";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendFamily {
    Mock,
    Real,
}

impl std::str::FromStr for BackendFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "real" => Ok(Self::Real),
            other => Err(format!(
                "unknown backend family {other:?} (expected mock or real)"
            )),
        }
    }
}

/// Backend name per kind, as written in the run configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendNames {
    pub classifier: String,
    pub embedder: String,
    pub super_resolver: String,
    pub vlm: String,
}

impl BackendNames {
    pub fn for_family(family: BackendFamily) -> Self {
        match family {
            BackendFamily::Mock => Self {
                classifier: "mock-linear".into(),
                embedder: "mock-keyword".into(),
                super_resolver: BicubicUpscaler::NAME.into(),
                vlm: "mock-template".into(),
            },
            BackendFamily::Real => Self {
                classifier: ADAPTER.into(),
                embedder: ADAPTER.into(),
                super_resolver: ADAPTER.into(),
                vlm: ADAPTER.into(),
            },
        }
    }
}

impl Default for BackendNames {
    fn default() -> Self {
        Self::for_family(BackendFamily::Mock)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryOptions {
    /// Root holding `<kind>/adapter` executables; defaults to `$VERITAS_MODEL_DIR`.
    pub model_dir: Option<PathBuf>,
    pub seed: u64,
    /// Substitute the bicubic upscaler when no super-resolution adapter loads.
    pub sr_fallback: bool,
    pub timeout: Duration,
    pub input_shape: (usize, usize, usize),
}

impl Default for RegistryOptions {
    fn default() -> Self {
        Self {
            model_dir: std::env::var_os(MODEL_DIR_ENV).map(PathBuf::from),
            seed: 0,
            sr_fallback: true,
            timeout: Duration::from_secs(120),
            input_shape: (32, 32, 3),
        }
    }
}

/// One handle per model-dependent stage. Handles are single-consumer: give
/// every worker its own set.
pub struct BackendSet<T: Scalar> {
    pub classifier: Box<dyn Classifier<T>>,
    pub embedder: Box<dyn Embedder<T>>,
    pub super_resolver: Box<dyn SuperResolver<T>>,
    pub vlm: Box<dyn VisionLanguageModel<T>>,
}

impl<T: Scalar> BackendSet<T> {
    /// All-mock set with the default 32x32 RGB classifier.
    pub fn mock() -> Self {
        build_backends(
            &BackendNames::default(),
            &RegistryOptions {
                model_dir: None,
                ..RegistryOptions::default()
            },
        )
        .expect("mock names are registered")
    }

    /// Names the backends actually in use (fallbacks included).
    pub fn names(&self) -> BackendNames {
        BackendNames {
            classifier: self.classifier.descriptor().name,
            embedder: self.embedder.descriptor().name,
            super_resolver: self.super_resolver.descriptor().name,
            vlm: self.vlm.descriptor().name,
        }
    }
}

/// Placeholder for a backend that could not be loaded. Every call fails with
/// `BackendUnavailable`, so the failure surfaces at the stage that needs it.
#[derive(Debug, Clone, PartialEq)]
pub struct UnavailableBackend {
    pub kind: BackendKind,
    pub reason: String,
    pub input_shape: (usize, usize, usize),
}

impl UnavailableBackend {
    pub fn new(kind: BackendKind, reason: impl Into<String>) -> Self {
        Self {
            kind,
            reason: reason.into(),
            input_shape: (32, 32, 3),
        }
    }

    fn err(&self) -> BackendError {
        BackendError::BackendUnavailable {
            kind: self.kind,
            reason: self.reason.clone(),
        }
    }

    fn descriptor_of(&self) -> BackendDescriptor {
        BackendDescriptor::new(self.kind, "unavailable", true)
    }
}

impl<T: Scalar> Classifier<T> for UnavailableBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor_of()
    }
    fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }
    fn classify(&self, _img: &ImageTensor<T>) -> Result<ClassifierOutput<T>, BackendError> {
        Err(self.err())
    }
}

impl<T: Scalar> Embedder<T> for UnavailableBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor_of()
    }
    fn dim(&self) -> usize {
        0
    }
    fn embed_image(&self, _img: &ImageTensor<T>) -> Result<Embedding<T>, BackendError> {
        Err(self.err())
    }
    fn embed_text(&self, _text: &str) -> Result<Embedding<T>, BackendError> {
        Err(self.err())
    }
}

impl<T: Scalar> SuperResolver<T> for UnavailableBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor_of()
    }
    fn super_resolve(
        &self,
        _img: &ImageTensor<T>,
        _factor: usize,
    ) -> Result<ImageTensor<T>, BackendError> {
        Err(self.err())
    }
}

impl<T: Scalar> VisionLanguageModel<T> for UnavailableBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor_of()
    }
    fn generate(&mut self, _prompt: &str, _img: &ImageTensor<T>) -> Result<String, BackendError> {
        Err(self.err())
    }
}

fn adapter_path(
    kind: BackendKind,
    name: &str,
    options: &RegistryOptions,
) -> Result<PathBuf, String> {
    if let Some(explicit) = name.strip_prefix("adapter:") {
        return Ok(PathBuf::from(explicit));
    }
    let dir = options
        .model_dir
        .as_deref()
        .ok_or_else(|| format!("no model directory configured (set {MODEL_DIR_ENV})"))?;
    Ok(dir.join(kind.to_string()).join(ADAPTER))
}

fn spawn_adapter(
    kind: BackendKind,
    name: &str,
    options: &RegistryOptions,
) -> Result<ProcessBackend, String> {
    let path = adapter_path(kind, name, options)?;
    if !Path::new(&path).exists() {
        return Err(format!("no adapter at {}", path.display()));
    }
    ProcessBackend::spawn(kind, &path, options.timeout).map_err(|e| e.to_string())
}

fn is_adapter(name: &str) -> bool {
    name == ADAPTER || name.starts_with("adapter:")
}

fn unknown(kind: BackendKind, name: &str) -> BackendError {
    BackendError::BackendUnavailable {
        kind,
        reason: format!("unknown backend name {name:?}"),
    }
}

/// Resolves backend names into live handles.
///
/// Unknown names are an error. Adapters that fail to load become
/// [`UnavailableBackend`] placeholders, except that a missing super-resolver
/// falls back to bicubic interpolation when `sr_fallback` is set. Mocks are
/// never substituted for a missing adapter.
pub fn build_backends<T: Scalar>(
    names: &BackendNames,
    options: &RegistryOptions,
) -> Result<BackendSet<T>, BackendError> {
    let (h, w, c) = options.input_shape;
    let none = |kind| UnavailableBackend {
        kind,
        reason: "disabled in configuration".into(),
        input_shape: options.input_shape,
    };
    let missing = |kind, reason: String| UnavailableBackend {
        kind,
        reason,
        input_shape: options.input_shape,
    };

    let classifier: Box<dyn Classifier<T>> = match names.classifier.as_str() {
        "mock-linear" if c == 3 => Box::new(MockLinearClassifier::red_minus_blue(
            h,
            w,
            T::of(8.0),
            T::zero(),
        )),
        "mock-linear-random" => Box::new(MockLinearClassifier::seeded(
            options.input_shape,
            options.seed,
            2.0 / ((h * w * c) as f64).sqrt(),
            T::zero(),
        )),
        "mock-constant" => Box::new(ConstantClassifier {
            shape: options.input_shape,
            logits: [T::zero(), T::one()],
        }),
        "none" => Box::new(none(BackendKind::Classifier)),
        n if is_adapter(n) => match spawn_adapter(BackendKind::Classifier, n, options) {
            Ok(p) => Box::new(p),
            Err(reason) => Box::new(missing(BackendKind::Classifier, reason)),
        },
        n => return Err(unknown(BackendKind::Classifier, n)),
    };

    let embedder: Box<dyn Embedder<T>> = match names.embedder.as_str() {
        "mock-keyword" => Box::new(KeywordEmbedder::with_default_vocabulary()),
        "none" => Box::new(none(BackendKind::Embedder)),
        n if is_adapter(n) => match spawn_adapter(BackendKind::Embedder, n, options) {
            Ok(p) => Box::new(p),
            Err(reason) => Box::new(missing(BackendKind::Embedder, reason)),
        },
        n => return Err(unknown(BackendKind::Embedder, n)),
    };

    let super_resolver: Box<dyn SuperResolver<T>> = match names.super_resolver.as_str() {
        BicubicUpscaler::NAME | "bicubic" => Box::new(BicubicUpscaler),
        "none" => Box::new(none(BackendKind::SuperResolver)),
        n if is_adapter(n) => match spawn_adapter(BackendKind::SuperResolver, n, options) {
            Ok(p) => Box::new(p),
            Err(_) if options.sr_fallback => Box::new(BicubicUpscaler),
            Err(reason) => Box::new(missing(BackendKind::SuperResolver, reason)),
        },
        n => return Err(unknown(BackendKind::SuperResolver, n)),
    };

    let vlm: Box<dyn VisionLanguageModel<T>> = match names.vlm.as_str() {
        "mock-template" => Box::new(TemplateVlm),
        "none" => Box::new(none(BackendKind::Vlm)),
        n if is_adapter(n) => match spawn_adapter(BackendKind::Vlm, n, options) {
            Ok(p) => Box::new(p),
            Err(reason) => Box::new(missing(BackendKind::Vlm, reason)),
        },
        n => return Err(unknown(BackendKind::Vlm, n)),
    };

    Ok(BackendSet {
        classifier,
        embedder,
        super_resolver,
        vlm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_models() -> RegistryOptions {
        RegistryOptions {
            model_dir: None,
            ..RegistryOptions::default()
        }
    }

    #[test]
    fn mock_set_is_deterministic_and_named() {
        let set = BackendSet::<f64>::mock();
        assert_eq!(set.names(), BackendNames::default());
        assert!(set.classifier.descriptor().deterministic);
        assert!(set.embedder.descriptor().deterministic);
    }

    #[test]
    fn missing_adapters_degrade_explicitly() {
        let names = BackendNames::for_family(BackendFamily::Real);
        let set = build_backends::<f64>(&names, &no_models()).unwrap();
        let img = ImageTensor::filled(32, 32, 3, 0.5).unwrap();
        assert!(matches!(
            set.classifier.classify(&img),
            Err(BackendError::BackendUnavailable {
                kind: BackendKind::Classifier,
                ..
            })
        ));
        // Super-resolution falls back to the labelled bicubic upscaler.
        assert_eq!(set.super_resolver.descriptor().name, BicubicUpscaler::NAME);

        let strict = RegistryOptions {
            sr_fallback: false,
            ..no_models()
        };
        let set = build_backends::<f64>(&names, &strict).unwrap();
        assert!(matches!(
            set.super_resolver.super_resolve(&img, 4),
            Err(BackendError::BackendUnavailable {
                kind: BackendKind::SuperResolver,
                ..
            })
        ));
    }

    #[test]
    fn unknown_name_is_rejected() {
        let names = BackendNames {
            embedder: "clip-from-nowhere".into(),
            ..BackendNames::default()
        };
        assert!(build_backends::<f64>(&names, &no_models()).is_err());
    }
}
