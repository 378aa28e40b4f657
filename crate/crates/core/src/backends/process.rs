//! Out-of-process model adapters.
//!
//! A real model (DRCT, a CLIP-style encoder, a MOLMO-class VLM, a CNN
//! classifier) is wrapped by an executable that speaks JSON lines on
//! stdin/stdout. Each request is one line:
//!
//! ```text
//! {"method": "classify", "params": {"image": {"height": 32, "width": 32, "channels": 3, "data": [...]}}}
//! ```
//!
//! and each response is one line, either `{"ok": <result>}` or
//! `{"error": "<message>"}`. Methods and results:
//!
//! | method           | params                       | result                                        |
//! |------------------|------------------------------|-----------------------------------------------|
//! | `describe`       | `{}`                         | `{"name", "deterministic", "input_shape"?, "dim"?}` |
//! | `classify`       | `{image}`                    | `{"logits": [real, fake]}`                    |
//! | `input_gradient` | `{image, label}`             | `{"gradient": [...]}` (image layout)          |
//! | `saliency`       | `{image, target}`            | `{"activations": maps, "gradients": maps}`    |
//! | `embed_image`    | `{image}`                    | `{"embedding": [...]}`                        |
//! | `embed_text`     | `{text}`                     | `{"embedding": [...]}`                        |
//! | `super_resolve`  | `{image, factor}`            | `{"image": image}`                            |
//! | `generate`       | `{prompt, image}`            | `{"text": "..."}`                             |
//!
//! `maps` is `{"count", "height", "width", "data"}` with maps stored one after
//! another. Labels are `"real"` / `"fake"`.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    BackendDescriptor, BackendError, BackendKind, Classifier, ClassifierOutput, Embedder,
    Embedding, SaliencyTensors, SuperResolver, VisionLanguageModel,
};
use crate::image::{FeatureMaps, ImageTensor, InputGradient, Label};
use crate::scalar::Scalar;

struct Channel {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    broken: Option<String>,
}

/// Handle to a running adapter process. Calls are serialized through a mutex.
pub struct ProcessBackend {
    kind: BackendKind,
    program: PathBuf,
    name: String,
    deterministic: bool,
    input_shape: Option<(usize, usize, usize)>,
    dim: Option<usize>,
    timeout: Duration,
    channel: Mutex<Channel>,
}

#[derive(Deserialize)]
struct Describe {
    name: String,
    #[serde(default)]
    deterministic: bool,
    input_shape: Option<(usize, usize, usize)>,
    dim: Option<usize>,
}

impl ProcessBackend {
    pub fn spawn(
        kind: BackendKind,
        program: &Path,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let unavailable = |reason: String| BackendError::BackendUnavailable { kind, reason };
        let mut child = Command::new(program)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| unavailable(format!("cannot start {}: {e}", program.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut backend = Self {
            kind,
            program: program.to_path_buf(),
            name: program.display().to_string(),
            deterministic: false,
            input_shape: None,
            dim: None,
            timeout,
            channel: Mutex::new(Channel {
                child,
                stdin,
                lines: rx,
                broken: None,
            }),
        };
        let info: Describe = serde_json::from_value(backend.call("describe", json!({}))?)
            .map_err(|e| BackendError::Protocol(format!("describe: {e}")))?;
        backend.name = info.name;
        backend.deterministic = info.deterministic;
        backend.input_shape = info.input_shape;
        backend.dim = info.dim;
        Ok(backend)
    }

    pub fn program(&self) -> &Path {
        &self.program
    }

    fn call(&self, method: &str, params: Value) -> Result<Value, BackendError> {
        let mut ch = self.channel.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(reason) = &ch.broken {
            return Err(BackendError::BackendUnavailable {
                kind: self.kind,
                reason: reason.clone(),
            });
        }
        let request = json!({ "method": method, "params": params }).to_string();
        let sent = writeln!(ch.stdin, "{request}").and_then(|_| ch.stdin.flush());
        if let Err(e) = sent {
            let reason = format!("adapter pipe closed: {e}");
            ch.broken = Some(reason.clone());
            return Err(BackendError::BackendUnavailable {
                kind: self.kind,
                reason,
            });
        }
        let line = match ch.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => {
                ch.broken = Some(format!("adapter read failed: {e}"));
                return Err(BackendError::Protocol(e.to_string()));
            }
            Err(RecvTimeoutError::Timeout) => {
                // The reply may still arrive later and desynchronize the stream.
                ch.broken = Some(format!("adapter timed out during {method}"));
                let _ = ch.child.kill();
                let ms = self.timeout.as_millis() as u64;
                return Err(if method == "generate" {
                    BackendError::GenerationTimeout(ms)
                } else {
                    BackendError::BackendUnavailable {
                        kind: self.kind,
                        reason: format!("{method} timed out after {ms} ms"),
                    }
                });
            }
            Err(RecvTimeoutError::Disconnected) => {
                let reason = "adapter exited".to_string();
                ch.broken = Some(reason.clone());
                return Err(BackendError::BackendUnavailable {
                    kind: self.kind,
                    reason,
                });
            }
        };
        let mut reply: Value = serde_json::from_str(&line)
            .map_err(|e| BackendError::Protocol(format!("{method}: {e}")))?;
        if let Some(msg) = reply.get("error") {
            return Err(BackendError::Protocol(format!("{method}: {msg}")));
        }
        reply.get_mut("ok").map(Value::take).ok_or_else(|| {
            BackendError::Protocol(format!("{method}: reply has neither ok nor error"))
        })
    }

    fn field<R: for<'de> Deserialize<'de>>(
        &self,
        method: &str,
        v: &mut Value,
        key: &str,
    ) -> Result<R, BackendError> {
        let inner = v.get_mut(key).map(Value::take).unwrap_or(Value::Null);
        serde_json::from_value(inner)
            .map_err(|e| BackendError::Protocol(format!("{method}.{key}: {e}")))
    }

    fn descriptor_of(&self) -> BackendDescriptor {
        BackendDescriptor::new(self.kind, self.name.clone(), self.deterministic)
    }

    fn image_value<T: Scalar>(img: &ImageTensor<T>) -> Value {
        serde_json::to_value(img).expect("images serialize")
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        let ch = self.channel.get_mut().unwrap_or_else(|p| p.into_inner());
        let _ = ch.child.kill();
        let _ = ch.child.wait();
    }
}

impl<T: Scalar> Classifier<T> for ProcessBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor_of()
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape.unwrap_or((32, 32, 3))
    }

    fn classify(&self, img: &ImageTensor<T>) -> Result<ClassifierOutput<T>, BackendError> {
        let mut v = self.call("classify", json!({ "image": Self::image_value(img) }))?;
        let logits: [T; 2] = self.field("classify", &mut v, "logits")?;
        Ok(ClassifierOutput::from_logits(logits))
    }

    fn input_gradient(
        &self,
        img: &ImageTensor<T>,
        label: Label,
    ) -> Result<InputGradient<T>, BackendError> {
        let mut v = self.call(
            "input_gradient",
            json!({ "image": Self::image_value(img), "label": label }),
        )?;
        let data: Vec<T> = self.field("input_gradient", &mut v, "gradient")?;
        let (height, width, channels) = img.shape();
        Ok(InputGradient {
            height,
            width,
            channels,
            data,
        })
    }

    fn saliency_tensors(
        &self,
        img: &ImageTensor<T>,
        target: Label,
    ) -> Result<SaliencyTensors<T>, BackendError> {
        let mut v = self.call(
            "saliency",
            json!({ "image": Self::image_value(img), "target": target }),
        )?;
        let a: FeatureMaps<T> = self.field("saliency", &mut v, "activations")?;
        let g: FeatureMaps<T> = self.field("saliency", &mut v, "gradients")?;
        Ok(SaliencyTensors {
            activations: FeatureMaps::new(a.count, a.height, a.width, a.data)?,
            gradients: FeatureMaps::new(g.count, g.height, g.width, g.data)?,
        })
    }
}

impl<T: Scalar> Embedder<T> for ProcessBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor_of()
    }

    fn dim(&self) -> usize {
        self.dim.unwrap_or(0)
    }

    fn embed_image(&self, img: &ImageTensor<T>) -> Result<Embedding<T>, BackendError> {
        let mut v = self.call("embed_image", json!({ "image": Self::image_value(img) }))?;
        Embedding::normalized(self.field("embed_image", &mut v, "embedding")?)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding<T>, BackendError> {
        let mut v = self.call("embed_text", json!({ "text": text }))?;
        Embedding::normalized(self.field("embed_text", &mut v, "embedding")?)
    }
}

impl<T: Scalar> SuperResolver<T> for ProcessBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor_of()
    }

    fn super_resolve(
        &self,
        img: &ImageTensor<T>,
        factor: usize,
    ) -> Result<ImageTensor<T>, BackendError> {
        let mut v = self.call(
            "super_resolve",
            json!({ "image": Self::image_value(img), "factor": factor }),
        )?;
        let out: ImageTensor<T> = self.field("super_resolve", &mut v, "image")?;
        Ok(out)
    }
}

impl<T: Scalar> VisionLanguageModel<T> for ProcessBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor_of()
    }

    fn generate(&mut self, prompt: &str, img: &ImageTensor<T>) -> Result<String, BackendError> {
        let mut v = self.call(
            "generate",
            json!({ "prompt": prompt, "image": Self::image_value(img) }),
        )?;
        self.field("generate", &mut v, "text")
    }
}
