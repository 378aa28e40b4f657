use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::descriptors::DescriptorLibrary;
use super::pipeline::{analyze, PipelineConfig, PipelineError, Stage};
use crate::backends::{BackendError, BackendSet};
use crate::image::{ImageTensor, Label};
use crate::saliency::save_overlay_png;
use crate::scalar::Scalar;

/// Name of the summary index written next to the reports.
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    pub image_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
    pub overlays: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub image_id: String,
    pub report: String,
    pub verdict: Label,
    pub fake_probability: f64,
    pub artifact_bearing: bool,
    pub retained: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub image_id: String,
    pub stage: String,
    pub error: String,
}

/// Contents of the index file; both lists are sorted by `image_id`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchSummary {
    pub reports: Vec<IndexEntry>,
    pub failures: Vec<BatchFailure>,
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("invalid configuration: {0}")]
    Config(#[from] PipelineError),
    #[error("worker count must be >= 1")]
    NoWorkers,
    #[error("duplicate image id `{0}`")]
    DuplicateId(String),
    #[error("cannot build backends for worker {worker}: {source}")]
    Backends {
        worker: usize,
        #[source]
        source: BackendError,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Writes `bytes` to a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

type ItemOutcome = Result<IndexEntry, BatchFailure>;

fn process<T: Scalar>(
    item: &BatchItem,
    backends: &mut BackendSet<T>,
    library: &DescriptorLibrary,
    config: &PipelineConfig,
    options: &BatchOptions,
) -> ItemOutcome {
    let failure = |stage: &str, error: String| BatchFailure {
        image_id: item.image_id.clone(),
        stage: stage.to_string(),
        error,
    };
    let img = ImageTensor::<T>::load(&item.path)
        .map_err(|e| failure(Stage::Load.as_str(), e.to_string()))?;
    let analysis = analyze(&item.image_id, &img, backends, library, config).map_err(|e| {
        let stage = e.stage().map_or("config", Stage::as_str);
        failure(stage, e.to_string())
    })?;
    let report = analysis.report;
    let file = format!("{}.report.json", item.image_id);
    let path = options.out_dir.join(&file);
    write_atomic(&path, report.to_json().as_bytes())
        .map_err(|e| failure(Stage::Write.as_str(), e.to_string()))?;
    if options.overlays {
        if let Some(heatmap) = &analysis.heatmap {
            let png = options
                .out_dir
                .join(format!("{}.overlay.png", item.image_id));
            save_overlay_png(&img, heatmap, &png)
                .map_err(|e| failure(Stage::Write.as_str(), e.to_string()))?;
        }
    }
    Ok(IndexEntry {
        image_id: report.image_id.clone(),
        report: file,
        verdict: report.verdict,
        fake_probability: report.fake_probability.as_f64(),
        artifact_bearing: report.artifact_bearing,
        retained: report.retained().map(|s| s.artifact_name.clone()).collect(),
    })
}

/// Analyses `items` with `options.workers` threads, each owning the backend
/// set `factory(worker_index)` returns. Items are dealt round-robin; per-item
/// failures are collected, not fatal. The summary index is written last.
pub fn run_batch<T, F>(
    items: &[BatchItem],
    library: &DescriptorLibrary,
    config: &PipelineConfig,
    options: &BatchOptions,
    factory: F,
) -> Result<BatchSummary, BatchError>
where
    T: Scalar,
    F: Fn(usize) -> Result<BackendSet<T>, BackendError> + Sync,
{
    config.validate()?;
    if options.workers == 0 {
        return Err(BatchError::NoWorkers);
    }
    let mut ids: Vec<&str> = items.iter().map(|i| i.image_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(BatchError::DuplicateId(w[0].to_string()));
    }
    std::fs::create_dir_all(&options.out_dir).map_err(|source| BatchError::Io {
        path: options.out_dir.clone(),
        source,
    })?;

    let workers = options.workers.min(items.len()).max(1);
    let results: Vec<Result<Vec<ItemOutcome>, BatchError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let factory = &factory;
                scope.spawn(move || {
                    let mut backends =
                        factory(w).map_err(|source| BatchError::Backends { worker: w, source })?;
                    Ok(items
                        .iter()
                        .skip(w)
                        .step_by(workers)
                        .map(|item| process(item, &mut backends, library, config, options))
                        .collect())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("batch worker panicked"))
            .collect()
    });

    let mut summary = BatchSummary::default();
    for outcome in results {
        for item in outcome? {
            match item {
                Ok(entry) => summary.reports.push(entry),
                Err(failure) => summary.failures.push(failure),
            }
        }
    }
    summary.reports.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    summary.failures.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let index = options.out_dir.join(INDEX_FILE);
    let mut text = serde_json::to_string_pretty(&summary).expect("index serializes");
    text.push('\n');
    write_atomic(&index, text.as_bytes()).map_err(|source| BatchError::Io {
        path: index,
        source,
    })?;
    Ok(summary)
}
