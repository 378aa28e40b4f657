use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use veritas_core::backends::mock::{ConstantClassifier, KeywordEmbedder, ScriptedVlm, TemplateVlm};
use veritas_core::backends::{
    build_backends, BackendDescriptor, BackendError, BackendNames, BackendSet, RegistryOptions,
    VisionLanguageModel,
};
use veritas_core::explainer::{
    analyze, build_prompt, explain_retained, parse_report, parse_vlm_response,
    score_image_artifacts, validate_report, AttemptStatus, Category, DescriptorLibrary,
    ExplainerError, InapplicableReason, PipelineConfig, Stage, EXAMPLE_OBJECT, GUIDELINES,
    SCHEMA_LINE,
};
use veritas_core::forensic::{build_patch_grid, ArtifactScore, VoteCounts};
use veritas_core::{Heatmap, ImageTensor, Label};

const DIM: usize = KeywordEmbedder::DEFAULT_DIM;

/// Grey level at the centre of the embedder bucket for `axis`.
fn level(axis: usize) -> f64 {
    (axis as f64 + 0.5) / DIM as f64
}

/// 32x32 image of 8x8 blocks; block `(i, j)` sits in embedder bucket
/// `axes(i, j)` and leans red by `tilt(i, j)` (blue by the same amount).
fn blocks(
    axes: impl Fn(usize, usize) -> usize,
    tilt: impl Fn(usize, usize) -> f64,
) -> ImageTensor<f64> {
    ImageTensor::from_fn(32, 32, 3, |r, c, ch| {
        let (i, j) = (r / 8, c / 8);
        let m = level(axes(i, j));
        let d = tilt(i, j);
        match ch {
            0 => m + d,
            2 => m - d,
            _ => m,
        }
    })
    .unwrap()
}

fn uniform(axis: usize, tilt: f64) -> ImageTensor<f64> {
    blocks(|_, _| axis, |_, _| tilt)
}

/// Counts generate calls while delegating to the template mock.
struct CountingVlm(Arc<AtomicUsize>);

impl VisionLanguageModel<f64> for CountingVlm {
    fn descriptor(&self) -> BackendDescriptor {
        VisionLanguageModel::<f64>::descriptor(&TemplateVlm)
    }

    fn generate(&mut self, prompt: &str, img: &ImageTensor<f64>) -> Result<String, BackendError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        TemplateVlm.generate(prompt, img)
    }
}

fn counting_set() -> (BackendSet<f64>, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let mut set = BackendSet::mock();
    set.vlm = Box::new(CountingVlm(calls.clone()));
    (set, calls)
}

fn check_retained_attempt_equivalence(report: &veritas_core::explainer::AnalysisReport<f64>) {
    let retained: Vec<&str> = report
        .retained()
        .map(|s| s.artifact_name.as_str())
        .collect();
    let attempted: Vec<&str> = report
        .explanation_attempts
        .iter()
        .map(|a| a.artifact.as_str())
        .collect();
    assert_eq!(retained, attempted);
}

#[test]
fn real_verdict_skips_analysis_by_default() {
    let (mut set, calls) = counting_set();
    let lib = DescriptorLibrary::builtin();
    let out = analyze(
        "r",
        &uniform(1, -0.03),
        &mut set,
        &lib,
        &PipelineConfig::default(),
    )
    .unwrap();
    assert_eq!(out.report.verdict, Label::Real);
    assert!(out.report.skipped.is_some());
    assert!(out.report.artifact_scores.is_empty() && out.heatmap.is_none());
    assert_eq!(calls.load(Ordering::SeqCst), 0);
    validate_report(&out.report).unwrap();

    let cfg = PipelineConfig {
        explain_real: true,
        ..PipelineConfig::default()
    };
    let out = analyze("r", &uniform(1, -0.03), &mut set, &lib, &cfg).unwrap();
    assert!(out.report.skipped.is_none());
    assert_eq!(out.report.category, Some(Category::Generic));
}

#[test]
fn artifact_bearing_image_is_explained() {
    let (mut set, calls) = counting_set();
    let lib = DescriptorLibrary::builtin();
    let out = analyze(
        "f",
        &uniform(1, 0.03),
        &mut set,
        &lib,
        &PipelineConfig::default(),
    )
    .unwrap();
    let r = &out.report;
    assert_eq!(r.verdict, Label::Fake);
    assert!(r.artifact_bearing);
    // Every patch sits in the "unnatural" bucket; the gate ties, so the whole
    // library is active and every artifact scores 1.
    assert_eq!(r.category, Some(Category::Generic));
    assert_eq!(r.artifact_scores.len(), lib.len());
    assert!(r
        .artifact_scores
        .iter()
        .all(|s| s.score == 1.0 && s.retained));
    assert_eq!(r.explanations.len(), lib.len());
    assert!(r
        .explanation_attempts
        .iter()
        .all(|a| a.status == AttemptStatus::Explained && a.calls == 1));
    assert_eq!(calls.load(Ordering::SeqCst), lib.len());
    check_retained_attempt_equivalence(r);
    validate_report(r).unwrap();
    assert_eq!(r.pipeline_meta.descriptor_count, lib.len());
    assert_eq!(r.pipeline_meta.backends, BackendNames::default());
}

#[test]
fn zero_retained_means_zero_vlm_calls() {
    let (mut set, calls) = counting_set();
    let lib = DescriptorLibrary::builtin();
    let out = analyze(
        "n",
        &uniform(2, 0.03),
        &mut set,
        &lib,
        &PipelineConfig::default(),
    )
    .unwrap();
    assert_eq!(out.report.verdict, Label::Fake);
    assert!(!out.report.artifact_bearing);
    assert!(out.report.artifact_scores.iter().all(|s| s.score == 0.0));
    assert!(out.report.explanation_attempts.is_empty());
    assert_eq!(calls.load(Ordering::SeqCst), 0);
}

#[test]
fn neutral_and_zero_weight_artifacts_are_inapplicable() {
    let lib = DescriptorLibrary::builtin();
    let mut set = BackendSet::mock();
    let out = analyze(
        "z",
        &uniform(3, 0.03),
        &mut set,
        &lib,
        &PipelineConfig::default(),
    )
    .unwrap();
    assert!(out.report.artifact_scores.is_empty());
    assert_eq!(out.report.inapplicable.len(), lib.len());
    assert!(out
        .report
        .inapplicable
        .iter()
        .all(|i| i.reason == InapplicableReason::AllNeutral));

    // A flat-loss classifier has no saliency at all.
    set.classifier = Box::new(ConstantClassifier {
        shape: (32, 32, 3),
        logits: [0.0, 1.0],
    });
    let out = analyze(
        "z",
        &uniform(1, 0.03),
        &mut set,
        &lib,
        &PipelineConfig::default(),
    )
    .unwrap();
    assert!(out.report.artifact_scores.is_empty());
    assert!(out
        .report
        .inapplicable
        .iter()
        .all(|i| i.reason == InapplicableReason::ZeroWeight));
    validate_report(&out.report).unwrap();
}

#[test]
fn three_of_four_positive_patches_score_three_quarters() {
    let e = KeywordEmbedder::with_default_vocabulary();
    let img: ImageTensor<f64> = ImageTensor::from_fn(64, 64, 3, |r, c, _| {
        if r >= 32 && c >= 32 {
            level(2)
        } else {
            level(1)
        }
    })
    .unwrap();
    let heat = Heatmap::filled(64, 64, 0.4).unwrap();
    let grid = build_patch_grid((64, 64), 32).unwrap();
    let lib = DescriptorLibrary::builtin();
    let d = lib.get("ghosting_effects").unwrap();
    let out = score_image_artifacts(&img, &heat, &grid, &[d], &e, 0.5).unwrap();
    assert_eq!(out.scores.len(), 1);
    assert!((out.scores[0].score - 0.75).abs() <= 1e-12);
    assert_eq!(
        out.scores[0].counts,
        VoteCounts {
            positive: 3,
            negative: 1,
            neutral: 0
        }
    );
}

#[test]
fn heatmap_normalization_changes_nothing() {
    let lib = DescriptorLibrary::builtin();
    let img = blocks(
        |i, j| if (i + j) % 2 == 0 { 1 } else { 2 },
        |i, j| 0.005 + 0.0003 * ((i * 4 + j) * (i * 4 + j)) as f64,
    );
    let mut set = BackendSet::mock();
    let plain = analyze("m", &img, &mut set, &lib, &PipelineConfig::default())
        .unwrap()
        .report;
    let cfg = PipelineConfig {
        normalize_heatmap: true,
        ..PipelineConfig::default()
    };
    let normed = analyze("m", &img, &mut set, &lib, &cfg).unwrap().report;
    assert_eq!(plain.verdict, normed.verdict);
    assert_eq!(plain.artifact_scores.len(), normed.artifact_scores.len());
    let s0 = plain.artifact_scores[0].score;
    assert!(s0 > 0.0 && s0 < 1.0, "mixed votes expected, got {s0}");
    // Retained flags can only agree if no score sits on the threshold itself.
    assert!((s0 - 0.5).abs() > 1e-6, "fixture is degenerate: {s0}");
    for (a, b) in plain.artifact_scores.iter().zip(&normed.artifact_scores) {
        assert!((a.score - b.score).abs() <= 1e-12);
        assert_eq!(a.retained, b.retained);
    }
}

#[test]
fn reports_round_trip_through_json() {
    let lib = DescriptorLibrary::builtin();
    let mut set = BackendSet::mock();
    for img in [uniform(1, 0.03), uniform(1, -0.03), uniform(3, 0.02)] {
        let report = analyze("rt", &img, &mut set, &lib, &PipelineConfig::default())
            .unwrap()
            .report;
        let text = report.to_json();
        let back = parse_report(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json(), text);
    }
}

#[test]
fn missing_super_resolver_names_its_stage() {
    let names = BackendNames {
        super_resolver: "none".into(),
        ..BackendNames::default()
    };
    let options = RegistryOptions {
        model_dir: None,
        sr_fallback: false,
        ..RegistryOptions::default()
    };
    let mut set: BackendSet<f64> = build_backends(&names, &options).unwrap();
    let err = analyze(
        "s",
        &uniform(1, 0.03),
        &mut set,
        &DescriptorLibrary::builtin(),
        &PipelineConfig::default(),
    )
    .unwrap_err();
    assert_eq!(err.stage(), Some(Stage::SuperResolve));
    assert!(err.to_string().contains("super_resolve"), "{err}");

    // A missing adapter falls back to bicubic only when allowed.
    let names = BackendNames {
        super_resolver: "adapter".into(),
        ..BackendNames::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let with_fallback = RegistryOptions {
        model_dir: Some(dir.path().to_path_buf()),
        sr_fallback: true,
        ..RegistryOptions::default()
    };
    let mut set: BackendSet<f64> = build_backends(&names, &with_fallback).unwrap();
    analyze(
        "s",
        &uniform(1, 0.03),
        &mut set,
        &DescriptorLibrary::builtin(),
        &PipelineConfig::default(),
    )
    .unwrap();
    let without = RegistryOptions {
        sr_fallback: false,
        ..with_fallback
    };
    let mut set: BackendSet<f64> = build_backends(&names, &without).unwrap();
    let err = analyze(
        "s",
        &uniform(1, 0.03),
        &mut set,
        &DescriptorLibrary::builtin(),
        &PipelineConfig::default(),
    )
    .unwrap_err();
    assert_eq!(err.stage(), Some(Stage::SuperResolve));
}

fn retained_score(name: &str) -> ArtifactScore<f64> {
    ArtifactScore {
        artifact_name: name.into(),
        score: 0.9,
        counts: VoteCounts {
            positive: 9,
            negative: 1,
            neutral: 0,
        },
        retained: true,
    }
}

#[test]
fn explanation_retries_are_bounded() {
    let lib = DescriptorLibrary::builtin();
    let img = uniform(1, 0.0);
    let valid = r#"{"artifact": "ghosting_effects", "description": "faint duplicate outline along the left edge"}"#;

    let mut vlm = ScriptedVlm::malformed_then_valid(valid);
    let (ex, attempts) = explain_retained(
        &[retained_score("ghosting_effects")],
        &lib,
        &mut vlm,
        &img,
        2,
    );
    assert_eq!(ex.len(), 1);
    assert_eq!(attempts[0].calls, 2);
    assert_eq!(vlm.calls(), 2);

    let mut vlm = ScriptedVlm::canned("no idea");
    let (ex, attempts) = explain_retained(
        &[retained_score("ghosting_effects")],
        &lib,
        &mut vlm,
        &img,
        2,
    );
    assert!(ex.is_empty());
    assert_eq!(attempts[0].status, AttemptStatus::Unavailable);
    assert_eq!((attempts[0].calls, vlm.calls()), (3, 3));
    assert!(attempts[0].error.is_some());

    // An answer about a different artifact does not count.
    let other = r#"{"artifact": "biological_asymmetry", "description": "eyes differ"}"#;
    let mut vlm = ScriptedVlm::canned(other);
    let (ex, attempts) = explain_retained(
        &[retained_score("ghosting_effects")],
        &lib,
        &mut vlm,
        &img,
        0,
    );
    assert!(ex.is_empty());
    assert_eq!(attempts[0].calls, 1);

    let unretained = ArtifactScore {
        retained: false,
        ..retained_score("ghosting_effects")
    };
    let mut vlm = ScriptedVlm::canned(valid);
    let (ex, attempts) = explain_retained(&[unretained], &lib, &mut vlm, &img, 2);
    assert!(ex.is_empty() && attempts.is_empty());
    assert_eq!(vlm.calls(), 0);
}

#[test]
fn prompt_carries_schema_example_and_guidelines() {
    let lib = DescriptorLibrary::builtin();
    for d in lib.descriptors() {
        let p = build_prompt(d);
        assert!(p.contains(SCHEMA_LINE) && p.contains(EXAMPLE_OBJECT));
        assert!(GUIDELINES.iter().all(|g| p.contains(g)));
        assert!(p.contains(&d.name) && p.contains(&d.positive_text));
        assert_eq!(p, build_prompt(d));
    }
    assert!(GUIDELINES.contains(&"Limit each response to 1\u{2013}2 lines."));
}

#[test]
fn vlm_responses_are_parsed_strictly() {
    let lib = DescriptorLibrary::builtin();
    let ok = parse_vlm_response(
        r#"{"artifact":"biological_asymmetry","description":"the horse has unsymmetrical eyes"}"#,
        &lib,
    )
    .unwrap();
    assert_eq!(ok.artifact, "biological_asymmetry");
    // Typographic quotes as typeset in prose are tolerated.
    let curly = "{\u{201c}artifact\u{201d}: \u{201c}biological_asymmetry\u{201d}, \u{201c}description\u{201d}: \
                 \u{201c}In the given image, the horse has unsymmetrical eyes\u{201d} }";
    assert_eq!(
        parse_vlm_response(curly, &lib).unwrap().artifact,
        "biological_asymmetry"
    );
    let prefixed = r#"sure! here you go: {"artifact":"ghosting_effects","description":"y"}"#;
    assert_eq!(parse_vlm_response(prefixed, &lib).unwrap().description, "y");

    for bad in [
        r#"{"artifact":"ghosting_effects"}"#,
        r#"{"description":"y"}"#,
        r#"{"artifact":"ghosting_effects","description":"   "}"#,
        "no json here",
    ] {
        assert!(
            matches!(
                parse_vlm_response(bad, &lib),
                Err(ExplainerError::MalformedResponse(_))
            ),
            "{bad}"
        );
    }
    let long = format!(
        r#"{{"artifact":"ghosting_effects","description":"{}"}}"#,
        "x".repeat(301)
    );
    assert!(matches!(
        parse_vlm_response(&long, &lib),
        Err(ExplainerError::MalformedResponse(_))
    ));
    assert!(matches!(
        parse_vlm_response(r#"{"artifact":"not_a_thing","description":"y"}"#, &lib),
        Err(ExplainerError::ArtifactMismatch { .. })
    ));
}

#[test]
fn descriptor_library_loading() {
    let lib = DescriptorLibrary::builtin();
    assert_eq!(lib.len(), 48);
    assert_eq!(
        lib.get("misaligned_body_panels").unwrap().category,
        Category::Vehicle
    );
    assert_eq!(lib.select(Category::Generic).len(), lib.len());
    let animal = lib.select(Category::Animal);
    assert!(animal.iter().all(|d| d.category != Category::Vehicle));
    assert!(animal.iter().any(|d| d.category == Category::Animal));

    let line = |name: &str| {
        format!(
            r#"{{"name":"{name}","category":"generic","positive_text":"p","negative_text":"n","neutral_text":"u"}}"#
        )
    };
    let good = format!("# comment\n\n{}\n{}\n", line("a"), line("b"));
    assert_eq!(DescriptorLibrary::parse("t", &good).unwrap().len(), 2);
    assert!(matches!(
        DescriptorLibrary::parse("t", &format!("{}\n{}", line("a"), line("a"))),
        Err(ExplainerError::DuplicateArtifactName(n)) if n == "a"
    ));
    assert!(matches!(
        DescriptorLibrary::parse("t", &format!("{}\n{{oops", line("a"))),
        Err(ExplainerError::ParseError { line: 2, .. })
    ));
    let missing = r#"{"name":"a","category":"generic","positive_text":"p","negative_text":"n"}"#;
    assert!(matches!(
        DescriptorLibrary::parse("t", missing),
        Err(ExplainerError::MissingTupleField { field, .. }) if field == "neutral_text"
    ));
    assert!(matches!(
        DescriptorLibrary::parse("t", "# nothing\n"),
        Err(ExplainerError::EmptyLibrary)
    ));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lib.jsonl");
    std::fs::write(&path, good).unwrap();
    assert_eq!(
        DescriptorLibrary::load(&path).unwrap().source,
        path.display().to_string()
    );
    assert!(matches!(
        DescriptorLibrary::load(dir.path().join("absent.jsonl")),
        Err(ExplainerError::Io { .. })
    ));
}
