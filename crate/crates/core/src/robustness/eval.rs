use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{autoattack, run_attack, AttackConfig, AttackKind, RobustnessError};
use crate::backends::{self, Classifier};
use crate::image::{ImageTensor, Label};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage<T> {
    pub image: ImageTensor<T>,
    pub label: Label,
}

/// Which attack an evaluation sweep runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackPlan {
    Single(AttackKind),
    Auto(Vec<AttackKind>),
}

impl AttackPlan {
    pub fn auto_default() -> Self {
        AttackPlan::Auto(AttackKind::DEFAULT_SUITE.to_vec())
    }

    pub fn name(&self) -> String {
        match self {
            AttackPlan::Single(k) => k.as_str().to_string(),
            AttackPlan::Auto(suite) if suite.as_slice() == AttackKind::DEFAULT_SUITE => {
                "autoattack".to_string()
            }
            AttackPlan::Auto(suite) => {
                let names: Vec<&str> = suite.iter().map(|k| k.as_str()).collect();
                format!("autoattack[{}]", names.join("+"))
            }
        }
    }
}

impl fmt::Display for AttackPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for AttackPlan {
    type Err = RobustnessError;

    /// `fgsm`, `pgd`, `wavelet`, `autoattack`, or `autoattack:fgsm+pgd`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        if lower == "autoattack" || lower == "auto" {
            return Ok(AttackPlan::auto_default());
        }
        if let Some(list) = lower.strip_prefix("autoattack:") {
            let suite = list
                .split('+')
                .map(str::parse)
                .collect::<Result<Vec<AttackKind>, _>>()?;
            if suite.is_empty() {
                return Err(RobustnessError::EmptySuite);
            }
            return Ok(AttackPlan::Auto(suite));
        }
        Ok(AttackPlan::Single(lower.parse()?))
    }
}

/// One line of the robustness CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub epsilon: f64,
    pub attack: String,
    pub clean_acc: f64,
    pub adv_acc: f64,
    pub n_samples: usize,
}

/// Clean and adversarial accuracy at every ε in `epsilons`. Clean predictions
/// are computed once; samples are processed in order, so the table is fully
/// determined by the backend, data and configuration.
pub fn evaluate_robustness<T: Scalar>(
    backend: &dyn Classifier<T>,
    dataset: &[LabeledImage<T>],
    plan: &AttackPlan,
    epsilons: &[T],
    cfg: &AttackConfig<T>,
) -> Result<Vec<RobustnessRow>, RobustnessError> {
    if dataset.is_empty() {
        return Err(RobustnessError::EmptyDataset);
    }
    if let AttackPlan::Auto(suite) = plan {
        if suite.is_empty() {
            return Err(RobustnessError::EmptySuite);
        }
    }
    let mut clean_correct = 0usize;
    for sample in dataset {
        if backends::classify(backend, &sample.image)?.prediction == sample.label {
            clean_correct += 1;
        }
    }
    let n = dataset.len();
    let clean_acc = clean_correct as f64 / n as f64;
    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let eps_cfg = cfg.with_epsilon(epsilon);
        eps_cfg.validate()?;
        let mut adv_correct = 0usize;
        for sample in dataset {
            let result = match plan {
                AttackPlan::Single(kind) => {
                    run_attack(*kind, backend, &sample.image, sample.label, &eps_cfg)?
                }
                AttackPlan::Auto(suite) => {
                    autoattack(backend, &sample.image, sample.label, &eps_cfg, suite)?.result
                }
            };
            if !result.success {
                adv_correct += 1;
            }
        }
        rows.push(RobustnessRow {
            epsilon: epsilon.as_f64(),
            attack: plan.name(),
            clean_acc,
            adv_acc: adv_correct as f64 / n as f64,
            n_samples: n,
        });
    }
    Ok(rows)
}

/// Writes rows with the header `epsilon,attack,clean_acc,adv_acc,n_samples`.
pub fn write_robustness_csv<W: Write>(
    rows: &[RobustnessRow],
    out: W,
) -> Result<(), RobustnessError> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::MockLinearClassifier;

    #[test]
    fn plan_parsing() {
        assert_eq!(
            "pgd".parse::<AttackPlan>().unwrap(),
            AttackPlan::Single(AttackKind::Pgd)
        );
        assert_eq!(
            "autoattack".parse::<AttackPlan>().unwrap(),
            AttackPlan::auto_default()
        );
        assert_eq!(
            "autoattack:pgd+fgsm".parse::<AttackPlan>().unwrap(),
            AttackPlan::Auto(vec![AttackKind::Pgd, AttackKind::Fgsm])
        );
        assert!("bogus".parse::<AttackPlan>().is_err());
        assert_eq!(
            AttackPlan::Auto(vec![AttackKind::Pgd]).name(),
            "autoattack[pgd]"
        );
    }

    #[test]
    fn empty_dataset() {
        let m = MockLinearClassifier::<f64>::red_minus_blue(2, 2, 8.0, 0.0);
        let err = evaluate_robustness(
            &m,
            &[],
            &AttackPlan::Single(AttackKind::Fgsm),
            &[0.0],
            &AttackConfig::default(),
        );
        assert!(matches!(err, Err(RobustnessError::EmptyDataset)));
    }

    #[test]
    fn csv_header() {
        let rows = vec![RobustnessRow {
            epsilon: 0.01,
            attack: "fgsm".into(),
            clean_acc: 1.0,
            adv_acc: 0.5,
            n_samples: 2,
        }];
        let mut buf = Vec::new();
        write_robustness_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "epsilon,attack,clean_acc,adv_acc,n_samples\n0.01,fgsm,1.0,0.5,2\n"
        );
    }
}
