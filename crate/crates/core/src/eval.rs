//! Per-class (macro) accuracy, ZSL accuracy over unseen classes, and GZSL
//! unseen/seen accuracies with their harmonic mean.

use std::fmt::Write as _;

use crate::data::{Dataset, SemanticSpace};
use crate::error::{check_dim, Error, Result};
use crate::indicators::IndicatorEncoder;
use crate::model::{nearest_class, InputSpace, Scope, SemanticPredictor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassAccuracy {
    pub class: usize,
    pub accuracy: f64,
    pub count: usize,
}

/// Accuracy of every class that has at least one sample, ascending by id.
#[derive(Debug, Clone, PartialEq)]
pub struct PerClassAccuracy {
    pub classes: Vec<ClassAccuracy>,
}

impl PerClassAccuracy {
    /// Unweighted mean over the classes present.
    pub fn macro_average(&self) -> f64 {
        if self.classes.is_empty() {
            return 0.0;
        }
        self.classes.iter().map(|c| c.accuracy).sum::<f64>() / self.classes.len() as f64
    }
}

pub fn per_class_accuracy(predictions: &[usize], labels: &[usize], class_count: usize) -> Result<PerClassAccuracy> {
    check_dim("prediction count", labels.len(), predictions.len())?;
    if labels.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    let mut hits = vec![0usize; class_count];
    let mut counts = vec![0usize; class_count];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= class_count {
            return Err(Error::ClassOutOfRange { class: l, class_count });
        }
        counts[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let classes = (0..class_count)
        .filter(|&c| counts[c] > 0)
        .map(|c| ClassAccuracy {
            class: c,
            accuracy: hits[c] as f64 / counts[c] as f64,
            count: counts[c],
        })
        .collect();
    Ok(PerClassAccuracy { classes })
}

/// `2US/(U+S)`, and 0 when both are 0.
pub fn harmonic_mean(unseen: f64, seen: f64) -> f64 {
    if unseen + seen <= 0.0 {
        0.0
    } else {
        2.0 * unseen * seen / (unseen + seen)
    }
}

/// Class predictions for every sample of `ds`. Gates always come from the
/// raw features; the predictor sees the embedding when it asks for it.
pub fn predict_dataset<P: SemanticPredictor + ?Sized>(
    model: &P,
    ds: &Dataset,
    space: &SemanticSpace,
    enc: &IndicatorEncoder,
    scope: Scope,
) -> Result<Vec<usize>> {
    (0..ds.len())
        .map(|i| {
            let x = ds.sample(i);
            let gates = enc.compute_indicators(x, model.k_active())?;
            let y = match model.input_space() {
                InputSpace::Raw => model.predict_semantic(x, &gates)?,
                InputSpace::Embedding => model.predict_semantic(&enc.embed(x)?, &gates)?,
            };
            nearest_class(&y, space, scope)
        })
        .collect()
}

/// Macro accuracy with the search restricted to unseen classes.
pub fn evaluate_zsl<P: SemanticPredictor + ?Sized>(
    model: &P,
    unseen: &Dataset,
    space: &SemanticSpace,
    enc: &IndicatorEncoder,
) -> Result<f64> {
    require_partition(unseen, space, false, "test_unseen")?;
    let preds = predict_dataset(model, unseen, space, enc, Scope::UnseenOnly)?;
    Ok(per_class_accuracy(&preds, unseen.labels(), unseen.class_count())?.macro_average())
}

fn require_partition(ds: &Dataset, space: &SemanticSpace, seen: bool, name: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::validation(name, None, "split is empty"));
    }
    check_dim("descriptor count", ds.class_count(), space.class_count())?;
    if let Some(row) = ds.labels().iter().position(|&l| space.is_seen(l) != seen) {
        let which = if seen { "unseen" } else { "seen" };
        return Err(Error::validation(
            name,
            Some(row + 1),
            format!("{which} class {} in this split", ds.labels()[row]),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub zsl_accuracy: Option<f64>,
    pub unseen_accuracy: f64,
    pub seen_accuracy: f64,
    pub harmonic_mean: f64,
    /// Scope-all accuracies for every class in either test split.
    pub per_class: Vec<ClassAccuracy>,
}

impl EvalReport {
    /// `metric,value` rows followed by `class,<id>,<accuracy>,<count>` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        if let Some(z) = self.zsl_accuracy {
            let _ = writeln!(out, "zsl_accuracy,{z}");
        }
        let _ = writeln!(out, "unseen_accuracy,{}", self.unseen_accuracy);
        let _ = writeln!(out, "seen_accuracy,{}", self.seen_accuracy);
        let _ = writeln!(out, "harmonic_mean,{}", self.harmonic_mean);
        for c in &self.per_class {
            let _ = writeln!(out, "class,{},{},{}", c.class, c.accuracy, c.count);
        }
        out
    }
}

/// U and S under the all-class search, plus H. The ZSL figure is left empty;
/// [`evaluate_all`] fills it.
pub fn evaluate_gzsl<P: SemanticPredictor + ?Sized>(
    model: &P,
    seen: &Dataset,
    unseen: &Dataset,
    space: &SemanticSpace,
    enc: &IndicatorEncoder,
) -> Result<EvalReport> {
    require_partition(seen, space, true, "test_seen")?;
    require_partition(unseen, space, false, "test_unseen")?;
    let u = per_class_accuracy(
        &predict_dataset(model, unseen, space, enc, Scope::All)?,
        unseen.labels(),
        unseen.class_count(),
    )?;
    let s = per_class_accuracy(
        &predict_dataset(model, seen, space, enc, Scope::All)?,
        seen.labels(),
        seen.class_count(),
    )?;
    let (ua, sa) = (u.macro_average(), s.macro_average());
    let mut per_class: Vec<ClassAccuracy> = u.classes.into_iter().chain(s.classes).collect();
    per_class.sort_by_key(|c| c.class);
    Ok(EvalReport {
        zsl_accuracy: None,
        unseen_accuracy: ua,
        seen_accuracy: sa,
        harmonic_mean: harmonic_mean(ua, sa),
        per_class,
    })
}

/// GZSL report with the ZSL accuracy included.
pub fn evaluate_all<P: SemanticPredictor + ?Sized>(
    model: &P,
    seen: &Dataset,
    unseen: &Dataset,
    space: &SemanticSpace,
    enc: &IndicatorEncoder,
) -> Result<EvalReport> {
    let mut report = evaluate_gzsl(model, seen, unseen, space, enc)?;
    report.zsl_accuracy = Some(evaluate_zsl(model, unseen, space, enc)?);
    Ok(report)
}
