//! SHAP-based feature pruning followed by retraining.

use serde::Serialize;
use solarprob::dataset::Dataset;
use solarprob::explain::{explain_dataset, GlobalImportance};
use solarprob::metrics::EvalReport;
use solarprob::ngboost::{train, Head, NgbModel};
use solarprob::{Error, Result};

/// At most `max_rows` rows, evenly spaced and including the first.
pub fn spaced_rows(data: &Dataset, max_rows: usize) -> Dataset {
    let n = data.n_rows();
    if n <= max_rows || max_rows == 0 {
        return data.clone();
    }
    let rows: Vec<usize> = (0..max_rows).map(|k| k * n / max_rows).collect();
    data.select_rows(&rows)
}

/// Share of each feature in the summed mean |φ| of both heads.
pub fn feature_shares(model: &NgbModel, data: &Dataset) -> Result<Vec<f64>> {
    let names = data.feature_names();
    let mut combined = vec![0.0; names.len()];
    for head in Head::ALL {
        let expl = explain_dataset(model, data, head)?;
        let imp = GlobalImportance::from_explanations(head, &names, &expl);
        for (j, c) in combined.iter_mut().enumerate() {
            *c += imp.of(j);
        }
    }
    let total: f64 = combined.iter().sum();
    if total > 0.0 {
        Ok(combined.iter().map(|c| c / total).collect())
    } else {
        Ok(vec![0.0; combined.len()])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureShare {
    pub feature: String,
    pub share: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PruneOutcome {
    pub threshold: f64,
    pub shares: Vec<FeatureShare>,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    pub before: EvalReport,
    pub after: EvalReport,
    #[serde(skip)]
    pub model: NgbModel,
}

/// Drops every feature whose combined share is below `threshold`, retrains
/// with the original configuration and evaluates both models with
/// `evaluate`. Explanations use `explain_rows` of the training data.
pub fn prune_and_retrain<E>(
    model: &NgbModel,
    train_data: &Dataset,
    explain_rows: &Dataset,
    threshold: f64,
    evaluate: E,
) -> Result<PruneOutcome>
where
    E: Fn(&NgbModel) -> Result<EvalReport>,
{
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Domain(format!("threshold must lie in [0, 1), got {threshold}")));
    }
    let names = train_data.feature_names();
    let shares = feature_shares(model, explain_rows)?;
    let keep: Vec<usize> = (0..names.len()).filter(|&j| !(shares[j] < threshold)).collect();
    if keep.is_empty() {
        return Err(Error::Domain(format!("threshold {threshold} would drop every feature")));
    }
    let before = evaluate(model)?;
    let reduced = if keep.len() == names.len() {
        model.clone()
    } else {
        train(&train_data.select_features(&keep)?, &model.config)?
    };
    let after = evaluate(&reduced)?;
    Ok(PruneOutcome {
        threshold,
        shares: names
            .iter()
            .zip(&shares)
            .enumerate()
            .map(|(j, (n, &s))| FeatureShare {
                feature: n.clone(),
                share: s,
                kept: keep.contains(&j),
            })
            .collect(),
        kept: keep.iter().map(|&j| names[j].clone()).collect(),
        dropped: (0..names.len()).filter(|j| !keep.contains(j)).map(|j| names[j].clone()).collect(),
        before,
        after,
        model: reduced,
    })
}

impl PruneOutcome {
    /// Table with one row per metric and one column per model.
    pub fn table(&self) -> Vec<Vec<String>> {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut rows = vec![
            vec!["MAE".into(), fmt(self.before.mae), fmt(self.after.mae)],
            vec!["RMSE".into(), fmt(self.before.rmse), fmt(self.after.rmse)],
            vec!["MBE".into(), fmt(self.before.mbe), fmt(self.after.mbe)],
        ];
        for (b, a) in self.before.coverage.iter().zip(&self.after.coverage) {
            let tag = format!("{:.2}", 100.0 * b.nominal);
            rows.push(vec![format!("PICP@{tag}"), b.picp.to_string(), a.picp.to_string()]);
            rows.push(vec![format!("PINAW@{tag}"), b.pinaw.to_string(), a.pinaw.to_string()]);
        }
        rows.push(vec!["CRPS".into(), fmt(self.before.mean_crps), fmt(self.after.mean_crps)]);
        rows
    }
}
