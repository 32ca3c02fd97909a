use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{train, RunConfig};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::Ablation;

#[derive(Debug)]
pub struct AblationRun {
    pub ablation: Ablation,
    /// Final metrics on the validation split.
    pub report: MetricsReport,
    /// Per-step batch digests, for checking that every run saw the same data.
    pub batch_digests: Vec<String>,
    pub final_loss: f64,
}

/// Trains the four module configurations with the same seed, data and step
/// budget, and scores each on `val_set`. With `out_dir`, each run writes to
/// a subdirectory and the comparison table goes to `ablation.txt`.
pub fn ablation_sweep(
    cfg: &RunConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRun>> {
    if val_set.is_empty() {
        return Err(Error::Config("ablation needs a validation split".into()));
    }
    let mut runs = Vec::with_capacity(4);
    for ablation in Ablation::ALL {
        let mut run_cfg = cfg.clone();
        run_cfg.model = ablation.apply(&cfg.model);
        // only the final evaluation matters here
        run_cfg.eval_interval = 0;
        let dir = out_dir.map(|d| d.join(ablation.label().replace('+', "_")));
        let outcome = train(&run_cfg, train_set, val_set, dir.as_deref())?;
        let (_, report) = outcome.evals.last().cloned().expect("final evaluation runs when val_set is nonempty");
        runs.push(AblationRun {
            ablation,
            report,
            batch_digests: outcome.log.iter().map(|r| r.batch_digest.clone()).collect(),
            final_loss: outcome.log.last().map_or(f64::NAN, |r| r.loss.total),
        });
    }
    if let Some(d) = out_dir {
        let p = d.join("ablation.txt");
        fs::write(&p, ablation_table(&runs)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(runs)
}

/// Plain-text comparison table: one row per configuration; mean MAE and MSE
/// followed by MAE and MSE for each class.
pub fn ablation_table(runs: &[AblationRun]) -> String {
    let n = runs.first().map_or(0, |r| r.report.num_classes());
    let mut s = format!("{:<20} {:>9} {:>9}", "method", "mae_mean", "mse_mean");
    for k in 0..n {
        let _ = write!(s, " {:>9} {:>9}", format!("mae_c{k}"), format!("mse_c{k}"));
    }
    s.push('\n');
    for r in runs {
        let m = &r.report;
        let _ = write!(s, "{:<20} {:>9.3} {:>9.3}", r.ablation.label(), m.mae_mean, m.mse_mean);
        for k in 0..n {
            let _ = write!(s, " {:>9.3} {:>9.3}", m.mae_per_class[k], m.mse_per_class[k]);
        }
        s.push('\n');
    }
    s
}
