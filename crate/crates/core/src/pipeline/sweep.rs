use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::commands::{cmd_pipeline, create_dir, finish, Outcome};
use super::{plot, PipelineConfig, PipelineSummary};
use crate::error::{ensure, Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// BANC scaling coefficient.
    C,
    /// Classifier weight in the stage-1 loss blend.
    Alpha,
    /// Rarity scale.
    Sigma,
    /// Contrastive temperature.
    Tau,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::C => "c",
            SweepParam::Alpha => "alpha",
            SweepParam::Sigma => "sigma",
            SweepParam::Tau => "tau",
        }
    }

    pub fn apply(self, cfg: &mut PipelineConfig, value: f64) {
        match self {
            SweepParam::C => cfg.stage1.c = value,
            SweepParam::Alpha => cfg.stage1.alpha = value,
            SweepParam::Sigma => cfg.refurbish.sigma = value,
            SweepParam::Tau => cfg.stage1.tau = value,
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c" => Ok(SweepParam::C),
            "alpha" => Ok(SweepParam::Alpha),
            "sigma" => Ok(SweepParam::Sigma),
            "tau" => Ok(SweepParam::Tau),
            other => Err(Error::InvalidSpec(format!("unknown sweep parameter `{other}`"))),
        }
    }
}

/// Which test accuracy a sweep reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    /// Overall accuracy of the stage-2 ensemble.
    #[default]
    Ensemble,
    /// Overall accuracy of the stage-1 pre-screening classifier.
    Stage1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    #[serde(default)]
    pub metric: SweepMetric,
}

impl SweepSpec {
    /// Grid-point configs, each individually validated.
    pub fn configs(&self, base: &PipelineConfig) -> Result<Vec<PipelineConfig>> {
        ensure!(!self.values.is_empty(), InvalidSpec, "sweep grid is empty");
        self.values
            .iter()
            .map(|&v| {
                ensure!(v.is_finite(), InvalidSpec, "sweep value {v} is not finite");
                let mut c = base.clone();
                self.param.apply(&mut c, v);
                c.validate()?;
                Ok(c)
            })
            .collect()
    }
}

/// Runs the full pipeline once per grid value (all with the global seed, so a
/// one-point grid reproduces a plain run) in subdirectories keyed by config
/// hash, then writes `sweep_<param>.csv` sorted by value.
pub fn cmd_sweep(cfg: &PipelineConfig, spec: &SweepSpec, dir: &Path, svg: bool) -> Result<Outcome> {
    let start = Instant::now();
    let configs = spec.configs(cfg)?;
    create_dir(dir)?;
    let name = spec.param.name();
    let points: Vec<(f64, PipelineConfig)> = spec.values.iter().copied().zip(configs).collect();
    let runs = par::map(&points, |(value, c)| -> Result<(f64, String, f64)> {
        let hash = c.hash();
        let sub = dir.join(format!("sweep_{name}")).join(&hash[..16]);
        let out = cmd_pipeline(c, &sub, false)?;
        let summary: PipelineSummary = serde_json::from_value(out.manifest.metrics)
            .map_err(|e| Error::Numeric(format!("pipeline summary: {e}")))?;
        let acc = match spec.metric {
            SweepMetric::Ensemble => summary.full.overall_accuracy,
            SweepMetric::Stage1 => summary.stage1_test.all,
        };
        Ok((*value, hash, acc))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut rows = runs;
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut csv = String::from("value,accuracy\n");
    for (v, _, a) in &rows {
        let _ = writeln!(csv, "{v},{a:.6}");
    }
    let csv_name = format!("sweep_{name}.csv");
    std::fs::write(dir.join(&csv_name), &csv).map_err(|e| Error::io(dir.join(&csv_name), e))?;
    let mut outputs = vec![csv_name];
    if svg {
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.2)).collect();
        let svg_name = format!("sweep_{name}.svg");
        let chart = plot::line_chart_svg(&format!("sweep over {name}"), name, "accuracy", &points);
        std::fs::write(dir.join(&svg_name), chart).map_err(|e| Error::io(dir.join(&svg_name), e))?;
        outputs.push(svg_name);
    }
    // First maximum in value order.
    let best = rows
        .iter()
        .fold(None::<&(f64, String, f64)>, |b, r| match b {
            Some(b) if b.2 >= r.2 => Some(b),
            _ => Some(r),
        })
        .expect("grid is non-empty");
    let summary = format!("{}best {name} = {} (accuracy {:.4})", csv, best.0, best.2);
    let metrics = json!({
        "param": name,
        "metric": spec.metric,
        "rows": rows.iter().map(|(v, h, a)| json!({"value": v, "config_hash": h, "accuracy": a})).collect::<Vec<_>>(),
        "best_value": best.0,
        "best_accuracy": best.2,
    });
    let command = format!("sweep_{name}");
    finish(
        cfg,
        dir,
        &command,
        json!({ "sweep": spec, "svg": svg }),
        start,
        metrics,
        &outputs,
        summary,
    )
}
