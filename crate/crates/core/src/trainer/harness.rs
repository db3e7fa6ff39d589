use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{pct, RunReport, Summary};

use super::config::{RunConfig, UpdateScope};
use super::protocol::{run_protocol, DataBundle};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScopeRow {
    pub scope: UpdateScope,
    pub summary: Summary,
    pub final_acc: f64,
}

/// One full run per update scope on the same data.
pub fn ablate_scope(config: &RunConfig, data: &DataBundle) -> Result<Vec<ScopeRow>> {
    UpdateScope::ALL
        .iter()
        .map(|&scope| {
            let cfg = RunConfig {
                update_scope: scope,
                ..config.clone()
            };
            let r = run_protocol(&cfg, data)?;
            Ok(ScopeRow {
                scope,
                summary: r.summary,
                final_acc: r.final_accuracy(),
            })
        })
        .collect()
}

/// Sweep axis for [`ablate_hparam`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HparamAxis {
    /// `(n_pairs_base, n_pairs_inc)` combinations.
    Pairs(Vec<(usize, usize)>),
    TopK(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HparamRow {
    pub n_pairs_base: usize,
    pub n_pairs_inc: usize,
    pub k_pr: usize,
    pub summary: Summary,
    pub final_acc: f64,
}

pub fn ablate_hparam(config: &RunConfig, data: &DataBundle, axis: &HparamAxis) -> Result<Vec<HparamRow>> {
    let variants: Vec<RunConfig> = match axis {
        HparamAxis::Pairs(list) => list
            .iter()
            .map(|&(b, i)| RunConfig {
                n_pairs_base: b,
                n_pairs_inc: i,
                ..config.clone()
            })
            .collect(),
        HparamAxis::TopK(list) => list
            .iter()
            .map(|&k| RunConfig {
                k_pr: k,
                ..config.clone()
            })
            .collect(),
    };
    if variants.is_empty() {
        return Err(Error::Config {
            key: "sweep".into(),
            message: "empty sweep list".into(),
        });
    }
    for v in &variants {
        v.validate()?;
    }
    variants
        .into_iter()
        .map(|cfg| {
            let r = run_protocol(&cfg, data)?;
            Ok(HparamRow {
                n_pairs_base: cfg.n_pairs_base,
                n_pairs_inc: cfg.n_pairs_inc,
                k_pr: cfg.k_pr,
                summary: r.summary,
                final_acc: r.final_accuracy(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub avg: f64,
    pub final_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedVariance {
    pub runs: Vec<SeedRun>,
    pub mean_avg: f64,
    /// Sample standard deviation of AVG (n - 1 denominator).
    pub std_avg: f64,
}

/// Repeat the protocol per seed; data is regenerated or reloaded each time.
pub fn seed_variance(config: &RunConfig, seeds: &[u64]) -> Result<SeedVariance> {
    if seeds.len() < 2 {
        return Err(Error::Config {
            key: "seeds".into(),
            message: "need at least two seeds".into(),
        });
    }
    let runs = seeds
        .iter()
        .map(|&seed| {
            let cfg = RunConfig { seed, ..config.clone() };
            let data = DataBundle::load(&cfg)?;
            let r: RunReport = run_protocol(&cfg, &data)?;
            Ok(SeedRun {
                seed,
                avg: r.summary.avg,
                final_acc: r.final_accuracy(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    let mean_avg = runs.iter().map(|r| r.avg).sum::<f64>() / n;
    let var = runs.iter().map(|r| (r.avg - mean_avg).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(SeedVariance {
        runs,
        mean_avg,
        std_avg: var.sqrt(),
    })
}

fn opt_pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}", pct(x))).unwrap_or_default()
}

fn summary_cells(s: &Summary, final_acc: f64) -> String {
    format!(
        "{:.1},{:.1},{},{:.1},{:.1}",
        pct(s.avg),
        pct(s.pd),
        opt_pct(s.nla),
        pct(s.bma),
        pct(final_acc)
    )
}

pub fn render_scope_table(rows: &[ScopeRow]) -> String {
    let mut out = String::from("update_scope,avg,pd,nla,bma,final_acc\n");
    for r in rows {
        let _ = writeln!(out, "{},{}", r.scope.as_str(), summary_cells(&r.summary, r.final_acc));
    }
    out
}

pub fn render_hparam_table(rows: &[HparamRow]) -> String {
    let mut out = String::from("n_pairs_base,n_pairs_inc,k_pr,avg,pd,nla,bma,final_acc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.n_pairs_base,
            r.n_pairs_inc,
            r.k_pr,
            summary_cells(&r.summary, r.final_acc)
        );
    }
    out
}

pub fn render_seed_table(v: &SeedVariance) -> String {
    let mut out = String::from("seed,avg,final_acc\n");
    for r in &v.runs {
        let _ = writeln!(out, "{},{:.1},{:.1}", r.seed, pct(r.avg), pct(r.final_acc));
    }
    let _ = writeln!(out, "# mean_avg {:.2} std_avg {:.2}", 100.0 * v.mean_avg, 100.0 * v.std_avg);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig {
            dim: 8,
            l_ctx: 6,
            tau: 16.0,
            n_pairs_base: 4,
            n_pairs_inc: 2,
            k_pr: 2,
            base_classes: 3,
            ways: 1,
            shots: 2,
            sessions: 2,
            epochs_base: 1,
            epochs_inc: 1,
            synthetic: Some(crate::datasets::SyntheticSpec {
                classes: 4,
                train_per_class: 4,
                test_per_class: 3,
                dim: 8,
                ..Default::default()
            }),
            ..RunConfig::default()
        }
    }

    #[test]
    fn top_k_sweep_gives_one_row_per_value() {
        let cfg = tiny();
        let data = DataBundle::load(&cfg).unwrap();
        let rows = ablate_hparam(&cfg, &data, &HparamAxis::TopK(vec![1, 2, 3])).unwrap();
        assert_eq!(rows.iter().map(|r| r.k_pr).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(render_hparam_table(&rows).lines().count(), 4);
    }

    #[test]
    fn pair_sweep_rejects_k_above_pool() {
        let cfg = tiny();
        let data = DataBundle::load(&cfg).unwrap();
        let r = ablate_hparam(&cfg, &data, &HparamAxis::Pairs(vec![(1, 1)]));
        assert!(matches!(r, Err(Error::Config { key, .. }) if key == "k_pr"));
    }

    #[test]
    fn scope_table_has_three_rows() {
        let cfg = tiny();
        let data = DataBundle::load(&cfg).unwrap();
        let rows = ablate_scope(&cfg, &data).unwrap();
        let table = render_scope_table(&rows);
        assert!(table.contains("\ncurrent_only,") && table.contains("\nall_params,"));
        assert_eq!(table.lines().count(), 4);
    }

    #[test]
    fn seed_variance_reports_spread() {
        let v = seed_variance(&tiny(), &[1, 2, 3]).unwrap();
        assert_eq!(v.runs.len(), 3);
        assert!(v.std_avg.is_finite() && v.std_avg >= 0.0);
        assert!(seed_variance(&tiny(), &[1]).is_err());
    }
}
