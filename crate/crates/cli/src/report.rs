//! Summary tables built from the sweep and forecast artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use ckg_core::autodiff::Tensor;
use ckg_core::forecast::{heatmap_from_csv, heatmap_to_csv, metric_rows_from_csv, MetricRow};
use ckg_core::integrate::GROUP_LABELS;
use ckg_core::rank::{mr_rows_from_csv, MrRow};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{paths, read_text, write, Variant};

/// Keeps first-seen order of keys.
fn ordered<'a>(keys: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for k in keys {
        if !out.iter().any(|o| o == k) {
            out.push(k.to_string());
        }
    }
    out
}

fn csv_string(records: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Pivots a sweep: one row per model, one column per `buffer/link` cell.
pub fn mr_table(rows: &[MrRow]) -> Vec<Vec<String>> {
    let models = ordered(rows.iter().map(|r| r.model.as_str()));
    let mut cols: Vec<(String, String)> = Vec::new();
    for r in rows {
        let c = (r.buffer_cfg.clone(), r.link_cfg.clone());
        if !cols.contains(&c) {
            cols.push(c);
        }
    }
    let mut header = vec!["model".to_string()];
    header.extend(cols.iter().map(|(b, l)| format!("{b} {l}")));
    let mut out = vec![header];
    for m in &models {
        let mut line = vec![m.clone()];
        for (b, l) in &cols {
            let cell = rows
                .iter()
                .find(|r| &r.model == m && &r.buffer_cfg == b && &r.link_cfg == l)
                .map(|r| format!("{:.2}", r.mr))
                .unwrap_or_default();
            line.push(cell);
        }
        out.push(line);
    }
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per model and horizon: seed mean and standard deviation of MAE and MAPE.
pub fn forecast_table(rows: &[MetricRow]) -> Vec<Vec<String>> {
    let models = ordered(rows.iter().map(|r| r.model.as_str()));
    let mut groups: BTreeMap<(usize, usize), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        let m = models.iter().position(|x| *x == r.model).expect("listed");
        groups.entry((m, r.horizon_min)).or_default().push(r);
    }
    let mut out = vec![["model", "horizon_min", "MAE_mean", "MAE_std", "MAPE_mean", "MAPE_std", "seeds"]
        .map(String::from)
        .to_vec()];
    for ((m, h), rs) in groups {
        let (mae, mae_sd) = mean_std(&rs.iter().map(|r| r.mae).collect::<Vec<_>>());
        let (mape, mape_sd) = mean_std(&rs.iter().map(|r| r.mape).collect::<Vec<_>>());
        out.push(vec![
            models[m].clone(),
            h.to_string(),
            format!("{mae:.4}"),
            format!("{mae_sd:.4}"),
            format!("{mape:.4}"),
            format!("{mape_sd:.4}"),
            rs.len().to_string(),
        ]);
    }
    out
}

/// Mean MAE over all horizons and seeds, per model.
pub fn overall_mae(rows: &[MetricRow]) -> Vec<(String, f64)> {
    ordered(rows.iter().map(|r| r.model.as_str()))
        .into_iter()
        .map(|m| {
            let v: Vec<f64> = rows.iter().filter(|r| r.model == m).map(|r| r.mae).collect();
            let mean = mean_std(&v).0;
            (m, mean)
        })
        .collect()
}

fn mean_heatmap(root: &Path, kind: &str, model: &str, seeds: &[u64]) -> Result<Option<Tensor>> {
    let mut acc: Option<Tensor> = None;
    let mut n = 0.0;
    for s in seeds {
        let rel = format!("forecast/heatmaps/{kind}_{model}_seed{s}.csv");
        if !root.join(&rel).exists() {
            continue;
        }
        let m = heatmap_from_csv(&read_text(root, &rel)?)?;
        n += 1.0;
        match &mut acc {
            None => acc = Some(m),
            Some(a) => {
                if a.shape() != m.shape() {
                    return Err(CliError::Config(format!("heatmap {rel} has a different shape")));
                }
                a.data_mut().iter_mut().zip(m.data()).for_each(|(x, y)| *x += y);
            }
        }
    }
    Ok(acc.map(|mut a| {
        a.data_mut().iter_mut().for_each(|x| *x /= n);
        a
    }))
}

fn markdown(table: &[Vec<String>]) -> String {
    let mut s = String::new();
    for (i, row) in table.iter().enumerate() {
        s.push_str(&format!("| {} |\n", row.join(" | ")));
        if i == 0 {
            s.push_str(&format!("|{}\n", "---|".repeat(row.len())));
        }
    }
    s
}

pub fn stage_report(cfg: &ExperimentConfig, root: &Path) -> Result<()> {
    let mut md = String::from("# Experiment report\n\n");
    let mut produced = 0;
    for (rel, out, title) in [
        (paths::MR_SPATIAL, "mr_spatial_table.csv", "Spatial unit mean rank"),
        (paths::MR_TEMPORAL, "mr_temporal_table.csv", "Temporal unit mean rank"),
    ] {
        if !root.join(rel).exists() {
            continue;
        }
        let rows = mr_rows_from_csv(&read_text(root, rel)?).map_err(|e| CliError::io(&root.join(rel), e))?;
        let table = mr_table(&rows);
        write(root, &format!("{}/{out}", paths::REPORT), csv_string(table.clone()))?;
        md.push_str(&format!("## {title}\n\n{}\n", markdown(&table)));
        produced += 1;
    }
    if root.join(paths::METRICS).exists() {
        let rows = metric_rows_from_csv(&read_text(root, paths::METRICS)?)
            .map_err(|e| CliError::io(&root.join(paths::METRICS), e))?;
        let table = forecast_table(&rows);
        write(root, &format!("{}/forecast_table.csv", paths::REPORT), csv_string(table.clone()))?;
        md.push_str(&format!("## Forecast error by horizon\n\n{}\n", markdown(&table)));
        let overall = overall_mae(&rows);
        if let Some((_, base)) = overall.iter().find(|(m, _)| m == "baseline") {
            md.push_str("## Mean MAE over horizons\n\n| model | MAE | change vs baseline |\n|---|---|---|\n");
            for (m, v) in &overall {
                md.push_str(&format!("| {m} | {v:.4} | {:+.2}% |\n", 100.0 * (v - base) / base));
            }
            md.push('\n');
        }
        for v in &cfg.forecast.variants {
            let label = Variant::parse(v)?.label();
            for kind in ["context", "sequence"] {
                if let Some(m) = mean_heatmap(root, kind, &label, &cfg.forecast.seeds)? {
                    write(root, &format!("{}/heatmap_{kind}_{label}.csv", paths::REPORT), heatmap_to_csv(&m))?;
                }
            }
        }
        produced += 1;
    }
    if produced == 0 {
        return Err(CliError::MissingInput(format!(
            "no sweep or forecast results under {}",
            root.display()
        )));
    }
    md.push_str(&format!(
        "Context heatmap rows and columns follow the group order: {}.\n",
        GROUP_LABELS.join(", ")
    ));
    write(root, &format!("{}/report.md", paths::REPORT), md)?;
    Ok(())
}
