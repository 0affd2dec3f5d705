use anyhow::{bail, Context, Result};
use serde::Deserialize;

use srx_core::dataset::{DataTable, ProblemData};
use srx_core::expr::{eval_batch, parse, Expr};
use srx_core::fit::{fit_constants, FitConfig};
use srx_core::score::{acc_tolerance, symbolic_match, Metrics, ToleranceConfig};
use srx_core::toolkit::extract_equation;
use srx_core::Params;

use crate::discover::num;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub equation: String,
}

#[derive(Deserialize)]
struct PredictionLine {
    id: Option<String>,
    equation: String,
}

/// One prediction per non-empty line: either a JSON object
/// `{"id": ..., "equation": ...}` or the bare equation text. Lines starting
/// with `#` are skipped.
pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let default_id = format!("line_{}", i + 1);
        if t.starts_with('{') {
            let p: PredictionLine = serde_json::from_str(t).with_context(|| format!("predictions line {}", i + 1))?;
            out.push(Prediction {
                id: p.id.unwrap_or(default_id),
                equation: p.equation,
            });
        } else {
            out.push(Prediction {
                id: default_id,
                equation: t.to_string(),
            });
        }
    }
    if out.is_empty() {
        bail!("no predictions found");
    }
    Ok(out)
}

fn split_columns(name: &str, table: Option<&DataTable>, expr: &Expr, params: &Params, taus: &[f64]) -> (Vec<String>, Vec<String>) {
    let Some(t) = table else {
        return (vec![String::new(); 2], vec![String::new(); taus.len()]);
    };
    let y = t.targets();
    let y_hat = eval_batch(expr, t, params);
    let m = Metrics::compute(&y, &y_hat);
    let acc = taus
        .iter()
        .map(|&tau| match acc_tolerance(&y, &y_hat, &ToleranceConfig::new(tau)) {
            Ok(b) => u8::from(b).to_string(),
            Err(e) => {
                tracing::debug!(split = name, error = %e, "acc undefined");
                String::new()
            }
        })
        .collect();
    (vec![num(m.mape), num(m.nmse)], acc)
}

pub fn header(taus: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = ["id", "status", "equation"].iter().map(|s| s.to_string()).collect();
    for s in ["train", "id", "ood"] {
        h.push(format!("{s}_mape"));
        h.push(format!("{s}_nmse"));
    }
    for s in ["id", "ood"] {
        for t in taus {
            h.push(format!("{s}_acc_{t}"));
        }
    }
    h.push("symbolic".into());
    h
}

/// Fit each prediction on the training split and score it everywhere.
/// Malformed predictions become error rows.
pub fn score(problem: &ProblemData, predictions: &[Prediction], taus: &[f64], fit: &FitConfig) -> Result<String> {
    let vars = problem.variable_names();
    let truth = problem
        .problem
        .ground_truth
        .as_deref()
        .map(|g| parse(g, &vars))
        .transpose()
        .context("problem ground truth does not parse")?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let width = header(taus).len();
    w.write_record(header(taus))?;
    for p in predictions {
        let mut row = vec![p.id.clone()];
        let expr = match extract_equation(&p.equation, &vars) {
            Ok(e) => e,
            Err(msg) => {
                row.push(format!("error: {msg}"));
                row.resize(width, String::new());
                w.write_record(&row)?;
                continue;
            }
        };
        let fitted = fit_constants(&expr, &problem.train, 0.001, fit)?;
        row.push(match &fitted.failure_reason {
            Some(r) => format!("error: {r}"),
            None => "ok".into(),
        });
        row.push(srx_core::expr::canonicalize(&expr).to_text(&vars));
        let mut accs = Vec::new();
        for (name, table) in [
            ("train", Some(&problem.train)),
            ("id", problem.test_id.as_ref()),
            ("ood", problem.test_ood.as_ref()),
        ] {
            let (metrics, acc) = split_columns(name, table, &expr, &fitted.params, taus);
            row.extend(metrics);
            if name != "train" {
                accs.extend(acc);
            }
        }
        row.extend(accs);
        row.push(truth.as_ref().map_or_else(String::new, |t| {
            serde_json::to_value(symbolic_match(&expr, t))
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default()
        }));
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_lines() {
        let p = parse_predictions("# header\nparams[0]*x\n\n{\"id\": \"a\", \"equation\": \"x\"}\n").unwrap();
        assert_eq!(
            p,
            vec![
                Prediction {
                    id: "line_2".into(),
                    equation: "params[0]*x".into()
                },
                Prediction {
                    id: "a".into(),
                    equation: "x".into()
                },
            ]
        );
        assert!(parse_predictions("\n# only comments\n").is_err());
    }
}
