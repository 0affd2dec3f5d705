use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use srx_core::synth::{parse_skeleton_specs, synthesize, write_problem, SkeletonSpec, SynthOutcome};

use crate::manifest::ConfigError;

pub struct SynthRow {
    pub id: String,
    pub rejected: Option<String>,
    pub sizes: Option<(usize, usize, usize)>,
}

/// Read specs from a file or from every `*.json` file in a directory, in
/// file-name order.
pub fn read_specs(path: &Path) -> Result<Vec<SkeletonSpec>, ConfigError> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut f: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| ConfigError(format!("cannot list {}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        f.sort();
        f
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        return Err(ConfigError(format!("spec path {} does not exist", path.display())));
    };
    let mut specs = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(|e| ConfigError(format!("cannot read {}: {e}", f.display())))?;
        let mut s = parse_skeleton_specs(&text).map_err(|e| ConfigError(format!("{}: {e}", f.display())))?;
        specs.append(&mut s);
    }
    if specs.is_empty() {
        return Err(ConfigError(format!("no skeleton specs under {}", path.display())));
    }
    let mut seen = BTreeSet::new();
    for s in &specs {
        s.validate().map_err(|e| ConfigError(e.to_string()))?;
        if !seen.insert(s.id.clone()) {
            return Err(ConfigError(format!("duplicate spec id `{}`", s.id)));
        }
    }
    Ok(specs)
}

/// Synthesize every spec into `out/<id>/`, then write `synth_report.csv`
/// and a `manifest.json` listing the accepted problems.
pub fn synth(specs: &[SkeletonSpec], out: &Path, seed: u64, parallel: usize) -> Result<Vec<SynthRow>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallel).build()?;
    let rows: Vec<Result<SynthRow>> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| -> Result<SynthRow> {
                match synthesize(spec, seed)? {
                    SynthOutcome::Accepted(p) => {
                        let dir = out.join(&spec.id);
                        write_problem(&dir, &p).with_context(|| format!("writing {}", dir.display()))?;
                        let s = &p.splits;
                        Ok(SynthRow {
                            id: spec.id.clone(),
                            rejected: None,
                            sizes: Some((s.train.n_rows(), s.test_id.n_rows(), s.test_ood.n_rows())),
                        })
                    }
                    SynthOutcome::Rejected(reason) => {
                        tracing::warn!(spec = %spec.id, %reason, "rejected");
                        Ok(SynthRow {
                            id: spec.id.clone(),
                            rejected: Some(reason.to_string()),
                            sizes: None,
                        })
                    }
                }
            })
            .collect()
    });
    let rows: Vec<SynthRow> = rows.into_iter().collect::<Result<_>>()?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "status", "reason", "train", "test_id", "test_ood"])?;
    for r in &rows {
        let (a, b, c) = r
            .sizes
            .map_or((String::new(), String::new(), String::new()), |(a, b, c)| {
                (a.to_string(), b.to_string(), c.to_string())
            });
        let status = if r.rejected.is_some() { "rejected" } else { "accepted" };
        w.write_record([r.id.as_str(), status, r.rejected.as_deref().unwrap_or(""), &a, &b, &c])?;
    }
    fs::write(out.join("synth_report.csv"), w.into_inner()?)?;

    let problems: Vec<String> = rows
        .iter()
        .filter(|r| r.rejected.is_none())
        .map(|r| format!("{}/problem.json", r.id))
        .collect();
    let manifest = serde_json::json!({ "problems": problems });
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(rows)
}
