//! Long-format CSV reshaping of branch, census and eigenfunction outputs.

use std::path::{Path, PathBuf};

use super::{Kind, RunManifest};
use crate::error::{HjbError, Result};
use crate::grid::csv_err;

struct Wide {
    coords: Vec<String>,
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_wide(path: &Path) -> Result<Wide> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let n_coords = header.iter().take_while(|h| matches!(h.as_str(), "x" | "y" | "z")).count();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(csv_err)?;
    Ok(Wide {
        coords: header[..n_coords].to_vec(),
        columns: header[n_coords..].to_vec(),
        rows,
    })
}

fn writer(path: &Path, header: &[String]) -> Result<csv::Writer<std::fs::File>> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    Ok(w)
}

fn branches_long(src: &Path, out: &Path) -> Result<()> {
    let wide = read_wide(src)?;
    let nc = wide.coords.len();
    let mut header = vec!["t".to_string()];
    header.extend(wide.coords.iter().cloned());
    header.extend(["u_low".to_string(), "u_up".to_string()]);
    let mut w = writer(out, &header)?;
    let mut ts: Vec<String> = Vec::new();
    for c in &wide.columns {
        if let Some(t) = c.strip_prefix("u_low@") {
            ts.push(t.to_string());
        }
    }
    for t in &ts {
        let lo = wide.columns.iter().position(|c| c == &format!("u_low@{t}"));
        let up = wide.columns.iter().position(|c| c == &format!("u_up@{t}"));
        let (Some(lo), Some(up)) = (lo, up) else {
            return Err(HjbError::Config(format!("{}: unpaired branch column at t = {t}", src.display())));
        };
        for row in &wide.rows {
            let mut rec = vec![t.clone()];
            rec.extend(row[..nc].iter().cloned());
            rec.push(row[nc + lo].clone());
            rec.push(row[nc + up].clone());
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn census_long(src: &Path, out: &Path) -> Result<()> {
    let wide = read_wide(src)?;
    let nc = wide.coords.len();
    let mut header = vec!["t".to_string(), "cluster".to_string()];
    header.extend(wide.coords.iter().cloned());
    header.push("u".to_string());
    let mut w = writer(out, &header)?;
    for (j, c) in wide.columns.iter().enumerate() {
        let (t, k) = c
            .strip_prefix("u@")
            .and_then(|s| s.split_once('#'))
            .ok_or_else(|| HjbError::Config(format!("{}: unexpected column {c}", src.display())))?;
        for row in &wide.rows {
            let mut rec = vec![t.to_string(), k.to_string()];
            rec.extend(row[..nc].iter().cloned());
            rec.push(row[nc + j].clone());
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn eigen_long(src: &Path, out: &Path) -> Result<()> {
    let wide = read_wide(src)?;
    let nc = wide.coords.len();
    let mut header = vec!["sign".to_string()];
    header.extend(wide.coords.iter().cloned());
    header.push("phi".to_string());
    let mut w = writer(out, &header)?;
    for (j, c) in wide.columns.iter().enumerate() {
        let sign = c.strip_prefix("phi_").unwrap_or(c);
        for row in &wide.rows {
            let mut rec = vec![sign.to_string()];
            rec.extend(row[..nc].iter().cloned());
            rec.push(row[nc + j].clone());
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes long-format CSVs next to the manifest, under `plotdata/`.
pub fn emit_plotdata(manifest_path: &Path) -> Result<Vec<PathBuf>> {
    let manifest = RunManifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let target = root.join("plotdata");
    std::fs::create_dir_all(&target)?;
    let mut written = Vec::new();
    for e in &manifest.experiments {
        let (file, out, f): (&str, &str, fn(&Path, &Path) -> Result<()>) = match e.kind {
            Kind::Branches => ("branches/branches_fields.csv", "branches_long.csv", branches_long),
            Kind::Census => ("census/census_fields.csv", "census_profiles.csv", census_long),
            Kind::Eigen => ("eigen/eigen_fields.csv", "eigen_profiles.csv", eigen_long),
            _ => continue,
        };
        if !e.files.iter().any(|f| f.path == file) {
            continue;
        }
        let src = root.join(file);
        if !src.exists() {
            return Err(HjbError::Config(format!("missing upstream output {}", src.display())));
        }
        let dst = target.join(out);
        f(&src, &dst)?;
        written.push(dst);
    }
    if written.is_empty() {
        return Err(HjbError::Config(
            "manifest references no branch, census or eigen outputs".into(),
        ));
    }
    Ok(written)
}
