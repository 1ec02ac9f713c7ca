//! File formats: field and diagnostics CSVs, Wavefront OBJ surface export,
//! Matrix Market operator export, and the flat key-value format used for
//! configs, manifests, and reports.
//!
//! All floats are written with 17 significant digits so identical runs
//! produce bit-identical files.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::epstein::EpsteinSample;
use crate::foliation::FoliationReport;
use crate::mesh::SurfaceMesh;
use crate::moebius::H3Point;

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

/// Per-node solution CSV: `id,re_z,im_z,v,u`.
pub fn write_field_csv(
    w: &mut impl Write,
    positions: &[Complex64],
    v: &DVector<f64>,
    u: &DVector<f64>,
) -> io::Result<()> {
    writeln!(w, "id,re_z,im_z,v,u")?;
    for i in 0..positions.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            i,
            fmt(positions[i].re),
            fmt(positions[i].im),
            fmt(v[i]),
            fmt(u[i])
        )?;
    }
    Ok(())
}

/// Run summary CSV: `h,residual_norm,newton_iters,u_min,u_max`.
pub fn write_summary_csv(
    w: &mut impl Write,
    rows: &[(f64, f64, usize, f64, f64)],
) -> io::Result<()> {
    writeln!(w, "h,residual_norm,newton_iters,u_min,u_max")?;
    for &(h, rn, iters, umin, umax) in rows {
        writeln!(w, "{},{},{},{},{}", fmt(h), fmt(rn), iters, fmt(umin), fmt(umax))?;
    }
    Ok(())
}

/// Epstein sample table: chart point, half-space point, mean and principal
/// curvatures.
pub fn write_samples_csv(w: &mut impl Write, samples: &[EpsteinSample]) -> io::Result<()> {
    writeln!(w, "re_z,im_z,x1,x2,y,mean_curv,lambda1,lambda2")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt(s.z.re),
            fmt(s.z.im),
            fmt(s.point.x1),
            fmt(s.point.x2),
            fmt(s.point.y),
            fmt(s.mean_curv),
            fmt(s.principal.0),
            fmt(s.principal.1)
        )?;
    }
    Ok(())
}

/// Triangulated OBJ of a surface sampled on a polar grid of points
/// (`rings` rows of `n_theta` points each, closing in theta). Quads between
/// consecutive rings are split into triangles.
pub fn write_polar_surface_obj(
    w: &mut impl Write,
    points: &[H3Point],
    rings: usize,
    n_theta: usize,
) -> io::Result<()> {
    assert_eq!(points.len(), rings * n_theta);
    writeln!(w, "# Epstein surface leaf ({} vertices)", points.len())?;
    for p in points {
        writeln!(w, "v {} {} {}", fmt(p.x1), fmt(p.x2), fmt(p.y))?;
    }
    for j in 0..rings.saturating_sub(1) {
        for k in 0..n_theta {
            let kn = (k + 1) % n_theta;
            let a = j * n_theta + k + 1;
            let b = j * n_theta + kn + 1;
            let c = (j + 1) * n_theta + kn + 1;
            let d = (j + 1) * n_theta + k + 1;
            writeln!(w, "f {a} {b} {c}")?;
            writeln!(w, "f {a} {c} {d}")?;
        }
    }
    Ok(())
}

/// OBJ of the fundamental-domain mesh in disc coordinates (z plane at
/// height 0), for inspection.
pub fn write_mesh_obj(w: &mut impl Write, mesh: &SurfaceMesh) -> io::Result<()> {
    writeln!(w, "# genus-2 octagon mesh, disc coordinates")?;
    for p in mesh.raw_positions() {
        writeln!(w, "v {} {} 0", fmt(p.re), fmt(p.im))?;
    }
    for t in mesh.raw_triangles() {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

/// Matrix Market coordinate export of a dense symmetric operator (lower
/// triangle of the nonzero entries).
pub fn write_matrix_market_symmetric(w: &mut impl Write, m: &DMatrix<f64>) -> io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    let n = m.nrows();
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..=i {
            if m[(i, j)] != 0.0 {
                entries.push((i + 1, j + 1, m[(i, j)]));
            }
        }
    }
    writeln!(w, "{} {} {}", n, n, entries.len())?;
    for (i, j, v) in entries {
        writeln!(w, "{} {} {}", i, j, fmt(v))?;
    }
    Ok(())
}

/// Matrix Market export of a diagonal (lumped) operator.
pub fn write_matrix_market_diagonal(w: &mut impl Write, d: &DVector<f64>) -> io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", d.len(), d.len(), d.len())?;
    for i in 0..d.len() {
        writeln!(w, "{} {} {}", i + 1, i + 1, fmt(d[i]))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Flat key-value files

/// Parses a flat `key = value` file. Lines starting with `#` and blank
/// lines are skipped. Later keys override earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, got `{line}`", lineno + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn write_key_values(w: &mut impl Write, kv: &BTreeMap<String, String>) -> io::Result<()> {
    for (k, v) in kv {
        writeln!(w, "{k} = {v}")?;
    }
    Ok(())
}

/// Serializes a foliation report as a flat key-value block.
pub fn foliation_report_kv(report: &FoliationReport) -> BTreeMap<String, String> {
    let mut kv = BTreeMap::new();
    kv.insert("monotone".into(), report.monotone.to_string());
    kv.insert("ordering_ok".into(), report.ordering_ok.to_string());
    if let Some(g) = report.min_leaf_gap {
        kv.insert("min_leaf_gap".into(), fmt(g));
    }
    if let Some((lo, hi)) = report.principal_range {
        kv.insert("principal_min".into(), fmt(lo));
        kv.insert("principal_max".into(), fmt(hi));
    }
    kv.insert("principal_flags".into(), report.principal_flags.to_string());
    if let Some(v) = report.window_violation {
        kv.insert("window_violation".into(), fmt(v));
    }
    kv.insert("intersection_flags".into(), report.intersection_flags.to_string());
    kv.insert("leaves".into(), report.per_leaf.len().to_string());
    kv
}

/// Per-leaf diagnostics CSV:
/// `h,lambda_min,lambda_max,max_residual,gap_to_previous`.
pub fn write_leaf_diagnostics_csv(w: &mut impl Write, report: &FoliationReport) -> io::Result<()> {
    writeln!(w, "h,lambda_min,lambda_max,max_residual,gap_to_previous")?;
    for d in &report.per_leaf {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt(d.h),
            fmt(d.lambda_min),
            fmt(d.lambda_max),
            fmt(d.max_residual),
            d.gap_to_previous.map(fmt).unwrap_or_default()
        )?;
    }
    Ok(())
}
