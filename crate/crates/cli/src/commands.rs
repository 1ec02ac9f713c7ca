//! Command implementations. Exit codes: 0 success, 1 validation or solve
//! failure, 2 usage/config errors (missing files, malformed configs,
//! rejected parameter ranges).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cmcfol_core::foliation::Foliation;
use cmcfol_core::io;
use cmcfol_core::solver::{
    continuation, solve_at, u_from_v, CmcContext, ContinuationEntry, ContinuationResult,
};
use cmcfol_core::validate::{self, ValidateOptions};
use num_complex::Complex64;

use crate::config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub struct Invocation {
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub verbosity: u8,
}

impl Invocation {
    fn load_config(&self) -> Result<RunConfig, String> {
        let text = fs::read_to_string(&self.config_path)
            .map_err(|e| format!("cannot read config {}: {e}", self.config_path.display()))?;
        let mut cfg = RunConfig::from_text(&text)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn say(&self, level: u8, msg: &str) {
        if self.verbosity >= level {
            println!("{msg}");
        }
    }
}

pub fn cmd_validate(inv: &Invocation) -> i32 {
    let cfg = match inv.load_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Err(e) = fs::create_dir_all(&inv.out_dir) {
        eprintln!("cannot create {}: {e}", inv.out_dir.display());
        return EXIT_USAGE;
    }
    let opts = ValidateOptions { seed: cfg.seed, fd_step: cfg.fd_step, subdiv: cfg.subdiv };
    let results = validate::run_all(&opts);
    let mut table = String::new();
    let mut all_ok = true;
    for r in &results {
        let line = format!(
            "{} {:<38} measured {:>12.4e}  threshold {:>9.2e}  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.measured,
            r.threshold,
            r.note
        );
        inv.say(1, &line);
        table.push_str(&line);
        table.push('\n');
        all_ok &= r.passed;
    }
    let verdict = if all_ok { "all checks passed" } else { "CHECKS FAILED" };
    inv.say(1, verdict);
    table.push_str(verdict);
    table.push('\n');
    if fs::write(inv.out_dir.join("validation.txt"), table).is_err() {
        eprintln!("cannot write validation table");
        return EXIT_USAGE;
    }
    if all_ok {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

fn run_continuation(
    inv: &Invocation,
    cfg: &RunConfig,
) -> Result<(CmcContext, ContinuationResult, Vec<ContinuationEntry>), i32> {
    let ctx = match cfg.build_context() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("context error: {e}");
            return Err(EXIT_USAGE);
        }
    };
    inv.say(2, &format!("context: {} with {} unknowns", ctx.mode_name(), ctx.n_unknowns()));
    let result = match continuation((cfg.h_lo, cfg.h_hi), &ctx, &cfg.solver) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("continuation failed: {e}");
            return Err(EXIT_FAIL);
        }
    };
    let entries = match solve_at(&cfg.requested_h(), &result, &ctx, &cfg.solver) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("corrector solve failed: {e}");
            return Err(EXIT_FAIL);
        }
    };
    Ok((ctx, result, entries))
}

fn write_manifest(out: &Path, cfg: &RunConfig) -> std::io::Result<()> {
    let mut f = fs::File::create(out.join("manifest.txt"))?;
    writeln!(f, "# cmcfol run manifest")?;
    writeln!(f, "# tool version {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "# every effective setting is echoed below; rerunning with")?;
    writeln!(f, "# this file as the config reproduces the run bit for bit")?;
    io::write_key_values(&mut f, &cfg.to_kv())
}

fn write_run_artifacts(
    out: &Path,
    cfg: &RunConfig,
    ctx: &CmcContext,
    result: &ContinuationResult,
    entries: &[ContinuationEntry],
) -> std::io::Result<()> {
    fs::create_dir_all(out.join("leaves"))?;
    write_manifest(out, cfg)?;
    let positions = ctx.positions();
    let mut rows = Vec::new();
    for (k, e) in entries.iter().enumerate() {
        let u = u_from_v(e.h, &e.v).expect("entries sit inside (-1, 1)");
        rows.push((e.h, e.residual_norm, e.newton_iters, u.min(), u.max()));
        let mut f = fs::File::create(out.join("leaves").join(format!("leaf_{k:03}.csv")))?;
        io::write_field_csv(&mut f, &positions, &e.v, &u)?;
    }
    let mut f = fs::File::create(out.join("summary.csv"))?;
    io::write_summary_csv(&mut f, &rows)?;
    let mut log = fs::File::create(out.join("convergence.log"))?;
    writeln!(log, "# continuation {}", result.anchors)?;
    for (h, hist) in &result.logs {
        for (it, r) in hist.iter().enumerate() {
            writeln!(log, "H={h:.12e} iter={it} residual={r:.6e}")?;
        }
    }
    Ok(())
}

pub fn cmd_solve(inv: &Invocation) -> i32 {
    let cfg = match inv.load_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Err(e) = fs::create_dir_all(&inv.out_dir) {
        eprintln!("cannot create {}: {e}", inv.out_dir.display());
        return EXIT_USAGE;
    }
    let (ctx, result, entries) = match run_continuation(inv, &cfg) {
        Ok(t) => t,
        Err(code) => return code,
    };
    if let Err(e) = write_run_artifacts(&inv.out_dir, &cfg, &ctx, &result, &entries) {
        eprintln!("cannot write run artifacts: {e}");
        return EXIT_USAGE;
    }
    for e in &entries {
        inv.say(
            2,
            &format!("H = {:+.4}: residual {:.3e}, {} iterations", e.h, e.residual_norm, e.newton_iters),
        );
    }
    inv.say(
        1,
        &format!(
            "solved {} leaves over [{}, {}] ({} continuation entries); artifacts in {}",
            entries.len(),
            cfg.h_lo,
            cfg.h_hi,
            result.entries.len(),
            inv.out_dir.display()
        ),
    );
    EXIT_OK
}

pub fn cmd_foliate(inv: &Invocation) -> i32 {
    let cfg = match inv.load_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Err(e) = fs::create_dir_all(&inv.out_dir) {
        eprintln!("cannot create {}: {e}", inv.out_dir.display());
        return EXIT_USAGE;
    }
    let (ctx, result, entries) = match run_continuation(inv, &cfg) {
        Ok(t) => t,
        Err(code) => return code,
    };
    if let Err(e) = write_run_artifacts(&inv.out_dir, &cfg, &ctx, &result, &entries) {
        eprintln!("cannot write run artifacts: {e}");
        return EXIT_USAGE;
    }
    let (fol, report) = match &ctx {
        CmcContext::Disc(disc) => {
            let fol = match Foliation::assemble_disc(disc, &entries, cfg.fd_step, cfg.sample_rings)
            {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("foliation assembly failed: {e}");
                    return EXIT_FAIL;
                }
            };
            let report = match fol.monotonicity_check(Some(disc), cfg.fd_step) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("foliation check failed: {e}");
                    return EXIT_FAIL;
                }
            };
            (fol, report)
        }
        CmcContext::Closed(_) => {
            let fol = match Foliation::assemble_closed(&entries) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("foliation assembly failed: {e}");
                    return EXIT_FAIL;
                }
            };
            let report = match fol.monotonicity_check(None, cfg.fd_step) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("foliation check failed: {e}");
                    return EXIT_FAIL;
                }
            };
            (fol, report)
        }
    };
    let _ = fol;
    let kv = io::foliation_report_kv(&report);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(inv.out_dir.join("foliation_report.txt"))?;
        io::write_key_values(&mut f, &kv)?;
        let mut f = fs::File::create(inv.out_dir.join("foliation_leaves.csv"))?;
        io::write_leaf_diagnostics_csv(&mut f, &report)?;
        Ok(())
    };
    if let Err(e) = write() {
        eprintln!("cannot write foliation report: {e}");
        return EXIT_USAGE;
    }
    for (k, v) in &kv {
        inv.say(1, &format!("{k} = {v}"));
    }
    let ok = report.monotone
        && report.ordering_ok
        && report.intersection_flags == 0
        && report.principal_flags == 0
        && report.window_violation.map_or(true, |v| v <= 0.0);
    if ok {
        inv.say(1, "foliation checks passed");
        EXIT_OK
    } else {
        eprintln!("foliation checks FAILED (see foliation_report.txt)");
        EXIT_FAIL
    }
}

fn read_leaf_fields(run_dir: &Path) -> Result<Vec<(f64, Vec<f64>)>, String> {
    let summary = fs::read_to_string(run_dir.join("summary.csv"))
        .map_err(|_| format!("missing run artifact {}/summary.csv", run_dir.display()))?;
    let mut hs = Vec::new();
    for line in summary.lines().skip(1) {
        let h: f64 = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("malformed summary line `{line}`"))?;
        hs.push(h);
    }
    let mut out = Vec::new();
    for (k, h) in hs.iter().enumerate() {
        let path = run_dir.join("leaves").join(format!("leaf_{k:03}.csv"));
        let text =
            fs::read_to_string(&path).map_err(|_| format!("missing leaf file {}", path.display()))?;
        let mut v = Vec::new();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(format!("malformed leaf row `{line}`"));
            }
            v.push(cols[3].parse().map_err(|_| format!("bad v in `{line}`"))?);
        }
        out.push((*h, v));
    }
    Ok(out)
}

pub fn cmd_export(inv: &Invocation) -> i32 {
    let cfg = match inv.load_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_USAGE;
        }
    };
    let run_dir = cfg.run_dir.clone().unwrap_or_else(|| inv.out_dir.clone());
    let manifest_path = run_dir.join("manifest.txt");
    let manifest_text = match fs::read_to_string(&manifest_path) {
        Ok(t) => t,
        Err(_) => {
            eprintln!("missing run artifact {}", manifest_path.display());
            return EXIT_USAGE;
        }
    };
    let run_cfg = match RunConfig::from_text(&manifest_text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("malformed manifest: {e}");
            return EXIT_USAGE;
        }
    };
    let leaves = match read_leaf_fields(&run_dir) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_USAGE;
        }
    };
    let export_dir = run_dir.join("export");
    if let Err(e) = fs::create_dir_all(&export_dir) {
        eprintln!("cannot create {}: {e}", export_dir.display());
        return EXIT_USAGE;
    }
    let ctx = match run_cfg.build_context() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("context error: {e}");
            return EXIT_USAGE;
        }
    };
    match &ctx {
        CmcContext::Disc(disc) => {
            let rings = run_cfg.grid_nr.max(8) / 2 + 2;
            let n_theta = run_cfg.grid_ntheta;
            let r_max = 0.7 * run_cfg.grid_radius;
            for (k, (h, v)) in leaves.iter().enumerate() {
                let v = nalgebra::DVector::from_vec(v.clone());
                let u = match u_from_v(*h, &v) {
                    Ok(u) => u,
                    Err(e) => {
                        eprintln!("leaf {k}: {e}");
                        return EXIT_FAIL;
                    }
                };
                let mut points = Vec::with_capacity(rings * n_theta);
                let mut samples = Vec::new();
                for j in 1..=rings {
                    let r = r_max * j as f64 / rings as f64;
                    for t in 0..n_theta {
                        let theta = 2.0 * std::f64::consts::PI * t as f64 / n_theta as f64;
                        let z = Complex64::from_polar(r, theta);
                        let metric = match disc.fitted_metric(&u, z, disc.default_fit_radius()) {
                            Ok(m) => m,
                            Err(e) => {
                                eprintln!("leaf {k}: {e}");
                                return EXIT_FAIL;
                            }
                        };
                        match cmcfol_core::epstein::epstein_chart(&disc.f, &metric, z) {
                            Ok(p) => points.push(p),
                            Err(e) => {
                                eprintln!("leaf {k}: {e}");
                                return EXIT_FAIL;
                            }
                        }
                    }
                }
                if let Ok(s) =
                    cmcfol_core::foliation::sample_leaf(disc, &u, run_cfg.fd_step, run_cfg.sample_rings)
                {
                    samples = s;
                }
                let write = || -> std::io::Result<()> {
                    let mut f =
                        fs::File::create(export_dir.join(format!("leaf_{k:03}.obj")))?;
                    io::write_polar_surface_obj(&mut f, &points, rings, n_theta)?;
                    let mut f =
                        fs::File::create(export_dir.join(format!("leaf_{k:03}_samples.csv")))?;
                    io::write_samples_csv(&mut f, &samples)?;
                    Ok(())
                };
                if let Err(e) = write() {
                    eprintln!("cannot write export files: {e}");
                    return EXIT_USAGE;
                }
            }
            inv.say(1, &format!("exported {} OBJ leaves to {}", leaves.len(), export_dir.display()));
        }
        CmcContext::Closed(closed) => {
            let write = || -> std::io::Result<()> {
                let mut f = fs::File::create(export_dir.join("mesh.obj"))?;
                io::write_mesh_obj(&mut f, &closed.mesh)?;
                let mut f = fs::File::create(export_dir.join("stiffness.mtx"))?;
                io::write_matrix_market_symmetric(&mut f, &closed.mesh.stiffness)?;
                let mut f = fs::File::create(export_dir.join("mass.mtx"))?;
                io::write_matrix_market_diagonal(&mut f, &closed.mesh.mass)?;
                Ok(())
            };
            if let Err(e) = write() {
                eprintln!("cannot write export files: {e}");
                return EXIT_USAGE;
            }
            inv.say(
                1,
                &format!(
                    "exported the fundamental-domain mesh and operators to {}",
                    export_dir.display()
                ),
            );
        }
    }
    EXIT_OK
}

pub fn cmd_report(inv: &Invocation) -> i32 {
    let cfg = match inv.load_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_USAGE;
        }
    };
    let run_dir = cfg.run_dir.clone().unwrap_or_else(|| inv.out_dir.clone());
    let summary = match fs::read_to_string(run_dir.join("summary.csv")) {
        Ok(t) => t,
        Err(_) => {
            eprintln!("missing run artifact {}/summary.csv", run_dir.display());
            return EXIT_USAGE;
        }
    };
    inv.say(1, &format!("run at {}", run_dir.display()));
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    for line in summary.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() == 5 {
            inv.say(
                1,
                &format!(
                    "H = {:>10}  residual = {:>12}  iters = {:>2}  u in [{}, {}]",
                    &cols[0][..10.min(cols[0].len())],
                    &cols[1][..12.min(cols[1].len())],
                    cols[2],
                    &cols[3][..10.min(cols[3].len())],
                    &cols[4][..10.min(cols[4].len())]
                ),
            );
        }
    }
    if let Ok(text) = fs::read_to_string(run_dir.join("foliation_report.txt")) {
        if let Ok(parsed) = io::parse_key_values(&text) {
            kv = parsed;
        }
        inv.say(1, "foliation report:");
        for (k, v) in &kv {
            inv.say(1, &format!("  {k} = {v}"));
        }
    }
    EXIT_OK
}
