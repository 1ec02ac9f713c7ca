//! Run configuration: a flat, documented key-value file. Unknown keys are
//! errors so no setting can be silently ignored.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use cmcfol_core::io::parse_key_values;
use cmcfol_core::mesh::{FundamentalDomain, QDField, SurfaceMesh};
use cmcfol_core::solver::{ClosedContext, CmcContext, DiscContext, DiscGrid, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Disc,
    ClosedSurface,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub h_lo: f64,
    pub h_hi: f64,
    pub leaves: usize,
    /// Cubic developing-map coefficient (disc mode).
    pub epsilon: f64,
    pub grid_nr: usize,
    pub grid_ntheta: usize,
    pub grid_radius: f64,
    /// Mesh subdivision (closed-surface mode; also the validate mesh).
    pub subdiv: usize,
    /// Amplitude of the manufactured quadratic-differential bump
    /// (closed-surface mode).
    pub phi_amp: f64,
    pub phi_width: f64,
    pub solver: SolverConfig,
    pub fd_step: f64,
    pub sample_rings: usize,
    pub seed: u64,
    /// Input run directory for `export` and `report`.
    pub run_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Disc,
            h_lo: -0.9,
            h_hi: 0.9,
            leaves: 9,
            epsilon: 0.01,
            grid_nr: 16,
            grid_ntheta: 32,
            grid_radius: 0.85,
            subdiv: 4,
            phi_amp: 0.3,
            phi_width: 0.25,
            solver: SolverConfig::default(),
            fd_step: 1e-3,
            sample_rings: 2,
            seed: 12345,
            run_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<RunConfig, String> {
        let kv = parse_key_values(text)?;
        Self::from_kv(&kv)
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<RunConfig, String> {
        let mut cfg = RunConfig::default();
        for (k, v) in kv {
            let bad = |what: &str| format!("key `{k}`: invalid {what} `{v}`");
            match k.as_str() {
                "mode" => {
                    cfg.mode = match v.as_str() {
                        "disc" => Mode::Disc,
                        "closed_surface" => Mode::ClosedSurface,
                        _ => return Err(format!("mode must be `disc` or `closed_surface`, got `{v}`")),
                    }
                }
                "h_lo" => cfg.h_lo = v.parse().map_err(|_| bad("float"))?,
                "h_hi" => cfg.h_hi = v.parse().map_err(|_| bad("float"))?,
                "leaves" => cfg.leaves = v.parse().map_err(|_| bad("integer"))?,
                "epsilon" => cfg.epsilon = v.parse().map_err(|_| bad("float"))?,
                "grid_nr" => cfg.grid_nr = v.parse().map_err(|_| bad("integer"))?,
                "grid_ntheta" => cfg.grid_ntheta = v.parse().map_err(|_| bad("integer"))?,
                "grid_radius" => cfg.grid_radius = v.parse().map_err(|_| bad("float"))?,
                "subdiv" => cfg.subdiv = v.parse().map_err(|_| bad("integer"))?,
                "phi_amp" => cfg.phi_amp = v.parse().map_err(|_| bad("float"))?,
                "phi_width" => cfg.phi_width = v.parse().map_err(|_| bad("float"))?,
                "newton_tol" => cfg.solver.newton_tol = v.parse().map_err(|_| bad("float"))?,
                "max_newton" => cfg.solver.max_newton = v.parse().map_err(|_| bad("integer"))?,
                "h_step" => cfg.solver.h_step = v.parse().map_err(|_| bad("float"))?,
                "h_step_min" => cfg.solver.h_step_min = v.parse().map_err(|_| bad("float"))?,
                "use_t_param" => cfg.solver.use_t_param = v.parse().map_err(|_| bad("bool"))?,
                "damping" => cfg.solver.damping = v.parse().map_err(|_| bad("float"))?,
                "fd_step" => cfg.fd_step = v.parse().map_err(|_| bad("float"))?,
                "sample_rings" => cfg.sample_rings = v.parse().map_err(|_| bad("integer"))?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad("integer"))?,
                "run_dir" => cfg.run_dir = Some(PathBuf::from(v)),
                other => return Err(format!("unknown config key `{other}`")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.h_lo > -1.0 && self.h_hi < 1.0 && self.h_lo <= self.h_hi) {
            return Err(format!(
                "mean-curvature range [{}, {}] must sit strictly inside (-1, 1)",
                self.h_lo, self.h_hi
            ));
        }
        if self.leaves < 1 {
            return Err("leaves must be at least 1".into());
        }
        if self.grid_ntheta % 2 != 0 {
            return Err("grid_ntheta must be even".into());
        }
        if !(self.grid_radius > 0.0 && self.grid_radius < 1.0) {
            return Err("grid_radius must lie in (0, 1)".into());
        }
        if self.subdiv < 2 {
            return Err("subdiv must be at least 2".into());
        }
        if self.solver.newton_tol <= 0.0
            || self.solver.h_step <= 0.0
            || self.solver.h_step_min <= 0.0
            || self.solver.h_step_min >= self.solver.h_step
        {
            return Err("solver tolerances must be positive with h_step_min < h_step".into());
        }
        Ok(())
    }

    /// Manifest echo of every effective setting.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        kv.insert(
            "mode".into(),
            match self.mode {
                Mode::Disc => "disc".into(),
                Mode::ClosedSurface => "closed_surface".to_string(),
            },
        );
        kv.insert("h_lo".into(), format!("{:.17e}", self.h_lo));
        kv.insert("h_hi".into(), format!("{:.17e}", self.h_hi));
        kv.insert("leaves".into(), self.leaves.to_string());
        kv.insert("epsilon".into(), format!("{:.17e}", self.epsilon));
        kv.insert("grid_nr".into(), self.grid_nr.to_string());
        kv.insert("grid_ntheta".into(), self.grid_ntheta.to_string());
        kv.insert("grid_radius".into(), format!("{:.17e}", self.grid_radius));
        kv.insert("subdiv".into(), self.subdiv.to_string());
        kv.insert("phi_amp".into(), format!("{:.17e}", self.phi_amp));
        kv.insert("phi_width".into(), format!("{:.17e}", self.phi_width));
        kv.insert("newton_tol".into(), format!("{:.17e}", self.solver.newton_tol));
        kv.insert("max_newton".into(), self.solver.max_newton.to_string());
        kv.insert("h_step".into(), format!("{:.17e}", self.solver.h_step));
        kv.insert("h_step_min".into(), format!("{:.17e}", self.solver.h_step_min));
        kv.insert("use_t_param".into(), self.solver.use_t_param.to_string());
        kv.insert("damping".into(), format!("{:.17e}", self.solver.damping));
        kv.insert("fd_step".into(), format!("{:.17e}", self.fd_step));
        kv.insert("sample_rings".into(), self.sample_rings.to_string());
        kv.insert("seed".into(), self.seed.to_string());
        kv
    }

    pub fn build_context(&self) -> Result<CmcContext, String> {
        match self.mode {
            Mode::Disc => {
                let grid = DiscGrid {
                    n_r: self.grid_nr,
                    n_theta: self.grid_ntheta,
                    radius: self.grid_radius,
                };
                DiscContext::new_cubic(grid, self.epsilon)
                    .map(CmcContext::Disc)
                    .map_err(|e| e.to_string())
            }
            Mode::ClosedSurface => {
                let mesh = SurfaceMesh::build(&FundamentalDomain::regular_octagon(), self.subdiv)
                    .map_err(|e| e.to_string())?;
                let mesh = Arc::new(mesh);
                let phi = QDField::bump(&mesh, self.phi_amp, self.phi_width);
                ClosedContext::new(mesh, phi)
                    .map(CmcContext::Closed)
                    .map_err(|e| e.to_string())
            }
        }
    }

    /// Requested leaf values: a uniform H grid, endpoints included.
    pub fn requested_h(&self) -> Vec<f64> {
        if self.leaves == 1 {
            return vec![0.5 * (self.h_lo + self.h_hi)];
        }
        (0..self.leaves)
            .map(|k| {
                self.h_lo + (self.h_hi - self.h_lo) * k as f64 / (self.leaves as f64 - 1.0)
            })
            .collect()
    }
}
