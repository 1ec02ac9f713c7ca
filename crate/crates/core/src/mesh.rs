//! Discrete closed genus-2 hyperbolic surface: a regular hyperbolic octagon
//! in the Poincaré disc (vertex angle pi/4) with side pairings realizing the
//! identification pattern `a b a^-1 b^-1 c d c^-1 d^-1`, meshed so that
//! paired sides receive mirror-image node layouts.
//!
//! Operator conventions:
//! - The stiffness matrix uses Euclidean cotangent weights in disc
//!   coordinates. The 2D Dirichlet energy is conformally invariant, so the
//!   flat cotangent matrix is the hyperbolic stiffness matrix.
//! - The mass is lumped: each canonical node receives one third of the
//!   hyperbolic area (Gauss-Bonnet angle defect) of its incident triangles.
//! - The Laplacian is `div grad`, i.e. `lap v = -mass^{-1} stiffness v`,
//!   negative semidefinite with kernel the constants.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::moebius::{disc_distance, disc_geodesic_point, MoebiusMap};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("side pairing failed: {0}")]
    MeshPairingFailure(String),
    #[error("field has {found} entries, mesh has {expected} canonical nodes")]
    SizeMismatch { expected: usize, found: usize },
    #[error("helmholtz coefficient must be strictly positive, min entry {0}")]
    NotPositive(f64),
    #[error("linear solve failed: {0}")]
    SolverFailure(String),
    #[error("quadratic-differential data violates the pairing cocycle: residual {0:.3e} exceeds tolerance {1:.3e}")]
    NonEquivariant(f64, f64),
    #[error("chart derivative stencil too small around node {0} ({1} samples)")]
    StencilTooSmall(usize, usize),
}

pub type Result<T> = std::result::Result<T, MeshError>;

/// Real field with one value per canonical node.
pub type ScalarField = DVector<f64>;

const PAIRING_SNAP_TOL: f64 = 1e-8;

/// One side-pairing isometry of the octagon: maps the source side onto the
/// target side with reversed endpoint order.
#[derive(Debug, Clone)]
pub struct SidePairing {
    pub source_side: usize,
    pub target_side: usize,
    pub map: MoebiusMap,
}

/// Regular hyperbolic octagon centered at the origin with vertex angle pi/4
/// and the commutator side-pairing pattern.
#[derive(Debug, Clone)]
pub struct FundamentalDomain {
    /// Corner `k` sits at angle `(2k - 1) pi / 8`; side `k` runs from corner
    /// `k` to corner `k + 1`.
    pub vertices: [Complex64; 8],
    pub pairings: [SidePairing; 4],
}

impl FundamentalDomain {
    pub fn regular_octagon() -> FundamentalDomain {
        // Circumradius R of the regular octagon with vertex angle pi/4:
        // cosh R = cot^2(pi/8); disc radius tanh(R/2) = 2^{-1/4}.
        let cot = 1.0 / (std::f64::consts::PI / 8.0).tan();
        let r_disc = ((cot * cot).acosh() / 2.0).tanh();
        let mut vertices = [Complex64::ZERO; 8];
        for (k, v) in vertices.iter_mut().enumerate() {
            let angle = (2.0 * k as f64 - 1.0) * std::f64::consts::PI / 8.0;
            *v = Complex64::from_polar(r_disc, angle);
        }
        // Sides 0..7 carry the boundary word a b a^-1 b^-1 c d c^-1 d^-1;
        // each generator maps the inverse-labelled side onto its partner
        // with endpoints reversed.
        let pairs = [(2usize, 0usize), (3, 1), (6, 4), (7, 5)];
        let pairings = pairs.map(|(src, tgt)| {
            let (p1, p2) = (vertices[src], vertices[(src + 1) % 8]);
            let (q1, q2) = (vertices[(tgt + 1) % 8], vertices[tgt]);
            let map = MoebiusMap::disc_two_point(p1, p2, q1, q2);
            let e1 = (map.apply_finite(p1) - q1).norm();
            let e2 = (map.apply_finite(p2) - q2).norm();
            assert!(
                e1 < 1e-10 && e2 < 1e-10,
                "pairing endpoint mismatch: {e1:.2e}, {e2:.2e}"
            );
            SidePairing { source_side: src, target_side: tgt, map }
        });
        FundamentalDomain { vertices, pairings }
    }

    /// Sum of the interior angles at the eight corners. Equals 2 pi for the
    /// regular octagon with vertex angle pi/4.
    pub fn corner_angle_sum(&self) -> f64 {
        let mut sum = 0.0;
        for k in 0..8 {
            let p = self.vertices[k];
            let prev = self.vertices[(k + 7) % 8];
            let next = self.vertices[(k + 1) % 8];
            sum += disc_angle_at(p, prev, next);
        }
        sum
    }

    /// Hyperbolic side length (all sides congruent).
    pub fn side_length(&self) -> f64 {
        disc_distance(self.vertices[0], self.vertices[1])
    }
}

/// Interior angle at `p` of the geodesic wedge toward `q` and `r`.
fn disc_angle_at(p: Complex64, q: Complex64, r: Complex64) -> f64 {
    let t = MoebiusMap::disc_to_origin(p);
    let u = t.apply_finite(q);
    let v = t.apply_finite(r);
    let cosang = (u.re * v.re + u.im * v.im) / (u.norm() * v.norm());
    cosang.clamp(-1.0, 1.0).acos()
}

/// A boundary identification: the source raw node is the same surface point
/// as the target raw node, and `map` carries the source chart onto the
/// target chart, `map(z_src) = z_dst`.
#[derive(Debug, Clone)]
pub struct GluePair {
    pub src: usize,
    pub dst: usize,
    pub map: MoebiusMap,
}

/// Mesh of the identified octagon with assembled operators.
pub struct SurfaceMesh {
    pub subdiv: usize,
    raw_pos: Vec<Complex64>,
    raw_tris: Vec<[usize; 3]>,
    canon_of_raw: Vec<usize>,
    /// For each raw node, the isometry carrying its chart to the chart of
    /// its canonical representative.
    transport: Vec<MoebiusMap>,
    canon_pos: Vec<Complex64>,
    raw_adjacency: Vec<Vec<usize>>,
    glue_pairs: Vec<GluePair>,
    glue_of_raw: Vec<Vec<usize>>,
    pub stiffness: DMatrix<f64>,
    pub mass: DVector<f64>,
    euler: i64,
}

// Union-find whose links carry the isometry from child chart to parent
// chart.
struct TransportUf {
    parent: Vec<usize>,
    to_parent: Vec<MoebiusMap>,
}

impl TransportUf {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            to_parent: vec![MoebiusMap::identity(); n],
        }
    }

    fn find(&mut self, i: usize) -> (usize, MoebiusMap) {
        if self.parent[i] == i {
            return (i, self.to_parent[i]);
        }
        let (root, up) = self.find(self.parent[i]);
        let total = up.compose(&self.to_parent[i]);
        self.parent[i] = root;
        self.to_parent[i] = total;
        (root, total)
    }

    /// Glues `a` to `b` where `g` maps the chart of `a` onto the chart of
    /// `b`.
    fn union(&mut self, a: usize, b: usize, g: &MoebiusMap) {
        let (ra, pa) = self.find(a);
        let (rb, pb) = self.find(b);
        if ra == rb {
            return;
        }
        // Chart of ra -> chart of rb: pb o g o pa^{-1}.
        let n = pb.compose(g).compose(&pa.inverse());
        self.parent[ra] = rb;
        self.to_parent[ra] = n;
    }
}

impl SurfaceMesh {
    /// Builds the mesh at the given subdivision level (`subdiv >= 1` rings
    /// per slice).
    pub fn build(fd: &FundamentalDomain, subdiv: usize) -> Result<SurfaceMesh> {
        assert!(subdiv >= 1);
        let n = subdiv;
        // Node layout: center, then ray nodes (8 rays x n rings), then
        // slice-interior nodes. Radial rays are shared between adjacent
        // slices by construction.
        let mut raw_pos: Vec<Complex64> = vec![Complex64::ZERO];
        let mut ray_id = vec![vec![0usize; n + 1]; 8];
        for (s, ids) in ray_id.iter_mut().enumerate() {
            for (l, id) in ids.iter_mut().enumerate().skip(1) {
                *id = raw_pos.len();
                raw_pos.push(disc_geodesic_point(
                    Complex64::ZERO,
                    fd.vertices[s],
                    l as f64 / n as f64,
                ));
            }
        }
        let mut interior_id: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
        for s in 0..8 {
            for l in 2..=n {
                let a = raw_pos[ray_id[s][l]];
                let b = raw_pos[ray_id[(s + 1) % 8][l]];
                for j in 1..l {
                    interior_id.insert((s, l, j), raw_pos.len());
                    raw_pos.push(disc_geodesic_point(a, b, j as f64 / l as f64));
                }
            }
        }
        let idx = |s: usize, l: usize, j: usize| -> usize {
            if l == 0 {
                0
            } else if j == 0 {
                ray_id[s][l]
            } else if j == l {
                ray_id[(s + 1) % 8][l]
            } else {
                interior_id[&(s, l, j)]
            }
        };

        let mut raw_tris: Vec<[usize; 3]> = Vec::with_capacity(8 * n * n);
        for s in 0..8 {
            for l in 1..=n {
                for j in 0..l {
                    raw_tris.push([idx(s, l, j), idx(s, l, j + 1), idx(s, l - 1, j)]);
                    if j + 1 < l {
                        raw_tris.push([idx(s, l, j + 1), idx(s, l - 1, j + 1), idx(s, l - 1, j)]);
                    }
                }
            }
        }

        // Boundary identification: side nodes at equal-arclength fractions
        // must map node-to-node under the pairings.
        let mut glue_pairs = Vec::new();
        let mut uf = TransportUf::new(raw_pos.len());
        let mut edge_glue: Vec<((usize, usize), (usize, usize))> = Vec::new();
        for pairing in &fd.pairings {
            let (s, t) = (pairing.source_side, pairing.target_side);
            for j in 0..=n {
                let src = idx(s, n, j);
                let dst = idx(t, n, n - j);
                let image = pairing.map.apply_finite(raw_pos[src]);
                let err = (image - raw_pos[dst]).norm();
                if err > PAIRING_SNAP_TOL {
                    return Err(MeshError::MeshPairingFailure(format!(
                        "side {s} node {j} maps {err:.3e} away from its partner on side {t}"
                    )));
                }
                glue_pairs.push(GluePair { src, dst, map: pairing.map });
                uf.union(src, dst, &pairing.map);
                if j < n {
                    edge_glue.push(((idx(s, n, j), idx(s, n, j + 1)), (idx(t, n, n - j), idx(t, n, n - j - 1))));
                }
            }
        }

        // Canonical classes and transports.
        let mut roots = Vec::new();
        let mut canon_of_root: BTreeMap<usize, usize> = BTreeMap::new();
        let mut canon_of_raw = vec![0usize; raw_pos.len()];
        let mut transport = vec![MoebiusMap::identity(); raw_pos.len()];
        for r in 0..raw_pos.len() {
            let (root, map) = uf.find(r);
            let c = *canon_of_root.entry(root).or_insert_with(|| {
                roots.push(root);
                roots.len() - 1
            });
            canon_of_raw[r] = c;
            transport[r] = map;
            let err = (map.apply_finite(raw_pos[r]) - raw_pos[root]).norm();
            if err > PAIRING_SNAP_TOL {
                return Err(MeshError::MeshPairingFailure(format!(
                    "transport of node {r} misses its representative by {err:.3e}"
                )));
            }
        }
        let canon_pos: Vec<Complex64> = roots.iter().map(|&r| raw_pos[r]).collect();
        let canon_count = canon_pos.len();

        // Euler characteristic of the identified complex.
        let mut edge_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let key = |a: usize, b: usize| (a.min(b), a.max(b));
        for t in &raw_tris {
            for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let k = key(e.0, e.1);
                let next = edge_index.len();
                edge_index.entry(k).or_insert(next);
            }
        }
        let mut edge_uf: Vec<usize> = (0..edge_index.len()).collect();
        fn eroot(uf: &mut Vec<usize>, i: usize) -> usize {
            if uf[i] == i {
                i
            } else {
                let r = eroot(uf, uf[i]);
                uf[i] = r;
                r
            }
        }
        for (ea, eb) in &edge_glue {
            let ia = edge_index[&key(ea.0, ea.1)];
            let ib = edge_index[&key(eb.0, eb.1)];
            let (ra, rb) = (eroot(&mut edge_uf, ia), eroot(&mut edge_uf, ib));
            if ra != rb {
                edge_uf[ra] = rb;
            }
        }
        let mut edge_classes = std::collections::BTreeSet::new();
        for i in 0..edge_uf.len() {
            let r = eroot(&mut edge_uf, i);
            edge_classes.insert(r);
        }
        let euler = canon_count as i64 - edge_classes.len() as i64 + raw_tris.len() as i64;

        // Raw adjacency (sorted, deduplicated) for stencil construction.
        let mut raw_adjacency = vec![Vec::new(); raw_pos.len()];
        for t in &raw_tris {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                raw_adjacency[a].push(b);
                raw_adjacency[b].push(a);
            }
        }
        for adj in &mut raw_adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        let mut glue_of_raw = vec![Vec::new(); raw_pos.len()];
        for (i, gp) in glue_pairs.iter().enumerate() {
            glue_of_raw[gp.src].push(i);
            glue_of_raw[gp.dst].push(i);
        }

        // Stiffness: Euclidean cotangent weights of the straight triangles
        // in disc coordinates, folded onto canonical indices.
        let mut stiffness = DMatrix::zeros(canon_count, canon_count);
        let mut mass = DVector::zeros(canon_count);
        for t in &raw_tris {
            let p = [raw_pos[t[0]], raw_pos[t[1]], raw_pos[t[2]]];
            for corner in 0..3 {
                let (i, j, k) = (t[corner], t[(corner + 1) % 3], t[(corner + 2) % 3]);
                let u = p[(corner + 1) % 3] - p[corner];
                let v = p[(corner + 2) % 3] - p[corner];
                let cross = (u.re * v.im - u.im * v.re).abs();
                let cot = (u.re * v.re + u.im * v.im) / cross;
                let w = 0.5 * cot;
                let (cj, ck) = (canon_of_raw[j], canon_of_raw[k]);
                stiffness[(cj, ck)] -= w;
                stiffness[(ck, cj)] -= w;
                stiffness[(cj, cj)] += w;
                stiffness[(ck, ck)] += w;
                let _ = i;
            }
            // Hyperbolic area by angle defect.
            let angles = [
                disc_angle_at(p[0], p[1], p[2]),
                disc_angle_at(p[1], p[2], p[0]),
                disc_angle_at(p[2], p[0], p[1]),
            ];
            let area = std::f64::consts::PI - angles.iter().sum::<f64>();
            debug_assert!(area > 0.0, "degenerate hyperbolic triangle");
            for &node in t {
                mass[canon_of_raw[node]] += area / 3.0;
            }
        }

        Ok(SurfaceMesh {
            subdiv,
            raw_pos,
            raw_tris,
            canon_of_raw,
            transport,
            canon_pos,
            raw_adjacency,
            glue_pairs,
            glue_of_raw,
            stiffness,
            mass,
            euler,
        })
    }

    pub fn node_count(&self) -> usize {
        self.canon_pos.len()
    }

    pub fn raw_node_count(&self) -> usize {
        self.raw_pos.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.raw_tris.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.euler
    }

    /// Canonical representative positions in the disc chart.
    pub fn positions(&self) -> &[Complex64] {
        &self.canon_pos
    }

    pub fn raw_positions(&self) -> &[Complex64] {
        &self.raw_pos
    }

    pub fn raw_triangles(&self) -> &[[usize; 3]] {
        &self.raw_tris
    }

    pub fn canonical_of_raw(&self, raw: usize) -> usize {
        self.canon_of_raw[raw]
    }

    pub fn glue_pairs(&self) -> &[GluePair] {
        &self.glue_pairs
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.sum()
    }

    /// Background curvature field (constant -1).
    pub fn bg_curvature(&self) -> ScalarField {
        DVector::from_element(self.node_count(), -1.0)
    }

    fn check_size(&self, v: &ScalarField) -> Result<()> {
        if v.len() != self.node_count() {
            return Err(MeshError::SizeMismatch { expected: self.node_count(), found: v.len() });
        }
        Ok(())
    }

    /// Discrete Laplace-Beltrami: `lap v = -mass^{-1} stiffness v`.
    pub fn laplacian(&self, v: &ScalarField) -> Result<ScalarField> {
        self.check_size(v)?;
        let mut out = -(&self.stiffness * v);
        for i in 0..out.len() {
            out[i] /= self.mass[i];
        }
        Ok(out)
    }

    /// Curvature of the conformal metric `e^{2v} h`:
    /// `K = e^{-2v} (-lap v - 1)`.
    pub fn curvature_of_conformal(&self, v: &ScalarField) -> Result<ScalarField> {
        self.check_size(v)?;
        let lap = self.laplacian(v)?;
        let mut out = DVector::zeros(v.len());
        for i in 0..v.len() {
            out[i] = (-2.0 * v[i]).exp() * (-lap[i] - 1.0);
        }
        Ok(out)
    }

    /// Solves `(f id - lap) u = rhs` for strictly positive `f`. The assembled
    /// system `(diag(f mass) + stiffness) u = mass rhs` is symmetric positive
    /// definite; it is solved by a dense Cholesky factorization with a
    /// Jacobi-preconditioned conjugate-gradient fallback.
    pub fn solve_helmholtz(&self, f: &ScalarField, rhs: &ScalarField) -> Result<ScalarField> {
        self.check_size(f)?;
        self.check_size(rhs)?;
        let fmin = f.min();
        if fmin <= 0.0 {
            return Err(MeshError::NotPositive(fmin));
        }
        let n = self.node_count();
        let mut a = self.stiffness.clone();
        let mut b = DVector::zeros(n);
        for i in 0..n {
            a[(i, i)] += f[i] * self.mass[i];
            b[i] = self.mass[i] * rhs[i];
        }
        let u = match a.clone().cholesky() {
            Some(chol) => chol.solve(&b),
            None => conjugate_gradient(&a, &b)?,
        };
        // Verify the operator-form residual before handing the solution out.
        let lap = self.laplacian(&u)?;
        let mut worst: f64 = 0.0;
        let scale = rhs.amax().max(1e-300);
        for i in 0..n {
            worst = worst.max((f[i] * u[i] - lap[i] - rhs[i]).abs());
        }
        if worst > 1e-10 * scale {
            return Err(MeshError::SolverFailure(format!(
                "helmholtz residual {worst:.3e} above 1e-10 * {scale:.3e}"
            )));
        }
        Ok(u)
    }

    /// Smallest eigenvalue of the mass-weighted operator `f id - lap`.
    pub fn smallest_eigenvalue(&self, f: &ScalarField) -> Result<f64> {
        self.check_size(f)?;
        let n = self.node_count();
        let mut a = self.stiffness.clone();
        for i in 0..n {
            a[(i, i)] += f[i] * self.mass[i];
        }
        Ok(smallest_generalized_eigenvalue(&a, &self.mass))
    }

    /// Second-smallest eigenvalue of the mass-weighted Laplacian (the first
    /// is zero on the constants).
    pub fn spectral_gap(&self) -> f64 {
        let eigs = generalized_eigenvalues(&self.stiffness, &self.mass);
        eigs[1]
    }

    /// Mass-weighted L2 norm.
    pub fn mass_norm(&self, v: &ScalarField) -> f64 {
        let mut s = 0.0;
        for i in 0..v.len() {
            s += self.mass[i] * v[i] * v[i];
        }
        s.sqrt()
    }

    /// Maximal identification mismatch of a scalar chart function over the
    /// glued boundary nodes: an invariant function satisfies
    /// `F(g(z)) = F(z)` on every pairing.
    pub fn equivariance_residual_scalar(&self, f: &dyn Fn(Complex64) -> f64) -> f64 {
        let mut worst: f64 = 0.0;
        for gp in &self.glue_pairs {
            let z = self.raw_pos[gp.src];
            worst = worst.max((f(gp.map.apply_finite(z)) - f(z)).abs());
        }
        worst
    }

    /// Maximal cocycle mismatch of a quadratic-differential coefficient over
    /// the glued boundary nodes: equivariance demands
    /// `lambda(g(z)) g'(z)^2 = lambda(z)`.
    pub fn equivariance_residual_qd(&self, lambda: &dyn Fn(Complex64) -> Complex64) -> f64 {
        let mut worst: f64 = 0.0;
        for gp in &self.glue_pairs {
            let z = self.raw_pos[gp.src];
            let g = gp.map.derivative(z);
            worst = worst.max((lambda(gp.map.apply_finite(z)) * g * g - lambda(z)).norm());
        }
        worst
    }

    /// Unfolded chart stencil around a canonical node: samples
    /// `(canonical id, position in the representative's chart)` within two
    /// raw-edge hops, crossing side pairings with accumulated transports.
    pub fn unfolded_stencil(&self, canon: usize) -> Vec<(usize, Complex64)> {
        let root_raw = self
            .canon_of_raw
            .iter()
            .position(|&c| c == canon)
            .expect("canonical index in range");
        // The representative is the transport target; by construction the
        // first raw instance found is not necessarily the root, so walk to
        // it through the stored transport.
        let mut queue: Vec<(usize, MoebiusMap, usize)> =
            vec![(root_raw, self.transport[root_raw], 0)];
        let mut visited = vec![false; self.raw_pos.len()];
        let mut samples = Vec::new();
        while let Some((r, m, depth)) = queue.pop() {
            if visited[r] {
                continue;
            }
            visited[r] = true;
            samples.push((self.canon_of_raw[r], m.apply_finite(self.raw_pos[r])));
            // Seam jumps keep the graph depth: the partner is the same
            // surface point.
            for &gi in &self.glue_of_raw[r] {
                let gp = &self.glue_pairs[gi];
                if gp.src == r && !visited[gp.dst] {
                    queue.push((gp.dst, m.compose(&gp.map.inverse()), depth));
                } else if gp.dst == r && !visited[gp.src] {
                    queue.push((gp.src, m.compose(&gp.map), depth));
                }
            }
            if depth < 2 {
                for &q in &self.raw_adjacency[r] {
                    if !visited[q] {
                        queue.push((q, m, depth + 1));
                    }
                }
            }
        }
        samples
    }

    /// Sparse rows of the chart derivative operators `d/dz` and `d^2/dz^2`
    /// at each canonical node, built from weighted quadratic least-squares
    /// fits over the unfolded stencils. Exact on constants and on chart
    /// quadratics.
    pub fn chart_derivative_operators(&self) -> Result<ChartDerivatives> {
        let n = self.node_count();
        let mut dz = Vec::with_capacity(n);
        let mut dzz = Vec::with_capacity(n);
        for c in 0..n {
            let center = self.canon_pos[c];
            let samples = self.unfolded_stencil(c);
            if samples.len() < 6 {
                return Err(MeshError::StencilTooSmall(c, samples.len()));
            }
            let rows = quadratic_fit_rows(center, &samples)?;
            dz.push(rows.0);
            dzz.push(rows.1);
        }
        Ok(ChartDerivatives { dz, dzz })
    }
}

/// Per-node sparse rows for chart derivatives of canonical scalar fields.
pub struct ChartDerivatives {
    pub dz: Vec<Vec<(usize, Complex64)>>,
    pub dzz: Vec<Vec<(usize, Complex64)>>,
}

impl ChartDerivatives {
    pub fn apply(&self, v: &ScalarField) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.dz.len();
        let mut vz = vec![Complex64::ZERO; n];
        let mut vzz = vec![Complex64::ZERO; n];
        for i in 0..n {
            for &(j, w) in &self.dz[i] {
                vz[i] += w * v[j];
            }
            for &(j, w) in &self.dzz[i] {
                vzz[i] += w * v[j];
            }
        }
        (vz, vzz)
    }
}

type SparseRow = Vec<(usize, Complex64)>;

fn quadratic_fit_rows(
    center: Complex64,
    samples: &[(usize, Complex64)],
) -> Result<(SparseRow, SparseRow)> {
    let m = samples.len();
    let scale = (samples
        .iter()
        .map(|&(_, p)| (p - center).norm_sqr())
        .sum::<f64>()
        / m as f64)
        .sqrt()
        .max(1e-12);
    let mut a = DMatrix::zeros(m, 6);
    for (r, &(_, p)) in samples.iter().enumerate() {
        let d = (p - center) / scale;
        a[(r, 0)] = 1.0;
        a[(r, 1)] = d.re;
        a[(r, 2)] = d.im;
        a[(r, 3)] = d.re * d.re;
        a[(r, 4)] = d.re * d.im;
        a[(r, 5)] = d.im * d.im;
    }
    let at = a.transpose();
    let normal = &at * &a;
    let chol = normal
        .cholesky()
        .ok_or_else(|| MeshError::SolverFailure("rank-deficient derivative stencil".into()))?;
    // Pseudo-inverse rows: R = (A^T A)^{-1} A^T, 6 x m.
    let pinv = chol.solve(&at);
    let mut dz_row = Vec::with_capacity(m);
    let mut dzz_row = Vec::with_capacity(m);
    for (col, &(canon, _)) in samples.iter().enumerate() {
        // a1..a5 give v_x = a1/s, v_y = a2/s, v_xx = 2 a3 / s^2,
        // v_xy = a4 / s^2, v_yy = 2 a5 / s^2, hence
        // v_z = (a1 - i a2) / (2s), v_zz = ((a3 - a5) - i a4) / (2 s^2).
        let wz = Complex64::new(pinv[(1, col)], -pinv[(2, col)]) / (2.0 * scale);
        let wzz = Complex64::new(pinv[(3, col)] - pinv[(5, col)], -pinv[(4, col)])
            / (2.0 * scale * scale);
        if wz.norm() > 0.0 {
            dz_row.push((canon, wz));
        }
        if wzz.norm() > 0.0 {
            dzz_row.push((canon, wzz));
        }
    }
    Ok((merge_row(dz_row), merge_row(dzz_row)))
}

fn merge_row(mut row: SparseRow) -> SparseRow {
    row.sort_by_key(|&(j, _)| j);
    let mut out: SparseRow = Vec::with_capacity(row.len());
    for (j, w) in row {
        if let Some(last) = out.last_mut() {
            if last.0 == j {
                last.1 += w;
                continue;
            }
        }
        out.push((j, w));
    }
    out
}

/// Complex field representing the chart coefficient of a quadratic
/// differential at the canonical representative positions. Instance values
/// at other copies of a node are obtained through the pairing cocycle
/// `lambda(z) = lambda(root) (T'(z))^2` for the transport `T`.
#[derive(Debug, Clone)]
pub struct QDField {
    pub values: Vec<Complex64>,
}

impl QDField {
    pub fn zero(mesh: &SurfaceMesh) -> QDField {
        QDField { values: vec![Complex64::ZERO; mesh.node_count()] }
    }

    /// Evaluates a generator function at the canonical representative
    /// positions. Equivariance holds by construction through the cocycle
    /// transport, whatever the generator.
    pub fn from_generator(mesh: &SurfaceMesh, lambda: &dyn Fn(Complex64) -> Complex64) -> QDField {
        QDField { values: mesh.positions().iter().map(|&z| lambda(z)).collect() }
    }

    /// Gaussian-modulated `z^2` bump, the stock manufactured coefficient for
    /// solver stress tests.
    pub fn bump(mesh: &SurfaceMesh, amp: f64, width: f64) -> QDField {
        Self::from_generator(mesh, &move |z: Complex64| {
            let s2 = 2.0 * width * width;
            amp * z * z * (-z.norm_sqr() / s2).exp()
        })
    }

    /// Validates sampled coefficient data against the pairing cocycle and
    /// stores the canonical values. Rejects non-equivariant data.
    pub fn from_samples(
        mesh: &SurfaceMesh,
        lambda: &dyn Fn(Complex64) -> Complex64,
        tol: f64,
    ) -> Result<QDField> {
        let res = mesh.equivariance_residual_qd(lambda);
        if res > tol {
            return Err(MeshError::NonEquivariant(res, tol));
        }
        Ok(Self::from_generator(mesh, lambda))
    }

    pub fn scaled(&self, s: f64) -> QDField {
        QDField { values: self.values.iter().map(|v| v * s).collect() }
    }

    /// Instance value at a raw node, transported from the canonical
    /// representative by the cocycle.
    pub fn value_at_raw(&self, mesh: &SurfaceMesh, raw: usize) -> Complex64 {
        let t = &mesh.transport[raw];
        let d = t.derivative(mesh.raw_pos[raw]);
        self.values[mesh.canon_of_raw[raw]] * d * d
    }

    /// Maximal cocycle mismatch across glue pairs of the transported
    /// instance values. Zero up to rounding by construction.
    pub fn equivariance_residual(&self, mesh: &SurfaceMesh) -> f64 {
        let mut worst: f64 = 0.0;
        for gp in &mesh.glue_pairs {
            let z = mesh.raw_pos[gp.src];
            let g = gp.map.derivative(z);
            let lhs = self.value_at_raw(mesh, gp.dst) * g * g;
            let rhs = self.value_at_raw(mesh, gp.src);
            worst = worst.max((lhs - rhs).norm());
        }
        worst
    }
}

fn conjugate_gradient(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = b.len();
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let diag: DVector<f64> = a.diagonal().map(|d| 1.0 / d.max(1e-300));
    let mut z = r.component_mul(&diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let b_norm = b.norm().max(1e-300);
    for _ in 0..10 * n {
        if r.norm() < 1e-14 * b_norm {
            return Ok(x);
        }
        let ap = a * &p;
        let alpha = rz / p.dot(&ap);
        x += alpha * &p;
        r -= alpha * ap;
        z = r.component_mul(&diag);
        let rz_new = r.dot(&z);
        p = &z + (rz_new / rz) * p;
        rz = rz_new;
    }
    if r.norm() < 1e-10 * b_norm {
        Ok(x)
    } else {
        Err(MeshError::SolverFailure(format!(
            "conjugate gradient stagnated at relative residual {:.3e}",
            r.norm() / b_norm
        )))
    }
}

fn generalized_eigenvalues(a: &DMatrix<f64>, mass: &DVector<f64>) -> Vec<f64> {
    let n = mass.len();
    let mut scaled = a.clone();
    for i in 0..n {
        for j in 0..n {
            scaled[(i, j)] /= (mass[i] * mass[j]).sqrt();
        }
    }
    // Symmetrize against rounding before the eigensolve.
    let sym = 0.5 * (&scaled + scaled.transpose());
    let mut eigs: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

fn smallest_generalized_eigenvalue(a: &DMatrix<f64>, mass: &DVector<f64>) -> f64 {
    generalized_eigenvalues(a, mass)[0]
}
