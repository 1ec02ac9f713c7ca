//! Small numerical utilities: monotone cubic interpolation, local bivariate
//! polynomial least-squares fits, and a derivative-free 2D minimizer.

use nalgebra::{DMatrix, DVector};

/// Monotone cubic interpolant (Fritsch-Carlson slopes). Suitable for
/// inverting strictly monotone sampled functions.
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// Builds the interpolant. `x` must be strictly increasing.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Pchip {
        assert!(x.len() >= 2 && x.len() == y.len());
        assert!(x.windows(2).all(|w| w[1] > w[0]), "x must be strictly increasing");
        let n = x.len();
        let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                d[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        d[0] = edge_slope(h[0], h.get(1).copied().unwrap_or(h[0]), delta[0], delta.get(1).copied().unwrap_or(delta[0]));
        d[n - 1] = edge_slope(
            h[n - 2],
            if n >= 3 { h[n - 3] } else { h[n - 2] },
            delta[n - 2],
            if n >= 3 { delta[n - 3] } else { delta[n - 2] },
        );
        Pchip { x, y, d }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.y[i],
            Err(0) => 0,
            Err(i) if i >= n => n - 2,
            Err(i) => i - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (h00, h10, h01, h11) = hermite_basis(s);
        self.y[i] * h00 + h * self.d[i] * h10 + self.y[i + 1] * h01 + h * self.d[i + 1] * h11
    }

    /// Inverts a strictly monotone interpolant by bisection. `v` must lie in
    /// the sampled range.
    pub fn inverse(&self, v: f64) -> Option<f64> {
        let increasing = self.y[self.y.len() - 1] > self.y[0];
        let (lo_v, hi_v) = if increasing {
            (self.y[0], self.y[self.y.len() - 1])
        } else {
            (self.y[self.y.len() - 1], self.y[0])
        };
        if v < lo_v - 1e-12 || v > hi_v + 1e-12 {
            return None;
        }
        let mut lo = self.x[0];
        let mut hi = self.x[self.x.len() - 1];
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fv = self.eval(mid);
            if (fv - v).abs() < 1e-14 {
                return Some(mid);
            }
            if (fv < v) == increasing {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }
}

fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

fn hermite_basis(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    )
}

/// Bivariate polynomial `sum_{i+j <= degree} c_{ij} x^i y^j` in scaled local
/// coordinates, produced by [`fit_poly2`].
#[derive(Debug, Clone)]
pub struct Poly2 {
    degree: usize,
    scale: f64,
    coeffs: Vec<f64>,
}

fn poly2_terms(degree: usize) -> Vec<(usize, usize)> {
    let mut t = Vec::new();
    for total in 0..=degree {
        for i in (0..=total).rev() {
            t.push((i, total - i));
        }
    }
    t
}

impl Poly2 {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (xs, ys) = (x / self.scale, y / self.scale);
        poly2_terms(self.degree)
            .iter()
            .zip(&self.coeffs)
            .map(|(&(i, j), &c)| c * xs.powi(i as i32) * ys.powi(j as i32))
            .sum()
    }

    /// Value with first and second partial derivatives (unscaled).
    pub fn jet(&self, x: f64, y: f64) -> (f64, f64, f64, f64, f64, f64) {
        let (xs, ys) = (x / self.scale, y / self.scale);
        let mut v = 0.0;
        let mut dx = 0.0;
        let mut dy = 0.0;
        let mut dxx = 0.0;
        let mut dxy = 0.0;
        let mut dyy = 0.0;
        for (&(i, j), &c) in poly2_terms(self.degree).iter().zip(&self.coeffs) {
            let (fi, fj) = (i as f64, j as f64);
            let xi = xs.powi(i as i32);
            let yj = ys.powi(j as i32);
            v += c * xi * yj;
            if i >= 1 {
                dx += c * fi * xs.powi(i as i32 - 1) * yj;
            }
            if j >= 1 {
                dy += c * fj * xi * ys.powi(j as i32 - 1);
            }
            if i >= 2 {
                dxx += c * fi * (fi - 1.0) * xs.powi(i as i32 - 2) * yj;
            }
            if i >= 1 && j >= 1 {
                dxy += c * fi * fj * xs.powi(i as i32 - 1) * ys.powi(j as i32 - 1);
            }
            if j >= 2 {
                dyy += c * fj * (fj - 1.0) * xi * ys.powi(j as i32 - 2);
            }
        }
        let s = self.scale;
        (v, dx / s, dy / s, dxx / (s * s), dxy / (s * s), dyy / (s * s))
    }
}

/// Weighted least-squares fit of a bivariate polynomial to samples
/// `(x_k, y_k, v_k)` in local coordinates. Coordinates are rescaled by their
/// RMS radius for conditioning. Returns `None` when the system is rank
/// deficient.
pub fn fit_poly2(samples: &[(f64, f64, f64)], degree: usize) -> Option<Poly2> {
    let terms = poly2_terms(degree);
    if samples.len() < terms.len() {
        return None;
    }
    let scale = (samples
        .iter()
        .map(|&(x, y, _)| x * x + y * y)
        .sum::<f64>()
        / samples.len() as f64)
        .sqrt()
        .max(1e-12);
    let mut a = DMatrix::zeros(samples.len(), terms.len());
    let mut b = DVector::zeros(samples.len());
    for (r, &(x, y, v)) in samples.iter().enumerate() {
        let (xs, ys) = (x / scale, y / scale);
        for (cidx, &(i, j)) in terms.iter().enumerate() {
            a[(r, cidx)] = xs.powi(i as i32) * ys.powi(j as i32);
        }
        b[r] = v;
    }
    let at = a.transpose();
    let normal = &at * &a;
    let rhs = at * b;
    let chol = normal.cholesky()?;
    let coeffs = chol.solve(&rhs);
    Some(Poly2 {
        degree,
        scale,
        coeffs: coeffs.iter().copied().collect(),
    })
}

/// Nelder-Mead on a 2D objective. Deterministic; returns the best vertex.
pub fn nelder_mead2(
    f: &mut dyn FnMut(f64, f64) -> f64,
    start: (f64, f64),
    scale: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64, f64) {
    let mut simplex = [
        (start.0, start.1),
        (start.0 + scale, start.1),
        (start.0, start.1 + scale),
    ];
    let mut values = [
        f(simplex[0].0, simplex[0].1),
        f(simplex[1].0, simplex[1].1),
        f(simplex[2].0, simplex[2].1),
    ];
    for _ in 0..max_iter {
        // Sort ascending by value.
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let (best, mid, worst) = (idx[0], idx[1], idx[2]);
        let spread = (simplex[best].0 - simplex[worst].0).abs()
            + (simplex[best].1 - simplex[worst].1).abs();
        if spread < tol {
            break;
        }
        let centroid = (
            0.5 * (simplex[best].0 + simplex[mid].0),
            0.5 * (simplex[best].1 + simplex[mid].1),
        );
        let refl = (
            centroid.0 + (centroid.0 - simplex[worst].0),
            centroid.1 + (centroid.1 - simplex[worst].1),
        );
        let fr = f(refl.0, refl.1);
        if fr < values[best] {
            let exp = (
                centroid.0 + 2.0 * (centroid.0 - simplex[worst].0),
                centroid.1 + 2.0 * (centroid.1 - simplex[worst].1),
            );
            let fe = f(exp.0, exp.1);
            if fe < fr {
                simplex[worst] = exp;
                values[worst] = fe;
            } else {
                simplex[worst] = refl;
                values[worst] = fr;
            }
        } else if fr < values[mid] {
            simplex[worst] = refl;
            values[worst] = fr;
        } else {
            let contr = (
                centroid.0 + 0.5 * (simplex[worst].0 - centroid.0),
                centroid.1 + 0.5 * (simplex[worst].1 - centroid.1),
            );
            let fc = f(contr.0, contr.1);
            if fc < values[worst] {
                simplex[worst] = contr;
                values[worst] = fc;
            } else {
                // Shrink toward the best vertex.
                for k in 0..3 {
                    if k == best {
                        continue;
                    }
                    simplex[k] = (
                        simplex[best].0 + 0.5 * (simplex[k].0 - simplex[best].0),
                        simplex[best].1 + 0.5 * (simplex[k].1 - simplex[best].1),
                    );
                    values[k] = f(simplex[k].0, simplex[k].1);
                }
            }
        }
    }
    let mut best = 0;
    for k in 1..3 {
        if values[k] < values[best] {
            best = k;
        }
    }
    (simplex[best].0, simplex[best].1, values[best])
}
