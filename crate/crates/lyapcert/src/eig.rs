//! Sparse symmetric eigensolvers for weighted Neumann Laplacians
//! -div(rho grad u) = lambda rho u, the discrete form of the generator
//! spectrum. Dimension 1 assembles a tridiagonal pencil solved by Sturm
//! bisection; dimension 2 assembles an edge stencil on a (possibly masked)
//! tensor grid and runs deflated inverse power iteration with projected,
//! Jacobi-preconditioned conjugate gradients.
//!
//! Both assemblies use harmonic-mean edge weights and lumped masses, so the
//! constant vector is an exact kernel element and the computed gap is the
//! first nonzero eigenvalue.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EigError {
    #[error("{stage} did not converge within {iterations} iterations")]
    NotConverged {
        stage: &'static str,
        iterations: usize,
    },
    #[error("eigensolve needs at least {required} nodes, got {actual}")]
    TooFewNodes { required: usize, actual: usize },
    #[error("vanishing lumped mass at node {node}; density underflowed")]
    SingularMass { node: usize },
    #[error("spectral gap came out nonpositive: {lambda}")]
    NonPositiveGap { lambda: f64 },
}

/// Symmetric tridiagonal matrix: diagonal `d`, subdiagonal `e` (len d - 1).
#[derive(Debug, Clone)]
pub struct SymTridiag {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
}

impl SymTridiag {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// Number of eigenvalues strictly below `sigma` (Sturm count via the
    /// LDL^T recurrence with underflow guarding).
    pub fn count_below(&self, sigma: f64) -> usize {
        let n = self.n();
        let mut count = 0usize;
        let mut q = self.d[0] - sigma;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let e2 = self.e[i - 1] * self.e[i - 1];
            let denom = if q.abs() > 1e-300 {
                q
            } else if q >= 0.0 {
                1e-300
            } else {
                -1e-300
            };
            q = (self.d[i] - sigma) - e2 / denom;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.n();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.e[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.e[i].abs() } else { 0.0 };
            lo = lo.min(self.d[i] - r);
            hi = hi.max(self.d[i] + r);
        }
        (lo, hi)
    }

    /// k-th smallest eigenvalue (0-based) by bisection on the Sturm count.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let scale = lo.abs().max(hi.abs()).max(1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * scale {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solve (T - sigma I) x = b by LU with partial pivoting (one band of
    /// fill-in). Overwrites and returns `b`.
    fn solve_shifted(&self, sigma: f64, mut b: Vec<f64>) -> Vec<f64> {
        let n = self.n();
        // Band storage: lower l, main m, upper u1, second upper u2.
        let mut m: Vec<f64> = self.d.iter().map(|&v| v - sigma).collect();
        let mut u1 = self.e.clone();
        let mut u2 = vec![0.0; n.saturating_sub(2)];
        for i in 0..n - 1 {
            let sub = self.e[i];
            if m[i].abs() >= sub.abs() {
                // No pivot swap.
                let piv = if m[i] != 0.0 { m[i] } else { 1e-300 };
                let l = sub / piv;
                m[i + 1] -= l * u1[i];
                if i + 2 < n {
                    // u2[i] stays 0 in the no-swap branch.
                }
                b[i + 1] -= l * b[i];
            } else {
                // Swap rows i and i+1.
                let (mi, u1i) = (m[i], u1[i]);
                m[i] = sub;
                u1[i] = m[i + 1];
                m[i + 1] = u1i - (mi / sub) * m[i + 1];
                if i + 2 < n {
                    u2[i] = u1[i + 1];
                    u1[i + 1] = -(mi / sub) * u1[i + 1];
                }
                b.swap(i, i + 1);
                b[i + 1] -= (mi / sub) * b[i];
            }
        }
        // Back substitution.
        for i in (0..n).rev() {
            let mut rhs = b[i];
            if i + 1 < n {
                rhs -= u1[i] * b[i + 1];
            }
            if i + 2 < n {
                rhs -= u2[i] * b[i + 2];
            }
            let piv = if m[i] != 0.0 { m[i] } else { 1e-300 };
            b[i] = rhs / piv;
        }
        b
    }

    /// Eigenvector for an eigenvalue estimate, by inverse iteration.
    /// Returned with unit Euclidean norm.
    pub fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let n = self.n();
        // Deterministic, sign-varying start vector.
        let mut x: Vec<f64> = (0..n)
            .map(|i| (i as f64 * 0.7391 + 0.137).sin())
            .collect();
        normalize(&mut x);
        let shift = lambda * (1.0 + 1e-12) + 1e-300;
        for _ in 0..4 {
            x = self.solve_shifted(shift, x);
            normalize(&mut x);
        }
        x
    }
}

fn normalize(x: &mut [f64]) {
    let n2: f64 = x.iter().map(|v| v * v).sum();
    let n = n2.sqrt();
    if n > 0.0 {
        for v in x.iter_mut() {
            *v /= n;
        }
    }
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Assemble the symmetrized pencil B = M^{-1/2} K M^{-1/2} for
/// -(rho u')' = lambda rho u with natural (Neumann) ends, on arbitrary
/// sorted nodes `xs` with node densities `rho`. Returns B and the vector of
/// square-root lumped masses, so eigenvectors of B map back via u = w/m^{1/2}.
pub fn assemble_weighted_1d(xs: &[f64], rho: &[f64]) -> Result<(SymTridiag, Vec<f64>), EigError> {
    let n = xs.len();
    if n < 3 {
        return Err(EigError::TooFewNodes {
            required: 3,
            actual: n,
        });
    }
    // Lumped masses: trapezoid cell lengths times node density.
    let mut mass = vec![0.0f64; n];
    for i in 0..n - 1 {
        let h = xs[i + 1] - xs[i];
        mass[i] += 0.5 * h * rho[i];
        mass[i + 1] += 0.5 * h * rho[i + 1];
    }
    for (i, &m) in mass.iter().enumerate() {
        if !(m > 0.0) || !m.is_finite() {
            return Err(EigError::SingularMass { node: i });
        }
    }
    let msqrt: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n - 1];
    for i in 0..n - 1 {
        let h = xs[i + 1] - xs[i];
        let a = harmonic_mean(rho[i], rho[i + 1]) / h;
        d[i] += a / mass[i];
        d[i + 1] += a / mass[i + 1];
        e[i] = -a / (msqrt[i] * msqrt[i + 1]);
    }
    Ok((SymTridiag { d, e }, msqrt))
}

/// First nonzero Neumann eigenvalue of the weighted 1D problem.
pub fn gap_1d(xs: &[f64], rho: &[f64]) -> Result<f64, EigError> {
    let (b, _) = assemble_weighted_1d(xs, rho)?;
    let lam0 = b.eigenvalue(0);
    let lam1 = b.eigenvalue(1);
    if lam1 <= 0.0 {
        return Err(EigError::NonPositiveGap { lambda: lam1 });
    }
    // The constant function is an exact discrete kernel element; anything
    // else signals a broken assembly.
    if lam0.abs() > 1e-8 * lam1 {
        return Err(EigError::NonPositiveGap { lambda: lam0 });
    }
    Ok(lam1)
}

/// Gap plus the associated eigenfunction u (values at `xs`, normalized to
/// unit discrete L^2(mu) norm with the lumped masses).
pub fn eigenpair_1d(xs: &[f64], rho: &[f64]) -> Result<(f64, Vec<f64>), EigError> {
    let (b, msqrt) = assemble_weighted_1d(xs, rho)?;
    let lam1 = b.eigenvalue(1);
    if lam1 <= 0.0 {
        return Err(EigError::NonPositiveGap { lambda: lam1 });
    }
    let w = b.eigenvector(lam1);
    // Project out the kernel direction q = msqrt/|msqrt| for safety.
    let mut q = msqrt.clone();
    normalize(&mut q);
    let dot: f64 = w.iter().zip(&q).map(|(a, b)| a * b).sum();
    let mut w: Vec<f64> = w.iter().zip(&q).map(|(a, b)| a - dot * b).collect();
    normalize(&mut w);
    let u: Vec<f64> = w.iter().zip(&msqrt).map(|(wi, mi)| wi / mi).collect();
    Ok((lam1, u))
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    a: f64,
    i: u32,
    j: u32,
}

/// Edge-stencil discretization of -div(rho grad u) = lambda rho u on a
/// tensor grid in dimension 2, restricted to an arbitrary node mask with
/// natural boundary conditions.
pub struct Stencil2d {
    /// Compact index for each tensor node, None outside the mask.
    pub compact: Vec<Option<u32>>,
    /// (ix, iy) per compact node.
    pub nodes: Vec<(u32, u32)>,
    msqrt: Vec<f64>,
    edges: Vec<Edge>,
    /// Diagonal of B for Jacobi preconditioning.
    diag: Vec<f64>,
}

impl Stencil2d {
    pub fn build(
        xs: &[f64],
        ys: &[f64],
        rho: impl Fn(usize, usize) -> f64,
        mask: impl Fn(f64, f64) -> bool,
    ) -> Result<Stencil2d, EigError> {
        let nx = xs.len();
        let ny = ys.len();
        if nx < 3 || ny < 3 {
            return Err(EigError::TooFewNodes {
                required: 3,
                actual: nx.min(ny),
            });
        }
        let cell = |zs: &[f64], i: usize| -> f64 {
            let lo = if i > 0 { zs[i] - zs[i - 1] } else { 0.0 };
            let hi = if i + 1 < zs.len() {
                zs[i + 1] - zs[i]
            } else {
                0.0
            };
            0.5 * (lo + hi)
        };
        let mut compact = vec![None; nx * ny];
        let mut nodes = Vec::new();
        let mut mass = Vec::new();
        for ix in 0..nx {
            for iy in 0..ny {
                if mask(xs[ix], ys[iy]) {
                    let id = nodes.len() as u32;
                    compact[ix * ny + iy] = Some(id);
                    nodes.push((ix as u32, iy as u32));
                    mass.push(rho(ix, iy) * cell(xs, ix) * cell(ys, iy));
                }
            }
        }
        for (i, &m) in mass.iter().enumerate() {
            if !(m > 0.0) || !m.is_finite() {
                return Err(EigError::SingularMass { node: i });
            }
        }
        let mut edges = Vec::new();
        for ix in 0..nx {
            for iy in 0..ny {
                let Some(i) = compact[ix * ny + iy] else {
                    continue;
                };
                // Right neighbor.
                if ix + 1 < nx {
                    if let Some(j) = compact[(ix + 1) * ny + iy] {
                        let h = xs[ix + 1] - xs[ix];
                        let a = harmonic_mean(rho(ix, iy), rho(ix + 1, iy)) * cell(ys, iy) / h;
                        edges.push(Edge { a, i, j });
                    }
                }
                // Up neighbor.
                if iy + 1 < ny {
                    if let Some(j) = compact[ix * ny + iy + 1] {
                        let h = ys[iy + 1] - ys[iy];
                        let a = harmonic_mean(rho(ix, iy), rho(ix, iy + 1)) * cell(xs, ix) / h;
                        edges.push(Edge { a, i, j });
                    }
                }
            }
        }
        let msqrt: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
        let mut diag = vec![0.0f64; nodes.len()];
        for e in &edges {
            diag[e.i as usize] += e.a / mass[e.i as usize];
            diag[e.j as usize] += e.a / mass[e.j as usize];
        }
        Ok(Stencil2d {
            compact,
            nodes,
            msqrt,
            edges,
            diag,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// y = B x with B = M^{-1/2} K M^{-1/2}.
    fn apply_b(&self, x: &[f64], y: &mut [f64]) {
        for v in y.iter_mut() {
            *v = 0.0;
        }
        for e in &self.edges {
            let (i, j) = (e.i as usize, e.j as usize);
            let ui = x[i] / self.msqrt[i];
            let uj = x[j] / self.msqrt[j];
            let flux = e.a * (ui - uj);
            y[i] += flux;
            y[j] -= flux;
        }
        for (i, v) in y.iter_mut().enumerate() {
            *v /= self.msqrt[i];
        }
    }

    /// Projected, Jacobi-preconditioned CG for B y = b on the complement of
    /// the kernel direction `q`. `b` must already be orthogonal to q.
    ///
    /// The solve only needs to be accurate enough for an inverse-iteration
    /// step, so a stalled residual that still reached `accept_tol` is
    /// returned rather than treated as a failure.
    fn solve_deflated(&self, b: &[f64], q: &[f64], tol: f64) -> Result<Vec<f64>, EigError> {
        let n = self.len();
        let maxit = (40 * n + 200).min(25_000);
        let accept_tol = 1e-6;
        let project = |v: &mut Vec<f64>| {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= d * qi;
            }
        };
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let mut x = vec![0.0f64; n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(ri, di)| ri / di).collect();
        project(&mut z);
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0f64; n];
        let mut best_rnorm = f64::INFINITY;
        for _ in 0..maxit {
            self.apply_b(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            best_rnorm = best_rnorm.min(rnorm);
            if rnorm <= tol * bnorm {
                project(&mut x);
                return Ok(x);
            }
            z = r.iter().zip(&self.diag).map(|(ri, di)| ri / di).collect();
            project(&mut z);
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if best_rnorm <= accept_tol * bnorm {
            project(&mut x);
            return Ok(x);
        }
        Err(EigError::NotConverged {
            stage: "projected conjugate gradients",
            iterations: maxit,
        })
    }

    /// Smallest nonzero eigenvalue and its eigenfunction u (indexed by
    /// compact node), via deflated inverse power iteration.
    pub fn gap_with_vector(&self) -> Result<(f64, Vec<f64>), EigError> {
        let n = self.len();
        let mut q = self.msqrt.clone();
        normalize(&mut q);
        // Deterministic sign-varying start orthogonal to the kernel.
        let mut x: Vec<f64> = (0..n)
            .map(|i| {
                let (ix, iy) = self.nodes[i];
                ((ix as f64) * 0.613 + (iy as f64) * 0.271 + 0.1).sin()
            })
            .collect();
        let d: f64 = x.iter().zip(&q).map(|(a, b)| a * b).sum();
        for (xi, qi) in x.iter_mut().zip(&q) {
            *xi -= d * qi;
        }
        normalize(&mut x);
        let maxit = 400;
        let mut bx = vec![0.0f64; n];
        let cg_tol = 1e-10;
        let dmax = self.diag.iter().cloned().fold(0.0f64, f64::max);
        let floor = (64.0 * f64::EPSILON * (n as f64).sqrt()).max(2.0 * cg_tol) * dmax;
        let mut prev = f64::INFINITY;
        let mut stable_streak = 0usize;
        for _ in 0..maxit {
            let mut y = self.solve_deflated(&x, &q, cg_tol)?;
            let d: f64 = y.iter().zip(&q).map(|(a, b)| a * b).sum();
            for (yi, qi) in y.iter_mut().zip(&q) {
                *yi -= d * qi;
            }
            normalize(&mut y);
            self.apply_b(&y, &mut bx);
            let lam: f64 = y.iter().zip(&bx).map(|(a, b)| a * b).sum();
            let res: f64 = bx
                .iter()
                .zip(&y)
                .map(|(b, yi)| (b - lam * yi) * (b - lam * yi))
                .sum::<f64>()
                .sqrt();
            if (lam - prev).abs() <= 1e-11 * lam.abs().max(1e-300) {
                stable_streak += 1;
            } else {
                stable_streak = 0;
            }
            prev = lam;
            x = y;
            // The Rayleigh quotient is quadratically accurate, so a modest
            // residual bound pins lam far tighter than it pins the vector;
            // a tighter vector criterion would never be met when the lowest
            // eigenvalue is a near-degenerate cluster (symmetric domains
            // split only by grid rounding) because inverse iteration mixes
            // freely inside the cluster.
            if stable_streak >= 2 && res <= (1e-4 * lam.abs()).max(floor) {
                if lam <= 0.0 {
                    return Err(EigError::NonPositiveGap { lambda: lam });
                }
                let u: Vec<f64> = x.iter().zip(&self.msqrt).map(|(w, m)| w / m).collect();
                return Ok((lam, u));
            }
        }
        Err(EigError::NotConverged {
            stage: "inverse power iteration",
            iterations: maxit,
        })
    }


    pub fn gap(&self) -> Result<f64, EigError> {
        self.gap_with_vector().map(|(l, _)| l)
    }
}
