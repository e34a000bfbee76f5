//! Eigendecomposition of `diag(σ²) + zzᵀ` through the secular equation.
//!
//! Roots of `1 + Σ z_i² / (σ_i² − λ)` are found one interlacing interval at
//! a time with a bisection-safeguarded Newton iteration. Each root is stored
//! as an offset from its nearest pole so that the differences `σ_i² − λ_j`
//! used for the eigenvectors keep full relative accuracy. Eigenvectors are
//! built from a recomputed update vector (Löwner's formula), which keeps
//! them numerically orthogonal even for clustered eigenvalues.

use nalgebra::{DMatrix, DVector};

use super::SubspaceError;

const DEFLATION_TOL: f64 = 1e-14;
const ROOT_REL_TOL: f64 = 1e-14;
const MAX_ROOT_ITERS: usize = 400;

/// `diag(sigma_sq) + z zᵀ` with `sigma_sq` non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Dpr1Problem {
    sigma_sq: Vec<f64>,
    z: Vec<f64>,
}

impl Dpr1Problem {
    pub fn new(sigma_sq: Vec<f64>, z: Vec<f64>) -> Result<Self, SubspaceError> {
        if sigma_sq.len() != z.len() {
            return Err(SubspaceError::DimensionMismatch {
                expected: format!("update vector of length {}", sigma_sq.len()),
                found: format!("length {}", z.len()),
            });
        }
        if sigma_sq.iter().chain(&z).any(|v| !v.is_finite()) {
            return Err(SubspaceError::NonFinite);
        }
        if sigma_sq.windows(2).any(|w| w[0] < w[1]) {
            return Err(SubspaceError::DimensionMismatch {
                expected: "non-increasing diagonal".into(),
                found: "unsorted diagonal".into(),
            });
        }
        Ok(Self { sigma_sq, z })
    }

    pub fn sigma_sq(&self) -> &[f64] {
        &self.sigma_sq
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// The dense symmetric matrix this problem represents.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let z = DVector::from_column_slice(&self.z);
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.sigma_sq)) + &z * z.transpose()
    }
}

/// Eigenvalues sorted non-increasing with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct Dpr1Eigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// A root stored relative to the pole it is closest to.
#[derive(Debug, Clone, Copy)]
struct Root {
    origin: usize,
    offset: f64,
}

pub fn dpr1_eigen(p: &Dpr1Problem) -> Dpr1Eigen {
    let m = p.len();
    if m == 0 {
        return Dpr1Eigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    // Work in ascending order; position `a` corresponds to input index m-1-a.
    let d: Vec<f64> = p.sigma_sq.iter().rev().copied().collect();
    let mut z: Vec<f64> = p.z.iter().rev().copied().collect();

    let znorm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dscale = d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let ztol = DEFLATION_TOL * znorm;
    let dtol = DEFLATION_TOL * dscale;

    // Rotations applied while deflating repeated diagonal entries.
    let mut rot = DMatrix::<f64>::identity(m, m);
    let mut deflated = vec![false; m];
    for a in 0..m {
        if z[a].abs() <= ztol {
            z[a] = 0.0;
            deflated[a] = true;
        }
    }
    let mut prev: Option<usize> = None;
    for a in 0..m {
        if deflated[a] {
            continue;
        }
        if let Some(b) = prev {
            if (d[a] - d[b]).abs() <= dtol {
                // Rotate z_b into z_a; (d_b, rotated e_b) becomes an eigenpair.
                let tau = z[a].hypot(z[b]);
                let c = z[a] / tau;
                let s = z[b] / tau;
                z[a] = tau;
                z[b] = 0.0;
                for r in 0..m {
                    let qb = rot[(r, b)];
                    let qa = rot[(r, a)];
                    rot[(r, b)] = c * qb - s * qa;
                    rot[(r, a)] = s * qb + c * qa;
                }
                deflated[b] = true;
            }
        }
        prev = Some(a);
    }

    let mut pairs: Vec<(f64, DVector<f64>)> = Vec::with_capacity(m);
    for a in (0..m).filter(|&a| deflated[a]) {
        pairs.push((d[a], rot.column(a).into_owned()));
    }

    let active: Vec<usize> = (0..m).filter(|&a| !deflated[a]).collect();
    if !active.is_empty() {
        let dk: Vec<f64> = active.iter().map(|&a| d[a]).collect();
        let zk: Vec<f64> = active.iter().map(|&a| z[a]).collect();
        let (values, vectors) = solve_reduced(&dk, &zk);
        for (j, lambda) in values.into_iter().enumerate() {
            let mut v = DVector::zeros(m);
            for (pos, &a) in active.iter().enumerate() {
                v.axpy(vectors[(pos, j)], &rot.column(a).into_owned(), 1.0);
            }
            pairs.push((lambda, v));
        }
    }

    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let values = DVector::from_iterator(m, pairs.iter().map(|(l, _)| *l));
    let mut vectors = DMatrix::zeros(m, m);
    for (j, (_, v)) in pairs.iter().enumerate() {
        for a in 0..m {
            vectors[(m - 1 - a, j)] = v[a];
        }
    }
    Dpr1Eigen { values, vectors }
}

/// Strictly increasing `d`, nonzero `z`. Returns ascending eigenvalues and
/// eigenvectors in the same (ascending) coordinates.
fn solve_reduced(d: &[f64], z: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let n = d.len();
    let zsq: Vec<f64> = z.iter().map(|v| v * v).collect();
    let zz: f64 = zsq.iter().sum();
    if n == 1 {
        return (vec![d[0] + zz], DMatrix::from_element(1, 1, 1.0));
    }

    let roots: Vec<Root> = (0..n).map(|j| find_root(d, &zsq, zz, j)).collect();
    // d_i − λ_j computed from the shifted representation.
    let diff = |i: usize, j: usize| -> f64 {
        let r = roots[j];
        (d[i] - d[r.origin]) - r.offset
    };

    // Löwner: the update vector for which the computed roots are exact.
    let mut zhat = vec![0.0; n];
    for i in 0..n {
        let mut prod = -diff(i, n - 1);
        for j in 0..i {
            prod *= -diff(i, j) / (d[j] - d[i]);
        }
        for j in i..n - 1 {
            prod *= -diff(i, j) / (d[j + 1] - d[i]);
        }
        zhat[i] = prod.abs().sqrt().copysign(z[i]);
    }

    let mut vectors = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut col = DVector::from_fn(n, |i, _| zhat[i] / diff(i, j));
        let norm = col.norm();
        col /= norm;
        vectors.set_column(j, &col);
    }
    let values = roots.iter().map(|r| d[r.origin] + r.offset).collect();
    (values, vectors)
}

/// Root `j` (0-based, ascending) of `1 + Σ zsq_i / (d_i − λ)`.
fn find_root(d: &[f64], zsq: &[f64], zz: f64, j: usize) -> Root {
    let n = d.len();
    let (origin, mut lo, mut hi) = if j + 1 < n {
        let half = 0.5 * (d[j + 1] - d[j]);
        if secular(d, zsq, j, half).0 >= 0.0 {
            (j, 0.0, half)
        } else {
            (j + 1, -half, 0.0)
        }
    } else {
        (j, 0.0, zz)
    };

    let mut tau = 0.5 * (lo + hi);
    for _ in 0..MAX_ROOT_ITERS {
        let (f, df) = secular(d, zsq, origin, tau);
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        let mut next = tau - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - tau).abs();
        tau = next;
        if step <= ROOT_REL_TOL * tau.abs() || hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs())
        {
            break;
        }
    }
    Root { origin, offset: tau }
}

/// Secular function and derivative at `λ = d[origin] + tau`.
fn secular(d: &[f64], zsq: &[f64], origin: usize, tau: f64) -> (f64, f64) {
    let base = d[origin];
    let mut f = 1.0;
    let mut df = 0.0;
    for (di, zi) in d.iter().zip(zsq) {
        let delta = (di - base) - tau;
        let t = zi / delta;
        f += t;
        df += t / delta;
    }
    (f, df)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense eigensolver oracle, sorted non-increasing.
    fn dense_oracle(p: &Dpr1Problem) -> (Vec<f64>, DMatrix<f64>) {
        let eig = SymmetricEigen::new(p.to_dense());
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_columns(
            &idx.iter()
                .map(|&i| eig.eigenvectors.column(i).into_owned())
                .collect::<Vec<_>>(),
        );
        (values, vectors)
    }

    fn random_problem(rng: &mut ChaCha8Rng, m: usize) -> Dpr1Problem {
        let mut s: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..4.0)).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let z = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        Dpr1Problem::new(s, z).unwrap()
    }

    #[test]
    fn zero_update_is_identity() {
        let p = Dpr1Problem::new(vec![3.0, 2.0, 1.0], vec![0.0; 3]).unwrap();
        let e = dpr1_eigen(&p);
        assert_eq!(e.values.as_slice(), &[3.0, 2.0, 1.0]);
        assert_eq!(e.vectors, DMatrix::identity(3, 3));
    }

    #[test]
    fn scalar_case() {
        let p = Dpr1Problem::new(vec![1.0], vec![2.0]).unwrap();
        let e = dpr1_eigen(&p);
        assert_eq!(e.values[0], 5.0);
        assert_eq!(e.vectors[(0, 0)].abs(), 1.0);
    }

    #[test]
    fn random_m4_matches_dense_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng, 4);
        let e = dpr1_eigen(&p);
        let (values, vectors) = dense_oracle(&p);
        for j in 0..4 {
            assert!((e.values[j] - values[j]).abs() < 1e-10);
            let a = e.vectors.column(j);
            let b = vectors.column(j);
            let dist = (a * a.transpose() - b * b.transpose()).norm();
            assert!(dist < 1e-8, "eigenvector {j} projector distance {dist}");
        }
    }

    #[test]
    fn repeated_diagonal_is_deflated() {
        let p = Dpr1Problem::new(vec![2.0, 2.0, 2.0, 1.0], vec![0.5, -0.3, 0.2, 0.4]).unwrap();
        let e = dpr1_eigen(&p);
        let (values, _) = dense_oracle(&p);
        for j in 0..4 {
            assert!((e.values[j] - values[j]).abs() < 1e-12);
        }
        let gram = e.vectors.tr_mul(&e.vectors);
        assert!((gram - DMatrix::identity(4, 4)).norm() < 1e-12);
        let recon = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert!((recon - p.to_dense()).norm() < 1e-12);
    }

    #[test]
    fn zero_diagonal_entries() {
        // The full-ISVD center matrix always carries a trailing zero.
        let p = Dpr1Problem::new(vec![4.0, 1.0, 0.0], vec![0.3, 0.7, 1.1]).unwrap();
        let e = dpr1_eigen(&p);
        let recon = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert!((recon - p.to_dense()).norm() < 1e-12);
    }

    #[test]
    fn clustered_poles_keep_orthogonality() {
        let p = Dpr1Problem::new(
            vec![1.0 + 1e-9, 1.0, 1.0 - 1e-9, 1e-3],
            vec![1e-4, 1.0, 1e-4, 0.5],
        )
        .unwrap();
        let e = dpr1_eigen(&p);
        let gram = e.vectors.tr_mul(&e.vectors);
        assert!((gram - DMatrix::identity(4, 4)).norm() < 1e-10);
        let recon = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert!((recon - p.to_dense()).norm() < 1e-10);
    }

    #[test]
    fn rejects_unsorted_diagonal() {
        assert!(Dpr1Problem::new(vec![1.0, 2.0], vec![1.0, 1.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn interlacing_and_trace(m in 1usize..9, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = random_problem(&mut rng, m);
                let e = dpr1_eigen(&p);
                let s = p.sigma_sq();
                let zz: f64 = p.z().iter().map(|v| v * v).sum();
                let tol = 1e-10 * (1.0 + s[0] + zz);
                for j in 0..m {
                    prop_assert!(e.values[j] >= s[j] - tol);
                    let upper = if j == 0 { s[0] + zz } else { s[j - 1] };
                    prop_assert!(e.values[j] <= upper + tol);
                }
                let trace: f64 = s.iter().sum::<f64>() + zz;
                prop_assert!((e.values.sum() - trace).abs() < tol);
                let gram = e.vectors.tr_mul(&e.vectors);
                prop_assert!((gram - DMatrix::identity(m, m)).norm() < 1e-10);
            }

            #[test]
            fn matches_dense_eigenvalues(m in 1usize..9, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = random_problem(&mut rng, m);
                let e = dpr1_eigen(&p);
                let (values, _) = dense_oracle(&p);
                for j in 0..m {
                    prop_assert!((e.values[j] - values[j]).abs() < 1e-10);
                }
            }
        }
    }
}
