//! Explicit matrices for tiny instances. These are oracles for the
//! structured operators in [`crate::cassi`] and are never used by solvers.
//!
//! Conventions: `vec(y)` is the row-major detector frame
//! (`index = row * W+ + col`); the shifted unknown is the band-major
//! concatenation of shifted frames (`index = b * H * W+ + row * W+ + col`);
//! the aligned unknown is the band-major cube (`b * H * W + row * W + col`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cube::{CodedMask, DispersionSpec};
use crate::error::{Error, Result};

pub const DENSE_GUARD: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(v: &[f64]) -> Self {
        let mut m = Self::zeros(v.len(), v.len());
        for (i, &x) in v.iter().enumerate() {
            m.data[i * v.len() + i] = x;
        }
        m
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.at(r, c);
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.at(k, j);
                }
            }
        }
        out
    }
}

fn guard(height: usize, width: usize, bands: usize) -> Result<()> {
    let n = height * width * bands;
    if n > DENSE_GUARD {
        return Err(Error::SizeGuard(n));
    }
    Ok(())
}

/// `A` acting on the shifted, band-concatenated cube.
pub fn build_dense_operator(
    height: usize,
    width: usize,
    bands: usize,
    mask: &CodedMask,
    spec: DispersionSpec,
) -> Result<DenseMatrix> {
    guard(height, width, bands)?;
    mask.check_matches(height, width)?;
    let fw = spec.frame_width(width, bands);
    let m = height * fw;
    let mut a = DenseMatrix::zeros(m, bands * m);
    for b in 0..bands {
        let off = spec.offset(b);
        for r in 0..height {
            for c in 0..width {
                let d = r * fw + c + off;
                a.set(d, b * m + d, mask.pattern[r * width + c]);
            }
        }
    }
    Ok(a)
}

/// Embedding `P_b` of an aligned `H x W` band into the detector frame.
pub fn band_permutation(
    height: usize,
    width: usize,
    bands: usize,
    band: usize,
    spec: DispersionSpec,
) -> DenseMatrix {
    let fw = spec.frame_width(width, bands);
    let mut p = DenseMatrix::zeros(height * fw, height * width);
    for r in 0..height {
        for c in 0..width {
            p.set(r * fw + c + spec.offset(band), r * width + c, 1.0);
        }
    }
    p
}

/// `[P_1 diag(m), ..., P_L diag(m)]`: mask first, then disperse, acting on
/// the aligned band-major cube.
pub fn build_physical_operator(
    height: usize,
    width: usize,
    bands: usize,
    mask: &CodedMask,
    spec: DispersionSpec,
) -> Result<DenseMatrix> {
    guard(height, width, bands)?;
    mask.check_matches(height, width)?;
    let n = height * width;
    let dm = DenseMatrix::diag(&mask.pattern);
    let fw = spec.frame_width(width, bands);
    let mut a = DenseMatrix::zeros(height * fw, bands * n);
    for b in 0..bands {
        let block = band_permutation(height, width, bands, b, spec).matmul(&dm);
        for r in 0..block.rows {
            for c in 0..n {
                a.set(r, b * n + c, block.at(r, c));
            }
        }
    }
    Ok(a)
}

/// Permutation matrix with `(P u)[i] = u[perm[i]]`.
pub fn permutation_matrix(perm: &[usize]) -> Result<DenseMatrix> {
    let n = perm.len();
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::NotBijection(format!("{perm:?}")));
        }
        seen[p] = true;
    }
    let mut m = DenseMatrix::zeros(n, n);
    for (i, &p) in perm.iter().enumerate() {
        m.set(i, p, 1.0);
    }
    Ok(m)
}

/// Max over `probes` random vectors `u` of
/// `|diag(v) P u - P diag(P^T v) u|`, evaluated with dense products.
pub fn verify_perm_identity(v: &[f64], perm: &[usize], probes: usize, seed: u64) -> Result<f64> {
    if v.len() != perm.len() {
        return Err(Error::Dimension(format!(
            "vector of {} for permutation of {}",
            v.len(),
            perm.len()
        )));
    }
    let p = permutation_matrix(perm)?;
    let lhs = DenseMatrix::diag(v).matmul(&p);
    let ptv = p.transpose().matvec(v);
    let rhs = p.matmul(&DenseMatrix::diag(&ptv));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let u: Vec<f64> = (0..v.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = lhs.matvec(&u);
        let b = rhs.matvec(&u);
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}
