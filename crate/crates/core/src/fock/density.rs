use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::state::StateVector;
use crate::error::{Error, Result};

const HERMITIAN_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-8;

/// Density operator over a product of truncated Fock spaces. Basis index is
/// row-major in the occupation numbers, first mode most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dims: Vec<usize>,
    matrix: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn new(dims: Vec<usize>, matrix: DMatrix<Complex64>) -> Result<Self> {
        let d: usize = dims.iter().product();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Numeric(format!(
                "matrix is {}x{} but dims {dims:?} need {d}x{d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { dims, matrix })
    }

    pub fn from_pure(state: &StateVector) -> Self {
        let keep: Vec<usize> = (0..state.modes()).collect();
        Self::from_branches(std::slice::from_ref(state), &keep)
    }

    /// `Σ_b Tr_rest |ψ_b⟩⟨ψ_b|` for an incoherent set of unnormalised
    /// branches, keeping `keep` in the given order. Each kept mode gets
    /// dimension one above its largest occupation.
    pub fn from_branches(branches: &[StateVector], keep: &[usize]) -> Self {
        let mut dims = vec![1usize; keep.len()];
        for b in branches {
            for (occ, _) in b.iter() {
                for (slot, &mode) in keep.iter().enumerate() {
                    dims[slot] = dims[slot].max(usize::from(occ[mode]) + 1);
                }
            }
        }
        Self::from_branches_with_dims(branches, keep, &dims)
            .expect("dimensions were sized to fit every occupation")
    }

    pub fn from_branches_with_dims(branches: &[StateVector], keep: &[usize], dims: &[usize]) -> Result<Self> {
        let d: usize = dims.iter().product();
        let mut matrix = DMatrix::<Complex64>::zeros(d, d);
        for branch in branches {
            // Group amplitudes by the traced-out occupation; each group is a
            // vector on the kept modes contributing one outer product.
            let mut groups: std::collections::BTreeMap<Vec<u8>, Vec<(usize, Complex64)>> = Default::default();
            for (occ, amp) in branch.iter() {
                let mut index = 0usize;
                for (slot, &mode) in keep.iter().enumerate() {
                    let n = usize::from(occ[mode]);
                    if n >= dims[slot] {
                        return Err(Error::Truncation {
                            cutoff: dims[slot] - 1,
                            tail: amp.norm_sqr(),
                            limit: 0.0,
                        });
                    }
                    index = index * dims[slot] + n;
                }
                let rest: Vec<u8> = occ
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| !keep.contains(k))
                    .map(|(_, &n)| n)
                    .collect();
                groups.entry(rest).or_default().push((index, *amp));
            }
            for entries in groups.values() {
                for &(i, ai) in entries {
                    for &(j, aj) in entries {
                        matrix[(i, j)] += ai * aj.conj();
                    }
                }
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            matrix,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn element(&self, row: &[usize], col: &[usize]) -> Complex64 {
        self.matrix[(self.flat(row), self.flat(col))]
    }

    fn flat(&self, digits: &[usize]) -> usize {
        digits.iter().zip(&self.dims).fold(0, |acc, (&n, &d)| acc * d + n)
    }

    fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (slot, &d) in self.dims.iter().enumerate().rev() {
            out[slot] = index % d;
            index /= d;
        }
        out
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn normalized(&self) -> Result<Self> {
        let t = self.trace();
        if !(t > 0.0) {
            return Err(Error::ProbabilityUnderflow(t));
        }
        Ok(Self {
            dims: self.dims.clone(),
            matrix: self.matrix.unscale(t),
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dims: self.dims.clone(),
            matrix: self.matrix.scale(factor),
        }
    }

    pub fn add(&self, other: &DensityMatrix) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::Numeric(format!(
                "cannot add density matrices with dims {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Self {
            dims: self.dims.clone(),
            matrix: &self.matrix + &other.matrix,
        })
    }

    /// Largest deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Spectrum of the Hermitian part. Photon-number conservation makes
    /// most states here block diagonal up to a permutation, so each block
    /// of the exact-nonzero pattern is diagonalised on its own.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let hermitian = (&self.matrix + self.matrix.adjoint()).scale(0.5);
        let mut out = Vec::with_capacity(self.dim());
        for block in coupled_blocks(&hermitian) {
            if let [i] = block[..] {
                out.push(hermitian[(i, i)].re);
                continue;
            }
            let sub = DMatrix::from_fn(block.len(), block.len(), |r, c| hermitian[(block[r], block[c])]);
            out.extend(sub.symmetric_eigenvalues().iter().copied());
        }
        out
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// Reduced state on `keep` (slots of this matrix, in the given order).
    pub fn partial_trace(&self, keep: &[usize]) -> DensityMatrix {
        let dims: Vec<usize> = keep.iter().map(|&k| self.dims[k]).collect();
        let d: usize = dims.iter().product();
        let mut out = DMatrix::<Complex64>::zeros(d, d);
        let digits: Vec<Vec<usize>> = (0..self.dim()).map(|i| self.digits(i)).collect();
        let traced: Vec<usize> = (0..self.dims.len()).filter(|k| !keep.contains(k)).collect();
        let reduced_index = |dg: &[usize]| keep.iter().zip(&dims).fold(0, |acc, (&k, &dd)| acc * dd + dg[k]);
        for i in 0..self.dim() {
            let ri = reduced_index(&digits[i]);
            for j in 0..self.dim() {
                if traced.iter().all(|&k| digits[i][k] == digits[j][k]) {
                    out[(ri, reduced_index(&digits[j]))] += self.matrix[(i, j)];
                }
            }
        }
        DensityMatrix { dims, matrix: out }
    }

    /// `⟨ψ|ρ|ψ⟩ / (Tr ρ ⟨ψ|ψ⟩)` with `ψ` expressed on the same modes.
    pub fn fidelity_with_pure(&self, psi: &StateVector) -> Result<f64> {
        if psi.modes() != self.dims.len() {
            return Err(Error::Numeric(format!(
                "state has {} modes, density matrix {}",
                psi.modes(),
                self.dims.len()
            )));
        }
        let mut v = nalgebra::DVector::<Complex64>::zeros(self.dim());
        for (occ, amp) in psi.iter() {
            let digits: Vec<usize> = occ.iter().map(|&n| usize::from(n)).collect();
            if digits.iter().zip(&self.dims).any(|(&n, &d)| n >= d) {
                continue;
            }
            v[self.flat(&digits)] += amp;
        }
        let overlap = (v.adjoint() * &self.matrix * &v)[(0, 0)].re;
        Ok(overlap / (self.trace() * psi.norm_sqr()))
    }

    /// Checks Hermiticity, positivity and unit trace within tolerance.
    pub fn validate_normalized(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::Numeric(format!("density matrix not Hermitian (error {herm:e})")));
        }
        let min = self.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::Numeric(format!("density matrix has eigenvalue {min:e}")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::Numeric(format!("density matrix has trace {tr}")));
        }
        Ok(())
    }

    pub fn to_dump(&self) -> DensityDump {
        let mut entries = Vec::new();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let v = self.matrix[(i, j)];
                if v.norm() > 0.0 {
                    entries.push(DensityEntry {
                        row: self.digits(i),
                        col: self.digits(j),
                        re: v.re,
                        im: v.im,
                    });
                }
            }
        }
        DensityDump {
            dims: self.dims.clone(),
            trace: self.trace(),
            entries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEntry {
    pub row: Vec<usize>,
    pub col: Vec<usize>,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityDump {
    pub dims: Vec<usize>,
    pub trace: f64,
    pub entries: Vec<DensityEntry>,
}

/// Index sets of the connected components of the nonzero pattern.
fn coupled_blocks(m: &DMatrix<Complex64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for j in 0..n {
        for i in 0..j {
            let z = m[(i, j)];
            if z.re != 0.0 || z.im != 0.0 {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Von Neumann entropy in bits of a normalised state.
pub fn entropy(rho: &DensityMatrix) -> Result<f64> {
    let tr = rho.trace();
    if (tr - 1.0).abs() > TRACE_TOL {
        return Err(Error::Numeric(format!("entropy needs a normalised state, trace is {tr}")));
    }
    let mut s = 0.0;
    for lambda in rho.eigenvalues() {
        if lambda < -PSD_TOL {
            return Err(Error::Numeric(format!("negative eigenvalue {lambda:e}")));
        }
        if lambda > 0.0 {
            s -= lambda * lambda.log2();
        }
    }
    Ok(s.max(0.0))
}

/// `S(ρ_kept) - S(ρ)`, the coherent information towards the side that is
/// traced out. With `kept = A` this is the reverse coherent information
/// `S(A) - S(AB)`.
pub fn rci(rho: &DensityMatrix, kept: &[usize]) -> Result<f64> {
    Ok(entropy(&rho.partial_trace(kept))? - entropy(rho)?)
}

/// Both orderings: `(S(A) - S(AB), S(B) - S(AB))` for a two-party state
/// whose first `split` slots belong to A.
pub fn coherent_informations(rho: &DensityMatrix, split: usize) -> Result<(f64, f64)> {
    let n = rho.dims().len();
    let a: Vec<usize> = (0..split).collect();
    let b: Vec<usize> = (split..n).collect();
    let joint = entropy(rho)?;
    Ok((
        entropy(&rho.partial_trace(&a))? - joint,
        entropy(&rho.partial_trace(&b))? - joint,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn bell() -> StateVector {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        StateVector::from_amplitudes(2, [(vec![1, 0], c(h)), (vec![0, 1], c(h))]).unwrap()
    }

    #[test]
    fn product_state_has_pure_marginal() {
        let psi = StateVector::from_amplitudes(
            2,
            [
                (vec![0, 0], c(0.6 * 0.8)),
                (vec![0, 1], c(0.6 * 0.6)),
                (vec![1, 0], c(0.8 * 0.8)),
                (vec![1, 1], c(0.8 * 0.6)),
            ],
        )
        .unwrap();
        let rho = DensityMatrix::from_pure(&psi);
        let a = rho.partial_trace(&[0]);
        assert!((a.purity() - 1.0).abs() < 1e-10);
        assert!(entropy(&rho).unwrap() < 1e-10);
        assert!(rci(&rho, &[0]).unwrap().abs() < 1e-9);
    }

    #[test]
    fn bell_marginal_is_maximally_mixed() {
        let rho = DensityMatrix::from_pure(&bell());
        let a = rho.partial_trace(&[0]);
        assert!((entropy(&a).unwrap() - 1.0).abs() < 1e-12);
        assert!((rci(&rho, &[0]).unwrap() - 1.0).abs() < 1e-12);
        let (ab, ba) = coherent_informations(&rho, 1).unwrap();
        assert!((ab - 1.0).abs() < 1e-12 && (ba - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_bell_rci_against_hand_diagonalisation() {
        let eps = 0.1;
        let pure = DensityMatrix::from_pure(&bell()).scaled(1.0 - eps);
        let vac = DensityMatrix::from_branches_with_dims(&[StateVector::vacuum(2)], &[0, 1], &[2, 2])
            .unwrap()
            .scaled(eps);
        let rho = pure.add(&vac).unwrap();
        // Joint spectrum {1-ε, ε}; marginal diag {ε + (1-ε)/2, (1-ε)/2}.
        let h = |p: &[f64]| -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.log2()).sum::<f64>();
        let expected = h(&[eps + (1.0 - eps) / 2.0, (1.0 - eps) / 2.0]) - h(&[1.0 - eps, eps]);
        assert!((rci(&rho, &[0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn branches_trace_out_environment() {
        // |1⟩ split onto an environment mode: the kept marginal is diagonal.
        let psi = super::super::state::balanced_beamsplitter(&StateVector::basis(vec![1, 0]), (0, 1)).unwrap();
        let rho = DensityMatrix::from_branches(&[psi], &[0]);
        assert_eq!(rho.dims(), &[2]);
        assert!((rho.matrix()[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!(rho.matrix()[(0, 1)].norm() < 1e-15);
        assert!((entropy(&rho).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_of_pure_state_with_itself() {
        let rho = DensityMatrix::from_pure(&bell());
        assert!((rho.fidelity_with_pure(&bell()).unwrap() - 1.0).abs() < 1e-12);
        let other = StateVector::basis(vec![1, 0]);
        assert!((rho.fidelity_with_pure(&other).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn block_spectrum_matches_dense() {
        // Two blocks interleaved by a permutation, {0, 2} and {1, 3}.
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[
                c(0.4), c(0.0), c(0.1), c(0.0),
                c(0.0), c(0.3), c(0.0), Complex64::new(0.05, 0.02),
                c(0.1), c(0.0), c(0.2), c(0.0),
                c(0.0), Complex64::new(0.05, -0.02), c(0.0), c(0.1),
            ],
        );
        let rho = DensityMatrix::new(vec![4], m.clone()).unwrap();
        let mut blocked = rho.eigenvalues();
        let mut dense: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        blocked.sort_by(f64::total_cmp);
        dense.sort_by(f64::total_cmp);
        for (a, b) in blocked.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn entropy_rejects_unnormalised() {
        let rho = DensityMatrix::from_pure(&bell()).scaled(0.5);
        assert!(entropy(&rho).is_err());
    }
}
