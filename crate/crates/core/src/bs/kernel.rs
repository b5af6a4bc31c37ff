use std::collections::HashMap;
use std::sync::Mutex;

use faer::Mat;

use super::SupportSolves;
use crate::discretize::AssembledForms;
use crate::error::{Error, Result};
use crate::floquet::{rayleigh_weight, FloquetContext};
use crate::linalg::dense;
use crate::C64;

/// The support kernel `R(mu) = E* A0^{-1} M (M - mu A0)^{-1} E`.
///
/// `R(mu)` is Hermitian and does not depend on the defect strength, which is
/// what makes it worth caching across a family of defects.
pub trait ShiftedKernel: Sync {
    fn kernel(&self, mu: f64) -> Result<Mat<C64>>;

    /// Support dimension.
    fn dim(&self) -> usize;
}

/// `R(mu)` from a banded factorization of `M - mu A0` on the strip.
pub struct DirectKernel<'a> {
    strip0: &'a AssembledForms,
    solves: &'a SupportSolves,
}

impl<'a> DirectKernel<'a> {
    pub fn new(strip0: &'a AssembledForms, solves: &'a SupportSolves) -> Self {
        Self { strip0, solves }
    }
}

impl ShiftedKernel for DirectKernel<'_> {
    fn kernel(&self, mu: f64) -> Result<Mat<C64>> {
        let support = self.solves.support();
        let n = self.strip0.dim();
        let e = Mat::from_fn(n, support.len(), |i, a| {
            if support[a] == i {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let x = self.strip0.shifted_factor(mu)?.solve_many(e.as_ref());
        let mut mx = Mat::<C64>::zeros(n, support.len());
        for a in 0..support.len() {
            let col = self.strip0.mass().matvec(&dense::col_to_vec(x.as_ref(), a));
            for (i, v) in col.into_iter().enumerate() {
                mx[(i, a)] = v;
            }
        }
        Ok(dense::hermitian_part((self.solves.z0().adjoint() * mx).as_ref()))
    }

    fn dim(&self) -> usize {
        self.solves.support().len()
    }
}

/// `R(mu) = sum_p C_p* diag(g(lambda_s(k_p))) C_p` from complete fiber eigensystems.
pub struct BlochKernel {
    /// Fiber coefficients of the support unit functionals, stacked over fibers.
    c: Mat<C64>,
    lambdas: Vec<f64>,
}

impl BlochKernel {
    pub fn new(ctx: &FloquetContext, support: &[usize]) -> Result<Self> {
        if support.iter().any(|&g| g >= ctx.strip_dim()) {
            return Err(Error::InvalidInput("support node outside the strip".into()));
        }
        let per = ctx.cell_dim();
        let mut c = Mat::<C64>::zeros(per * ctx.n_y(), support.len());
        let mut lambdas = Vec::with_capacity(per * ctx.n_y());
        for p in 0..ctx.n_y() {
            let cp = ctx.support_coefficients(p, support);
            c.as_mut().subrows_mut(p * per, per).copy_from(&cp);
            lambdas.extend_from_slice(&ctx.eigen(p).lambdas);
        }
        Ok(Self { c, lambdas })
    }

    fn weighted(&self, w: impl Fn(f64) -> Result<f64>) -> Result<Mat<C64>> {
        let weights = self.lambdas.iter().map(|&l| w(l)).collect::<Result<Vec<_>>>()?;
        let scaled = Mat::from_fn(self.c.nrows(), self.c.ncols(), |i, a| self.c[(i, a)] * weights[i]);
        Ok(dense::hermitian_part((self.c.adjoint() * scaled).as_ref()))
    }

    /// `G0 = E* A0^{-1} E` through the fiber expansion.
    pub fn g0(&self) -> Result<Mat<C64>> {
        self.weighted(|l| Ok(1.0 / (l + 1.0)))
    }
}

impl ShiftedKernel for BlochKernel {
    fn kernel(&self, mu: f64) -> Result<Mat<C64>> {
        self.weighted(|l| rayleigh_weight(l, mu))
    }

    fn dim(&self) -> usize {
        self.c.ncols()
    }
}

/// Memoizes another kernel by the exact bit pattern of `mu`.
pub struct CachedKernel<K> {
    inner: K,
    cache: Mutex<HashMap<u64, Mat<C64>>>,
}

impl<K: ShiftedKernel> CachedKernel<K> {
    pub fn new(inner: K) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &K {
        &self.inner
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }
}

impl<K: ShiftedKernel> ShiftedKernel for CachedKernel<K> {
    fn kernel(&self, mu: f64) -> Result<Mat<C64>> {
        let key = mu.to_bits();
        if let Some(m) = self.cache.lock().map_err(|_| Error::Internal("kernel cache poisoned".into()))?.get(&key) {
            return Ok(m.clone());
        }
        let m = self.inner.kernel(mu)?;
        self.cache
            .lock()
            .map_err(|_| Error::Internal("kernel cache poisoned".into()))?
            .insert(key, m.clone());
        Ok(m)
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::discretize::defect_coupling;

    #[test]
    fn direct_and_bloch_kernels_agree() {
        let s = small(4, 5, 1.0);
        let c = defect_coupling(s.strip0.mesh(), &s.eps0, &s.eps1).unwrap();
        let solves = SupportSolves::direct(&s.strip0, &c.support).unwrap();
        let ctx = FloquetContext::new(&s.cell, 0.0, 5).unwrap();
        let bloch = BlochKernel::new(&ctx, &c.support).unwrap();
        let direct = DirectKernel::new(&s.strip0, &solves);
        let g0 = bloch.g0().unwrap();
        let scale = solves.g0().norm_max();
        assert!((&g0 - solves.g0()).norm_max() < 1e-11 * scale);
        let (l0, l1) = gap_in(&ctx.fiber_spectrum());
        let mu = 2.0 / (l0 + l1 + 2.0);
        let (a, b) = (direct.kernel(mu).unwrap(), bloch.kernel(mu).unwrap());
        assert!((&a - &b).norm_max() < 1e-10 * b.norm_max());
        let cached = CachedKernel::new(bloch);
        let _ = cached.kernel(mu).unwrap();
        assert_eq!(cached.cached(), 1);
        assert!((&cached.kernel(mu).unwrap() - &b).norm_max() == 0.0);
    }
}
