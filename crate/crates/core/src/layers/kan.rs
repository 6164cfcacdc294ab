//! Kolmogorov–Arnold unit: a linear base map plus learnable per-edge
//! cubic B-splines on a fixed uniform grid.

use rand::Rng;

use super::uniform;
use crate::numerics::{Backward, Mode, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// Uniform knots on `[lo, hi]` with `intervals` cells, extended by `order`
/// knots on each side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnotGrid {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
    pub order: usize,
}

impl Default for KnotGrid {
    fn default() -> Self {
        KnotGrid {
            lo: -1.0,
            hi: 1.0,
            intervals: 5,
            order: 3,
        }
    }
}

impl KnotGrid {
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.intervals as f64
    }

    pub fn n_basis(&self) -> usize {
        self.intervals + self.order
    }

    /// Knot `m` for `m = 0..=intervals + 2·order`.
    pub fn knot(&self, m: usize) -> f64 {
        self.lo + (m as f64 - self.order as f64) * self.step()
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..=self.intervals + 2 * self.order).map(|m| self.knot(m)).collect()
    }

    /// Nonzero basis values at `x` (clamped to the grid): returns the index
    /// of the first nonzero basis and fills `vals` (and `dvals`, the
    /// derivative in `x`) with `order + 1` entries. The derivative is 0
    /// outside the grid, where the input is clamped.
    fn eval<T: Real>(&self, x: T, vals: &mut [T], dvals: Option<&mut [T]>) -> usize {
        let k = self.order;
        let clamped = x < T::lit(self.lo) || x > T::lit(self.hi);
        let x = x.max(T::lit(self.lo)).min(T::lit(self.hi));
        let h = T::lit(self.step());
        let cell = ((x - T::lit(self.lo)) / h).floor().to_usize().unwrap_or(0);
        // knot span holding x, closing the last cell on the right
        let span = cell.min(self.intervals - 1) + k;
        let t = |m: usize| T::lit(self.knot(m));

        let mut left = vec![T::zero(); k + 1];
        let mut right = vec![T::zero(); k + 1];
        vals[0] = T::one();
        let mut lower = vec![T::zero(); k + 1];
        for j in 1..=k {
            if j == k {
                lower[..k].copy_from_slice(&vals[..k]);
            }
            left[j] = x - t(span + 1 - j);
            right[j] = t(span + j) - x;
            let mut saved = T::zero();
            for r in 0..j {
                let tmp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        if let Some(dv) = dvals {
            if clamped || k == 0 {
                dv[..=k].fill(T::zero());
            } else {
                // B'_{j,k} = (B_{j,k−1} − B_{j+1,k−1}) / h, with lower[r]
                // holding B_{span−k+1+r, k−1}
                for r in 0..=k {
                    let a = if r >= 1 { lower[r - 1] } else { T::zero() };
                    let b = if r < k { lower[r] } else { T::zero() };
                    dv[r] = (a - b) / h;
                }
            }
        }
        span - k
    }
}

/// All `n_basis` values at `x` (clamped to the grid).
pub fn bspline_basis<T: Real>(grid: &KnotGrid, x: T) -> Vec<T> {
    let mut vals = vec![T::zero(); grid.order + 1];
    let first = grid.eval(x, &mut vals, None);
    let mut out = vec![T::zero(); grid.n_basis()];
    out[first..first + grid.order + 1].copy_from_slice(&vals);
    out
}

/// Derivatives of [`bspline_basis`] in `x`.
pub fn bspline_basis_derivative<T: Real>(grid: &KnotGrid, x: T) -> Vec<T> {
    let mut vals = vec![T::zero(); grid.order + 1];
    let mut dvals = vec![T::zero(); grid.order + 1];
    let first = grid.eval(x, &mut vals, Some(&mut dvals));
    let mut out = vec![T::zero(); grid.n_basis()];
    out[first..first + grid.order + 1].copy_from_slice(&dvals);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineParams {
    pub grid: KnotGrid,
    /// `[out, in, n_basis]`
    pub w: ParamId,
    /// `[out, in]`
    pub scaler: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanParams {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[in, out]`
    pub w_base: ParamId,
    pub b_base: ParamId,
    /// `None` leaves a plain linear layer.
    pub spline: Option<SplineParams>,
}

impl KanParams {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        with_spline: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w_base = store.add(format!("{prefix}.w_base"), uniform(&[in_dim, out_dim], bound, rng));
        let b_base = store.add(format!("{prefix}.b_base"), uniform(&[out_dim], bound, rng));
        let spline = with_spline.then(|| {
            let grid = KnotGrid::default();
            SplineParams {
                grid,
                w: store.add(
                    format!("{prefix}.w_spline"),
                    uniform(&[out_dim, in_dim, grid.n_basis()], 0.1 * bound, rng),
                ),
                scaler: store.add(format!("{prefix}.spline_scaler"), Tensor::ones(&[out_dim, in_dim])),
            }
        });
        KanParams { in_dim, out_dim, w_base, b_base, spline }
    }
}

/// Nonzero basis windows for every input entry.
struct BasisCache<T> {
    first: Vec<usize>,
    vals: Vec<T>,
    dvals: Vec<T>,
    width: usize,
}

impl<T: Real> BasisCache<T> {
    fn new(grid: &KnotGrid, x: &[T]) -> Self {
        let width = grid.order + 1;
        let mut c = BasisCache {
            first: Vec::with_capacity(x.len()),
            vals: vec![T::zero(); x.len() * width],
            dvals: vec![T::zero(); x.len() * width],
            width,
        };
        for (e, &v) in x.iter().enumerate() {
            let r = e * width..(e + 1) * width;
            let (vals, dvals) = (&mut c.vals[r.clone()], &mut c.dvals[r]);
            c.first.push(grid.eval(v, vals, Some(dvals)));
        }
        c
    }
}

struct SplineBackward<T> {
    cache: BasisCache<T>,
    dims: (usize, usize, usize, usize),
}

impl<T: Real> Backward<T> for SplineBackward<T> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (n, din, dout, nb) = self.dims;
        let (w, sc) = (inputs[1].data(), inputs[2].data());
        let g = grad.data();
        let c = &self.cache;
        let mut gx = vec![T::zero(); n * din];
        let mut gw = vec![T::zero(); w.len()];
        let mut gs = vec![T::zero(); sc.len()];
        for r in 0..n {
            for i in 0..din {
                let e = r * din + i;
                let f = c.first[e];
                let vals = &c.vals[e * c.width..(e + 1) * c.width];
                let dvals = &c.dvals[e * c.width..(e + 1) * c.width];
                let mut gxe = T::zero();
                for o in 0..dout {
                    let go = g[r * dout + o];
                    let s = sc[o * din + i];
                    let wrow = &w[(o * din + i) * nb..(o * din + i + 1) * nb];
                    let mut phi = T::zero();
                    let mut dphi = T::zero();
                    for q in 0..c.width {
                        phi = phi + wrow[f + q] * vals[q];
                        dphi = dphi + wrow[f + q] * dvals[q];
                        let wi = (o * din + i) * nb + f + q;
                        gw[wi] = gw[wi] + go * s * vals[q];
                    }
                    gs[o * din + i] = gs[o * din + i] + go * phi;
                    gxe = gxe + go * s * dphi;
                }
                gx[e] = gxe;
            }
        }
        Ok(vec![
            Some(Tensor::new(inputs[0].shape(), gx)?),
            Some(Tensor::new(inputs[1].shape(), gw)?),
            Some(Tensor::new(inputs[2].shape(), gs)?),
        ])
    }
}

/// `spline[n, o] = Σ_i scaler[o, i] · Σ_j w[o, i, j]·B_j(x[n, i])`.
pub fn spline_op<T: Real>(tape: &mut Tape<T>, grid: &KnotGrid, x: Var, w: Var, scaler: Var) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(w).to_vec();
    let [n, din] = xs[..] else {
        return Err(Error::Shape(format!("spline input must be [batch, in], got {xs:?}")));
    };
    let nb = grid.n_basis();
    let dout = match ws[..] {
        [o, i, b] if i == din && b == nb => o,
        _ => return Err(Error::Shape(format!("spline weights {ws:?} for input {xs:?}"))),
    };
    if tape.shape(scaler) != [dout, din] {
        return Err(Error::Shape(format!("spline scaler {:?}", tape.shape(scaler))));
    }
    let cache = BasisCache::new(grid, tape.value(x).data());
    let (wv, sv) = (tape.value(w).data(), tape.value(scaler).data());
    let mut out = vec![T::zero(); n * dout];
    for r in 0..n {
        for o in 0..dout {
            let mut acc = T::zero();
            for i in 0..din {
                let e = r * din + i;
                let f = cache.first[e];
                let vals = &cache.vals[e * cache.width..(e + 1) * cache.width];
                let wrow = &wv[(o * din + i) * nb..(o * din + i + 1) * nb];
                let phi: T = (0..cache.width).map(|q| wrow[f + q] * vals[q]).sum();
                acc = acc + sv[o * din + i] * phi;
            }
            out[r * dout + o] = acc;
        }
    }
    let out = Tensor::new(&[n, dout], out)?;
    tape.custom(
        "kan_spline",
        &[x, w, scaler],
        out,
        Box::new(SplineBackward {
            cache,
            dims: (n, din, dout, nb),
        }),
    )
}

/// `dropout(x·W_base + b_base + spline(x))` on `x: [N, in]`.
#[allow(clippy::too_many_arguments)]
pub fn kan_forward<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &KanParams,
    x: Var,
    dropout: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if tape.shape(x).len() != 2 || tape.shape(x)[1] != p.in_dim {
        return Err(Error::Shape(format!(
            "unit input {:?}, expected [batch, {}]",
            tape.shape(x),
            p.in_dim
        )));
    }
    let w = tape.param(store, p.w_base);
    let b = tape.param(store, p.b_base);
    let base = tape.linear(x, w, Some(b))?;
    let Some(sp) = &p.spline else {
        return Ok(base);
    };
    let w = tape.param(store, sp.w);
    let s = tape.param(store, sp.scaler);
    let spline = spline_op(tape, &sp.grid, x, w, s)?;
    let y = tape.add(base, spline)?;
    tape.dropout(y, dropout, mode, rng)
}

/// Mean absolute spline weight; `None` for a unit without splines.
pub fn kan_reg_loss<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, p: &KanParams) -> Result<Option<Var>> {
    match &p.spline {
        Some(sp) => {
            let w = tape.param(store, sp.w);
            tape.mean_abs(w).map(Some)
        }
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::layers::test_support::{probe_loss, random, rng};
    use crate::numerics::gradcheck;

    /// Textbook Cox–de Boor recursion on half-open knot spans.
    fn cox_de_boor(t: &[f64], j: usize, k: usize, x: f64) -> f64 {
        if k == 0 {
            return if t[j] <= x && x < t[j + 1] { 1.0 } else { 0.0 };
        }
        let a = (x - t[j]) / (t[j + k] - t[j]) * cox_de_boor(t, j, k - 1, x);
        let b = (t[j + k + 1] - x) / (t[j + k + 1] - t[j + 1]) * cox_de_boor(t, j + 1, k - 1, x);
        a + b
    }

    #[test]
    fn knot_layout() {
        let g = KnotGrid::default();
        assert_eq!(g.n_basis(), 8);
        let t = g.knots();
        assert_eq!(t.len(), 12);
        assert!((t[3] + 1.0).abs() < 1e-15 && (t[8] - 1.0).abs() < 1e-15);
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn linear_hat_apex_at_knot() {
        let g = KnotGrid { order: 1, ..KnotGrid::default() };
        for m in 2..=5 {
            let b = bspline_basis(&g, g.knot(m));
            assert!((b[m - 1] - 1.0).abs() <= 1e-12, "{b:?}");
            assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn matches_recursive_oracle() {
        let g = KnotGrid::default();
        let t = g.knots();
        let mut r = rng(3);
        for _ in 0..500 {
            let x: f64 = r.random_range(-1.0..1.0);
            let b = bspline_basis(&g, x);
            for (j, v) in b.iter().enumerate() {
                assert!((v - cox_de_boor(&t, j, 3, x)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn partition_of_unity_and_bounds() {
        let g = KnotGrid::default();
        let mut r = rng(4);
        for x in (0..2000).map(|_| r.random_range(-1.0..=1.0)).chain([-1.0, 1.0, 0.0]) {
            let b = bspline_basis(&g, x);
            assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(b.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(b.iter().filter(|&&v| v != 0.0).count() <= 4);
        }
    }

    #[test]
    fn derivative_matches_differences() {
        let g = KnotGrid::default();
        let mut r = rng(5);
        for _ in 0..200 {
            let x: f64 = r.random_range(-0.99..0.99);
            let d = bspline_basis_derivative(&g, x);
            let (p, m) = (bspline_basis(&g, x + 1e-6), bspline_basis(&g, x - 1e-6));
            for j in 0..8 {
                assert!((d[j] - (p[j] - m[j]) / 2e-6).abs() <= 1e-5);
            }
        }
        assert!(bspline_basis_derivative(&g, 1.5).iter().all(|&v| v == 0.0));
    }

    fn unit(din: usize, dout: usize) -> (ParamStore<f64>, KanParams) {
        let mut store = ParamStore::new();
        let p = KanParams::new(&mut store, "k", din, dout, true, &mut rng(7));
        (store, p)
    }

    fn run(store: &ParamStore<f64>, p: &KanParams, x: &Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = kan_forward(&mut tape, store, p, xv, 0.3, Mode::Eval, &mut rng(0)).unwrap();
        tape.value(y).clone()
    }

    fn base_only(store: &ParamStore<f64>, p: &KanParams, x: &Tensor<f64>) -> Tensor<f64> {
        let mut y = x.matmul(store.value(p.w_base)).unwrap();
        let b = store.value(p.b_base).data();
        for row in y.data_mut().chunks_mut(p.out_dim) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        y
    }

    #[test]
    fn zero_spline_reduces_to_base() {
        let x = random(&[5, 3], &mut rng(1));
        let (mut store, p) = unit(3, 2);
        let sp = p.spline.clone().unwrap();
        store.get_mut(sp.w).value.fill(0.0);
        assert!(run(&store, &p, &x).max_abs_diff(&base_only(&store, &p, &x)).unwrap() <= 1e-12);

        let (mut store, p) = unit(3, 2);
        store.get_mut(sp.scaler).value.fill(0.0);
        assert!(run(&store, &p, &x).max_abs_diff(&base_only(&store, &p, &x)).unwrap() <= 1e-12);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let (mut store, p) = unit(3, 4);
        let sp = p.spline.clone().unwrap();
        let mut r = rng(9);
        store.get_mut(sp.w).value = random(&[4, 3, 8], &mut r);
        store.get_mut(sp.scaler).value = random(&[4, 3], &mut r);
        let x = Tensor::from_fn(&[6, 3], |_| r.random_range(-1.3..1.3));
        let y = run(&store, &p, &x);
        let base = base_only(&store, &p, &x);
        let (w, s) = (store.value(sp.w).data(), store.value(sp.scaler).data());
        let t = sp.grid.knots();
        for n in 0..6 {
            for o in 0..4 {
                let mut acc = base.data()[n * 4 + o];
                for i in 0..3 {
                    let xi = x.data()[n * 3 + i].clamp(-1.0, 1.0 - 1e-15);
                    for j in 0..8 {
                        acc += s[o * 3 + i] * w[(o * 3 + i) * 8 + j] * cox_de_boor(&t, j, 3, xi);
                    }
                }
                assert!((y.data()[n * 4 + o] - acc).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn reg_loss_is_mean_abs() {
        let (mut store, p) = unit(2, 2);
        let sp = p.spline.clone().unwrap();
        let value = |store: &ParamStore<f64>| {
            let mut tape = Tape::new();
            let v = kan_reg_loss(&mut tape, store, &p).unwrap().unwrap();
            tape.value(v).item().unwrap()
        };
        store.get_mut(sp.w).value.fill(0.0);
        assert_eq!(value(&store), 0.0);
        store.get_mut(sp.w).value.fill(-0.25);
        assert_eq!(value(&store), 0.25);
        store.get_mut(sp.w).value = random(&[2, 2, 8], &mut rng(2));
        let want = store.value(sp.w).data().iter().map(|v| v.abs()).sum::<f64>() / 32.0;
        assert!((value(&store) - want).abs() <= 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut store, p) = unit(3, 2);
        let sp = p.spline.clone().unwrap();
        store.get_mut(sp.w).value = random(&[2, 3, 8], &mut rng(11));
        store.get_mut(sp.scaler).value = random(&[2, 3], &mut rng(12));
        let xid = store.add("x", Tensor::from_fn(&[4, 3], {
            let mut r = rng(13);
            move |_| r.random_range(-0.95..0.95)
        }));
        let report = gradcheck(
            &mut store,
            |tape, s| {
                let x = tape.param(s, xid);
                let y = kan_forward(tape, s, &p, x, 0.0, Mode::Train, &mut rng(0))?;
                let reg = kan_reg_loss(tape, s, &p)?.unwrap();
                let l = probe_loss(tape, y, 14)?;
                tape.add(l, reg)
            },
            1e-6,
            60,
            3,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }
}
