//! Selective state-space block.
//!
//! ```text
//! x, z = chunk2(u·W_in + b_in)
//! x'   = SiLU(causal_conv(x))
//! Δt   = softplus(x'·W_x[:, :R] · W_dt + b_dt),  B = x'·W_x[:, R:R+N],  C = x'·W_x[:, R+N:]
//! S_t  = Ā_t ⊙ S_{t−1} + Δt_t·B_t·x'_t,  y_t = S_t·C_t + D ⊙ x'_t
//! out  = dropout((y ⊙ SiLU(z))·W_out)
//! ```
//!
//! Tensors are `[batch, len, channels]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::uniform;
use crate::numerics::{Backward, Mode, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// Discretization of the state transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ScanMode {
    /// `Ā = A`.
    #[default]
    #[serde(rename = "paper-literal")]
    PaperLiteral,
    /// `Ā = exp(Δt·A)`.
    #[serde(rename = "zoh")]
    Zoh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MambaDims {
    pub d_model: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub dt_rank: usize,
    pub conv_width: usize,
}

impl MambaDims {
    pub const CONV_WIDTH: usize = 4;

    pub fn new(d_model: usize, d_state: usize) -> Self {
        let d_inner = 2 * d_model;
        MambaDims {
            d_model,
            d_inner,
            d_state,
            dt_rank: d_inner.div_ceil(16),
            conv_width: Self::CONV_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `[d_inner, 1, conv_width]`
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    /// `[d_inner, dt_rank + 2·d_state]`
    pub x_proj: ParamId,
    pub dt_w: ParamId,
    pub dt_b: ParamId,
    /// Unconstrained log-magnitudes of `A`, `[d_inner, d_state]`.
    pub a_log: ParamId,
    pub d: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MambaParams {
    pub dims: MambaDims,
    pub in_w: ParamId,
    pub in_b: ParamId,
    /// `None` replaces the convolution with the identity.
    pub conv: Option<ConvParams>,
    /// `None` replaces the scan with the identity.
    pub ssm: Option<SsmParams>,
    pub out_w: ParamId,
}

impl MambaParams {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dims: MambaDims,
        with_conv: bool,
        with_ssm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.d_model == 0 || dims.d_state == 0 || dims.conv_width == 0 {
            return Err(Error::config(
                "d_state",
                format!("degenerate block dimensions {dims:?}"),
            ));
        }
        let MambaDims {
            d_model: dm,
            d_inner: di,
            d_state: ds,
            dt_rank: r,
            conv_width: k,
        } = dims;
        let name = |s: &str| format!("{prefix}.{s}");
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let in_w = store.add(name("in_proj.w"), uniform(&[dm, 2 * di], fan(dm), rng));
        let in_b = store.add(name("in_proj.b"), uniform(&[2 * di], fan(dm), rng));
        let conv = with_conv.then(|| ConvParams {
            w: store.add(name("conv1d.w"), uniform(&[di, 1, k], fan(k), rng)),
            b: store.add(name("conv1d.b"), uniform(&[di], fan(k), rng)),
        });
        let ssm = with_ssm.then(|| {
            let x_proj = store.add(name("x_proj.w"), uniform(&[di, r + 2 * ds], fan(di), rng));
            let dt_w = store.add(name("dt_proj.w"), uniform(&[r, di], fan(r), rng));
            // Δt starts log-uniform in [1e-3, 1e-1]; the bias is its softplus inverse.
            let dt_b = Tensor::from_fn(&[di], |_| {
                let dt = (rng.random_range(0.0..1.0) * (0.1f64.ln() - 0.001f64.ln()) + 0.001f64.ln())
                    .exp();
                T::lit(dt + (-(-dt).exp_m1()).ln())
            });
            let dt_b = store.add(name("dt_proj.b"), dt_b);
            let a_log = Tensor::from_fn(&[di, ds], |k| T::lit(((k % ds) as f64 + 1.0).ln()));
            let a_log = store.add(name("a_log"), a_log);
            let d = store.add(name("d"), Tensor::ones(&[di]));
            SsmParams { x_proj, dt_w, dt_b, a_log, d }
        });
        let out_w = store.add(name("out_proj.w"), uniform(&[di, dm], fan(di), rng));
        Ok(MambaParams { dims, in_w, in_b, conv, ssm, out_w })
    }
}

fn dims3(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, l, c] => Ok((n, l, c)),
        _ => Err(Error::Shape(format!("{what} must be [batch, len, channels], got {shape:?}"))),
    }
}

/// Depthwise causal convolution with left zero padding, before activation.
fn conv_kernel<T: Real>(x: &[T], w: &[T], b: &[T], n: usize, l: usize, c: usize, k: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n * l * c];
    for bi in 0..n {
        for t in 0..l {
            let row = &mut y[(bi * l + t) * c..(bi * l + t + 1) * c];
            for (ch, out) in row.iter_mut().enumerate() {
                let mut acc = b[ch];
                for j in 0..k {
                    // tap j reads position t − (k − 1) + j
                    if let Some(src) = (t + j + 1).checked_sub(k) {
                        acc = acc + w[ch * k + j] * x[(bi * l + src) * c + ch];
                    }
                }
                *out = acc;
            }
        }
    }
    y
}

struct ConvBackward {
    dims: (usize, usize, usize, usize),
}

impl<T: Real> Backward<T> for ConvBackward {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (n, l, c, k) = self.dims;
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let g = grad.data();
        let mut gx = vec![T::zero(); x.len()];
        let mut gw = vec![T::zero(); w.len()];
        let mut gb = vec![T::zero(); c];
        for bi in 0..n {
            for t in 0..l {
                for ch in 0..c {
                    let gv = g[(bi * l + t) * c + ch];
                    gb[ch] = gb[ch] + gv;
                    for j in 0..k {
                        if let Some(src) = (t + j + 1).checked_sub(k) {
                            let xi = (bi * l + src) * c + ch;
                            gx[xi] = gx[xi] + gv * w[ch * k + j];
                            gw[ch * k + j] = gw[ch * k + j] + gv * x[xi];
                        }
                    }
                }
            }
        }
        Ok(vec![
            Some(Tensor::new(inputs[0].shape(), gx)?),
            Some(Tensor::new(inputs[1].shape(), gw)?),
            Some(Tensor::new(inputs[2].shape(), gb)?),
        ])
    }
}

/// `SiLU(conv(x) + b)` with kernel `w: [C, 1, K]`; position `t` only sees
/// inputs at positions `≤ t`.
pub fn causal_conv<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let (n, l, c) = dims3(tape.shape(x), "conv input")?;
    let ws = tape.shape(w).to_vec();
    let k = match ws[..] {
        [wc, 1, k] if wc == c => k,
        _ => return Err(Error::Shape(format!("kernel {ws:?} for {c} channels"))),
    };
    if tape.shape(b) != [c] {
        return Err(Error::Shape(format!("conv bias {:?} for {c} channels", tape.shape(b))));
    }
    let y = conv_kernel(
        tape.value(x).data(),
        tape.value(w).data(),
        tape.value(b).data(),
        n,
        l,
        c,
        k,
    );
    let y = Tensor::new(&[n, l, c], y)?;
    let pre = tape.custom(
        "causal_conv",
        &[x, w, b],
        y,
        Box::new(ConvBackward { dims: (n, l, c, k) }),
    )?;
    tape.silu(pre)
}

/// Flat row-major views for the scan kernel. `x`, `dt`: `[n, l, d_inner]`;
/// `b`, `c`: `[n, l, d_state]`; `a`: `[d_inner, d_state]`; `d`: `[d_inner]`.
#[derive(Clone, Copy)]
pub struct ScanInputs<'a, T> {
    pub x: &'a [T],
    pub dt: &'a [T],
    pub a: &'a [T],
    pub b: &'a [T],
    pub c: &'a [T],
    pub d: &'a [T],
    pub batch: usize,
    pub len: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub mode: ScanMode,
}

impl<T: Real> ScanInputs<'_, T> {
    fn check(&self) -> Result<()> {
        let (n, l, di, ds) = (self.batch, self.len, self.d_inner, self.d_state);
        let ok = self.x.len() == n * l * di
            && self.dt.len() == n * l * di
            && self.b.len() == n * l * ds
            && self.c.len() == n * l * ds
            && self.a.len() == di * ds
            && self.d.len() == di;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "scan inputs inconsistent with batch {n}, len {l}, d_inner {di}, d_state {ds}"
            )))
        }
    }

    /// Runs the recurrence. When `states` is given it receives `S_t` for
    /// every step, laid out `[n, l, d_inner, d_state]`.
    pub fn run(&self, mut states: Option<&mut Vec<T>>) -> Result<Vec<T>> {
        self.check()?;
        let (l, di, ds) = (self.len, self.d_inner, self.d_state);
        if let Some(s) = states.as_deref_mut() {
            s.clear();
            s.reserve(self.batch * l * di * ds);
        }
        let mut y = vec![T::zero(); self.batch * l * di];
        let mut state = vec![T::zero(); di * ds];
        for n in 0..self.batch {
            state.fill(T::zero());
            for t in 0..l {
                let row = n * l + t;
                let bt = &self.b[row * ds..(row + 1) * ds];
                let ct = &self.c[row * ds..(row + 1) * ds];
                let mut finite = true;
                for i in 0..di {
                    let xi = self.x[row * di + i];
                    let dti = self.dt[row * di + i];
                    let u = dti * xi;
                    let si = &mut state[i * ds..(i + 1) * ds];
                    let ai = &self.a[i * ds..(i + 1) * ds];
                    let mut acc = T::zero();
                    for s in 0..ds {
                        let abar = match self.mode {
                            ScanMode::PaperLiteral => ai[s],
                            ScanMode::Zoh => (dti * ai[s]).exp(),
                        };
                        si[s] = abar * si[s] + u * bt[s];
                        acc = acc + si[s] * ct[s];
                        finite &= si[s].is_finite();
                    }
                    y[row * di + i] = acc + self.d[i] * xi;
                }
                if !finite {
                    return Err(Error::Divergence(format!(
                        "scan state became non-finite at step {t} of sequence {n}"
                    )));
                }
                if let Some(s) = states.as_deref_mut() {
                    s.extend_from_slice(&state);
                }
            }
        }
        Ok(y)
    }
}

/// Tensor-level scan. Shapes as in [`ScanInputs`].
pub fn selective_scan<T: Real>(
    x: &Tensor<T>,
    dt: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    d: &Tensor<T>,
    mode: ScanMode,
) -> Result<Tensor<T>> {
    let (n, l, di) = dims3(x.shape(), "scan input")?;
    let d_state = a.last_dim();
    let y = ScanInputs {
        x: x.data(),
        dt: dt.data(),
        a: a.data(),
        b: b.data(),
        c: c.data(),
        d: d.data(),
        batch: n,
        len: l,
        d_inner: di,
        d_state,
        mode,
    }
    .run(None)?;
    Tensor::new(&[n, l, di], y)
}

struct ScanBackward<T> {
    dims: (usize, usize, usize, usize),
    mode: ScanMode,
    states: Vec<T>,
}

impl<T: Real> Backward<T> for ScanBackward<T> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (batch, l, di, ds) = self.dims;
        let [x, dt, a, b, c, d] = [0, 1, 2, 3, 4, 5].map(|k| inputs[k].data());
        let g = grad.data();
        let mut gx = vec![T::zero(); x.len()];
        let mut gdt = vec![T::zero(); dt.len()];
        let mut ga = vec![T::zero(); a.len()];
        let mut gb = vec![T::zero(); b.len()];
        let mut gc = vec![T::zero(); c.len()];
        let mut gd = vec![T::zero(); d.len()];
        let mut carry = vec![T::zero(); di * ds];
        let zeros = vec![T::zero(); di * ds];
        for n in 0..batch {
            carry.fill(T::zero());
            for t in (0..l).rev() {
                let row = n * l + t;
                let st = &self.states[row * di * ds..(row + 1) * di * ds];
                let prev = if t == 0 {
                    &zeros[..]
                } else {
                    &self.states[(row - 1) * di * ds..row * di * ds]
                };
                for i in 0..di {
                    let xi = x[row * di + i];
                    let dti = dt[row * di + i];
                    let gy = g[row * di + i];
                    gd[i] = gd[i] + gy * xi;
                    let mut gxi = gy * d[i];
                    let mut gdti = T::zero();
                    for s in 0..ds {
                        let k = i * ds + s;
                        let bs = b[row * ds + s];
                        let cs = c[row * ds + s];
                        gc[row * ds + s] = gc[row * ds + s] + gy * st[k];
                        let gs = carry[k] + gy * cs;
                        gdti = gdti + gs * bs * xi;
                        gb[row * ds + s] = gb[row * ds + s] + gs * dti * xi;
                        gxi = gxi + gs * dti * bs;
                        let g_abar = gs * prev[k];
                        let abar = match self.mode {
                            ScanMode::PaperLiteral => {
                                ga[k] = ga[k] + g_abar;
                                a[k]
                            }
                            ScanMode::Zoh => {
                                let abar = (dti * a[k]).exp();
                                gdti = gdti + g_abar * abar * a[k];
                                ga[k] = ga[k] + g_abar * abar * dti;
                                abar
                            }
                        };
                        carry[k] = gs * abar;
                    }
                    gx[row * di + i] = gx[row * di + i] + gxi;
                    gdt[row * di + i] = gdt[row * di + i] + gdti;
                }
            }
        }
        let shaped = |k: usize, v: Vec<T>| Tensor::new(inputs[k].shape(), v).map(Some);
        Ok(vec![
            shaped(0, gx)?,
            shaped(1, gdt)?,
            shaped(2, ga)?,
            shaped(3, gb)?,
            shaped(4, gc)?,
            shaped(5, gd)?,
        ])
    }
}

/// Differentiable scan over recorded values.
pub fn scan_op<T: Real>(
    tape: &mut Tape<T>,
    [x, dt, a, b, c, d]: [Var; 6],
    mode: ScanMode,
) -> Result<Var> {
    let (n, l, di) = dims3(tape.shape(x), "scan input")?;
    let ds = tape.shape(a).last().copied().unwrap_or(0);
    let mut states = Vec::new();
    let y = ScanInputs {
        x: tape.value(x).data(),
        dt: tape.value(dt).data(),
        a: tape.value(a).data(),
        b: tape.value(b).data(),
        c: tape.value(c).data(),
        d: tape.value(d).data(),
        batch: n,
        len: l,
        d_inner: di,
        d_state: ds,
        mode,
    }
    .run(Some(&mut states))?;
    let y = Tensor::new(&[n, l, di], y)?;
    tape.custom(
        "selective_scan",
        &[x, dt, a, b, c, d],
        y,
        Box::new(ScanBackward {
            dims: (n, l, di, ds),
            mode,
            states,
        }),
    )
}

/// `(u·W_in + b_in)` split into `(x, z)`.
pub fn in_project_split<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &MambaParams,
    u: Var,
) -> Result<(Var, Var)> {
    let w = tape.param(store, p.in_w);
    let b = tape.param(store, p.in_b);
    let xz = tape.linear(u, w, Some(b))?;
    tape.chunk2(xz)
}

/// `(Δt, B, C)` from the convolved sequence.
pub fn x_project_split<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    dims: MambaDims,
    ssm: &SsmParams,
    xc: Var,
) -> Result<(Var, Var, Var)> {
    let w = tape.param(store, ssm.x_proj);
    let proj = tape.matmul(xc, w)?;
    let (r, ds) = (dims.dt_rank, dims.d_state);
    let dt_low = tape.slice_last(proj, 0, r)?;
    let b = tape.slice_last(proj, r, ds)?;
    let c = tape.slice_last(proj, r + ds, ds)?;
    let dt_w = tape.param(store, ssm.dt_w);
    let dt_b = tape.param(store, ssm.dt_b);
    let dt = tape.linear(dt_low, dt_w, Some(dt_b))?;
    let dt = tape.softplus(dt)?;
    Ok((dt, b, c))
}

/// Transition matrix from its log-magnitudes: `−exp(a_log)` for
/// [`ScanMode::Zoh`] and `−sigmoid(a_log) ∈ (−1, 0)` otherwise, so the
/// literal update stays contractive.
pub fn transition<T: Real>(tape: &mut Tape<T>, a_log: Var, mode: ScanMode) -> Result<Var> {
    let mag = match mode {
        ScanMode::PaperLiteral => tape.sigmoid(a_log)?,
        ScanMode::Zoh => tape.exp(a_log)?,
    };
    tape.neg(mag)
}

#[allow(clippy::too_many_arguments)]
pub fn mamba_forward<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &MambaParams,
    u: Var,
    scan_mode: ScanMode,
    dropout: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let (_, _, dm) = dims3(tape.shape(u), "block input")?;
    if dm != p.dims.d_model {
        return Err(Error::Shape(format!(
            "block input width {dm}, expected {}",
            p.dims.d_model
        )));
    }
    let (x, z) = in_project_split(tape, store, p, u)?;
    let xc = match &p.conv {
        Some(conv) => {
            let w = tape.param(store, conv.w);
            let b = tape.param(store, conv.b);
            causal_conv(tape, x, w, b)?
        }
        None => tape.silu(x)?,
    };
    let y = match &p.ssm {
        Some(ssm) => {
            let (dt, b, c) = x_project_split(tape, store, p.dims, ssm, xc)?;
            let a_log = tape.param(store, ssm.a_log);
            let a = transition(tape, a_log, scan_mode)?;
            let d = tape.param(store, ssm.d);
            scan_op(tape, [xc, dt, a, b, c, d], scan_mode)?
        }
        None => xc,
    };
    let gate = tape.silu(z)?;
    let gated = tape.mul(y, gate)?;
    let w = tape.param(store, p.out_w);
    let out = tape.matmul(gated, w)?;
    tape.dropout(out, dropout, mode, rng)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::layers::test_support::{probe_loss, random, rng};
    use crate::numerics::{gradcheck, Activation};

    /// Unrolled scalar recurrence, one state cell at a time.
    fn scan_oracle(inp: &ScanInputs<f64>) -> Vec<f64> {
        let (l, di, ds) = (inp.len, inp.d_inner, inp.d_state);
        let mut y = vec![0.0; inp.batch * l * di];
        for n in 0..inp.batch {
            for i in 0..di {
                for s in 0..ds {
                    let mut state = 0.0;
                    for t in 0..l {
                        let r = n * l + t;
                        let dt = inp.dt[r * di + i];
                        let a = inp.a[i * ds + s];
                        let abar = if inp.mode == ScanMode::Zoh { (dt * a).exp() } else { a };
                        state = abar * state + dt * inp.b[r * ds + s] * inp.x[r * di + i];
                        y[r * di + i] += state * inp.c[r * ds + s];
                    }
                }
                for t in 0..l {
                    let r = n * l + t;
                    y[r * di + i] += inp.d[i] * inp.x[r * di + i];
                }
            }
        }
        y
    }

    struct Case {
        x: Tensor<f64>,
        dt: Tensor<f64>,
        a: Tensor<f64>,
        b: Tensor<f64>,
        c: Tensor<f64>,
        d: Tensor<f64>,
    }

    fn case(n: usize, l: usize, di: usize, ds: usize, seed: u64) -> Case {
        let mut r = rng(seed);
        Case {
            x: random(&[n, l, di], &mut r),
            dt: Tensor::from_fn(&[n, l, di], |_| r.random_range(0.01..1.0)),
            a: Tensor::from_fn(&[di, ds], |_| -r.random_range(0.05..0.95)),
            b: random(&[n, l, ds], &mut r),
            c: random(&[n, l, ds], &mut r),
            d: random(&[di], &mut r),
        }
    }

    fn inputs(k: &Case, mode: ScanMode) -> ScanInputs<'_, f64> {
        let s = k.x.shape();
        ScanInputs {
            x: k.x.data(),
            dt: k.dt.data(),
            a: k.a.data(),
            b: k.b.data(),
            c: k.c.data(),
            d: k.d.data(),
            batch: s[0],
            len: s[1],
            d_inner: s[2],
            d_state: k.a.shape()[1],
            mode,
        }
    }

    #[test]
    fn scan_matches_recurrence_oracle() {
        for mode in [ScanMode::PaperLiteral, ScanMode::Zoh] {
            let k = case(2, 7, 3, 4, 11);
            let got = inputs(&k, mode).run(None).unwrap();
            for (g, w) in got.iter().zip(scan_oracle(&inputs(&k, mode))) {
                assert!((g - w).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn literal_zero_transition_is_memoryless() {
        let mut k = case(1, 5, 2, 3, 3);
        k.a.fill(0.0);
        let y = inputs(&k, ScanMode::PaperLiteral).run(None).unwrap();
        for t in 0..5 {
            let bc: f64 = (0..3).map(|s| k.b.data()[t * 3 + s] * k.c.data()[t * 3 + s]).sum();
            for i in 0..2 {
                let r = t * 2 + i;
                let want = k.dt.data()[r] * k.x.data()[r] * bc + k.d.data()[i] * k.x.data()[r];
                assert!((y[r] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_step_leaves_skip_path() {
        for mode in [ScanMode::PaperLiteral, ScanMode::Zoh] {
            let mut k = case(1, 6, 3, 2, 5);
            k.dt.fill(0.0);
            let y = inputs(&k, mode).run(None).unwrap();
            for (r, v) in y.iter().enumerate() {
                assert_eq!(*v, k.d.data()[r % 3] * k.x.data()[r]);
            }
        }
    }

    #[test]
    fn divergence_names_the_step() {
        let mut k = case(1, 1000, 1, 1, 2);
        k.a.fill(-5.0);
        k.dt.fill(1.0);
        let err = inputs(&k, ScanMode::PaperLiteral).run(None).unwrap_err();
        let Error::Divergence(msg) = err else { panic!("{err:?}") };
        assert!(msg.contains("step"), "{msg}");
    }

    #[test]
    fn scan_is_causal() {
        let mut r = rng(8);
        for mode in [ScanMode::PaperLiteral, ScanMode::Zoh] {
            let k = case(1, 12, 3, 2, 21);
            let base = inputs(&k, mode).run(None).unwrap();
            for _ in 0..20 {
                let t0 = r.random_range(0..12);
                let mut k2 = case(1, 12, 3, 2, 21);
                for i in 0..3 {
                    k2.x.data_mut()[t0 * 3 + i] += r.random_range(-1.0..1.0);
                    k2.dt.data_mut()[t0 * 3 + i] *= 1.5;
                }
                for s in 0..2 {
                    k2.b.data_mut()[t0 * 2 + s] += 0.3;
                    k2.c.data_mut()[t0 * 2 + s] -= 0.3;
                }
                let y = inputs(&k2, mode).run(None).unwrap();
                assert_eq!(&y[..t0 * 3], &base[..t0 * 3]);
            }
        }
    }

    fn conv_values(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = causal_conv(&mut tape, xv, wv, bv).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn conv_zero_and_delta_kernels() {
        let x = random(&[2, 5, 3], &mut rng(1));
        let zero = conv_values(&Tensor::zeros(&[2, 5, 3]), &random(&[3, 1, 4], &mut rng(2)), &Tensor::zeros(&[3]));
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let delta = Tensor::from_fn(&[3, 1, 4], |k| if k % 4 == 3 { 1.0 } else { 0.0 });
        let y = conv_values(&x, &delta, &Tensor::zeros(&[3]));
        for (a, &b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, Activation::Silu.apply(b));
        }
    }

    #[test]
    fn conv_matches_padded_loop() {
        let x = random(&[1, 6, 2], &mut rng(4));
        let w = random(&[2, 1, 4], &mut rng(5));
        let b = random(&[2], &mut rng(6));
        let y = conv_values(&x, &w, &b);
        for t in 0..6i64 {
            for c in 0..2 {
                let mut acc = b.data()[c];
                for j in 0..4i64 {
                    let src = t - 3 + j;
                    if src >= 0 {
                        acc += w.data()[c * 4 + j as usize] * x.data()[src as usize * 2 + c];
                    }
                }
                let want = Activation::Silu.apply(acc);
                assert!((y.data()[t as usize * 2 + c] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn conv_is_causal() {
        let mut r = rng(7);
        let w = random(&[3, 1, 4], &mut r);
        let b = random(&[3], &mut r);
        let x = random(&[1, 10, 3], &mut r);
        let base = conv_values(&x, &w, &b);
        for t0 in 0..10 {
            let mut x2 = x.clone();
            x2.data_mut()[t0 * 3 + 1] += 2.0;
            let y = conv_values(&x2, &w, &b);
            assert_eq!(&y.data()[..t0 * 3], &base.data()[..t0 * 3]);
        }
    }

    fn block(d_model: usize, d_state: usize, conv: bool, ssm: bool) -> (ParamStore<f64>, MambaParams) {
        let mut store = ParamStore::new();
        let p = MambaParams::new(&mut store, "m", MambaDims::new(d_model, d_state), conv, ssm, &mut rng(13))
            .unwrap();
        (store, p)
    }

    #[test]
    fn dims_follow_expansion_rule() {
        let d = MambaDims::new(9, 4);
        assert_eq!((d.d_inner, d.dt_rank, d.conv_width), (18, 2, 4));
        let (store, p) = block(3, 2, true, true);
        let ssm = p.ssm.unwrap();
        let a = crate::numerics::Tensor::<f64>::from_fn(&[6, 2], |k| -(store.value(ssm.a_log).data()[k]).exp());
        assert_eq!(a.data()[..2], [-1.0, -2.0]);
    }

    #[test]
    fn in_projection_zero_weights_give_bias_halves() {
        let (mut store, p) = block(2, 2, true, true);
        store.get_mut(p.in_w).value.fill(0.0);
        let bias = store.value(p.in_b).data().to_vec();
        let mut tape = Tape::new();
        let u = tape.constant(random(&[1, 3, 2], &mut rng(0)));
        let (x, z) = in_project_split(&mut tape, &store, &p, u).unwrap();
        for t in 0..3 {
            assert_eq!(&tape.value(x).data()[t * 4..t * 4 + 4], &bias[..4]);
            assert_eq!(&tape.value(z).data()[t * 4..t * 4 + 4], &bias[4..]);
        }
    }

    #[test]
    fn x_projection_split_widths_and_positive_step() {
        let dims = MambaDims { d_model: 2, d_inner: 4, d_state: 4, dt_rank: 2, conv_width: 4 };
        let mut store = ParamStore::new();
        let p = MambaParams::new(&mut store, "m", dims, true, true, &mut rng(1)).unwrap();
        let ssm = p.ssm.clone().unwrap();
        assert_eq!(store.value(ssm.x_proj).shape(), &[4, 10]);

        store.get_mut(ssm.dt_b).value.fill(0.0);
        let mut tape = Tape::new();
        let xc = tape.constant(Tensor::zeros(&[1, 2, 4]));
        let (dt, b, c) = x_project_split(&mut tape, &store, dims, &ssm, xc).unwrap();
        assert_eq!((tape.shape(b), tape.shape(c)), (&[1usize, 2, 4][..], &[1usize, 2, 4][..]));
        for v in tape.value(dt).data() {
            assert!((v - 2f64.ln()).abs() <= 1e-15);
        }

        let mut tape = Tape::new();
        let mut r = rng(2);
        let xc = tape.constant(Tensor::from_fn(&[1, 2500, 4], |_| r.random_range(-20.0..20.0)));
        let (dt, _, _) = x_project_split(&mut tape, &store, dims, &ssm, xc).unwrap();
        assert!(tape.value(dt).data().iter().all(|&v| v > 0.0));
    }

    /// Straight-line reference for the whole block on one sequence.
    fn block_oracle(store: &ParamStore<f64>, p: &MambaParams, u: &[f64], l: usize, mode: ScanMode) -> Vec<f64> {
        let d = p.dims;
        let (dm, di, ds, r, k) = (d.d_model, d.d_inner, d.d_state, d.dt_rank, d.conv_width);
        let v = |id: ParamId| store.value(id).data().to_vec();
        let silu = |x: f64| x / (1.0 + (-x).exp());
        let (in_w, in_b, out_w) = (v(p.in_w), v(p.in_b), v(p.out_w));
        let conv = p.conv.as_ref().unwrap();
        let (cw, cb) = (v(conv.w), v(conv.b));
        let ssm = p.ssm.as_ref().unwrap();
        let (xp, dtw, dtb, alog, dd) = (v(ssm.x_proj), v(ssm.dt_w), v(ssm.dt_b), v(ssm.a_log), v(ssm.d));
        let mut xs = vec![vec![0.0; di]; l];
        let mut zs = vec![vec![0.0; di]; l];
        for t in 0..l {
            for o in 0..2 * di {
                let mut acc = in_b[o];
                for i in 0..dm {
                    acc += u[t * dm + i] * in_w[i * 2 * di + o];
                }
                if o < di { xs[t][o] = acc } else { zs[t][o - di] = acc }
            }
        }
        let mut xc = vec![vec![0.0; di]; l];
        for t in 0..l {
            for c in 0..di {
                let mut acc = cb[c];
                for j in 0..k {
                    if t + j + 1 >= k {
                        acc += cw[c * k + j] * xs[t + j + 1 - k][c];
                    }
                }
                xc[t][c] = silu(acc);
            }
        }
        let mut out = vec![0.0; l * dm];
        let mut state = vec![0.0; di * ds];
        for t in 0..l {
            let proj: Vec<f64> = (0..r + 2 * ds)
                .map(|o| (0..di).map(|i| xc[t][i] * xp[i * (r + 2 * ds) + o]).sum())
                .collect();
            let mut y = vec![0.0; di];
            for i in 0..di {
                let pre: f64 = dtb[i] + (0..r).map(|q| proj[q] * dtw[q * di + i]).sum::<f64>();
                let dt = (1.0 + pre.exp()).ln();
                for s in 0..ds {
                    let a = match mode {
                        ScanMode::PaperLiteral => -1.0 / (1.0 + (-alog[i * ds + s]).exp()),
                        ScanMode::Zoh => -alog[i * ds + s].exp(),
                    };
                    let abar = if mode == ScanMode::Zoh { (dt * a).exp() } else { a };
                    state[i * ds + s] = abar * state[i * ds + s] + dt * proj[r + s] * xc[t][i];
                    y[i] += state[i * ds + s] * proj[r + ds + s];
                }
                y[i] = (y[i] + dd[i] * xc[t][i]) * silu(zs[t][i]);
            }
            for o in 0..dm {
                out[t * dm + o] = (0..di).map(|i| y[i] * out_w[i * dm + o]).sum();
            }
        }
        out
    }

    fn forward(store: &ParamStore<f64>, p: &MambaParams, u: Tensor<f64>, mode: ScanMode) -> Tensor<f64> {
        let mut tape = Tape::new();
        let uv = tape.constant(u);
        let y = mamba_forward(&mut tape, store, p, uv, mode, 0.5, Mode::Eval, &mut rng(0)).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn block_matches_straight_line_reference() {
        for mode in [ScanMode::PaperLiteral, ScanMode::Zoh] {
            let (store, p) = block(3, 4, true, true);
            for l in [1, 6] {
                let u = random(&[1, l, 3], &mut rng(l as u64));
                let got = forward(&store, &p, u.clone(), mode);
                let want = block_oracle(&store, &p, u.data(), l, mode);
                for (g, w) in got.data().iter().zip(&want) {
                    assert!((g - w).abs() <= 1e-10, "{g} vs {w}");
                }
            }
        }
    }

    #[test]
    fn zero_gate_annihilates_output() {
        let (mut store, p) = block(2, 2, true, true);
        // zero the z half of the projection so SiLU(z) = 0
        let w = &mut store.get_mut(p.in_w).value;
        for row in w.data_mut().chunks_mut(8) {
            row[4..].fill(0.0);
        }
        store.get_mut(p.in_b).value.data_mut()[4..].fill(0.0);
        let y = forward(&store, &p, random(&[1, 4, 2], &mut rng(3)), ScanMode::PaperLiteral);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn padding_never_changes_valid_positions() {
        let (store, p) = block(2, 3, true, true);
        let u = random(&[1, 4, 2], &mut rng(6));
        let mut padded = Tensor::zeros(&[1, 7, 2]);
        padded.data_mut()[..8].copy_from_slice(u.data());
        let a = forward(&store, &p, u, ScanMode::Zoh);
        let b = forward(&store, &p, padded, ScanMode::Zoh);
        assert_eq!(a.data(), &b.data()[..8]);
    }

    #[test]
    fn ablated_blocks_run_with_fewer_parameters() {
        let (full, _) = block(3, 4, true, true);
        for (conv, ssm) in [(false, true), (true, false), (false, false)] {
            let (store, p) = block(3, 4, conv, ssm);
            assert!(store.scalar_count() < full.scalar_count());
            let y = forward(&store, &p, random(&[2, 3, 3], &mut rng(1)), ScanMode::PaperLiteral);
            assert_eq!(y.shape(), &[2, 3, 3]);
        }
    }

    fn check(store: &mut ParamStore<f64>, p: &MambaParams, mode: ScanMode, seed: u64) -> f64 {
        let u = random(&[2, 4, p.dims.d_model], &mut rng(seed));
        gradcheck(
            store,
            |tape, s| {
                let uv = tape.constant(u.clone());
                let y = mamba_forward(tape, s, p, uv, mode, 0.0, Mode::Train, &mut rng(0))?;
                probe_loss(tape, y, seed + 1)
            },
            1e-6,
            40,
            seed,
        )
        .unwrap()
        .max_rel_error
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        for mode in [ScanMode::PaperLiteral, ScanMode::Zoh] {
            let (mut store, p) = block(2, 3, true, true);
            let err = check(&mut store, &p, mode, 31);
            assert!(err <= 1e-6, "{mode:?}: {err}");
        }
    }

    #[test]
    fn conv_and_scan_ops_gradcheck_in_isolation() {
        for mode in [ScanMode::PaperLiteral, ScanMode::Zoh] {
            let mut store = ParamStore::new();
            let k = case(2, 5, 3, 2, 40);
            let ids: Vec<ParamId> = [&k.x, &k.dt, &k.a, &k.b, &k.c, &k.d]
                .iter()
                .enumerate()
                .map(|(i, t)| store.add(format!("t{i}"), (*t).clone()))
                .collect();
            let report = gradcheck(
                &mut store,
                |tape, s| {
                    let v: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
                    let y = scan_op(tape, [v[0], v[1], v[2], v[3], v[4], v[5]], mode)?;
                    probe_loss(tape, y, 3)
                },
                1e-6,
                60,
                1,
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-6, "{report:?}");
        }

        let mut store = ParamStore::new();
        let x = store.add("x", random(&[2, 6, 3], &mut rng(1)));
        let w = store.add("w", random(&[3, 1, 4], &mut rng(2)));
        let b = store.add("b", random(&[3], &mut rng(3)));
        let report = gradcheck(
            &mut store,
            |tape, s| {
                let (xv, wv, bv) = (tape.param(s, x), tape.param(s, w), tape.param(s, b));
                let y = causal_conv(tape, xv, wv, bv)?;
                probe_loss(tape, y, 4)
            },
            1e-6,
            60,
            2,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }
}
