//! Per-feature metadata expansion and relative-position concatenation.

use rand::Rng;

use super::uniform;
use crate::numerics::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// Shared scalar-to-vector map applied to every metadata feature.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaFpParams {
    pub f_meta: usize,
    pub h_per: usize,
    pub w_fc: ParamId,
    pub b_fc: ParamId,
}

impl MetaFpParams {
    /// `h_per = ⌊h_dim / f_meta⌋` channels per feature.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        f_meta: usize,
        h_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let h_per = h_dim / f_meta.max(1);
        if f_meta == 0 || h_per == 0 {
            return Err(Error::config(
                "h_dim",
                format!("h_dim {h_dim} gives no channels for {f_meta} metadata features"),
            ));
        }
        Ok(MetaFpParams {
            f_meta,
            h_per,
            w_fc: store.add("metafp.w_fc", uniform(&[1, h_per], 1.0, rng)),
            b_fc: store.add("metafp.b_fc", uniform(&[h_per], 1.0, rng)),
        })
    }

    pub fn h_meta(&self) -> usize {
        self.f_meta * self.h_per
    }
}

/// `[.., F] -> [.., F·h_per]`: each feature becomes `ReLU(v·W_fc + b_fc)`,
/// blocks laid out in feature order.
pub fn metafp_forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &MetaFpParams,
    meta: Var,
) -> Result<Var> {
    let shape = tape.shape(meta).to_vec();
    if shape.last() != Some(&p.f_meta) {
        return Err(Error::Shape(format!(
            "metadata {shape:?} for {} features",
            p.f_meta
        )));
    }
    let total: usize = shape.iter().product();
    let flat = tape.reshape(meta, &[total, 1])?;
    let w = tape.param(store, p.w_fc);
    let b = tape.param(store, p.b_fc);
    let h = tape.linear(flat, w, Some(b))?;
    let h = tape.relu(h)?;
    let mut out = shape;
    *out.last_mut().unwrap() = p.h_meta();
    tape.reshape(h, &out)
}

/// Square map over the metadata width plus the position column.
#[derive(Debug, Clone, PartialEq)]
pub struct PosConcatParams {
    pub width: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl PosConcatParams {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, h_meta: usize, rng: &mut R) -> Self {
        let width = h_meta + 1;
        let bound = 1.0 / (width as f64).sqrt();
        PosConcatParams {
            width,
            w: store.add("posconcat.w", uniform(&[width, width], bound, rng)),
            b: store.add("posconcat.b", uniform(&[width], bound, rng)),
        }
    }
}

/// Relative positions `[N, L, 1]`: `i / (len − 1)` for valid positions,
/// 0 for a length-1 sequence and for padding.
pub fn positions<T: Real>(valid_lens: &[usize], l_max: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); valid_lens.len() * l_max];
    for (n, &len) in valid_lens.iter().enumerate() {
        if len > l_max {
            return Err(Error::Shape(format!("length {len} exceeds padded length {l_max}")));
        }
        if len > 1 {
            for i in 0..len {
                data[n * l_max + i] = T::lit(i as f64 / (len - 1) as f64);
            }
        }
    }
    Tensor::new(&[valid_lens.len(), l_max, 1], data)
}

/// `ReLU([h ‖ pos] · W + b)`.
pub fn positional_concat<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &PosConcatParams,
    h: Var,
    pos: Var,
) -> Result<Var> {
    if tape.shape(h).last().map(|&d| d + 1) != Some(p.width) {
        return Err(Error::Shape(format!(
            "input {:?} for positional map of width {}",
            tape.shape(h),
            p.width
        )));
    }
    let hp = tape.concat_last(h, pos)?;
    let w = tape.param(store, p.w);
    let b = tape.param(store, p.b);
    let y = tape.linear(hp, w, Some(b))?;
    tape.relu(y)
}
