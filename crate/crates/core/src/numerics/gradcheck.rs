use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::{ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Denominators below this are treated as this size, so coordinates whose
/// true gradient is ~0 are judged on absolute error.
const REL_FLOOR: f64 = 1e-3;

/// Compares tape gradients against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` on up to `samples` randomly chosen coordinates.
///
/// `f` records a scalar loss on a fresh tape using the store's current values.
pub fn gradcheck<F>(
    store: &mut ParamStore<f64>,
    mut f: F,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    check_finite(tape.value(loss).data()[0], "base evaluation")?;
    tape.backward_into(loss, store)?;

    let coords: Vec<(usize, usize)> = store
        .iter()
        .flat_map(|(id, p)| (0..p.value.len()).map(move |j| (id.index(), j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = if coords.len() <= samples {
        (0..coords.len()).collect()
    } else {
        let mut v = sample(&mut rng, coords.len(), samples).into_vec();
        v.sort_unstable();
        v
    };

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: picked.len(),
    };
    for c in picked {
        let (pi, j) = coords[c];
        let id = ids[pi];
        let analytic = store.grad(id).data()[j];
        let orig = store.value(id).data()[j];
        let name = store.get(id).name.clone();

        let mut eval_at = |store: &mut ParamStore<f64>, x: f64| -> Result<f64> {
            store.get_mut(id).value.data_mut()[j] = x;
            let mut tape = Tape::new();
            let out = f(&mut tape, store).map(|v| tape.value(v).data()[0]);
            store.get_mut(id).value.data_mut()[j] = orig;
            let out = out.map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("gradcheck at {name}[{j}]: {msg}")),
                other => other,
            })?;
            check_finite(out, &format!("{name}[{j}]"))?;
            Ok(out)
        };
        let plus = eval_at(store, orig + eps)?;
        let minus = eval_at(store, orig - eps)?;
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((name, j));
        }
    }
    store.zero_grad();
    Ok(report)
}

fn check_finite(v: f64, location: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("gradcheck at {location}")))
    }
}
