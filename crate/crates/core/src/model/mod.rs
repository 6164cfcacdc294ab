//! Dual-branch classifier: a metadata branch and a text branch, each a
//! selective-scan block followed by a spline unit, joined by a linear head.

mod batch;
mod config;
mod train;

pub use batch::{BatchInput, Sample};
pub use config::{Ablation, EmkKenConfig, D_STATE1_RANGE, D_STATE2_RANGE, SCHEMA_VERSION};
pub use train::{EpochRecord, Evaluation, History};

pub use crate::layers::ScanMode;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{
    kan_forward, kan_reg_loss, mamba_forward, metafp_forward, positional_concat, positions,
    uniform, KanParams, MambaDims, MambaParams, MetaFpParams, PosConcatParams,
};
use crate::numerics::{read_checkpoint, write_checkpoint, Mode, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// Per-branch sequence model.
#[derive(Debug, Clone, PartialEq)]
pub enum SequenceBlock {
    Mamba(MambaParams),
    /// Position-wise `x·W + b` of equal width.
    Linear { w: ParamId, b: ParamId },
}

impl SequenceBlock {
    fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_model: usize,
        d_state: usize,
        ablation: &Ablation,
        rng: &mut R,
    ) -> Result<Self> {
        if ablation.no_mamba {
            let bound = 1.0 / (d_model as f64).sqrt();
            return Ok(SequenceBlock::Linear {
                w: store.add(format!("{prefix}.linear.w"), uniform(&[d_model, d_model], bound, rng)),
                b: store.add(format!("{prefix}.linear.b"), uniform(&[d_model], bound, rng)),
            });
        }
        let dims = MambaDims::new(d_model, d_state);
        MambaParams::new(store, prefix, dims, !ablation.no_conv, !ablation.no_ssm, rng).map(SequenceBlock::Mamba)
    }

    #[allow(clippy::too_many_arguments)]
    fn forward<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        u: Var,
        scan_mode: ScanMode,
        dropout: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        match self {
            SequenceBlock::Mamba(p) => mamba_forward(tape, store, p, u, scan_mode, dropout, mode, rng),
            SequenceBlock::Linear { w, b } => {
                let (w, b) = (tape.param(store, *w), tape.param(store, *b));
                tape.linear(u, w, Some(b))
            }
        }
    }
}

pub struct EmkKenModel<T: Real> {
    config: EmkKenConfig,
    store: ParamStore<T>,
    /// `None` under `no_metafp`: features are repeated instead.
    metafp: Option<MetaFpParams>,
    f_meta: usize,
    f_embed: usize,
    h_per: usize,
    posconcat: PosConcatParams,
    seq_meta: SequenceBlock,
    seq_text: SequenceBlock,
    knu_meta: KanParams,
    knu_text: KanParams,
    w_out: ParamId,
    b_out: ParamId,
}

impl<T: Real> EmkKenModel<T> {
    /// Builds and initializes a model; `config` must carry feature widths.
    pub fn new(config: &EmkKenConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let f_meta = config.f_meta.ok_or_else(|| Error::config("f_meta", "width not resolved"))?;
        let f_embed = config.f_embed.ok_or_else(|| Error::config("f_embed", "width not resolved"))?;
        let ab = config.ablation;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();

        let h_per = config.h_dim / f_meta;
        let metafp = if ab.no_metafp {
            if h_per == 0 {
                return Err(Error::config("h_dim", "smaller than f_meta"));
            }
            None
        } else {
            Some(MetaFpParams::new(&mut store, f_meta, config.h_dim, &mut rng)?)
        };
        let h_meta = f_meta * h_per;
        let posconcat = PosConcatParams::new(&mut store, h_meta, &mut rng);
        let d_meta = h_meta + 1;
        let seq_meta = SequenceBlock::new(&mut store, "mamba_meta", d_meta, config.d_state1, &ab, &mut rng)?;
        let seq_text = SequenceBlock::new(&mut store, "mamba_text", f_embed, config.d_state2, &ab, &mut rng)?;
        let out = config.knu_out();
        let knu_meta = KanParams::new(&mut store, "knu_meta", d_meta, out, !ab.no_kan, &mut rng);
        let knu_text = KanParams::new(&mut store, "knu_text", f_embed, out, !ab.no_kan, &mut rng);
        let bound = 1.0 / ((2 * out) as f64).sqrt();
        let w_out = store.add("out.w", uniform(&[2 * out, config.n_classes], bound, &mut rng));
        let b_out = store.add("out.b", uniform(&[config.n_classes], bound, &mut rng));
        Ok(EmkKenModel {
            config: config.clone(),
            store,
            metafp,
            f_meta,
            f_embed,
            h_per,
            posconcat,
            seq_meta,
            seq_text,
            knu_meta,
            knu_text,
            w_out,
            b_out,
        })
    }

    pub fn config(&self) -> &EmkKenConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    fn kan_dropout(&self) -> f64 {
        if self.config.ablation.no_kan_dropout {
            0.0
        } else {
            self.config.dropout_kan
        }
    }

    /// Logits `[N, n_classes]`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        batch: &BatchInput<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        self.forward_with(tape, &self.store, batch, mode, rng)
    }

    /// [`EmkKenModel::forward`] reading parameter values from `store`.
    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        batch: &BatchInput<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        batch.check_widths(self.f_meta, self.f_embed)?;
        let cfg = &self.config;
        let (_, l_max) = batch.dims();

        let meta = tape.constant(batch.meta.clone());
        let h = match &self.metafp {
            Some(p) => metafp_forward(tape, store, p, meta)?,
            None => tape.repeat_each(meta, self.h_per)?,
        };
        let pos = tape.constant(positions(&batch.valid_lens, l_max)?);
        let h = positional_concat(tape, store, &self.posconcat, h, pos)?;
        let ym = self.seq_meta.forward(tape, store, h, cfg.scan_mode, cfg.dropout_mamba, mode, rng)?;
        let central = tape.masked_mean(ym, 1, &batch.central_mask)?;
        let km = kan_forward(tape, store, &self.knu_meta, central, self.kan_dropout(), mode, rng)?;

        let embed = tape.constant(batch.embed.clone());
        let yt = self.seq_text.forward(tape, store, embed, cfg.scan_mode, cfg.dropout_mamba, mode, rng)?;
        let pooled = tape.masked_mean(yt, 1, &batch.valid_mask)?;
        let kt = kan_forward(tape, store, &self.knu_text, pooled, self.kan_dropout(), mode, rng)?;

        let joined = tape.concat_last(km, kt)?;
        let (w, b) = (tape.param(store, self.w_out), tape.param(store, self.b_out));
        tape.linear(joined, w, Some(b))
    }

    /// Sum of both units' spline penalties, `None` without splines.
    pub fn reg_loss(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<Option<Var>> {
        let a = kan_reg_loss(tape, store, &self.knu_meta)?;
        let b = kan_reg_loss(tape, store, &self.knu_text)?;
        match (a, b) {
            (Some(a), Some(b)) => tape.add(a, b).map(Some),
            (a, b) => Ok(a.or(b)),
        }
    }

    /// Cross-entropy plus `λ` times the spline penalty.
    pub fn loss(&self, tape: &mut Tape<T>, store: &ParamStore<T>, logits: Var, labels: &[usize]) -> Result<Var> {
        let ce = tape.softmax_cross_entropy(logits, labels)?;
        match self.reg_loss(tape, store)? {
            Some(reg) if self.config.lambda > 0.0 => {
                let reg = tape.scale(reg, T::lit(self.config.lambda))?;
                tape.add(ce, reg)
            }
            _ => Ok(ce),
        }
    }

    /// Class probabilities in eval mode.
    pub fn predict(&self, batch: &BatchInput<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        // eval mode draws nothing from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = self.forward(&mut tape, batch, Mode::Eval, &mut rng)?;
        Ok(tape.value(logits).softmax())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let named: Vec<(&str, &Tensor<T>)> =
            self.store.iter().map(|(_, p)| (p.name.as_str(), &p.value)).collect();
        write_checkpoint(path, &named)
    }

    /// Replaces parameter values with those stored at `path`.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let named = read_checkpoint(path)?;
        self.store.load_values(named)
    }
}
