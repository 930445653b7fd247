//! Parameter storage, initialization, and tape binding.
//!
//! [`Params`] is generic over its leaf type: `Params<Tensor>` holds the
//! numbers ([`ModelParams`]), `Params<Var>` is the same structure bound onto
//! a tape ([`BoundParams`]). One `try_map` walks both, so the
//! binding, the trainable-tensor enumeration, and the checkpoint order can
//! never disagree about what the model contains.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

use super::config::ModelConfig;

/// Epsilon used by every layer norm in the network.
pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear<T> {
    /// `[out, in]`
    pub w: T,
    /// `[out, 1]`
    pub b: T,
}

#[derive(Debug, Clone)]
pub struct Norm<T> {
    /// `[C, 1]`
    pub gain: T,
    /// `[C, 1]`
    pub bias: T,
}

/// One deformable-attention block: value and output projections plus the two
/// small heads that read sampling offsets and attention logits off the query.
#[derive(Debug, Clone)]
pub struct DeformAttn<T> {
    pub value: Linear<T>,  // C -> C
    pub offset: Linear<T>, // C -> H·K
    pub weight: Linear<T>, // C -> H·K
    pub out: Linear<T>,    // C -> C
}

#[derive(Debug, Clone)]
pub struct EncLayer<T> {
    pub attn: DeformAttn<T>,
    pub norm1: Norm<T>,
    pub ffn1: Linear<T>,
    pub ffn2: Linear<T>,
    pub norm2: Norm<T>,
}

#[derive(Debug, Clone)]
pub struct DecLayer<T> {
    pub sa_q: Linear<T>,
    pub sa_k: Linear<T>,
    pub sa_v: Linear<T>,
    pub sa_out: Linear<T>,
    pub norm1: Norm<T>,
    pub cross: DeformAttn<T>,
    pub norm2: Norm<T>,
    pub ffn1: Linear<T>,
    pub ffn2: Linear<T>,
    pub norm3: Norm<T>,
}

/// Everything the network owns. `pe` is the fixed sinusoidal position table —
/// not trainable, regenerated from the config rather than checkpointed, and
/// therefore excluded from [`Params::for_each`].
#[derive(Debug, Clone)]
pub struct Params<T> {
    pub input: Linear<T>, // D -> C
    /// `[C, T]`, fixed.
    pub pe: T,
    pub enc: Vec<EncLayer<T>>,
    pub dec: Vec<DecLayer<T>>,
    /// `[C, N_a]` learned query embeddings.
    pub queries: T,
    /// `[1, N_a]` raw reference positions; `sigmoid(·) · (T-1)` at use.
    pub query_ref: T,
    pub reg1: Linear<T>, // C -> C
    pub reg2: Linear<T>, // C -> C
    pub reg3: Linear<T>, // C -> 2
    pub cls: Linear<T>,  // C -> C_cls+1
}

pub type ModelParams = Params<Tensor>;
pub type BoundParams = Params<Var>;

// ---- traversal ----------------------------------------------------------

impl<T> Linear<T> {
    fn for_each<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{name}.w"), &self.w);
        f(format!("{name}.b"), &self.b);
    }

    fn for_each_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut T)) {
        f(format!("{name}.w"), &mut self.w);
        f(format!("{name}.b"), &mut self.b);
    }

    fn try_map<U, E>(
        &self,
        f: &mut impl FnMut(&T) -> std::result::Result<U, E>,
    ) -> std::result::Result<Linear<U>, E> {
        Ok(Linear {
            w: f(&self.w)?,
            b: f(&self.b)?,
        })
    }
}

impl<T> Norm<T> {
    fn for_each<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{name}.gain"), &self.gain);
        f(format!("{name}.bias"), &self.bias);
    }

    fn for_each_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut T)) {
        f(format!("{name}.gain"), &mut self.gain);
        f(format!("{name}.bias"), &mut self.bias);
    }

    fn try_map<U, E>(
        &self,
        f: &mut impl FnMut(&T) -> std::result::Result<U, E>,
    ) -> std::result::Result<Norm<U>, E> {
        Ok(Norm {
            gain: f(&self.gain)?,
            bias: f(&self.bias)?,
        })
    }
}

impl<T> DeformAttn<T> {
    fn for_each<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a T)) {
        self.value.for_each(&format!("{name}.value"), f);
        self.offset.for_each(&format!("{name}.offset"), f);
        self.weight.for_each(&format!("{name}.weight"), f);
        self.out.for_each(&format!("{name}.out"), f);
    }

    fn for_each_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut T)) {
        self.value.for_each_mut(&format!("{name}.value"), f);
        self.offset.for_each_mut(&format!("{name}.offset"), f);
        self.weight.for_each_mut(&format!("{name}.weight"), f);
        self.out.for_each_mut(&format!("{name}.out"), f);
    }

    fn try_map<U, E>(
        &self,
        f: &mut impl FnMut(&T) -> std::result::Result<U, E>,
    ) -> std::result::Result<DeformAttn<U>, E> {
        Ok(DeformAttn {
            value: self.value.try_map(f)?,
            offset: self.offset.try_map(f)?,
            weight: self.weight.try_map(f)?,
            out: self.out.try_map(f)?,
        })
    }
}

impl<T> EncLayer<T> {
    fn for_each<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a T)) {
        self.attn.for_each(&format!("{name}.attn"), f);
        self.norm1.for_each(&format!("{name}.norm1"), f);
        self.ffn1.for_each(&format!("{name}.ffn1"), f);
        self.ffn2.for_each(&format!("{name}.ffn2"), f);
        self.norm2.for_each(&format!("{name}.norm2"), f);
    }

    fn for_each_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut T)) {
        self.attn.for_each_mut(&format!("{name}.attn"), f);
        self.norm1.for_each_mut(&format!("{name}.norm1"), f);
        self.ffn1.for_each_mut(&format!("{name}.ffn1"), f);
        self.ffn2.for_each_mut(&format!("{name}.ffn2"), f);
        self.norm2.for_each_mut(&format!("{name}.norm2"), f);
    }

    fn try_map<U, E>(
        &self,
        f: &mut impl FnMut(&T) -> std::result::Result<U, E>,
    ) -> std::result::Result<EncLayer<U>, E> {
        Ok(EncLayer {
            attn: self.attn.try_map(f)?,
            norm1: self.norm1.try_map(f)?,
            ffn1: self.ffn1.try_map(f)?,
            ffn2: self.ffn2.try_map(f)?,
            norm2: self.norm2.try_map(f)?,
        })
    }
}

impl<T> DecLayer<T> {
    fn for_each<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a T)) {
        self.sa_q.for_each(&format!("{name}.sa_q"), f);
        self.sa_k.for_each(&format!("{name}.sa_k"), f);
        self.sa_v.for_each(&format!("{name}.sa_v"), f);
        self.sa_out.for_each(&format!("{name}.sa_out"), f);
        self.norm1.for_each(&format!("{name}.norm1"), f);
        self.cross.for_each(&format!("{name}.cross"), f);
        self.norm2.for_each(&format!("{name}.norm2"), f);
        self.ffn1.for_each(&format!("{name}.ffn1"), f);
        self.ffn2.for_each(&format!("{name}.ffn2"), f);
        self.norm3.for_each(&format!("{name}.norm3"), f);
    }

    fn for_each_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut T)) {
        self.sa_q.for_each_mut(&format!("{name}.sa_q"), f);
        self.sa_k.for_each_mut(&format!("{name}.sa_k"), f);
        self.sa_v.for_each_mut(&format!("{name}.sa_v"), f);
        self.sa_out.for_each_mut(&format!("{name}.sa_out"), f);
        self.norm1.for_each_mut(&format!("{name}.norm1"), f);
        self.cross.for_each_mut(&format!("{name}.cross"), f);
        self.norm2.for_each_mut(&format!("{name}.norm2"), f);
        self.ffn1.for_each_mut(&format!("{name}.ffn1"), f);
        self.ffn2.for_each_mut(&format!("{name}.ffn2"), f);
        self.norm3.for_each_mut(&format!("{name}.norm3"), f);
    }

    fn try_map<U, E>(
        &self,
        f: &mut impl FnMut(&T) -> std::result::Result<U, E>,
    ) -> std::result::Result<DecLayer<U>, E> {
        Ok(DecLayer {
            sa_q: self.sa_q.try_map(f)?,
            sa_k: self.sa_k.try_map(f)?,
            sa_v: self.sa_v.try_map(f)?,
            sa_out: self.sa_out.try_map(f)?,
            norm1: self.norm1.try_map(f)?,
            cross: self.cross.try_map(f)?,
            norm2: self.norm2.try_map(f)?,
            ffn1: self.ffn1.try_map(f)?,
            ffn2: self.ffn2.try_map(f)?,
            norm3: self.norm3.try_map(f)?,
        })
    }
}

impl<T> Params<T> {
    /// Visit every *trainable* tensor in a fixed canonical order. `pe` is
    /// skipped. This order is the contract for optimizer state and
    /// checkpoints.
    pub fn for_each<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        self.input.for_each("input", f);
        for (i, layer) in self.enc.iter().enumerate() {
            layer.for_each(&format!("enc{i}"), f);
        }
        for (i, layer) in self.dec.iter().enumerate() {
            layer.for_each(&format!("dec{i}"), f);
        }
        f("queries".into(), &self.queries);
        f("query_ref".into(), &self.query_ref);
        self.reg1.for_each("reg1", f);
        self.reg2.for_each("reg2", f);
        self.reg3.for_each("reg3", f);
        self.cls.for_each("cls", f);
    }

    /// Mutable twin of [`Params::for_each`], same order.
    pub fn for_each_mut(&mut self, f: &mut impl FnMut(String, &mut T)) {
        self.input.for_each_mut("input", f);
        for (i, layer) in self.enc.iter_mut().enumerate() {
            layer.for_each_mut(&format!("enc{i}"), f);
        }
        for (i, layer) in self.dec.iter_mut().enumerate() {
            layer.for_each_mut(&format!("dec{i}"), f);
        }
        f("queries".into(), &mut self.queries);
        f("query_ref".into(), &mut self.query_ref);
        self.reg1.for_each_mut("reg1", f);
        self.reg2.for_each_mut("reg2", f);
        self.reg3.for_each_mut("reg3", f);
        self.cls.for_each_mut("cls", f);
    }

    /// Structural map. The mapper is told whether each tensor is trainable
    /// (`true`) or fixed (`false`, only `pe`); trainable tensors are visited
    /// in exactly the [`Params::for_each`] order.
    pub fn try_map<U, E>(
        &self,
        f: &mut impl FnMut(bool, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<Params<U>, E> {
        Ok(Params {
            input: self.input.try_map(&mut |t| f(true, t))?,
            pe: f(false, &self.pe)?,
            enc: self
                .enc
                .iter()
                .map(|l| l.try_map(&mut |t| f(true, t)))
                .collect::<std::result::Result<_, E>>()?,
            dec: self
                .dec
                .iter()
                .map(|l| l.try_map(&mut |t| f(true, t)))
                .collect::<std::result::Result<_, E>>()?,
            queries: f(true, &self.queries)?,
            query_ref: f(true, &self.query_ref)?,
            reg1: self.reg1.try_map(&mut |t| f(true, t))?,
            reg2: self.reg2.try_map(&mut |t| f(true, t))?,
            reg3: self.reg3.try_map(&mut |t| f(true, t))?,
            cls: self.cls.try_map(&mut |t| f(true, t))?,
        })
    }

    /// Number of trainable tensors.
    pub fn num_tensors(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, _| n += 1);
        n
    }
}

// ---- initialization -----------------------------------------------------

fn glorot(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Tensor {
    let a = (6.0 / (out_dim + in_dim) as f64).sqrt();
    Tensor::from_fn(&[out_dim, in_dim], |_| rng.random_range(-a..a))
}

fn linear(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Linear<Tensor> {
    Linear {
        w: glorot(rng, out_dim, in_dim),
        b: Tensor::zeros(&[out_dim, 1]),
    }
}

fn norm(c: usize) -> Norm<Tensor> {
    Norm {
        gain: Tensor::full(&[c, 1], 1.0),
        bias: Tensor::zeros(&[c, 1]),
    }
}

/// Offset and attention-weight heads start at zero weights; the offset bias
/// seeds each head with the distinct ladder `{-(K-1)/2, …, (K-1)/2}` so the
/// K samples begin spread instead of collapsed onto the reference point.
fn deform_attn(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> DeformAttn<Tensor> {
    let hk = cfg.h * cfg.k;
    let ladder = Tensor::from_fn(&[hk, 1], |i| {
        let k = i % cfg.k;
        k as f64 - (cfg.k - 1) as f64 / 2.0
    });
    DeformAttn {
        value: linear(rng, cfg.c, cfg.c),
        offset: Linear {
            w: Tensor::zeros(&[hk, cfg.c]),
            b: ladder,
        },
        weight: Linear {
            w: Tensor::zeros(&[hk, cfg.c]),
            b: Tensor::zeros(&[hk, 1]),
        },
        out: linear(rng, cfg.c, cfg.c),
    }
}

/// The fixed sinusoidal position table: channel pair `2i, 2i+1` oscillates at
/// wavelength `10000^{2i/C}`, sine on even channels, cosine on odd.
fn sinusoidal_pe(c: usize, t: usize) -> Tensor {
    Tensor::from_fn(&[c, t], |idx| {
        let ch = idx / t;
        let pos = (idx % t) as f64;
        let pair = (ch / 2) as f64;
        let angle = pos / 10000f64.powf(2.0 * pair / c as f64);
        if ch % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl ModelParams {
    /// Seeded initialization.
    ///
    /// Linear weights are Glorot-uniform (`±sqrt(6/(fan_in+fan_out))`) and
    /// biases zero, except: offset heads (zero weights, ladder biases),
    /// attention-weight heads (all zero, giving a uniform softmax), query
    /// reference points (`logit((q+0.5)/N_a)`, spreading the initial
    /// references evenly across the sequence), and the query embeddings
    /// (Glorot with fans `C` and `N_a`). Draws happen in declaration order,
    /// so adding layers never reshuffles earlier tensors.
    pub fn init(cfg: &ModelConfig) -> Result<ModelParams> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let input = linear(&mut rng, cfg.c, cfg.input_dim());
        let pe = sinusoidal_pe(cfg.c, cfg.t);
        let enc = (0..cfg.l_e)
            .map(|_| EncLayer {
                attn: deform_attn(&mut rng, cfg),
                norm1: norm(cfg.c),
                ffn1: linear(&mut rng, cfg.ffn_width, cfg.c),
                ffn2: linear(&mut rng, cfg.c, cfg.ffn_width),
                norm2: norm(cfg.c),
            })
            .collect();
        let dec = (0..cfg.l_d)
            .map(|_| DecLayer {
                sa_q: linear(&mut rng, cfg.c, cfg.c),
                sa_k: linear(&mut rng, cfg.c, cfg.c),
                sa_v: linear(&mut rng, cfg.c, cfg.c),
                sa_out: linear(&mut rng, cfg.c, cfg.c),
                norm1: norm(cfg.c),
                cross: deform_attn(&mut rng, cfg),
                norm2: norm(cfg.c),
                ffn1: linear(&mut rng, cfg.ffn_width, cfg.c),
                ffn2: linear(&mut rng, cfg.c, cfg.ffn_width),
                norm3: norm(cfg.c),
            })
            .collect();
        let queries = glorot(&mut rng, cfg.c, cfg.n_a);
        let query_ref = Tensor::from_fn(&[1, cfg.n_a], |q| {
            let p = (q as f64 + 0.5) / cfg.n_a as f64;
            (p / (1.0 - p)).ln()
        });
        let reg1 = linear(&mut rng, cfg.c, cfg.c);
        let reg2 = linear(&mut rng, cfg.c, cfg.c);
        let reg3 = linear(&mut rng, 2, cfg.c);
        let cls = linear(&mut rng, cfg.c_cls + 1, cfg.c);
        Ok(ModelParams {
            input,
            pe,
            enc,
            dec,
            queries,
            query_ref,
            reg1,
            reg2,
            reg3,
            cls,
        })
    }

    /// Put the parameters on a tape: differentiable leaves when `trainable`,
    /// constants otherwise. `pe` is always a constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundParams> {
        self.try_map(&mut |train, t: &Tensor| {
            if train && trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }
}
