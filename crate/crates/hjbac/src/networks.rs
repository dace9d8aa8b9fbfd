//! Residual MLPs for the value, value-gradient, and control functions.
//!
//! A network with `depth` hidden layers is the composition
//! `F_depth . act . F_{depth-1} . ... . act . F_0` where each `F_i` is
//! affine and `act(x) = x + ReLU(x)` elementwise (a skip connection that
//! doubles positive coordinates). `depth = 0` is a plain affine map.
//!
//! Plain evaluation ([`ResidualMlp::eval_into`]) and tape evaluation
//! ([`ResidualMlp::forward_tape`]) perform bitwise-identical arithmetic, so
//! a trajectory simulated with plain math can be retraced on a tape without
//! changing any branch decision.
//!
//! # Checkpoint byte layout
//!
//! Network checkpoints are little-endian throughout:
//!
//! ```text
//! magic "HJBN" | u32 version = 1 | u32 net_count
//! then per net:
//!   u16 name_len | name (UTF-8)
//!   u32 in_dim | u32 out_dim | u32 width | u32 depth
//!   u64 param_count | param_count x f64 (flat layout, F0.w, F0.b, F1.w, ...)
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use thiserror::Error;

use crate::autodiff::{NodeId, ParamVector, Tape};

/// Feedforward network with residual activations and constant hidden width.
#[derive(Debug, Clone)]
pub struct ResidualMlp {
    in_dim: usize,
    out_dim: usize,
    width: usize,
    depth: usize,
    params: ParamVector,
}

/// Reusable buffers for plain evaluation.
#[derive(Debug, Default, Clone)]
pub struct MlpScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// How network parameters enter a tape.
#[derive(Clone, Copy, Debug)]
pub enum BindMode {
    /// Trainable: parameter leaves of the given tape group.
    Param { group: usize },
    /// Frozen: parameter leaves of the given group wrapped in stop-gradient,
    /// so the group's gradient is exactly zero (the actor's `V-hat`).
    StopGrad { group: usize },
}

/// Per-tape handle to a network's bound parameter nodes.
pub struct TapeBinding {
    stages: Vec<(NodeId, NodeId)>,
}

impl ResidualMlp {
    /// Zero-initialized network. `depth` counts hidden layers; stage `i` maps
    /// width-to-width except the first (from `in_dim`) and last (to `out_dim`).
    pub fn new(in_dim: usize, out_dim: usize, width: usize, depth: usize) -> Self {
        assert!(in_dim > 0 && out_dim > 0, "zero-dimensional network");
        assert!(depth == 0 || width > 0, "hidden layers need positive width");
        let mut params = ParamVector::new();
        for i in 0..=depth {
            let rows = if i == depth { out_dim } else { width };
            let cols = if i == 0 { in_dim } else { width };
            params.push(&format!("f{i}.w"), rows, cols);
            params.push(&format!("f{i}.b"), rows, 1);
        }
        ResidualMlp {
            in_dim,
            out_dim,
            width,
            depth,
            params,
        }
    }

    /// Symmetric-uniform weight init scaled by `1/sqrt(fan_in)`; biases stay 0.
    pub fn init_uniform(&mut self, rng: &mut impl Rng) {
        for i in 0..=self.depth {
            let view = self.params.view(2 * i).clone();
            let bound = 1.0 / (view.cols as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for w in self.params.slice_mut(2 * i) {
                *w = dist.sample(rng);
            }
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    fn stage_dims(&self, i: usize) -> (usize, usize) {
        let rows = if i == self.depth {
            self.out_dim
        } else {
            self.width
        };
        let cols = if i == 0 { self.in_dim } else { self.width };
        (rows, cols)
    }

    /// Plain forward pass. `out` must have length `out_dim`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64], s: &mut MlpScratch) {
        assert_eq!(x.len(), self.in_dim, "input dimension mismatch");
        assert_eq!(out.len(), self.out_dim, "output dimension mismatch");
        let MlpScratch { a, b } = s;
        a.resize(self.width, 0.0);
        b.resize(self.width, 0.0);
        // Double buffering: hidden stage i reads the previous stage's buffer
        // (or x) and writes `a` for even i, `b` for odd i.
        for i in 0..self.depth {
            let (rows, cols) = self.stage_dims(i);
            let w = self.params.slice(2 * i);
            let bias = self.params.slice(2 * i + 1);
            let (src, dst) = if i % 2 == 0 {
                (&**b, &mut **a)
            } else {
                (&**a, &mut **b)
            };
            let src: &[f64] = if i == 0 { x } else { src };
            affine_into(w, bias, src, rows, cols, &mut dst[..rows]);
            for v in dst[..rows].iter_mut() {
                if *v > 0.0 {
                    *v += *v;
                }
            }
        }
        let (rows, cols) = self.stage_dims(self.depth);
        let w = self.params.slice(2 * self.depth);
        let bias = self.params.slice(2 * self.depth + 1);
        let src: &[f64] = if self.depth == 0 {
            x
        } else if self.depth % 2 == 1 {
            a
        } else {
            b
        };
        affine_into(w, bias, src, rows, cols, out);
    }

    /// Allocating convenience wrapper around [`ResidualMlp::eval_into`].
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim];
        self.eval_into(x, &mut out, &mut MlpScratch::default());
        out
    }

    /// Puts the parameters on a tape once; the binding can then be reused
    /// for any number of [`ResidualMlp::forward_tape`] calls on that tape.
    pub fn bind(&self, t: &mut Tape, mode: BindMode) -> TapeBinding {
        let mut stages = Vec::with_capacity(self.depth + 1);
        for i in 0..=self.depth {
            let wv = self.params.view(2 * i);
            let bv = self.params.view(2 * i + 1);
            let (mut w, mut b) = match mode {
                BindMode::Param { group } | BindMode::StopGrad { group } => (
                    t.param(group, wv.offset, self.params.slice(2 * i)),
                    t.param(group, bv.offset, self.params.slice(2 * i + 1)),
                ),
            };
            if let BindMode::StopGrad { .. } = mode {
                w = t.stop_grad(w);
                b = t.stop_grad(b);
            }
            stages.push((w, b));
        }
        TapeBinding { stages }
    }

    /// Tape forward pass through previously bound parameters.
    pub fn forward_tape(&self, t: &mut Tape, bind: &TapeBinding, x: NodeId) -> NodeId {
        assert_eq!(t.node_len(x), self.in_dim, "input dimension mismatch");
        let mut cur = x;
        for (i, &(w, b)) in bind.stages.iter().enumerate() {
            cur = t.affine(w, b, cur);
            if i < self.depth {
                cur = t.res_act(cur);
            }
        }
        cur
    }
}

fn affine_into(w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        let row = r * cols;
        out[r] = crate::util::dot4(&w[row..row + cols], x) + b[r];
    }
}

/// Maps raw control-network output to an admissible control.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ControlHead {
    /// Control equals the raw network output.
    Unconstrained,
    /// Unit-ball constraint: the net emits `(u_len, u_dir)` in `R^{d_u+1}`
    /// and the control is
    /// `u_dir * FEASIBILITY_MARGIN / (delta + ReLU(u_len) + |u_dir|)`,
    /// which satisfies `|u| < 1` for every parameter choice. The margin
    /// absorbs the rounding of the normalization, so the bound also holds
    /// for the computed floating-point norm.
    UnitBall { delta: f64 },
}

impl ControlHead {
    pub const DEFAULT_DELTA: f64 = 1e-15;

    /// Shrink factor for the unit-ball head. Without it a saturated head
    /// (`|u_dir| >> delta`) can land one ulp above 1 after the division
    /// rounds; 1e-12 dominates every rounding term at any realistic
    /// control dimension while perturbing the control negligibly.
    pub const FEASIBILITY_MARGIN: f64 = 1.0 - 1e-12;

    pub fn unit_ball() -> Self {
        ControlHead::UnitBall {
            delta: Self::DEFAULT_DELTA,
        }
    }

    /// Raw network output length for a `control_dim`-dimensional control.
    pub fn raw_dim(&self, control_dim: usize) -> usize {
        match self {
            ControlHead::Unconstrained => control_dim,
            ControlHead::UnitBall { .. } => control_dim + 1,
        }
    }

    /// Plain application of the head.
    pub fn apply(&self, raw: &[f64], u: &mut [f64]) {
        match self {
            ControlHead::Unconstrained => u.copy_from_slice(raw),
            ControlHead::UnitBall { delta } => {
                let relu_len = if raw[0] > 0.0 { raw[0] } else { 0.0 };
                let dir = &raw[1..];
                let mut sq = 0.0;
                for v in dir {
                    sq += v * v;
                }
                let den = (relu_len + delta) + sq.sqrt();
                for (ui, di) in u.iter_mut().zip(dir) {
                    *ui = (di * Self::FEASIBILITY_MARGIN) / den;
                }
            }
        }
    }

    /// Tape application; arithmetic matches [`ControlHead::apply`] bitwise.
    pub fn apply_tape(&self, t: &mut Tape, raw: NodeId) -> NodeId {
        match self {
            ControlHead::Unconstrained => raw,
            ControlHead::UnitBall { delta } => {
                let du = t.node_len(raw) - 1;
                let len = t.slice(raw, 0, 1);
                let dir = t.slice(raw, 1, du);
                let r = t.relu(len);
                let rd = t.add_const(r, *delta);
                let sq = t.sq_norm(dir);
                let norm = t.sqrt(sq);
                let den = t.add(rd, norm);
                let den_v = t.broadcast(den, du);
                let scaled = t.scale(dir, Self::FEASIBILITY_MARGIN);
                t.div(scaled, den_v)
            }
        }
    }
}

/// The trainable function approximators for one run.
#[derive(Debug, Clone)]
pub struct NetworkSet {
    /// `V(.; theta_V)`, scalar output.
    pub value: ResidualMlp,
    /// `G(.; theta_G) ~ grad V`; present only for the variance-reduced TD.
    pub grad: Option<ResidualMlp>,
    /// `u(.; theta_u)`; output is the head's raw dimension.
    pub control: ResidualMlp,
    pub head: ControlHead,
}

impl NetworkSet {
    /// Builds and initializes all networks for a `dim`-dimensional state and
    /// `control_dim`-dimensional control. `with_grad_net` selects VR-LSTD.
    pub fn create(
        dim: usize,
        control_dim: usize,
        head: ControlHead,
        width: usize,
        depth: usize,
        with_grad_net: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let mut value = ResidualMlp::new(dim, 1, width, depth);
        value.init_uniform(rng);
        let grad = if with_grad_net {
            let mut g = ResidualMlp::new(dim, dim, width, depth);
            g.init_uniform(rng);
            Some(g)
        } else {
            None
        };
        let mut control = ResidualMlp::new(dim, head.raw_dim(control_dim), width, depth);
        control.init_uniform(rng);
        NetworkSet {
            value,
            grad,
            control,
            head,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self.head {
            ControlHead::Unconstrained => self.control.out_dim(),
            ControlHead::UnitBall { .. } => self.control.out_dim() - 1,
        }
    }

    pub fn eval_value(&self, x: &[f64], s: &mut MlpScratch) -> f64 {
        let mut out = [0.0];
        self.value.eval_into(x, &mut out, s);
        out[0]
    }

    /// Applies the control net and head; `u` has length `control_dim`.
    pub fn eval_control(&self, x: &[f64], u: &mut [f64], s: &mut MlpScratch, raw: &mut Vec<f64>) {
        raw.resize(self.control.out_dim(), 0.0);
        self.control.eval_into(x, raw, s);
        self.head.apply(raw, u);
    }

    /// Gradient of the value net w.r.t. its input, via a throwaway tape.
    pub fn value_input_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut t = Tape::new();
        let g = t.add_group(self.value.param_len());
        let bind = self.value.bind(&mut t, BindMode::StopGrad { group: g });
        let xn = t.constant(x);
        let v = self.value.forward_tape(&mut t, &bind, xn);
        t.backward(v).expect("value net produced non-finite output");
        t.adjoint(xn).to_vec()
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (not a checkpoint file)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn write_mlp(w: &mut impl Write, name: &str, net: &ResidualMlp) -> io::Result<()> {
    let bytes = name.as_bytes();
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    write_u32(w, net.in_dim as u32)?;
    write_u32(w, net.out_dim as u32)?;
    write_u32(w, net.width as u32)?;
    write_u32(w, net.depth as u32)?;
    write_u64(w, net.param_len() as u64)?;
    for &v in net.params.values() {
        write_f64(w, v)?;
    }
    Ok(())
}

pub(crate) fn read_mlp(r: &mut impl Read) -> Result<(String, ResidualMlp), CheckpointError> {
    let mut lb = [0u8; 2];
    r.read_exact(&mut lb)?;
    let mut name = vec![0u8; u16::from_le_bytes(lb) as usize];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| CheckpointError::Corrupt("net name is not UTF-8".into()))?;
    let in_dim = read_u32(r)? as usize;
    let out_dim = read_u32(r)? as usize;
    let width = read_u32(r)? as usize;
    let depth = read_u32(r)? as usize;
    let count = read_u64(r)? as usize;
    let mut net = ResidualMlp::new(in_dim, out_dim, width, depth);
    if net.param_len() != count {
        return Err(CheckpointError::Corrupt(format!(
            "net {name}: expected {} params, file has {count}",
            net.param_len()
        )));
    }
    for v in net.params.values_mut() {
        *v = read_f64(r)?;
    }
    Ok((name, net))
}

const NET_MAGIC: &[u8; 4] = b"HJBN";
const NET_VERSION: u32 = 1;

/// Writes named networks to `path` atomically (temp file + rename).
pub fn save_networks(path: &Path, nets: &[(&str, &ResidualMlp)]) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = io::BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(NET_MAGIC)?;
        write_u32(&mut f, NET_VERSION)?;
        write_u32(&mut f, nets.len() as u32)?;
        for (name, net) in nets {
            write_mlp(&mut f, name, net)?;
        }
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads every named network from `path`.
pub fn load_networks(path: &Path) -> Result<Vec<(String, ResidualMlp)>, CheckpointError> {
    let mut f = io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != NET_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut f)?;
    if version != NET_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = read_u32(&mut f)?;
    let mut nets = Vec::with_capacity(count as usize);
    for _ in 0..count {
        nets.push(read_mlp(&mut f)?);
    }
    Ok(nets)
}
