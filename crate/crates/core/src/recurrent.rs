//! Convolutional GRU cells, sequence propagation in both time directions,
//! bidirectional combination, fusion of hidden maps into clip features, and
//! the flat (vector) GRU used by the fully connected recurrent head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor_core::{Graph, Padding, Tensor, Var};

/// Carry term of the hidden-state update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// `h_t = z_t * h_{t-1} + (1 - z_t) * o_t`
    #[default]
    Standard,
    /// `h_t = z_t * x_t + (1 - z_t) * o_t`; needs matching input and hidden
    /// shapes.
    PaperLiteral,
}

/// Shape of the gate biases.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// One bias per hidden channel, broadcast over space.
    #[default]
    PerChannel,
    /// One bias per hidden channel and spatial position.
    Spatial,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    /// Flatten the last hidden map.
    #[default]
    LastFlat,
    /// Flatten the mean hidden map over time.
    MeanFlat,
    /// Spatially average the last hidden map (one value per channel).
    LastAvg,
    /// Flatten every frame separately; frames are fused downstream.
    Flat,
}

impl FusionMethod {
    pub fn per_frame(self) -> bool {
        self == FusionMethod::Flat
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `t = 1 .. T` from `h_0 = 0`.
    Forward,
    /// `t = T .. 1` from `h_{T+1} = 0`.
    Backward,
}

/// Names of the nine parameter groups, in storage order.
pub const GATE_PARAM_NAMES: [&str; 9] = [
    "w_zx", "w_zh", "b_z", "w_rx", "w_rh", "b_r", "w_ox", "w_oh", "b_o",
];

/// Parameters of one ConvGRU direction.
///
/// Input kernels are `C_h x C_in x d x d`, hidden kernels `C_h x C_h x k x k`
/// (1x1 by default), biases `[C_h]` or `[C_h, n, n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGruParams<T> {
    pub w_zx: Tensor<T>,
    pub w_zh: Tensor<T>,
    pub b_z: Tensor<T>,
    pub w_rx: Tensor<T>,
    pub w_rh: Tensor<T>,
    pub b_r: Tensor<T>,
    pub w_ox: Tensor<T>,
    pub w_oh: Tensor<T>,
    pub b_o: Tensor<T>,
}

/// Bias shape for a hidden map of `c_h` channels over `spatial`.
pub fn bias_shape(c_h: usize, mode: BiasMode, spatial: (usize, usize)) -> Vec<usize> {
    match mode {
        BiasMode::PerChannel => vec![c_h],
        BiasMode::Spatial => vec![c_h, spatial.0, spatial.1],
    }
}

impl<T: Scalar> ConvGruParams<T> {
    pub fn zeros(c_in: usize, c_h: usize, kernel: usize, hidden_kernel: usize, bias: &[usize]) -> Self {
        let wx = [c_h, c_in, kernel, kernel];
        let wh = [c_h, c_h, hidden_kernel, hidden_kernel];
        ConvGruParams {
            w_zx: Tensor::zeros(&wx),
            w_zh: Tensor::zeros(&wh),
            b_z: Tensor::zeros(bias),
            w_rx: Tensor::zeros(&wx),
            w_rh: Tensor::zeros(&wh),
            b_r: Tensor::zeros(bias),
            w_ox: Tensor::zeros(&wx),
            w_oh: Tensor::zeros(&wh),
            b_o: Tensor::zeros(bias),
        }
    }

    /// Fan-in scaled uniform input kernels, plainly scaled recurrent kernels,
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(
        c_in: usize,
        c_h: usize,
        kernel: usize,
        hidden_kernel: usize,
        bias: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(c_in, c_h, kernel, hidden_kernel, bias);
        let bx = (3.0 / (c_in * kernel * kernel) as f64).sqrt();
        let bh = 1.0 / ((c_h * hidden_kernel * hidden_kernel) as f64).sqrt();
        for w in [&mut p.w_zx, &mut p.w_rx, &mut p.w_ox] {
            *w = Tensor::uniform(w.shape(), -bx, bx, rng);
        }
        for w in [&mut p.w_zh, &mut p.w_rh, &mut p.w_oh] {
            *w = Tensor::uniform(w.shape(), -bh, bh, rng);
        }
        p
    }

    pub fn tensors(&self) -> [&Tensor<T>; 9] {
        [
            &self.w_zx, &self.w_zh, &self.b_z, &self.w_rx, &self.w_rh, &self.b_r, &self.w_ox,
            &self.w_oh, &self.b_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 9] {
        [
            &mut self.w_zx,
            &mut self.w_zh,
            &mut self.b_z,
            &mut self.w_rx,
            &mut self.w_rh,
            &mut self.b_r,
            &mut self.w_ox,
            &mut self.w_oh,
            &mut self.b_o,
        ]
    }

    /// Rebuilds from nine tensors in [`GATE_PARAM_NAMES`] order.
    pub fn from_tensors(mut t: Vec<Tensor<T>>) -> Result<Self> {
        if t.len() != 9 {
            return Err(Error::shape(format!("ConvGRU needs 9 tensors, got {}", t.len())));
        }
        let mut it = t.drain(..);
        let mut next = || it.next().expect("length checked");
        let p = ConvGruParams {
            w_zx: next(),
            w_zh: next(),
            b_z: next(),
            w_rx: next(),
            w_rh: next(),
            b_r: next(),
            w_ox: next(),
            w_oh: next(),
            b_o: next(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn input_channels(&self) -> usize {
        self.w_zx.shape()[1]
    }

    pub fn hidden_channels(&self) -> usize {
        self.w_zx.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let wx = self.w_zx.shape();
        let wh = self.w_zh.shape();
        let b = self.b_z.shape();
        let shared = [&self.w_rx, &self.w_ox].iter().all(|t| t.shape() == wx)
            && [&self.w_rh, &self.w_oh].iter().all(|t| t.shape() == wh)
            && [&self.b_r, &self.b_o].iter().all(|t| t.shape() == b);
        if !shared {
            return Err(Error::shape("ConvGRU gate groups must share shapes"));
        }
        if wx.len() != 4 || wh.len() != 4 || wx[2] != wx[3] || wh[2] != wh[3] {
            return Err(Error::shape(format!(
                "ConvGRU kernels must be square 4D, got {wx:?} and {wh:?}"
            )));
        }
        let c_h = wx[0];
        if wh[0] != c_h || wh[1] != c_h {
            return Err(Error::shape(format!(
                "hidden kernel {wh:?} does not map {c_h} channels to {c_h}"
            )));
        }
        if b.is_empty() || b[0] != c_h || !(b.len() == 1 || b.len() == 3) {
            return Err(Error::shape(format!("bias shape {b:?} for {c_h} hidden channels")));
        }
        Ok(())
    }

    /// Registers borrowed parameters on a tape.
    pub fn register<'p>(&'p self, g: &mut Graph<'p, T>) -> GateVars {
        let v: Vec<Var> = self.tensors().into_iter().map(|t| g.param(t)).collect();
        GateVars::from_slice(&v)
    }

    /// Registers owned copies (for checks that perturb parameters).
    pub fn register_owned(&self, g: &mut Graph<'_, T>, requires_grad: bool) -> GateVars {
        let v: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| g.input(t.clone(), requires_grad))
            .collect();
        GateVars::from_slice(&v)
    }
}

/// Tape handles of one GRU direction, in [`GATE_PARAM_NAMES`] order.
#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub w_zx: Var,
    pub w_zh: Var,
    pub b_z: Var,
    pub w_rx: Var,
    pub w_rh: Var,
    pub b_r: Var,
    pub w_ox: Var,
    pub w_oh: Var,
    pub b_o: Var,
}

impl GateVars {
    pub fn from_slice(v: &[Var]) -> Self {
        assert_eq!(v.len(), 9, "gate parameter groups come in nines");
        GateVars {
            w_zx: v[0],
            w_zh: v[1],
            b_z: v[2],
            w_rx: v[3],
            w_rh: v[4],
            b_r: v[5],
            w_ox: v[6],
            w_oh: v[7],
            b_o: v[8],
        }
    }
}

/// Propagates a ConvGRU direction over `seq` (`T x C_in x H x W`) and
/// returns the hidden maps in time order, each `1 x C_h x H x W`.
///
/// All convolutions are SAME with stride 1 so the hidden state keeps the
/// input's spatial extent.
pub fn convgru_direction<T: Scalar>(
    g: &mut Graph<'_, T>,
    seq: Var,
    p: &GateVars,
    rule: UpdateRule,
    direction: Direction,
) -> Result<Vec<Var>> {
    let shape = g.shape(seq).to_vec();
    if shape.len() != 4 {
        return Err(Error::shape(format!(
            "ConvGRU input must be T x C x H x W, got {shape:?}"
        )));
    }
    let (steps, c_in, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let c_h = g.shape(p.w_zx)[0];
    if rule == UpdateRule::PaperLiteral && c_in != c_h {
        return Err(Error::config(format!(
            "the literal update rule needs equal input and hidden channels ({c_in} vs {c_h})"
        )));
    }

    // Input-to-hidden terms of all three gates for every frame in one pass.
    let wx = g.concat(&[p.w_zx, p.w_rx, p.w_ox], 0)?;
    let bx = g.concat(&[p.b_z, p.b_r, p.b_o], 0)?;
    let gates_x = g.conv2d(seq, wx, Some(bx), 1, Padding::Same)?;
    let wh = g.concat(&[p.w_zh, p.w_rh], 0)?;

    let mut hidden = g.constant(Tensor::zeros(&[1, c_h, h, w]));
    let order: Vec<usize> = match direction {
        Direction::Forward => (0..steps).collect(),
        Direction::Backward => (0..steps).rev().collect(),
    };
    let mut out = vec![None; steps];
    for t in order {
        let gx = g.narrow(gates_x, 0, t, 1)?;
        let zx = g.narrow(gx, 1, 0, c_h)?;
        let rx = g.narrow(gx, 1, c_h, c_h)?;
        let ox = g.narrow(gx, 1, 2 * c_h, c_h)?;

        let gh = g.conv2d(hidden, wh, None, 1, Padding::Same)?;
        let zh = g.narrow(gh, 1, 0, c_h)?;
        let rh = g.narrow(gh, 1, c_h, c_h)?;

        let z_pre = g.add(zx, zh)?;
        let z = g.sigmoid(z_pre)?;
        let r_pre = g.add(rx, rh)?;
        let r = g.sigmoid(r_pre)?;
        let gated = g.mul(r, hidden)?;
        let oh = g.conv2d(gated, p.w_oh, None, 1, Padding::Same)?;
        let o_pre = g.add(ox, oh)?;
        let o = g.tanh(o_pre)?;

        let carry = match rule {
            UpdateRule::Standard => hidden,
            UpdateRule::PaperLiteral => g.narrow(seq, 0, t, 1)?,
        };
        let kept = g.mul(z, carry)?;
        let one_minus_z = g.one_minus(z)?;
        let fresh = g.mul(one_minus_z, o)?;
        hidden = g.add(kept, fresh)?;
        out[t] = Some(hidden);
    }
    Ok(out.into_iter().map(|v| v.expect("every step visited")).collect())
}

/// Gate activations and new state of a single ConvGRU step.
#[derive(Clone, Debug, PartialEq)]
pub struct CellOutput<T> {
    pub z: Tensor<T>,
    pub r: Tensor<T>,
    pub o: Tensor<T>,
    pub h: Tensor<T>,
}

/// One ConvGRU step on a single `C_in x H x W` frame and `C_h x H x W`
/// previous state, computed gate by gate without the batched input
/// convolution used by [`convgru_direction`].
pub fn convgru_cell<T: Scalar>(
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    params: &ConvGruParams<T>,
    rule: UpdateRule,
) -> Result<CellOutput<T>> {
    params.validate()?;
    if rule == UpdateRule::PaperLiteral && x.shape() != h_prev.shape() {
        return Err(Error::config(
            "the literal update rule needs equal input and hidden shapes",
        ));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let hv = g.constant(h_prev.clone());
    let p = params.register_owned(&mut g, false);
    let conv = |g: &mut Graph<'_, T>, input, w, b: Option<Var>| g.conv2d(input, w, b, 1, Padding::Same);
    let zx = conv(&mut g, xv, p.w_zx, Some(p.b_z))?;
    let zh = conv(&mut g, hv, p.w_zh, None)?;
    let z_pre = g.add(zx, zh)?;
    let z = g.sigmoid(z_pre)?;
    let rx = conv(&mut g, xv, p.w_rx, Some(p.b_r))?;
    let rh = conv(&mut g, hv, p.w_rh, None)?;
    let r_pre = g.add(rx, rh)?;
    let r = g.sigmoid(r_pre)?;
    let ox = conv(&mut g, xv, p.w_ox, Some(p.b_o))?;
    let gated = g.mul(r, hv)?;
    let oh = conv(&mut g, gated, p.w_oh, None)?;
    let o_pre = g.add(ox, oh)?;
    let o = g.tanh(o_pre)?;
    let carry = match rule {
        UpdateRule::Standard => hv,
        UpdateRule::PaperLiteral => xv,
    };
    let kept = g.mul(z, carry)?;
    let one_minus_z = g.one_minus(z)?;
    let fresh = g.mul(one_minus_z, o)?;
    let h = g.add(kept, fresh)?;
    Ok(CellOutput {
        z: g.value(z).clone(),
        r: g.value(r).clone(),
        o: g.value(o).clone(),
        h: g.value(h).clone(),
    })
}

/// Per-frame hidden maps of one ConvGRU layer, optionally with the maps of
/// the reverse-time direction.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenSequence<T> {
    /// `h_1 .. h_T`, each `C_h x n x n`.
    pub forward: Vec<Tensor<T>>,
    /// `ĥ_1 .. ĥ_T` in time order, when bidirectional.
    pub backward: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> HiddenSequence<T> {
    pub fn new(forward: Vec<Tensor<T>>, backward: Option<Vec<Tensor<T>>>) -> Result<Self> {
        let first = forward
            .first()
            .ok_or_else(|| Error::shape("hidden sequence is empty"))?;
        let all_match = forward.iter().all(|m| m.shape() == first.shape())
            && backward.as_ref().is_none_or(|b| {
                b.len() == forward.len() && b.iter().all(|m| m.shape() == first.shape())
            });
        if !all_match || first.rank() != 3 {
            return Err(Error::shape("hidden maps must share one C x n x n shape"));
        }
        Ok(HiddenSequence { forward, backward })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn is_bidirectional(&self) -> bool {
        self.backward.is_some()
    }
}

fn run_single<T: Scalar>(
    seq: &Tensor<T>,
    params: &ConvGruParams<T>,
    rule: UpdateRule,
    direction: Direction,
) -> Result<Vec<Tensor<T>>> {
    params.validate()?;
    let mut g = Graph::new();
    let x = g.constant(seq.clone());
    let vars = params.register_owned(&mut g, false);
    let maps = convgru_direction(&mut g, x, &vars, rule, direction)?;
    maps.into_iter()
        .map(|v| {
            let t = g.value(v);
            t.reshape(&t.shape()[1..])
        })
        .collect()
}

/// Forward-time ConvGRU over a `T x C x H x W` clip.
pub fn convgru_forward<T: Scalar>(
    seq: &Tensor<T>,
    params: &ConvGruParams<T>,
    rule: UpdateRule,
) -> Result<Vec<Tensor<T>>> {
    run_single(seq, params, rule, Direction::Forward)
}

/// Reverse-time ConvGRU (from `ĥ_{T+1} = 0`), maps returned in time order.
pub fn convgru_backward_direction<T: Scalar>(
    seq: &Tensor<T>,
    params: &ConvGruParams<T>,
    rule: UpdateRule,
) -> Result<Vec<Tensor<T>>> {
    run_single(seq, params, rule, Direction::Backward)
}

/// Both directions, run independently of each other.
pub fn bidirectional<T: Scalar>(
    seq: &Tensor<T>,
    fwd: &ConvGruParams<T>,
    bwd: &ConvGruParams<T>,
    rule: UpdateRule,
) -> Result<HiddenSequence<T>> {
    if fwd.w_zx.shape() != bwd.w_zx.shape()
        || fwd.w_zh.shape() != bwd.w_zh.shape()
        || fwd.b_z.shape() != bwd.b_z.shape()
    {
        return Err(Error::shape("forward and backward parameter shapes differ"));
    }
    let f = convgru_forward(seq, fwd, rule)?;
    let b = convgru_backward_direction(seq, bwd, rule)?;
    HiddenSequence::new(f, Some(b))
}

/// Averages `h` with `ĥ` frame-wise when both are present.
fn combine<T: Scalar>(g: &mut Graph<'_, T>, fwd: Var, bwd: Option<Var>) -> Result<Var> {
    match bwd {
        None => Ok(fwd),
        Some(b) => {
            let s = g.add(fwd, b)?;
            g.scale(s, T::lit(0.5))
        }
    }
}

/// Maps per-frame hidden maps (each `1 x C_h x n x n`) to features.
///
/// Returns `[C_h n n]` for the flattening clip methods, `[C_h]` for
/// [`FusionMethod::LastAvg`] and `[T, C_h n n]` for [`FusionMethod::Flat`].
/// With a reverse direction, the last map is `(ĥ_1 + h_T) / 2` and per-frame
/// maps are `(ĥ_t + h_t) / 2`, combined before flattening.
pub fn fuse_vars<T: Scalar>(
    g: &mut Graph<'_, T>,
    fwd: &[Var],
    bwd: Option<&[Var]>,
    method: FusionMethod,
) -> Result<Var> {
    let steps = fwd.len();
    if steps == 0 {
        return Err(Error::shape("cannot fuse an empty sequence"));
    }
    if bwd.is_some_and(|b| b.len() != steps) {
        return Err(Error::shape("direction lengths differ"));
    }
    let last = || -> (Var, Option<Var>) { (fwd[steps - 1], bwd.map(|b| b[0])) };
    let per_frame = |g: &mut Graph<'_, T>| -> Result<Vec<Var>> {
        (0..steps)
            .map(|t| combine(g, fwd[t], bwd.map(|b| b[t])))
            .collect()
    };
    match method {
        FusionMethod::LastFlat => {
            let (f, b) = last();
            let m = combine(g, f, b)?;
            g.flatten(m)
        }
        FusionMethod::MeanFlat => {
            let frames = per_frame(g)?;
            let m = g.mean(&frames)?;
            g.flatten(m)
        }
        FusionMethod::LastAvg => {
            let (f, b) = last();
            let m = combine(g, f, b)?;
            let s = g.shape(m).to_vec();
            let chw = g.reshape(m, &s[s.len() - 3..])?;
            g.global_avg_pool(chw)
        }
        FusionMethod::Flat => {
            let frames = per_frame(g)?;
            let stacked = g.concat(&frames, 0)?;
            let width = g.value(stacked).len() / steps;
            g.reshape(stacked, &[steps, width])
        }
    }
}

/// Tensor-level fusion of a [`HiddenSequence`]; see [`fuse_vars`].
pub fn fuse<T: Scalar>(hidden: &HiddenSequence<T>, method: FusionMethod) -> Result<Tensor<T>> {
    if hidden.is_empty() {
        return Err(Error::shape("cannot fuse an empty sequence"));
    }
    let mut g = Graph::new();
    let lift = |maps: &[Tensor<T>], g: &mut Graph<'_, T>| -> Result<Vec<Var>> {
        maps.iter()
            .map(|m| {
                let mut s = vec![1];
                s.extend_from_slice(m.shape());
                Ok(g.constant(m.reshape(&s)?))
            })
            .collect()
    };
    let f = lift(&hidden.forward, &mut g)?;
    let b = match &hidden.backward {
        Some(maps) => Some(lift(maps, &mut g)?),
        None => None,
    };
    let out = fuse_vars(&mut g, &f, b.as_deref(), method)?;
    Ok(g.value(out).clone())
}

/// Parameters of a flat GRU layer: input matrices `[H, In]`, recurrent
/// matrices `[H, H]`, biases `[H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorGruParams<T> {
    pub w_zx: Tensor<T>,
    pub w_zh: Tensor<T>,
    pub b_z: Tensor<T>,
    pub w_rx: Tensor<T>,
    pub w_rh: Tensor<T>,
    pub b_r: Tensor<T>,
    pub w_ox: Tensor<T>,
    pub w_oh: Tensor<T>,
    pub b_o: Tensor<T>,
}

impl<T: Scalar> VectorGruParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let wx = [hidden, input];
        let wh = [hidden, hidden];
        let b = [hidden];
        VectorGruParams {
            w_zx: Tensor::zeros(&wx),
            w_zh: Tensor::zeros(&wh),
            b_z: Tensor::zeros(&b),
            w_rx: Tensor::zeros(&wx),
            w_rh: Tensor::zeros(&wh),
            b_r: Tensor::zeros(&b),
            w_ox: Tensor::zeros(&wx),
            w_oh: Tensor::zeros(&wh),
            b_o: Tensor::zeros(&b),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        let bx = (3.0 / input as f64).sqrt();
        let bh = 1.0 / (hidden as f64).sqrt();
        for w in [&mut p.w_zx, &mut p.w_rx, &mut p.w_ox] {
            *w = Tensor::uniform(w.shape(), -bx, bx, rng);
        }
        for w in [&mut p.w_zh, &mut p.w_rh, &mut p.w_oh] {
            *w = Tensor::uniform(w.shape(), -bh, bh, rng);
        }
        p
    }

    pub fn tensors(&self) -> [&Tensor<T>; 9] {
        [
            &self.w_zx, &self.w_zh, &self.b_z, &self.w_rx, &self.w_rh, &self.b_r, &self.w_ox,
            &self.w_oh, &self.b_o,
        ]
    }

    pub fn input_size(&self) -> usize {
        self.w_zx.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_zx.shape()[0]
    }

    pub fn register_owned(&self, g: &mut Graph<'_, T>, requires_grad: bool) -> GateVars {
        let v: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| g.input(t.clone(), requires_grad))
            .collect();
        GateVars::from_slice(&v)
    }
}

/// One flat GRU step with the standard update rule.
pub fn gru_vector_step_vars<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    h_prev: Var,
    p: &GateVars,
) -> Result<Var> {
    let zx = g.dense(x, p.w_zx, Some(p.b_z))?;
    let zh = g.dense(h_prev, p.w_zh, None)?;
    let z_pre = g.add(zx, zh)?;
    let z = g.sigmoid(z_pre)?;
    let rx = g.dense(x, p.w_rx, Some(p.b_r))?;
    let rh = g.dense(h_prev, p.w_rh, None)?;
    let r_pre = g.add(rx, rh)?;
    let r = g.sigmoid(r_pre)?;
    let ox = g.dense(x, p.w_ox, Some(p.b_o))?;
    let gated = g.mul(r, h_prev)?;
    let oh = g.dense(gated, p.w_oh, None)?;
    let o_pre = g.add(ox, oh)?;
    let o = g.tanh(o_pre)?;
    let kept = g.mul(z, h_prev)?;
    let one_minus_z = g.one_minus(z)?;
    let fresh = g.mul(one_minus_z, o)?;
    g.add(kept, fresh)
}

pub fn gru_vector_step<T: Scalar>(
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    params: &VectorGruParams<T>,
) -> Result<Tensor<T>> {
    if x.shape() != [params.input_size()] || h_prev.shape() != [params.hidden_size()] {
        return Err(Error::shape(format!(
            "GRU step expects x [{}] and h [{}], got {:?} and {:?}",
            params.input_size(),
            params.hidden_size(),
            x.shape(),
            h_prev.shape()
        )));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let hv = g.constant(h_prev.clone());
    let vars = params.register_owned(&mut g, false);
    let h = gru_vector_step_vars(&mut g, xv, hv, &vars)?;
    Ok(g.value(h).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip(steps: usize, c: usize, n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(&[steps, c, n, n], -1.0, 1.0, &mut rng)
    }

    #[test]
    fn zero_params_standard_stays_zero() {
        let x = clip(4, 2, 5, 1);
        let p = ConvGruParams::<f64>::zeros(2, 3, 3, 1, &[3]);
        for h in convgru_forward(&x, &p, UpdateRule::Standard).unwrap() {
            assert!(h.data().iter().all(|&v| v == 0.0));
        }
        for h in convgru_backward_direction(&x, &p, UpdateRule::Standard).unwrap() {
            assert!(h.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_params_literal_halves_input() {
        let x = clip(3, 2, 4, 2);
        let p = ConvGruParams::<f64>::zeros(2, 2, 3, 1, &[2]);
        let hs = convgru_forward(&x, &p, UpdateRule::PaperLiteral).unwrap();
        for (t, h) in hs.iter().enumerate() {
            let expect = x.index0(t).unwrap().map(|v| 0.5 * v);
            assert_eq!(h, &expect);
        }
    }

    #[test]
    fn literal_rule_rejects_channel_change() {
        let x = clip(2, 2, 4, 3);
        let p = ConvGruParams::<f64>::zeros(2, 3, 3, 1, &[3]);
        assert!(matches!(
            convgru_forward(&x, &p, UpdateRule::PaperLiteral),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn spatial_bias_is_accepted() {
        let x = clip(2, 1, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ConvGruParams::<f64>::init(1, 2, 3, 1, &[2, 4, 4], &mut rng);
        assert_eq!(convgru_forward(&x, &p, UpdateRule::Standard).unwrap().len(), 2);
        let bad = ConvGruParams::<f64>::init(1, 2, 3, 1, &[2, 3, 3], &mut rng);
        assert!(convgru_forward(&x, &bad, UpdateRule::Standard).is_err());
    }

    #[test]
    fn fusion_of_constant_sequence() {
        let m = Tensor::<f64>::from_fn(&[3, 2, 2], |i| i as f64 - 4.0);
        let seq = HiddenSequence::new(vec![m.clone(); 5], None).unwrap();
        let last = fuse(&seq, FusionMethod::LastFlat).unwrap();
        let mean = fuse(&seq, FusionMethod::MeanFlat).unwrap();
        assert_eq!(last, mean);
        assert_eq!(fuse(&seq, FusionMethod::LastAvg).unwrap().shape(), &[3]);
        assert_eq!(fuse(&seq, FusionMethod::Flat).unwrap().shape(), &[5, 12]);
    }

    #[test]
    fn fusion_single_frame() {
        let m = Tensor::<f64>::from_fn(&[2, 3, 3], |i| (i as f64).sin());
        let seq = HiddenSequence::new(vec![m.clone()], None).unwrap();
        let flat = m.reshape(&[18]).unwrap();
        assert_eq!(fuse(&seq, FusionMethod::LastFlat).unwrap(), flat);
        assert_eq!(fuse(&seq, FusionMethod::MeanFlat).unwrap(), flat);
    }

    #[test]
    fn bidirectional_fusion_uses_first_backward_map() {
        let a = Tensor::<f64>::full(&[1, 1, 1], 2.0);
        let b = Tensor::<f64>::full(&[1, 1, 1], 4.0);
        let c = Tensor::<f64>::full(&[1, 1, 1], 10.0);
        let seq = HiddenSequence::new(vec![a.clone(), b.clone()], Some(vec![c.clone(), a.clone()])).unwrap();
        // (ĥ_1 + h_T) / 2 = (10 + 4) / 2
        assert_eq!(fuse(&seq, FusionMethod::LastFlat).unwrap().data(), &[7.0]);
        // mean of (2+10)/2 and (4+2)/2
        assert_eq!(fuse(&seq, FusionMethod::MeanFlat).unwrap().data(), &[4.5]);
        assert_eq!(fuse(&seq, FusionMethod::Flat).unwrap().data(), &[6.0, 3.0]);
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(HiddenSequence::<f64>::new(vec![], None).is_err());
    }

    #[test]
    fn vector_gru_zero_params() {
        let p = VectorGruParams::<f64>::zeros(5, 3);
        let x = Tensor::from_fn(&[5], |i| i as f64);
        let h = gru_vector_step(&x, &Tensor::zeros(&[3]), &p).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(gru_vector_step(&Tensor::zeros(&[4]), &Tensor::zeros(&[3]), &p).is_err());
    }
}
