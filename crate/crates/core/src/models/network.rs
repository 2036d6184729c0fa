use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{plan, Architecture, Init, ModelConfig, ShapeTrace};
use crate::error::{Error, Result};
use crate::recurrent::{convgru_direction, fuse_vars, gru_vector_step_vars, Direction, GateVars};
use crate::scalar::Scalar;
use crate::tensor_core::{softmax, Graph, Padding, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// A built classifier: configuration, shape trace and parameters in
/// manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    trace: ShapeTrace,
    params: Vec<NamedTensor<T>>,
}

/// Handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// `(layer, [T, C, H, W] map)` for every map-producing layer, when
    /// requested.
    pub maps: Vec<(&'static str, Var)>,
}

/// Loss, logits and parameter gradients of one labelled clip.
#[derive(Clone, Debug)]
pub struct StepOutput<T> {
    pub loss: T,
    pub logits: Tensor<T>,
    pub grads: Vec<Tensor<T>>,
}

/// Consumes parameter handles in manifest order.
struct Cursor<'a> {
    vars: &'a [Var],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[Var]> {
        if self.at + n > self.vars.len() {
            return Err(Error::shape("fewer parameter handles than the architecture needs"));
        }
        let s = &self.vars[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
}

impl<T: Scalar> Model<T> {
    /// Builds the model with seeded random initialization.
    pub fn build(config: ModelConfig) -> Result<Self> {
        let (trace, specs) = plan(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = specs
            .into_iter()
            .map(|s| NamedTensor {
                value: match s.init {
                    Init::Zero => Tensor::zeros(&s.shape),
                    Init::Uniform(b) => Tensor::uniform(&s.shape, -b, b, &mut rng),
                },
                name: s.name,
            })
            .collect();
        Ok(Model { config, trace, params })
    }

    /// Builds the model with all parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let (trace, specs) = plan(&config)?;
        let params = specs
            .into_iter()
            .map(|s| NamedTensor {
                value: Tensor::zeros(&s.shape),
                name: s.name,
            })
            .collect();
        Ok(Model { config, trace, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn trace(&self) -> &ShapeTrace {
        &self.trace
    }

    pub fn params(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Same configuration and parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            trace: self.trace.clone(),
            params: self
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Puts every parameter on the tape (borrowed) in manifest order.
    pub fn register<'p>(&'p self, g: &mut Graph<'p, T>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(&p.value)).collect()
    }

    /// Expected clip shape for `frames` frames.
    pub fn clip_shape(&self, frames: usize) -> [usize; 4] {
        let c = &self.config;
        [frames, c.input_channels, c.input_size, c.input_size]
    }

    fn check_clip(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[0] == 0 || shape[1..] != self.clip_shape(1)[1..] {
            return Err(Error::shape(format!(
                "clip must be T x {} x {} x {}, got {shape:?}",
                self.config.input_channels, self.config.input_size, self.config.input_size
            )));
        }
        if self.config.architecture.single_frame() && shape[0] != 1 {
            return Err(Error::shape(format!(
                "the spatial baseline takes exactly one frame, got {}",
                shape[0]
            )));
        }
        Ok(())
    }

    /// Compares a realized shape with the trace; per-frame layers carry a
    /// leading frame axis.
    fn check_layer(&self, g: &Graph<'_, T>, v: Var, name: &str) -> Result<()> {
        let entry = self
            .trace
            .get(name)
            .ok_or_else(|| Error::shape(format!("layer {name} missing from the trace")))?;
        let got = g.shape(v);
        let realized = if entry.per_frame { &got[1..] } else { got };
        if realized != entry.shape.as_slice() {
            return Err(Error::shape(format!(
                "layer {name} produced {got:?}, trace predicts {:?}",
                entry.shape
            )));
        }
        Ok(())
    }

    fn conv_block(&self, g: &mut Graph<'_, T>, x: Var, p: &[Var], stride: usize, name: &str) -> Result<Var> {
        let y = g.conv2d(x, p[0], Some(p[1]), stride, Padding::Same)?;
        let y = g.leaky_relu(y, T::lit(self.config.leaky_alpha))?;
        self.check_layer(g, y, name)?;
        Ok(y)
    }

    fn dropout(&self, g: &mut Graph<'_, T>, x: Var, rng: &mut Option<&mut dyn RngCore>) -> Result<Var> {
        let keep = self.config.keep_prob();
        match rng {
            Some(r) if keep < 1.0 => g.dropout(x, keep, &mut **r),
            _ => Ok(x),
        }
    }

    /// ConvGRU layer over `[T, C, H, W]`; returns forward and (optional)
    /// reverse-time per-frame maps.
    fn convgru_layer(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        cur: &mut Cursor<'_>,
        bidirectional: bool,
        name: &str,
    ) -> Result<(Vec<Var>, Option<Vec<Var>>)> {
        let rule = self.config.update_rule;
        let fp = GateVars::from_slice(cur.take(9)?);
        let fwd = convgru_direction(g, x, &fp, rule, Direction::Forward)?;
        let bwd = if bidirectional {
            let bp = GateVars::from_slice(cur.take(9)?);
            Some(convgru_direction(g, x, &bp, rule, Direction::Backward)?)
        } else {
            None
        };
        for &m in fwd.iter().chain(bwd.iter().flatten()) {
            self.check_layer(g, m, name)?;
        }
        Ok((fwd, bwd))
    }

    /// Per-frame combined maps of a ConvGRU layer stacked to `[T, C, H, W]`.
    fn combined_maps(g: &mut Graph<'_, T>, fwd: &[Var], bwd: Option<&[Var]>) -> Result<Var> {
        let frames: Vec<Var> = match bwd {
            None => fwd.to_vec(),
            Some(b) => fwd
                .iter()
                .zip(b)
                .map(|(&f, &b)| {
                    let s = g.add(f, b)?;
                    g.scale(s, T::lit(0.5))
                })
                .collect::<Result<_>>()?,
        };
        g.concat(&frames, 0)
    }

    /// Forward pass on the tape with externally registered parameters.
    ///
    /// `rng` switches training mode on (dropout active). `collect_maps`
    /// additionally records every map-producing layer.
    pub fn forward_vars(
        &self,
        g: &mut Graph<'_, T>,
        clip: Var,
        params: &[Var],
        mut rng: Option<&mut dyn RngCore>,
        collect_maps: bool,
    ) -> Result<ForwardOutput> {
        if params.len() != self.params.len() {
            return Err(Error::shape(format!(
                "model has {} parameter tensors, got {} handles",
                self.params.len(),
                params.len()
            )));
        }
        self.check_clip(g.shape(clip))?;
        let cfg = &self.config;
        let arch = cfg.architecture;
        let steps = g.shape(clip)[0];
        let mut cur = Cursor { vars: params, at: 0 };
        let mut maps = Vec::new();
        let keep = |name: &'static str, v: Var, maps: &mut Vec<(&'static str, Var)>| {
            if collect_maps {
                maps.push((name, v));
            }
        };

        let x = self.conv_block(g, clip, cur.take(2)?, cfg.conv1_stride, "conv1")?;
        keep("conv1", x, &mut maps);
        let x = g.maxpool2d(x, 3, 2)?;
        self.check_layer(g, x, "pool1")?;
        keep("pool1", x, &mut maps);
        let x = self.conv_block(g, x, cur.take(2)?, 1, "conv2")?;
        keep("conv2", x, &mut maps);
        let x = g.maxpool2d(x, 3, 2)?;
        self.check_layer(g, x, "pool2")?;
        keep("pool2", x, &mut maps);
        let x = self.conv_block(g, x, cur.take(2)?, 1, "conv3")?;
        keep("conv3", x, &mut maps);

        let x = if arch.layer6_recurrent() {
            let (f, b) = self.convgru_layer(g, x, &mut cur, true, "layer6")?;
            Self::combined_maps(g, &f, b.as_deref())?
        } else {
            self.conv_block(g, x, cur.take(2)?, 1, "layer6")?
        };
        keep("layer6", x, &mut maps);

        let fused = match arch.layer7_recurrent() {
            Some(bi) => {
                let (f, b) = self.convgru_layer(g, x, &mut cur, bi, "layer7")?;
                if collect_maps {
                    let m = Self::combined_maps(g, &f, b.as_deref())?;
                    maps.push(("layer7", m));
                }
                fuse_vars(g, &f, b.as_deref(), cfg.fusion)?
            }
            None => {
                let y = self.conv_block(g, x, cur.take(2)?, 1, "layer7")?;
                keep("layer7", y, &mut maps);
                let width = g.value(y).len() / steps;
                if arch == Architecture::Spatial {
                    g.flatten(y)?
                } else {
                    g.reshape(y, &[steps, width])?
                }
            }
        };
        self.check_layer(g, fused, "fusion")?;

        let head = if arch == Architecture::GruAlexnet {
            let h9 = self.gru_layer(g, fused, cur.take(9)?, steps)?;
            self.check_layer(g, h9, "gru9")?;
            let h9 = self.dropout(g, h9, &mut rng)?;
            let h10 = self.gru_layer(g, h9, cur.take(9)?, steps)?;
            self.check_layer(g, h10, "gru10")?;
            self.dropout(g, h10, &mut rng)?
        } else {
            let alpha = T::lit(cfg.leaky_alpha);
            let p = cur.take(2)?;
            let h = g.dense(fused, p[0], Some(p[1]))?;
            let h = g.leaky_relu(h, alpha)?;
            self.check_layer(g, h, "fc9")?;
            let h = self.dropout(g, h, &mut rng)?;
            let p = cur.take(2)?;
            let h = g.dense(h, p[0], Some(p[1]))?;
            let h = g.leaky_relu(h, alpha)?;
            self.check_layer(g, h, "fc10")?;
            self.dropout(g, h, &mut rng)?
        };
        let per_frame = g.shape(head).len() == 2;
        let p = cur.take(2)?;
        // Per-frame features are averaged before the classifier.
        let logits = if per_frame && arch != Architecture::GruAlexnet {
            let h = g.mean_axis0(head)?;
            g.dense(h, p[0], Some(p[1]))?
        } else if per_frame {
            let l = g.dense(head, p[0], Some(p[1]))?;
            g.mean_axis0(l)?
        } else {
            g.dense(head, p[0], Some(p[1]))?
        };
        self.check_layer(g, logits, "logits")?;
        if cur.at != params.len() {
            return Err(Error::shape("unused parameter handles after the forward pass"));
        }
        Ok(ForwardOutput { logits, maps })
    }

    /// Flat GRU over the rows of `[T, D]`, returning `[T, H]`.
    fn gru_layer(&self, g: &mut Graph<'_, T>, seq: Var, p: &[Var], steps: usize) -> Result<Var> {
        let gv = GateVars::from_slice(p);
        let hidden = g.shape(gv.w_zx)[0];
        let width = g.shape(seq)[1];
        let mut h = g.constant(Tensor::zeros(&[hidden]));
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let row = g.narrow(seq, 0, t, 1)?;
            let x = g.reshape(row, &[width])?;
            h = gru_vector_step_vars(g, x, h, &gv)?;
            out.push(g.reshape(h, &[1, hidden])?);
        }
        g.concat(&out, 0)
    }

    /// Evaluation-mode logits of one clip.
    pub fn logits(&self, clip: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let params = self.register(&mut g);
        let x = g.constant(clip.clone());
        let out = self.forward_vars(&mut g, x, &params, None, false)?;
        Ok(g.value(out.logits).clone())
    }

    /// Evaluation-mode class probabilities of one clip.
    pub fn probabilities(&self, clip: &Tensor<T>) -> Result<Vec<T>> {
        Ok(softmax(self.logits(clip)?.data()))
    }

    /// Cross-entropy loss and parameter gradients for one labelled clip.
    /// Dropout is active when `rng` is given.
    pub fn loss_and_grads(
        &self,
        clip: &Tensor<T>,
        label: usize,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<StepOutput<T>> {
        let mut g = Graph::new();
        let params = self.register(&mut g);
        let x = g.constant(clip.clone());
        let out = self.forward_vars(&mut g, x, &params, rng, false)?;
        let loss = g.softmax_cross_entropy(out.logits, label)?;
        g.backward(loss)?;
        let grads = params.iter().map(|&p| g.grad_or_zeros(p)).collect();
        Ok(StepOutput {
            loss: g.value(loss).data()[0],
            logits: g.value(out.logits).clone(),
            grads,
        })
    }
}
