use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{
    activation_forward, linear_forward, ActivationKind, DenseMatrix, LayerParams, ParamGradients, ParamId, Tape,
    ValueId,
};
use crate::error::{Error, Result};
use crate::lfnet::config::{DepthGrid, StageConfig};
use crate::real::Real;

/// Input columns of one layer: hidden features first, then re-injected raw
/// coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub hidden_in: usize,
    pub raw_in: usize,
}

impl LayerLayout {
    pub fn width(self) -> usize {
        self.hidden_in + self.raw_in
    }
}

/// One subnetwork: sine layers followed by a linear head producing
/// `(sigma, r, g, b)` for each handled depth sample, interleaved per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SubnetworkParams<T> {
    pub layers: Vec<LayerParams<T>>,
    pub layout: Vec<LayerLayout>,
    pub samples: usize,
}

impl<T: Real> SubnetworkParams<T> {
    pub fn input_width(&self) -> usize {
        2 * self.samples
    }

    pub fn output_width(&self) -> usize {
        4 * self.samples
    }

    pub fn hidden_width(&self) -> usize {
        self.layers[0].out_dim()
    }

    fn check(&self) -> Result<()> {
        if self.layers.len() != self.layout.len() || self.layers.len() < 2 {
            return Err(Error::Stage("subnetwork layer/layout mismatch".into()));
        }
        let mut prev = 0;
        for (l, (layer, lay)) in self.layers.iter().zip(&self.layout).enumerate() {
            if layer.in_dim() != lay.width() || lay.hidden_in != prev {
                return Err(Error::dim("subnetwork layer chain", lay.width(), layer.in_dim()));
            }
            if lay.raw_in != 0 && lay.raw_in != self.input_width() {
                return Err(Error::dim("subnetwork raw input", self.input_width(), lay.raw_in));
            }
            if l == 0 && lay.hidden_in != 0 {
                return Err(Error::Stage("first layer must read raw input only".into()));
            }
            prev = layer.out_dim();
        }
        if prev != self.output_width() {
            return Err(Error::dim("subnetwork output width", self.output_width(), prev));
        }
        Ok(())
    }
}

/// The staged light field network.
#[derive(Clone, Debug, PartialEq)]
pub struct ProLiFNetwork<T> {
    pub config: StageConfig,
    pub stage: usize,
    pub grid: DepthGrid,
    pub subnets: Vec<SubnetworkParams<T>>,
}

/// Handles to the per-sample densities (`batch x D`) and colors
/// (`batch x 3D`, RGB interleaved per sample) on a tape.
#[derive(Clone, Copy, Debug)]
pub struct RadianceSamples {
    pub sigma: ValueId,
    pub color: ValueId,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect()
}

fn siren_layer<T: Real>(rng: &mut ChaCha8Rng, out: usize, inp: usize, first: bool, omega0: f64) -> Result<LayerParams<T>> {
    let fan_in = inp as f64;
    let bound = if first { 1.0 / fan_in } else { (6.0 / fan_in).sqrt() / omega0 };
    let w: Vec<T> = uniform_matrix(rng, out, inp, bound).into_iter().map(T::lit).collect();
    let bb = 1.0 / fan_in.sqrt();
    let b: Vec<T> = (0..out).map(|_| T::lit(rng.random_range(-bb..=bb))).collect();
    LayerParams::from_effective(DenseMatrix::from_vec(out, inp, w)?, b)
}

/// Layer layouts for a subnetwork of `width` handling `samples` depths.
pub(crate) fn subnet_layout(config: &StageConfig, width: usize, samples: usize) -> Vec<(LayerLayout, usize)> {
    let raw = 2 * samples;
    let mut out = Vec::with_capacity(config.hidden_depth + 1);
    for l in 0..config.hidden_depth {
        let lay = if l == 0 {
            LayerLayout { hidden_in: 0, raw_in: raw }
        } else if config.skip_enabled() && l == config.skip_layer {
            LayerLayout { hidden_in: width, raw_in: raw }
        } else {
            LayerLayout { hidden_in: width, raw_in: 0 }
        };
        out.push((lay, width));
    }
    out.push((LayerLayout { hidden_in: width, raw_in: 0 }, 4 * samples));
    out
}

/// SIREN-initialized network at stage 0.
pub fn init_siren<T: Real>(config: &StageConfig, seed: u64) -> Result<ProLiFNetwork<T>> {
    init_siren_at_stage(config, 0, seed)
}

/// SIREN-initialized network directly at `stage`, with dense subnetworks of
/// that stage's geometry (used to train without the progressive schedule).
pub fn init_siren_at_stage<T: Real>(config: &StageConfig, stage: usize, seed: u64) -> Result<ProLiFNetwork<T>> {
    config.validate()?;
    if stage >= config.num_stages {
        return Err(Error::InvalidConfig(format!("stage {stage} beyond num_stages {}", config.num_stages)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.subnets_at(stage);
    let width = config.width_at(stage);
    let depth = config.depth_samples_at(stage);
    let samples = depth / n;
    let mut subnets = Vec::with_capacity(n);
    for _ in 0..n {
        let plan = subnet_layout(config, width, samples);
        let mut layers = Vec::with_capacity(plan.len());
        let mut layout = Vec::with_capacity(plan.len());
        for (l, (lay, out)) in plan.into_iter().enumerate() {
            layers.push(siren_layer(&mut rng, out, lay.width(), l == 0, config.omega0)?);
            layout.push(lay);
        }
        subnets.push(SubnetworkParams { layers, layout, samples });
    }
    let net = ProLiFNetwork {
        config: config.clone(),
        stage,
        grid: DepthGrid::new(depth),
        subnets,
    };
    net.check()?;
    Ok(net)
}

impl<T: Real> ProLiFNetwork<T> {
    pub fn num_subnets(&self) -> usize {
        self.subnets.len()
    }

    pub fn depth_samples(&self) -> usize {
        self.grid.len()
    }

    pub fn samples_per_subnet(&self) -> usize {
        self.subnets.first().map_or(0, |s| s.samples)
    }

    pub fn hidden_width(&self) -> usize {
        self.subnets.first().map_or(0, |s| s.hidden_width())
    }

    pub fn input_width(&self) -> usize {
        2 * self.grid.len()
    }

    pub fn is_final_stage(&self) -> bool {
        self.stage + 1 >= self.config.num_stages
    }

    pub fn num_params(&self) -> usize {
        self.subnets.iter().flat_map(|s| &s.layers).map(|l| l.num_params()).sum()
    }

    /// Sum of hidden widths over subnetworks.
    pub fn total_hidden_width(&self) -> usize {
        self.subnets.iter().map(|s| s.hidden_width()).sum()
    }

    pub fn check(&self) -> Result<()> {
        let total: usize = self.subnets.iter().map(|s| s.samples).sum();
        if total != self.grid.len() {
            return Err(Error::Stage(format!(
                "subnetworks cover {total} samples but grid has {}",
                self.grid.len()
            )));
        }
        for s in &self.subnets {
            s.check()?;
        }
        Ok(())
    }

    pub fn layer_tensors(&self) -> Vec<Vec<LayerParams<T>>> {
        self.subnets.iter().map(|s| s.layers.clone()).collect()
    }

    pub fn zero_grads(&self) -> ParamGradients<T> {
        ParamGradients {
            subnets: self
                .subnets
                .iter()
                .map(|s| s.layers.iter().map(|l| LayerParams::zeros(l.out_dim(), l.in_dim())).collect())
                .collect(),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerParams<T>> {
        self.subnets.iter().flat_map(|s| s.layers.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams<T>> {
        self.subnets.iter_mut().flat_map(|s| s.layers.iter_mut())
    }

    /// Flat parameter values in [`ParamGradients::iter`] order.
    pub fn flat_params(&self) -> Vec<T> {
        self.layers()
            .flat_map(|l| l.v.data().iter().chain(&l.g).chain(&l.b).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::dim("set_flat_params", self.num_params(), values.len()));
        }
        let mut it = values.iter();
        for l in self.layers_mut() {
            for x in l.v.data_mut().iter_mut().chain(l.g.iter_mut()).chain(l.b.iter_mut()) {
                *x = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ProLiFNetwork<U> {
        ProLiFNetwork {
            config: self.config.clone(),
            stage: self.stage,
            grid: self.grid.clone(),
            subnets: self
                .subnets
                .iter()
                .map(|s| SubnetworkParams {
                    layers: s.layers.iter().map(|l| l.cast()).collect(),
                    layout: s.layout.clone(),
                    samples: s.samples,
                })
                .collect(),
        }
    }

    /// Peak floats held per ray (per channel) by an inference forward pass.
    pub fn inference_floats_per_ray(&self) -> usize {
        let s = &self.subnets[0];
        let w = s.hidden_width();
        let raw = s.input_width();
        let per_subnet_live = raw + 3 * w + raw + 2 * s.output_width();
        let outputs = 2 * 4 * self.grid.len();
        self.input_width() + per_subnet_live + outputs
    }
}

/// Runs every subnetwork on its slice of the point coordinates and applies
/// softplus to densities and sigmoid to colors.
pub fn forward<T: Real>(net: &ProLiFNetwork<T>, coords: ValueId, tape: &mut Tape<T>) -> Result<RadianceSamples> {
    let width = tape.value(coords)?.features();
    if width != net.input_width() {
        return Err(Error::dim("lfnet forward coordinates", net.input_width(), width));
    }
    let sine = ActivationKind::Sine { omega0: net.config.omega0 };
    let mut sigmas = Vec::with_capacity(net.subnets.len());
    let mut colors = Vec::with_capacity(net.subnets.len());
    let mut offset = 0;
    for (si, sub) in net.subnets.iter().enumerate() {
        let cols: Vec<usize> = (2 * offset..2 * (offset + sub.samples)).collect();
        offset += sub.samples;
        let raw = tape.gather_cols(coords, &cols)?;
        let last = sub.layers.len() - 1;
        let mut h: Option<ValueId> = None;
        let mut out = None;
        for (l, (layer, lay)) in sub.layers.iter().zip(&sub.layout).enumerate() {
            let input = match (h, lay.raw_in > 0) {
                (None, _) => raw,
                (Some(h), false) => h,
                (Some(hv), true) => {
                    let cat = tape.concat_cols(&[hv, raw])?;
                    tape.release(hv);
                    cat
                }
            };
            let z = linear_forward(layer, ParamId { subnet: si, layer: l }, input, tape)?;
            if input != raw {
                tape.release(input);
            }
            if l == last {
                out = Some(z);
            } else {
                let a = activation_forward(sine, z, tape)?;
                tape.release(z);
                h = Some(a);
            }
        }
        tape.release(raw);
        let out = out.expect("subnetwork has an output layer");
        let m = sub.samples;
        let sig_cols: Vec<usize> = (0..m).map(|i| 4 * i).collect();
        let col_cols: Vec<usize> = (0..m).flat_map(|i| [4 * i + 1, 4 * i + 2, 4 * i + 3]).collect();
        let s_raw = tape.gather_cols(out, &sig_cols)?;
        let c_raw = tape.gather_cols(out, &col_cols)?;
        tape.release(out);
        let s = activation_forward(ActivationKind::Softplus, s_raw, tape)?;
        tape.release(s_raw);
        let c = activation_forward(ActivationKind::Sigmoid, c_raw, tape)?;
        tape.release(c_raw);
        sigmas.push(s);
        colors.push(c);
    }
    let sigma = if sigmas.len() == 1 { sigmas[0] } else { tape.concat_cols(&sigmas)? };
    let color = if colors.len() == 1 { colors[0] } else { tape.concat_cols(&colors)? };
    if sigmas.len() > 1 {
        for id in sigmas.into_iter().chain(colors) {
            tape.release(id);
        }
    }
    Ok(RadianceSamples { sigma, color })
}
