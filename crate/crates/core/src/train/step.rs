use web_time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{DualBatch, DenseMatrix, ParamGradients, Tape};
use crate::error::{Error, Result};
use crate::lfnet::{forward, init_siren_at_stage, Checkpoint, ProLiFNetwork, RngState, TrainState};
use crate::lfnet::{transition, transition_moments};
use crate::losses::{
    color_consistency_at_depths, color_consistency_with_grad, density_consistency_with_grad, jacobian_bundle, render_loss_with_grad,
    total_loss, JacobianBundle, JacobianPass, LossWeights,
};
use crate::rays::{point_batch, sample_regularization_rays, RayBatch, RayBounds, RayTwoPlane};
use crate::real::Real;
use crate::render::composite;
use crate::train::adam::{adam_step, AdamHyper, AdamState};
use crate::train::config::{lr_at, TrainConfig};

/// Training pixels as two-plane rays with their colors.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub rays: Vec<RayTwoPlane>,
    pub colors: Vec<[f64; 3]>,
    pub bounds: RayBounds,
}

impl TrainingSet {
    pub fn new(rays: Vec<RayTwoPlane>, colors: Vec<[f64; 3]>, bounds_expand: f64) -> Result<Self> {
        if rays.len() != colors.len() {
            return Err(Error::dim("TrainingSet colors", rays.len(), colors.len()));
        }
        let bounds = RayBounds::from_rays(&rays, bounds_expand)?;
        Ok(Self { rays, colors, bounds })
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub render: f64,
    pub density: f64,
    pub color: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// Completed steps after this update.
    pub step: u64,
    pub stage: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub rays_per_sec: f64,
}

pub(crate) fn map_shards<R: Send>(n: usize, parallel: bool, f: impl Fn(usize) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    #[cfg(feature = "parallel")]
    if parallel && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

fn shard_ranges(n: usize, shard: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(shard)).map(|i| (i * shard, ((i + 1) * shard).min(n))).collect()
}

fn reduce<T: Real>(net: &ProLiFNetwork<T>, parts: Vec<ParamGradients<T>>) -> Result<ParamGradients<T>> {
    let mut total = net.zero_grads();
    for p in &parts {
        total.add_assign(p)?;
    }
    Ok(total)
}

/// Render loss and gradient over fit rays, reduced over shards in order.
fn fit_pass<T: Real>(
    net: &ProLiFNetwork<T>,
    rays: &[RayTwoPlane],
    targets: &[[f64; 3]],
    shard: usize,
    parallel: bool,
    with_grad: bool,
) -> Result<(f64, Option<ParamGradients<T>>)> {
    let n = rays.len();
    let ranges = shard_ranges(n, shard);
    let parts = map_shards(ranges.len(), parallel, |i| {
        let (a, b) = ranges[i];
        let mut tape = if with_grad { Tape::new() } else { Tape::inference() };
        let coords = tape.input(point_batch::<T>(&rays[a..b], &net.grid, &[])?)?;
        let samples = forward(net, coords, &mut tape)?;
        let out = composite(&samples, &net.grid, &mut tape)?;
        let (loss, grad) = render_loss_with_grad(tape.value(out.color)?.primal(), &targets[a..b])?;
        let scale = (b - a) as f64 / n as f64;
        if !with_grad {
            return Ok((loss * scale, None));
        }
        let seed = grad.into_iter().map(|g| g * T::lit(scale)).collect();
        let seed = DualBatch::constant(DenseMatrix::from_vec(b - a, 3, seed)?);
        let mut grads = net.zero_grads();
        tape.reverse(vec![(out.color, seed)], &mut grads)?;
        Ok((loss * scale, Some(grads)))
    })?;
    let loss = parts.iter().map(|p| p.0).sum();
    let grads = if with_grad {
        Some(reduce(net, parts.into_iter().map(|p| p.1.unwrap()).collect())?)
    } else {
        None
    };
    Ok((loss, grads))
}

/// Both consistency penalties and their weighted gradient.
fn regularization_pass<T: Real>(
    net: &ProLiFNetwork<T>,
    rays: &RayBatch,
    weights: &LossWeights,
    shard: usize,
    parallel: bool,
    with_grad: bool,
    frozen_depths: Option<&[f64]>,
) -> Result<(f64, f64, Option<ParamGradients<T>>)> {
    if let Some(d) = frozen_depths {
        if d.len() != rays.len() {
            return Err(Error::dim("frozen depths", rays.len(), d.len()));
        }
    }
    let n = rays.len();
    let ranges = shard_ranges(n, shard);
    let tapes: Vec<(Tape<T>, JacobianPass)> = map_shards(ranges.len(), parallel, |i| {
        let (a, b) = ranges[i];
        let mut tape = Tape::new();
        let part = RayBatch::regularization(rays.rays[a..b].to_vec());
        let pass = jacobian_bundle(net, &part, &mut tape)?;
        Ok((tape, pass))
    })?;
    let kept_per: Vec<usize> = tapes
        .iter()
        .map(|(tape, pass)| {
            let b = JacobianBundle::from_tape(tape, pass)?;
            Ok((0..b.num_rays()).filter(|&r| b.acc(r).f64() >= weights.acc_threshold).count())
        })
        .collect::<Result<_>>()?;
    let kept: usize = kept_per.iter().sum();
    let grid = net.grid.clone();
    let work: Vec<_> = tapes.into_iter().zip(ranges.iter().copied().zip(kept_per)).collect();
    let run = |((mut tape, pass), ((a, b), k)): ((Tape<T>, JacobianPass), ((usize, usize), usize))| -> Result<(f64, f64, Option<ParamGradients<T>>)> {
        let bundle = JacobianBundle::from_tape(&tape, &pass)?;
        let (d, mut d_adj) = density_consistency_with_grad(&bundle, &grid)?;
        let (c, mut c_adj) = match frozen_depths {
            Some(depths) => color_consistency_at_depths(&bundle, weights, &depths[a..b])?,
            None => color_consistency_with_grad(&bundle, weights)?,
        };
        let ds = (b - a) as f64 / n as f64;
        let cs = if kept == 0 { 0.0 } else { k as f64 / kept as f64 };
        if !with_grad {
            return Ok((d * ds, c * cs, None));
        }
        d_adj.stacked_mut().scale(T::lit(weights.lambda_density * ds));
        c_adj.stacked_mut().scale(T::lit(weights.lambda_color * cs));
        let mut seeds = Vec::with_capacity(2);
        if weights.lambda_density != 0.0 {
            seeds.push((pass.samples.sigma, d_adj));
        }
        if weights.lambda_color != 0.0 && k > 0 {
            seeds.push((pass.render.color, c_adj));
        }
        let mut grads = net.zero_grads();
        tape.reverse(seeds, &mut grads)?;
        Ok((d * ds, c * cs, Some(grads)))
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<_> = if parallel && work.len() > 1 {
        use rayon::prelude::*;
        work.into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        work.into_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<_> = work.into_iter().map(run).collect::<Result<_>>()?;
    let density = parts.iter().map(|p| p.0).sum();
    let color = parts.iter().map(|p| p.1).sum();
    let grads = if with_grad {
        Some(reduce(net, parts.into_iter().map(|p| p.2.unwrap()).collect())?)
    } else {
        None
    };
    Ok((density, color, grads))
}

fn needs_regularization(weights: &LossWeights) -> bool {
    weights.lambda_density != 0.0 || weights.lambda_color != 0.0
}

/// Total loss on fixed batches and its gradient with respect to every
/// parameter.
pub fn loss_and_grad<T: Real>(
    net: &ProLiFNetwork<T>,
    fit: &RayBatch,
    reg: &RayBatch,
    weights: &LossWeights,
    shard: usize,
    parallel: bool,
) -> Result<(LossBreakdown, ParamGradients<T>)> {
    let targets = fit.targets.as_ref().ok_or_else(|| Error::InvalidConfig("fit batch needs targets".into()))?;
    let (render, g_fit) = fit_pass(net, &fit.rays, targets, shard, parallel, true)?;
    let mut grads = g_fit.unwrap();
    let (mut density, mut color) = (0.0, 0.0);
    if needs_regularization(weights) && !reg.is_empty() {
        let (d, c, g) = regularization_pass(net, reg, weights, shard, parallel, true, None)?;
        grads.add_assign(&g.unwrap())?;
        density = d;
        color = c;
    }
    let total = total_loss(render, density, color, weights)?;
    Ok((LossBreakdown { render, density, color, total }, grads))
}

/// Expected depth of every regularization ray.
pub fn regularization_depths<T: Real>(net: &ProLiFNetwork<T>, reg: &RayBatch) -> Result<Vec<f64>> {
    let mut tape = Tape::inference();
    let coords = tape.input(point_batch::<T>(&reg.rays, &net.grid, &[])?)?;
    let samples = forward(net, coords, &mut tape)?;
    let out = composite(&samples, &net.grid, &mut tape)?;
    Ok(tape.value(out.geom)?.primal().chunks(2).map(|g| g[1].f64()).collect())
}

/// Total loss without gradients. The color penalty treats expected depth
/// as a constant; pass `frozen_depths` to evaluate it at fixed depths, which
/// is the function whose gradient [`loss_and_grad`] returns.
pub fn loss_value<T: Real>(
    net: &ProLiFNetwork<T>,
    fit: &RayBatch,
    reg: &RayBatch,
    weights: &LossWeights,
    frozen_depths: Option<&[f64]>,
) -> Result<LossBreakdown> {
    let targets = fit.targets.as_ref().ok_or_else(|| Error::InvalidConfig("fit batch needs targets".into()))?;
    let shard = fit.len().max(reg.len()).max(1);
    let (render, _) = fit_pass(net, &fit.rays, targets, shard, false, false)?;
    let (mut density, mut color) = (0.0, 0.0);
    if needs_regularization(weights) && !reg.is_empty() {
        let (d, c, _) = regularization_pass(net, reg, weights, shard, false, false, frozen_depths)?;
        density = d;
        color = c;
    }
    let total = total_loss(render, density, color, weights)?;
    Ok(LossBreakdown { render, density, color, total })
}

/// Network, optimizer and sampler state of a training run.
pub struct Trainer<T: Real> {
    pub cfg: TrainConfig,
    pub net: ProLiFNetwork<T>,
    pub adam: AdamState<T>,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = init_siren_at_stage(&cfg.stage, cfg.init_stage, cfg.seed)?;
        let adam = AdamState::new(&net);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self { cfg, net, adam, step: 0, rng })
    }

    pub fn from_checkpoint(cfg: TrainConfig, ck: Checkpoint<T>) -> Result<Self> {
        cfg.validate()?;
        let state = ck
            .state
            .ok_or_else(|| Error::InvalidConfig("checkpoint carries no training state".into()))?;
        if ck.net.config != cfg.stage {
            return Err(Error::InvalidConfig("checkpoint network geometry differs from the config".into()));
        }
        Ok(Self {
            cfg,
            net: ck.net,
            adam: state.adam,
            step: state.step,
            rng: state.rng.restore(),
        })
    }

    pub fn state(&self) -> TrainState<T> {
        TrainState {
            step: self.step,
            adam: self.adam.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.cfg.adam_beta1,
            beta2: self.cfg.adam_beta2,
            eps: self.cfg.adam_eps,
        }
    }

    /// Moves network and moments to the next stage.
    pub fn advance_stage(&mut self) -> Result<()> {
        let next = transition(&self.net)?;
        let m = transition_moments(&self.net, &self.adam.m)?;
        let v = transition_moments(&self.net, &self.adam.v)?;
        self.net = next;
        self.adam.m = m;
        self.adam.v = v;
        Ok(())
    }

    /// Draws the step's batches: fit pixels with replacement, then
    /// regularization rays.
    pub fn sample_batches(&mut self, data: &TrainingSet) -> Result<(RayBatch, RayBatch)> {
        if data.is_empty() {
            return Err(Error::InvalidConfig("empty training set".into()));
        }
        let mut rays = Vec::with_capacity(self.cfg.fit_batch);
        let mut targets = Vec::with_capacity(self.cfg.fit_batch);
        for _ in 0..self.cfg.fit_batch {
            let i = self.rng.random_range(0..data.len());
            rays.push(data.rays[i]);
            targets.push(data.colors[i]);
        }
        let fit = RayBatch::fit(rays, targets)?;
        let reg = if needs_regularization(&self.cfg.loss) {
            sample_regularization_rays(&data.bounds, self.cfg.reg_batch, &mut self.rng)
        } else {
            RayBatch::regularization(Vec::new())
        };
        Ok((fit, reg))
    }
}

/// One optimization step. Parameters stay untouched when the loss or a
/// gradient is non-finite.
pub fn train_step<T: Real>(trainer: &mut Trainer<T>, data: &TrainingSet) -> Result<StepMetrics> {
    let start = Instant::now();
    let lr = lr_at(trainer.step, &trainer.cfg);
    let (fit, reg) = trainer.sample_batches(data)?;
    let parallel = !trainer.cfg.deterministic;
    let (loss, grads) = loss_and_grad(&trainer.net, &fit, &reg, &trainer.cfg.loss, trainer.cfg.shard_size, parallel)?;
    let hp = trainer.hyper();
    adam_step(&mut trainer.net, &grads, &mut trainer.adam, lr, &hp)?;
    trainer.step += 1;
    let secs = start.elapsed().as_secs_f64().max(1e-9);
    Ok(StepMetrics {
        step: trainer.step,
        stage: trainer.net.stage,
        lr,
        loss,
        rays_per_sec: (fit.len() + reg.len()) as f64 / secs,
    })
}
