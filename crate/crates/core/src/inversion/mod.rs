//! Optimisation drivers for the four inversion strategies and the
//! full-domain collocation inversion.

mod collocation;
mod metrics;
mod optim;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

pub use collocation::{
    full_domain_pinn_invert, pin_boundary, CollocationInversion, CollocationProblem, PenaltyWeights, StencilResidual,
};
pub use metrics::{gradient_norm, rank_correlation, sharpness_metric, Sharpness};
pub use optim::{clip_gradient, lr_schedule, AdamState};

use crate::adjoint::{adjoint_gradient, measurement_loss, Quadrature};
use crate::ansatz::{ConstantAnsatz, GeneratorNetwork, NetworkConfig};
use crate::error::{FwiError, Result};
use crate::fields::{field_mse, Grid, MaterialModel, ScalarField, TimeAxis};
use crate::forward::{run_forward, SensorArray, ShotRecord, SourceSpec};
use crate::reverse::backprop_through_solver;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// voxel coefficients, continuous-adjoint gradient
    AdjointConstant,
    /// generator network, gradient by differentiating through the solver
    BackpropNetwork,
    /// generator network, continuous-adjoint gradient chained into the network
    Hybrid,
    /// generator network fitted to the PDE residual of a measured full wavefield
    FullDomainPinn,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::AdjointConstant,
        Strategy::BackpropNetwork,
        Strategy::Hybrid,
        Strategy::FullDomainPinn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::AdjointConstant => "adjoint-constant",
            Strategy::BackpropNetwork => "backprop-nn",
            Strategy::Hybrid => "hybrid",
            Strategy::FullDomainPinn => "full-domain-pinn",
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Strategy::AdjointConstant => 6e-2,
            Strategy::BackpropNetwork => 2e-3,
            Strategy::Hybrid => 4e-3,
            Strategy::FullDomainPinn => 2e-3,
        }
    }

    pub fn uses_network(self) -> bool {
        !matches!(self, Strategy::AdjointConstant)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = FwiError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                FwiError::param(
                    "strategy",
                    format!("unknown strategy `{s}`; expected adjoint-constant, backprop-nn, hybrid or full-domain-pinn"),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// base learning rate `α_min`
    pub lr: f64,
    /// ascent rate `α_max` of the penalty weights (collocation only)
    pub lr_penalty: f64,
    /// exponent `a` of the polynomial decay
    pub decay_power: f64,
    /// rate `b` of the polynomial decay
    pub decay_rate: f64,
    /// global-norm clipping threshold
    pub clip: f64,
    pub epochs: usize,
    /// seed of the network initialisation and latent
    pub seed: u64,
    /// nodes per voxel for the constant Ansatz
    pub voxel: Option<Vec<usize>>,
    /// generator shape; derived from the grid when absent
    pub network: Option<NetworkConfig>,
}

impl TrainConfig {
    pub fn new(strategy: Strategy, epochs: usize) -> Self {
        Self {
            strategy,
            lr: strategy.default_lr(),
            lr_penalty: 2e-2,
            decay_power: -0.5,
            decay_rate: 0.2,
            clip: 1.0,
            epochs,
            seed: 0,
            voxel: None,
            network: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FwiError::param("train.lr", format!("must be positive, got {}", self.lr)));
        }
        if !(self.lr_penalty >= 0.0 && self.lr_penalty.is_finite()) {
            return Err(FwiError::param("train.lr_penalty", format!("must be ≥ 0, got {}", self.lr_penalty)));
        }
        if !(self.decay_power <= 0.0) {
            return Err(FwiError::param("train.decay_power", format!("must be ≤ 0, got {}", self.decay_power)));
        }
        if !(self.decay_rate >= 0.0) {
            return Err(FwiError::param("train.decay_rate", format!("must be ≥ 0, got {}", self.decay_rate)));
        }
        if !(self.clip > 0.0) {
            return Err(FwiError::param("train.clip", format!("must be positive, got {}", self.clip)));
        }
        if self.epochs == 0 {
            return Err(FwiError::param("train.epochs", "must be ≥ 1"));
        }
        if let Some(n) = &self.network {
            n.validate()?;
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self.lr, self.decay_power, self.decay_rate)
    }

    /// The configured generator, or the reference architectures for the
    /// reference grids, or a three-block generator sized to the grid.
    pub fn network_for(&self, grid: &Grid, eps: f64) -> NetworkConfig {
        if let Some(n) = &self.network {
            return n.clone();
        }
        let plate = NetworkConfig::plate_2d();
        let cube = NetworkConfig::volume_3d();
        if grid.dims() == plate.output_dims.as_slice() {
            NetworkConfig { eps, ..plate }
        } else if grid.dims() == cube.output_dims.as_slice() {
            NetworkConfig { eps, ..cube }
        } else {
            NetworkConfig::for_grid(grid.dims(), 32, vec![32, 16, 16], eps).with_pixel_norm(grid.ndim() == 3)
        }
    }
}

/// Trainable parameterisation of the indicator.
#[derive(Debug, Clone)]
pub enum AnsatzParams {
    Constant(ConstantAnsatz),
    Network(GeneratorNetwork),
}

impl AnsatzParams {
    pub fn field(&self, grid: &Grid) -> Result<ScalarField> {
        match self {
            AnsatzParams::Constant(a) => {
                if !a.grid().same_shape(grid) {
                    return Err(FwiError::GridMismatch("constant Ansatz built for another grid".into()));
                }
                Ok(a.eval())
            }
            AnsatzParams::Network(n) => Ok(n.forward(grid)?.0),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            AnsatzParams::Constant(a) => a.coeffs(),
            AnsatzParams::Network(n) => n.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            AnsatzParams::Constant(a) => a.coeffs_mut(),
            AnsatzParams::Network(n) => n.params_mut(),
        }
    }
}

/// Everything a measurement-based inversion needs.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Grid,
    pub material: MaterialModel,
    pub time: TimeAxis,
    pub sources: Vec<SourceSpec>,
    pub sensors: SensorArray,
    /// one record per source
    pub data: Vec<ShotRecord>,
    /// known indicator, used only for reporting the γ-MSE
    pub truth: Option<ScalarField>,
    pub quadrature: Quadrature,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(FwiError::param("sources", "at least one source is required"));
        }
        if self.data.len() != self.sources.len() {
            return Err(FwiError::ShapeMismatch(format!(
                "{} sources but {} data records",
                self.sources.len(),
                self.data.len()
            )));
        }
        for d in &self.data {
            if d.sensors() != &self.sensors || d.time() != self.time {
                return Err(FwiError::ShapeMismatch("data record layout differs from the problem".into()));
            }
        }
        if let Some(t) = &self.truth {
            if !t.grid().same_shape(&self.grid) {
                return Err(FwiError::GridMismatch("truth field grid differs".into()));
            }
        }
        self.time.check_cfl(&self.grid, self.material.c0)
    }

    /// Source-averaged loss at `gamma`.
    pub fn loss(&self, gamma: &ScalarField) -> Result<f64> {
        let losses = self
            .sources
            .par_iter()
            .zip(&self.data)
            .map(|(src, data)| {
                let (_, shot) = run_forward(gamma, &self.material, self.time, src, &self.sensors, false)?;
                measurement_loss(&shot, data, self.quadrature)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Source-averaged loss and nodal gradient by the chosen engine. Shots
    /// run concurrently and are reduced in source order.
    pub fn loss_and_gradient(&self, gamma: &ScalarField, engine: GradientEngine) -> Result<(f64, ScalarField)> {
        let shots = self
            .sources
            .par_iter()
            .zip(&self.data)
            .map(|(src, data)| {
                let args = (gamma, &self.material, self.time, src, &self.sensors, data, self.quadrature);
                match engine {
                    GradientEngine::ContinuousAdjoint => {
                        adjoint_gradient(args.0, args.1, args.2, args.3, args.4, args.5, args.6)
                    }
                    GradientEngine::DiscreteAdjoint => {
                        backprop_through_solver(args.0, args.1, args.2, args.3, args.4, args.5, args.6)
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let n = shots.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.grid.len()];
        for (l, g) in &shots {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g.values()) {
                *a += b;
            }
        }
        for g in &mut grad {
            *g /= n;
        }
        Ok((loss / n, ScalarField::new(self.grid.clone(), grad)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientEngine {
    ContinuousAdjoint,
    DiscreteAdjoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// loss divided by the loss of `γ ≡ 1`
    pub cost: f64,
    /// γ-MSE divided by the γ-MSE of `γ ≡ 1`; absent without a truth field
    pub mse: Option<f64>,
    pub lr: f64,
    /// gradient norm before clipping
    pub grad_norm: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone)]
pub struct Inversion {
    pub params: AnsatzParams,
    pub history: TrainingHistory,
    /// indicator after the last update
    pub field: ScalarField,
    /// set when training stopped on a non-finite value
    pub divergence: Option<String>,
}

/// Normalisers of the cost and the γ-MSE: their values at `γ ≡ 1`.
pub(crate) struct Reference {
    pub loss: f64,
    pub mse: Option<f64>,
}

impl Reference {
    fn cost(&self, loss: f64) -> f64 {
        if self.loss > 0.0 {
            loss / self.loss
        } else {
            loss
        }
    }

    pub(crate) fn mse(&self, gamma: &ScalarField, truth: Option<&ScalarField>) -> Result<Option<f64>> {
        match (truth, self.mse) {
            (Some(t), Some(r)) if r > 0.0 => Ok(Some(field_mse(gamma, t)? / r)),
            (Some(t), _) => Ok(Some(field_mse(gamma, t)?)),
            _ => Ok(None),
        }
    }
}

/// Initial parameters for a strategy: `γ ≡ 1` voxels or a Glorot network.
pub fn initial_params(problem: &Problem, cfg: &TrainConfig) -> Result<AnsatzParams> {
    let m = &problem.material;
    if cfg.strategy.uses_network() {
        let net = GeneratorNetwork::glorot_init(cfg.network_for(&problem.grid, m.eps), cfg.seed)?;
        Ok(AnsatzParams::Network(net))
    } else {
        let voxel = cfg.voxel.clone().unwrap_or_else(|| vec![1; problem.grid.ndim()]);
        Ok(AnsatzParams::Constant(ConstantAnsatz::uniform(
            &problem.grid,
            &voxel,
            1.0,
            m.eps,
            m.upper,
        )?))
    }
}

pub fn invert(problem: &Problem, cfg: &TrainConfig) -> Result<Inversion> {
    let init = initial_params(problem, cfg)?;
    invert_from(problem, cfg, init)
}

/// Runs `cfg.epochs` Adam epochs starting from `params`.
pub fn invert_from(problem: &Problem, cfg: &TrainConfig, mut params: AnsatzParams) -> Result<Inversion> {
    cfg.validate()?;
    problem.validate()?;
    let engine = match cfg.strategy {
        Strategy::AdjointConstant | Strategy::Hybrid => GradientEngine::ContinuousAdjoint,
        Strategy::BackpropNetwork => GradientEngine::DiscreteAdjoint,
        Strategy::FullDomainPinn => {
            return Err(FwiError::param(
                "strategy",
                "full-domain-pinn needs full wavefield data; use full_domain_pinn_invert",
            ))
        }
    };
    match (&params, cfg.strategy.uses_network()) {
        (AnsatzParams::Constant(_), false) | (AnsatzParams::Network(_), true) => {}
        _ => return Err(FwiError::param("strategy", "initial parameters do not fit the strategy")),
    }
    let ones = ScalarField::constant(&problem.grid, 1.0);
    let reference = Reference {
        loss: problem.loss(&ones)?,
        mse: match &problem.truth {
            Some(t) => Some(field_mse(&ones, t)?),
            None => None,
        },
    };
    let mut adam = AdamState::new(params.params().len());
    let mut history = TrainingHistory::default();
    let mut divergence = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (gamma, grad) = match epoch_gradient(problem, &params, engine) {
            Ok(v) => v,
            Err(FwiError::Divergence(msg)) => {
                divergence = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        };
        let (loss, mut grad) = grad;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            divergence = Some(format!("non-finite loss or gradient at epoch {epoch}"));
            break;
        }
        let grad_norm = clip_gradient(&mut grad, cfg.clip);
        let lr = cfg.lr_at(epoch);
        let mse = reference.mse(&gamma, problem.truth.as_ref())?;
        adam.update(params.params_mut(), &grad, lr)?;
        if let AnsatzParams::Constant(a) = &mut params {
            a.clip_coeffs();
        }
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            cost: reference.cost(loss),
            mse,
            lr,
            grad_norm,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    let field = match params.field(&problem.grid) {
        Ok(f) => f,
        Err(FwiError::Divergence(msg)) => {
            divergence.get_or_insert(msg);
            ScalarField::constant(&problem.grid, f64::NAN)
        }
        Err(e) => return Err(e),
    };
    Ok(Inversion {
        params,
        history,
        field,
        divergence,
    })
}

type EpochGradient = (ScalarField, (f64, Vec<f64>));

fn epoch_gradient(problem: &Problem, params: &AnsatzParams, engine: GradientEngine) -> Result<EpochGradient> {
    match params {
        AnsatzParams::Constant(a) => {
            let gamma = a.eval();
            let (loss, nodal) = problem.loss_and_gradient(&gamma, engine)?;
            let grad = a.chain_to_coeffs(&nodal)?;
            Ok((gamma, (loss, grad)))
        }
        AnsatzParams::Network(net) => {
            let (gamma, cache) = net.forward(&problem.grid)?;
            let (loss, nodal) = problem.loss_and_gradient(&gamma, engine)?;
            let grad = net.backward(&cache, &nodal)?.into_values();
            Ok((gamma, (loss, grad)))
        }
    }
}
