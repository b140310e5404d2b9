//! Inversion from a measured full wavefield by minimising the discrete PDE
//! residual, with one self-adaptive penalty weight per node.
//!
//! The residual at node `i` and step `n` is the mismatch of the explicit update
//! `u^{n+1} − 2u^n + u^{n−1} − Σ_s w_is·(u_j − u_i)^n − Δt²f_i^n/(ρ0γ_i)` with
//! `w_is = 2C_s²γ_j/(γ_i+γ_j)`. It is the density-weighted operator divided
//! by `γ_iρ0/Δt²`, so lowering `γ` everywhere does not shrink it.

use std::time::Instant;

use rayon::prelude::*;

use super::{clip_gradient, AdamState, EpochRecord, Reference, TrainConfig, TrainingHistory};
use crate::ansatz::GeneratorNetwork;
use crate::error::{FwiError, Result};
use crate::fields::{field_mse, Grid, MaterialModel, ScalarField, TimeAxis};
use crate::forward::{sine_burst, SourceSpec, Stencil, WavefieldHistory};

/// Measured wavefields of every shot plus the setup that produced them.
#[derive(Debug, Clone)]
pub struct CollocationProblem {
    pub grid: Grid,
    pub material: MaterialModel,
    pub time: TimeAxis,
    pub sources: Vec<SourceSpec>,
    /// one full history per source
    pub wavefields: Vec<WavefieldHistory>,
    pub truth: Option<ScalarField>,
}

/// Nonnegative multiplier per collocation node.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights(ScalarField);

impl PenaltyWeights {
    pub fn ones(grid: &Grid) -> Self {
        Self(ScalarField::constant(grid, 1.0))
    }

    pub fn field(&self) -> &ScalarField {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    /// Plain gradient ascent `λ_i ← λ_i + rate·∂ℒ/∂λ_i`.
    pub fn ascend(&mut self, rate: f64, grad: &[f64]) {
        for (l, g) in self.0.values_mut().iter_mut().zip(grad) {
            *l += rate * g;
        }
    }
}

/// Update-stencil residuals of the measured wavefields, evaluated for any
/// indicator.
#[derive(Debug, Clone)]
pub struct StencilResidual {
    stencil: Stencil,
    wavefields: Vec<WavefieldHistory>,
    /// `(node, Δt²ψ(t_n)/(ρ0‖dx‖²))` per source and step
    forcing: Vec<(usize, Vec<f64>)>,
    courant_sq: Vec<f64>,
    inv_scale: f64,
    points: usize,
}

impl StencilResidual {
    /// Residuals are divided by the largest measured amplitude so the loss
    /// is dimensionless.
    pub fn new(problem: &CollocationProblem) -> Result<Self> {
        let grid = &problem.grid;
        if problem.wavefields.len() != problem.sources.len() || problem.sources.is_empty() {
            return Err(FwiError::ShapeMismatch(format!(
                "{} sources but {} wavefields",
                problem.sources.len(),
                problem.wavefields.len()
            )));
        }
        for w in &problem.wavefields {
            if !w.grid().same_shape(grid) || w.time() != problem.time {
                return Err(FwiError::ShapeMismatch("wavefield layout differs from the problem".into()));
            }
        }
        problem.time.check_cfl(grid, problem.material.c0)?;
        let stencil = Stencil::new(grid);
        let dt = problem.time.dt;
        let courant_sq = (0..stencil.slots())
            .map(|s| {
                let c = problem.material.c0 * dt / grid.spacing()[s / 2];
                c * c
            })
            .collect();
        let scale = problem
            .wavefields
            .iter()
            .flat_map(|w| w.snapshots().iter().flatten())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let factor = dt * dt / problem.material.rho0 / grid.spacing_norm_sq();
        let forcing = problem
            .sources
            .iter()
            .map(|src| {
                let node = src.node(grid)?;
                let f = (0..=problem.time.n_steps)
                    .map(|n| factor * sine_burst(problem.time.time(n), src))
                    .collect();
                Ok((node, f))
            })
            .collect::<Result<Vec<_>>>()?;
        let n_steps = problem.time.n_steps;
        Ok(Self {
            stencil,
            wavefields: problem.wavefields.clone(),
            forcing,
            courant_sq,
            inv_scale: if scale > 0.0 { 1.0 / scale } else { 1.0 },
            points: grid.len() * n_steps.saturating_sub(1) * problem.sources.len(),
        })
    }

    /// Number of space-time collocation points `N` over all shots.
    pub fn points(&self) -> usize {
        self.points
    }

    /// Time-summed squared residual at node `i`, and the derivatives of half
    /// of it with respect to `γ_i` and to each neighbour's `γ_j`.
    fn node_terms(&self, gamma: &[f64], i: usize, with_grad: bool) -> (f64, f64, Vec<f64>) {
        let nbrs = self.stencil.neighbors(i);
        let gi = gamma[i];
        let weights: Vec<f64> = nbrs
            .iter()
            .zip(&self.courant_sq)
            .map(|(&j, c2)| 2.0 * c2 * gamma[j] / (gi + gamma[j]))
            .collect();
        let (mut q, mut d_gi) = (0.0, 0.0);
        let mut d_gj = vec![0.0; nbrs.len()];
        for (hist, (src_node, forcing)) in self.wavefields.iter().zip(&self.forcing) {
            for n in 1..hist.time().n_steps {
                let (prev, curr, next) = (hist.snapshot(n - 1), hist.snapshot(n), hist.snapshot(n + 1));
                let ui = curr[i];
                let mut r = next[i] - 2.0 * ui + prev[i];
                for (w, &j) in weights.iter().zip(nbrs) {
                    r -= w * (curr[j] - ui);
                }
                let force = if i == *src_node { forcing[n] } else { 0.0 };
                r -= force / gi;
                r *= self.inv_scale;
                q += r * r;
                if with_grad {
                    // ∂w_s/∂γ_i = −w_s/(γ_i+γ_j), ∂w_s/∂γ_j = w_s·γ_i/(γ_j(γ_i+γ_j))
                    let rs = r * self.inv_scale;
                    for (s, (w, &j)) in weights.iter().zip(nbrs).enumerate() {
                        let du = curr[j] - ui;
                        let gj = gamma[j];
                        d_gi += rs * du * w / (gi + gj);
                        d_gj[s] -= rs * du * w * gi / (gj * (gi + gj));
                    }
                    d_gi += rs * force / (gi * gi);
                }
            }
        }
        (q, d_gi, d_gj)
    }

    /// Time-summed squared residual at every node.
    pub fn node_residuals(&self, gamma: &ScalarField) -> Vec<f64> {
        let g = gamma.values();
        (0..g.len())
            .into_par_iter()
            .map(|i| self.node_terms(g, i, false).0)
            .collect()
    }

    /// `ℒ = (1/2N) Σ λ_i r_i²` over all collocation points, its nodal
    /// γ-gradient and the per-node `∂ℒ/∂λ_i`.
    pub fn loss_and_gradient(&self, gamma: &ScalarField, weights: &PenaltyWeights) -> (f64, Vec<f64>, Vec<f64>) {
        let g = gamma.values();
        let lam = weights.values();
        let norm = 1.0 / self.points as f64;
        let terms: Vec<(f64, f64, Vec<f64>)> = (0..g.len())
            .into_par_iter()
            .map(|i| self.node_terms(g, i, true))
            .collect();
        let mut grad = vec![0.0; g.len()];
        let mut dlam = vec![0.0; g.len()];
        let mut loss = 0.0;
        for (i, (q, d_gi, d_gj)) in terms.into_iter().enumerate() {
            dlam[i] = 0.5 * norm * q;
            loss += lam[i] * dlam[i];
            let w = lam[i] * norm;
            grad[i] += w * d_gi;
            for (&j, d) in self.stencil.neighbors(i).iter().zip(&d_gj) {
                grad[j] += w * d;
            }
        }
        (loss, grad, dlam)
    }
}

/// Overrides the boundary ring with intact material.
pub fn pin_boundary(gamma: &mut ScalarField) {
    let grid = gamma.grid().clone();
    for (i, v) in gamma.values_mut().iter_mut().enumerate() {
        if grid.is_boundary(i) {
            *v = 1.0;
        }
    }
}

#[derive(Debug, Clone)]
pub struct CollocationInversion {
    pub network: GeneratorNetwork,
    pub history: TrainingHistory,
    pub field: ScalarField,
    pub weights: PenaltyWeights,
    /// time-summed squared residual per node at the first epoch
    pub initial_residual: ScalarField,
    /// time-summed squared residual per node, summed over all epochs; the
    /// penalty weights grow by `lr_penalty/(2N)` times this
    pub accumulated_residual: ScalarField,
    pub divergence: Option<String>,
}

pub fn full_domain_pinn_invert(problem: &CollocationProblem, cfg: &TrainConfig) -> Result<CollocationInversion> {
    cfg.validate()?;
    let grid = &problem.grid;
    let residual = StencilResidual::new(problem)?;
    let mut net = GeneratorNetwork::glorot_init(cfg.network_for(grid, problem.material.eps), cfg.seed)?;
    let mut weights = PenaltyWeights::ones(grid);
    let ones = ScalarField::constant(grid, 1.0);
    let reference = Reference {
        loss: residual.loss_and_gradient(&ones, &weights).0,
        mse: match &problem.truth {
            Some(t) => Some(field_mse(&ones, t)?),
            None => None,
        },
    };
    let mut adam = AdamState::new(net.param_count());
    let mut history = TrainingHistory::default();
    let mut initial_residual = None;
    let mut accumulated = vec![0.0; grid.len()];
    let mut divergence = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (mut gamma, cache) = match net.forward(grid) {
            Ok(v) => v,
            Err(FwiError::Divergence(msg)) => {
                divergence = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        };
        pin_boundary(&mut gamma);
        let (loss, mut nodal, dlam) = residual.loss_and_gradient(&gamma, &weights);
        if !loss.is_finite() {
            divergence = Some(format!("non-finite collocation loss at epoch {epoch}"));
            break;
        }
        let points = residual.points() as f64;
        let node_res: Vec<f64> = dlam.iter().map(|d| 2.0 * points * d).collect();
        for (a, r) in accumulated.iter_mut().zip(&node_res) {
            *a += r;
        }
        if initial_residual.is_none() {
            initial_residual = Some(ScalarField::new(grid.clone(), node_res)?);
        }
        for (i, g) in nodal.iter_mut().enumerate() {
            if grid.is_boundary(i) {
                *g = 0.0;
            }
        }
        let mut grad = net.backward(&cache, &ScalarField::new(grid.clone(), nodal)?)?.into_values();
        let grad_norm = clip_gradient(&mut grad, cfg.clip);
        let lr = cfg.lr_at(epoch);
        let mse = reference.mse(&gamma, problem.truth.as_ref())?;
        adam.update(net.params_mut(), &grad, lr)?;
        weights.ascend(cfg.lr_penalty, &dlam);
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            cost: if reference.loss > 0.0 { loss / reference.loss } else { loss },
            mse,
            lr,
            grad_norm,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    let field = match net.forward(grid) {
        Ok((mut f, _)) => {
            pin_boundary(&mut f);
            f
        }
        Err(FwiError::Divergence(msg)) => {
            divergence.get_or_insert(msg);
            ScalarField::constant(grid, f64::NAN)
        }
        Err(e) => return Err(e),
    };
    let initial_residual = match initial_residual {
        Some(r) => r,
        None => ScalarField::zeros(grid),
    };
    Ok(CollocationInversion {
        network: net,
        history,
        field,
        weights,
        initial_residual,
        accumulated_residual: ScalarField::new(grid.clone(), accumulated)?,
        divergence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{run_forward, SensorArray};

    fn setup(truth: &ScalarField) -> CollocationProblem {
        let grid = truth.grid().clone();
        let material = MaterialModel::aluminium();
        let time = TimeAxis::new(0.4 * grid.spacing()[0] / material.c0, 40).unwrap();
        let sources = vec![SourceSpec::new(vec![6, 7], 1e12, 5e5, 2).unwrap()];
        let sensors = SensorArray::new(vec![vec![0, 0]]).unwrap();
        let wavefields = sources
            .iter()
            .map(|s| run_forward(truth, &material, time, s, &sensors, true).unwrap().0.unwrap())
            .collect();
        CollocationProblem {
            grid,
            material,
            time,
            sources,
            wavefields,
            truth: Some(truth.clone()),
        }
    }

    fn truth() -> ScalarField {
        let g = Grid::with_spacing(&[12, 8], &[1e-3, 1e-3], 1).unwrap();
        ScalarField::from_fn(&g, |c| if (4..7).contains(&c[0]) && (3..5).contains(&c[1]) { 0.3 } else { 1.0 })
    }

    #[test]
    fn true_indicator_has_vanishing_residual() {
        let t = truth();
        let p = setup(&t);
        let residual = StencilResidual::new(&p).unwrap();
        let w = PenaltyWeights::ones(&p.grid);
        let (loss_true, grad_true, _) = residual.loss_and_gradient(&t, &w);
        let (loss_one, grad_one, _) = residual.loss_and_gradient(&ScalarField::constant(&p.grid, 1.0), &w);
        assert!(loss_true <= 1e-20 * loss_one, "{loss_true} vs {loss_one}");
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(n(&grad_true) <= 1e-3 * n(&grad_one));
    }

    #[test]
    fn gradient_matches_difference_quotient() {
        let t = truth();
        let p = setup(&t);
        let residual = StencilResidual::new(&p).unwrap();
        let mut w = PenaltyWeights::ones(&p.grid);
        w.ascend(1.0, &(0..p.grid.len()).map(|i| (i % 5) as f64).collect::<Vec<_>>());
        let gamma = ScalarField::from_fn(&p.grid, |c| 0.6 + 0.03 * (c[0] + 2 * c[1]) as f64);
        let (_, grad, _) = residual.loss_and_gradient(&gamma, &w);
        let h = 1e-6;
        let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..p.grid.len() {
            let mut a = gamma.clone();
            a.values_mut()[i] += h;
            let mut b = gamma.clone();
            b.values_mut()[i] -= h;
            let fd = (residual.loss_and_gradient(&a, &w).0 - residual.loss_and_gradient(&b, &w).0) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * scale, "node {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn ascent_follows_squared_residual() {
        let t = truth();
        let p = setup(&t);
        let residual = StencilResidual::new(&p).unwrap();
        let mut w = PenaltyWeights::ones(&p.grid);
        let gamma = ScalarField::constant(&p.grid, 1.0);
        let (_, _, dlam) = residual.loss_and_gradient(&gamma, &w);
        let res = residual.node_residuals(&gamma);
        w.ascend(0.5, &dlam);
        for ((l, r), d) in w.values().iter().zip(&res).zip(&dlam) {
            assert!(*l >= 1.0);
            assert!((l - 1.0 - 0.5 * d).abs() < 1e-15);
            assert!((d * 2.0 * residual.points() as f64 - r).abs() <= 1e-12 * r.abs().max(1e-300));
        }
    }

    #[test]
    fn pinned_boundary_reads_one() {
        let mut f = ScalarField::constant(&truth().grid().clone(), 0.2);
        pin_boundary(&mut f);
        assert_eq!(f.get(&[0, 3]), Some(1.0));
        assert_eq!(f.get(&[5, 7]), Some(1.0));
        assert_eq!(f.get(&[5, 3]), Some(0.2));
    }
}
