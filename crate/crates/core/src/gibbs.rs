//! Gibbs samplers for the multi-source factorization model, with and
//! without an outcome: conjugate conditional updates for every factor
//! block, the regression block for a continuous or probit-linked binary
//! outcome, in-sampler multiple imputation of missing data entries and
//! outcomes, and chain collection.
//!
//! All row-wise conditionals are multivariate normal with a shared
//! precision per block, so each block factorizes its precision once per
//! sweep and draws rows independently. Sources are assumed scaled to unit
//! error variance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MultiOmicDataset, OutcomeKind, OutcomeSpec};
use crate::error::{Error, Result};
use crate::linalg::factor_product;
use crate::scalar::Real;
use crate::solver::{ModeDecomposition, PenaltySpec, RankSpec};
use crate::stats::{
    inverse_gamma_logpdf, norm_logpdf, sample_inverse_gamma, sample_truncated_normal_lower,
    sample_truncated_normal_upper, PrecisionSampler,
};

/// Which outcome model a chain was run with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Factorization,
    ContinuousOutcome,
    BinaryOutcome,
}

impl ModelKind {
    pub fn for_outcome<T: Real>(outcome: Option<&OutcomeSpec<T>>) -> Self {
        match outcome.map(|o| o.kind) {
            None => ModelKind::Factorization,
            Some(OutcomeKind::Continuous) => ModelKind::ContinuousOutcome,
            Some(OutcomeKind::Binary) => ModelKind::BinaryOutcome,
        }
    }
}

/// Fixed prior hyperparameters tying the Bayesian model to the convex
/// objective: factor rows get mean-zero normal priors with variances
/// `lambda_inv_*`, the regression coefficients get variance `alpha0_sq`
/// (intercept) and `alpha_sq` (factors), and the outcome noise variance an
/// Inverse-Gamma(shape, scale) prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec<T: Real> {
    pub lambda_inv_joint: T,
    pub lambda_inv_indiv: Vec<T>,
    pub alpha0_sq: T,
    pub alpha_sq: T,
    pub shape: T,
    pub scale: T,
}

impl<T: Real> PriorSpec<T> {
    /// Defaults derived from the nuclear-norm penalties: prior variances are
    /// the reciprocals of the penalties, so the posterior mode of the
    /// factorization matches the convex solution. Regression defaults:
    /// intercept variance 1000^2, coefficient variance 1, Inverse-Gamma(1, 1).
    pub fn from_penalties(penalties: &PenaltySpec<T>) -> Self {
        Self {
            lambda_inv_joint: T::one() / penalties.joint,
            lambda_inv_indiv: penalties.indiv.iter().map(|&l| T::one() / l).collect(),
            alpha0_sq: T::approx(1_000_000.0),
            alpha_sq: T::one(),
            shape: T::one(),
            scale: T::one(),
        }
    }

    /// Unit-variance factor priors with intercept variance 10: the
    /// configuration matched to the prior-draw generators in the
    /// calibration studies.
    pub fn unit_variance(q: usize) -> Self {
        Self {
            lambda_inv_joint: T::one(),
            lambda_inv_indiv: vec![T::one(); q],
            alpha0_sq: T::approx(10.0),
            alpha_sq: T::one(),
            shape: T::one(),
            scale: T::one(),
        }
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        if self.lambda_inv_indiv.len() != q {
            return Err(Error::dims(format!(
                "{} individual prior variances for {q} sources",
                self.lambda_inv_indiv.len()
            )));
        }
        let all = [
            self.lambda_inv_joint,
            self.alpha0_sq,
            self.alpha_sq,
            self.shape,
            self.scale,
        ];
        // The negated comparison also rejects NaN.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if all
            .iter()
            .chain(self.lambda_inv_indiv.iter())
            .any(|&v| !(v > T::zero()))
        {
            return Err(Error::invalid("prior hyperparameters must be positive"));
        }
        Ok(())
    }

    /// Diagonal of the coefficient prior covariance for the given ranks:
    /// intercept first, then one entry per joint and individual factor.
    pub fn beta_prior_diag(&self, ranks: &RankSpec) -> DVector<T> {
        let k = ranks.coefficient_len();
        let mut d = DVector::from_element(k, self.alpha_sq);
        d[0] = self.alpha0_sq;
        d
    }
}

/// One full set of factorization and regression parameters, plus the
/// current imputations for missing data entries and outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionState<T: Real> {
    /// Shared joint scores V (n x r).
    pub joint_scores: DMatrix<T>,
    /// Joint loadings U_s (p_s x r).
    pub joint_loadings: Vec<DMatrix<T>>,
    /// Individual scores V_s (n x r_s).
    pub indiv_scores: Vec<DMatrix<T>>,
    /// Individual loadings W_s (p_s x r_s).
    pub indiv_loadings: Vec<DMatrix<T>>,
    /// Regression coefficients (intercept first), when an outcome is modeled.
    pub coefficients: Option<DVector<T>>,
    /// Outcome noise variance, continuous outcomes only.
    pub noise_var: Option<T>,
    /// Latent probit variables, binary outcomes only.
    pub latent: Option<DVector<T>>,
    /// Current imputed values at each source's masked indices (parallel to
    /// the mask's sorted index list).
    pub imputed_x: Vec<Vec<T>>,
    /// Current imputed outcomes (parallel to the outcome's missing list).
    pub imputed_y: Vec<T>,
}

impl<T: Real> DecompositionState<T> {
    /// Initial state holding the mode factors, with empty regression and
    /// imputation blocks to be filled by the sampler.
    pub fn from_mode(mode: &ModeDecomposition<T>) -> Self {
        Self {
            joint_scores: mode.joint_scores.clone(),
            joint_loadings: mode.joint_loadings.clone(),
            indiv_scores: mode.indiv_scores.clone(),
            indiv_loadings: mode.indiv_loadings.clone(),
            coefficients: None,
            noise_var: None,
            latent: None,
            imputed_x: Vec::new(),
            imputed_y: Vec::new(),
        }
    }

    pub fn ranks(&self) -> RankSpec {
        RankSpec {
            joint: self.joint_scores.ncols(),
            indiv: self.indiv_scores.iter().map(|v| v.ncols()).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.joint_scores.nrows()
    }

    pub fn q(&self) -> usize {
        self.joint_loadings.len()
    }

    /// Joint structure J_s = U_s V^T of one source.
    pub fn joint_structure(&self, s: usize) -> DMatrix<T> {
        factor_product(&self.joint_loadings[s], &self.joint_scores)
    }

    /// Individual structure A_s = W_s V_s^T of one source.
    pub fn indiv_structure(&self, s: usize) -> DMatrix<T> {
        factor_product(&self.indiv_loadings[s], &self.indiv_scores[s])
    }

    /// Design matrix [1 | V | V_1 | ... | V_q] (n x (1 + r + sum r_s)).
    pub fn design_matrix(&self) -> DMatrix<T> {
        let n = self.n();
        let ranks = self.ranks();
        let k = ranks.coefficient_len();
        let mut d = DMatrix::zeros(n, k);
        for i in 0..n {
            d[(i, 0)] = T::one();
        }
        let mut col = 1;
        d.view_mut((0, col), (n, ranks.joint))
            .copy_from(&self.joint_scores);
        col += ranks.joint;
        for v in &self.indiv_scores {
            d.view_mut((0, col), (n, v.ncols())).copy_from(v);
            col += v.ncols();
        }
        d
    }

    /// Slice of the coefficients belonging to the joint factors.
    pub fn beta_joint(&self) -> DVector<T> {
        let beta = self.coefficients.as_ref().expect("coefficients present");
        let r = self.joint_scores.ncols();
        beta.rows(1, r).into_owned()
    }

    /// Slice of the coefficients belonging to source `s`'s factors.
    pub fn beta_indiv(&self, s: usize) -> DVector<T> {
        let beta = self.coefficients.as_ref().expect("coefficients present");
        let mut offset = 1 + self.joint_scores.ncols();
        for t in 0..s {
            offset += self.indiv_scores[t].ncols();
        }
        beta.rows(offset, self.indiv_scores[s].ncols()).into_owned()
    }

    /// Linear predictor V* beta.
    pub fn linear_predictor(&self) -> DVector<T> {
        let beta = self.coefficients.as_ref().expect("coefficients present");
        self.design_matrix() * beta
    }
}

/// Chain-level metadata carried with the posterior samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta<T: Real> {
    pub model: ModelKind,
    pub ranks: RankSpec,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub dims: Vec<usize>,
    pub n: usize,
    pub priors: PriorSpec<T>,
}

/// An ordered posterior chain: one state per iteration, the log-joint
/// trace, and run metadata.
#[derive(Debug, Clone)]
pub struct PosteriorSamples<T: Real> {
    pub states: Vec<DecompositionState<T>>,
    pub log_joint: Vec<T>,
    pub meta: ChainMeta<T>,
}

impl<T: Real> PosteriorSamples<T> {
    /// States after burn-in.
    pub fn retained(&self) -> &[DecompositionState<T>] {
        &self.states[self.meta.burn_in..]
    }
}

/// Iteration plan for one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::invalid(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Gibbs sampler over one dataset/outcome pair. Holds working copies of the
/// data and outcome with the current imputations filled in.
pub struct GibbsSampler<'a, T: Real> {
    data: &'a MultiOmicDataset<T>,
    outcome: Option<&'a OutcomeSpec<T>>,
    priors: PriorSpec<T>,
    x_work: Vec<DMatrix<T>>,
    y_work: DVector<T>,
}

impl<'a, T: Real> GibbsSampler<'a, T> {
    pub fn new(
        data: &'a MultiOmicDataset<T>,
        outcome: Option<&'a OutcomeSpec<T>>,
        priors: PriorSpec<T>,
    ) -> Result<Self> {
        priors.validate(data.q())?;
        if let Some(o) = outcome {
            if o.len() != data.n() {
                return Err(Error::dims(format!(
                    "outcome has {} values for {} samples",
                    o.len(),
                    data.n()
                )));
            }
        }
        let x_work = (0..data.q()).map(|s| data.zero_filled(s)).collect();
        let y_work = match outcome {
            Some(o) => {
                let mut y = o.values().clone();
                for &i in o.missing() {
                    y[i] = T::zero();
                }
                y
            }
            None => DVector::zeros(0),
        };
        Ok(Self {
            data,
            outcome,
            priors,
            x_work,
            y_work,
        })
    }

    pub fn model_kind(&self) -> ModelKind {
        ModelKind::for_outcome(self.outcome)
    }

    /// Builds the initial state: factors at the mode, coefficients and
    /// noise variance simulated from their priors, latent probit variables
    /// from their conditional, and every missing entry imputed once.
    pub fn init_state<R: Rng + ?Sized>(
        &mut self,
        mode: &ModeDecomposition<T>,
        rng: &mut R,
    ) -> Result<DecompositionState<T>> {
        let mut state = DecompositionState::from_mode(mode);
        let ranks = state.ranks();
        if self.outcome.is_some() {
            if ranks.coefficient_len() == 1 {
                log::warn!("all ranks are zero: the outcome model reduces to an intercept");
            }
            let diag = self.priors.beta_prior_diag(&ranks);
            let beta = DVector::from_fn(diag.len(), |k, _| {
                T::sample_standard_normal(rng) * diag[k].sqrt()
            });
            state.coefficients = Some(beta);
            match self.outcome.map(|o| o.kind) {
                Some(OutcomeKind::Continuous) => {
                    state.noise_var =
                        Some(sample_inverse_gamma(rng, self.priors.shape, self.priors.scale));
                }
                Some(OutcomeKind::Binary) => {
                    state.latent = Some(DVector::zeros(self.data.n()));
                    self.update_latent(&mut state, rng)?;
                }
                None => unreachable!(),
            }
        }
        state.imputed_x = (0..self.data.q())
            .map(|s| vec![T::zero(); self.data.mask(s).len()])
            .collect();
        state.imputed_y = vec![T::zero(); self.outcome.map_or(0, |o| o.n_missing())];
        self.impute_entries(&mut state, rng);
        self.impute_outcome(&mut state, rng);
        Ok(state)
    }

    /// The outcome target vector seen by the factor conditionals (y for a
    /// continuous outcome, z for binary) and the inverse noise variance
    /// (1/tau^2, or 1 for binary).
    fn outcome_target(&self, state: &DecompositionState<T>) -> Option<(DVector<T>, T)> {
        match self.outcome.map(|o| o.kind) {
            None => None,
            Some(OutcomeKind::Continuous) => {
                let tau_sq = state.noise_var.expect("noise variance present");
                Some((self.y_work.clone(), T::one() / tau_sq))
            }
            Some(OutcomeKind::Binary) => {
                let z = state.latent.as_ref().expect("latent present").clone();
                Some((z, T::one()))
            }
        }
    }

    /// Precision and per-row linear terms for the joint-score block: row i
    /// of V is normal with precision `U'U + bj bj'/tau^2 + I/lambda_inv`
    /// and linear term `U'(X - W V_s')[., i] + bj (target - rest)_i/tau^2`.
    pub fn joint_score_params(
        &self,
        state: &DecompositionState<T>,
    ) -> Option<(DMatrix<T>, Vec<DVector<T>>)> {
        let r = state.joint_scores.ncols();
        if r == 0 {
            return None;
        }
        let n = self.data.n();
        let mut prec = DMatrix::zeros(r, r);
        let mut base = DMatrix::zeros(r, n);
        for s in 0..self.data.q() {
            let u = &state.joint_loadings[s];
            prec += u.transpose() * u;
            let resid = &self.x_work[s] - state.indiv_structure(s);
            base += u.transpose() * resid;
        }
        let mut outcome_term: Option<(DVector<T>, DVector<T>, T)> = None;
        if let Some((target, inv_var)) = self.outcome_target(state) {
            let beta_j = state.beta_joint();
            prec += &beta_j * beta_j.transpose() * inv_var;
            // Outcome residual excluding the joint contribution.
            let beta = state.coefficients.as_ref().expect("coefficients present");
            let mut rest = DVector::from_element(n, beta[0]);
            for s in 0..self.data.q() {
                if state.indiv_scores[s].ncols() > 0 {
                    rest += &state.indiv_scores[s] * state.beta_indiv(s);
                }
            }
            outcome_term = Some((beta_j, target - rest, inv_var));
        }
        for k in 0..r {
            prec[(k, k)] += T::one() / self.priors.lambda_inv_joint;
        }
        let linears = (0..n)
            .map(|i| {
                let mut b = base.column(i).into_owned();
                if let Some((beta_j, resid, inv_var)) = &outcome_term {
                    b += beta_j * (resid[i] * *inv_var);
                }
                b
            })
            .collect();
        Some((prec, linears))
    }

    /// Draws every row of the joint scores V from its conditional.
    pub fn update_joint_scores<R: Rng + ?Sized>(
        &self,
        state: &mut DecompositionState<T>,
        rng: &mut R,
    ) -> Result<()> {
        let Some((prec, linears)) = self.joint_score_params(state) else {
            return Ok(());
        };
        let sampler = PrecisionSampler::new(prec)?;
        for (i, b) in linears.iter().enumerate() {
            let row = sampler.draw(rng, b);
            state.joint_scores.set_row(i, &row.transpose());
        }
        Ok(())
    }

    /// Precision and per-row linear terms for source `s`'s joint loadings:
    /// row j of U_s is normal with precision `V'V + I/lambda_inv` and
    /// linear term `V'(X_s - W_s V_s')[j, .]`.
    pub fn joint_loading_params(
        &self,
        state: &DecompositionState<T>,
        s: usize,
    ) -> Option<(DMatrix<T>, Vec<DVector<T>>)> {
        let r = state.joint_scores.ncols();
        if r == 0 {
            return None;
        }
        let v = &state.joint_scores;
        let mut prec = v.transpose() * v;
        for k in 0..r {
            prec[(k, k)] += T::one() / self.priors.lambda_inv_joint;
        }
        let resid = &self.x_work[s] - state.indiv_structure(s);
        let base = resid * v; // p_s x r
        let linears = (0..base.nrows())
            .map(|j| base.row(j).transpose())
            .collect();
        Some((prec, linears))
    }

    pub fn update_joint_loadings<R: Rng + ?Sized>(
        &self,
        state: &mut DecompositionState<T>,
        rng: &mut R,
    ) -> Result<()> {
        for s in 0..self.data.q() {
            let Some((prec, linears)) = self.joint_loading_params(state, s) else {
                return Ok(());
            };
            let sampler = PrecisionSampler::new(prec)?;
            for (j, b) in linears.iter().enumerate() {
                let row = sampler.draw(rng, b);
                state.joint_loadings[s].set_row(j, &row.transpose());
            }
        }
        Ok(())
    }

    /// Precision and per-row linear terms for source `s`'s individual
    /// scores: row i of V_s is normal with precision
    /// `W'W + bs bs'/tau^2 + I/lambda_inv_s` and linear term
    /// `W'(X_s - U_s V')[., i] + bs (target - rest)_i/tau^2`, where `rest`
    /// sums every outcome contribution except source `s`'s own.
    pub fn indiv_score_params(
        &self,
        state: &DecompositionState<T>,
        s: usize,
    ) -> Option<(DMatrix<T>, Vec<DVector<T>>)> {
        let r_s = state.indiv_scores[s].ncols();
        if r_s == 0 {
            return None;
        }
        let n = self.data.n();
        let w = &state.indiv_loadings[s];
        let mut prec = w.transpose() * w;
        let resid = &self.x_work[s] - state.joint_structure(s);
        let base = w.transpose() * resid; // r_s x n
        let mut outcome_term: Option<(DVector<T>, DVector<T>, T)> = None;
        if let Some((target, inv_var)) = self.outcome_target(state) {
            let beta_s = state.beta_indiv(s);
            prec += &beta_s * beta_s.transpose() * inv_var;
            let fitted = state.linear_predictor();
            let own = &state.indiv_scores[s] * &beta_s;
            outcome_term = Some((beta_s, target - (fitted - own), inv_var));
        }
        for k in 0..r_s {
            prec[(k, k)] += T::one() / self.priors.lambda_inv_indiv[s];
        }
        let linears = (0..n)
            .map(|i| {
                let mut b = base.column(i).into_owned();
                if let Some((beta_s, resid_y, inv_var)) = &outcome_term {
                    b += beta_s * (resid_y[i] * *inv_var);
                }
                b
            })
            .collect();
        Some((prec, linears))
    }

    pub fn update_indiv_scores<R: Rng + ?Sized>(
        &self,
        state: &mut DecompositionState<T>,
        rng: &mut R,
    ) -> Result<()> {
        for s in 0..self.data.q() {
            let Some((prec, linears)) = self.indiv_score_params(state, s) else {
                continue;
            };
            let sampler = PrecisionSampler::new(prec)?;
            for (i, b) in linears.iter().enumerate() {
                let row = sampler.draw(rng, b);
                state.indiv_scores[s].set_row(i, &row.transpose());
            }
        }
        Ok(())
    }

    /// Precision and per-row linear terms for source `s`'s individual
    /// loadings: row j of W_s is normal with precision
    /// `V_s'V_s + I/lambda_inv_s` and linear term `V_s'(X_s - U_s V')[j, .]`.
    pub fn indiv_loading_params(
        &self,
        state: &DecompositionState<T>,
        s: usize,
    ) -> Option<(DMatrix<T>, Vec<DVector<T>>)> {
        let r_s = state.indiv_scores[s].ncols();
        if r_s == 0 {
            return None;
        }
        let v = &state.indiv_scores[s];
        let mut prec = v.transpose() * v;
        for k in 0..r_s {
            prec[(k, k)] += T::one() / self.priors.lambda_inv_indiv[s];
        }
        let resid = &self.x_work[s] - state.joint_structure(s);
        let base = resid * v; // p_s x r_s
        let linears = (0..base.nrows())
            .map(|j| base.row(j).transpose())
            .collect();
        Some((prec, linears))
    }

    pub fn update_indiv_loadings<R: Rng + ?Sized>(
        &self,
        state: &mut DecompositionState<T>,
        rng: &mut R,
    ) -> Result<()> {
        for s in 0..self.data.q() {
            let Some((prec, linears)) = self.indiv_loading_params(state, s) else {
                continue;
            };
            let sampler = PrecisionSampler::new(prec)?;
            for (j, b) in linears.iter().enumerate() {
                let row = sampler.draw(rng, b);
                state.indiv_loadings[s].set_row(j, &row.transpose());
            }
        }
        Ok(())
    }

    /// Precision and linear term for the regression block:
    /// `V*'V*/tau^2 + Sigma_beta^-1` and `V*'target/tau^2` (binary
    /// outcomes use the latent variables with unit variance).
    pub fn regression_params(
        &self,
        state: &DecompositionState<T>,
    ) -> Option<(DMatrix<T>, DVector<T>)> {
        let (target, inv_var) = self.outcome_target(state)?;
        let design = state.design_matrix();
        let mut prec = design.transpose() * &design * inv_var;
        let diag = self.priors.beta_prior_diag(&state.ranks());
        for k in 0..diag.len() {
            prec[(k, k)] += T::one() / diag[k];
        }
        let linear = design.transpose() * target * inv_var;
        Some((prec, linear))
    }

    pub fn update_coefficients<R: Rng + ?Sized>(
        &self,
        state: &mut DecompositionState<T>,
        rng: &mut R,
    ) -> Result<()> {
        let Some((prec, linear)) = self.regression_params(state) else {
            return Ok(());
        };
        let sampler = PrecisionSampler::new(prec)?;
        state.coefficients = Some(sampler.draw(rng, &linear));
        Ok(())
    }

    /// Shape and scale of the outcome-noise conditional:
    /// Inverse-Gamma(a + n/2, b + residual sum of squares / 2).
    pub fn noise_var_params(&self, state: &DecompositionState<T>) -> Option<(T, T)> {
        match self.outcome.map(|o| o.kind) {
            Some(OutcomeKind::Continuous) => {
                let resid = &self.y_work - state.linear_predictor();
                let half = T::approx(0.5);
                let n = T::from_usize(self.data.n()).expect("n fits");
                Some((
                    self.priors.shape + half * n,
                    self.priors.scale + half * resid.norm_squared(),
                ))
            }
            _ => None,
        }
    }

    pub fn update_noise_var<R: Rng + ?Sized>(
        &self,
        state: &mut DecompositionState<T>,
        rng: &mut R,
    ) -> Result<()> {
        if let Some((shape, scale)) = self.noise_var_params(state) {
            state.noise_var = Some(sample_inverse_gamma(rng, shape, scale));
        }
        Ok(())
    }

    /// Draws the latent probit variables: z_i ~ Normal(V*[i]beta, 1)
    /// truncated positive where y_i = 1, negative where y_i = 0, and
    /// untruncated where y_i is missing.
    pub fn update_latent<R: Rng + ?Sized>(
        &self,
        state: &mut DecompositionState<T>,
        rng: &mut R,
    ) -> Result<()> {
        let Some(outcome) = self.outcome else {
            return Ok(());
        };
        if outcome.kind != OutcomeKind::Binary {
            return Ok(());
        }
        let mean = state.linear_predictor();
        let z = state.latent.as_mut().expect("latent present");
        for i in 0..mean.len() {
            z[i] = if outcome.is_missing(i) {
                mean[i] + T::sample_standard_normal(rng)
            } else if outcome.values()[i] == T::one() {
                sample_truncated_normal_lower(rng, mean[i], T::one(), T::zero())
            } else {
                sample_truncated_normal_upper(rng, mean[i], T::one(), T::zero())
            };
        }
        Ok(())
    }

    /// Refreshes every masked data entry from its posterior predictive:
    /// structure value plus unit-variance noise. Observed entries are never
    /// touched.
    pub fn impute_entries<R: Rng + ?Sized>(
        &mut self,
        state: &mut DecompositionState<T>,
        rng: &mut R,
    ) {
        for s in 0..self.data.q() {
            let u = &state.joint_loadings[s];
            let v = &state.joint_scores;
            let w = &state.indiv_loadings[s];
            let vs = &state.indiv_scores[s];
            for (k, &(j, i)) in self.data.mask(s).indices().iter().enumerate() {
                let mut structure = T::zero();
                for c in 0..u.ncols() {
                    structure += u[(j, c)] * v[(i, c)];
                }
                for c in 0..w.ncols() {
                    structure += w[(j, c)] * vs[(i, c)];
                }
                let value = structure + T::sample_standard_normal(rng);
                self.x_work[s][(j, i)] = value;
                state.imputed_x[s][k] = value;
            }
        }
    }

    /// Refreshes every missing outcome from its posterior predictive:
    /// V*[i]beta plus Normal(0, tau^2) noise for continuous outcomes, the
    /// indicator of the latent variable's sign for binary ones.
    pub fn impute_outcome<R: Rng + ?Sized>(
        &mut self,
        state: &mut DecompositionState<T>,
        rng: &mut R,
    ) {
        let Some(outcome) = self.outcome else {
            return;
        };
        if outcome.n_missing() == 0 {
            return;
        }
        match outcome.kind {
            OutcomeKind::Continuous => {
                let mean = state.linear_predictor();
                let sd = state.noise_var.expect("noise variance present").sqrt();
                for (k, &i) in outcome.missing().iter().enumerate() {
                    let value = mean[i] + sd * T::sample_standard_normal(rng);
                    self.y_work[i] = value;
                    state.imputed_y[k] = value;
                }
            }
            OutcomeKind::Binary => {
                let z = state.latent.as_ref().expect("latent present");
                for (k, &i) in outcome.missing().iter().enumerate() {
                    let value = if z[i] > T::zero() { T::one() } else { T::zero() };
                    self.y_work[i] = value;
                    state.imputed_y[k] = value;
                }
            }
        }
    }

    /// One full Gibbs sweep: joint scores, joint loadings, individual
    /// scores, individual loadings, regression coefficients, outcome noise
    /// variance, latent probit block, then the imputations.
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        state: &mut DecompositionState<T>,
        rng: &mut R,
    ) -> Result<()> {
        self.update_joint_scores(state, rng)?;
        self.update_joint_loadings(state, rng)?;
        self.update_indiv_scores(state, rng)?;
        self.update_indiv_loadings(state, rng)?;
        self.update_coefficients(state, rng)?;
        self.update_noise_var(state, rng)?;
        self.update_latent(state, rng)?;
        self.impute_entries(state, rng);
        self.impute_outcome(state, rng);
        if let Some(o) = self.outcome {
            if o.kind == OutcomeKind::Binary {
                let z = state.latent.as_ref().expect("latent present");
                for i in 0..o.len() {
                    if o.is_missing(i) {
                        continue;
                    }
                    if (z[i] > T::zero()) != (o.values()[i] == T::one()) {
                        return Err(Error::numerical(format!(
                            "latent probit sign disagrees with the outcome at sample {i}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Log joint density at the given state; see [`log_joint`].
    pub fn log_joint(&self, state: &DecompositionState<T>) -> T {
        log_joint(self.data, self.outcome, &self.priors, state)
    }
}

/// Log joint density of the model at a state: Gaussian data likelihood over
/// all entries (current imputations standing in at masked positions), the
/// factor priors, and — when an outcome is modeled — the outcome
/// likelihood, the coefficient prior, and the Inverse-Gamma prior on the
/// noise variance. Binary outcomes contribute the augmented likelihood of
/// the latent probit variables.
pub fn log_joint<T: Real>(
    data: &MultiOmicDataset<T>,
    outcome: Option<&OutcomeSpec<T>>,
    priors: &PriorSpec<T>,
    state: &DecompositionState<T>,
) -> T {
    let mut ll = T::zero();
    for s in 0..data.q() {
        let structure = state.joint_structure(s) + state.indiv_structure(s);
        let x = data.source(s);
        for i in 0..data.n() {
            for j in 0..x.nrows() {
                if !data.mask(s).contains(j, i) {
                    ll += norm_logpdf(x[(j, i)], structure[(j, i)], T::one());
                }
            }
        }
        for (k, &(j, i)) in data.mask(s).indices().iter().enumerate() {
            ll += norm_logpdf(state.imputed_x[s][k], structure[(j, i)], T::one());
        }
    }

    let prior_block = |m: &DMatrix<T>, var: T| -> T {
        m.iter()
            .fold(T::zero(), |acc, &x| acc + norm_logpdf(x, T::zero(), var))
    };
    ll += prior_block(&state.joint_scores, priors.lambda_inv_joint);
    for s in 0..data.q() {
        ll += prior_block(&state.joint_loadings[s], priors.lambda_inv_joint);
        ll += prior_block(&state.indiv_scores[s], priors.lambda_inv_indiv[s]);
        ll += prior_block(&state.indiv_loadings[s], priors.lambda_inv_indiv[s]);
    }

    if let Some(o) = outcome {
        let beta = state.coefficients.as_ref().expect("coefficients present");
        let mean = state.design_matrix() * beta;
        match o.kind {
            OutcomeKind::Continuous => {
                let tau_sq = state.noise_var.expect("noise variance present");
                let mut miss_idx = 0;
                for i in 0..o.len() {
                    let y = if o.is_missing(i) {
                        let v = state.imputed_y[miss_idx];
                        miss_idx += 1;
                        v
                    } else {
                        o.values()[i]
                    };
                    ll += norm_logpdf(y, mean[i], tau_sq);
                }
                ll += inverse_gamma_logpdf(tau_sq, priors.shape, priors.scale);
            }
            OutcomeKind::Binary => {
                let z = state.latent.as_ref().expect("latent present");
                for i in 0..o.len() {
                    ll += norm_logpdf(z[i], mean[i], T::one());
                }
            }
        }
        let diag = priors.beta_prior_diag(&state.ranks());
        for k in 0..beta.len() {
            ll += norm_logpdf(beta[k], T::zero(), diag[k]);
        }
    }
    ll
}

/// Runs a chain, handing every post-sweep state (and its log-joint value)
/// to the observer; the index is the 0-based iteration number. The chain
/// uses a single seeded counter-based stream.
pub fn run_sampler_observed<T, F>(
    data: &MultiOmicDataset<T>,
    outcome: Option<&OutcomeSpec<T>>,
    mode: &ModeDecomposition<T>,
    priors: &PriorSpec<T>,
    config: &SamplerConfig,
    mut observe: F,
) -> Result<()>
where
    T: Real,
    F: FnMut(usize, &DecompositionState<T>, T),
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = GibbsSampler::new(data, outcome, priors.clone())?;
    let mut state = sampler.init_state(mode, &mut rng)?;
    for iter in 0..config.iterations {
        sampler.sweep(&mut state, &mut rng)?;
        let lj = sampler.log_joint(&state);
        if !lj.is_finite() {
            return Err(Error::numerical(format!(
                "log joint became non-finite at iteration {iter}"
            )));
        }
        observe(iter, &state, lj);
    }
    Ok(())
}

/// Runs a chain and collects every state into a [`PosteriorSamples`].
pub fn run_sampler<T: Real>(
    data: &MultiOmicDataset<T>,
    outcome: Option<&OutcomeSpec<T>>,
    mode: &ModeDecomposition<T>,
    priors: &PriorSpec<T>,
    config: &SamplerConfig,
) -> Result<PosteriorSamples<T>> {
    let mut states = Vec::with_capacity(config.iterations);
    let mut log_joint = Vec::with_capacity(config.iterations);
    run_sampler_observed(data, outcome, mode, priors, config, |_, state, lj| {
        states.push(state.clone());
        log_joint.push(lj);
    })?;
    let meta = ChainMeta {
        model: ModelKind::for_outcome(outcome),
        ranks: mode.ranks.clone(),
        iterations: config.iterations,
        burn_in: config.burn_in,
        seed: config.seed,
        dims: data.dims(),
        n: data.n(),
        priors: priors.clone(),
    };
    Ok(PosteriorSamples {
        states,
        log_joint,
        meta,
    })
}
