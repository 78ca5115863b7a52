//! Convergence-theory constants and bound evaluators for the incremental
//! server-learning scheme, specialised to smooth non-convex objectives.
//!
//! Everything here works in f64: these are scalar summaries, not simulator
//! state. Symbols follow the analysis: `L` smoothness, `sigma^2` and
//! `sigma0^2` client/server gradient noise, `G^2` the mean client
//! dissimilarity bound, `xi^2` the server-client dissimilarity bound,
//! `rho_s` the sampling correction `(N-S)/(N-1)`.

use crate::error::{Error, Result};
use crate::fedsim::{FederationConfig, World};
use crate::model::LossModel;
use crate::param::ParamVector;

/// Problem and schedule constants the bounds are evaluated from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryConstants {
    /// Smoothness constant L.
    pub l: f64,
    /// Client stochastic-gradient variance bound.
    pub sigma_sq: f64,
    /// Server stochastic-gradient variance bound.
    pub sigma0_sq: f64,
    /// Bound on the mean squared client gradient dissimilarity.
    pub g_sq: f64,
    /// Bound on the squared server-client gradient dissimilarity.
    pub xi_sq: f64,
    pub gamma: f64,
    pub eta_g: f64,
    pub eta_l: f64,
    pub eta0: f64,
    /// Local steps K.
    pub k: usize,
    /// Server steps K0.
    pub k0: usize,
    /// Sampled clients S.
    pub s: usize,
    /// Total clients N.
    pub n: usize,
}

/// Constants derived from [`TheoryConstants`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedConstants {
    /// Sampling correction `(N-S)/(N-1)`; zero when `N == 1`.
    pub rho_s: f64,
    /// Per-round noise floor.
    pub psi: f64,
    /// `max(4 gamma^3, 2/eta_g^2 + 3 gamma^2)`.
    pub kappa: f64,
    /// Higher-order noise aggregate.
    pub phi: f64,
    /// Descent coefficient on the composite gradient norm.
    pub h: f64,
    /// Noise aggregate in the server-drift bound.
    pub g3: f64,
    /// `gamma^2 sigma0^2 S + sigma^2 + rho_s K G^2`.
    pub m_sq: f64,
}

impl TheoryConstants {
    pub fn from_config(
        cfg: &FederationConfig,
        l: f64,
        sigma_sq: f64,
        sigma0_sq: f64,
        g_sq: f64,
        xi_sq: f64,
    ) -> Self {
        TheoryConstants {
            l,
            sigma_sq,
            sigma0_sq,
            g_sq,
            xi_sq,
            gamma: cfg.gamma,
            eta_g: cfg.global_lr,
            eta_l: cfg.local_lr,
            eta0: cfg.server_lr,
            k: cfg.local_steps,
            k0: cfg.server_steps,
            s: cfg.clients_per_round,
            n: cfg.num_clients,
        }
    }

    /// Total server step `K0 * eta0` the bounds are parameterised by.
    pub fn step(&self) -> f64 {
        self.k0 as f64 * self.eta0
    }

    /// Total client step `K * eta_l * eta_g`.
    pub fn client_step(&self) -> f64 {
        self.k as f64 * (self.eta_l * self.eta_g)
    }

    /// Whether the two total steps agree (to a few ulp; bit-exact for
    /// power-of-two `K / K0` under the default server rate).
    pub fn steps_identical(&self) -> bool {
        let (a, b) = (self.client_step(), self.step());
        (a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs())
    }

    fn validate(&self) -> Result<()> {
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(Error::invalid_config("l", "smoothness must be finite and positive"));
        }
        for (name, v) in [
            ("sigma_sq", self.sigma_sq),
            ("sigma0_sq", self.sigma0_sq),
            ("g_sq", self.g_sq),
            ("xi_sq", self.xi_sq),
            ("gamma", self.gamma),
            ("eta_l", self.eta_l),
            ("eta0", self.eta0),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid_config(name, "must be finite and non-negative"));
            }
        }
        if !(self.eta_g.is_finite() && self.eta_g > 0.0) {
            return Err(Error::invalid_config("eta_g", "must be finite and positive"));
        }
        if self.k == 0 || self.k0 == 0 {
            return Err(Error::invalid_config("k", "step counts must be at least 1"));
        }
        if self.s == 0 || self.s > self.n {
            return Err(Error::invalid_config("s", format!("must be in 1..={}", self.n)));
        }
        Ok(())
    }
}

/// `(N-S)/(N-1)`, the without-replacement sampling correction.
pub fn rho_s(n: usize, s: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (n - s) as f64 / (n - 1) as f64
    }
}

/// Derives every aggregate constant the bounds use.
pub fn derive_constants(tc: &TheoryConstants) -> Result<DerivedConstants> {
    tc.validate()?;
    let gamma = tc.gamma;
    let step = tc.step();
    let (k, k0, s) = (tc.k as f64, tc.k0 as f64, tc.s as f64);
    let rho = rho_s(tc.n, tc.s);

    let psi = gamma * gamma * tc.sigma0_sq / k0 + tc.sigma_sq / (k * s) + rho * tc.g_sq / s;
    let kappa = (4.0 * gamma.powi(3)).max(2.0 / (tc.eta_g * tc.eta_g) + 3.0 * gamma * gamma);
    let phi = gamma * gamma * psi
        + (2.0 * gamma * gamma / s) * (tc.sigma_sq / k + rho * tc.g_sq)
        + (2.0 * tc.g_sq + tc.sigma_sq / k) / (tc.eta_g * tc.eta_g);
    let h = gamma + 0.5
        - step * tc.l * ((1.0 + gamma) / 2.0) * (3.0 * gamma + 3.0 + 16.0 * kappa * step * tc.l);
    let g3 = tc.sigma_sq / (k * s) + rho * tc.g_sq / s + gamma * gamma * tc.sigma0_sq / (3.0 * k0);
    let m_sq = gamma * gamma * tc.sigma0_sq * s + tc.sigma_sq + rho * k * tc.g_sq;

    Ok(DerivedConstants { rho_s: rho, psi, kappa, phi, h, g3, m_sq })
}

/// Largest total step `K0 * eta0` the descent analysis allows:
/// `min(eta_g, 1/gamma, 8/9) / (4L)`, with the `1/gamma` term dropped at
/// `gamma = 0`.
pub fn step_cap_basic(tc: &TheoryConstants) -> f64 {
    let mut cap = tc.eta_g.min(8.0 / 9.0);
    if tc.gamma > 0.0 {
        cap = cap.min(1.0 / tc.gamma);
    }
    cap / (4.0 * tc.l)
}

/// Stricter cap under which the descent coefficient is guaranteed:
/// `min(1, (gamma+1)^2 / (2 kappa)) / (8 L (gamma+1))`. Any total step at
/// or below it yields `h >= (3 gamma + 1) / 4`.
pub fn step_cap_strict(tc: &TheoryConstants) -> Result<f64> {
    let kappa = derive_constants(tc)?.kappa;
    let g1 = tc.gamma + 1.0;
    Ok(1.0f64.min(g1 * g1 / (2.0 * kappa)) / (8.0 * tc.l * g1))
}

/// The descent coefficient guaranteed at or below the stricter cap.
pub fn h_guarantee(gamma: f64) -> f64 {
    (3.0 * gamma + 1.0) / 4.0
}

/// Errors unless the total server step respects the basic cap.
pub fn check_step_cap(tc: &TheoryConstants) -> Result<()> {
    let cap = step_cap_basic(tc);
    let step = tc.step();
    if step > cap {
        return Err(Error::invalid_config(
            "eta0",
            format!("total server step {step} exceeds the admissible cap {cap}"),
        ));
    }
    Ok(())
}

/// Pointwise quantities the one-round descent bound is evaluated at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentState {
    /// Composite objective at the round start.
    pub ftilde: f64,
    /// Squared composite gradient norm at the round start.
    pub grad_ftilde_sq: f64,
    /// Squared server-client dissimilarity at the round start (the uniform
    /// bound is also valid here).
    pub xi_sq: f64,
}

/// Expected composite objective after one round, bounded from above.
/// Valid only when the total step respects the basic cap.
pub fn descent_bound_rhs(
    tc: &TheoryConstants,
    dc: &DerivedConstants,
    state: &DescentState,
) -> Result<f64> {
    check_step_cap(tc)?;
    let step = tc.step();
    let l = tc.l;
    Ok(state.ftilde - step * dc.h * state.grad_ftilde_sq
        + 5.0 * step * step * l * dc.psi
        + 8.0 * step.powi(3) * l * l
            * (tc.gamma * dc.kappa / (1.0 + tc.gamma) * state.xi_sq + dc.phi))
}

/// Bound on the T-round average squared composite gradient norm, given the
/// initial optimality gap `d0`. Needs a positive descent coefficient.
pub fn horizon_bound(tc: &TheoryConstants, dc: &DerivedConstants, d0: f64, t: usize) -> Result<f64> {
    check_step_cap(tc)?;
    if t == 0 {
        return Err(Error::invalid_config("t", "horizon must be at least 1"));
    }
    if !(d0.is_finite() && d0 >= 0.0) {
        return Err(Error::invalid_config("d0", "initial gap must be finite and non-negative"));
    }
    if dc.h <= 0.0 {
        return Err(Error::invalid_config(
            "h",
            format!("descent coefficient {} is not positive; reduce the step", dc.h),
        ));
    }
    let step = tc.step();
    let l = tc.l;
    let rhs = d0 / (t as f64 * step)
        + 5.0 * step * l * dc.psi
        + 8.0 * step * step * l * l * (tc.gamma * dc.kappa * tc.xi_sq / (1.0 + tc.gamma) + dc.phi);
    Ok(rhs / dc.h)
}

/// The two additive terms of the asymptotic rate, with unit constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateTerms {
    /// `sqrt(L / (K S T)) * (d0 + M^2 / (gamma+1)^2)`.
    pub leading: f64,
    /// `(L / T) * (M^2 / (1+gamma) + gamma kappa K S xi^2 / (1+gamma)^4)`.
    pub higher_order: f64,
    pub total: f64,
}

/// Evaluates the rate expression at horizon `t`.
pub fn rate_error(tc: &TheoryConstants, d0: f64, t: usize) -> Result<RateTerms> {
    if t == 0 {
        return Err(Error::invalid_config("t", "horizon must be at least 1"));
    }
    let dc = derive_constants(tc)?;
    let (k, s) = (tc.k as f64, tc.s as f64);
    let g1 = tc.gamma + 1.0;
    let leading = (tc.l / (k * s * t as f64)).sqrt() * (d0 + dc.m_sq / (g1 * g1));
    let higher_order = tc.l / t as f64
        * (dc.m_sq / g1 + tc.gamma * dc.kappa * k * s * tc.xi_sq / g1.powi(4));
    Ok(RateTerms { leading, higher_order, total: leading + higher_order })
}

/// `4 K eta_l L <= 1`, the premise of the client-drift bound.
pub fn client_drift_premise_holds(tc: &TheoryConstants) -> bool {
    4.0 * tc.k as f64 * tc.eta_l * tc.l <= 1.0
}

/// Client-drift bound: `4 K^2 eta_l^2 (||grad F||^2 + sigma^2/(2K) + G^2)`.
pub fn client_drift_bound_rhs(tc: &TheoryConstants, grad_f_sq: f64) -> f64 {
    let k = tc.k as f64;
    4.0 * k * k * tc.eta_l * tc.eta_l * (grad_f_sq + tc.sigma_sq / (2.0 * k) + tc.g_sq)
}

/// `4 K0 eta0 gamma L <= 1`, the premise of the server-drift bound.
pub fn server_drift_premise_holds(tc: &TheoryConstants) -> bool {
    4.0 * tc.step() * tc.gamma * tc.l <= 1.0
}

/// Server-drift bound:
/// `12 K0^2 eta0^2 (L^2 E_c + ||grad F||^2 + (4/3) gamma^2 ||grad f0||^2 + G3)`.
pub fn server_drift_bound_rhs(
    tc: &TheoryConstants,
    dc: &DerivedConstants,
    client_drift: f64,
    grad_f_sq: f64,
    grad_f0_sq: f64,
) -> f64 {
    let step = tc.step();
    12.0 * step * step
        * (tc.l * tc.l * client_drift
            + grad_f_sq
            + 4.0 / 3.0 * tc.gamma * tc.gamma * grad_f0_sq
            + dc.g3)
}

/// Effective quadratic centre of a dataset under the quadratic model:
/// model centre plus the mean feature vector.
fn effective_center(center: &ParamVector<f64>, data: &crate::data::LabeledDataset<f64>) -> Vec<f64> {
    let d = center.dim();
    let mut mean = vec![0.0f64; d];
    for s in data.iter() {
        for (m, &f) in mean.iter_mut().zip(&s.features) {
            *m += f;
        }
    }
    for m in mean.iter_mut() {
        *m /= data.len() as f64;
    }
    mean.iter_mut().zip(center.values()).for_each(|(m, &c)| *m += c);
    mean
}

/// Closed-form constants for quadratic objectives given the server centre
/// `c0` and per-client centres: `L = 1`, `sigma = sigma0 = 0` (full-batch
/// mode), `G^2` the mean squared distance of the client centres from their
/// mean, `xi^2` the squared distance of the server centre from that mean.
/// All are exact because the quadratic gradients make every dissimilarity
/// independent of the evaluation point.
pub fn exact_constants_for_quadratics(
    server_center: &[f64],
    client_centers: &[Vec<f64>],
    cfg: &FederationConfig,
) -> Result<TheoryConstants> {
    if client_centers.is_empty() {
        return Err(Error::EmptyDataset { context: "client centres".into() });
    }
    let d = server_center.len();
    for c in client_centers {
        if c.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: c.len() });
        }
    }
    let n = client_centers.len() as f64;
    let mut mean = vec![0.0f64; d];
    for c in client_centers {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v / n;
        }
    }
    let g_sq = client_centers
        .iter()
        .map(|c| c.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / n;
    let xi_sq = server_center.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    Ok(TheoryConstants::from_config(cfg, 1.0, 0.0, 0.0, g_sq, xi_sq))
}

/// Like [`exact_constants_for_quadratics`] but reads the centres out of a
/// quadratic world and accounts for mini-batch noise via the exact
/// subsampling variance when batches are smaller than the datasets.
pub fn constants_from_quadratic_world(
    world: &World<f64>,
    cfg: &FederationConfig,
) -> Result<TheoryConstants> {
    let center = match &world.model {
        LossModel::QuadraticConsensus { center } => center,
        _ => {
            return Err(Error::invalid_config(
                "model",
                "exact constants are only available for the quadratic model",
            ))
        }
    };
    let server = world
        .server_data
        .as_ref()
        .ok_or_else(|| Error::invalid_config("server_data", "quadratic testbed needs a server dataset"))?;

    let centers: Vec<Vec<f64>> = world.clients.iter().map(|c| effective_center(center, c)).collect();
    let c0 = effective_center(center, server);
    let mut tc = exact_constants_for_quadratics(&c0, &centers, cfg)?;

    let probe = ParamVector::<f64>::zeros(center.dim());
    for client in &world.clients {
        if cfg.batch_size < client.len() {
            let v = crate::data::subsample_variance_expected(&world.model, &probe, client, cfg.batch_size)?;
            tc.sigma_sq = tc.sigma_sq.max(v);
        }
    }
    if cfg.server_batch_size < server.len() {
        tc.sigma0_sq =
            crate::data::subsample_variance_expected(&world.model, &probe, server, cfg.server_batch_size)?;
    }
    Ok(tc)
}

/// Minimiser and minimum of the composite objective for a quadratic world:
/// `x* = (mean client centre + gamma * server centre) / (1 + gamma)`.
pub fn composite_minimum_for_quadratics(
    world: &World<f64>,
    gamma: f64,
) -> Result<(ParamVector<f64>, f64)> {
    let center = match &world.model {
        LossModel::QuadraticConsensus { center } => center,
        _ => {
            return Err(Error::invalid_config(
                "model",
                "composite minimum is only available for the quadratic model",
            ))
        }
    };
    let server = world
        .server_data
        .as_ref()
        .ok_or_else(|| Error::invalid_config("server_data", "quadratic testbed needs a server dataset"))?;
    let centers: Vec<Vec<f64>> = world.clients.iter().map(|c| effective_center(center, c)).collect();
    let c0 = effective_center(center, server);
    let d = center.dim();
    let mut opt = vec![0.0f64; d];
    for c in &centers {
        for (o, v) in opt.iter_mut().zip(c) {
            *o += v / centers.len() as f64;
        }
    }
    for (o, v) in opt.iter_mut().zip(&c0) {
        *o = (*o + gamma * v) / (1.0 + gamma);
    }
    let x_opt = ParamVector::from_f64_slice(&opt);
    let value = crate::metrics::objective_ftilde(&world.model, &x_opt, &world.clients, server, gamma)?;
    Ok((x_opt, value))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> TheoryConstants {
        TheoryConstants {
            l: 1.0,
            sigma_sq: 0.0,
            sigma0_sq: 0.0,
            g_sq: 1.0,
            xi_sq: 0.25,
            gamma: 1.0,
            eta_g: 1.0,
            eta_l: 0.0125,
            eta0: 0.025,
            k: 2,
            k0: 1,
            s: 4,
            n: 10,
        }
    }

    #[test]
    fn sampling_correction_matches_hand_values() {
        assert_eq!(rho_s(10, 4), 2.0 / 3.0);
        assert_eq!(rho_s(10, 10), 0.0);
        assert_eq!(rho_s(1, 1), 0.0);
    }

    #[test]
    fn kappa_matches_hand_values() {
        let mut tc = base();
        let dc = derive_constants(&tc).unwrap();
        assert_eq!(dc.kappa, 5.0);
        tc.gamma = 2.0;
        assert_eq!(derive_constants(&tc).unwrap().kappa, 32.0);
        tc.gamma = 0.0;
        tc.eta_g = 2.0;
        assert_eq!(derive_constants(&tc).unwrap().kappa, 0.5);
    }

    #[test]
    fn step_caps_match_hand_values() {
        let mut tc = base();
        tc.gamma = 1.0;
        tc.eta_g = 2.0;
        assert!((step_cap_basic(&tc) - 2.0 / 9.0).abs() < 1e-15);
        tc.gamma = 0.0;
        tc.eta_g = 0.5;
        assert_eq!(step_cap_basic(&tc), 0.125);

        let mut tc = base();
        tc.gamma = 1.0;
        tc.eta_g = 1.0;
        let cap = step_cap_strict(&tc).unwrap();
        assert!((cap - 0.025).abs() < 1e-15);
        // h at exactly the cap reaches the guarantee 1.3 >= 1
        tc.eta0 = cap;
        tc.k0 = 1;
        let dc = derive_constants(&tc).unwrap();
        assert!((dc.h - 1.3).abs() < 1e-12);
        assert!(dc.h >= h_guarantee(tc.gamma));
    }

    #[test]
    fn noise_aggregates_match_hand_values() {
        let tc = TheoryConstants {
            l: 1.0,
            sigma_sq: 0.3,
            sigma0_sq: 0.5,
            g_sq: 1.0,
            xi_sq: 0.25,
            gamma: 1.0,
            eta_g: 2.0,
            eta_l: 0.01,
            eta0: 0.01,
            k: 3,
            k0: 2,
            s: 4,
            n: 10,
        };
        let dc = derive_constants(&tc).unwrap();
        let rho: f64 = 2.0 / 3.0;
        assert!((dc.psi - (0.25 + 0.025 + rho / 4.0)).abs() < 1e-15);
        let phi = dc.psi + 0.5 * (0.1 + rho) + 0.25 * 2.1;
        assert!((dc.phi - phi).abs() < 1e-15);
        assert!((dc.g3 - (0.025 + rho / 4.0 + 0.5 / 6.0)).abs() < 1e-15);
        assert!((dc.m_sq - 4.3).abs() < 1e-15);
    }

    #[test]
    fn descent_bound_rhs_reduces_to_pure_descent_without_noise() {
        let mut tc = base();
        tc.s = tc.n; // full participation: the sampling terms drop out
        let dc = derive_constants(&tc).unwrap();
        assert_eq!(dc.psi, 0.0);
        let state = DescentState { ftilde: 2.0, grad_ftilde_sq: 1.0, xi_sq: 0.0 };
        let step = tc.step();
        let expected = 2.0 - step * dc.h + 8.0 * step.powi(3) * dc.phi;
        assert!((descent_bound_rhs(&tc, &dc, &state).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn descent_bound_rejects_oversized_steps() {
        let mut tc = base();
        tc.eta0 = 1.0; // step 1.0 far above the cap 2/9
        let dc = derive_constants(&tc).unwrap();
        let state = DescentState { ftilde: 1.0, grad_ftilde_sq: 1.0, xi_sq: 0.0 };
        assert!(descent_bound_rhs(&tc, &dc, &state).is_err());
        assert!(horizon_bound(&tc, &dc, 1.0, 10).is_err());
    }

    #[test]
    fn h_guarantee_holds_on_a_parameter_grid_at_the_strict_cap() {
        for &gamma in &[0.0, 0.5, 1.0, 1.5, 2.0] {
            for &eta_g in &[1.0, 2.0, 10.0f64.sqrt()] {
                for &l in &[0.5, 1.0, 2.0] {
                    let mut tc = base();
                    tc.gamma = gamma;
                    tc.eta_g = eta_g;
                    tc.l = l;
                    let cap = step_cap_strict(&tc).unwrap();
                    for &frac in &[1.0, 0.5, 0.1] {
                        tc.k0 = 1;
                        tc.eta0 = cap * frac;
                        let dc = derive_constants(&tc).unwrap();
                        assert!(
                            dc.h >= h_guarantee(gamma) - 1e-12,
                            "h = {} < {} at gamma={gamma}, eta_g={eta_g}, L={l}, frac={frac}",
                            dc.h,
                            h_guarantee(gamma)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn horizon_bound_decreases_in_the_horizon_towards_its_floor() {
        let tc = base();
        let dc = derive_constants(&tc).unwrap();
        let b10 = horizon_bound(&tc, &dc, 1.0, 10).unwrap();
        let b100 = horizon_bound(&tc, &dc, 1.0, 100).unwrap();
        assert!(b100 < b10);
        let step = tc.step();
        let floor = (5.0 * step * dc.psi
            + 8.0 * step * step * (tc.gamma * dc.kappa * tc.xi_sq / 2.0 + dc.phi))
            / dc.h;
        assert!(b100 > floor);
        assert!((horizon_bound(&tc, &dc, 1.0, 1_000_000).unwrap() - floor) < 1e-4);
    }

    #[test]
    fn horizon_bound_requires_a_positive_descent_coefficient() {
        let mut tc = base();
        tc.eta0 = 10.0;
        let dc = derive_constants(&tc).unwrap();
        assert!(dc.h < 0.0);
        assert!(horizon_bound(&tc, &dc, 1.0, 10).is_err());
    }

    #[test]
    fn rate_terms_scale_as_expected() {
        let tc = base();
        let r1 = rate_error(&tc, 2.0, 100).unwrap();
        let r4 = rate_error(&tc, 2.0, 400).unwrap();
        assert!((r4.leading - r1.leading / 2.0).abs() < 1e-12);
        assert!((r4.higher_order - r1.higher_order / 4.0).abs() < 1e-12);
        assert!((r1.total - (r1.leading + r1.higher_order)).abs() < 1e-15);

        let mut gamma0 = tc;
        gamma0.gamma = 0.0;
        let r = rate_error(&gamma0, 2.0, 100).unwrap();
        // at gamma = 0 the dissimilarity term vanishes from the higher-order
        // part: M^2 = sigma^2 + rho K G^2
        let dc = derive_constants(&gamma0).unwrap();
        let expected_higher = gamma0.l / 100.0 * dc.m_sq;
        assert!((r.higher_order - expected_higher).abs() < 1e-15);
    }

    #[test]
    fn drift_premises_and_bounds_evaluate() {
        let tc = base();
        assert!(client_drift_premise_holds(&tc));
        assert!(server_drift_premise_holds(&tc));
        let dc = derive_constants(&tc).unwrap();
        let k = tc.k as f64;
        let expected = 4.0 * k * k * tc.eta_l * tc.eta_l * (2.0 + tc.g_sq);
        assert!((client_drift_bound_rhs(&tc, 2.0) - expected).abs() < 1e-15);
        let step = tc.step();
        let expected5 = 12.0 * step * step * (0.5 + 2.0 + 4.0 / 3.0 * 3.0 + dc.g3);
        assert!((server_drift_bound_rhs(&tc, &dc, 0.5, 2.0, 3.0) - expected5).abs() < 1e-15);

        let mut hot = tc;
        hot.eta_l = 1.0;
        assert!(!client_drift_premise_holds(&hot));
    }

    #[test]
    fn exact_quadratic_constants_match_the_testbed_geometry() {
        use crate::data::{LabeledDataset, Sample};
        use crate::fedsim::Algorithm;

        let singleton = |x: f64, y: f64| {
            LabeledDataset::new(vec![Sample { features: vec![x, y], label: 0 }], 1).unwrap()
        };
        let mut clients = Vec::new();
        for _ in 0..4 {
            clients.push(singleton(3.0, 1.0));
        }
        for _ in 0..4 {
            clients.push(singleton(1.0, 1.0));
        }
        let world = World {
            model: LossModel::QuadraticConsensus { center: ParamVector::zeros(2) },
            clients,
            server_data: Some(singleton(2.5, 1.0)),
            test_data: None,
        };
        let cfg = FederationConfig {
            algorithm: Algorithm::Fsl,
            num_clients: 8,
            clients_per_round: 8,
            local_steps: 4,
            server_steps: 2,
            batch_size: 1,
            server_batch_size: 1,
            local_lr: 0.002,
            global_lr: 8.0f64.sqrt(),
            server_lr: 0.002 * 8.0f64.sqrt() * 2.0,
            gamma: 1.0,
            rounds: 1,
            master_seed: 7,
            fslp_server_weight: 0.0,
            pretrain: None,
        };
        let tc = constants_from_quadratic_world(&world, &cfg).unwrap();
        assert_eq!(tc.l, 1.0);
        assert_eq!(tc.sigma_sq, 0.0);
        assert_eq!(tc.sigma0_sq, 0.0);
        assert!((tc.g_sq - 1.0).abs() < 1e-15);
        assert!((tc.xi_sq - 0.25).abs() < 1e-15);

        // direct centre form agrees
        let direct = exact_constants_for_quadratics(
            &[2.5, 1.0],
            &vec![vec![3.0, 1.0]; 4].into_iter().chain(vec![vec![1.0, 1.0]; 4]).collect::<Vec<_>>(),
            &cfg,
        )
        .unwrap();
        assert_eq!(direct.g_sq, tc.g_sq);
        assert_eq!(direct.xi_sq, tc.xi_sq);

        let (x_opt, value) = composite_minimum_for_quadratics(&world, 1.0).unwrap();
        // mean client centre (2,1), server centre (2.5,1) -> x* = (2.25, 1)
        assert!((x_opt.values()[0] - 2.25).abs() < 1e-15);
        assert!((x_opt.values()[1] - 1.0).abs() < 1e-15);
        // F~(x*) = (F(x*) + f0(x*)) / 2; F(x*) = mean of 0.5*d^2 over centres
        let f = 0.5 * (4.0 * 0.75f64.powi(2) + 4.0 * 1.25f64.powi(2)) / 8.0;
        let f0 = 0.5 * 0.25f64.powi(2);
        assert!((value - (f + f0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn centre_based_constants_match_hand_geometry() {
        let cfg_fields = base();
        let cfg = FederationConfig {
            algorithm: crate::fedsim::Algorithm::Fsl,
            num_clients: 2,
            clients_per_round: 2,
            local_steps: cfg_fields.k,
            server_steps: cfg_fields.k0,
            batch_size: 1,
            server_batch_size: 1,
            local_lr: cfg_fields.eta_l,
            global_lr: cfg_fields.eta_g,
            server_lr: cfg_fields.eta0,
            gamma: 1.0,
            rounds: 1,
            master_seed: 0,
            fslp_server_weight: 0.0,
            pretrain: None,
        };
        let clients = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let tc = exact_constants_for_quadratics(&[0.0, 0.0], &clients, &cfg).unwrap();
        assert_eq!(tc.g_sq, 1.0);
        assert_eq!(tc.xi_sq, 0.0);
        let tc = exact_constants_for_quadratics(&[0.0, 1.0], &clients, &cfg).unwrap();
        assert_eq!(tc.xi_sq, 1.0);
        let same = vec![vec![0.5, 0.5]; 3];
        let tc = exact_constants_for_quadratics(&[0.5, 0.5], &same, &cfg).unwrap();
        assert_eq!(tc.g_sq, 0.0);
        assert_eq!(tc.xi_sq, 0.0);
        assert!(exact_constants_for_quadratics(&[0.0], &[], &cfg).is_err());
    }

    #[test]
    fn step_identity_detection() {
        let mut tc = base();
        tc.eta_l = 0.0125;
        tc.eta_g = 2.0;
        tc.k = 2;
        tc.k0 = 1;
        tc.eta0 = 0.05;
        assert!(tc.steps_identical());
        tc.eta0 = 0.051;
        assert!(!tc.steps_identical());
    }
}
