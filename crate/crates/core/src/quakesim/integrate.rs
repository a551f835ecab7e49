use super::building::BuildingSpec;
use super::record::ResponseRecord;
use crate::error::{Error, Result};

/// Bilinear story spring with kinematic hardening: a linear branch of
/// stiffness `αk` in parallel with an elastic-perfectly-plastic branch of
/// stiffness `(1-α)k` yielding at `(1-α)V_y`.
#[derive(Debug, Clone)]
struct StorySpring {
    k_lin: f64,
    k_ep: f64,
    f_yield_ep: f64,
    plastic: f64,
    f_ep: f64,
}

impl StorySpring {
    fn new(k: f64, alpha: f64, v_yield: f64) -> Self {
        StorySpring {
            k_lin: alpha * k,
            k_ep: (1.0 - alpha) * k,
            f_yield_ep: (1.0 - alpha) * v_yield,
            plastic: 0.0,
            f_ep: 0.0,
        }
    }

    /// Updates the state for story deformation `d`; returns the shear and
    /// the energy dissipated by plastic flow in this update (never negative).
    fn update(&mut self, d: f64) -> (f64, f64) {
        let mut dissipated = 0.0;
        if self.k_ep > 0.0 {
            let trial = self.k_ep * (d - self.plastic);
            if trial.abs() > self.f_yield_ep {
                let f = self.f_yield_ep.copysign(trial);
                let dp = (trial - f) / self.k_ep;
                self.plastic += dp;
                dissipated = f * dp;
                self.f_ep = f;
            } else {
                self.f_ep = trial;
            }
        }
        (self.k_lin * d + self.f_ep, dissipated)
    }

    fn strain_energy(&self, d: f64) -> f64 {
        let ep = if self.k_ep > 0.0 {
            0.5 * self.f_ep * self.f_ep / self.k_ep
        } else {
            0.0
        };
        0.5 * self.k_lin * d * d + ep
    }
}

/// Cumulative energy terms in the relative (base-fixed) frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyBalance {
    pub input: f64,
    pub kinetic: f64,
    pub strain: f64,
    pub damping: f64,
    pub hysteretic: f64,
}

/// Explicit central-difference integrator for a nonlinear shear building.
#[derive(Debug, Clone)]
pub struct Integrator {
    masses: Vec<f64>,
    k_diag: Vec<f64>,
    k_off: Vec<f64>,
    a0: f64,
    a1: f64,
    h: f64,
    springs: Vec<StorySpring>,
    // factored (M/h² + C/2h)
    lhs_off: Vec<f64>,
    lhs_cprime: Vec<f64>,
    lhs_denom: Vec<f64>,
    u_prev: Vec<f64>,
    u: Vec<f64>,
    u_next: Vec<f64>,
    restoring: Vec<f64>,
    story_deform: Vec<f64>,
    velocity: Vec<f64>,
    rel_accel: Vec<f64>,
    step_index: usize,
    energy: EnergyBalance,
}

impl Integrator {
    /// `h` must be below the central-difference stability limit.
    pub fn new(building: &BuildingSpec, h: f64) -> Result<Self> {
        building.validate()?;
        let crit = building.critical_dt()?;
        if !(h > 0.0) || h >= crit {
            return Err(Error::arg(format!(
                "time step {h} s is not below the stability limit T_min/pi = {crit} s for building {}",
                building.id
            )));
        }
        let n = building.stories;
        let k = &building.stiffnesses;
        let k_diag: Vec<f64> = (0..n)
            .map(|i| k[i] + if i + 1 < n { k[i + 1] } else { 0.0 })
            .collect();
        let k_off: Vec<f64> = (0..n.saturating_sub(1)).map(|i| -k[i + 1]).collect();
        let (a0, a1) = building.rayleigh_coefficients()?;
        let m = &building.masses;
        let diag: Vec<f64> = (0..n)
            .map(|i| m[i] / (h * h) + (a0 * m[i] + a1 * k_diag[i]) / (2.0 * h))
            .collect();
        let lhs_off: Vec<f64> = k_off.iter().map(|&ko| a1 * ko / (2.0 * h)).collect();
        let mut lhs_cprime = vec![0.0; n];
        let mut lhs_denom = vec![0.0; n];
        for i in 0..n {
            let sub = if i > 0 { lhs_off[i - 1] } else { 0.0 };
            let prev = if i > 0 { lhs_cprime[i - 1] } else { 0.0 };
            lhs_denom[i] = diag[i] - sub * prev;
            lhs_cprime[i] = if i + 1 < n {
                lhs_off[i] / lhs_denom[i]
            } else {
                0.0
            };
        }
        let vy = building.yield_forces();
        let springs = (0..n)
            .map(|i| StorySpring::new(k[i], building.hardening_ratio, vy[i]))
            .collect();
        Ok(Integrator {
            masses: m.clone(),
            k_diag,
            k_off,
            a0,
            a1,
            h,
            springs,
            lhs_off,
            lhs_cprime,
            lhs_denom,
            u_prev: vec![0.0; n],
            u: vec![0.0; n],
            u_next: vec![0.0; n],
            restoring: vec![0.0; n],
            story_deform: vec![0.0; n],
            velocity: vec![0.0; n],
            rel_accel: vec![0.0; n],
            step_index: 0,
            energy: EnergyBalance::default(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.h
    }

    /// Starts from displacement `u0` and velocity `v0` under ground
    /// acceleration `ag0`. Springs are assumed elastic at `u0`.
    pub fn set_initial(&mut self, u0: &[f64], v0: &[f64], ag0: f64) -> Result<()> {
        let n = self.masses.len();
        if u0.len() != n || v0.len() != n {
            return Err(Error::dim(format!("initial state must have {n} entries")));
        }
        for (i, s) in self.springs.iter_mut().enumerate() {
            let d = u0[i] - if i > 0 { u0[i - 1] } else { 0.0 };
            s.plastic = 0.0;
            s.f_ep = s.k_ep * d;
        }
        self.compute_restoring(u0);
        let cv = self.damping_times(v0);
        let h = self.h;
        for i in 0..n {
            let acc = (-self.masses[i] * ag0 - cv[i] - self.restoring[i]) / self.masses[i];
            self.u[i] = u0[i];
            self.u_prev[i] = u0[i] - h * v0[i] + 0.5 * h * h * acc;
        }
        self.step_index = 0;
        self.energy = EnergyBalance::default();
        Ok(())
    }

    fn compute_restoring(&mut self, u: &[f64]) -> f64 {
        let n = u.len();
        let mut shears = vec![0.0; n];
        let mut dissipated = 0.0;
        for i in 0..n {
            let d = u[i] - if i > 0 { u[i - 1] } else { 0.0 };
            self.story_deform[i] = d;
            let (f, e) = self.springs[i].update(d);
            shears[i] = f;
            dissipated += e;
        }
        for i in 0..n {
            self.restoring[i] = shears[i] - if i + 1 < n { shears[i + 1] } else { 0.0 };
        }
        dissipated
    }

    /// `(a0 M + a1 K) v`
    fn damping_times(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        (0..n)
            .map(|i| {
                let mut kv = self.k_diag[i] * v[i];
                if i > 0 {
                    kv += self.k_off[i - 1] * v[i - 1];
                }
                if i + 1 < n {
                    kv += self.k_off[i] * v[i + 1];
                }
                self.a0 * self.masses[i] * v[i] + self.a1 * kv
            })
            .collect()
    }

    /// Advances one step under ground acceleration `ag` at the current
    /// time. Afterwards [`Self::velocity`], [`Self::relative_acceleration`]
    /// and [`Self::story_deformations`] describe the time that was just
    /// left, and [`Self::displacement`] the new time.
    pub fn step(&mut self, ag: f64) -> Result<()> {
        let n = self.masses.len();
        let h = self.h;
        let dissipated = self.compute_restoring(&self.u.clone());
        // rhs = -M ag - R(u) + 2M/h² u - (M/h² - C/2h) u_prev
        let c_prev = self.damping_times(&self.u_prev);
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let m = self.masses[i];
            rhs[i] = -m * ag - self.restoring[i] + 2.0 * m / (h * h) * self.u[i]
                - m / (h * h) * self.u_prev[i]
                + c_prev[i] / (2.0 * h);
        }
        // Thomas solve
        let mut dprime = vec![0.0; n];
        for i in 0..n {
            let sub = if i > 0 { self.lhs_off[i - 1] } else { 0.0 };
            let prev = if i > 0 { dprime[i - 1] } else { 0.0 };
            dprime[i] = (rhs[i] - sub * prev) / self.lhs_denom[i];
        }
        for i in (0..n).rev() {
            let next = if i + 1 < n { self.u_next[i + 1] } else { 0.0 };
            self.u_next[i] = dprime[i] - self.lhs_cprime[i] * next;
        }
        if self.u_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation {
                step: self.step_index,
                message: "non-finite displacement".into(),
            });
        }
        for i in 0..n {
            self.velocity[i] = (self.u_next[i] - self.u_prev[i]) / (2.0 * h);
            self.rel_accel[i] = (self.u_next[i] - 2.0 * self.u[i] + self.u_prev[i]) / (h * h);
        }
        let cv = self.damping_times(&self.velocity);
        let e = &mut self.energy;
        e.hysteretic += dissipated;
        e.input += -h
            * ag
            * self
                .masses
                .iter()
                .zip(&self.velocity)
                .map(|(m, v)| m * v)
                .sum::<f64>();
        e.damping += h * self
            .velocity
            .iter()
            .zip(&cv)
            .map(|(v, c)| v * c)
            .sum::<f64>();
        e.kinetic = 0.5
            * self
                .masses
                .iter()
                .zip(&self.velocity)
                .map(|(m, v)| m * v * v)
                .sum::<f64>();
        e.strain = self
            .springs
            .iter()
            .zip(&self.story_deform)
            .map(|(s, &d)| s.strain_energy(d))
            .sum();
        std::mem::swap(&mut self.u_prev, &mut self.u);
        std::mem::swap(&mut self.u, &mut self.u_next);
        self.step_index += 1;
        Ok(())
    }

    pub fn displacement(&self) -> &[f64] {
        &self.u
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn relative_acceleration(&self) -> &[f64] {
        &self.rel_accel
    }

    pub fn story_deformations(&self) -> &[f64] {
        &self.story_deform
    }

    pub fn energy(&self) -> EnergyBalance {
        self.energy
    }
}

/// Number of integration substeps per record step needed for stability.
pub fn stable_substeps(building: &BuildingSpec, dt: f64) -> Result<usize> {
    let limit = 0.9 * building.critical_dt()?;
    Ok(((dt / limit).ceil() as usize).max(1))
}

/// Integrates the response to `motion` sampled at `dt`, using `dt` as the
/// integration step.
pub fn simulate_response(
    building: &BuildingSpec,
    motion: &[f64],
    dt: f64,
) -> Result<ResponseRecord> {
    simulate_response_substepped(building, motion, dt, 1)
}

/// As [`simulate_response`], integrating with `substeps` steps per sample
/// and linearly interpolated ground acceleration; outputs stay at `dt`.
pub fn simulate_response_substepped(
    building: &BuildingSpec,
    motion: &[f64],
    dt: f64,
    substeps: usize,
) -> Result<ResponseRecord> {
    if motion.is_empty() {
        return Err(Error::arg("empty ground motion"));
    }
    if substeps == 0 {
        return Err(Error::arg("substeps must be >= 1"));
    }
    let n = building.stories;
    let h = dt / substeps as f64;
    let mut integ = Integrator::new(building, h)?;
    let len = motion.len();
    let mut floor_accels = vec![Vec::with_capacity(len); n + 1];
    let mut drifts = vec![Vec::with_capacity(len); n];
    let heights: Vec<f64> = (0..n).map(|s| building.height_of_story(s)).collect();
    for (idx, &ag) in motion.iter().enumerate() {
        let next = motion.get(idx + 1).copied();
        for s in 0..substeps {
            let ag_s = match next {
                Some(a1) => ag + (a1 - ag) * s as f64 / substeps as f64,
                None if s > 0 => break,
                None => ag,
            };
            integ.step(ag_s)?;
            if s == 0 {
                floor_accels[0].push(ag);
                for i in 0..n {
                    floor_accels[i + 1].push(integ.relative_acceleration()[i] + ag);
                    drifts[i].push(integ.story_deformations()[i] / heights[i]);
                }
            }
        }
    }
    Ok(ResponseRecord::new(
        building.id.clone(),
        String::new(),
        1.0,
        dt,
        floor_accels,
        drifts,
        (0.0, dt * (len - 1) as f64),
    ))
}
