//! Brownian forcing in spectral coordinates.
//!
//! Every Brownian motion ("channel") draws from its own ChaCha stream keyed
//! by `(seed, path index, channel)`, so a path does not depend on how many
//! channels are retained or on the order in which paths are generated. For
//! cylindrical noise channel `c` drives eigenmode `n = c + 1`; mode 0 is never
//! forced.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::legendre::SpectralField;

/// Uniform time grid `t_k = k dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid("dt", "must be positive"));
        }
        Ok(Self { dt, steps })
    }

    /// Grid covering `[0, horizon]`; `horizon` must be a multiple of `dt`.
    pub fn from_horizon(dt: f64, horizon: f64) -> Result<Self> {
        if !(horizon >= 0.0) {
            return Err(Error::NegativeTime(horizon));
        }
        if !(dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        let steps = (horizon / dt).round();
        if (steps * dt - horizon).abs() > 1e-9 * horizon.max(dt) {
            return Err(invalid("horizon", format!("{horizon} is not a multiple of dt={dt}")));
        }
        Self::new(dt, steps as usize)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Time modulation `psi(t)` of the noise operator `G_t = psi(t) G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Modulation {
    Constant { value: f64 },
    /// `psi(t) = (t + 1/a)^(-alpha)`, square integrable iff `2 alpha > 1`.
    PowerDecay { a: f64, alpha: f64 },
}

impl Default for Modulation {
    fn default() -> Self {
        Self::Constant { value: 1.0 }
    }
}

impl Modulation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Constant { value } if !value.is_finite() => {
                Err(invalid("modulation.value", "must be finite"))
            }
            Self::PowerDecay { a, .. } if !(a > 0.0) => {
                Err(invalid("modulation.a", "must be positive"))
            }
            Self::PowerDecay { alpha, .. } if !(2.0 * alpha > 1.0) => Err(invalid(
                "modulation.alpha",
                format!("power decay needs 2*alpha > 1, got alpha={alpha}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::PowerDecay { a, alpha } => (t + 1.0 / a).powf(-alpha),
        }
    }

    /// `int_0^t psi(s)^2 ds`; `t = inf` is allowed for power decay.
    pub fn square_integral(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { value } => value * value * t,
            Self::PowerDecay { a, alpha } => {
                let e = 1.0 - 2.0 * alpha;
                let tail = if t.is_infinite() { 0.0 } else { (t + 1.0 / a).powf(e) };
                ((1.0 / a).powf(e) - tail) / (2.0 * alpha - 1.0)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant { .. })
    }
}

/// Per-mode gains `gamma_n` of cylindrical noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gains {
    /// `gamma_n = mu_n^(-sigma)`; `sigma = 0` gives unit gains.
    Smoothing { sigma: f64 },
    Explicit { values: Vec<f64> },
}

impl Default for Gains {
    fn default() -> Self {
        Self::Smoothing { sigma: 0.0 }
    }
}

fn eigenvalue(n: usize) -> f64 {
    (n * (n + 1)) as f64
}

/// Noise specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    #[default]
    Off,
    /// `G dW = sum_k Phi_k dB^k`, each `Phi_k` given by Legendre coefficients.
    FiniteDim { profiles: Vec<Vec<f64>> },
    /// `G dW = psi(t) sum_{n=1}^{modes} gamma_n mu_n^(-1/2) dB^n e_n`.
    Cylindrical {
        modes: usize,
        #[serde(default)]
        gains: Gains,
        #[serde(default)]
        modulation: Modulation,
    },
}

impl NoiseSpec {
    pub fn cylindrical(modes: usize, sigma: f64, modulation: Modulation) -> Self {
        Self::Cylindrical {
            modes,
            gains: Gains::Smoothing { sigma },
            modulation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Off => Ok(()),
            Self::FiniteDim { profiles } => {
                if profiles.iter().flatten().any(|c| !c.is_finite()) {
                    return Err(invalid("noise.profiles", "coefficients must be finite"));
                }
                Ok(())
            }
            Self::Cylindrical {
                modes,
                gains,
                modulation,
            } => {
                if *modes == 0 {
                    return Err(invalid("noise.modes", "need at least one mode"));
                }
                match gains {
                    Gains::Smoothing { sigma } if !sigma.is_finite() => {
                        return Err(invalid("noise.gains.sigma", "must be finite"))
                    }
                    Gains::Explicit { values } => {
                        if values.len() != *modes {
                            return Err(invalid(
                                "noise.gains.values",
                                format!("expected {modes} gains, got {}", values.len()),
                            ));
                        }
                        if values.iter().any(|g| !(*g >= 0.0)) {
                            return Err(invalid("noise.gains.values", "gains must be nonnegative"));
                        }
                    }
                    _ => {}
                }
                modulation.validate()
            }
        }
    }

    /// Number of independent Brownian motions.
    pub fn channels(&self) -> usize {
        match self {
            Self::Off => 0,
            Self::FiniteDim { profiles } => profiles.len(),
            Self::Cylindrical { modes, .. } => *modes,
        }
    }

    /// Smallest basis size able to hold the noise.
    pub fn required_modes(&self) -> usize {
        match self {
            Self::Off => 1,
            Self::FiniteDim { profiles } => profiles.iter().map(Vec::len).max().unwrap_or(0).max(1),
            Self::Cylindrical { modes, .. } => modes + 1,
        }
    }

    /// `gamma_n` for `n >= 1`.
    pub fn gain(&self, n: usize) -> f64 {
        match self {
            Self::Cylindrical { gains, .. } => match gains {
                Gains::Smoothing { sigma } => eigenvalue(n).powf(-sigma),
                Gains::Explicit { values } => values[n - 1],
            },
            _ => 0.0,
        }
    }

    pub fn modulation(&self) -> Modulation {
        match self {
            Self::Cylindrical { modulation, .. } => *modulation,
            _ => Modulation::default(),
        }
    }

    /// Spectral loading of each channel, i.e. `G` applied to the unit
    /// increment of that Brownian motion.
    pub fn loadings(&self, modes: usize) -> Result<Vec<SpectralField>> {
        let required = self.required_modes();
        if required > modes {
            return Err(Error::ModeOverflow {
                requested: required,
                available: modes,
            });
        }
        Ok(match self {
            Self::Off => Vec::new(),
            Self::FiniteDim { profiles } => profiles
                .iter()
                .map(|p| SpectralField::from_coeffs(p.clone()).resized(modes))
                .collect(),
            Self::Cylindrical { modes: nw, .. } => (1..=*nw)
                .map(|n| SpectralField::unit(n, modes).scaled(self.gain(n) / eigenvalue(n).sqrt()))
                .collect(),
        })
    }

    /// Squared Hilbert-Schmidt norm of `G` (without modulation).
    pub fn hilbert_schmidt_sq(&self) -> f64 {
        match self {
            Self::Off => 0.0,
            Self::FiniteDim { profiles } => profiles.iter().flatten().map(|c| c * c).sum(),
            Self::Cylindrical { modes, .. } => (1..=*modes)
                .map(|n| self.gain(n).powi(2) / eigenvalue(n))
                .sum(),
        }
    }

    /// Wiener isometry `E ||(G.W)_t||^2 = ||G||_HS^2 int_0^t psi^2`.
    pub fn isometry_target(&self, t: f64) -> f64 {
        self.hilbert_schmidt_sq() * self.modulation().square_integral(t)
    }

    /// `E ||W^{A,G}_t||^2` for cylindrical noise with constant modulation.
    pub fn convolution_trace(&self, t: f64) -> Result<f64> {
        match self {
            Self::Off => Ok(0.0),
            Self::Cylindrical {
                modes, modulation, ..
            } => {
                let Modulation::Constant { value } = *modulation else {
                    return Err(Error::RequiresConstantG);
                };
                let gains: Vec<f64> = (1..=*modes).map(|n| self.gain(n)).collect();
                Ok(value * value * convolution_trace(t, &gains))
            }
            Self::FiniteDim { .. } => Err(invalid(
                "noise.mode",
                "stochastic convolution is implemented for cylindrical noise",
            )),
        }
    }
}

/// `1/2 sum_n gamma_n^2 (1 - exp(-2 t mu_n)) / mu_n^2`, with `gains[i]` the
/// gain of mode `i + 1`.
pub fn convolution_trace(t: f64, gains: &[f64]) -> f64 {
    // Summed from the smallest terms up.
    gains
        .iter()
        .enumerate()
        .rev()
        .map(|(i, g)| {
            let mu = eigenvalue(i + 1);
            0.5 * g * g * (-(-2.0 * t * mu).exp_m1()) / (mu * mu)
        })
        .sum()
}

/// The generator for one Brownian motion of one Monte Carlo path.
pub fn channel_rng(seed: u64, path: u64, channel: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(channel as u64);
    rng
}

/// Brownian increments, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    dt: f64,
    steps: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Increments {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.steps..(c + 1) * self.steps]
    }

    /// Increment of channel `c` over `[t_k, t_{k+1}]`.
    pub fn get(&self, c: usize, k: usize) -> f64 {
        self.data[c * self.steps + k]
    }

    /// Sums consecutive groups of `factor` increments.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(invalid(
                "factor",
                format!("{factor} does not divide {} steps", self.steps),
            ));
        }
        let steps = self.steps / factor;
        let data = (0..self.channels)
            .flat_map(|c| {
                self.channel(c)
                    .chunks_exact(factor)
                    .map(|chunk| chunk.iter().sum::<f64>())
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(Self {
            dt: self.dt * factor as f64,
            steps,
            channels: self.channels,
            data,
        })
    }
}

/// I.i.d. `Normal(0, dt)` increments for `channels` Brownian motions.
pub fn sample_increments(seed: u64, dt: f64, steps: usize, channels: usize) -> Result<Increments> {
    sample_path_increments(seed, 0, TimeGrid::new(dt, steps)?, channels)
}

/// Increments of Monte Carlo path `path`.
pub fn sample_path_increments(
    seed: u64,
    path: u64,
    grid: TimeGrid,
    channels: usize,
) -> Result<Increments> {
    if grid.steps == 0 {
        return Err(invalid("steps", "need at least one step"));
    }
    let sd = grid.dt.sqrt();
    let mut data = Vec::with_capacity(channels * grid.steps);
    for c in 0..channels {
        let mut rng = channel_rng(seed, path, c);
        data.extend((0..grid.steps).map(|_| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            sd * xi
        }));
    }
    Ok(Increments {
        dt: grid.dt,
        steps: grid.steps,
        channels,
        data,
    })
}

/// One realization of `(G.W)_t` on a time grid.
#[derive(Debug, Clone)]
pub struct SamplePath {
    seed: u64,
    path_index: u64,
    grid: TimeGrid,
    noise: NoiseSpec,
    scale: f64,
    increments: Option<Increments>,
    z: Vec<SpectralField>,
}

impl SamplePath {
    /// The zero path (no noise).
    pub fn zero(grid: TimeGrid, modes: usize) -> Self {
        Self {
            seed: 0,
            path_index: 0,
            grid,
            noise: NoiseSpec::Off,
            scale: 1.0,
            increments: None,
            z: vec![SpectralField::zeros(modes); grid.steps + 1],
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn increments(&self) -> Option<&Increments> {
        self.increments.as_ref()
    }

    /// `z_k = (G.W)_{t_k}` for `k = 0..=steps`.
    pub fn z(&self) -> &[SpectralField] {
        &self.z
    }

    pub fn modes(&self) -> usize {
        self.z[0].len()
    }

    /// The same Brownian path with `G` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            scale: self.scale * factor,
            z: self.z.iter().map(|z| z.scaled(factor)).collect(),
            ..self.clone()
        }
    }

    /// The same Brownian path observed on a grid `factor` times coarser.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        let grid = TimeGrid::new(self.grid.dt * factor as f64, self.grid.steps / factor)?;
        match &self.increments {
            None => Ok(Self::zero(grid, self.modes())),
            Some(inc) => {
                let inc = inc.coarsened(factor)?;
                let loadings = self.noise.loadings(self.modes())?;
                let z = accumulate(&inc, &loadings, self.noise.modulation(), self.scale, self.modes());
                Ok(Self {
                    grid,
                    increments: Some(inc),
                    z,
                    ..self.clone()
                })
            }
        }
    }

    /// Same Brownian path with `z` represented on `modes` basis functions.
    pub fn with_modes(&self, modes: usize) -> Result<Self> {
        match &self.increments {
            None => Ok(Self::zero(self.grid, modes)),
            Some(inc) => {
                let loadings = self.noise.loadings(modes)?;
                let z = accumulate(inc, &loadings, self.noise.modulation(), self.scale, modes);
                Ok(Self { z, ..self.clone() })
            }
        }
    }
}

fn accumulate(
    inc: &Increments,
    loadings: &[SpectralField],
    modulation: Modulation,
    scale: f64,
    modes: usize,
) -> Vec<SpectralField> {
    let mut z = Vec::with_capacity(inc.steps + 1);
    let mut current = SpectralField::zeros(modes);
    z.push(current.clone());
    for k in 0..inc.steps {
        // Left-point (Ito) weight.
        let psi = scale * modulation.eval(k as f64 * inc.dt);
        for (c, loading) in loadings.iter().enumerate() {
            current.axpy(psi * inc.get(c, k), loading);
        }
        z.push(current.clone());
    }
    z
}

/// Builds `(G.W)` on `grid` for a `modes`-function basis (path index 0).
pub fn gw_path(noise: &NoiseSpec, grid: TimeGrid, seed: u64, modes: usize) -> Result<SamplePath> {
    gw_path_indexed(noise, grid, seed, 0, modes)
}

/// Builds `(G.W)` for Monte Carlo path `path`.
pub fn gw_path_indexed(
    noise: &NoiseSpec,
    grid: TimeGrid,
    seed: u64,
    path: u64,
    modes: usize,
) -> Result<SamplePath> {
    noise.validate()?;
    let loadings = noise.loadings(modes)?;
    if matches!(noise, NoiseSpec::Off) || grid.steps == 0 {
        return Ok(SamplePath {
            seed,
            path_index: path,
            noise: noise.clone(),
            ..SamplePath::zero(grid, modes)
        });
    }
    let inc = sample_path_increments(seed, path, grid, noise.channels())?;
    let z = accumulate(&inc, &loadings, noise.modulation(), 1.0, modes);
    Ok(SamplePath {
        seed,
        path_index: path,
        grid,
        noise: noise.clone(),
        scale: 1.0,
        increments: Some(inc),
        z,
    })
}

/// Monte Carlo mean with its standard error, against an analytic target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub target: f64,
    pub paths: usize,
}

impl MonteCarloEstimate {
    pub fn from_samples(samples: &[f64], target: f64) -> Self {
        let (mean, stderr) = mean_and_stderr(samples);
        Self {
            mean,
            stderr,
            target,
            paths: samples.len(),
        }
    }

    pub fn rel_err(&self) -> f64 {
        (self.mean - self.target).abs() / self.target.abs()
    }

    /// `|mean - target|` in units of the standard error.
    pub fn z_score(&self) -> f64 {
        (self.mean - self.target).abs() / self.stderr
    }
}

/// Sample mean and standard error, summed in slice order.
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_paths(paths: usize) -> Result<()> {
    if paths < 100 {
        return Err(invalid("paths", format!("need at least 100 paths, got {paths}")));
    }
    Ok(())
}

/// Terminal coefficients of `(G.W)_T` for one path, without storing `z`.
fn terminal_gw(noise: &NoiseSpec, loadings: &[SpectralField], grid: TimeGrid, seed: u64, path: u64) -> f64 {
    let modulation = noise.modulation();
    let sd = grid.dt.sqrt();
    let modes = loadings.first().map_or(0, SpectralField::len);
    let mut z = SpectralField::zeros(modes);
    for (c, loading) in loadings.iter().enumerate() {
        let mut rng = channel_rng(seed, path, c);
        let mut weighted = 0.0;
        for k in 0..grid.steps {
            let xi: f64 = StandardNormal.sample(&mut rng);
            weighted += modulation.eval(grid.time(k)) * sd * xi;
        }
        z.axpy(weighted, loading);
    }
    z.norm().powi(2)
}

/// Monte Carlo check of the Wiener isometry `E ||(G.W)_T||^2`.
///
/// Paths are independent (keyed by index) and reduced in index order, so the
/// result does not depend on the thread count.
pub fn isometry_estimate(
    noise: &NoiseSpec,
    grid: TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    check_paths(paths)?;
    noise.validate()?;
    let loadings = noise.loadings(noise.required_modes())?;
    let samples: Vec<f64> = (0..paths as u64)
        .into_par_iter()
        .map(|p| terminal_gw(noise, &loadings, grid, seed, p))
        .collect();
    Ok(MonteCarloEstimate::from_samples(
        &samples,
        noise.isometry_target(grid.horizon()),
    ))
}

/// Per-channel `(mu_n, gamma_n psi / sqrt(mu_n))` of cylindrical noise.
fn convolution_channels(noise: &NoiseSpec, exact: bool) -> Result<Vec<(f64, f64)>> {
    match noise {
        NoiseSpec::Cylindrical {
            modes, modulation, ..
        } => {
            if exact && !modulation.is_constant() {
                return Err(Error::RequiresConstantG);
            }
            Ok((1..=*modes)
                .map(|n| (eigenvalue(n), noise.gain(n) / eigenvalue(n).sqrt()))
                .collect())
        }
        NoiseSpec::Off => Ok(Vec::new()),
        NoiseSpec::FiniteDim { .. } => Err(invalid(
            "noise.mode",
            "stochastic convolution is implemented for cylindrical noise",
        )),
    }
}

/// Exact per-mode Ornstein-Uhlenbeck recursion for `W^{A,G}` on one
/// channel: `x_{k+1} = e^{-mu dt} x_k + amp sqrt((1 - e^{-2 mu dt}) / (2 mu)) xi_k`.
struct OuChannel {
    decay: f64,
    kick: f64,
    rng: ChaCha8Rng,
    state: f64,
}

impl OuChannel {
    fn new(mu: f64, amp: f64, dt: f64, rng: ChaCha8Rng) -> Self {
        Self {
            decay: (-mu * dt).exp(),
            kick: amp * (-(-2.0 * mu * dt).exp_m1() / (2.0 * mu)).sqrt(),
            rng,
            state: 0.0,
        }
    }

    fn advance(&mut self) -> f64 {
        let xi: f64 = StandardNormal.sample(&mut self.rng);
        self.state = self.decay * self.state + self.kick * xi;
        self.state
    }
}

fn ou_channels(noise: &NoiseSpec, grid: TimeGrid, seed: u64, path: u64) -> Result<Vec<OuChannel>> {
    let psi = noise.modulation().eval(0.0);
    Ok(convolution_channels(noise, true)?
        .into_iter()
        .enumerate()
        .map(|(c, (mu, amp))| OuChannel::new(mu, psi * amp, grid.dt, channel_rng(seed, path, c)))
        .collect())
}

/// Trajectory of the stochastic convolution `W^{A,G}_t = int_0^t S(t-s) G dW_s`
/// for time-constant cylindrical noise, sampled exactly mode by mode.
pub fn stochastic_convolution(
    noise: &NoiseSpec,
    grid: TimeGrid,
    seed: u64,
    modes: usize,
) -> Result<Vec<SpectralField>> {
    noise.validate()?;
    if noise.required_modes() > modes {
        return Err(Error::ModeOverflow {
            requested: noise.required_modes(),
            available: modes,
        });
    }
    let mut channels = ou_channels(noise, grid, seed, 0)?;
    let mut out = Vec::with_capacity(grid.steps + 1);
    let mut current = SpectralField::zeros(modes);
    out.push(current.clone());
    for _ in 0..grid.steps {
        for (c, ch) in channels.iter_mut().enumerate() {
            current.coeffs_mut()[c + 1] = ch.advance();
        }
        out.push(current.clone());
    }
    Ok(out)
}

/// Lower-order fallback for time-dependent `G_t = psi(t) G`:
/// `x_{k+1} = e^{-mu dt} (x_k + psi(t_k) amp dB_k)`, driven by the same
/// increments as [`gw_path`].
pub fn stochastic_convolution_ito(
    noise: &NoiseSpec,
    grid: TimeGrid,
    seed: u64,
    modes: usize,
) -> Result<Vec<SpectralField>> {
    noise.validate()?;
    if noise.required_modes() > modes {
        return Err(Error::ModeOverflow {
            requested: noise.required_modes(),
            available: modes,
        });
    }
    let channels = convolution_channels(noise, false)?;
    let modulation = noise.modulation();
    let mut out = vec![SpectralField::zeros(modes); grid.steps + 1];
    if grid.steps == 0 {
        return Ok(out);
    }
    let inc = sample_path_increments(seed, 0, grid, channels.len())?;
    for (c, (mu, amp)) in channels.into_iter().enumerate() {
        let decay = (-mu * grid.dt).exp();
        let mut x = 0.0;
        for k in 0..grid.steps {
            x = decay * (x + modulation.eval(grid.time(k)) * amp * inc.get(c, k));
            out[k + 1].coeffs_mut()[c + 1] = x;
        }
    }
    Ok(out)
}

/// Monte Carlo estimate of `E ||W^{A,G}_T||^2` against the trace formula.
pub fn convolution_estimate(
    noise: &NoiseSpec,
    grid: TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    check_paths(paths)?;
    noise.validate()?;
    let target = noise.convolution_trace(grid.horizon())?;
    let samples: Vec<f64> = (0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut channels = ou_channels(noise, grid, seed, p)?;
            let mut last = vec![0.0; channels.len()];
            for _ in 0..grid.steps {
                for (x, ch) in last.iter_mut().zip(channels.iter_mut()) {
                    *x = ch.advance();
                }
            }
            Ok(last.iter().map(|x| x * x).sum())
        })
        .collect::<Result<_>>()?;
    Ok(MonteCarloEstimate::from_samples(&samples, target))
}

/// Maximal-moment diagnostic `E sup_{t <= T} ||W^{A,G}_t||^p` compared with
/// `trace(T)^{p/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupMoment {
    pub horizon: f64,
    pub p: f64,
    pub mean: f64,
    pub stderr: f64,
    pub trace_power: f64,
}

impl SupMoment {
    pub fn ratio(&self) -> f64 {
        self.mean / self.trace_power
    }
}

pub fn convolution_sup_moment(
    noise: &NoiseSpec,
    grid: TimeGrid,
    paths: usize,
    seed: u64,
    p: f64,
) -> Result<SupMoment> {
    check_paths(paths)?;
    if !(p >= 2.0) {
        return Err(invalid("p", "moment order must be at least 2"));
    }
    noise.validate()?;
    let trace = noise.convolution_trace(grid.horizon())?;
    let samples: Vec<f64> = (0..paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut channels = ou_channels(noise, grid, seed, path)?;
            let mut sup: f64 = 0.0;
            for _ in 0..grid.steps {
                let sq: f64 = channels.iter_mut().map(|ch| ch.advance().powi(2)).sum();
                sup = sup.max(sq);
            }
            Ok(sup.powf(p / 2.0))
        })
        .collect::<Result<_>>()?;
    let (mean, stderr) = mean_and_stderr(&samples);
    Ok(SupMoment {
        horizon: grid.horizon(),
        p,
        mean,
        stderr,
        trace_power: trace.powf(p / 2.0),
    })
}
