//! Synthetic MIMO-OFDM CSI from a multipath superposition model.
//!
//! Every antenna pair sees a set of propagation paths with complex attenuation
//! `A_l` and length `d_l(t)`; the CSI of subcarrier `i` is
//! `h_i(t) = Σ_l A_l exp(-j 2π d_l(t) / λ_i)` plus circular complex Gaussian
//! noise. Chest paths move sinusoidally (breathing) and limb paths carry
//! short bursts (periodic limb movement). Apnea is rendered as a collapse of
//! the breathing amplitude over a sustained interval.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::csi_data::{CsiRecord, LabelInterval, Session, SessionMeta, SleepClass};
use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Time-varying path length offset in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Displacement {
    Static,
    Sinusoid { amplitude: f64, freq: f64, phase: f64 },
    /// Half-sine enveloped oscillation active on `[onset, onset + duration]`.
    Burst { onset: f64, duration: f64, amplitude: f64, jerk_freq: f64 },
}

impl Displacement {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Displacement::Static => 0.0,
            Displacement::Sinusoid { amplitude, freq, phase } => amplitude * (2.0 * PI * freq * t + phase).sin(),
            Displacement::Burst { onset, duration, amplitude, jerk_freq } => {
                let u = t - onset;
                if u < 0.0 || u > duration {
                    0.0
                } else {
                    amplitude * (PI * u / duration).sin() * (2.0 * PI * jerk_freq * u).sin()
                }
            }
        }
    }

    fn max_freq(&self) -> f64 {
        match *self {
            Displacement::Static => 0.0,
            Displacement::Sinusoid { freq, .. } => freq,
            Displacement::Burst { jerk_freq, duration, .. } => jerk_freq + 0.5 / duration,
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Displacement::Static => true,
            Displacement::Sinusoid { amplitude, freq, phase } => amplitude.is_finite() && freq.is_finite() && phase.is_finite(),
            Displacement::Burst { onset, duration, amplitude, jerk_freq } => {
                onset.is_finite() && duration.is_finite() && duration > 0.0 && amplitude.is_finite() && jerk_freq.is_finite()
            }
        }
    }
}

/// What drives a path's motion beyond its own displacement function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    /// Furniture, walls, line of sight.
    #[default]
    Static,
    /// Reflection off the chest; its displacement is scaled by the breathing gain.
    Chest,
    /// Reflection off a limb; activation-plan bursts are added to it.
    Limb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    pub attenuation: Complex64,
    pub base_distance: f64,
    pub displacement: Displacement,
    #[serde(default)]
    pub kind: PathKind,
}

impl PathComponent {
    pub fn fixed(attenuation: Complex64, base_distance: f64) -> Self {
        Self { attenuation, base_distance, displacement: Displacement::Static, kind: PathKind::Static }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PairGeometry {
    pub paths: Vec<PathComponent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WavelengthMode {
    /// `λ_i = c / (f_c + Δf (i - S/2))`.
    #[default]
    PerSubcarrier,
    /// One wavelength `c / f_c` for every subcarrier.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub subcarriers: usize,
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    #[serde(default)]
    pub wavelength_mode: WavelengthMode,
    pub noise_std: f64,
    pub pairs: Vec<PairGeometry>,
    /// Labeled intervals; each one gets an activation plan for its class.
    #[serde(default)]
    pub schedule: Vec<LabelInterval>,
}

impl ScenarioSpec {
    pub fn wavelength(&self, sub: usize) -> f64 {
        SPEED_OF_LIGHT / self.subcarrier_freq(sub)
    }

    pub fn subcarrier_freq(&self, sub: usize) -> f64 {
        match self.wavelength_mode {
            WavelengthMode::Single => self.carrier_hz,
            WavelengthMode::PerSubcarrier => {
                self.carrier_hz + self.subcarrier_spacing_hz * (sub as f64 - self.subcarriers as f64 / 2.0)
            }
        }
    }

    fn validate(&self, duration: f64, rate: f64, plan: &ActivationPlan) -> Result<()> {
        let finite = self.carrier_hz.is_finite()
            && self.subcarrier_spacing_hz.is_finite()
            && self.noise_std.is_finite()
            && duration.is_finite()
            && rate.is_finite();
        if !finite {
            return Err(Error::Scenario("non-finite scenario value".into()));
        }
        if self.subcarriers == 0 || self.pairs.is_empty() {
            return Err(Error::Scenario("need at least one pair and one subcarrier".into()));
        }
        if self.noise_std < 0.0 || duration <= 0.0 || rate <= 0.0 || self.carrier_hz <= 0.0 {
            return Err(Error::Scenario("noise_std, duration, rate and carrier must be non-negative / positive".into()));
        }
        if (0..self.subcarriers).any(|i| self.subcarrier_freq(i) <= 0.0) {
            return Err(Error::Scenario("subcarrier frequency below zero".into()));
        }
        let mut max_freq: f64 = plan.bursts.iter().map(|b| b.max_freq()).fold(0.0, f64::max);
        for (p, pair) in self.pairs.iter().enumerate() {
            if pair.paths.is_empty() {
                return Err(Error::Scenario(format!("pair {p} has no paths")));
            }
            for path in &pair.paths {
                let ok = path.attenuation.re.is_finite()
                    && path.attenuation.im.is_finite()
                    && path.base_distance.is_finite()
                    && path.displacement.is_finite();
                if !ok {
                    return Err(Error::Scenario(format!("pair {p}: non-finite path parameters")));
                }
                if path.attenuation.norm() == 0.0 {
                    return Err(Error::Scenario(format!("pair {p}: zero path attenuation")));
                }
                max_freq = max_freq.max(path.displacement.max_freq());
            }
        }
        if rate < 2.0 * max_freq {
            return Err(Error::Scenario(format!("rate {rate} Hz is below twice the fastest motion ({max_freq} Hz)")));
        }
        Ok(())
    }
}

/// Which motions are active when: a piecewise-linear breathing gain applied
/// to chest paths plus limb bursts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivationPlan {
    /// `(time, gain)` knots, ascending in time; empty means gain 1 throughout.
    pub breathing_gain: Vec<(f64, f64)>,
    /// Limb bursts (`Displacement::Burst`).
    pub bursts: Vec<Displacement>,
    /// Sub-intervals where breathing is suppressed (apnea).
    pub flat_intervals: Vec<(f64, f64)>,
}

impl ActivationPlan {
    pub fn gain(&self, t: f64) -> f64 {
        let knots = &self.breathing_gain;
        match knots.iter().position(|&(kt, _)| kt > t) {
            None => knots.last().map_or(1.0, |k| k.1),
            Some(0) => knots[0].1,
            Some(i) => {
                let (t0, g0) = knots[i - 1];
                let (t1, g1) = knots[i];
                if t1 <= t0 {
                    g1
                } else {
                    g0 + (g1 - g0) * (t - t0) / (t1 - t0)
                }
            }
        }
    }

    pub fn burst_displacement(&self, t: f64) -> f64 {
        self.bursts.iter().map(|b| b.eval(t)).sum()
    }

    /// `(onset, end)` of every burst.
    pub fn burst_intervals(&self) -> Vec<(f64, f64)> {
        self.bursts
            .iter()
            .filter_map(|b| match *b {
                Displacement::Burst { onset, duration, .. } => Some((onset, onset + duration)),
                _ => None,
            })
            .collect()
    }

    fn shifted(mut self, offset: f64) -> Self {
        self.breathing_gain.iter_mut().for_each(|k| k.0 += offset);
        self.flat_intervals.iter_mut().for_each(|iv| {
            iv.0 += offset;
            iv.1 += offset;
        });
        for b in &mut self.bursts {
            if let Displacement::Burst { onset, .. } = b {
                *onset += offset;
            }
        }
        self
    }

    fn append(&mut self, other: ActivationPlan) {
        self.breathing_gain.extend(other.breathing_gain);
        self.bursts.extend(other.bursts);
        self.flat_intervals.extend(other.flat_intervals);
    }
}

/// Ranges for the per-class activation draws.
pub mod ranges {
    /// Breathing suppression during apnea, as a fraction of normal amplitude.
    pub const APNEA_GAIN: (f64, f64) = (0.0, 0.08);
    pub const APNEA_FLAT_SEC: (f64, f64) = (10.0, 14.0);
    pub const APNEA_RAMP_SEC: f64 = 1.0;
    pub const BURST_COUNT: (usize, usize) = (1, 3);
    pub const BURST_SEC: (f64, f64) = (0.5, 2.0);
    pub const BURST_JERK_HZ: (f64, f64) = (1.0, 2.0);
    pub const BURST_AMPLITUDE_M: (f64, f64) = (0.01, 0.03);
    pub const BREATHING_HZ: (f64, f64) = (0.2, 0.4);
    pub const BREATHING_AMPLITUDE_M: (f64, f64) = (0.002, 0.006);
    pub const LOS_M: (f64, f64) = (3.0, 6.0);
    /// Extra length of reflected paths over line of sight.
    pub const STATIC_EXCESS_M: (f64, f64) = (2.0, 20.0);
    pub const BODY_EXCESS_M: (f64, f64) = (3.0, 8.0);
    pub const STATIC_GAIN: (f64, f64) = (0.2, 0.6);
    pub const CHEST_GAIN: (f64, f64) = (0.15, 0.35);
    pub const LIMB_GAIN: (f64, f64) = (0.4, 0.8);
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws the activation plan of one class over `[0, duration)`.
///
/// * normal: breathing at full gain, no limb activity.
/// * apnea: breathing gain ramps (1 s) down to at most 8 % for a contiguous
///   10 to 14 s interval (shorter only if `duration` cannot hold it).
/// * plmd: full breathing plus 1 to 3 non-overlapping limb bursts of 0.5 to 2 s at
///   1 to 2 Hz.
pub fn make_class_schedule<R: Rng>(class: SleepClass, duration: f64, rng: &mut R) -> ActivationPlan {
    match class {
        SleepClass::Normal => ActivationPlan::default(),
        SleepClass::Apnea => {
            let ramp = ranges::APNEA_RAMP_SEC.min(duration / 4.0);
            let room = (duration - 2.0 * ramp).max(0.0);
            let flat_hi = ranges::APNEA_FLAT_SEC.1.min(room);
            let flat_lo = ranges::APNEA_FLAT_SEC.0.min(flat_hi);
            let flat = uniform(rng, (flat_lo, flat_hi));
            let onset = uniform(rng, (ramp, duration - ramp - flat));
            let g = uniform(rng, ranges::APNEA_GAIN);
            ActivationPlan {
                breathing_gain: vec![
                    (0.0, 1.0),
                    (onset - ramp, 1.0),
                    (onset, g),
                    (onset + flat, g),
                    (onset + flat + ramp, 1.0),
                    (duration, 1.0),
                ],
                bursts: Vec::new(),
                flat_intervals: vec![(onset, onset + flat)],
            }
        }
        SleepClass::Plmd => {
            let count = rng.random_range(ranges::BURST_COUNT.0..=ranges::BURST_COUNT.1);
            let mut bursts: Vec<Displacement> = Vec::new();
            let mut taken: Vec<(f64, f64)> = Vec::new();
            for _ in 0..count {
                for _attempt in 0..32 {
                    let dur = uniform(rng, ranges::BURST_SEC).min(duration / 2.0);
                    let onset = uniform(rng, (0.5f64.min(duration / 4.0), (duration - dur - 0.5).max(0.0)));
                    let clear = taken.iter().all(|&(a, b)| onset + dur + 1.0 <= a || onset >= b + 1.0);
                    if clear {
                        taken.push((onset, onset + dur));
                        bursts.push(Displacement::Burst {
                            onset,
                            duration: dur,
                            amplitude: uniform(rng, ranges::BURST_AMPLITUDE_M),
                            jerk_freq: uniform(rng, ranges::BURST_JERK_HZ),
                        });
                        break;
                    }
                }
            }
            bursts.sort_by(|a, b| onset_of(a).total_cmp(&onset_of(b)));
            ActivationPlan { breathing_gain: Vec::new(), bursts, flat_intervals: Vec::new() }
        }
    }
}

fn onset_of(d: &Displacement) -> f64 {
    match *d {
        Displacement::Burst { onset, .. } => onset,
        _ => 0.0,
    }
}

/// Builds the activation plan for a whole schedule.
pub fn plan_for_schedule<R: Rng>(schedule: &[LabelInterval], rng: &mut R) -> ActivationPlan {
    let mut plan = ActivationPlan::default();
    for iv in schedule {
        let part = make_class_schedule(iv.class, iv.end - iv.start, rng).shifted(iv.start);
        if part.breathing_gain.is_empty() {
            plan.breathing_gain.push((iv.start, 1.0));
            plan.breathing_gain.push((iv.end, 1.0));
        }
        plan.append(part);
    }
    plan.breathing_gain.sort_by(|a, b| a.0.total_cmp(&b.0));
    plan
}

/// Renders CSI for `duration` seconds at `rate` Hz, drawing the activation
/// plan from `spec.schedule` with `seed`.
pub fn render_csi(spec: &ScenarioSpec, duration: f64, rate: f64, seed: u64) -> Result<Session> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = plan_for_schedule(&spec.schedule, &mut rng);
    render_with_plan(spec, &plan, duration, rate, &mut rng)
}

/// Renders CSI under an explicit activation plan. Records are emitted at
/// exactly `k / rate` for every pair.
pub fn render_with_plan<R: Rng>(spec: &ScenarioSpec, plan: &ActivationPlan, duration: f64, rate: f64, rng: &mut R) -> Result<Session> {
    spec.validate(duration, rate, plan)?;
    let steps = (duration * rate - 1e-9).ceil().max(0.0) as usize;
    let s = spec.subcarriers;
    let noise = if spec.noise_std > 0.0 {
        Some(Normal::new(0.0, spec.noise_std / 2f64.sqrt()).map_err(|e| Error::Scenario(e.to_string()))?)
    } else {
        None
    };
    let f0 = spec.subcarrier_freq(0);
    let df = if s > 1 { spec.subcarrier_freq(1) - f0 } else { 0.0 };
    let mut records = Vec::with_capacity(steps * spec.pairs.len());
    let mut values = vec![Complex64::new(0.0, 0.0); s];
    for k in 0..steps {
        let t = k as f64 / rate;
        let gain = plan.gain(t);
        let burst = plan.burst_displacement(t);
        for (p, pair) in spec.pairs.iter().enumerate() {
            values.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for path in &pair.paths {
                let motion = match path.kind {
                    PathKind::Static => path.displacement.eval(t),
                    PathKind::Chest => gain * path.displacement.eval(t),
                    PathKind::Limb => path.displacement.eval(t) + burst,
                };
                let d = path.base_distance + motion;
                // exp(-j2π d f_i / c) over subcarriers is geometric in i.
                let mut term = path.attenuation * Complex64::from_polar(1.0, -2.0 * PI * d * f0 / SPEED_OF_LIGHT);
                let step = Complex64::from_polar(1.0, -2.0 * PI * d * df / SPEED_OF_LIGHT);
                for v in values.iter_mut() {
                    *v += term;
                    term *= step;
                }
            }
            let mut row = values.clone();
            if let Some(n) = &noise {
                for v in row.iter_mut() {
                    *v += Complex64::new(n.sample(rng), n.sample(rng));
                }
            }
            records.push(CsiRecord { timestamp: t, pair: p, values: row });
        }
    }
    let mut meta = SessionMeta::new(spec.pairs.len(), s, rate);
    meta.label_track = spec.schedule.clone();
    Ok(Session { meta, records })
}

/// Dataset generation settings. Geometry and motion parameters are jittered
/// per session inside fixed ranges to emulate different sleepers and rooms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Sessions per class, indexed normal / apnea / plmd.
    pub per_class: [usize; 3],
    pub duration_sec: f64,
    pub rate: f64,
    pub pairs: usize,
    pub subcarriers: usize,
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub wavelength_mode: WavelengthMode,
    pub noise_std: (f64, f64),
    /// Probability that one pair per session gets a weak chest reflection.
    pub modest_pair_prob: f64,
    /// Chest attenuation factor range applied to a modest pair.
    pub modest_factor: (f64, f64),
    /// Forces `(pair, factor)` as the only modest pair in every session.
    pub weak_pair: Option<(usize, f64)>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            per_class: [10, 10, 10],
            duration_sec: 20.0,
            rate: 10.0,
            pairs: 4,
            subcarriers: 114,
            carrier_hz: 5.0e9,
            subcarrier_spacing_hz: 312_500.0,
            wavelength_mode: WavelengthMode::PerSubcarrier,
            noise_std: (0.005, 0.02),
            modest_pair_prob: 0.5,
            modest_factor: (0.1, 0.3),
            weak_pair: None,
        }
    }
}

impl DatasetConfig {
    pub fn total(&self) -> usize {
        self.per_class.iter().sum()
    }

    pub fn class_of(&self, index: usize) -> Option<SleepClass> {
        let mut acc = 0;
        for class in SleepClass::ALL {
            acc += self.per_class[class.index()];
            if index < acc {
                return Some(class);
            }
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_class.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParam("every class needs at least one session".into()));
        }
        if self.pairs == 0 || self.subcarriers == 0 || !(self.duration_sec > 0.0) || !(self.rate > 0.0) {
            return Err(Error::InvalidParam("pairs, subcarriers, duration and rate must be positive".into()));
        }
        if let Some((p, f)) = self.weak_pair {
            if p >= self.pairs || !(f > 0.0) {
                return Err(Error::InvalidParam(format!("weak pair ({p}, {f}) invalid")));
            }
        }
        Ok(())
    }
}

/// One generated session with its hidden generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSession {
    pub index: usize,
    pub class: SleepClass,
    pub scenario: ScenarioSpec,
    pub plan: ActivationPlan,
    pub session: Session,
}

fn random_phase<R: Rng>(rng: &mut R, magnitude: f64) -> Complex64 {
    Complex64::from_polar(magnitude, rng.random_range(0.0..2.0 * PI))
}

/// Draws a random room/sleeper geometry for one session.
pub fn random_scenario<R: Rng>(config: &DatasetConfig, rng: &mut R) -> ScenarioSpec {
    let breathing = Displacement::Sinusoid {
        amplitude: uniform(rng, ranges::BREATHING_AMPLITUDE_M),
        freq: uniform(rng, ranges::BREATHING_HZ),
        phase: rng.random_range(0.0..2.0 * PI),
    };
    let (modest, factor) = match config.weak_pair {
        Some((p, f)) => (Some(p), f),
        None => {
            let pick = rng.random_bool(config.modest_pair_prob.clamp(0.0, 1.0));
            let p = rng.random_range(0..config.pairs);
            let f = uniform(rng, config.modest_factor);
            (pick.then_some(p), f)
        }
    };
    let pairs = (0..config.pairs)
        .map(|p| {
            let los = uniform(rng, ranges::LOS_M);
            let mut paths = vec![PathComponent::fixed(random_phase(rng, 1.0), los)];
            let reflections = rng.random_range(2..=3);
            for _ in 0..reflections {
                let mag = uniform(rng, ranges::STATIC_GAIN);
                paths.push(PathComponent::fixed(random_phase(rng, mag), los + uniform(rng, ranges::STATIC_EXCESS_M)));
            }
            let mut chest_mag = uniform(rng, ranges::CHEST_GAIN);
            if modest == Some(p) {
                chest_mag *= factor;
            }
            paths.push(PathComponent {
                attenuation: random_phase(rng, chest_mag),
                base_distance: los + uniform(rng, ranges::BODY_EXCESS_M),
                displacement: breathing,
                kind: PathKind::Chest,
            });
            let limb_mag = uniform(rng, ranges::LIMB_GAIN);
            paths.push(PathComponent {
                attenuation: random_phase(rng, limb_mag),
                base_distance: los + uniform(rng, ranges::BODY_EXCESS_M),
                displacement: Displacement::Static,
                kind: PathKind::Limb,
            });
            PairGeometry { paths }
        })
        .collect();
    ScenarioSpec {
        subcarriers: config.subcarriers,
        carrier_hz: config.carrier_hz,
        subcarrier_spacing_hz: config.subcarrier_spacing_hz,
        wavelength_mode: config.wavelength_mode,
        noise_std: uniform(rng, config.noise_std),
        pairs,
        schedule: Vec::new(),
    }
}

/// Generates session `index` of the dataset. Each session draws from its
/// own ChaCha stream, so sessions can be produced independently and in any
/// order with identical results.
pub fn gen_session(config: &DatasetConfig, index: usize, seed: u64) -> Result<GeneratedSession> {
    config.validate()?;
    let class = config
        .class_of(index)
        .ok_or_else(|| Error::InvalidParam(format!("session index {index} beyond dataset size {}", config.total())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let mut scenario = random_scenario(config, &mut rng);
    scenario.schedule = vec![LabelInterval::new(0.0, config.duration_sec, class)];
    let plan = make_class_schedule(class, config.duration_sec, &mut rng);
    let session = render_with_plan(&scenario, &plan, config.duration_sec, config.rate, &mut rng)?;
    Ok(GeneratedSession { index, class, scenario, plan, session })
}

/// Generates the whole dataset in index order.
pub fn gen_dataset(config: &DatasetConfig, seed: u64) -> Result<Vec<GeneratedSession>> {
    (0..config.total()).map(|i| gen_session(config, i, seed)).collect()
}
