//! Scenario geometry, Ricean block-fading synthesis and the per-frame
//! received-signal model of the RIS-assisted uplink.
//!
//! The BS and the RIS are static; the UE position is drawn once per episode.
//! Each link gain is the free-space amplitude `λ/(4πd)` times a Ricean mix of
//! a spherical-wavefront LoS term and circular complex Gaussian scatter.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::ChannelError;

/// Largest supported phase-set cardinality (indices are stored as `u8`).
pub const MAX_PHASE_LEVELS: usize = 256;

pub fn dbm_to_watt(level_dbm: f64) -> f64 {
    10f64.powf((level_dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Amplitude of the Friis free-space gain, `λ/(4πd)`.
pub fn free_space_gain(distance_m: f64, wavelength_m: f64) -> Result<f64, ChannelError> {
    if distance_m <= 0.0 || !distance_m.is_finite() {
        return Err(ChannelError::NonPositiveDistance(distance_m));
    }
    Ok(wavelength_m / (4.0 * PI * distance_m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Position) -> f64 {
        self.squared_distance(other).sqrt()
    }

    pub fn squared_distance(&self, other: &Position) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        dx * dx + dy * dy + dz * dz
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Axis-aligned UE region: `x_center ± x_half`, `y_center ± y_half`, fixed `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeRegion {
    pub x_center: f64,
    pub x_half: f64,
    pub y_center: f64,
    pub y_half: f64,
    pub z: f64,
}

impl UeRegion {
    pub fn center(&self) -> Position {
        Position::new(self.x_center, self.y_center, self.z)
    }

    pub fn contains(&self, p: &Position) -> bool {
        (p.x - self.x_center).abs() <= self.x_half && (p.y - self.y_center).abs() <= self.y_half && p.z == self.z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGeometry {
    pub bs_position: Position,
    /// Position of the top-left RIS element.
    pub ris_origin: Position,
    pub ris_rows: usize,
    pub ris_cols: usize,
    pub element_spacing: f64,
    pub ue_region: UeRegion,
}

impl ScenarioGeometry {
    pub fn n_ris(&self) -> usize {
        self.ris_rows * self.ris_cols
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.n_ris() == 0 {
            return Err(ChannelError::InvalidGeometry("RIS must have at least one element".into()));
        }
        if self.element_spacing <= 0.0 || !self.element_spacing.is_finite() {
            return Err(ChannelError::InvalidGeometry(format!("element spacing must be positive, got {}", self.element_spacing)));
        }
        let r = &self.ue_region;
        if !(r.x_half >= 0.0 && r.y_half >= 0.0) {
            return Err(ChannelError::InvalidGeometry("UE region half-widths must be >= 0".into()));
        }
        let all = [self.bs_position, self.ris_origin, r.center()];
        if !all.iter().all(Position::is_finite) || !r.x_half.is_finite() || !r.y_half.is_finite() {
            return Err(ChannelError::InvalidGeometry("non-finite coordinate".into()));
        }
        Ok(())
    }

    /// RIS element centers in row-major order. The surface lies in the plane
    /// `x = ris_origin.x`, facing +x; rows descend in z, columns increase in y.
    pub fn ris_element_positions(&self) -> Vec<Position> {
        let o = self.ris_origin;
        let d = self.element_spacing;
        (0..self.ris_rows)
            .flat_map(|r| (0..self.ris_cols).map(move |c| Position::new(o.x, o.y + c as f64 * d, o.z - r as f64 * d)))
            .collect()
    }
}

pub fn sample_ue_position<R: Rng + ?Sized>(geometry: &ScenarioGeometry, rng: &mut R) -> Position {
    let r = &geometry.ue_region;
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    Position::new(r.x_center - r.x_half + 2.0 * r.x_half * u, r.y_center - r.y_half + 2.0 * r.y_half * v, r.z)
}

/// How the transmit power enters the received-signal amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PowerScaling {
    /// Amplitude `√P`: received power scales linearly with P.
    #[default]
    Sqrt,
    /// Amplitude `P`, the received-signal equation read literally.
    Literal,
}

impl PowerScaling {
    pub fn amplitude(self, power_watt: f64) -> f64 {
        match self {
            PowerScaling::Sqrt => power_watt.sqrt(),
            PowerScaling::Literal => power_watt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub carrier_frequency_hz: f64,
    /// Ricean factor in dB; `inf` gives a pure LoS channel.
    pub ricean_kappa_db: f64,
    pub direct_extra_attenuation_db: f64,
    pub noise_power_dbm: f64,
    /// When false, observations are noiseless. The configured noise power
    /// still sets the input normalization of the networks.
    pub noise_enabled: bool,
    pub max_power_dbm: f64,
    pub power_scaling: PowerScaling,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.carrier_frequency_hz <= 0.0 || !self.carrier_frequency_hz.is_finite() {
            return Err(ChannelError::InvalidParams(format!("carrier frequency must be positive, got {}", self.carrier_frequency_hz)));
        }
        if !self.noise_power_dbm.is_finite() {
            return Err(ChannelError::InvalidParams("noise power must be finite".into()));
        }
        if self.ricean_kappa_db.is_nan() {
            return Err(ChannelError::InvalidParams("Ricean factor is NaN".into()));
        }
        if !self.direct_extra_attenuation_db.is_finite() || !self.max_power_dbm.is_finite() {
            return Err(ChannelError::InvalidParams("attenuation and max power must be finite".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        const SPEED_OF_LIGHT: f64 = 299_792_458.0;
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    pub fn kappa_linear(&self) -> f64 {
        db_to_linear(self.ricean_kappa_db)
    }

    /// Weights `(√(κ/(κ+1)), √(1/(κ+1)))` of the LoS and scatter components.
    pub fn ricean_weights(&self) -> (f64, f64) {
        let k = self.kappa_linear();
        if k.is_infinite() {
            (1.0, 0.0)
        } else {
            ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
        }
    }

    pub fn noise_watt(&self) -> f64 {
        dbm_to_watt(self.noise_power_dbm)
    }

    pub fn max_power_watt(&self) -> f64 {
        dbm_to_watt(self.max_power_dbm)
    }
}

/// Ordered set Θ of phase levels; element response is `e^{jπθ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSet {
    values: Vec<f64>,
}

impl PhaseSet {
    pub fn new(values: Vec<f64>) -> Result<Self, ChannelError> {
        if values.len() < 2 || values.len() > MAX_PHASE_LEVELS {
            return Err(ChannelError::InvalidPhaseSet(format!("need between 2 and {MAX_PHASE_LEVELS} levels, got {}", values.len())));
        }
        if values.iter().any(|v| !(0.0..2.0).contains(v)) {
            return Err(ChannelError::InvalidPhaseSet("levels must lie in [0, 2)".into()));
        }
        for (i, a) in values.iter().enumerate() {
            if values[i + 1..].iter().any(|b| a == b) {
                return Err(ChannelError::InvalidPhaseSet(format!("duplicate level {a}")));
            }
        }
        Ok(Self { values })
    }

    /// Θ = {0, 1}: responses +1 and −1.
    pub fn binary() -> Self {
        Self { values: vec![0.0, 1.0] }
    }

    /// `levels` equally spaced phases covering the unit circle.
    pub fn uniform(levels: usize) -> Result<Self, ChannelError> {
        Self::new((0..levels).map(|k| 2.0 * k as f64 / levels as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn response(&self, index: u8) -> Complex64 {
        Complex64::from_polar(1.0, PI * self.values[index as usize])
    }
}

/// Per-element indices into a [`PhaseSet`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RisProfile {
    indices: Vec<u8>,
}

impl RisProfile {
    pub fn new(indices: Vec<u8>, phase_set: &PhaseSet) -> Result<Self, ChannelError> {
        if let Some((element, &index)) = indices.iter().enumerate().find(|(_, &i)| i as usize >= phase_set.len()) {
            return Err(ChannelError::InvalidProfileIndex { element, index: index as usize, levels: phase_set.len() });
        }
        Ok(Self { indices })
    }

    /// Caller guarantees every index is below the phase-set size.
    pub(crate) fn from_raw(indices: Vec<u8>) -> Self {
        Self { indices }
    }

    pub fn zeros(n_ris: usize) -> Self {
        Self { indices: vec![0; n_ris] }
    }

    pub fn random<R: Rng + ?Sized>(n_ris: usize, phase_set: &PhaseSet, rng: &mut R) -> Self {
        let k = phase_set.len();
        Self { indices: (0..n_ris).map(|_| rng.random_range(0..k) as u8).collect() }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u8] {
        &self.indices
    }
}

/// Unit-modulus response vector `φ` of a profile.
pub fn phase_vector(profile: &RisProfile, phase_set: &PhaseSet) -> Vec<Complex64> {
    profile.indices.iter().map(|&i| phase_set.response(i)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h_direct: Complex64,
    pub h_bs_ris: Vec<Complex64>,
    pub h_ris_ue: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn is_finite(&self) -> bool {
        let ok = |c: &Complex64| c.re.is_finite() && c.im.is_finite();
        ok(&self.h_direct) && self.h_bs_ris.iter().all(ok) && self.h_ris_ue.iter().all(ok)
    }

    /// Noiseless unit-amplitude gain `h_d + Σ h_bs,ris[i]·φ_i·h_ris,ue[i]`.
    pub fn effective_gain(&self, phases: &[Complex64]) -> Complex64 {
        self.h_bs_ris.iter().zip(phases).zip(&self.h_ris_ue).fold(self.h_direct, |acc, ((a, p), b)| acc + a * p * b)
    }
}

/// Standard circular complex Gaussian, `E|w|² = 1`.
pub fn circular_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Deterministic part of a link: free-space amplitude times the LoS phasor.
fn los_term(a: &Position, b: &Position, wavelength: f64) -> Result<Complex64, ChannelError> {
    let d = a.distance(b);
    let gain = free_space_gain(d, wavelength)?;
    Ok(Complex64::from_polar(gain, -2.0 * PI * d / wavelength))
}

/// Pre-computed LoS components for one UE position. Fading draws are cheap
/// once this is built, so an episode builds it once and redraws per frame.
#[derive(Debug, Clone)]
pub struct LinkGeometry {
    los_direct: Complex64,
    los_bs_ris: Vec<Complex64>,
    los_ris_ue: Vec<Complex64>,
}

/// Static scenario: geometry, channel parameters and phase set, with the
/// BS–RIS link geometry cached.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub geometry: ScenarioGeometry,
    pub params: ChannelParams,
    pub phase_set: PhaseSet,
    elements: Vec<Position>,
    los_bs_ris: Vec<Complex64>,
    direct_scale: f64,
}

impl Scenario {
    pub fn new(geometry: ScenarioGeometry, params: ChannelParams, phase_set: PhaseSet) -> Result<Self, ChannelError> {
        geometry.validate()?;
        params.validate()?;
        let lambda = params.wavelength();
        let elements = geometry.ris_element_positions();
        let los_bs_ris = elements.iter().map(|e| los_term(&geometry.bs_position, e, lambda)).collect::<Result<Vec<_>, _>>()?;
        let direct_scale = 10f64.powf(-params.direct_extra_attenuation_db / 20.0);
        Ok(Self { geometry, params, phase_set, elements, los_bs_ris, direct_scale })
    }

    pub fn n_ris(&self) -> usize {
        self.elements.len()
    }

    pub fn element_positions(&self) -> &[Position] {
        &self.elements
    }

    pub fn max_power_watt(&self) -> f64 {
        self.params.max_power_watt()
    }

    pub fn link_geometry(&self, ue: &Position) -> Result<LinkGeometry, ChannelError> {
        let lambda = self.params.wavelength();
        let los_direct = los_term(&self.geometry.bs_position, ue, lambda)? * self.direct_scale;
        let los_ris_ue = self.elements.iter().map(|e| los_term(e, ue, lambda)).collect::<Result<Vec<_>, _>>()?;
        Ok(LinkGeometry { los_direct, los_bs_ris: self.los_bs_ris.clone(), los_ris_ue })
    }

    /// One block-fading realization for a UE whose link geometry is known.
    pub fn draw_channel<R: Rng + ?Sized>(&self, links: &LinkGeometry, rng: &mut R) -> ChannelRealization {
        let (w_los, w_nlos) = self.params.ricean_weights();
        let mut mix = |los: Complex64| {
            let scatter = circular_gaussian(rng);
            los * w_los + scatter * (los.norm() * w_nlos)
        };
        let h_direct = mix(links.los_direct);
        let h_bs_ris = links.los_bs_ris.iter().map(|&l| mix(l)).collect();
        let h_ris_ue = links.los_ris_ue.iter().map(|&l| mix(l)).collect();
        ChannelRealization { h_direct, h_bs_ris, h_ris_ue }
    }

    pub fn sample_channel<R: Rng + ?Sized>(&self, ue: &Position, rng: &mut R) -> Result<ChannelRealization, ChannelError> {
        Ok(self.draw_channel(&self.link_geometry(ue)?, rng))
    }

    /// Received baseband sample for pilot `x = 1` at the given transmit power.
    pub fn synthesize_observation<R: Rng + ?Sized>(
        &self,
        realization: &ChannelRealization,
        profile: &RisProfile,
        power_watt: f64,
        rng: &mut R,
    ) -> Result<Complex64, ChannelError> {
        synthesize_observation(realization, profile, &self.phase_set, power_watt, &self.params, rng)
    }
}

/// Free-function form of [`Scenario::sample_channel`].
pub fn sample_channel<R: Rng + ?Sized>(
    geometry: &ScenarioGeometry,
    params: &ChannelParams,
    ue: &Position,
    rng: &mut R,
) -> Result<ChannelRealization, ChannelError> {
    let scenario = Scenario::new(geometry.clone(), params.clone(), PhaseSet::binary())?;
    scenario.sample_channel(ue, rng)
}

/// `a(P)·(h_d + h_bs,ris·diag(φ)·h_ris,ue)·x + n` with `x = 1`.
pub fn synthesize_observation<R: Rng + ?Sized>(
    realization: &ChannelRealization,
    profile: &RisProfile,
    phase_set: &PhaseSet,
    power_watt: f64,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<Complex64, ChannelError> {
    let p_max = params.max_power_watt();
    if !(0.0..=p_max).contains(&power_watt) {
        return Err(ChannelError::PowerOutOfRange { power: power_watt, max: p_max });
    }
    if profile.len() != realization.h_bs_ris.len() || realization.h_ris_ue.len() != profile.len() {
        return Err(ChannelError::DimensionMismatch { expected: realization.h_bs_ris.len(), got: profile.len() });
    }
    let gain = realization
        .h_bs_ris
        .iter()
        .zip(profile.indices())
        .zip(&realization.h_ris_ue)
        .fold(realization.h_direct, |acc, ((a, &i), b)| acc + a * phase_set.response(i) * b);
    let signal = gain * params.power_scaling.amplitude(power_watt);
    let noise = if params.noise_enabled { circular_gaussian(rng) * params.noise_watt().sqrt() } else { Complex64::new(0.0, 0.0) };
    Ok(signal + noise)
}
