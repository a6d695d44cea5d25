use std::f64::consts::FRAC_PI_3;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{
    complex_normal_vec, sample_rician, sample_rician_bs_ris, synth_bs_ris, BsPlacement, BsRisChannel, Link, LosChannel,
    RicianSpec,
};
use crate::error::{invalid, Result};
use crate::estimator::SearchSettings;
use crate::geometry::{array_response, field_boundaries, ArrayGeometry, CVector, ChannelPoint};

/// Distance law of the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    /// `r ~ U[max(d_B, d_FA / 10), 10 d_FA]`.
    Far,
    /// `r ~ U[d_B, d_FA / 10]`.
    Near,
}

/// Array-response model assumed by the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Spherical wavefront; searches distance as well as direction.
    Exact,
    /// Planar wavefront only.
    Far,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Wide,
    Random,
}

/// Room walk of the tracking experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingSpec {
    /// Side of the square room in metres; the RIS hangs centred on one wall.
    pub room_m: f64,
    /// Mean of the exponential speed law, m/s.
    pub mean_speed: f64,
    pub max_speed: f64,
    pub reestimation_period_ms: u32,
    pub sample_period_ms: u32,
    pub initial_pilots: usize,
    pub reestimation_pilots: usize,
    pub duration_s: f64,
    /// Amplitude of the direct path relative to one RIS element.
    pub direct_amplitude: f64,
}

impl Default for TrackingSpec {
    fn default() -> Self {
        Self {
            room_m: 4.0,
            mean_speed: 1.0,
            max_speed: 2.0,
            reestimation_period_ms: 10,
            sample_period_ms: 1,
            initial_pilots: 10,
            reestimation_pilots: 6,
            duration_s: 5.0,
            direct_amplitude: 8.0,
        }
    }
}

impl TrackingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.room_m > 0.0 && self.mean_speed >= 0.0 && self.max_speed >= self.mean_speed) {
            return Err(invalid("room size and speeds must be positive with max_speed >= mean_speed"));
        }
        if self.sample_period_ms == 0 || !self.reestimation_period_ms.is_multiple_of(self.sample_period_ms) {
            return Err(invalid("re-estimation period must be a positive multiple of the sample period"));
        }
        if self.initial_pilots < 2 || self.reestimation_pilots < 2 {
            return Err(invalid("every estimation needs at least two pilots"));
        }
        if !(self.duration_s > 0.0) || self.direct_amplitude < 0.0 {
            return Err(invalid("duration must be positive and direct amplitude non-negative"));
        }
        Ok(())
    }
}

/// Everything an experiment needs to draw links and run estimators.
///
/// Channel gains are normalized so that `|h_n g_n| = 1` on average; the
/// noise variance is 1 and the powers follow from the per-element SNRs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub frequency_hz: f64,
    pub n_h: usize,
    pub n_v: usize,
    /// Element spacing is `lambda / spacing_divisor` on both axes.
    pub spacing_divisor: f64,
    pub bs_antennas: usize,
    pub bs: BsPlacement,
    pub snr_pilot_db: f64,
    pub snr_data_db: f64,
    /// Direct-path power relative to one RIS element; 0 blocks it.
    pub direct_gain_factor: f64,
    pub azimuth_deg: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub field: Field,
    pub rician_k_db: Option<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub model: Model,
    pub init: InitMode,
    pub max_pilots: usize,
    pub search: SearchSettings,
    pub tracking: TrackingSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        let third = FRAC_PI_3.to_degrees();
        Self {
            frequency_hz: 28e9,
            n_h: 32,
            n_v: 32,
            spacing_divisor: 2.0,
            bs_antennas: 1,
            bs: BsPlacement::default(),
            snr_pilot_db: -10.0,
            snr_data_db: -20.0,
            direct_gain_factor: 64.0,
            azimuth_deg: [-third, third],
            elevation_deg: [-third, third],
            field: Field::Far,
            rician_k_db: None,
            trials: 2000,
            master_seed: 0,
            model: Model::Exact,
            init: InitMode::Wide,
            max_pilots: 16,
            search: SearchSettings::default(),
            tracking: TrackingSpec::default(),
        }
    }
}

/// Transmit powers with unit noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Powers {
    pub pilot_power: f64,
    pub data_snr: f64,
    pub noise_var: f64,
}

pub(crate) fn db(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

impl Scenario {
    /// Parses and validates a scenario file. Missing keys keep their
    /// defaults; unknown keys are rejected with their line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::at_frequency(self.n_h, self.n_v, self.frequency_hz, self.spacing_divisor)
    }

    pub fn powers(&self) -> Powers {
        Powers { pilot_power: db(self.snr_pilot_db), data_snr: db(self.snr_data_db), noise_var: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?.validate()?;
        self.search.validate()?;
        self.tracking.validate()?;
        if self.bs_antennas == 0 {
            return Err(invalid("bs_antennas must be at least 1"));
        }
        if !(self.snr_pilot_db.is_finite() && self.snr_data_db.is_finite()) {
            return Err(invalid("SNRs must be finite"));
        }
        if !(self.direct_gain_factor >= 0.0 && self.direct_gain_factor.is_finite()) {
            return Err(invalid("direct_gain_factor must be non-negative"));
        }
        for (name, r) in [("azimuth_deg", self.azimuth_deg), ("elevation_deg", self.elevation_deg)] {
            if !(r[0] <= r[1] && r[0] > -90.0 && r[1] < 90.0) {
                return Err(invalid(format!("{name} must be an ordered range inside (-90, 90)")));
            }
        }
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.max_pilots < 2 {
            return Err(invalid("max_pilots must be at least 2"));
        }
        if let Some(k) = self.rician_k_db {
            if !k.is_finite() {
                return Err(invalid("rician_k_db must be finite"));
            }
        }
        Ok(())
    }

    /// Search settings matching the estimator model.
    pub fn search_settings(&self, model: Model) -> SearchSettings {
        match model {
            Model::Exact => self.search,
            Model::Far => self.search.far_only(),
        }
    }

    /// Distance range of the user for the configured field.
    pub fn distance_range(&self, geom: &ArrayGeometry) -> Result<(f64, f64)> {
        let b = field_boundaries(geom);
        let (lo, hi) = match self.field {
            Field::Far => (b.bjornson.max(b.near_far_border), 10.0 * b.fraunhofer),
            Field::Near => (b.bjornson, b.near_far_border),
        };
        if !(lo < hi) {
            return Err(invalid(format!("empty distance range [{lo}, {hi}] for this array")));
        }
        Ok((lo, hi))
    }

    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R, range: (f64, f64)) -> Result<ChannelPoint> {
        let az = rng.random_range(self.azimuth_deg[0]..=self.azimuth_deg[1]).to_radians();
        let el = rng.random_range(self.elevation_deg[0]..=self.elevation_deg[1]).to_radians();
        let r = rng.random_range(range.0..=range.1);
        ChannelPoint::near(az, el, r)
    }

    /// BS-RIS channel, shared by all trials unless it is Rician.
    pub fn fixed_bs_ris(&self, geom: &ArrayGeometry) -> Result<Option<BsRisChannel>> {
        match self.rician_k_db {
            Some(_) => Ok(None),
            None => synth_bs_ris(geom, &self.bs, self.bs_antennas).map(Some),
        }
    }

    /// One link realization; `fixed` is the output of [`Self::fixed_bs_ris`].
    pub fn sample_link<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        geom: &ArrayGeometry,
        fixed: Option<&BsRisChannel>,
        rician: Option<&RicianSpec>,
    ) -> Result<(Link, LosChannel)> {
        let range = self.distance_range(geom)?;
        let point = self.sample_point(rng, range)?;
        let los = LosChannel { beta: 1.0, omega: rng.random_range(0.0..std::f64::consts::TAU), point };
        let (bs, g) = match (fixed, rician) {
            (Some(bs), _) => (bs.clone(), array_response(geom, &point) * Complex64::from_polar(1.0, los.omega)),
            (None, Some(spec)) => {
                let bs = sample_rician_bs_ris(rng, geom, &self.bs, self.bs_antennas, spec)?;
                (bs, sample_rician(rng, geom, &los, spec)?)
            }
            (None, None) => return Err(invalid("a Rician scenario needs a correlation spec")),
        };
        let d = if self.direct_gain_factor > 0.0 {
            complex_normal_vec(rng, self.bs_antennas, self.direct_gain_factor)
        } else {
            CVector::zeros(self.bs_antennas)
        };
        Ok((Link::new(bs, g, d)?, los))
    }

    /// Correlation spec for Rician scenarios.
    pub fn rician_spec(&self, geom: &ArrayGeometry) -> Result<Option<RicianSpec>> {
        self.rician_k_db.map(|k| RicianSpec::isotropic(geom, k)).transpose()
    }
}
