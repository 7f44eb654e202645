//! GSO downlink snapshots with LEO interference: link budgets, baseband
//! synthesis, spectra and dataset assembly.

mod dataset;
mod linkbudget;
mod waveform;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub use dataset::{
    draw_scenario, generate_dataset, snapshot_at, DatasetBundle, NormStats, ScenarioDraw, Snapshot, SplitCounts,
    Split, SplitInputs, DATASET_MAGIC, DATASET_VERSION,
};
pub use linkbudget::{
    aggregate_interference, carrier_power, db_to_linear, fspl_db, interference_power, linear_to_db, LinkGeometry,
    SPEED_OF_LIGHT,
};
pub use waveform::{hann_window, synthesize_waveform, welch_psd, welch_psd_db, LeoTone, PSD_FLOOR_DB};

/// Physical and sampling setup of the simulated scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub carrier_freq_gso: f64,
    /// Also the complex sample rate.
    pub bandwidth: f64,
    pub sample_count: usize,
    pub fft_bins: usize,
    pub num_leo: usize,
    pub cnr_range_db: (f64, f64),
    pub inr_peak_db: f64,
    pub link_loss_range_db: (f64, f64),
    pub label_inr_threshold_db: f64,
    /// Recorded for provenance only; snapshots are drawn independently.
    pub snapshot_interval_s: f64,
    pub rng_seed: u64,

    pub gso_eirp_dbw: f64,
    pub gso_rx_gain_dbi: f64,
    pub gso_distance_m: f64,
    pub leo_distance_range_m: (f64, f64),
    /// Receive-antenna discrimination towards a LEO, below boresight gain.
    pub leo_sidelobe_range_db: (f64, f64),
    /// Doppler offsets are drawn within `±fraction · bandwidth`.
    pub doppler_fraction: f64,
    /// Welch segments averaged per spectrum (50% overlap).
    pub welch_segments: usize,
    pub noise: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            carrier_freq_gso: 11.7e9,
            bandwidth: 36e6,
            sample_count: 800,
            fft_bins: 800,
            num_leo: 3,
            cnr_range_db: (6.40, 15.40),
            inr_peak_db: 32.47,
            link_loss_range_db: (0.0, 9.0),
            label_inr_threshold_db: 0.0,
            snapshot_interval_s: 10.0,
            rng_seed: 0,
            gso_eirp_dbw: 52.0,
            gso_rx_gain_dbi: 44.0,
            gso_distance_m: 35_786e3,
            leo_distance_range_m: (500e3, 2000e3),
            leo_sidelobe_range_db: (0.0, 45.0),
            doppler_fraction: 0.1,
            welch_segments: 7,
            noise: true,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !lo.is_finite() || !hi.is_finite() {
        return Err(config_err!("{name} must be finite, got ({lo}, {hi})"));
    }
    if lo > hi {
        return Err(config_err!("{name} min {lo} exceeds max {hi}"));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("cnr_range_db", self.cnr_range_db)?;
        check_range("link_loss_range_db", self.link_loss_range_db)?;
        check_range("leo_distance_range_m", self.leo_distance_range_m)?;
        check_range("leo_sidelobe_range_db", self.leo_sidelobe_range_db)?;
        if self.sample_count == 0 {
            return Err(config_err!("sample_count must be positive"));
        }
        if self.fft_bins < 2 || self.fft_bins % 2 != 0 {
            return Err(config_err!("fft_bins must be even and at least 2, got {}", self.fft_bins));
        }
        if self.welch_segments == 0 {
            return Err(config_err!("welch_segments must be positive"));
        }
        if self.leo_distance_range_m.0 <= 0.0 {
            return Err(config_err!("LEO distances must be positive"));
        }
        for (name, v) in [
            ("carrier_freq_gso", self.carrier_freq_gso),
            ("bandwidth", self.bandwidth),
            ("gso_distance_m", self.gso_distance_m),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(config_err!("{name} must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("inr_peak_db", self.inr_peak_db),
            ("label_inr_threshold_db", self.label_inr_threshold_db),
            ("gso_eirp_dbw", self.gso_eirp_dbw),
            ("gso_rx_gain_dbi", self.gso_rx_gain_dbi),
            ("snapshot_interval_s", self.snapshot_interval_s),
        ] {
            if !v.is_finite() {
                return Err(config_err!("{name} must be finite, got {v}"));
            }
        }
        if !(0.0..=0.5).contains(&self.doppler_fraction) {
            return Err(config_err!("doppler_fraction must be in [0, 0.5], got {}", self.doppler_fraction));
        }
        Ok(())
    }

    /// Samples synthesized per snapshot so that the Welch estimate averages
    /// `welch_segments` half-overlapping segments.
    pub fn synth_len(&self) -> usize {
        let hop = self.fft_bins / 2;
        (self.fft_bins + (self.welch_segments - 1) * hop).max(self.sample_count)
    }
}
