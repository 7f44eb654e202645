use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `10·log10(p)`, floored at `floor_db` for non-positive power.
pub fn linear_to_db(p: f64, floor_db: f64) -> f64 {
    if p > 0.0 {
        (10.0 * p.log10()).max(floor_db)
    } else {
        floor_db
    }
}

/// Free-space path loss `20·log10(4π d f / c)` in dB.
pub fn fspl_db(distance_m: f64, freq_hz: f64) -> Result<f64> {
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(Error::Domain(format!("distance must be positive, got {distance_m} m")));
    }
    if !(freq_hz > 0.0) || !freq_hz.is_finite() {
        return Err(Error::Domain(format!("frequency must be positive, got {freq_hz} Hz")));
    }
    Ok(20.0 * (4.0 * std::f64::consts::PI * distance_m * freq_hz / SPEED_OF_LIGHT).log10())
}

/// One transmitter-to-ground-station path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkGeometry {
    pub eirp_dbw: f64,
    pub rx_gain_db: f64,
    pub fspl_db: f64,
    pub add_loss_db: f64,
    /// Fraction of the emission falling in the victim band.
    pub spectral_overlap: f64,
    pub doppler_offset_hz: f64,
}

impl LinkGeometry {
    fn check(&self) -> Result<()> {
        let fields = [self.eirp_dbw, self.rx_gain_db, self.fspl_db, self.add_loss_db];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("link budget terms must be finite: {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.spectral_overlap) {
            return Err(Error::Domain(format!(
                "spectral overlap must be in [0, 1], got {}",
                self.spectral_overlap
            )));
        }
        Ok(())
    }
}

/// Received carrier power `EIRP·G / (L_FS·L_add)` (linear, W).
pub fn carrier_power(link: &LinkGeometry) -> Result<f64> {
    link.check()?;
    Ok(db_to_linear(link.eirp_dbw + link.rx_gain_db - link.fspl_db - link.add_loss_db))
}

/// Received interference power of one link, carrier power scaled by the
/// spectral overlap.
pub fn interference_power(link: &LinkGeometry) -> Result<f64> {
    Ok(carrier_power(link)? * link.spectral_overlap)
}

/// Sum of [`interference_power`] over all links.
pub fn aggregate_interference(links: &[LinkGeometry]) -> Result<f64> {
    links.iter().map(interference_power).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(eirp: f64, gain: f64, fspl: f64, loss: f64, overlap: f64) -> LinkGeometry {
        LinkGeometry {
            eirp_dbw: eirp,
            rx_gain_db: gain,
            fspl_db: fspl,
            add_loss_db: loss,
            spectral_overlap: overlap,
            doppler_offset_hz: 0.0,
        }
    }

    #[test]
    fn fspl_reference_points() {
        // Textbook km/GHz form.
        let oracle = 92.45 + 20.0 * 36_000f64.log10() + 20.0 * 11.7f64.log10();
        let v = fspl_db(36_000e3, 11.7e9).unwrap();
        assert!((v - 204.94).abs() < 0.01, "{v}");
        assert!((v - oracle).abs() < 0.01);
        let unit = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI);
        assert!(fspl_db(unit, 1.0).unwrap().abs() < 1e-12);
        let d = fspl_db(2e6, 1e9).unwrap() - fspl_db(1e6, 1e9).unwrap();
        assert!((d - 20.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn fspl_rejects_bad_inputs() {
        assert!(fspl_db(0.0, 1e9).is_err());
        assert!(fspl_db(1.0, -1.0).is_err());
    }

    #[test]
    fn carrier_power_in_db() {
        assert_eq!(carrier_power(&link(0.0, 0.0, 0.0, 0.0, 1.0)).unwrap(), 1.0);
        let c = carrier_power(&link(50.0, 40.0, 205.0, 3.0, 1.0)).unwrap();
        assert!((linear_to_db(c, -300.0) + 118.0).abs() < 1e-9);
        let c2 = carrier_power(&link(50.0, 40.0, 205.0, 6.0, 1.0)).unwrap();
        assert!((linear_to_db(c2 / c, -300.0) + 3.0).abs() < 1e-12);
    }

    #[test]
    fn interference_superposition() {
        let l = link(30.0, 10.0, 180.0, 1.0, 1.0);
        assert_eq!(interference_power(&l).unwrap(), carrier_power(&l).unwrap());
        let off = LinkGeometry { spectral_overlap: 0.0, ..l };
        assert_eq!(interference_power(&off).unwrap(), 0.0);
        let agg = aggregate_interference(&[l, l]).unwrap();
        assert!((agg - 2.0 * interference_power(&l).unwrap()).abs() <= 1e-12 * agg);
        let bad = LinkGeometry { spectral_overlap: 1.5, ..l };
        assert!(interference_power(&bad).is_err());
    }
}
