use std::path::{Path, PathBuf};

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::io::{read_file, u32_of, write_file, ByteReader, ByteWriter};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::sim::linkbudget::{carrier_power, db_to_linear, fspl_db, interference_power, linear_to_db, LinkGeometry};
use crate::sim::waveform::{synthesize_waveform, LeoTone, Welch, PSD_FLOOR_DB};
use crate::sim::ScenarioConfig;

pub const DATASET_MAGIC: &[u8; 4] = b"DAWN";
pub const DATASET_VERSION: u32 = 1;

/// Parameter draws beyond this multiple of the requested total give up.
const DRAW_BUDGET_FACTOR: usize = 200;

/// One labeled observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time_samples: Vec<Complex<f32>>,
    pub psd_db: Vec<f32>,
    pub label: u8,
    pub inr_db: f64,
    pub cnr_db: f64,
}

impl Snapshot {
    /// Amplitude `|y[n]|`, the time-domain model input before scaling.
    pub fn amplitude(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.time_samples.iter().map(|c| (c.re as f64).hypot(c.im as f64))
    }
}

/// Link-budget draw behind one snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioDraw {
    pub gso: LinkGeometry,
    pub leo: Vec<LinkGeometry>,
    pub noise_dbw: f64,
    pub cnr_db: f64,
    pub inr_per_leo_db: Vec<f64>,
    /// Aggregate `10·log10(Σ INR_k)`.
    pub inr_db: f64,
    pub label: u8,
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Stream `index` of the generator keyed by `seed`.
fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws link geometry for one snapshot.
///
/// The noise floor is fixed so that the clear-sky GSO link sits at the top
/// of `cnr_range_db`; the extra path loss then walks CNR down the range.
/// Each LEO's EIRP is set so that a link at minimum distance, on boresight,
/// fully overlapping and under clear sky contributes `inr_peak_db / K`.
pub fn draw_scenario<R: Rng>(cfg: &ScenarioConfig, rng: &mut R) -> Result<ScenarioDraw> {
    let f = cfg.carrier_freq_gso;
    let loss_min = cfg.link_loss_range_db.0;
    let add_loss = uniform(rng, cfg.link_loss_range_db);

    let gso_fspl = fspl_db(cfg.gso_distance_m, f)?;
    let gso = LinkGeometry {
        eirp_dbw: cfg.gso_eirp_dbw,
        rx_gain_db: cfg.gso_rx_gain_dbi,
        fspl_db: gso_fspl,
        add_loss_db: add_loss,
        spectral_overlap: 1.0,
        doppler_offset_hz: 0.0,
    };
    let clear_sky_c = cfg.gso_eirp_dbw + cfg.gso_rx_gain_dbi - gso_fspl - loss_min;
    let noise_dbw = clear_sky_c - cfg.cnr_range_db.1;
    let c_dbw = linear_to_db(carrier_power(&gso)?, PSD_FLOOR_DB);
    let cnr_db = (c_dbw - noise_dbw).clamp(cfg.cnr_range_db.0, cfg.cnr_range_db.1);

    let k = cfg.num_leo;
    let mut leo = Vec::with_capacity(k);
    let mut inr_per_leo_db = Vec::with_capacity(k);
    let mut inr_sum = 0.0;
    if k > 0 {
        let per_link_peak = cfg.inr_peak_db - 10.0 * (k as f64).log10();
        let ref_fspl = fspl_db(cfg.leo_distance_range_m.0, f)?;
        let eirp = per_link_peak + noise_dbw - cfg.gso_rx_gain_dbi + ref_fspl + loss_min;
        let max_doppler = cfg.doppler_fraction * cfg.bandwidth;
        for _ in 0..k {
            let d = uniform(rng, cfg.leo_distance_range_m);
            let sidelobe = uniform(rng, cfg.leo_sidelobe_range_db);
            let overlap = rng.random::<f64>();
            let doppler = uniform(rng, (-max_doppler, max_doppler));
            let link = LinkGeometry {
                eirp_dbw: eirp,
                rx_gain_db: cfg.gso_rx_gain_dbi - sidelobe,
                fspl_db: fspl_db(d, f)?,
                add_loss_db: add_loss,
                spectral_overlap: overlap,
                doppler_offset_hz: doppler,
            };
            let inr = interference_power(&link)? / db_to_linear(noise_dbw);
            inr_sum += inr;
            inr_per_leo_db.push(linear_to_db(inr, PSD_FLOOR_DB));
            leo.push(link);
        }
    }
    let inr_db = linear_to_db(inr_sum, PSD_FLOOR_DB);
    let label = u8::from(inr_db >= cfg.label_inr_threshold_db);
    Ok(ScenarioDraw {
        gso,
        leo,
        noise_dbw,
        cnr_db,
        inr_per_leo_db,
        inr_db,
        label,
    })
}

fn synthesize(cfg: &ScenarioConfig, index: u64, welch: &Welch) -> Result<Snapshot> {
    let mut rng = stream(cfg.rng_seed, index);
    let draw = draw_scenario(cfg, &mut rng)?;
    let tones: Vec<LeoTone> = draw
        .leo
        .iter()
        .zip(&draw.inr_per_leo_db)
        .map(|(l, &inr_db)| LeoTone {
            inr_db,
            doppler_hz: l.doppler_offset_hz,
        })
        .collect();
    let y = synthesize_waveform(cfg, draw.cnr_db, &tones, cfg.synth_len(), &mut rng)?;
    let psd = welch.psd_db(&y)?;
    Ok(Snapshot {
        time_samples: y[..cfg.sample_count]
            .iter()
            .map(|c| Complex::new(c.re as f32, c.im as f32))
            .collect(),
        psd_db: psd.into_iter().map(|v| v as f32).collect(),
        label: draw.label,
        inr_db: draw.inr_db,
        cnr_db: draw.cnr_db,
    })
}

/// The snapshot at position `index` of the candidate sequence for `cfg`.
/// Independent of every other index.
pub fn snapshot_at(cfg: &ScenarioConfig, index: u64) -> Result<Snapshot> {
    cfg.validate()?;
    synthesize(cfg, index, &Welch::new(cfg.fft_bins))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test_per_class: usize,
}

impl SplitCounts {
    pub const DESK: SplitCounts = SplitCounts {
        train: 2000,
        val: 256,
        test_per_class: 200,
    };
    pub const LARGE: SplitCounts = SplitCounts {
        train: 11509,
        val: 1302,
        test_per_class: 2235,
    };

    pub fn total(&self) -> usize {
        self.train + self.val + 2 * self.test_per_class
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Per-domain mean and population standard deviation of the train split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub time_mean: f64,
    pub time_std: f64,
    pub freq_mean: f64,
    pub freq_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> Result<(f64, f64)> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Generation("cannot fit normalization on an empty split".into()));
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::Generation(format!("degenerate training data: std = {std}")));
    }
    Ok((mean, std))
}

impl NormStats {
    pub fn fit(train: &[Snapshot]) -> Result<Self> {
        let (time_mean, time_std) = mean_std(train.iter().flat_map(|s| s.amplitude()))?;
        let (freq_mean, freq_std) = mean_std(train.iter().flat_map(|s| s.psd_db.iter().map(|&v| v as f64)))?;
        Ok(Self {
            time_mean,
            time_std,
            freq_mean,
            freq_std,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    /// Present when generated or when the JSON sidecar was found on load.
    pub config: Option<ScenarioConfig>,
    pub sample_count: usize,
    pub fft_bins: usize,
    pub train: Vec<Snapshot>,
    pub validation: Vec<Snapshot>,
    /// Both classes, in generation order.
    pub test: Vec<Snapshot>,
    pub norm_stats: NormStats,
}

/// Normalized model inputs for one split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitInputs<T> {
    /// `[N, sample_count]`
    pub time: Tensor<T>,
    /// `[N, fft_bins]`
    pub freq: Tensor<T>,
    pub labels: Vec<u8>,
}

/// Draws candidates in index order and assigns clean ones to train, then
/// validation, then test; interfered ones fill the positive half of test.
pub fn generate_dataset(cfg: &ScenarioConfig, counts: SplitCounts) -> Result<DatasetBundle> {
    cfg.validate()?;
    if counts.train == 0 || counts.val == 0 || counts.test_per_class == 0 {
        return Err(config_err!("split counts must be positive, got {counts:?}"));
    }
    let budget = DRAW_BUDGET_FACTOR * counts.total();
    let need_neg = counts.train + counts.val + counts.test_per_class;
    let (mut neg, mut pos) = (Vec::with_capacity(need_neg), Vec::with_capacity(counts.test_per_class));
    let mut test_order = Vec::with_capacity(2 * counts.test_per_class);
    let mut index = 0u64;
    while neg.len() < need_neg || pos.len() < counts.test_per_class {
        if index as usize >= budget {
            return Err(Error::Generation(format!(
                "class balance not reached after {budget} draws: {} clean of {need_neg}, {} interfered of {}",
                neg.len(),
                pos.len(),
                counts.test_per_class
            )));
        }
        let draw = draw_scenario(cfg, &mut stream(cfg.rng_seed, index))?;
        if draw.label == 0 && neg.len() < need_neg {
            if neg.len() >= counts.train + counts.val {
                test_order.push(index);
            }
            neg.push(index);
        } else if draw.label == 1 && pos.len() < counts.test_per_class {
            pos.push(index);
            test_order.push(index);
        }
        index += 1;
    }

    let welch = Welch::new(cfg.fft_bins);
    let build = |ids: &[u64]| ids.iter().map(|&i| synthesize(cfg, i, &welch)).collect::<Result<Vec<_>>>();
    let train = build(&neg[..counts.train])?;
    let validation = build(&neg[counts.train..counts.train + counts.val])?;
    let test = build(&test_order)?;
    let norm_stats = NormStats::fit(&train)?;
    Ok(DatasetBundle {
        config: Some(cfg.clone()),
        sample_count: cfg.sample_count,
        fft_bins: cfg.fft_bins,
        train,
        validation,
        test,
        norm_stats,
    })
}

impl DatasetBundle {
    pub fn split(&self, split: Split) -> &[Snapshot] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Inputs scaled with the train-split statistics.
    pub fn inputs<T: Scalar>(&self, split: Split) -> Result<SplitInputs<T>> {
        let snaps = self.split(split);
        let s = &self.norm_stats;
        let mut time = Vec::with_capacity(snaps.len() * self.sample_count);
        let mut freq = Vec::with_capacity(snaps.len() * self.fft_bins);
        for snap in snaps {
            time.extend(snap.amplitude().map(|v| T::from_f64_lossy((v - s.time_mean) / s.time_std)));
            freq.extend(
                snap.psd_db
                    .iter()
                    .map(|&v| T::from_f64_lossy((v as f64 - s.freq_mean) / s.freq_std)),
            );
        }
        Ok(SplitInputs {
            time: Tensor::from_vec(&[snaps.len(), self.sample_count], time)?,
            freq: Tensor::from_vec(&[snaps.len(), self.fft_bins], freq)?,
            labels: snaps.iter().map(|s| s.label).collect(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        w.u32(u32_of(self.train.len(), "train count")?);
        w.u32(u32_of(self.validation.len(), "validation count")?);
        w.u32(u32_of(self.test.len(), "test count")?);
        w.u32(u32_of(self.sample_count, "sample_count")?);
        w.u32(u32_of(self.fft_bins, "fft_bins")?);
        let s = &self.norm_stats;
        for v in [s.time_mean, s.time_std, s.freq_mean, s.freq_std] {
            w.f64(v);
        }
        for snap in self.train.iter().chain(&self.validation).chain(&self.test) {
            if snap.time_samples.len() != self.sample_count || snap.psd_db.len() != self.fft_bins {
                return Err(config_err!(
                    "snapshot lengths ({}, {}) differ from header ({}, {})",
                    snap.time_samples.len(),
                    snap.psd_db.len(),
                    self.sample_count,
                    self.fft_bins
                ));
            }
            w.u8(snap.label);
            w.f64(snap.inr_db);
            w.f64(snap.cnr_db);
            for c in &snap.time_samples {
                w.f32(c.re);
            }
            for c in &snap.time_samples {
                w.f32(c.im);
            }
            for &p in &snap.psd_db {
                w.f32(p);
            }
        }
        Ok(w.into_inner())
    }

    /// Parses the binary file; `config` is left empty.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(DATASET_MAGIC)?;
        let version = r.u32("version")?;
        if version != DATASET_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported dataset version {version}, expected {DATASET_VERSION}"),
            });
        }
        let n_train = r.u32("train count")? as usize;
        let n_val = r.u32("validation count")? as usize;
        let n_test = r.u32("test count")? as usize;
        let sample_count = r.u32("sample_count")? as usize;
        let fft_bins = r.u32("fft_bins")? as usize;
        let norm_stats = NormStats {
            time_mean: r.f64("time mean")?,
            time_std: r.f64("time std")?,
            freq_mean: r.f64("freq mean")?,
            freq_std: r.f64("freq std")?,
        };
        let mut read_split = |n: usize| -> Result<Vec<Snapshot>> {
            let mut out = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                let at = r.offset();
                let label = r.u8("label")?;
                if label > 1 {
                    return Err(Error::Format {
                        offset: at,
                        message: format!("label must be 0 or 1, got {label}"),
                    });
                }
                let inr_db = r.f64("inr_db")?;
                let cnr_db = r.f64("cnr_db")?;
                let re = r.f32_vec(sample_count, "time real")?;
                let im = r.f32_vec(sample_count, "time imag")?;
                let psd_db = r.f32_vec(fft_bins, "psd")?;
                out.push(Snapshot {
                    time_samples: re.into_iter().zip(im).map(|(a, b)| Complex::new(a, b)).collect(),
                    psd_db,
                    label,
                    inr_db,
                    cnr_db,
                });
            }
            Ok(out)
        };
        let train = read_split(n_train)?;
        let validation = read_split(n_val)?;
        let test = read_split(n_test)?;
        r.finish()?;
        Ok(Self {
            config: None,
            sample_count,
            fft_bins,
            train,
            validation,
            test,
            norm_stats,
        })
    }

    /// Sidecar path: the dataset path with `.json` appended.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the binary file and, when a config is attached, its sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)?;
        if let Some(cfg) = &self.config {
            let mut json = serde_json::to_string_pretty(cfg)?;
            json.push('\n');
            write_file(&Self::sidecar_path(path), json.as_bytes())?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bundle = Self::from_bytes(&read_file(path)?)?;
        let side = Self::sidecar_path(path);
        if side.exists() {
            let cfg: ScenarioConfig = serde_json::from_slice(&read_file(&side)?)?;
            bundle.config = Some(cfg);
        }
        Ok(bundle)
    }
}
